"""Feature attribution restricted to the data manifold.

Shapley-value attribution where the coalition value is the model's
expected output under interventions, optionally restricted to a region of
plausible inputs (a density super-level set or a learned in-distribution
classifier).  The package also ships the classical alternatives it is
compared against - marginal, interventional, conditional, and
joint-baseline value functions - plus exact and permutation-sampling
engines, a robustness verifier, and reproducible synthetic studies.
"""

from .core import (
    Attribution,
    Coalition,
    ConfigError,
    DataFormatError,
    Dataset,
    Model,
    RngStream,
    ShaplabError,
    as_instance,
    load_dataset_csv,
    normalize_l1,
    shapley_weight,
    top_feature,
)
from .discrete import (
    EnumeratedValue,
    FiniteNode,
    FiniteScm,
    ces_value_exact,
    is_value_exact,
    make_confounded_binary_pair,
    manifold_value_exact,
    ms_value_exact,
    restricted_pmf,
)
from .engine import (
    EvalCache,
    exact_shapley,
    manifold_permutation_shapley,
    permutation_shapley,
)
from .experiments import (
    EXPERIMENT_NAMES,
    ExperimentConfig,
    ExperimentResult,
    config_from_dict,
    default_config,
    run_experiment,
    write_results,
)
from .manifold import (
    DensityManifold,
    KdeEstimator,
    MassManifold,
    OodClassifier,
    fit_kde,
    fit_ood_classifier,
    load_manifold,
    save_manifold,
    threshold_for_mass,
)
from .robustness import (
    AdditiveOffset,
    ClassifierShift,
    DensityScaledShift,
    OffManifoldGate,
    PerturbedModel,
    RegressionShift,
    RobustnessReport,
    build_perturbed,
    check_subspace_robustness,
    check_t_robustness,
    random_ripple,
    tv_distance_discrete,
)
from .scm import (
    InterventionSpec,
    Noise,
    Scm,
    ScmNode,
    SCM_BUILDERS,
    conditional_moments,
    make_corr_gaussian_2d,
    make_dag_scm,
    make_equicorrelated,
    make_indep_gaussian_2d,
    make_sine_scm,
    mvn_density,
)
from .values import (
    AcceptanceFailure,
    CesSurrogate,
    GaussianBackend,
    GraphSampler,
    JointBaselineValue,
    ManifoldValue,
    MonteCarloValue,
    ObservationalSampler,
    RandomJointBaselineValue,
    RowSampler,
    SurrogateValue,
    ces_value,
    compose,
    fit_ces_surrogate,
    is_value,
    jb_value,
    manifold_value,
    median_baseline,
    ms_value,
    rjb_value,
)

__version__ = "0.1.0"

__all__ = [
    "Attribution",
    "Coalition",
    "ConfigError",
    "DataFormatError",
    "Dataset",
    "Model",
    "RngStream",
    "ShaplabError",
    "as_instance",
    "load_dataset_csv",
    "normalize_l1",
    "shapley_weight",
    "top_feature",
    "EnumeratedValue",
    "FiniteNode",
    "FiniteScm",
    "ces_value_exact",
    "is_value_exact",
    "make_confounded_binary_pair",
    "manifold_value_exact",
    "ms_value_exact",
    "restricted_pmf",
    "EvalCache",
    "exact_shapley",
    "manifold_permutation_shapley",
    "permutation_shapley",
    "EXPERIMENT_NAMES",
    "ExperimentConfig",
    "ExperimentResult",
    "config_from_dict",
    "default_config",
    "run_experiment",
    "write_results",
    "DensityManifold",
    "KdeEstimator",
    "MassManifold",
    "OodClassifier",
    "fit_kde",
    "fit_ood_classifier",
    "load_manifold",
    "save_manifold",
    "threshold_for_mass",
    "AdditiveOffset",
    "ClassifierShift",
    "DensityScaledShift",
    "OffManifoldGate",
    "PerturbedModel",
    "RegressionShift",
    "RobustnessReport",
    "build_perturbed",
    "check_subspace_robustness",
    "check_t_robustness",
    "random_ripple",
    "tv_distance_discrete",
    "InterventionSpec",
    "Noise",
    "Scm",
    "ScmNode",
    "SCM_BUILDERS",
    "conditional_moments",
    "make_corr_gaussian_2d",
    "make_dag_scm",
    "make_equicorrelated",
    "make_indep_gaussian_2d",
    "make_sine_scm",
    "mvn_density",
    "AcceptanceFailure",
    "CesSurrogate",
    "GaussianBackend",
    "GraphSampler",
    "JointBaselineValue",
    "ManifoldValue",
    "MonteCarloValue",
    "ObservationalSampler",
    "RandomJointBaselineValue",
    "RowSampler",
    "SurrogateValue",
    "ces_value",
    "compose",
    "fit_ces_surrogate",
    "is_value",
    "jb_value",
    "manifold_value",
    "median_baseline",
    "ms_value",
    "rjb_value",
    "__version__",
]
