"""Command-line interface.

Subcommands: ``attribute`` explains rows of a CSV with a chosen value
function, ``manifold`` fits and saves a manifold, ``experiment`` runs a
named synthetic study, and ``robustness`` checks a value function against
a model perturbation family.  Diagnostics go to stderr; stdout carries
exactly one final summary line.  Exit codes: 0 success, 1 I/O failure,
2 configuration error, 3 no accepted draws.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import (
    ConfigError,
    DataFormatError,
    Dataset,
    RngStream,
    ShaplabError,
    load_dataset_csv,
    normalize_l1,
)
from .engine import exact_shapley, permutation_shapley
from .experiments import (
    EXPERIMENT_NAMES,
    config_from_dict,
    default_config,
    run_experiment,
    write_results,
)
from .manifold import (
    MassManifold,
    fit_kde,
    fit_ood_classifier,
    save_manifold,
    threshold_for_mass,
)
from .robustness import (
    AdditiveOffset,
    ClassifierShift,
    DensityScaledShift,
    OffManifoldGate,
    RegressionShift,
    build_perturbed,
    check_subspace_robustness,
    check_t_robustness,
    random_ripple,
)
from .scm import SCM_BUILDERS
from .values import (
    AcceptanceFailure,
    GraphSampler,
    JointBaselineValue,
    ManifoldValue,
    MonteCarloValue,
    RandomJointBaselineValue,
    RowSampler,
    SurrogateValue,
    fit_ces_surrogate,
    median_baseline,
)
from .core import Coalition

_METHODS = ("ms", "is", "ces", "jb", "rjb", "mshap")

_CONFIG_KEYS = {
    "attribute": {
        "data", "model", "method", "engine", "samples", "permutations",
        "alpha", "epsilon", "seed", "threads", "out", "limit",
    },
    "manifold": {"data", "kind", "alpha", "epsilon", "seed", "out"},
    "experiment": {"seed", "threads", "out"},
    "robustness": {
        "data", "model", "method", "family", "k", "delta", "alpha",
        "epsilon", "samples", "seed", "out",
    },
}


def _fail(message: str) -> None:
    print(message, file=sys.stderr)


def _load_json(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    return payload


def _merge_config(args: argparse.Namespace, command: str) -> dict:
    """Defaults, then config-file values, then explicit flags."""
    merged: dict = {}
    if getattr(args, "config", None):
        payload = _load_json(args.config)
        unknown = sorted(set(payload) - _CONFIG_KEYS[command])
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        merged.update(payload)
    for key in _CONFIG_KEYS[command]:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _require(merged: dict, key: str, command: str):
    if merged.get(key) is None:
        raise ConfigError(f"{command} requires --{key}")
    return merged[key]


class _TabulatedModel:
    """Nearest-row lookup over a CSV of feature columns plus a target column."""

    def __init__(self, data: Dataset) -> None:
        if data.target is None:
            raise ConfigError("tabulated model CSV needs a trailing target column")
        self.rows = data.rows
        self.targets = data.target
        scale = self.rows.std(axis=0)
        self.scale = np.where(scale > 0, scale, 1.0)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        diff = (x[:, None, :] - self.rows[None, :, :]) / self.scale
        nearest = np.argmin(np.einsum("qnd,qnd->qn", diff, diff), axis=1)
        return self.targets[nearest]


def _build_model(spec_path: str, d: int):
    """Model spec: builtin SCM ground truth, a threshold gate, or a CSV table.

    Returns (model, scm-or-None).
    """
    spec = _load_json(spec_path)
    kind = spec.get("kind")
    if kind == "scm":
        name = spec.get("name")
        if name not in SCM_BUILDERS:
            raise ConfigError(
                f"unknown scm {name!r}; expected one of {sorted(SCM_BUILDERS)}"
            )
        params = spec.get("params", {})
        if not isinstance(params, dict):
            raise ConfigError("scm params must be an object")
        scm = SCM_BUILDERS[name](**params)
        if scm.d != d:
            raise ConfigError(f"scm {name!r} has {scm.d} features, data has {d}")
        return scm.ground_truth_model(), scm
    if kind == "gate":
        column = spec.get("column", 0)
        threshold = float(spec.get("threshold", 0.0))
        if not isinstance(column, int) or not 0 <= column < d:
            raise ConfigError(f"gate column must be an integer in [0, {d})")

        def gate(x: np.ndarray) -> np.ndarray:
            x = np.atleast_2d(np.asarray(x, dtype=float))
            return (x[:, column] > threshold).astype(float)

        return gate, None
    if kind == "table":
        path = spec.get("path")
        if not path:
            raise ConfigError("table model spec needs a 'path'")
        table = load_dataset_csv(path, has_target=True)
        if table.rows.shape[1] != d:
            raise ConfigError(
                f"table model has {table.rows.shape[1]} features, data has {d}"
            )
        return _TabulatedModel(table), None
    raise ConfigError(f"unknown model kind {kind!r}; expected scm, gate, or table")


def _fit_manifold(data: Dataset, alpha: Optional[float], epsilon: Optional[float]):
    density = fit_kde(data.rows)
    if epsilon is not None:
        if epsilon < 0:
            raise ConfigError("epsilon must be non-negative")
        return MassManifold(density=density, eps=float(epsilon), alpha=1.0)
    mass = 0.99 if alpha is None else float(alpha)
    if not 0.0 < mass <= 1.0:
        raise ConfigError("alpha must lie in (0, 1]")
    return MassManifold.fit(density, data.rows, mass)


def _cmd_attribute(args: argparse.Namespace) -> str:
    merged = _merge_config(args, "attribute")
    data = load_dataset_csv(_require(merged, "data", "attribute"))
    d = data.rows.shape[1]
    method = merged.get("method", "mshap")
    if method not in _METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {_METHODS}")
    engine = merged.get("engine", "exact")
    if engine not in ("exact", "permutation"):
        raise ConfigError("engine must be 'exact' or 'permutation'")
    samples = int(merged.get("samples", 500))
    permutations = int(merged.get("permutations", 200))
    seed = int(merged.get("seed", 0))
    threads = int(merged.get("threads", 1))
    limit = merged.get("limit")
    n_rows = data.rows.shape[0] if limit is None else min(int(limit), data.rows.shape[0])
    out_path = merged.get("out")

    model, scm = _build_model(_require(merged, "model", "attribute"), d)
    root = RngStream(seed)
    sampler = GraphSampler(scm) if scm is not None else RowSampler(data)
    manifold = None
    if method == "mshap":
        manifold = _fit_manifold(data, merged.get("alpha"), merged.get("epsilon"))
    elif method in ("jb", "rjb"):
        density = fit_kde(data.rows)

    if method == "ms":
        vf = MonteCarloValue(model, RowSampler(data), samples)
    elif method == "is":
        vf = MonteCarloValue(model, sampler, samples)
    elif method == "ces":
        surrogate = fit_ces_surrogate(
            model, data, root.child(1), n_coalition_draws=8000, k=min(25, data.rows.shape[0])
        )
        vf = SurrogateValue(surrogate)
    elif method == "jb":
        vf = JointBaselineValue(model, density, median_baseline(data))
    elif method == "rjb":
        vf = RandomJointBaselineValue(model, density, data, samples)
    else:
        vf = ManifoldValue(model, manifold, sampler, samples)

    def explain(i: int):
        x = data.rows[i]
        if manifold is not None and not manifold.contains(x):
            return None
        stream = root.child(2, i)
        if engine == "exact":
            return exact_shapley(vf, x, stream)
        return permutation_shapley(vf, x, permutations, stream)

    results = []
    skipped = 0
    if threads <= 1:
        raw = [explain(i) for i in range(n_rows)]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            raw = list(pool.map(explain, range(n_rows)))
    for i, attr in enumerate(raw):
        if attr is None:
            skipped += 1
            _fail(f"row {i}: outside manifold, skipped")
            continue
        results.append((i, attr))

    if out_path is not None:
        lines = ["row,feature,phi,std_err"]
        for i, attr in results:
            for j, name in enumerate(data.feature_names):
                err = "" if attr.std_errors is None else repr(float(attr.std_errors[j]))
                lines.append(f"{i},{name},{float(attr.phi[j])!r},{err}")
        Path(out_path).write_text("\n".join(lines) + "\n")
    return (
        f"attribute method={method} engine={engine} rows={len(results)} "
        f"skipped={skipped} out={out_path or '-'}"
    )


def _cmd_manifold(args: argparse.Namespace) -> str:
    merged = _merge_config(args, "manifold")
    data = load_dataset_csv(_require(merged, "data", "manifold"))
    kind = merged.get("kind", "kde")
    out_prefix = _require(merged, "out", "manifold")
    seed = int(merged.get("seed", 0))
    if kind == "kde":
        manifold = _fit_manifold(data, merged.get("alpha"), merged.get("epsilon"))
        save_manifold(manifold, out_prefix)
        return f"manifold kind=kde eps={manifold.eps!r} out={out_prefix}"
    if kind == "ood":
        classifier = fit_ood_classifier(data.rows, RngStream(seed))
        save_manifold(classifier, out_prefix)
        return f"manifold kind=ood k={classifier.k} out={out_prefix}"
    raise ConfigError(f"unknown manifold kind {kind!r}; expected kde or ood")


def _cmd_experiment(args: argparse.Namespace) -> str:
    if args.action == "list":
        return "experiments: " + " ".join(EXPERIMENT_NAMES)
    if args.name is None:
        raise ConfigError("experiment run requires a name")
    if args.name not in EXPERIMENT_NAMES:
        raise ConfigError(
            f"unknown experiment {args.name!r}; expected one of {EXPERIMENT_NAMES}"
        )
    if getattr(args, "config", None):
        payload = _load_json(args.config)
        payload.setdefault("name", args.name)
        if payload["name"] != args.name:
            raise ConfigError(
                f"config names {payload['name']!r} but command line says {args.name!r}"
            )
        config = config_from_dict(payload)
    else:
        config = default_config(args.name)
    import dataclasses as _dc

    overrides = {}
    for key in ("seed", "threads"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    if overrides:
        config = _dc.replace(config, **overrides)
    result = run_experiment(config)
    n_points = max(len(column) for column in result.attrs.values())
    return (
        f"experiment name={result.name} methods={len(result.methods)} "
        f"settings={len(result.settings)} points={n_points} "
        f"out={config.out_dir or '-'}"
    )


_FAMILIES = ("gate", "offset", "regression", "classifier", "density")


def _cmd_robustness(args: argparse.Namespace) -> str:
    merged = _merge_config(args, "robustness")
    data = load_dataset_csv(_require(merged, "data", "robustness"))
    d = data.rows.shape[1]
    model, scm = _build_model(_require(merged, "model", "robustness"), d)
    family = merged.get("family", "offset")
    if family not in _FAMILIES:
        raise ConfigError(f"unknown family {family!r}; expected one of {_FAMILIES}")
    method = merged.get("method", "mshap")
    if method not in ("is", "ms", "mshap"):
        raise ConfigError("robustness supports methods is, ms, mshap")
    samples = int(merged.get("samples", 400))
    seed = int(merged.get("seed", 0))
    manifold = _fit_manifold(data, merged.get("alpha"), merged.get("epsilon"))
    root = RngStream(seed)
    sampler = GraphSampler(scm) if scm is not None else RowSampler(data)

    def vf_factory(f):
        if method == "mshap":
            return ManifoldValue(f, manifold, sampler, samples)
        if method == "is":
            return MonteCarloValue(f, sampler, samples)
        return MonteCarloValue(f, RowSampler(data), samples)

    inside = np.asarray(manifold.contains_batch(data.rows), dtype=bool)
    if not inside.any():
        raise ConfigError("no data row lies inside the manifold")
    x = data.rows[int(np.flatnonzero(inside)[0])]
    coalitions = [Coalition(mask, d) for mask in range(1 << d)] if d <= 8 else [
        Coalition(int(mask), d)
        for mask in root.child(4).generator().integers(0, 1 << d, size=64)
    ]

    if family == "density":
        delta = float(merged.get("delta", 1e-3))
        epsilon = float(merged.get("epsilon", 1e-2))
        density = fit_kde(data.rows)
        ripple = random_ripple(d, root.child(3))
        spec = DensityScaledShift(delta=delta, density=density, ripple=ripple, p_floor=epsilon)
        f2 = build_perturbed(model, None, spec)
        report = check_t_robustness(
            vf_factory, model, [f2], epsilon, delta, coalitions, x,
            probes=data.rows, density=density, stream=root.child(5),
        )
    else:
        if family == "gate":
            spec = OffManifoldGate(feature=0)
        elif family == "offset":
            spec = AdditiveOffset(k=float(merged.get("k", 10.0)))
        elif family == "regression":
            spec = RegressionShift(delta=float(merged.get("delta", 5.0)), feature=min(1, d - 1))
        else:
            spec = ClassifierShift(delta=float(merged.get("delta", 10.0)), feature=0)
        f2 = build_perturbed(model, manifold, spec)
        probes = data.rows
        if probes.shape[0] < 1000:
            raise ConfigError("robustness needs at least 1000 data rows for probes")
        report = check_subspace_robustness(
            vf_factory, model, f2, manifold, probes, coalitions, x,
            stream=root.child(5), t_claimed=1.0,
        )
    out_path = merged.get("out")
    if out_path is not None:
        report.write_csv(out_path)
    return (
        f"robustness family={family} method={method} passed={str(report.passed).lower()} "
        f"max_absdiff={report.max_absdiff!r} bound={report.bound!r} out={out_path or '-'}"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shaplab",
        description="Manifold-restricted Shapley attribution toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, *names: str) -> None:
        specs = {
            "config": dict(type=str, help="JSON config file"),
            "data": dict(type=str, help="CSV of data rows"),
            "model": dict(type=str, help="JSON model spec"),
            "method": dict(type=str, help="value function"),
            "engine": dict(type=str, help="exact or permutation"),
            "samples": dict(type=int, help="Monte Carlo draws per coalition"),
            "permutations": dict(type=int, help="permutations for the sampling engine"),
            "alpha": dict(type=float, help="manifold mass level in (0, 1]"),
            "epsilon": dict(type=float, help="absolute density threshold"),
            "seed": dict(type=int, help="root seed"),
            "threads": dict(type=int, help="worker threads (never changes results)"),
            "out": dict(type=str, help="output path"),
            "limit": dict(type=int, help="explain at most this many rows"),
            "kind": dict(type=str, help="manifold kind: kde or ood"),
            "family": dict(type=str, help="perturbation family"),
            "k": dict(type=float, help="offset magnitude"),
            "delta": dict(type=float, help="perturbation scale"),
        }
        for name in names:
            p.add_argument(f"--{name}", **specs[name])

    p_attr = sub.add_parser("attribute", help="explain rows of a CSV")
    common(p_attr, "config", "data", "model", "method", "engine", "samples",
           "permutations", "alpha", "epsilon", "seed", "threads", "out", "limit")

    p_man = sub.add_parser("manifold", help="fit and save a manifold")
    common(p_man, "config", "data", "kind", "alpha", "epsilon", "seed", "out")

    p_exp = sub.add_parser("experiment", help="run or list synthetic studies")
    p_exp.add_argument("action", choices=("run", "list"))
    p_exp.add_argument("name", nargs="?", default=None)
    common(p_exp, "config", "seed", "threads", "out")

    p_rob = sub.add_parser("robustness", help="check a perturbation family")
    common(p_rob, "config", "data", "model", "method", "family", "k", "delta",
           "alpha", "epsilon", "samples", "seed", "out")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "attribute": _cmd_attribute,
        "manifold": _cmd_manifold,
        "experiment": _cmd_experiment,
        "robustness": _cmd_robustness,
    }
    try:
        line = handlers[args.command](args)
    except AcceptanceFailure as exc:
        _fail(f"error: {exc}")
        return 3
    except DataFormatError as exc:
        _fail(f"error: {exc}")
        return 1
    except OSError as exc:
        _fail(f"error: {exc}")
        return 1
    except (ShaplabError, ValueError) as exc:
        _fail(f"error: {exc}")
        return 2
    print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main())
