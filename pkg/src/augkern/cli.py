"""Command-line driver: ``augkern run | validate | list``.

A run reads a JSON config, writes CSV results plus ``summary.json`` into the
output directory and records a ``manifest.json`` with the config hash, the
master seed and library versions. Only the manifest carries a timestamp, so
reruns of one config produce byte-identical result files.

Exit codes: 0 success, 1 config error, 2 numerical precondition failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from augkern import __version__
from augkern.bundled import bundled_path
from augkern.chain import (
    ChainSpec,
    finite_time_distribution,
    mixing_bound,
    resolvent,
    stationary_distribution,
    transition_matrix,
)
from augkern.diagnostics import (
    alignment_estimate,
    default_subsample,
    feature_invariance,
    rank_transformations,
)
from augkern.errors import (
    AugkernError,
    ConfigError,
    DetailedBalanceError,
    DivergenceError,
    SeriesDivergenceError,
    SurjectivityError,
    ValidationError,
)
from augkern.kernel import (
    induced_kernel,
    jitter_kernel_check,
    reconstruct_stationary,
    update_kernel_add_info,
    verify_kernel_properties,
)
from augkern.knn import equivalence_experiment
from augkern.objectives import (
    MODES,
    Dataset,
    FeatureMap,
    LossModel,
    ObjectiveSpec,
    gaussian_mixture,
    objective_values,
    proposition1_check,
    train,
)
from augkern.transforms import AugmentationMatrix, build_finite_augmentation, sampler_from_json

EXPERIMENTS = {
    "chain-stationary": "stationary distribution of an augmentation chain",
    "chain-mixing": "distance to stationarity after n steps against the mixing bound",
    "kernel-build": "induced kernel, kernel weights and their property checks",
    "kernel-update": "kernel after adding one augmentation, by series and directly",
    "knn-equivalence": "k-NN on chain samples against the kernel classifier",
    "objective-compare": "true, first- and second-order objectives at probe weights",
    "prop1-check": "first-order approximation bounds at trained weights",
    "align-rank": "kernel target alignment ranking of candidate transformations",
    "invariance": "feature invariance of feature maps under one transformation",
    "jitter-kernel": "induced kernel of discretized jitter against a Gaussian fit",
}

MANIFEST = "manifest.json"
PRECONDITION_ERRORS = (DetailedBalanceError, SurjectivityError, SeriesDivergenceError,
                       DivergenceError)


# -- config access -------------------------------------------------------------


class Config:
    """Read-only view of a config object that reports missing/bad fields by path."""

    def __init__(self, obj, path="", base_dir=Path(".")):
        if not isinstance(obj, dict):
            raise ConfigError("expected an object", path or "<root>")
        self.obj, self.path, self.base_dir = obj, path, base_dir

    def _name(self, key):
        return f"{self.path}.{key}" if self.path else key

    def get(self, key, kind=None, default=...):
        if key not in self.obj:
            if default is ...:
                raise ConfigError("missing required field", self._name(key))
            return default
        val = self.obj[key]
        if kind is not None:
            ok = isinstance(val, kind) and not (isinstance(val, bool) and bool not in _tuple(kind))
            if not ok:
                names = "/".join(k.__name__ for k in _tuple(kind))
                raise ConfigError(f"expected {names}, got {type(val).__name__}", self._name(key))
        return val

    def sub(self, key, default=...):
        val = self.get(key, dict, default)
        return None if val is None else Config(val, self._name(key), self.base_dir)


def _tuple(kind):
    return kind if isinstance(kind, tuple) else (kind,)


NUM = (int, float)


def _wrap(field, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except KeyError as exc:
        raise ConfigError(f"missing required field {exc.args[0]!r}", field) from None
    except (ValidationError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc).strip("'\""), field) from None


def load_chain(cfg: Config, key="chain") -> ChainSpec:
    val = cfg.get(key, (str, dict))
    field = cfg._name(key)
    if isinstance(val, str):
        if val.startswith("bundled:"):
            path = _wrap(field, bundled_path, val[len("bundled:"):])
        else:
            path = cfg.base_dir / val
            if not Path(path).is_file():
                raise ConfigError(f"chain file {val!r} not found", field)
        return _wrap(field, ChainSpec.from_json, Path(str(path)))
    return _wrap(field, ChainSpec.from_json, val, cfg.base_dir)


def load_dataset(cfg: Config) -> Dataset:
    d = cfg.sub("dataset")
    if "synthetic" in d.obj:
        s = d.sub("synthetic")
        return _wrap(s.path, gaussian_mixture, **s.obj)
    return _wrap(d.path, Dataset, d.get("inputs", list), d.get("labels", list))


def load_sampler(cfg: Config, key="sampler"):
    return _wrap(cfg._name(key), sampler_from_json, cfg.get(key, dict))


def load_feature_map(cfg: Config, dataset, key="feature_map"):
    val = cfg.get(key, dict, {"kind": "identity"})
    return _wrap(cfg._name(key), FeatureMap.from_json, val, dataset.dim)


def load_loss(cfg: Config):
    val = cfg.get("loss", (str, dict), "logistic")
    if isinstance(val, str):
        return _wrap("loss", LossModel, val)
    return _wrap("loss", LossModel, val.get("kind"), val.get("num_classes"))


def load_augmentation(cfg: Config, chain: ChainSpec, key):
    a = cfg.sub(key)
    if "matrix_csv" in a.obj:
        mat = _wrap(a._name("matrix_csv"), AugmentationMatrix.from_csv,
                    cfg.base_dir / a.get("matrix_csv", str), chain.space)
    else:
        mat = _wrap(a.path, build_finite_augmentation, chain.space, a.get("kind", str),
                    **a.get("params", dict, {}))
    return mat, float(a.get("beta", NUM))


# -- output --------------------------------------------------------------------


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return int(v)
    return str(v)


class Output:
    def __init__(self, root: Path):
        self.root = root
        self.files = []
        root.mkdir(parents=True, exist_ok=True)

    def csv(self, name, header, rows):
        with open(self.root / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_cell(v) for v in r])
            fh.write(f"# manifest: {MANIFEST}\n")
        self.files.append(name)

    def json(self, name, obj):
        with open(self.root / name, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.files.append(name)


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (np.floating, float)):
        f = float(o)
        return f if np.isfinite(f) else str(f)
    return o


# -- experiments -----------------------------------------------------------------


def _kernel_rows(space, K):
    return [[sid, *row] for sid, row in zip(space.ids, K)]


def exp_chain_stationary(cfg, out, ctx):
    spec = load_chain(cfg)
    pi = stationary_distribution(spec)
    out.csv("stationary.csv", ["state_id", "probability"], zip(spec.space.ids, pi))
    resid = float(np.abs(pi @ transition_matrix(spec) - pi).max())
    return {"states": len(pi), "residual_inf": resid}


def exp_chain_mixing(cfg, out, ctx):
    spec = load_chain(cfg)
    steps = cfg.get("steps", int, 100)
    if steps < 0:
        raise ConfigError("must be >= 0", "steps")
    pi = stationary_distribution(spec)
    R = transition_matrix(spec)
    rows, worst_rec, prev = [], 0.0, None
    for n in range(steps + 1):
        pn = finite_time_distribution(spec, n)
        if prev is not None:
            worst_rec = max(worst_rec, float(np.abs(prev @ R - pn).max()))
        prev = pn
        d, b = float(np.linalg.norm(pn - pi)), mixing_bound(spec.beta, n)
        rows.append((n, d, b, d <= b + 1e-12))
    out.csv("mixing.csv", ["n", "distance_l2", "bound", "within_bound"], rows)
    return {"all_within_bound": all(r[3] for r in rows), "recurrence_max_error": worst_rec,
            "symmetric_augmentations": all(a.is_symmetric for a, _ in spec.augmentations)}


def exp_kernel_build(cfg, out, ctx):
    spec = load_chain(cfg)
    pi0 = cfg.get("pi0", (str, list), "uniform")
    psi, K = induced_kernel(spec, pi0=pi0)
    rep = verify_kernel_properties(K)
    pi = stationary_distribution(spec)
    ids = spec.space.ids
    out.csv("kernel.csv", ["state_id", *ids], _kernel_rows(spec.space, K.matrix))
    out.csv("psi.csv", ["state_id", "psi"], zip(ids, psi))
    return {"reconstruction_max_error": float(np.abs(reconstruct_stationary(psi, K) - pi).max()),
            "symmetric": rep.symmetric, "positive_definite": rep.positive_definite,
            "nonnegative": rep.nonnegative, "min_eigenvalue": rep.min_eigenvalue,
            "min_entry": rep.min_entry}


def exp_kernel_update(cfg, out, ctx):
    spec = load_chain(cfg)
    A_hat, beta_hat = load_augmentation(cfg, spec, "add")
    trunc = cfg.get("truncation", (int, type(None)), None)
    K0 = resolvent(spec)
    Ku, used, radius = update_kernel_add_info(K0, A_hat, beta_hat, trunc)
    direct = ChainSpec(spec.space, [*spec.augmentations, (A_hat, beta_hat)], spec.dataset)
    Kd = resolvent(direct)
    out.csv("kernel_updated.csv", ["state_id", *spec.space.ids],
            _kernel_rows(spec.space, Ku.matrix))
    return {"terms": used, "spectral_radius": radius,
            "max_abs_diff_vs_direct": float(np.abs(Ku.matrix - Kd).max())}


def exp_knn_equivalence(cfg, out, ctx):
    spec = load_chain(cfg)
    tests = cfg.get("test_states", (str, list), "all")
    if tests == "all":
        idx = list(range(len(spec.space)))
    elif isinstance(tests, list):
        missing = [t for t in tests if str(t) not in spec.space.index]
        if missing:
            raise ConfigError(f"unknown state ids {missing}", "test_states")
        idx = [spec.space.index[str(t)] for t in tests]
    else:
        raise ConfigError("expected 'all' or a list of state ids", "test_states")
    counts = cfg.get("sample_counts", list)
    if not counts or not all(isinstance(c, int) and c >= 1 for c in counts):
        raise ConfigError("expected a non-empty list of positive integers", "sample_counts")
    table = equivalence_experiment(
        spec, idx, counts, master_seed=ctx["seed"],
        replicates=cfg.get("replicates", int, 1),
        pi0=cfg.get("pi0", str, "reversible"), workers=ctx["workers"],
    )
    out.csv("agreement.csv", table.COLUMNS, ([r[c] for c in table.COLUMNS] for r in table.rows))
    summary = table.summary()
    out.csv("agreement_summary.csv", ["n", "agreement", "stderr", "replicates"],
            ([s["n"], s["agreement"], s["stderr"], s["replicates"]] for s in summary))
    return {"summary": summary}


def _objective_spec(cfg, mode="true"):
    ds = load_dataset(cfg)
    expectation = cfg.get("expectation", (str, dict), "exact")
    return _wrap("objective", ObjectiveSpec, ds, load_sampler(cfg), load_feature_map(cfg, ds),
                 load_loss(cfg), mode, expectation)


def _probe_weights(spec, n, scale, seed):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    return rng.standard_normal((n, *spec.weight_shape)) * scale


def exp_objective_compare(cfg, out, ctx):
    spec = _objective_spec(cfg)
    probes = _probe_weights(spec, cfg.get("probes", int, 20), cfg.get("probe_scale", NUM, 1.0),
                            ctx["seed"])
    rows = []
    for k, w in enumerate(probes):
        v = objective_values(spec, w)
        rows.append([k, *(v[m] for m in MODES)])
    out.csv("objectives.csv", ["probe", *MODES], rows)
    summary = {"probes": len(rows)}
    tr = cfg.sub("train", None)
    if tr is not None:
        mode = tr.get("mode", str, "true")
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}", tr._name("mode"))
        res = train(spec.with_mode(mode), np.zeros(spec.weight_shape),
                    tr.get("step_size", NUM), tr.get("iterations", int), tr.get("l2", NUM, 0.0))
        res.to_csv(out.root / "trace.csv", trailer=f"manifest: {MANIFEST}")
        out.files.append("trace.csv")
        summary["final_objective"] = res.trace[-1]["objective"]
    return summary


def exp_prop1_check(cfg, out, ctx):
    spec = _objective_spec(cfg)
    if not spec.loss.scalar:
        raise ConfigError("prop1-check needs a scalar loss", "loss")
    tr = cfg.sub("train")
    step, iters, l2 = tr.get("step_size", NUM), tr.get("iterations", int), tr.get("l2", NUM, 0.0)
    w0 = np.zeros(spec.weight_shape)
    w_hat = train(spec.with_mode("first_order"), w0, step, iters, l2).w
    w_star = train(spec.with_mode("true"), w0, step, iters, l2).w
    rep = proposition1_check(spec.dataset, spec.sampler, spec.feature_map, spec.loss,
                             w_hat, w_star, num_probes=cfg.get("probes", int, 20),
                             seed=ctx["seed"])
    out.csv("prop1_gaps.csv", ["point", "gap", "lower", "upper", "ok"],
            ([k, g["gap"], g["lower"], g["upper"], g["ok"]] for k, g in enumerate(rep.gaps)))
    return rep.as_dict()


def exp_align_rank(cfg, out, ctx):
    ds = load_dataset(cfg)
    fm = load_feature_map(cfg, ds)
    cands = cfg.get("candidates", dict)
    if not cands:
        raise ConfigError("need at least one candidate", "candidates")
    samplers = {name: _wrap(f"candidates.{name}", sampler_from_json, s)
                for name, s in cands.items()}
    rows = rank_transformations(ds, fm, samplers)
    sub = cfg.get("subsample", int, default_subsample(len(ds)))
    reps = cfg.get("repeats", int, 10)
    est = {name: _wrap("subsample", alignment_estimate, ds, s, fm, sub, reps, ctx["seed"])
           for name, s in samplers.items()}
    out.csv("ranking.csv", ["candidate", "alignment", "baseline_alignment", "delta",
                            "recommended", "subsample_mean", "subsample_stderr"],
            ([r.candidate, r.alignment, r.baseline_alignment, r.delta, r.recommended,
              *est[r.candidate]] for r in rows))
    return {"recommended": [r.candidate for r in rows if r.recommended],
            "subsample": sub, "repeats": reps}


def exp_invariance(cfg, out, ctx):
    ds = load_dataset(cfg)
    sampler = load_sampler(cfg)
    maps = cfg.get("feature_maps", dict)
    if not maps:
        raise ConfigError("need at least one feature map", "feature_maps")
    ref = cfg.get("reference", str, next(iter(maps)))
    if ref not in maps:
        raise ConfigError(f"{ref!r} is not one of the feature maps", "reference")
    mode = cfg.get("expectation", (str, dict), "exact")
    vals = {name: _wrap(f"feature_maps.{name}", feature_invariance,
                        FeatureMap.from_json(m, ds.dim), sampler, ds, mode)
            for name, m in maps.items()}
    den = vals[ref]
    out.csv("invariance.csv", ["feature_map", "invariance", "ratio_to_reference"],
            ([n, v, (v / den) if den != 0 else float("nan")] for n, v in vals.items()))
    return {"reference": ref}


def exp_jitter_kernel(cfg, out, ctx):
    rep = _wrap("jitter", jitter_kernel_check, cfg.get("grid_size", int, 41),
                cfg.get("sigma", NUM), cfg.get("beta", NUM))
    centre = rep.grid_size // 2
    s = rep.fitted_bandwidth
    peak = rep.amplitude
    out.csv("jitter_row.csv", ["offset", "kernel", "gaussian_fit"],
            ([k - centre, v, peak * np.exp(-((k - centre) ** 2) / (2 * s * s))]
             for k, v in enumerate(rep.row)))
    return {"fitted_bandwidth": rep.fitted_bandwidth, "amplitude": rep.amplitude,
            "max_relative_deviation": rep.max_relative_deviation}


HANDLERS = {
    "chain-stationary": exp_chain_stationary,
    "chain-mixing": exp_chain_mixing,
    "kernel-build": exp_kernel_build,
    "kernel-update": exp_kernel_update,
    "knn-equivalence": exp_knn_equivalence,
    "objective-compare": exp_objective_compare,
    "prop1-check": exp_prop1_check,
    "align-rank": exp_align_rank,
    "invariance": exp_invariance,
    "jitter-kernel": exp_jitter_kernel,
}


# -- driver ----------------------------------------------------------------------


def read_config(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from None
    try:
        obj = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError:
        raise ConfigError("config is not UTF-8", str(path)) from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}",
                          str(path)) from None
    cfg = Config(obj, base_dir=path.parent)
    kind = cfg.get("kind", str)
    if kind not in EXPERIMENTS:
        raise ConfigError(f"unknown kind {kind!r}; run 'augkern list'", "kind")
    return cfg, hashlib.sha256(raw).hexdigest()


def master_seed(cfg):
    env = os.environ.get("AUGKERN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"not an integer: {env!r}", "AUGKERN_SEED") from None
    seed = cfg.get("seed", int, 0)
    if seed < 0:
        raise ConfigError("must be >= 0", "seed")
    return seed


def run(config_path, out_dir=None, workers=None):
    """Run one experiment; returns ``(output_dir, summary)``."""
    cfg, digest = read_config(config_path)
    kind = cfg.obj["kind"]
    seed = master_seed(cfg)
    workers = workers if workers is not None else cfg.get("workers", int, 1)
    if workers < 1:
        raise ConfigError("must be >= 1", "workers")
    root = Path(out_dir) if out_dir else Path(cfg.get("output_dir", str, f"results/{kind}"))
    out = Output(root)
    summary = HANDLERS[kind](cfg, out, {"seed": seed, "workers": workers})
    out.json("summary.json", summary)
    manifest = {
        "kind": kind,
        "config": str(config_path),
        "config_sha256": digest,
        "master_seed": seed,
        "files": sorted(out.files),
        "versions": {"augkern": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    with open(root / MANIFEST, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return root, summary


def validate(config_path):
    """Parse the config and build every object it names without running."""
    cfg, _ = read_config(config_path)
    master_seed(cfg)
    kind = cfg.obj["kind"]
    if kind in ("chain-stationary", "chain-mixing", "kernel-build", "kernel-update",
                "knn-equivalence"):
        spec = load_chain(cfg)
        if kind == "kernel-update":
            load_augmentation(cfg, spec, "add")
    elif kind in ("objective-compare", "prop1-check"):
        _objective_spec(cfg)
    elif kind in ("align-rank", "invariance"):
        ds = load_dataset(cfg)
        if kind == "invariance":
            load_sampler(cfg)
        else:
            load_feature_map(cfg, ds)
    else:
        cfg.get("sigma", NUM)
        cfg.get("beta", NUM)
    return kind


def list_experiments() -> str:
    return "\n".join(f"{k:<18} {v}" for k, v in EXPERIMENTS.items())


def _precondition_report(exc):
    rep = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, DetailedBalanceError):
        i, u, v, g = exc.worst
        rep["worst"] = {"augmentation": i, "u": u, "v": v, "violation": g}
    if isinstance(exc, SurjectivityError):
        rep["unreachable"] = exc.unreachable
    return rep


def main(argv=None):
    parser = argparse.ArgumentParser(prog="augkern", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", help="output directory (overrides output_dir)")
    p_run.add_argument("--workers", type=int, help="worker processes")
    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("config")
    sub.add_parser("list", help="list experiment kinds")
    args = parser.parse_args(argv)

    if args.command == "list":
        print(list_experiments())
        return 0
    try:
        if args.command == "validate":
            kind = validate(args.config)
            print(f"ok: {kind}")
            return 0
        root, _ = run(args.config, args.out, args.workers)
        print(f"wrote {root}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except PRECONDITION_ERRORS as exc:
        print("numerical precondition failed:", file=sys.stderr)
        print(json.dumps(_jsonable(_precondition_report(exc)), indent=2), file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except AugkernError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
