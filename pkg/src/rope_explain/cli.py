"""Command-line entry point: ``rope-explain <command> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every command needs
an explicit ``--seed``; outputs embed the resolved run configuration.
Diagnostics go to stderr at the level named by ROPE_LOG.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import shlex
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .bench import (ALL_METHODS, STABILITY_METHODS, MethodConfig, StabilityConfig, SweepConfig,
                    coefficient_mismatch, feature_match, fidelity, pct_drop, rule_match,
                    run_shift_sweep, run_stability, train_decision_set_blackbox)
from .data import (SHIFT_KINDS, DataFormatError, Dataset, SyntheticSpec, read_csv, sample_synthetic,
                   shift_spec, write_csv)
from .linexp import LinearExplanation, TrainConfig, train_robust_linear
from .multiexp import ClusteredExplanation, select_k_bic, train_multi
from .oracle import (BlackBox, ProtocolError, connect_external, train_gb_stumps, train_logistic,
                     train_mlp)
from .ruleexp import DecisionSet, RuleTrainConfig, train_robust_dset
from .shiftset import ShiftSet, grid_robust_loss, marginal_dependence_audit, surrogate_bound_audit

log = logging.getLogger("rope_explain")

FORMAT_VERSION = 1
FAMILIES = ("linear", "dset", "linear-multi", "dset-multi")
METRICS = ("fidelity", "mismatch", "rulematch", "audit")
BLACKBOX_KINDS = ("mlp", "gb_stumps", "logistic", "decision_set", "external")


class UsageError(Exception):
    pass


class CLIError(Exception):
    """Runtime failure with a category used as the message prefix."""

    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: usage: {message}\n")
        raise SystemExit(1)


# --------------------------------------------------------------------------
# file helpers

def atomic_write(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix="." + path.name + ".", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def load_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CLIError("io", f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise CLIError("format", f"{path}: malformed JSON: {exc}") from None


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _read(path: str):
    try:
        return read_csv(path)
    except FileNotFoundError:
        raise CLIError("io", f"no such file: {path}") from None
    except DataFormatError as exc:
        raise CLIError("format", str(exc)) from None


def load_dataset(path: str, train_group: str | None = None) -> Dataset:
    """Training rows of a CSV, standardized on themselves."""
    raw, names, labels, groups = _read(path)
    mask = np.ones(len(raw), dtype=bool)
    if train_group is not None:
        if groups is None:
            raise CLIError("format", f"{path}: --train-group given but the CSV has no 'group' column")
        mask = groups == train_group
        if not mask.any():
            raise CLIError("format", f"{path}: no rows in group {train_group!r}")
    train = Dataset.from_raw(raw[mask], names, None if labels is None else labels[mask],
                             None if groups is None else groups[mask])
    if train.dim != raw.shape[1]:
        raise CLIError("format", f"{path}: constant feature in the training rows")
    return train


def load_dataset_like(path: str, reference: Dataset) -> Dataset:
    """All rows of a CSV in ``reference``'s standardized units."""
    raw, names, labels, groups = _read(path)
    if raw.shape[1] != reference.dim:
        raise CLIError("format", f"{path}: {raw.shape[1]} features, expected {reference.dim}")
    return Dataset.from_raw(raw, names, labels, groups, standardization=reference.standardization)


class RawUnitsBlackBox(BlackBox):
    """Feeds an external black box raw feature values while callers use standardized ones."""

    def __init__(self, inner: BlackBox, standardization):
        super().__init__(inner.n_features, inner.labels)
        self.inner = inner
        self.standardization = standardization
        self.kind = inner.kind

    def batch(self, X):
        return self.inner.batch(self.standardization.invert(self._check(X)))


def build_blackbox(ref: dict, ref_path: str | None = None) -> tuple[BlackBox, Dataset]:
    """Rebuild a black box from its reference: retrain built-ins from data + seed."""
    if ref.get("format_version") != FORMAT_VERSION or "kind" not in ref:
        raise CLIError("format", f"{ref_path or 'black-box reference'}: not a black-box reference")
    kind = ref["kind"]
    train = load_dataset(ref["data"], ref.get("train_group"))
    if ref.get("data_sha256") and sha256_file(ref["data"]) != ref["data_sha256"]:
        raise CLIError("format", f"{ref['data']}: contents changed since the black box was defined")
    p = ref.get("params", {})
    seed = ref["seed"]
    if kind == "external":
        try:
            inner = connect_external(ref["command"], p.get("timeout", 30.0))
        except (OSError, ProtocolError) as exc:
            raise CLIError("protocol", f"could not start external black box: {exc}") from None
        if inner.n_features != train.dim:
            raise CLIError("protocol", f"external black box reports {inner.n_features} features, data has {train.dim}")
        return RawUnitsBlackBox(inner, train.standardization), train
    if train.labels is None:
        raise CLIError("format", f"{ref['data']}: training a built-in black box needs a 'label' column")
    if kind == "mlp":
        bb = train_mlp(train, train.labels, tuple(p.get("layers", (16,) * 5)), seed,
                       p.get("epochs", 50), p.get("lr", 0.1))
    elif kind == "gb_stumps":
        bb = train_gb_stumps(train, train.labels, p.get("rounds", 100), seed)
    elif kind == "logistic":
        bb = train_logistic(train, train.labels, seed, p.get("epochs", 30), p.get("lr", 0.1))
    elif kind == "decision_set":
        bb = train_decision_set_blackbox(train, train.labels, seed, p.get("alpha", 5), p.get("lambda", 5.0))
    else:
        raise CLIError("format", f"unknown black-box kind {kind!r}")
    return bb, train


def load_explanation(path: str):
    doc = load_json(path)
    body = doc.get("explanation", doc)
    kind = body.get("type")
    try:
        if kind == "linear":
            return LinearExplanation.from_json(body), doc
        if kind == "decision_set":
            return DecisionSet.from_json(body), doc
        if kind == "clustered":
            return ClusteredExplanation.from_json(body), doc
    except (KeyError, ValueError, TypeError) as exc:
        raise CLIError("format", f"{path}: malformed explanation: {exc}") from None
    raise CLIError("format", f"{path}: unknown explanation type {kind!r}")


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _methods(allowed):
    def parse(text):
        ms = tuple(m.strip() for m in text.split(",") if m.strip())
        bad = [m for m in ms if m not in allowed]
        if bad:
            raise argparse.ArgumentTypeError(f"unknown methods {bad}; choose from {list(allowed)}")
        return ms
    return parse


# --------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    dim = args.dim
    spec = SyntheticSpec(dim, beta=args.beta, mu=args.mu, sigma=args.sigma, n_samples=args.n, seed=args.seed)
    config = {"command": "synth", "kind": args.kind, "spec": spec.to_json(),
              "shift_alpha": args.shift_alpha, "version": __version__}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        raw, labels = sample_synthetic(spec)
        groups = None
        if args.shift_alpha is not None:
            sspec = shift_spec(spec, args.kind, args.shift_alpha)
            sspec = SyntheticSpec(sspec.dim, sspec.beta, sspec.mu, sspec.sigma, sspec.n_samples, args.seed + 1)
            raw2, labels2 = sample_synthetic(sspec)
            groups = np.array(["train"] * len(raw) + ["shift"] * len(raw2))
            raw, labels = np.vstack([raw, raw2]), np.concatenate([labels, labels2])
            config["shift_spec"] = sspec.to_json()
    for w in caught:
        log.warning("%s", w.message)
    import io
    buf = io.StringIO()
    write_csv(buf, raw, [f"x{i}" for i in range(dim)], labels, groups, config)
    atomic_write(args.out, buf.getvalue())
    print(f"wrote {len(raw)} rows to {args.out}")
    return 0


def cmd_blackbox(args) -> int:
    if args.kind == "external" and not args.command:
        raise UsageError("--command is required for an external black box")
    params = {}
    if args.kind == "mlp":
        params = {"layers": list(args.layers), "epochs": args.epochs, "lr": args.lr}
    elif args.kind == "gb_stumps":
        params = {"rounds": args.rounds}
    elif args.kind == "logistic":
        params = {"epochs": args.epochs, "lr": args.lr}
    elif args.kind == "decision_set":
        params = {"alpha": args.alpha_rules, "lambda": args.lam}
    elif args.kind == "external":
        params = {"timeout": args.timeout}
    ref = {"format_version": FORMAT_VERSION, "kind": args.kind, "params": params, "seed": args.seed,
           "data": args.data, "data_sha256": sha256_file(args.data) if os.path.exists(args.data) else None,
           "train_group": args.train_group}
    if args.kind == "external":
        ref["command"] = shlex.split(args.command)
    bb, train = build_blackbox(ref)  # validates the reference (and the child handshake)
    ref["n_features"] = bb.n_features
    ref["run_config"] = {"command": "blackbox", "version": __version__}
    close = getattr(getattr(bb, "inner", None), "close", None)
    if close:
        close()
    atomic_write(args.out, dump_json(ref))
    print(f"wrote black-box reference ({args.kind}) to {args.out}")
    return 0


def _shiftset(args, dim: int) -> ShiftSet:
    try:
        return ShiftSet(args.s0, args.delta_max, dim)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_explain(args) -> int:
    ref = load_json(args.blackbox)
    B, bb_train = build_blackbox(ref, args.blackbox)
    train = load_dataset_like(args.data, bb_train)
    if args.group is not None:
        if train.groups is None or not np.any(train.groups == args.group):
            raise CLIError("format", f"{args.data}: no rows in group {args.group!r}")
        train = train.subset(train.groups == args.group)
    S = _shiftset(args, train.dim)
    linear = args.family.startswith("linear")
    if linear:
        cfg = TrainConfig(seed=args.seed, epochs=args.epochs, learning_rate=args.lr,
                          batch_size=args.batch_size, l2_penalty=args.l2)
    else:
        cfg = RuleTrainConfig(seed=args.seed, alpha=args.alpha_rules, lam=args.lam,
                              k_shifts=args.k_shifts, eps_ls=args.eps_ls, max_depth=args.max_depth,
                              quantiles=args.quantiles, min_support=args.min_support)
    K = None
    if args.family.endswith("multi"):
        K = args.K if args.K is not None else select_k_bic(train, args.k_max, args.seed)
        E = train_multi(train, B, S, K, "linear" if linear else "decision_set", cfg)
    elif linear:
        E = train_robust_linear(train, B, S, cfg)
    else:
        E = train_robust_dset(train, B, S, cfg)
    run_config = {
        "command": "explain", "version": __version__, "family": args.family,
        "blackbox": ref, "shift_set": {"s0": S.s0, "delta_max": S.delta_max, "dim": S.dim},
        "train_config": cfg.to_json(), "K": K, "k_max": args.k_max,
        "data": {"path": args.data, "sha256": sha256_file(args.data), "group": args.group},
        "seed": args.seed,
    }
    doc = {"format_version": FORMAT_VERSION, "explanation": E.to_json(),
           "standardization": train.standardization.to_json(),
           "feature_names": list(train.feature_names), "run_config": run_config}
    atomic_write(args.out, dump_json(doc))
    print(f"wrote {args.family} explanation to {args.out}")
    if isinstance(E, DecisionSet):
        print(E.render())
    return 0


def cmd_eval(args) -> int:
    E, edoc = load_explanation(args.explanation)
    ref = load_json(args.blackbox)
    B, bb_train = build_blackbox(ref, args.blackbox)
    data = load_dataset_like(args.data, bb_train)
    groups = {"all": np.ones(data.n, dtype=bool)}
    if data.groups is not None:
        for g in sorted(set(data.groups.tolist())):
            groups[g] = data.groups == g
    results: dict = {}
    for metric in args.metrics:
        if metric == "fidelity":
            results["fidelity"] = {g: fidelity(E, data.subset(m), B) for g, m in groups.items()}
            if args.train_group and args.train_group in groups:
                tr = results["fidelity"][args.train_group]
                results["pct_drop"] = {g: pct_drop(tr, v) for g, v in results["fidelity"].items()
                                       if g not in ("all", args.train_group)}
        elif metric == "mismatch":
            target = getattr(B, "explanation", None)
            if target is None or not _is_linear_like(target) or not _is_linear_like(E):
                raise UsageError("mismatch needs linear explanations and an interpretable linear black box")
            results["coefficient_mismatch"] = coefficient_mismatch(E, target)
        elif metric == "rulematch":
            target = getattr(B, "explanation", None)
            if target is None or _is_linear_like(target) or _is_linear_like(E):
                raise UsageError("rulematch needs decision sets and an interpretable decision-set black box")
            results["rule_match"] = rule_match(E, target)
            results["feature_match"] = feature_match(E, target)
        elif metric == "audit":
            results["audit"] = _audit(E, B, data, args)
    doc = {"format_version": FORMAT_VERSION, "metrics": results,
           "run_config": {"command": "eval", "version": __version__, "explanation": args.explanation,
                          "explanation_sha256": sha256_file(args.explanation), "blackbox": ref,
                          "data": args.data, "metrics": list(args.metrics), "seed": args.seed,
                          "train_group": args.train_group}}
    text = dump_json(doc)
    if args.out:
        atomic_write(args.out, text)
    sys.stdout.write(text)
    return 0


def _is_linear_like(E) -> bool:
    if isinstance(E, LinearExplanation):
        return True
    if isinstance(E, ClusteredExplanation):
        return all(isinstance(e.explanation, LinearExplanation) for e in E.entries)
    return False


def _audit(E, B, data: Dataset, args) -> dict:
    if data.dim > 4:
        raise UsageError("audit needs at most 4 features (exhaustive grid)")
    if not isinstance(E, LinearExplanation):
        raise UsageError("audit needs a single linear explanation")
    S = _shiftset(args, data.dim)
    rng = np.random.default_rng(args.seed)
    idx = rng.choice(data.n, size=min(args.audit_n, data.n), replace=False)
    sub = data.X[np.sort(idx)]
    lhs, rhs = surrogate_bound_audit(E, B, sub, S, args.grid_step)
    c = min(S.delta_max, S.s0)
    marg, bound = {}, {}
    for i, name in enumerate(data.feature_names):
        marg[name] = marginal_dependence_audit(E, B, sub, i, c, S)
        # the one-hot shift itself joins the grid so the bound is checked on the same set
        bound[name] = 2 * grid_robust_loss(E, B, sub, S, args.grid_step, extra=c * np.eye(data.dim)[i])
    return {"distributional_loss": lhs, "pointwise_robust_loss": rhs, "bound_holds": lhs <= rhs + 1e-9,
            "marginal_dependence": marg, "marginal_bound": bound,
            "marginal_bound_holds": all(marg[k] <= bound[k] + 1e-9 for k in marg),
            "n_points": int(len(sub)), "c": c}


def _method_config(args) -> MethodConfig:
    return MethodConfig(s0=args.s0, delta_max=args.delta_max, k_max=args.k_max,
                        rules={"alpha": args.alpha_rules, "lam": args.lam, "k_shifts": args.k_shifts})


def _write_report(report, out: str) -> None:
    out = Path(out)
    stem = out.with_suffix("") if out.suffix in (".csv", ".json") else out
    atomic_write(stem.with_suffix(".csv"), report.to_csv())
    atomic_write(stem.with_suffix(".json"), dump_json(report.to_json()))
    print(f"wrote {len(report.rows)} rows to {stem.with_suffix('.csv')} and {stem.with_suffix('.json')}")


def cmd_sweep(args) -> int:
    cfg = SweepConfig(args.kind, args.alphas, args.replicates, args.seed, args.methods,
                      (args.dim_min, args.dim_max), args.n, method_config=_method_config(args), jobs=args.jobs)
    report = run_shift_sweep(cfg)
    report.config = {"command": "sweep", "version": __version__, **report.config}
    _write_report(report, args.out)
    for s in report.summary():
        if s["pct_drop_mean"] is not None:
            print(f"{s['method']:>22s}  alpha={s['alpha']:<5g} drop={s['pct_drop_mean']:7.2f}% "
                  f"(se {s['pct_drop_se']:.2f})")
    return 0


def cmd_stability(args) -> int:
    cfg = StabilityConfig(args.seed, args.noise_std, args.replicates, args.methods,
                          (args.dim_min, args.dim_max), args.n, args.K,
                          method_config=_method_config(args), jobs=args.jobs)
    report = run_stability(cfg)
    report.config = {"command": "stability", "version": __version__, **report.config}
    _write_report(report, args.out)
    for s in report.summary():
        parts = [f"{c}={s[c + '_mean']:.3f}" for c in ("coef_mismatch", "rule_match", "feature_match")
                 if s.get(c + "_mean") is not None]
        print(f"{s['method']:>22s}  " + " ".join(parts))
    return 0


# --------------------------------------------------------------------------
# parser

def _add_shift(p, s0_default=None):
    p.add_argument("--s0", type=float, default=s0_default, required=s0_default is None,
                   help="L1 budget of the shift set (standardized units)")
    p.add_argument("--delta-max", type=float, default=1.0, help="per-coordinate shift cap")


def _add_rules(p):
    p.add_argument("--lambda", dest="lam", type=float, default=5.0, help="coverage weight")
    p.add_argument("--alpha-rules", type=int, default=5, help="maximum number of rules")
    p.add_argument("--k-shifts", type=int, default=10, help="sampled shifts for robust disagreement")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="rope-explain", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic Gaussian dataset CSV")
    p.add_argument("--kind", choices=SHIFT_KINDS, default="correlation")
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=1.0, help="per-coordinate variance")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--shift-alpha", type=float, default=None,
                   help="also emit a shifted sample; rows get a group column (train/shift)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("blackbox", help="define (and validate) a black box reference")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=BLACKBOX_KINDS, default="mlp")
    p.add_argument("--layers", type=_ints, default=(16, 16, 16, 16, 16))
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--alpha-rules", type=int, default=5)
    p.add_argument("--lambda", dest="lam", type=float, default=5.0)
    p.add_argument("--command", help="external black box command line")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--train-group", default=None, help="fit on rows of this group only")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_blackbox)

    p = sub.add_parser("explain", help="fit a robust explanation of a black box")
    p.add_argument("--data", required=True, help="rows the explanation is fit on")
    p.add_argument("--group", default=None, help="fit on rows of this group only")
    p.add_argument("--blackbox", required=True)
    p.add_argument("--family", choices=FAMILIES, default="linear")
    _add_shift(p)
    _add_rules(p)
    p.add_argument("--eps-ls", type=float, default=0.1)
    p.add_argument("--max-depth", type=int, default=2)
    p.add_argument("--quantiles", type=int, default=4)
    p.add_argument("--min-support", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--K", type=int, default=None, help="clusters for multi families (default: BIC)")
    p.add_argument("--k-max", type=int, default=5)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("eval", help="evaluate an explanation")
    p.add_argument("--explanation", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--blackbox", required=True)
    p.add_argument("--metrics", type=lambda t: tuple(m for m in t.split(",") if m), default=("fidelity",))
    p.add_argument("--train-group", default=None, help="group used as reference for pct_drop")
    p.add_argument("--s0", type=float, default=1.0)
    p.add_argument("--delta-max", type=float, default=1.0)
    p.add_argument("--grid-step", type=float, default=0.05)
    p.add_argument("--audit-n", type=int, default=200)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    for name, func, help_ in (("sweep", cmd_sweep, "synthetic shift sweep"),
                              ("stability", cmd_stability, "stability under input noise")):
        p = sub.add_parser(name, help=help_)
        if name == "sweep":
            p.add_argument("--kind", choices=SHIFT_KINDS, required=True)
            p.add_argument("--alphas", type=_floats, default=(0.0, 0.2, 0.4, 0.6, 0.8))
            p.add_argument("--methods", type=_methods(ALL_METHODS), default=ALL_METHODS)
        else:
            p.add_argument("--noise-std", type=float, default=0.2)
            p.add_argument("--methods", type=_methods(ALL_METHODS), default=STABILITY_METHODS)
            p.add_argument("--K", type=int, default=2, help="subgroups for multiple black boxes / multi methods")
        p.add_argument("--replicates", type=int, default=20)
        p.add_argument("--dim-min", type=int, default=2)
        p.add_argument("--dim-max", type=int, default=10)
        p.add_argument("--n", type=int, default=5000)
        _add_shift(p, s0_default=1.0)
        _add_rules(p)
        p.add_argument("--k-max", type=int, default=5)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)
    return ap


def _validate(args) -> None:
    if args.command == "eval":
        bad = [m for m in args.metrics if m not in METRICS]
        if bad or not args.metrics:
            raise UsageError(f"unknown metrics {bad}; choose from {list(METRICS)}")
    if args.command == "synth":
        if not 2 <= args.dim <= 10:
            raise UsageError("--dim must be between 2 and 10")
        if args.sigma <= 0 or args.n < 1:
            raise UsageError("--sigma must be positive and --n at least 1")
    if args.command in ("sweep", "stability"):
        if args.replicates < 1 or not 2 <= args.dim_min <= args.dim_max <= 10:
            raise UsageError("need --replicates >= 1 and 2 <= --dim-min <= --dim-max <= 10")
    for name in ("s0", "delta_max"):
        v = getattr(args, name, None)
        if v is not None and v < 0:
            raise UsageError(f"--{name.replace('_', '-')} must be nonnegative")


def _setup_logging() -> None:
    level = os.environ.get("ROPE_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _validate(args)
        try:
            return args.func(args)
        except Exception as exc:
            # trainers wrap query failures; report the protocol cause itself
            cause = exc
            while cause is not None and not isinstance(cause, ProtocolError):
                cause = cause.__cause__
            raise (cause or exc)
    except UsageError as exc:
        sys.stderr.write(f"error: usage: {exc}\n")
        return 1
    except CLIError as exc:
        sys.stderr.write(f"error: {exc.category}: {exc}\n")
        return 2
    except ProtocolError as exc:
        sys.stderr.write(f"error: protocol: {exc}\n")
        return 2
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        sys.stderr.write(f"error: io: {exc}\n")
        return 2
    except DataFormatError as exc:
        sys.stderr.write(f"error: format: {exc}\n")
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort runtime failure
        log.debug("unhandled failure", exc_info=True)
        sys.stderr.write(f"error: runtime: {type(exc).__name__}: {exc}\n")
        return 2


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
