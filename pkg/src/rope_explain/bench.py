"""Evaluation metrics, reports, and the shift-sweep / stability experiments."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import format_float, gen_synthetic, random_base_spec, shift_spec
from .linexp import TrainConfig, train_robust_linear
from .multiexp import ClusteredExplanation, ClusterEntry, kmeans, select_k_bic, train_multi
from .oracle import (CoordinateThresholdBlackBox, InterpretableBlackBox, train_logistic, train_mlp,
                     wrap_interpretable)
from .ruleexp import (DecisionSet, Rule, RuleProblem, RuleTrainConfig, local_search_select,
                      mine_candidate_rules, train_robust_dset, default_label_of)
from .shiftset import ShiftSet

log = logging.getLogger(__name__)

REPORT_FORMAT_VERSION = 1
REPORT_COLUMNS = ("experiment", "method", "kind", "alpha", "replicate",
                  "train_fidelity", "shift_fidelity", "pct_drop")

ROBUST_METHODS = ("rope_linear", "rope_dset", "rope_linear_multi", "rope_dset_multi")
BASELINE_METHODS = ("baseline_linear", "baseline_dset", "baseline_linear_multi", "baseline_dset_multi")
ALL_METHODS = ROBUST_METHODS + BASELINE_METHODS


# --------------------------------------------------------------------------
# metrics

def _rows(data) -> np.ndarray:
    return np.atleast_2d(np.asarray(getattr(data, "X", data), dtype=float))


def fidelity(E, data, B) -> float:
    """Fraction of rows where the explanation and the black box agree."""
    X = _rows(data)
    if X.shape[0] == 0:
        raise ValueError("fidelity on empty data")
    return float(np.mean(np.asarray(E.predict_batch(X)) == np.asarray(B.batch(X))))


def pct_drop(train: float, shift: float) -> float | None:
    if train > 0:
        return 100.0 * (train - shift) / train
    return None


def _unwrap(model):
    return model.explanation if isinstance(model, InterpretableBlackBox) else model


def coefficient_mismatch(E, B) -> float:
    """L2 distance between (weights, bias) vectors.

    A clustered explanation contributes sum_i w_i ||E_i - target_i||, where
    the target of entry i is B itself or, for a clustered B, B's entry
    nearest to E's representative i. A single E against a clustered B uses
    B's weights.
    """
    E, B = _unwrap(E), _unwrap(B)
    if isinstance(E, ClusteredExplanation):
        total = 0.0
        for e in E.entries:
            target = B
            if isinstance(B, ClusteredExplanation):
                target = B.entries[int(B.assign(e.representative[None, :])[0])].explanation
            total += e.weight * float(np.linalg.norm(e.explanation.params - target.params))
        return total
    if isinstance(B, ClusteredExplanation):
        return float(sum(b.weight * np.linalg.norm(E.params - b.explanation.params) for b in B.entries))
    return float(np.linalg.norm(E.params - B.params))


def _rule_key(r: Rule):
    return r.label, sorted((p.feature, p.op, p.value) for p in r.condition)


def _same_rule(a: Rule, b: Rule) -> bool:
    ka, kb = _rule_key(a), _rule_key(b)
    if ka[0] != kb[0] or len(ka[1]) != len(kb[1]):
        return False
    return all(fa == fb and oa == ob and abs(va - vb) <= 1e-9
               for (fa, oa, va), (fb, ob, vb) in zip(ka[1], kb[1]))


def _rule_match_single(E: DecisionSet, B: DecisionSet) -> int:
    used = [False] * len(B.rules)
    count = 0
    for r in E.rules:
        for j, s in enumerate(B.rules):
            if not used[j] and _same_rule(r, s):
                used[j] = True
                count += 1
                break
    return count


def _feature_match_single(E: DecisionSet, B: DecisionSet) -> int:
    return len(E.features & B.features)


def _weighted(fn, E, B) -> float:
    E, B = _unwrap(E), _unwrap(B)

    def target(rep):
        if isinstance(B, ClusteredExplanation):
            return B.entries[int(B.assign(rep[None, :])[0])].explanation
        return B

    if isinstance(E, ClusteredExplanation):
        return float(sum(e.weight * fn(e.explanation, target(e.representative)) for e in E.entries))
    if isinstance(B, ClusteredExplanation):
        return float(sum(b.weight * fn(E, b.explanation) for b in B.entries))
    return fn(E, B)


def rule_match(E, B) -> float:
    """Rules present in both (same label, same predicates up to order, values within 1e-9)."""
    return _weighted(_rule_match_single, E, B)


def feature_match(E, B) -> float:
    """Size of the intersection of referenced feature indices."""
    return _weighted(_feature_match_single, E, B)


# --------------------------------------------------------------------------
# reports

@dataclass
class Report:
    experiment: str
    rows: list[dict] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    aux_columns: tuple[str, ...] = ()

    @property
    def columns(self) -> tuple[str, ...]:
        return REPORT_COLUMNS + tuple(self.aux_columns)

    def sorted_rows(self) -> list[dict]:
        return sorted(self.rows, key=lambda r: (r["method"], r["alpha"], r["replicate"]))

    def summary(self) -> list[dict]:
        """Mean and standard error of each numeric column per (method, alpha)."""
        groups: dict[tuple, list[dict]] = {}
        for r in self.sorted_rows():
            groups.setdefault((r["method"], r["alpha"]), []).append(r)
        out = []
        for (method, alpha), rows in groups.items():
            entry = {"method": method, "alpha": alpha, "n": len(rows)}
            for col in ("train_fidelity", "shift_fidelity", "pct_drop", *self.aux_columns):
                vals = [r.get(col) for r in rows]
                vals = [v for v in vals if isinstance(v, (int, float)) and v is not None and math.isfinite(v)]
                if not vals:
                    entry[col + "_mean"] = None
                    entry[col + "_se"] = None
                    continue
                arr = np.asarray(vals, dtype=float)
                entry[col + "_mean"] = float(arr.mean())
                entry[col + "_se"] = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
            out.append(entry)
        return out

    def mean(self, method: str, col: str, alpha=None) -> float:
        vals = [r[col] for r in self.rows if r["method"] == method
                and (alpha is None or r["alpha"] == alpha) and r.get(col) is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# config: " + json.dumps(self.config, sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns + ("error",))
        for r in self.sorted_rows():
            out = []
            for col in self.columns + ("error",):
                v = r.get(col)
                if v is None:
                    out.append("NA" if col != "error" else "")
                elif isinstance(v, float):
                    out.append(format_float(v))
                else:
                    out.append(str(v))
            w.writerow(out)
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "experiment": self.experiment,
            "config": self.config,
            "columns": list(self.columns),
            "rows": self.sorted_rows(),
            "summary": self.summary(),
        }


# --------------------------------------------------------------------------
# method fitting

@dataclass(frozen=True)
class MethodConfig:
    """Shared settings for fitting the explanation methods in experiments."""

    s0: float = 1.0
    delta_max: float = 1.0
    k_max: int = 5
    linear: dict = field(default_factory=dict)   # TrainConfig overrides (no seed)
    rules: dict = field(default_factory=dict)    # RuleTrainConfig overrides (no seed)

    def to_json(self) -> dict:
        return {"s0": self.s0, "delta_max": self.delta_max, "k_max": self.k_max,
                "linear": dict(self.linear), "rules": dict(self.rules)}


def fit_method(method: str, data, B, mc: MethodConfig, seed: int, K: int | None = None):
    """Fit one named method. ``baseline_*`` methods are the same trainers with s0 = 0."""
    if method not in ALL_METHODS:
        raise ValueError(f"unknown method {method!r}")
    X = _rows(data)
    robust = method.startswith("rope_")
    S = ShiftSet(mc.s0, mc.delta_max, X.shape[1]) if robust else ShiftSet(0.0, 0.0, X.shape[1])
    family = "linear" if "_linear" in method else "decision_set"
    cfg = (TrainConfig(seed=seed, **mc.linear) if family == "linear"
           else RuleTrainConfig(seed=seed, **mc.rules))
    if method.endswith("_multi"):
        if K is None:
            K = select_k_bic(X, mc.k_max, seed)
        return train_multi(data, B, S, K, family, cfg)
    if family == "linear":
        return train_robust_linear(data, B, S, cfg)
    return train_robust_dset(data, B, S, cfg)


# --------------------------------------------------------------------------
# shift sweep

@dataclass(frozen=True)
class SweepConfig:
    kind: str
    alphas: tuple[float, ...]
    replicates: int
    seed: int
    methods: tuple[str, ...] = ALL_METHODS
    dim_range: tuple[int, int] = (2, 10)
    n_samples: int = 5000
    mlp_layers: tuple[int, ...] = (16, 16, 16, 16, 16)
    mlp_epochs: int = 50
    mlp_lr: float = 0.1
    method_config: MethodConfig = field(default_factory=MethodConfig)
    jobs: int = 1

    def to_json(self) -> dict:
        d = asdict(self)
        d["method_config"] = self.method_config.to_json()
        d.pop("jobs")
        return d


def _replicate_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def _sweep_replicate(cfg: SweepConfig, rep: int, rep_seed: int) -> list[dict]:
    rng = np.random.default_rng(rep_seed)
    base = random_base_spec(cfg.kind, rng, cfg.dim_range, cfg.n_samples)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        train = gen_synthetic(base)
        shifted = []
        for a_idx, alpha in enumerate(cfg.alphas):
            sspec = replace(shift_spec(base, cfg.kind, alpha), seed=base.seed + 1 + a_idx)
            shifted.append(gen_synthetic(sspec, standardization=train.standardization))
    bb_seed, method_seed = (int(v) for v in rng.integers(0, 2**31 - 1, size=2))
    B = train_mlp(train, train.labels, cfg.mlp_layers, bb_seed, cfg.mlp_epochs, cfg.mlp_lr)
    aux = {"dim": base.dim, "beta": base.beta, "mu": base.mu, "sigma": base.sigma}
    K = None
    if any(m.endswith("_multi") for m in cfg.methods):
        K = select_k_bic(train.X, cfg.method_config.k_max, method_seed)
    rows = []
    for method in cfg.methods:
        try:
            E = fit_method(method, train, B, cfg.method_config, method_seed, K)
            f_train = fidelity(E, train, B)
            results = [(alpha, fidelity(E, sd, B), None) for alpha, sd in zip(cfg.alphas, shifted)]
        except Exception as exc:  # recorded per row; the sweep continues
            log.warning("replicate %d method %s failed: %s", rep, method, exc)
            f_train = None
            results = [(alpha, None, f"{type(exc).__name__}: {exc}") for alpha in cfg.alphas]
        for alpha, f_shift, err in results:
            rows.append({
                "experiment": f"sweep-{cfg.kind}", "method": method, "kind": cfg.kind,
                "alpha": float(alpha), "replicate": rep,
                "train_fidelity": f_train, "shift_fidelity": f_shift,
                "pct_drop": None if f_train is None or f_shift is None else pct_drop(f_train, f_shift),
                "K": K if method.endswith("_multi") else None,
                **aux, "error": err,
            })
    return rows


def run_shift_sweep(cfg: SweepConfig) -> Report:
    """Figure-style sweep: per replicate a random base distribution, an MLP
    black box on random labels, every method fit once, and fidelity measured
    on the training data and on one shifted sample per alpha."""
    seeds = _replicate_seeds(cfg.seed, cfg.replicates)
    rows: list[dict] = []
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            for part in pool.map(_sweep_replicate, [cfg] * cfg.replicates, range(cfg.replicates), seeds):
                rows.extend(part)
    else:
        for rep, s in enumerate(seeds):
            rows.extend(_sweep_replicate(cfg, rep, s))
    return Report(f"sweep-{cfg.kind}", rows, cfg.to_json(), ("K", "dim", "beta", "mu", "sigma"))


# --------------------------------------------------------------------------
# stability

STABILITY_METHODS = ("rope_linear", "baseline_linear", "rope_dset", "baseline_dset",
                     "rope_linear_multi", "baseline_linear_multi",
                     "rope_dset_multi", "baseline_dset_multi")


@dataclass(frozen=True)
class StabilityConfig:
    seed: int
    noise_std: float = 0.2
    replicates: int = 20
    methods: tuple[str, ...] = STABILITY_METHODS
    dim_range: tuple[int, int] = (2, 10)
    n_samples: int = 5000
    K: int = 2
    method_config: MethodConfig = field(default_factory=MethodConfig)
    jobs: int = 1

    def to_json(self) -> dict:
        d = asdict(self)
        d["method_config"] = self.method_config.to_json()
        d.pop("jobs")
        return d


def train_decision_set_blackbox(data, labels, seed: int, alpha: int = 5, lam: float = 5.0) -> InterpretableBlackBox:
    """Decision set fit to given labels (no shifts), wrapped as a black box."""
    X = _rows(data)
    universe = mine_candidate_rules(X, labels)
    P = RuleProblem(universe, X, np.asarray(labels)[None, :], lam)
    idx = local_search_select(P, alpha, 0.1, seed)
    names = tuple(getattr(data, "feature_names", ()) or ())
    return wrap_interpretable(DecisionSet(tuple(universe[i] for i in idx),
                                          default_label_of(labels), alpha, names), X.shape[1])


def _multi_blackbox(data, labels, K: int, seed: int, family: str) -> InterpretableBlackBox:
    """One interpretable model per K-means subgroup, routed by nearest centroid."""
    X = _rows(data)
    res = kmeans(X, K, seed)
    labels = np.asarray(labels)
    entries = []
    for k in range(K):
        m = res.assign == k
        if family == "linear":
            sub = train_logistic(X[m], labels[m], seed).explanation
        else:
            sub = train_decision_set_blackbox(X[m], labels[m], seed).explanation
        entries.append(ClusterEntry(res.centers[k].copy(), float(m.sum()) / len(X), sub))
    total = sum(e.weight for e in entries)
    return wrap_interpretable(ClusteredExplanation(tuple(
        ClusterEntry(e.representative, e.weight / total, e.explanation) for e in entries)))


def _stability_replicate(cfg: StabilityConfig, rep: int, rep_seed: int) -> list[dict]:
    rng = np.random.default_rng(rep_seed)
    base = random_base_spec("correlation", rng, cfg.dim_range, cfg.n_samples)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        D = gen_synthetic(base)
    noise = rng.normal(0.0, cfg.noise_std, size=D.X.shape) if cfg.noise_std > 0 else np.zeros_like(D.X)
    Dp = D.with_rows(D.X + noise)
    bb_seed, method_seed = (int(v) for v in rng.integers(0, 2**31 - 1, size=2))
    boxes = {}

    def box(name):
        if name not in boxes:
            if name == "lr":
                boxes[name] = train_logistic(D, D.labels, bb_seed)
            elif name == "ds":
                boxes[name] = train_decision_set_blackbox(D, D.labels, bb_seed)
            elif name == "multi_lr":
                boxes[name] = _multi_blackbox(D, D.labels, cfg.K, bb_seed, "linear")
            else:
                boxes[name] = _multi_blackbox(D, D.labels, cfg.K, bb_seed, "decision_set")
        return boxes[name]

    rows = []
    for method in cfg.methods:
        linear = "_linear" in method
        multi = method.endswith("_multi")
        bname = ("multi_" if multi else "") + ("lr" if linear else "ds")
        row = {"experiment": "stability", "method": method, "kind": "gaussian_noise",
               "alpha": float(cfg.noise_std), "replicate": rep, "black_box": bname,
               "dim": base.dim, "coef_mismatch": None, "rule_match": None, "feature_match": None,
               "coef_mismatch_to_bb": None, "error": None}
        try:
            B = box(bname)
            K = cfg.K if multi else None
            E = fit_method(method, D, B, cfg.method_config, method_seed, K)
            Ep = fit_method(method, Dp, B, cfg.method_config, method_seed, K)
            row["train_fidelity"] = fidelity(E, D, B)
            row["shift_fidelity"] = fidelity(Ep, Dp, B)
            row["pct_drop"] = None
            if linear:
                row["coef_mismatch"] = coefficient_mismatch(E, Ep)
                row["coef_mismatch_to_bb"] = coefficient_mismatch(E, B)
            else:
                row["rule_match"] = rule_match(E, Ep)
                row["feature_match"] = feature_match(E, Ep)
        except Exception as exc:
            log.warning("stability replicate %d method %s failed: %s", rep, method, exc)
            row.update(train_fidelity=None, shift_fidelity=None, pct_drop=None,
                       error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
    return rows


def run_stability(cfg: StabilityConfig) -> Report:
    """Explanations from D and from D + Gaussian noise, compared structurally.

    Black boxes are interpretable models fit to D's labels: logistic
    regression, a decision set, and K-subgroup versions of both.
    """
    seeds = _replicate_seeds(cfg.seed, cfg.replicates)
    rows: list[dict] = []
    if cfg.jobs > 1:
        with ProcessPoolExecutor(cfg.jobs) as pool:
            for part in pool.map(_stability_replicate, [cfg] * cfg.replicates, range(cfg.replicates), seeds):
                rows.extend(part)
    else:
        for rep, s in enumerate(seeds):
            rows.extend(_stability_replicate(cfg, rep, s))
    return Report("stability", rows, cfg.to_json(),
                  ("black_box", "dim", "coef_mismatch", "rule_match", "feature_match", "coef_mismatch_to_bb"))


# --------------------------------------------------------------------------
# two-feature failure case for non-robust explanations

@dataclass(frozen=True)
class IntroScenario:
    train: np.ndarray      # x1 == x2 exactly
    shifted: np.ndarray    # x1, x2 independent
    black_box: CoordinateThresholdBlackBox


def intro_scenario(seed: int, n_train: int = 2000, n_shift: int = 20000) -> IntroScenario:
    """Perfectly correlated training covariates, a black box that reads only
    the second one, and an independent-covariate evaluation sample."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n_train)
    return IntroScenario(np.column_stack([z, z]), rng.standard_normal((n_shift, 2)),
                         CoordinateThresholdBlackBox(2, 1))
