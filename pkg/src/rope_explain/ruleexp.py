"""Robust decision sets: rule mining, the coverage/disagreement objective,
and approximate local search for non-monotone submodular maximization
under a cardinality constraint.

Disagreement is robust: a rule (s, c) is charged for every training point x
with s(x) true such that B(x + d) != c for some probe shift d (the zero shift
always included). The rule condition is checked at the unperturbed x only,
which keeps disagreement modular in the rule set.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .shiftset import ShiftSet, sample_shifts

FORMAT_VERSION = 1
OPS = ("LE", "GT", "EQ")
_OP_SYMBOL = {"LE": "<=", "GT": ">", "EQ": "=="}
VALUE_TOL = 1e-9


class EmptyUniverseError(ValueError):
    """No candidate rule survived pruning; lower min_support."""


@dataclass(frozen=True, order=True)
class Predicate:
    feature: int
    op: str
    value: float

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"unknown operator {self.op!r}")
        if self.feature < 0:
            raise ValueError("feature index must be nonnegative")
        object.__setattr__(self, "value", float(self.value))

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        col = np.atleast_2d(X)[:, self.feature]
        if self.op == "LE":
            return col <= self.value
        if self.op == "GT":
            return col > self.value
        return np.abs(col - self.value) <= VALUE_TOL

    def render(self, names: Sequence[str] | None = None) -> str:
        name = names[self.feature] if names else f"x{self.feature}"
        return f"{name} {_OP_SYMBOL[self.op]} {self.value:g}"

    def to_json(self) -> dict:
        return {"feature": self.feature, "op": self.op, "value": self.value}


@dataclass(frozen=True)
class Rule:
    condition: tuple[Predicate, ...]
    label: int
    support: int = 0
    precision: float = 0.0

    def __post_init__(self):
        if not self.condition:
            raise ValueError("rule condition must be nonempty")
        object.__setattr__(self, "condition", tuple(self.condition))

    def covers(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        out = np.ones(X.shape[0], dtype=bool)
        for p in self.condition:
            out &= p.evaluate(X)
        return out

    @property
    def features(self) -> frozenset[int]:
        return frozenset(p.feature for p in self.condition)

    def render(self, names: Sequence[str] | None = None) -> str:
        return "IF " + " AND ".join(p.render(names) for p in self.condition) + f" THEN {self.label}"


@dataclass(frozen=True)
class DecisionSet:
    """Unordered rules; among fired rules the highest training precision wins
    (ties to the lower index); uncovered inputs get ``default_label``."""

    rules: tuple[Rule, ...]
    default_label: int
    alpha: int | None = None
    feature_names: tuple[str, ...] = ()

    has_score = False

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        if self.alpha is not None and len(self.rules) > self.alpha:
            raise ValueError(f"{len(self.rules)} rules exceed the cardinality cap {self.alpha}")

    @property
    def dim(self) -> int | None:
        if self.feature_names:
            return len(self.feature_names)
        return max((p.feature for r in self.rules for p in r.condition), default=-1) + 1

    def __len__(self):
        return len(self.rules)

    def predict_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(X.shape[0], self.default_label, dtype=int)
        done = np.zeros(X.shape[0], dtype=bool)
        order = sorted(range(len(self.rules)), key=lambda i: (-self.rules[i].precision, i))
        for i in order:
            hit = self.rules[i].covers(X) & ~done
            out[hit] = self.rules[i].label
            done |= hit
        return out

    batch = predict_batch

    def predict(self, x) -> int:
        return int(self.predict_batch(np.asarray(x, dtype=float)[None, :])[0])

    @property
    def features(self) -> frozenset[int]:
        return frozenset().union(*(r.features for r in self.rules)) if self.rules else frozenset()

    def render(self) -> str:
        names = self.feature_names or None
        lines = [r.render(names) for r in self.rules]
        lines.append(f"ELSE {self.default_label}")
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "type": "decision_set",
            "default_label": self.default_label,
            "alpha": self.alpha,
            "feature_names": list(self.feature_names),
            "rules": [{"predicates": [p.to_json() for p in r.condition],
                       "label": r.label, "precision": r.precision, "support": r.support}
                      for r in self.rules],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DecisionSet":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported format_version {doc.get('format_version')!r}")
        rules = tuple(
            Rule(tuple(Predicate(int(p["feature"]), p["op"], p["value"]) for p in r["predicates"]),
                 int(r["label"]), int(r.get("support", 0)), float(r.get("precision", 0.0)))
            for r in doc["rules"])
        return cls(rules, int(doc["default_label"]), doc.get("alpha"),
                   tuple(doc.get("feature_names", ())))

    def dumps(self) -> str:
        return json.dumps(self.to_json())


# --------------------------------------------------------------------------
# mining

def _feature_predicates(col: np.ndarray, j: int, quantiles: int) -> list[Predicate]:
    values = np.unique(col)
    if values.size <= 2:
        return [Predicate(j, "EQ", v) for v in values]
    qs = np.arange(1, quantiles + 1) / (quantiles + 1)
    cuts = np.unique(np.quantile(col, qs))
    preds = []
    for v in cuts:
        preds.append(Predicate(j, "LE", v))
        preds.append(Predicate(j, "GT", v))
    return preds


def _compatible(p: Predicate, q: Predicate) -> bool:
    if p.feature != q.feature:
        return True
    # same feature: only a proper interval a < x <= b
    lo, hi = (p, q) if p.op == "GT" else (q, p)
    return lo.op == "GT" and hi.op == "LE" and lo.value < hi.value


def _sort_key(r: Rule):
    return (tuple((p.feature, p.value, OPS.index(p.op)) for p in r.condition), r.label)


def mine_candidate_rules(data, bb_labels, max_depth: int = 2, quantiles: int = 4,
                         min_support: float = 0.01, labels: Iterable[int] | None = None) -> list[Rule]:
    """Quantile-threshold conjunctions up to ``max_depth``, paired with each label.

    Conditions with identical coverage on the data are kept once (the first in
    sort order). Support and precision are measured against ``bb_labels``.
    """
    X = np.atleast_2d(np.asarray(getattr(data, "X", data), dtype=float))
    y = np.asarray(bb_labels)
    N, n = X.shape
    if N == 0:
        raise ValueError("cannot mine rules on empty data")
    label_set = sorted(set(y.tolist()) if labels is None else set(labels))
    preds = [p for j in range(n) for p in _feature_predicates(X[:, j], j, quantiles)]
    masks = {p: p.evaluate(X) for p in preds}
    conditions: list[tuple[Predicate, ...]] = [(p,) for p in preds]
    for depth in range(2, max_depth + 1):
        for combo in itertools.combinations(preds, depth):
            if all(_compatible(a, b) for a, b in itertools.combinations(combo, 2)):
                conditions.append(tuple(sorted(combo, key=lambda p: (p.feature, p.value, OPS.index(p.op)))))
    min_count = min_support * N
    seen: set[bytes] = set()
    rules = []
    for cond in sorted(conditions, key=lambda c: tuple((p.feature, p.value, OPS.index(p.op)) for p in c)):
        m = masks[cond[0]].copy()
        for p in cond[1:]:
            m &= masks[p]
        support = int(m.sum())
        if support == 0 or support < min_count - 1e-12:
            continue
        sig = np.packbits(m).tobytes()
        if sig in seen:
            continue
        seen.add(sig)
        for c in label_set:
            rules.append(Rule(cond, int(c), support, float(np.mean(y[m] == c))))
    if not rules:
        raise EmptyUniverseError(f"no candidate rule reaches min_support={min_support}")
    rules.sort(key=_sort_key)
    return rules


# --------------------------------------------------------------------------
# objective

@dataclass(frozen=True)
class RuleObjectiveConfig:
    alpha: int
    lam: float = 5.0
    C: float | None = None
    shifts: tuple = ()
    eps_ls: float = 0.1

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.eps_ls <= 0:
            raise ValueError("eps_ls must be positive")
        if self.C is not None and self.C < 0:
            raise ValueError("C must be nonnegative")


def with_zero_shift(shifts: Sequence, dim: int) -> list[np.ndarray]:
    """Shift vectors with the origin first (added when missing)."""
    vecs = [np.asarray(getattr(s, "delta", s), dtype=float).reshape(-1) for s in shifts]
    if not any(not v.any() for v in vecs):
        vecs.insert(0, np.zeros(dim))
    return vecs


def shifted_labels(B, X: np.ndarray, shifts: Sequence) -> np.ndarray:
    """(num_shifts, N) black-box labels at x + d for each shift (origin included)."""
    vecs = with_zero_shift(shifts, X.shape[1])
    Xs = np.concatenate([X + v for v in vecs], axis=0)
    return np.asarray(B.batch(Xs)).reshape(len(vecs), X.shape[0])


class RuleProblem:
    """Precomputed coverage and robust-error counts for a rule universe.

    ``label_matrix[j, i]`` is the black-box label at x_i + d_j.
    """

    def __init__(self, universe: Sequence[Rule], X: np.ndarray, label_matrix: np.ndarray,
                 lam: float = 5.0, C: float | None = None):
        self.universe = list(universe)
        X = np.atleast_2d(X)
        self.N = X.shape[0]
        self.lam = float(lam)
        self.cover = np.array([r.covers(X) for r in self.universe], dtype=bool).reshape(len(self.universe), self.N)
        label_matrix = np.atleast_2d(label_matrix)
        wrong = {c: np.any(label_matrix != c, axis=0) for c in {r.label for r in self.universe}}
        self.disagree = np.array([int(np.sum(self.cover[k] & wrong[r.label]))
                                  for k, r in enumerate(self.universe)], dtype=np.int64)
        self.C = float(len(self.universe) * self.N) if C is None else float(C)

    @classmethod
    def build(cls, universe, data, B, shifts, lam=5.0, C=None) -> "RuleProblem":
        X = np.atleast_2d(np.asarray(getattr(data, "X", data), dtype=float))
        return cls(universe, X, shifted_labels(B, X, shifts), lam, C)

    def disagree_count(self, subset: Iterable[int]) -> int:
        idx = list(subset)
        return int(self.disagree[idx].sum()) if idx else 0

    def cover_count(self, subset: Iterable[int]) -> int:
        idx = list(subset)
        return int(np.any(self.cover[idx], axis=0).sum()) if idx else 0

    def value(self, subset: Iterable[int]) -> float:
        idx = list(subset)
        return self.C - self.disagree_count(idx) + self.lam * self.cover_count(idx)


def _rule_list(E) -> list[Rule]:
    return list(E.rules) if isinstance(E, DecisionSet) else list(E)


def disagree(E, data, B, shifts: Sequence) -> int:
    rules = _rule_list(E)
    if not rules:
        return 0
    return RuleProblem.build(rules, data, B, shifts).disagree_count(range(len(rules)))


def cover(E, data) -> int:
    rules = _rule_list(E)
    if not rules:
        return 0
    X = np.atleast_2d(np.asarray(getattr(data, "X", data), dtype=float))
    return int(np.any([r.covers(X) for r in rules], axis=0).sum())


def objective(E, data, B, cfg: RuleObjectiveConfig, universe_size: int | None = None) -> float:
    """C - disagree(E) + lam * cover(E), with counts. Sets larger than alpha are rejected.

    C is ``cfg.C`` or, when unset, ``universe_size * N``.
    """
    rules = _rule_list(E)
    if len(rules) > cfg.alpha:
        raise ValueError(f"{len(rules)} rules exceed the cardinality cap {cfg.alpha}")
    N = np.atleast_2d(np.asarray(getattr(data, "X", data))).shape[0]
    if cfg.C is not None:
        C = cfg.C
    elif universe_size is not None:
        C = float(universe_size * N)
    else:
        raise ValueError("objective needs cfg.C or universe_size")
    return C - disagree(rules, data, B, cfg.shifts) + cfg.lam * cover(rules, data)


# --------------------------------------------------------------------------
# optimization

def _search(P: RuleProblem, allowed: np.ndarray, alpha: int, eps: float,
            priority: np.ndarray) -> list[int]:
    R = len(P.universe)
    if not allowed.any():
        return []
    factor = 1.0 + eps / R ** 2
    lam, C = P.lam, P.C
    cand = np.nonzero(allowed)[0]

    def best_of(values: np.ndarray, keys: np.ndarray):
        top = values.max()
        ties = np.nonzero(values == top)[0]
        j = ties[np.argmin(keys[ties])]
        return top, j

    single = C - P.disagree[cand] + lam * P.cover[cand].sum(axis=1)
    v, j = best_of(single, priority[cand])
    current = [int(cand[j])] if v > C else []

    while True:
        f_cur = P.value(current)
        moves: list[tuple[float, int, list[int]]] = []
        in_cur = np.zeros(R, dtype=bool)
        in_cur[current] = True
        addable = cand[~in_cur[cand]]
        base_dis = P.disagree_count(current)
        # deletions and swaps
        for pos, e in enumerate(current):
            rest = current[:pos] + current[pos + 1:]
            rest_union = np.any(P.cover[rest], axis=0) if rest else np.zeros(P.N, dtype=bool)
            dis_rest = base_dis - int(P.disagree[e])
            moves.append((C - dis_rest + lam * int(rest_union.sum()), -1 - pos, rest))
            if addable.size:
                vals = C - (dis_rest + P.disagree[addable]) + lam * (P.cover[addable] | rest_union).sum(axis=1)
                v, j = best_of(vals, priority[addable])
                moves.append((float(v), int(priority[addable[j]]), rest + [int(addable[j])]))
        if len(current) < alpha and addable.size:
            union = np.any(P.cover[current], axis=0) if current else np.zeros(P.N, dtype=bool)
            vals = C - (base_dis + P.disagree[addable]) + lam * (P.cover[addable] | union).sum(axis=1)
            v, j = best_of(vals, priority[addable])
            moves.append((float(v), int(priority[addable[j]]), current + [int(addable[j])]))
        if not moves:
            break
        best = max(moves, key=lambda m: (m[0], -m[1]))
        if best[0] > f_cur and best[0] >= factor * f_cur:
            current = best[2]
        else:
            break
    return sorted(current)


def default_label_of(bb_labels) -> int:
    vals, counts = np.unique(np.asarray(bb_labels), return_counts=True)
    return int(vals[np.argmax(counts)])


def local_search_select(P: RuleProblem, alpha: int, eps_ls: float = 0.1, seed: int = 0) -> list[int]:
    """Indices chosen by two rounds of approximate local search.

    Round one starts from the best singleton and applies add/delete/swap moves
    while the objective grows by at least a factor (1 + eps/|U|^2). Round two
    repeats on the universe minus round one's set; the better set is returned.
    """
    R = len(P.universe)
    if R == 0:
        return []
    priority = np.random.default_rng(seed).permutation(R)
    allowed = np.ones(R, dtype=bool)
    first = _search(P, allowed, alpha, eps_ls, priority)
    allowed[first] = False
    second = _search(P, allowed, alpha, eps_ls, priority)
    return first if P.value(first) >= P.value(second) else second


def brute_force_select(P: RuleProblem, alpha: int) -> list[int]:
    """Exact argmax over subsets of size <= alpha; ties to the lexicographically smallest."""
    R = len(P.universe)
    if R > 15:
        raise ValueError(f"brute force limited to 15 rules, got {R}")
    best, best_val = (), P.value([])
    for size in range(1, min(alpha, R) + 1):
        for combo in itertools.combinations(range(R), size):
            v = P.value(combo)
            if v > best_val or (v == best_val and combo < best):
                best, best_val = combo, v
    return list(best)


def _to_decision_set(P: RuleProblem, idx, data, bb_labels, alpha) -> DecisionSet:
    names = tuple(getattr(data, "feature_names", ()) or ())
    return DecisionSet(tuple(P.universe[i] for i in idx), default_label_of(bb_labels), alpha, names)


def local_search_optimize(universe, data, B, cfg: RuleObjectiveConfig, seed: int = 0) -> DecisionSet:
    if not universe:
        raise ValueError("universe is empty")
    X = np.atleast_2d(np.asarray(getattr(data, "X", data), dtype=float))
    lm = shifted_labels(B, X, cfg.shifts)
    P = RuleProblem(universe, X, lm, cfg.lam, cfg.C)
    return _to_decision_set(P, local_search_select(P, cfg.alpha, cfg.eps_ls, seed), data, lm[0], cfg.alpha)


def brute_force_optimize(universe, data, B, cfg: RuleObjectiveConfig) -> DecisionSet:
    X = np.atleast_2d(np.asarray(getattr(data, "X", data), dtype=float))
    lm = shifted_labels(B, X, cfg.shifts)
    if not universe:
        return DecisionSet((), default_label_of(lm[0]), cfg.alpha,
                           tuple(getattr(data, "feature_names", ()) or ()))
    P = RuleProblem(universe, X, lm, cfg.lam, cfg.C)
    return _to_decision_set(P, brute_force_select(P, cfg.alpha), data, lm[0], cfg.alpha)


# --------------------------------------------------------------------------
# end to end

@dataclass(frozen=True)
class RuleTrainConfig:
    seed: int
    alpha: int = 5
    lam: float = 5.0
    k_shifts: int = 10
    eps_ls: float = 0.1
    max_depth: int = 2
    quantiles: int = 4
    min_support: float = 0.01

    def to_json(self) -> dict:
        return {"seed": self.seed, "alpha": self.alpha, "lam": self.lam, "k_shifts": self.k_shifts,
                "eps_ls": self.eps_ls, "max_depth": self.max_depth, "quantiles": self.quantiles,
                "min_support": self.min_support}


def train_robust_dset(data, B, S: ShiftSet, cfg: RuleTrainConfig) -> DecisionSet:
    """Mine candidates on the data, probe k sampled shifts plus the origin,
    and optimize the robust objective by local search."""
    X = np.atleast_2d(np.asarray(getattr(data, "X", data), dtype=float))
    rng = np.random.default_rng(cfg.seed)
    shifts = sample_shifts(S, cfg.k_shifts, rng) if not S.is_trivial else []
    lm = shifted_labels(B, X, shifts)
    universe = mine_candidate_rules(X, lm[0], cfg.max_depth, cfg.quantiles, cfg.min_support)
    P = RuleProblem(universe, X, lm, cfg.lam)
    idx = local_search_select(P, cfg.alpha, cfg.eps_ls, cfg.seed)
    names = tuple(getattr(data, "feature_names", ()) or ()) or tuple(f"x{i}" for i in range(X.shape[1]))
    return DecisionSet(tuple(P.universe[i] for i in idx), default_label_of(lm[0]), cfg.alpha, names)
