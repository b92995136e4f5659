"""Clustered explanations: K-means subgroups, one robust explanation per
subgroup, inputs routed to the nearest centroid."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linexp import LinearExplanation, TrainConfig, train_robust_linear
from .ruleexp import DecisionSet, RuleTrainConfig, train_robust_dset
from .shiftset import ShiftSet

FORMAT_VERSION = 1
FAMILIES = ("linear", "decision_set")


@dataclass(frozen=True)
class KMeansResult:
    centers: np.ndarray
    assign: np.ndarray
    inertia: float
    history: tuple[float, ...]  # inertia after each Lloyd iteration


def _sq_dists(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _kmeanspp(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    N = X.shape[0]
    centers = [X[rng.integers(N)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = d2.sum()
        i = rng.integers(N) if total <= 0 else rng.choice(N, p=d2 / total)
        centers.append(X[i])
        d2 = np.minimum(d2, ((X - X[i]) ** 2).sum(axis=1))
    return np.array(centers)


def _lloyd(X, centers, max_iter=100) -> KMeansResult:
    K = centers.shape[0]
    history = []
    assign = None
    for _ in range(max_iter):
        D = _sq_dists(X, centers)
        new_assign = np.argmin(D, axis=1)
        # an empty cluster takes the point farthest from its center
        for k in range(K):
            if not np.any(new_assign == k):
                far = np.argmax(D[np.arange(len(X)), new_assign])
                new_assign[far] = k
        centers = np.array([X[new_assign == k].mean(axis=0) for k in range(K)])
        history.append(float(((X - centers[new_assign]) ** 2).sum()))
        if assign is not None and np.array_equal(assign, new_assign):
            break
        assign = new_assign
    return KMeansResult(centers, new_assign, history[-1], tuple(history))


def kmeans(X, K: int, seed: int, restarts: int = 10, max_iter: int = 100) -> KMeansResult:
    """k-means++ seeding, Lloyd iterations, best inertia over restarts."""
    X = np.atleast_2d(np.asarray(getattr(X, "X", X), dtype=float))
    if not 1 <= K <= X.shape[0]:
        raise ValueError(f"K={K} must be between 1 and the number of points {X.shape[0]}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        res = _lloyd(X, _kmeanspp(X, K, rng), max_iter)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


def bic_score(X: np.ndarray, res: KMeansResult) -> float:
    """BIC of the hard-assignment spherical Gaussian mixture (lower is better).

    -2 log L = N d ln(pooled variance) - 2 sum_k n_k ln(n_k / N) (constants
    dropped), with K (d + 1) free parameters.
    """
    N, d = X.shape
    K = res.centers.shape[0]
    var = res.inertia / (N * d)
    counts = np.bincount(res.assign, minlength=K)
    counts = counts[counts > 0]
    mixing = -2.0 * float(np.sum(counts * np.log(counts / N)))
    return N * d * np.log(var) + mixing + K * (d + 1) * np.log(N)


def select_k_bic(data, k_max: int, seed: int) -> int:
    X = np.atleast_2d(np.asarray(getattr(data, "X", data), dtype=float))
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    N = X.shape[0]
    best_k, best_bic = 1, None
    for K in range(1, min(k_max, N) + 1):
        res = kmeans(X, K, seed)
        if res.inertia <= 0:
            # every point sits on a centre; more clusters cannot help
            return K
        b = bic_score(X, res)
        if best_bic is None or b < best_bic:
            best_k, best_bic = K, b
    return best_k


@dataclass(frozen=True)
class ClusterEntry:
    representative: np.ndarray
    weight: float
    explanation: LinearExplanation | DecisionSet


@dataclass(frozen=True)
class ClusteredExplanation:
    entries: tuple[ClusterEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise ValueError("clustered explanation needs at least one entry")
        dims = {e.representative.shape[0] for e in self.entries}
        if len(dims) != 1:
            raise ValueError("representatives must share one dimension")
        total = sum(e.weight for e in self.entries)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {total}, not 1")

    @property
    def K(self) -> int:
        return len(self.entries)

    @property
    def representatives(self) -> np.ndarray:
        return np.array([e.representative for e in self.entries])

    @property
    def weights(self) -> np.ndarray:
        return np.array([e.weight for e in self.entries])

    def assign(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        # argmin returns the first minimum: ties go to the lower index
        return np.argmin(_sq_dists(X, self.representatives), axis=1)

    def predict_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        idx = self.assign(X)
        out = np.zeros(X.shape[0], dtype=int)
        for k, e in enumerate(self.entries):
            m = idx == k
            if m.any():
                out[m] = e.explanation.predict_batch(X[m])
        return out

    batch = predict_batch

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "type": "clustered",
            "K": self.K,
            "entries": [{"representative": e.representative.tolist(), "weight": e.weight,
                         "explanation": e.explanation.to_json()} for e in self.entries],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ClusteredExplanation":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported format_version {doc.get('format_version')!r}")
        entries = []
        for e in doc["entries"]:
            sub = e["explanation"]
            expl = (LinearExplanation.from_json(sub) if sub.get("type") == "linear"
                    else DecisionSet.from_json(sub))
            entries.append(ClusterEntry(np.asarray(e["representative"], dtype=float), float(e["weight"]), expl))
        return cls(tuple(entries))


def route(CE: ClusteredExplanation, x) -> tuple[int, int]:
    x = np.asarray(x, dtype=float)
    i = int(CE.assign(x[None, :])[0])
    return i, int(CE.entries[i].explanation.predict_batch(x[None, :])[0])


def train_multi(data, B, S: ShiftSet, K: int, family: str,
                cfg: TrainConfig | RuleTrainConfig, cluster_seed: int | None = None) -> ClusteredExplanation:
    """K-means on the data, then one robust explanation per cluster.

    Cluster i trains with a seed derived from ``cfg.seed`` and i, so results
    do not depend on the order clusters are processed in.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    X = np.atleast_2d(np.asarray(getattr(data, "X", data), dtype=float))
    res = kmeans(X, K, cfg.seed if cluster_seed is None else cluster_seed)
    seeds = np.random.SeedSequence(cfg.seed).spawn(K)
    names = getattr(data, "feature_names", None)
    entries = []
    for k in range(K):
        mask = res.assign == k
        sub = X[mask]
        sub_seed = int(seeds[k].generate_state(1)[0])
        if K == 1:
            sub_seed = cfg.seed
        sub_cfg = type(cfg)(**{**cfg.__dict__, "seed": sub_seed})
        sub_data = _Rows(sub, names)
        if family == "linear":
            expl = train_robust_linear(sub_data, B, S, sub_cfg)
        else:
            expl = train_robust_dset(sub_data, B, S, sub_cfg)
        entries.append(ClusterEntry(res.centers[k].copy(), float(mask.sum()) / X.shape[0], expl))
    # fractions of an integer partition; renormalise away float drift
    total = sum(e.weight for e in entries)
    entries = [ClusterEntry(e.representative, e.weight / total, e.explanation) for e in entries]
    return ClusteredExplanation(tuple(entries))


@dataclass(frozen=True)
class _Rows:
    X: np.ndarray
    feature_names: Sequence[str] | None
