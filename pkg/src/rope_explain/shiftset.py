"""Shift polytope {d : ||d||_1 <= s0, ||d||_inf <= delta_max} and its tools.

Shifts live in standardized feature units. The inner maximization of the
linearized robust loss over the polytope has a greedy closed form (a
fractional knapsack with unit weights), implemented by ``worst_case_shift``.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

MEMBERSHIP_TOL = 1e-9
MAX_GRID_DIM = 4


class ShiftError(ValueError):
    """Bad shift-set parameters, dimension mismatch or non-finite input."""


class DegenerateShiftSetWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ShiftSet:
    s0: float
    delta_max: float
    dim: int

    def __post_init__(self):
        if not (np.isfinite(self.s0) and self.s0 >= 0):
            raise ShiftError(f"s0 must be finite and >= 0, got {self.s0}")
        if not (np.isfinite(self.delta_max) and self.delta_max >= 0):
            raise ShiftError(f"delta_max must be finite and >= 0, got {self.delta_max}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ShiftError(f"dim must be a positive integer, got {self.dim}")

    @property
    def is_trivial(self) -> bool:
        """True when the only admissible shift is the origin."""
        return self.s0 == 0 or self.delta_max == 0

    def zero(self) -> "Shift":
        return Shift(np.zeros(self.dim))


class Shift:
    """Immutable shift vector."""

    __slots__ = ("_delta",)

    def __init__(self, delta):
        arr = np.array(delta, dtype=float).reshape(-1)
        arr.flags.writeable = False
        self._delta = arr

    @property
    def delta(self) -> np.ndarray:
        return self._delta

    def __len__(self):
        return self._delta.shape[0]

    def __neg__(self):
        return Shift(-self._delta)

    def __eq__(self, other):
        return isinstance(other, Shift) and np.array_equal(self._delta, other._delta)

    def __hash__(self):
        return hash(self._delta.tobytes())

    def __repr__(self):
        return f"Shift({self._delta.tolist()})"


def _as_vector(d) -> np.ndarray:
    if isinstance(d, Shift):
        return d.delta
    return np.asarray(d, dtype=float).reshape(-1)


def contains(S: ShiftSet, d) -> bool:
    v = _as_vector(d)
    if v.shape[0] != S.dim:
        raise ShiftError(f"shift has length {v.shape[0]}, shift set has dim {S.dim}")
    if not np.all(np.isfinite(v)):
        return False
    return bool(np.abs(v).sum() <= S.s0 + MEMBERSHIP_TOL
                and np.abs(v).max(initial=0.0) <= S.delta_max + MEMBERSHIP_TOL)


def worst_case_shifts(G: np.ndarray, S: ShiftSet) -> np.ndarray:
    """Row-wise argmax of g . d over the polytope, for a batch of gradients.

    Coordinates are filled greedily by decreasing |g_i| (ties to the lower
    index), each receiving sign(g_i) * min(delta_max, remaining budget).
    Zero-gradient coordinates stay at 0.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if G.shape[1] != S.dim:
        raise ShiftError(f"gradient has length {G.shape[1]}, shift set has dim {S.dim}")
    if not np.all(np.isfinite(G)):
        raise ShiftError("gradient contains non-finite entries")
    out = np.zeros_like(G)
    if S.is_trivial:
        return out
    n = S.dim
    # amount granted to the j-th largest coordinate
    caps = np.clip(S.s0 - S.delta_max * np.arange(n), 0.0, S.delta_max)
    # stable sort on -|g| keeps lower index first among ties
    order = np.argsort(-np.abs(G), axis=1, kind="stable")
    rows = np.arange(G.shape[0])[:, None]
    g_sorted = G[rows, order]
    out[rows, order] = np.sign(g_sorted) * caps[None, :]
    return out


def worst_case_shift(g, S: ShiftSet) -> Shift:
    return Shift(worst_case_shifts(np.asarray(g, dtype=float).reshape(1, -1), S)[0])


def sample_shifts(S: ShiftSet, k: int, rng: np.random.Generator) -> list[Shift]:
    """Draw k shifts from extreme points of the polytope.

    Each draw picks a random support of size min(dim, floor(s0/delta_max)),
    puts +-delta_max on it with random signs, and spends any leftover L1
    budget on one more random coordinate.
    """
    if k < 0:
        raise ShiftError(f"k must be >= 0, got {k}")
    if S.delta_max == 0 and S.s0 > 0:
        warnings.warn("delta_max = 0: only the zero shift is representable",
                      DegenerateShiftSetWarning, stacklevel=2)
        return [S.zero() for _ in range(k)]
    if S.s0 == 0:
        return [S.zero() for _ in range(k)]
    # float division may overflow to inf for tiny delta_max; clamp before int()
    m = int(min(S.dim, np.floor(S.s0 / S.delta_max + MEMBERSHIP_TOL)))
    remainder = S.s0 - m * S.delta_max
    out = []
    for _ in range(k):
        perm = rng.permutation(S.dim)
        signs = rng.choice([-1.0, 1.0], size=S.dim)
        d = np.zeros(S.dim)
        d[perm[:m]] = signs[:m] * S.delta_max
        if remainder > MEMBERSHIP_TOL and m < S.dim:
            d[perm[m]] = signs[m] * remainder
        out.append(Shift(d))
    return out


def grid_shifts(S: ShiftSet, step: float = 0.05) -> np.ndarray:
    """All points of the regular grid (spacing ``step``, through 0) inside S."""
    if S.dim > MAX_GRID_DIM:
        raise ShiftError(f"grid audit limited to dim <= {MAX_GRID_DIM}, got {S.dim}")
    if step <= 0:
        raise ShiftError("grid step must be positive")
    kmax = int(np.floor(S.delta_max / step + MEMBERSHIP_TOL))
    axis = step * np.arange(-kmax, kmax + 1)
    pts = np.array(list(itertools.product(axis, repeat=S.dim)), dtype=float)
    keep = np.abs(pts).sum(axis=1) <= S.s0 + MEMBERSHIP_TOL
    return pts[keep]


def real_output(model, X: np.ndarray) -> np.ndarray:
    """Real-valued output in [0, 1]: the score if exposed, else the hard label."""
    X = np.atleast_2d(X)
    if getattr(model, "has_score", False):
        return np.asarray(model.score(X), dtype=float)
    return np.asarray(model.batch(X), dtype=float)


def _abs_loss(E, B) -> Callable[[np.ndarray], np.ndarray]:
    return lambda X: np.abs(real_output(E, X) - real_output(B, X))


def _rows(data) -> np.ndarray:
    return np.atleast_2d(np.asarray(getattr(data, "X", data), dtype=float))


def pointwise_grid_losses(E, B, data, S: ShiftSet, grid_step: float = 0.05,
                          extra: np.ndarray | None = None) -> np.ndarray:
    """Matrix L[g, i] = |E(x_i + d_g) - B(x_i + d_g)| over grid shifts d_g.

    ``extra`` rows are appended to the grid (used to make sure a particular
    shift is part of the audited set).
    """
    X = _rows(data)
    grid = grid_shifts(S, grid_step)
    if extra is not None:
        grid = np.vstack([grid, np.atleast_2d(extra)])
    loss = _abs_loss(E, B)
    shifted = (X[None, :, :] + grid[:, None, :]).reshape(-1, X.shape[1])
    return loss(shifted).reshape(grid.shape[0], X.shape[0])


def grid_robust_loss(E, B, data, S: ShiftSet, grid_step: float = 0.05,
                     extra: np.ndarray | None = None) -> float:
    """Empirical mean of the per-point worst-case loss over the gridded set."""
    L = pointwise_grid_losses(E, B, data, S, grid_step, extra)
    return float(L.max(axis=0).mean())


def surrogate_bound_audit(E, B, data, S: ShiftSet, grid_step: float = 0.05) -> tuple[float, float]:
    """(max over shifts of the mean loss, mean over points of the max loss).

    The first is the distributional objective on the shifted empirical
    distribution, the second the pointwise adversarial surrogate; the first
    never exceeds the second.
    """
    if S.dim > MAX_GRID_DIM:
        raise ShiftError(f"grid audit limited to dim <= {MAX_GRID_DIM}, got {S.dim}")
    L = pointwise_grid_losses(E, B, data, S, grid_step)
    lhs = float(L.mean(axis=1).max())
    rhs = float(L.max(axis=0).mean())
    return lhs, rhs


def marginal_dependence_audit(E, B, data, i: int, c: float, S: ShiftSet) -> float:
    """Mean |(E(x+c e_i) - E(x)) - (B(x+c e_i) - B(x))| over the data."""
    if not 0 <= i < S.dim:
        raise ShiftError(f"feature index {i} out of range for dim {S.dim}")
    if abs(c) > S.delta_max + MEMBERSHIP_TOL or abs(c) > S.s0 + MEMBERSHIP_TOL:
        raise ShiftError(f"|c|={abs(c)} exceeds the shift budget")
    X = _rows(data)
    Xc = X.copy()
    Xc[:, i] += c
    dE = real_output(E, Xc) - real_output(E, X)
    dB = real_output(B, Xc) - real_output(B, X)
    return float(np.mean(np.abs(dE - dB)))
