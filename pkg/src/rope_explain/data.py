"""Datasets in standardized units, synthetic Gaussian generators, CSV I/O."""

from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

LABEL_COLUMN = "label"
GROUP_COLUMN = "group"
BETA_MARGIN = 1e-6


class DataFormatError(ValueError):
    pass


class ClampWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.mean) / self.std

    def invert(self, X: np.ndarray) -> np.ndarray:
        return X * self.std + self.mean

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> "Standardization":
        return cls(np.asarray(doc["mean"], dtype=float), np.asarray(doc["std"], dtype=float))


@dataclass(frozen=True)
class Dataset:
    """Rows stored standardized; raw values are ``standardization.invert(X)``."""

    X: np.ndarray
    feature_names: tuple[str, ...]
    standardization: Standardization
    labels: np.ndarray | None = None
    groups: np.ndarray | None = None

    def __post_init__(self):
        if self.X.ndim != 2:
            raise DataFormatError("dataset rows must form a 2-d matrix")
        if not np.all(np.isfinite(self.X)):
            raise DataFormatError("dataset contains non-finite entries")
        if len(self.feature_names) != self.X.shape[1]:
            raise DataFormatError("feature_names length does not match column count")

    @classmethod
    def from_raw(cls, raw, feature_names: Sequence[str] | None = None, labels=None,
                 groups=None, standardization: Standardization | None = None) -> "Dataset":
        raw = np.atleast_2d(np.asarray(raw, dtype=float))
        if raw.shape[0] == 0:
            raise DataFormatError("dataset is empty")
        if not np.all(np.isfinite(raw)):
            raise DataFormatError("dataset contains non-finite entries")
        names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(raw.shape[1])]
        if standardization is None:
            mean = raw.mean(axis=0)
            std = raw.std(axis=0)
            keep = std > 0
            if not keep.all():
                dropped = [n for n, k in zip(names, keep) if not k]
                warnings.warn(f"dropping zero-variance features: {dropped}", stacklevel=2)
                raw, mean, std = raw[:, keep], mean[keep], std[keep]
                names = [n for n, k in zip(names, keep) if k]
            standardization = Standardization(mean, std)
        X = standardization.apply(raw)
        return cls(X, tuple(names), standardization,
                   None if labels is None else np.asarray(labels),
                   None if groups is None else np.asarray(groups))

    @property
    def raw(self) -> np.ndarray:
        return self.standardization.invert(self.X)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def with_rows(self, X: np.ndarray, labels=None) -> "Dataset":
        """Same standardization and names, new standardized rows."""
        return replace(self, X=np.asarray(X, dtype=float), labels=labels, groups=None)

    def subset(self, mask) -> "Dataset":
        idx = np.asarray(mask)
        return replace(
            self, X=self.X[idx],
            labels=None if self.labels is None else self.labels[idx],
            groups=None if self.groups is None else self.groups[idx],
        )

    def restandardize_like(self, other: "Dataset") -> "Dataset":
        """Express this dataset's raw rows in ``other``'s standardized units."""
        return Dataset.from_raw(self.raw, other.feature_names, self.labels, self.groups,
                                standardization=other.standardization)


# --------------------------------------------------------------------------
# synthetic generator

@dataclass(frozen=True)
class SyntheticSpec:
    """Equicorrelated Gaussian covariates.

    ``sigma`` is the per-coordinate variance (diagonal of the covariance),
    off-diagonals are ``beta * sigma``; ``mu`` is broadcast to all coordinates.
    """

    dim: int
    beta: float = 0.0
    mu: float = 0.0
    sigma: float = 1.0
    n_samples: int = 5000
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.dim <= 10:
            raise ValueError(f"dim must be in [2, 10], got {self.dim}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")

    def to_json(self) -> dict:
        return {"dim": self.dim, "beta": self.beta, "mu": self.mu, "sigma": self.sigma,
                "n_samples": self.n_samples, "seed": self.seed}


def beta_range(dim: int) -> tuple[float, float]:
    """Closed interval of equicorrelations kept strictly inside the PSD range."""
    return -1.0 / (dim - 1) + BETA_MARGIN, 1.0 - BETA_MARGIN


def clamp_beta(beta: float, dim: int) -> float:
    lo, hi = beta_range(dim)
    if beta < lo or beta > hi:
        clamped = float(min(max(beta, lo), hi))
        warnings.warn(f"beta={beta} outside the valid range for dim={dim}; clamped to {clamped}",
                      ClampWarning, stacklevel=2)
        return clamped
    return float(beta)


def covariance(spec: SyntheticSpec) -> np.ndarray:
    beta = clamp_beta(spec.beta, spec.dim)
    cov = np.full((spec.dim, spec.dim), beta * spec.sigma)
    np.fill_diagonal(cov, spec.sigma)
    return cov


def sample_synthetic(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Raw samples x ~ N(mu, cov) and fair-coin labels, both from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    L = np.linalg.cholesky(covariance(spec))
    Z = rng.standard_normal((spec.n_samples, spec.dim))
    raw = spec.mu + Z @ L.T
    labels = rng.integers(0, 2, size=spec.n_samples)
    return raw, labels


def gen_synthetic(spec: SyntheticSpec, standardization: Standardization | None = None) -> Dataset:
    raw, labels = sample_synthetic(spec)
    return Dataset.from_raw(raw, labels=labels, standardization=standardization)


SHIFT_KINDS = ("correlation", "mean", "variance")


def shift_spec(spec: SyntheticSpec, kind: str, alpha: float) -> SyntheticSpec:
    if kind == "correlation":
        return replace(spec, beta=spec.beta + alpha)
    if kind == "mean":
        return replace(spec, beta=0.0, mu=spec.mu + alpha)
    if kind == "variance":
        return replace(spec, beta=0.0, sigma=spec.sigma + alpha)
    raise ValueError(f"unknown shift kind {kind!r}")


def random_base_spec(kind: str, rng: np.random.Generator, dim_range=(2, 10),
                     n_samples: int = 5000) -> SyntheticSpec:
    """Base distribution for one sweep replicate, per shift kind."""
    dim = int(rng.integers(dim_range[0], dim_range[1] + 1))
    seed = int(rng.integers(0, 2**31 - 1))
    if kind == "correlation":
        lo, hi = beta_range(dim)
        beta = float(rng.uniform(max(-1.0, lo), hi))
        return SyntheticSpec(dim, beta=beta, mu=0.0, sigma=1.0, n_samples=n_samples, seed=seed)
    if kind == "mean":
        return SyntheticSpec(dim, beta=0.0, mu=float(rng.uniform(-5, 5)), sigma=1.0,
                             n_samples=n_samples, seed=seed)
    if kind == "variance":
        return SyntheticSpec(dim, beta=0.0, mu=0.0, sigma=float(rng.uniform(1, 10)),
                             n_samples=n_samples, seed=seed)
    raise ValueError(f"unknown shift kind {kind!r}")


# --------------------------------------------------------------------------
# CSV

def format_float(v: float) -> str:
    return repr(float(v))


def write_csv(path_or_buf, raw: np.ndarray, feature_names: Sequence[str], labels=None,
              groups=None, config: dict | None = None) -> None:
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
    try:
        if config is not None:
            fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        header = list(feature_names)
        if groups is not None:
            header.append(GROUP_COLUMN)
        if labels is not None:
            header.append(LABEL_COLUMN)
        w.writerow(header)
        for i, row in enumerate(raw):
            out = [format_float(v) for v in row]
            if groups is not None:
                out.append(str(groups[i]))
            if labels is not None:
                out.append(str(int(labels[i])))
            w.writerow(out)
    finally:
        if own:
            fh.close()


def read_csv(path) -> tuple[np.ndarray, list[str], np.ndarray | None, np.ndarray | None]:
    """Returns (raw rows, feature names, labels or None, groups or None)."""
    with open(path, newline="", encoding="utf-8") as fh:
        text = "".join(line for line in fh if not line.startswith("#"))
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DataFormatError(f"{path}: empty CSV") from None
    header = [h.strip() for h in header]
    label_idx = header.index(LABEL_COLUMN) if LABEL_COLUMN in header else None
    group_idx = header.index(GROUP_COLUMN) if GROUP_COLUMN in header else None
    feat_idx = [i for i in range(len(header)) if i not in (label_idx, group_idx)]
    if not feat_idx:
        raise DataFormatError(f"{path}: no feature columns")
    rows, labels, groups = [], [], []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(header):
            raise DataFormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
        try:
            rows.append([float(rec[i]) for i in feat_idx])
            if label_idx is not None:
                labels.append(int(float(rec[label_idx])))
        except ValueError as exc:
            raise DataFormatError(f"{path}:{lineno}: {exc}") from None
        if group_idx is not None:
            groups.append(rec[group_idx].strip())
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    raw = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(raw)):
        raise DataFormatError(f"{path}: non-finite values")
    return (raw, [header[i] for i in feat_idx],
            np.asarray(labels) if label_idx is not None else None,
            np.asarray(groups) if group_idx is not None else None)
