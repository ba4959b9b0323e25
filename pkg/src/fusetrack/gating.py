"""Velocity-derived arrival-time gate over candidate detections.

A Kalman velocity estimate is turned into a Gaussian over arrival time at a
downstream camera; candidates whose timestamps fall far outside it are
zeroed before any appearance comparison is made.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .appearance import AppearanceFeature, ranked_distances
from .kalman import StateEstimate

DEFAULT_TAU = 0.05
DEFAULT_V_MIN = 0.5
DEFAULT_SIGMA2_FLOOR = 4.0


class GateError(ValueError):
    pass


@dataclass(frozen=True)
class GateParams:
    """Arrival-time Gaussian ``N(mu, sigma2)`` and relative cutoff ``tau``.

    ``all_pass`` marks a gate that could not be bounded (velocity at or
    below ``v_min``); such a gate keeps every candidate.
    """

    mu: float
    sigma2: float
    tau: float = DEFAULT_TAU
    all_pass: bool = False

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise GateError(f"tau must lie in (0, 1], got {self.tau}")
        if not self.all_pass and not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise GateError(f"sigma2 must be finite and > 0, got {self.sigma2}")


@dataclass(frozen=True)
class GateFilter:
    weights: np.ndarray
    all_pass: bool = False

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.weights))

    def __len__(self) -> int:
        return self.weights.size


@dataclass(frozen=True)
class CandidateMeta:
    camera: str
    t: float
    ref: int
    feature: AppearanceFeature


@dataclass(frozen=True)
class CandidateMatrix:
    """Columns are candidate feature vectors; ``meta[j]`` describes column j."""

    features: np.ndarray
    meta: tuple[CandidateMeta, ...]

    def __post_init__(self):
        T = np.array(self.features, dtype=float)
        if T.ndim != 2:
            raise GateError(f"candidate matrix must be 2-D, got shape {T.shape}")
        if T.shape[1] != len(self.meta):
            raise GateError(f"{T.shape[1]} columns but {len(self.meta)} meta entries")
        T.setflags(write=False)
        object.__setattr__(self, "features", T)
        object.__setattr__(self, "meta", tuple(self.meta))

    @classmethod
    def from_meta(cls, meta: Sequence[CandidateMeta]) -> "CandidateMatrix":
        if not meta:
            return cls(np.zeros((0, 0)), ())
        return cls(np.column_stack([m.feature.vector() for m in meta]), tuple(meta))

    @property
    def n(self) -> int:
        return len(self.meta)

    @property
    def times(self) -> np.ndarray:
        return np.array([m.t for m in self.meta], dtype=float)


@dataclass(frozen=True)
class FilteredCandidates:
    matrix: np.ndarray
    survivors: tuple[int, ...]
    source: CandidateMatrix = field(repr=False)

    @property
    def no_candidates(self) -> bool:
        return not self.survivors


class GatedMatches(NamedTuple):
    ranked: list[int]
    distances: list[float]
    survivors: int
    comparisons: int

    @property
    def no_candidates(self) -> bool:
        return self.survivors == 0


def predict_arrival(est: StateEstimate, distance: float, v_min: float = DEFAULT_V_MIN,
                    tau: float = DEFAULT_TAU,
                    sigma2_floor: float = DEFAULT_SIGMA2_FLOOR) -> GateParams:
    """Arrival time at ``distance`` metres ahead, with first-order variance.

    ``mu = t + d / v`` and ``sigma_t = d / v**2 * sigma_v``, where ``v`` and
    ``sigma_v**2`` are the estimate's velocity mean and variance. A velocity
    at or below ``v_min`` yields an all-pass gate instead.
    """
    if not distance >= 0:
        raise GateError(f"distance must be >= 0, got {distance}")
    if sigma2_floor < 0:
        raise GateError(f"sigma2_floor must be >= 0, got {sigma2_floor}")
    v = est.velocity
    if not v > v_min:
        return GateParams(mu=est.t, sigma2=math.inf, tau=tau, all_pass=True)
    sigma_t = distance / (v * v) * math.sqrt(max(est.velocity_var, 0.0))
    sigma2 = sigma_t * sigma_t + sigma2_floor
    if sigma2 == 0.0:
        # zero distance with no floor: only an exact-time hit can pass
        sigma2 = math.ulp(1.0)
    return GateParams(mu=est.t + distance / v, sigma2=sigma2, tau=tau)


def build_filter(gp: GateParams, candidate_times: Sequence[float]) -> GateFilter:
    """Peak-normalized Gaussian weights, zeroed below ``gp.tau``."""
    t = np.asarray(candidate_times, dtype=float).reshape(-1)
    if gp.all_pass:
        return GateFilter(np.ones(t.size), all_pass=True)
    raw = np.exp(-((t - gp.mu) ** 2) / (2.0 * gp.sigma2))
    return GateFilter(np.where(raw >= gp.tau, raw, 0.0))


def apply_filter(f: GateFilter, t: CandidateMatrix) -> FilteredCandidates:
    """Scale each candidate column by its gate weight.

    Zero-weight columns drop out of the survivor set and are never compared.
    """
    if len(f) != t.n:
        raise GateError(f"filter length {len(f)} does not match {t.n} candidates")
    C = t.features * f.weights[np.newaxis, :] if t.n else t.features
    survivors = tuple(int(j) for j in np.flatnonzero(f.weights > 0))
    return FilteredCandidates(C, survivors, t)


def gated_top_k(query: AppearanceFeature, fc: FilteredCandidates, k: int,
                w_color: float = 0.5, metric: str = "intersection") -> GatedMatches:
    """Rank surviving candidates by appearance distance to ``query``.

    Ranking uses the referenced features, not the scaled columns, so gate
    weights decide survival only. ``comparisons`` counts the same-class
    survivors actually scored.
    """
    if k < 0:
        raise GateError(f"k must be >= 0, got {k}")
    feats = [m.feature for m in fc.source.meta]
    scored = ranked_distances(query, feats, fc.survivors, w_color, metric)
    top = scored[:k]
    return GatedMatches(ranked=[j for _, j in top], distances=[d for d, _ in top],
                        survivors=len(fc.survivors), comparisons=len(scored))


def full_pass(n: int) -> GateFilter:
    return GateFilter(np.ones(n), all_pass=True)


def gate_candidates(est: Optional[StateEstimate], distance: float, meta: Sequence[CandidateMeta],
                    tau: float = DEFAULT_TAU, v_min: float = DEFAULT_V_MIN,
                    sigma2_floor: float = DEFAULT_SIGMA2_FLOOR) -> tuple[GateParams, FilteredCandidates]:
    """Build and apply one camera's gate; no estimate means all-pass."""
    T = CandidateMatrix.from_meta(meta)
    if est is None:
        gp = GateParams(mu=math.nan, sigma2=math.inf, tau=tau, all_pass=True)
    else:
        gp = predict_arrival(est, distance, v_min, tau, sigma2_floor)
    return gp, apply_filter(build_filter(gp, T.times), T)
