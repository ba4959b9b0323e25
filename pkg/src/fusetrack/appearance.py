"""HSV colour histograms and class-restricted appearance retrieval."""
from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

VEHICLE_CLASSES = ("car", "truck", "bus", "motor")


class AppearanceError(ValueError):
    pass


class EmptyRegionError(AppearanceError):
    """The region of interest holds no pixels, so no feature can be extracted."""


@dataclass(frozen=True)
class HistogramConfig:
    h_bins: int = 16
    s_bins: int = 4
    v_bins: int = 4

    def __post_init__(self):
        for name in ("h_bins", "s_bins", "v_bins"):
            n = getattr(self, name)
            if not isinstance(n, (int, np.integer)) or n < 1:
                raise AppearanceError(f"{name} must be a positive integer, got {n!r}")
        if self.size > 65536:
            raise AppearanceError(f"histogram size {self.size} exceeds 65536")

    @property
    def size(self) -> int:
        return self.h_bins * self.s_bins * self.v_bins

    def bin_index(self, h: float, s: float, v: float) -> int:
        hi = min(int(h / 360.0 * self.h_bins), self.h_bins - 1)
        si = min(int(s * self.s_bins), self.s_bins - 1)
        vi = min(int(v * self.v_bins), self.v_bins - 1)
        return (hi * self.s_bins + si) * self.v_bins + vi


@dataclass(frozen=True)
class ColorHistogram:
    weights: np.ndarray
    config: HistogramConfig = field(default_factory=HistogramConfig)
    empty: bool = False

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size != self.config.size:
            raise AppearanceError(f"histogram has {w.size} bins, config expects {self.config.size}")
        if (w < 0).any() or not np.isfinite(w).all():
            raise AppearanceError("histogram weights must be finite and non-negative")
        if self.empty:
            if w.any():
                raise AppearanceError("the empty histogram must be all zeros")
        elif abs(w.sum() - 1.0) > 1e-9:
            raise AppearanceError(f"histogram weights sum to {w.sum()!r}, expected 1")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def empty_for(cls, config: HistogramConfig) -> "ColorHistogram":
        return cls(np.zeros(config.size), config, empty=True)


@dataclass(frozen=True)
class PixelImage:
    """Uncompressed RGB raster, ``pixels[row, col] = (r, g, b)``.

    ``roi`` is ``(x0, y0, x1, y1)`` with exclusive upper bounds.
    """

    pixels: np.ndarray
    roi: Optional[tuple[int, int, int, int]] = None

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] * px.shape[1] < 1:
            raise AppearanceError(f"pixels must have shape (height, width, 3), got {px.shape}")
        if not np.issubdtype(px.dtype, np.integer) or px.min() < 0 or px.max() > 255:
            raise AppearanceError("pixel channels must be integers in 0..255")
        if self.roi is not None:
            x0, y0, x1, y1 = self.roi
            if not (0 <= x0 <= x1 <= px.shape[1] and 0 <= y0 <= y1 <= px.shape[0]):
                raise AppearanceError(f"region {self.roi} outside a {px.shape[1]}x{px.shape[0]} image")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def region(self) -> np.ndarray:
        if self.roi is None:
            return self.pixels
        x0, y0, x1, y1 = self.roi
        return self.pixels[y0:y1, x0:x1]


@dataclass(frozen=True)
class AppearanceFeature:
    cls: str
    shape: np.ndarray
    histogram: ColorHistogram

    def __post_init__(self):
        if self.cls not in VEHICLE_CLASSES:
            raise AppearanceError(f"unknown vehicle class {self.cls!r}")
        s = np.array(self.shape, dtype=float).reshape(-1)
        if not np.isfinite(s).all():
            raise AppearanceError("shape descriptor must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "shape", s)

    def vector(self) -> np.ndarray:
        """Flat feature vector (shape descriptor then histogram)."""
        return np.concatenate([self.shape, self.histogram.weights])


def rgb_to_hsv(r: int, g: int, b: int) -> tuple[float, float, float]:
    """Hexcone RGB -> HSV with hue in degrees, ``[0, 360)``; hue is 0 for greys."""
    h, s, v = colorsys.rgb_to_hsv(r / 255.0, g / 255.0, b / 255.0)
    return h * 360.0, s, v


def _rgb_to_hsv_array(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rgb = rgb.reshape(-1, 3).astype(float) / 255.0
    r, g, b = rgb[:, 0], rgb[:, 1], rgb[:, 2]
    maxc = rgb.max(axis=1)
    minc = rgb.min(axis=1)
    span = maxc - minc
    v = maxc
    s = np.divide(span, maxc, out=np.zeros_like(maxc), where=maxc > 0)
    safe = np.where(span > 0, span, 1.0)
    rc, gc, bc = (maxc - r) / safe, (maxc - g) / safe, (maxc - b) / safe
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(span > 0, (h / 6.0) % 1.0, 0.0) * 360.0
    return h, s, v


def histogram_from_hsv(h: np.ndarray, s: np.ndarray, v: np.ndarray,
                       cfg: HistogramConfig) -> ColorHistogram:
    """Quantize HSV samples (hue in degrees) into a normalized histogram."""
    h = np.asarray(h, dtype=float)
    n = h.size
    if n == 0:
        raise EmptyRegionError("no pixels to histogram")
    hi = np.minimum((h / 360.0 * cfg.h_bins).astype(np.int64), cfg.h_bins - 1)
    si = np.minimum((np.asarray(s) * cfg.s_bins).astype(np.int64), cfg.s_bins - 1)
    vi = np.minimum((np.asarray(v) * cfg.v_bins).astype(np.int64), cfg.v_bins - 1)
    idx = (hi * cfg.s_bins + si) * cfg.v_bins + vi
    counts = np.bincount(idx, minlength=cfg.size)
    return ColorHistogram(counts / n, cfg)


def compute_histogram(img: PixelImage, cfg: HistogramConfig = HistogramConfig()) -> ColorHistogram:
    region = img.region()
    if region.size == 0:
        raise EmptyRegionError(f"region of interest {img.roi} is empty")
    return histogram_from_hsv(*_rgb_to_hsv_array(region), cfg)


def similarity(a: ColorHistogram, b: ColorHistogram, metric: str = "intersection") -> float:
    """Histogram similarity in ``[0, 1]``.

    ``intersection`` is ``sum(min(a_i, b_i))``; ``cosine`` is the cosine of
    the angle between weight vectors. Empty histograms score 0 against
    anything.
    """
    if a.config != b.config:
        raise AppearanceError(f"histogram configs differ: {a.config} vs {b.config}")
    if a.empty or b.empty:
        return 0.0
    if metric not in ("intersection", "cosine"):
        raise AppearanceError(f"unknown similarity metric {metric!r}")
    # normalized counts may sum to 1 - ulp
    if np.array_equal(a.weights, b.weights):
        return 1.0
    if metric == "intersection":
        return float(min(1.0, np.minimum(a.weights, b.weights).sum()))
    else:
        denom = float(np.linalg.norm(a.weights) * np.linalg.norm(b.weights))
        return float(min(1.0, a.weights @ b.weights / denom))


def shape_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance scaled by ``sqrt(|a|**2 + |b|**2)``, capped at 1.

    Unrelated random descriptors land near 1, identical ones at 0.
    """
    if a.shape != b.shape:
        raise AppearanceError(f"shape descriptor lengths differ: {a.size} vs {b.size}")
    denom = math.sqrt(float(a @ a) + float(b @ b))
    if denom == 0.0:
        return 0.0
    return min(1.0, float(np.linalg.norm(a - b)) / denom)


def feature_distance(a: AppearanceFeature, b: AppearanceFeature, w_color: float = 0.5,
                     metric: str = "intersection") -> float:
    """Convex blend of colour dissimilarity and shape distance, in ``[0, 1]``.

    Raises:
        AppearanceError: the features belong to different vehicle classes.
    """
    if not 0.0 <= w_color <= 1.0:
        raise AppearanceError(f"w_color must lie in [0, 1], got {w_color}")
    if a.cls != b.cls:
        raise AppearanceError(f"cannot compare a {a.cls} with a {b.cls}")
    color = 1.0 - similarity(a.histogram, b.histogram, metric)
    return w_color * color + (1.0 - w_color) * shape_distance(a.shape, b.shape)


def ranked_distances(query: AppearanceFeature, candidates: Sequence[AppearanceFeature],
                     indices: Sequence[int], w_color: float = 0.5,
                     metric: str = "intersection") -> list[tuple[float, int]]:
    """``(distance, index)`` pairs for same-class candidates, best first."""
    scored = [(feature_distance(query, candidates[i], w_color, metric), i)
              for i in indices if candidates[i].cls == query.cls]
    scored.sort()
    return scored


def top_k(query: AppearanceFeature, candidates: Sequence[AppearanceFeature], k: int,
          w_color: float = 0.5, metric: str = "intersection") -> list[int]:
    """Indices of the ``k`` same-class candidates closest to ``query``.

    Ties on distance go to the lower candidate index.
    """
    if k < 0:
        raise AppearanceError(f"k must be >= 0, got {k}")
    if k == 0:
        return []
    ranked = ranked_distances(query, candidates, range(len(candidates)), w_color, metric)
    return [i for _, i in ranked[:k]]


def wrap_hue(h: np.ndarray) -> np.ndarray:
    return np.mod(h, 360.0)
