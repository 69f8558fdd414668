"""Local binary pattern codes, rotation-invariant mapping and histograms.

Neighbour ``p`` of ``P`` sits at angle ``2*pi*p/P`` on a circle of radius
``R``: neighbour 0 due east, counting counterclockwise, i.e. at image
position ``(x + R cos a, y - R sin a)``.  Off-grid samples are bilinearly
interpolated.  The sign test is evaluated on interpolated *differences*
``sum_i w_i (g_i - g_c)`` whose terms are summed in sorted order, which
makes ties exact on flat patches and keeps codes bit-identical under
90-degree image rotations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import DimensionError, EmptyDataError

MAX_P = 16


@dataclass(frozen=True)
class LbpConfig:
    P: int = 8
    R: float = 1.0
    rotation_invariant: bool = True

    def __post_init__(self):
        if not 4 <= self.P <= MAX_P:
            raise ValueError(f"P must lie in [4, {MAX_P}], got {self.P}")
        if not self.R > 0:
            raise ValueError(f"R must be positive, got {self.R}")

    @property
    def border(self) -> int:
        return int(math.ceil(self.R))

    @property
    def n_bins(self) -> int:
        return len(bin_values(self.P, self.rotation_invariant))

    def tag(self) -> str:
        return f"P{self.P}R{self.R:g}{'ri' if self.rotation_invariant else ''}"


@dataclass(frozen=True)
class CodeField:
    codes: np.ndarray  # (H, W) int64, 0 where invalid
    valid: np.ndarray  # (H, W) bool
    config: LbpConfig

    @property
    def shape(self):
        return self.codes.shape


def _axis_taps(d: float) -> tuple[tuple[int, float], ...]:
    """Integer offsets and weights for linear interpolation at offset ``d``.

    Weights depend only on ``|d|`` so mirrored offsets get identical floats.
    """
    mag = abs(d)
    base = math.floor(mag)
    frac = mag - base
    sign = 1 if d >= 0 else -1
    if frac == 0.0:
        return ((sign * base, 1.0),)
    return ((sign * base, 1.0 - frac), (sign * (base + 1), frac))


@lru_cache(maxsize=None)
def neighbour_taps(P: int, R: float) -> tuple[tuple[tuple[int, int, float], ...], ...]:
    """Per neighbour, the ``(dx, dy, weight)`` bilinear taps."""
    taps = []
    for p in range(P):
        angle = 2.0 * math.pi * p / P
        # rounding makes symmetric positions produce identical magnitudes
        dx = round(R * math.cos(angle), 12) + 0.0
        dy = round(-R * math.sin(angle), 12) + 0.0
        taps.append(tuple((ox, oy, wx * wy)
                          for oy, wy in _axis_taps(dy)
                          for ox, wx in _axis_taps(dx)))
    return tuple(taps)


def _check_center(shape, x: int, y: int, R: float) -> None:
    margin = int(math.ceil(R))
    h, w = shape
    if not (margin <= x < w - margin and margin <= y < h - margin):
        raise IndexError(f"center ({x}, {y}) closer than {margin} px to the border")


def sample_neighbors(field: np.ndarray, x: int, y: int, P: int, R: float) -> list[float]:
    """Bilinearly interpolated values of the ``P`` circular neighbours of ``(x, y)``."""
    field = np.asarray(field, dtype=np.float64)
    _check_center(field.shape, x, y, R)
    return [float(sum(w * field[y + oy, x + ox] for ox, oy, w in taps))
            for taps in neighbour_taps(P, float(R))]


def _differences(field: np.ndarray, x: int, y: int, P: int, R: float) -> list[float]:
    gc = field[y, x]
    out = []
    for taps in neighbour_taps(P, float(R)):
        terms = sorted(w * (field[y + oy, x + ox] - gc) for ox, oy, w in taps)
        total = 0.0
        for t in terms:
            total += t
        out.append(total)
    return out


def lbp_code(field: np.ndarray, x: int, y: int, config: LbpConfig) -> int:
    """LBP code of one pixel: sum over p of s(g_p - g_c) * 2**p, with s(0) = 1."""
    field = np.asarray(field, dtype=np.float64)
    _check_center(field.shape, x, y, config.R)
    diffs = _differences(field, x, y, config.P, config.R)
    code = sum(1 << p for p, d in enumerate(diffs) if d >= 0)
    return ror_min(code, config.P) if config.rotation_invariant else code


def ror(code, i: int, P: int):
    """Circular right rotation of a ``P``-bit word by ``i`` steps."""
    i %= P
    mask = (1 << P) - 1
    return ((code >> i) | (code << (P - i))) & mask


def ror_min(code, P: int):
    """Smallest value over all circular right rotations (scalar or array)."""
    arr = np.asarray(code, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= (1 << P)):
        raise ValueError(f"code out of range for P={P}")
    best = arr.copy()
    for i in range(1, P):
        np.minimum(best, ror(arr, i, P), out=best)
    return int(best) if best.ndim == 0 else best


@lru_cache(maxsize=None)
def bin_values(P: int, rotation_invariant: bool) -> tuple[int, ...]:
    """Distinct code values that receive a histogram bin, ascending."""
    if not rotation_invariant:
        return tuple(range(1 << P))
    return tuple(np.unique(ror_min(np.arange(1 << P, dtype=np.int64), P)).tolist())


@lru_cache(maxsize=None)
def bin_map(P: int, rotation_invariant: bool) -> np.ndarray:
    """Lookup table mapping every raw code to its bin index."""
    values = bin_values(P, rotation_invariant)
    table = np.full(1 << P, -1, dtype=np.int64)
    if rotation_invariant:
        table[:] = np.searchsorted(values, ror_min(np.arange(1 << P, dtype=np.int64), P))
    else:
        table[:] = np.arange(1 << P)
    table.setflags(write=False)
    return table


def code_field(field: np.ndarray, config: LbpConfig) -> CodeField:
    """Compute the (optionally rotation-invariant) code of every pixel.

    Pixels within ``ceil(R)`` of the border are marked invalid.
    """
    field = np.asarray(field, dtype=np.float64)
    b = config.border
    if field.ndim != 2 or min(field.shape) <= 2 * b + 1:
        raise DimensionError(f"field {field.shape} too small for R={config.R}")
    h, w = field.shape
    ih, iw = h - 2 * b, w - 2 * b
    center = field[b:b + ih, b:b + iw]
    codes = np.zeros((ih, iw), dtype=np.int64)
    for p, taps in enumerate(neighbour_taps(config.P, float(config.R))):
        terms = np.stack([wt * (field[b + oy:b + oy + ih, b + ox:b + ox + iw] - center)
                          for ox, oy, wt in taps])
        terms.sort(axis=0)
        total = terms[0].copy()
        for t in terms[1:]:
            total += t
        codes |= (total >= 0).astype(np.int64) << p
    if config.rotation_invariant:
        codes = ror_min(codes, config.P)
    full = np.zeros((h, w), dtype=np.int64)
    valid = np.zeros((h, w), dtype=bool)
    full[b:b + ih, b:b + iw] = codes
    valid[b:b + ih, b:b + iw] = True
    return CodeField(full, valid, config)


def _check_window(window: int) -> int:
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    return window // 2


def region_histogram(cf: CodeField, center: tuple[int, int], window: int) -> np.ndarray:
    """Normalized bin frequencies of the valid codes in a square window."""
    return window_histograms(cf, np.array([center]), window)[0]


def window_histograms(cf: CodeField, centers: np.ndarray, window: int) -> np.ndarray:
    """Histograms for many ``(x, y)`` window centers, shape ``(n, n_bins)``.

    Window parts falling outside the image are ignored like invalid pixels.
    """
    half = _check_window(window)
    centers = np.asarray(centers, dtype=np.int64).reshape(-1, 2)
    table = bin_map(cf.config.P, cf.config.rotation_invariant)
    n_bins = cf.config.n_bins
    h, w = cf.codes.shape
    offs = np.arange(-half, half + 1)
    ys = centers[:, 1, None, None] + offs[None, :, None]
    xs = centers[:, 0, None, None] + offs[None, None, :]
    ys, xs = np.broadcast_arrays(ys, xs)
    inside = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
    yc = np.clip(ys, 0, h - 1)
    xc = np.clip(xs, 0, w - 1)
    ok = inside & cf.valid[yc, xc]
    bins = table[cf.codes[yc, xc]]
    rows = np.broadcast_to(np.arange(len(centers))[:, None, None], ok.shape)
    counts = np.bincount((rows[ok] * n_bins + bins[ok]), minlength=len(centers) * n_bins)
    counts = counts.reshape(len(centers), n_bins).astype(np.float64)
    totals = counts.sum(axis=1, keepdims=True)
    if (totals == 0).any():
        bad = int(np.nonzero(totals[:, 0] == 0)[0][0])
        raise EmptyDataError(f"no valid codes in the window at {tuple(centers[bad])}")
    return counts / totals


def chi_square(h1, h2) -> float:
    """Chi-square histogram distance; bins empty in both histograms are skipped."""
    a = np.asarray(h1, dtype=np.float64)
    b = np.asarray(h2, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"bin count mismatch: {a.shape} vs {b.shape}")
    den = a + b
    nz = den > 0
    return float(np.sum((a[nz] - b[nz]) ** 2 / den[nz]))


def multiscale_dissimilarity(sample: Sequence, model: Sequence) -> float:
    """Sum of per-scale chi-square distances between two histogram lists."""
    if len(sample) != len(model):
        raise ValueError(f"scale count mismatch: {len(sample)} vs {len(model)}")
    return float(sum(chi_square(s, m) for s, m in zip(sample, model)))


def code_field_image(cf: CodeField) -> np.ndarray:
    """Codes as 8-bit gray levels (invalid pixels black), P=8 only."""
    if cf.config.P != 8:
        raise ValueError("code images are only defined for P=8")
    return np.where(cf.valid, cf.codes, 0).astype(np.uint8)
