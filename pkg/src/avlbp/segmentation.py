"""Matched-filter vessel detection with piecewise threshold probing.

The filter bank correlates the image with oriented, inverted Gaussian
cross-sections so that vessels darker than their surroundings respond
positively.  Probing then grows vessel pieces from strong seeds while a
per-piece threshold is lowered, accepting only pieces that pass region
tests.
"""
from __future__ import annotations

import heapq
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DimensionError, ImageFormatError
from .imaging import atomic_write_bytes


@dataclass(frozen=True)
class MatchedFilterBank:
    kernels: tuple[np.ndarray, ...]
    orientations: tuple[float, ...]
    sigma: float
    length: float
    # per-kernel constant subtracted from the support to make it zero-mean,
    # in the same (rescaled) units as the kernel
    means: tuple[float, ...]
    supports: tuple[np.ndarray, ...]
    # per-kernel energy normalisation factor applied after mean subtraction
    gains: tuple[float, ...] = ()

    @property
    def half_size(self) -> int:
        return self.kernels[0].shape[0] // 2


@dataclass(frozen=True)
class ProbeParams:
    threshold_high: float = 100.0
    threshold_low: float = 40.0
    threshold_step: float = 10.0
    min_region_size: int = 10
    max_region_size: int = 400
    fill_ratio_limit: float = 0.5

    def __post_init__(self):
        if self.threshold_high < self.threshold_low:
            raise ValueError("threshold_high must be >= threshold_low")
        if self.threshold_step <= 0:
            raise ValueError("threshold_step must be positive")
        if self.min_region_size < 0 or self.max_region_size < self.min_region_size:
            raise ValueError("region size bounds must satisfy 0 <= min <= max")
        if not 0 < self.fill_ratio_limit <= 1:
            raise ValueError("fill_ratio_limit must lie in (0, 1]")


def build_filter_bank(sigma: float = 2.0, length: float = 9.0, n_orientations: int = 12) -> MatchedFilterBank:
    """Build ``n_orientations`` zero-mean matched-filter kernels.

    Orientation ``theta`` is the vessel direction, counterclockwise from
    the +x axis with y pointing up the image.  The kernel support covers
    ``|across| <= 3 sigma`` and ``|along| <= length / 2``.
    """
    if sigma <= 0 or length < 1 or n_orientations < 1:
        raise ValueError("sigma > 0, length >= 1 and n_orientations >= 1 required")
    half_across = 3.0 * sigma
    half_along = length / 2.0
    half = int(math.ceil(math.hypot(half_across, half_along)))
    offs = np.arange(-half, half + 1, dtype=np.float64)
    dx, dy = np.meshgrid(offs, offs)  # dy grows downwards (row index)
    step = 180.0 / n_orientations
    kernels, orientations, means, supports = [], [], [], []
    for i in range(n_orientations):
        theta = i * step
        t = math.radians(theta)
        along = dx * math.cos(t) - dy * math.sin(t)
        across = dx * math.sin(t) + dy * math.cos(t)
        support = (np.abs(across) <= half_across + 1e-9) & (np.abs(along) <= half_along + 1e-9)
        raw = np.where(support, -np.exp(-(across ** 2) / (2.0 * sigma ** 2)), 0.0)
        mean = raw[support].mean()
        kernel = np.where(support, raw - mean, 0.0)
        kernels.append(kernel)
        orientations.append(theta)
        means.append(float(mean))
        supports.append(support)
    # Discrete supports differ in size between orientations (axis-aligned ones
    # hold the most pixels); rescale every kernel to the bank's mean energy so
    # each responds equally to its own template.
    energy = np.array([float((k ** 2).sum()) for k in kernels])
    gains = energy.mean() / energy
    kernels = [k * g for k, g in zip(kernels, gains)]
    means = [m * g for m, g in zip(means, gains)]
    return MatchedFilterBank(tuple(kernels), tuple(orientations), float(sigma), float(length),
                             tuple(means), tuple(supports), tuple(float(g) for g in gains))


def orientation_responses(field: np.ndarray, bank: MatchedFilterBank) -> np.ndarray:
    """Correlation of ``field`` with every kernel, shape ``(n, H, W)``.

    Pixels closer than the kernel half-size to the border are zero.
    """
    field = np.asarray(field, dtype=np.float64)
    half = bank.half_size
    if field.ndim != 2 or min(field.shape) <= 2 * half + 1:
        raise DimensionError(
            f"field {field.shape} must exceed the {2 * half + 1}-pixel kernel support on both axes")
    out = np.empty((len(bank.kernels),) + field.shape)
    for i, kernel in enumerate(bank.kernels):
        out[i] = ndimage.correlate(field, kernel, mode="nearest")
    out[:, :half, :] = 0.0
    out[:, -half:, :] = 0.0
    out[:, :, :half] = 0.0
    out[:, :, -half:] = 0.0
    return out


def matched_filter_response(field: np.ndarray, bank: MatchedFilterBank) -> np.ndarray:
    return orientation_responses(field, bank).max(axis=0)


def dominant_orientation(field: np.ndarray, bank: MatchedFilterBank) -> np.ndarray:
    """Per-pixel angle (degrees) of the winning kernel."""
    idx = orientation_responses(field, bank).argmax(axis=0)
    return np.asarray(bank.orientations)[idx]


_NEIGHBOURS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def _seeds(mfr: np.ndarray, threshold_high: float) -> list[tuple[int, int]]:
    local_max = mfr >= ndimage.maximum_filter(mfr, size=3, mode="constant", cval=-np.inf)
    cand = local_max & (mfr >= threshold_high) & (mfr > 0)
    rows, cols = np.nonzero(cand)
    order = np.lexsort((cols, rows, -mfr[rows, cols]))
    return list(zip(rows[order].tolist(), cols[order].tolist()))


def _bounding_square_fill(rows: list[int], cols: list[int]) -> float:
    side = max(max(rows) - min(rows), max(cols) - min(cols)) + 1
    return len(rows) / float(side * side)


def threshold_probe(mfr: np.ndarray, params: ProbeParams | None = None) -> np.ndarray:
    """Segment vessels from an MFR image by piecewise threshold probing.

    Seeds are local maxima at or above ``threshold_high``, visited in order
    of decreasing response.  Each probe grows the 8-connected region of
    still-unclaimed pixels reachable through responses at or above a
    threshold that starts at the seed value and drops by
    ``threshold_step`` per iteration.  Growth stops once the threshold
    would fall below ``threshold_low`` or the region would exceed
    ``max_region_size``; the last admissible region is kept.  It becomes
    vessel when its size is at least ``min_region_size`` and it is
    elongated: its pixel count over the area of its bounding square is at
    most ``fill_ratio_limit``.  Rejected pixels remain available to later
    probes.
    """
    params = params or ProbeParams()
    mfr = np.asarray(mfr, dtype=np.float64)
    if not np.isfinite(mfr).all():
        raise ValueError("MFR contains non-finite values")
    height, width = mfr.shape
    vessel = np.zeros(mfr.shape, dtype=bool)
    stamp = np.zeros(mfr.shape, dtype=np.int64)
    eligible = mfr >= params.threshold_low
    values = mfr.tolist()
    elig = eligible.tolist()
    low, step, max_size = params.threshold_low, params.threshold_step, params.max_region_size

    for probe_id, (sr, sc) in enumerate(_seeds(mfr, params.threshold_high), start=1):
        if vessel[sr, sc]:
            continue
        stamp[sr, sc] = probe_id
        heap = [(-values[sr][sc], sr, sc)]
        region: list[tuple[int, int]] = []
        kept = 0
        threshold = values[sr][sc]
        overflow = False
        while True:
            while heap and -heap[0][0] >= threshold:
                _, r, c = heapq.heappop(heap)
                region.append((r, c))
                if len(region) > max_size:
                    overflow = True
                    break
                for dr, dc in _NEIGHBOURS:
                    nr, nc = r + dr, c + dc
                    if (0 <= nr < height and 0 <= nc < width and elig[nr][nc]
                            and stamp[nr, nc] != probe_id and not vessel[nr, nc]):
                        stamp[nr, nc] = probe_id
                        heapq.heappush(heap, (-values[nr][nc], nr, nc))
            if overflow:
                break
            kept = len(region)
            threshold -= step
            if threshold < low or not heap:
                break
        region = region[:kept]
        if len(region) < max(params.min_region_size, 1):
            continue
        rows = [p[0] for p in region]
        cols = [p[1] for p in region]
        if _bounding_square_fill(rows, cols) > params.fill_ratio_limit:
            continue
        vessel[rows, cols] = True
    return vessel


def segment_vessels(field: np.ndarray, bank: MatchedFilterBank | None = None,
                    params: ProbeParams | None = None) -> np.ndarray:
    bank = bank or build_filter_bank()
    return threshold_probe(matched_filter_response(field, bank), params)


_GRID_MAGIC = b"AVMFRF32"


def save_float_grid(field: np.ndarray, path) -> None:
    """16-byte header (8-byte magic, uint32 width, uint32 height) then float32 rows."""
    field = np.asarray(field)
    if field.ndim != 2:
        raise DimensionError("float grid must be 2-D")
    header = _GRID_MAGIC + struct.pack("<II", field.shape[1], field.shape[0])
    atomic_write_bytes(path, header + field.astype("<f4").tobytes())


def load_float_grid(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != _GRID_MAGIC:
        raise ImageFormatError(f"{path}: not a float grid file")
    width, height = struct.unpack("<II", data[8:16])
    if len(data) != 16 + 4 * width * height:
        raise ImageFormatError(f"{path}: truncated float grid")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(height, width).astype(np.float64)
