"""Centerline extraction and vessel segment tracing."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ImageFormatError
from .imaging import atomic_write_text

EIGHT = np.ones((3, 3), dtype=bool)

# neighbour offsets (drow, dcol) in a fixed clockwise order starting north
_RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


@dataclass(frozen=True)
class VesselSegment:
    id: int
    points: np.ndarray  # (n, 2) int array of (x, y)

    def __len__(self) -> int:
        return len(self.points)

    def reversed(self) -> "VesselSegment":
        return VesselSegment(self.id, self.points[::-1].copy())


def neighbour_count(mask: np.ndarray) -> np.ndarray:
    """Number of 8-neighbours set, for every pixel (0 off the mask)."""
    m = np.asarray(mask, dtype=bool)
    counts = ndimage.convolve(m.astype(np.int32), np.array([[1, 1, 1], [1, 0, 1], [1, 1, 1]]),
                              mode="constant", cval=0)
    return np.where(m, counts, 0)


def remove_small_objects(mask: np.ndarray, min_size: int = 50) -> np.ndarray:
    """Drop 8-connected components with fewer than ``min_size`` pixels."""
    if min_size < 0:
        raise ValueError("min_size must be >= 0")
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=EIGHT)
    if n == 0:
        return mask.copy()
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_size
    keep[0] = False
    return keep[labels]


def _zhang_suen_tables() -> tuple[np.ndarray, np.ndarray]:
    # index bit k corresponds to _RING[k] (P2..P9 in the usual notation)
    first = np.zeros(256, dtype=bool)
    second = np.zeros(256, dtype=bool)
    for code in range(256):
        p = [(code >> k) & 1 for k in range(8)]
        b = sum(p)
        a = sum(1 for k in range(8) if p[k] == 0 and p[(k + 1) % 8] == 1)
        if not (2 <= b <= 6 and a == 1):
            continue
        n, e, s, w = p[0], p[2], p[4], p[6]
        first[code] = n * e * s == 0 and e * s * w == 0
        second[code] = n * e * w == 0 and n * s * w == 0
    return first, second


_ZS_FIRST, _ZS_SECOND = _zhang_suen_tables()


def _ring_codes(m: np.ndarray) -> np.ndarray:
    padded = np.pad(m, 1).astype(np.int32)
    h, w = m.shape
    code = np.zeros((h, w), dtype=np.int32)
    for k, (dr, dc) in enumerate(_RING):
        code |= padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w] << k
    return code


def _subiteration(m: np.ndarray, table: np.ndarray) -> bool:
    delete = m & table[_ring_codes(m)]
    if not delete.any():
        return False
    # a component must never vanish entirely (e.g. 2x2 blocks)
    labels, n = ndimage.label(m, structure=EIGHT)
    survivors = np.bincount(labels[m & ~delete], minlength=n + 1)
    doomed = np.nonzero(survivors[1:] == 0)[0] + 1
    if doomed.size:
        flat = labels.ravel()
        firsts = np.full(n + 1, -1, dtype=np.int64)
        idx = np.flatnonzero(flat)
        # first raster index of every label
        order = np.unique(flat[idx], return_index=True)
        firsts[order[0]] = idx[order[1]]
        keep = firsts[doomed]
        delete.ravel()[keep] = False
    m &= ~delete
    return True


def _is_simple(m: np.ndarray, r: int, c: int) -> bool:
    """Yokoi 8-connectivity number equals one (removal keeps topology)."""
    h, w = m.shape

    def px(dr, dc):
        rr, cc = r + dr, c + dc
        return 1 if 0 <= rr < h and 0 <= cc < w and m[rr, cc] else 0

    # counterclockwise from east: E, NE, N, NW, W, SW, S, SE
    x = [px(0, 1), px(-1, 1), px(-1, 0), px(-1, -1), px(0, -1), px(1, -1), px(1, 0), px(1, 1)]
    xb = [1 - v for v in x] + [1 - x[0]]
    total = 0
    for k in (0, 2, 4, 6):
        total += xb[k] - xb[k] * xb[k + 1] * xb[k + 2]
    return total == 1


def _remove_redundant(m: np.ndarray) -> bool:
    """Sequentially delete simple non-endpoint pixels (staircase corners)."""
    changed = False
    counts = neighbour_count(m)
    for r, c in zip(*np.nonzero(m & (counts >= 2))):
        if not m[r, c]:
            continue
        window = m[max(r - 1, 0):r + 2, max(c - 1, 0):c + 2]
        if window.sum() - 1 < 2:
            continue
        if _is_simple(m, r, c):
            m[r, c] = False
            changed = True
    return changed


def thin(mask: np.ndarray) -> np.ndarray:
    """Reduce a binary mask to one-pixel-wide 8-connected centerlines.

    Zhang-Suen two-subiteration thinning run to convergence, followed by a
    sequential sweep that removes topologically redundant corner pixels.
    Both stages alternate until neither changes anything, so the result is
    a fixed point and ``thin(thin(m)) == thin(m)``.
    """
    m = np.array(mask, dtype=bool, copy=True)
    while True:
        changed = False
        while True:
            a = _subiteration(m, _ZS_FIRST)
            b = _subiteration(m, _ZS_SECOND)
            if not (a or b):
                break
            changed = True
        if _remove_redundant(m):
            changed = True
        if not changed:
            return m


def _neighbours(m: np.ndarray, r: int, c: int) -> list[tuple[int, int]]:
    h, w = m.shape
    out = []
    for dr, dc in _RING:
        rr, cc = r + dr, c + dc
        if 0 <= rr < h and 0 <= cc < w and m[rr, cc]:
            out.append((rr, cc))
    return out


def prune_spurs(skeleton: np.ndarray, max_spur_len: int = 5) -> np.ndarray:
    """Delete dead-end branches of fewer than ``max_spur_len`` pixels.

    Only branches that run from an endpoint into a junction (a pixel with
    three or more neighbours) are candidates; isolated paths are kept.
    Branches are measured on the input skeleton, so pruning is one pass.
    """
    if max_spur_len < 0:
        raise ValueError("max_spur_len must be >= 0")
    sk = np.array(skeleton, dtype=bool, copy=True)
    if max_spur_len == 0 or not sk.any():
        return sk
    counts = neighbour_count(sk)
    to_delete: list[tuple[int, int]] = []
    for r, c in zip(*np.nonzero(counts == 1)):
        branch = [(r, c)]
        prev, cur = None, (r, c)
        hit_junction = False
        while len(branch) <= max_spur_len:
            nxt = [p for p in _neighbours(sk, *cur) if p != prev and p not in branch]
            if not nxt:
                break
            if len(nxt) > 1 or counts[nxt[0]] >= 3:
                hit_junction = True
                break
            prev, cur = cur, nxt[0]
            branch.append(cur)
        if hit_junction and len(branch) < max_spur_len:
            to_delete.extend(branch)
    if not to_delete:
        return sk
    rows, cols = zip(*to_delete)
    sk[list(rows), list(cols)] = False
    _remove_redundant(sk)
    return sk


def _trace(component: set[tuple[int, int]], start: tuple[int, int]) -> list[tuple[int, int]]:
    path = [start]
    seen = {start}
    cur = start
    while True:
        nxt = None
        r, c = cur
        for dr, dc in _RING:
            p = (r + dr, c + dc)
            if p in component and p not in seen:
                nxt = p
                break
        if nxt is None:
            return path
        path.append(nxt)
        seen.add(nxt)
        cur = nxt


def split_segments(skeleton: np.ndarray, min_length: int = 3) -> list[VesselSegment]:
    """Cut the skeleton at branch points and trace the remaining chains.

    Pixels with more than two 8-neighbours are removed; every remaining
    8-connected chain of at least ``min_length`` pixels becomes a segment
    traced from its raster-first endpoint (or raster-first pixel for a
    closed loop).  Ids follow the raster order of those start pixels.
    """
    sk = np.asarray(skeleton, dtype=bool)
    counts = neighbour_count(sk)
    chains = sk & (counts <= 2)
    labels, n = ndimage.label(chains, structure=EIGHT)
    if n == 0:
        return []
    chain_counts = neighbour_count(chains)
    found = []
    for sl_index, sl in enumerate(ndimage.find_objects(labels), start=1):
        rows, cols = np.nonzero(labels[sl] == sl_index)
        if rows.size < min_length:
            continue
        rows = rows + sl[0].start
        cols = cols + sl[1].start
        # np.nonzero is raster ordered
        pixels = list(zip(rows.tolist(), cols.tolist()))
        ends = [p for p in pixels if chain_counts[p] <= 1]
        start = ends[0] if ends else pixels[0]
        path = _trace(set(pixels), start)
        if len(path) != len(pixels):
            raise AssertionError("chain tracing did not visit every pixel")
        found.append((start, path))
    found.sort(key=lambda item: item[0])
    return [VesselSegment(i, np.array([(c, r) for r, c in path], dtype=np.int64))
            for i, (_, path) in enumerate(found)]


def segments_to_mask(segments, shape) -> np.ndarray:
    out = np.zeros(shape, dtype=bool)
    for seg in segments:
        out[seg.points[:, 1], seg.points[:, 0]] = True
    return out


def extract_segments(mask: np.ndarray, min_object_size: int = 50, max_spur_len: int = 5,
                     min_segment_length: int = 3) -> list[VesselSegment]:
    cleaned = remove_small_objects(mask, min_object_size)
    skeleton = prune_spurs(thin(cleaned), max_spur_len)
    return split_segments(skeleton, min_segment_length)


def format_segments(segments) -> str:
    lines = []
    for seg in segments:
        coords = " ".join(f"{x} {y}" for x, y in seg.points.tolist())
        lines.append(f"{seg.id}, {len(seg.points)}, {coords}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_segments(text: str) -> list[VesselSegment]:
    segments = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            sid, count, coords = (part.strip() for part in line.split(",", 2))
            values = [int(v) for v in coords.split()]
            n = int(count)
        except ValueError as exc:
            raise ImageFormatError(f"segments line {lineno}: {exc}") from exc
        if len(values) != 2 * n:
            raise ImageFormatError(f"segments line {lineno}: expected {n} points, got {len(values) / 2}")
        segments.append(VesselSegment(int(sid), np.array(values, dtype=np.int64).reshape(n, 2)))
    return segments


def save_segments(segments, path) -> None:
    atomic_write_text(path, format_segments(segments))


def load_segments(path) -> list[VesselSegment]:
    return parse_segments(Path(path).read_text())
