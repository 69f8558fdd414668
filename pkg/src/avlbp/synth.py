"""Synthetic fundus-like images with exact artery/vein ground truth.

Vessels are smooth non-crossing quadratic Bezier curves.  Veins are
wider and darker; arteries are narrower, lighter and carry a bright
one-pixel central reflex.  Each vessel's contrast (darkness and reflex
together) is scaled by a log-uniform random gain, so absolute darkness
overlaps between classes while the shape of the profile stays
class-specific.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import AvlbpError
from .imaging import ARTERY, VEIN

CHANNEL_GAINS = np.array([1.35, 0.75, 0.40])


class PlacementError(AvlbpError):
    """Could not place a vessel without crossing the others."""


@dataclass(frozen=True)
class SynthParams:
    width: int = 320
    height: int = 320
    n_vessels: int = 10
    artery_fraction: float = 0.5
    artery_width: tuple[float, float] = (2.5, 3.5)
    vein_width: tuple[float, float] = (4.5, 6.0)
    reflex_amplitude: float = 22.0
    background_level: float = 150.0
    vessel_darkness: float = 40.0
    artery_darkness_ratio: float = 0.75
    contrast_range: tuple[float, float] = (0.5, 2.0)
    # per-vessel reflex strength as a fraction of reflex_amplitude
    artery_reflex: tuple[float, float] = (0.5, 1.0)
    vein_reflex: tuple[float, float] = (0.0, 0.0)
    noise_sigma: float = 3.0
    # spatially correlated background texture (std in gray levels, blur scale in px)
    texture_amplitude: float = 0.0
    texture_scale: float = 3.0
    # per-image tone curve exponent, drawn log-uniformly
    gamma_range: tuple[float, float] = (1.0, 1.0)
    length_range: tuple[float, float] = (60.0, 130.0)
    clearance: float = 12.0
    margin: int = 20
    max_retries: int = 400
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")
        if self.n_vessels < 0:
            raise ValueError("n_vessels must be >= 0")
        if not 0.0 <= self.artery_fraction <= 1.0:
            raise ValueError("artery_fraction must lie in [0, 1]")
        if not (0 < self.artery_width[0] <= self.artery_width[1]
                < self.vein_width[0] <= self.vein_width[1]):
            raise ValueError("vein width range must lie strictly above the artery width range")
        if self.reflex_amplitude <= 0:
            raise ValueError("reflex_amplitude must be positive")
        for name in ("artery_reflex", "vein_reflex"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ValueError(f"{name} must satisfy 0 <= low <= high")
        if not 0 < self.contrast_range[0] <= self.contrast_range[1]:
            raise ValueError("contrast_range must satisfy 0 < low <= high")
        if self.noise_sigma < 0 or self.texture_amplitude < 0:
            raise ValueError("noise_sigma and texture_amplitude must be >= 0")
        if not 0 < self.gamma_range[0] <= self.gamma_range[1]:
            raise ValueError("gamma_range must satisfy 0 < low <= high")
        if self.texture_scale <= 0:
            raise ValueError("texture_scale must be positive")


@dataclass
class SynthVessel:
    label: int
    width: float
    darkness: float
    reflex: float
    curve: np.ndarray  # (n, 2) float (x, y), dense samples along the centerline


@dataclass
class SynthResult:
    image: np.ndarray
    mask: np.ndarray
    vessels: list[SynthVessel] = field(default_factory=list)
    intensity: np.ndarray | None = None  # noise-free single-channel rendering


def vessel_profile(distance, width: float, darkness: float, reflex: float):
    """Intensity drop at ``distance`` from the centerline (positive = darker)."""
    d = np.asarray(distance, dtype=np.float64)
    body = np.clip(width / 2.0 + 0.5 - d, 0.0, 1.0)
    ridge = np.clip(1.0 - d, 0.0, 1.0)
    return darkness * body - reflex * ridge


def _bezier(p0, p1, p2, spacing=0.25) -> np.ndarray:
    chord = np.linalg.norm(p1 - p0) + np.linalg.norm(p2 - p1)
    t = np.linspace(0.0, 1.0, max(int(chord / spacing), 2))[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t ** 2 * p2


def _random_curve(rng: np.random.Generator, params: SynthParams) -> np.ndarray:
    m = params.margin
    lo = np.array([m, m], dtype=np.float64)
    hi = np.array([params.width - 1 - m, params.height - 1 - m], dtype=np.float64)
    if np.any(hi <= lo):
        raise PlacementError("image too small for the requested margin")
    length = rng.uniform(*params.length_range)
    start = rng.uniform(lo, hi)
    angle = rng.uniform(0, 2 * np.pi)
    end = start + length * np.array([np.cos(angle), np.sin(angle)])
    mid = (start + end) / 2
    normal = np.array([-np.sin(angle), np.cos(angle)])
    ctrl = mid + normal * rng.uniform(-0.35, 0.35) * length
    curve = _bezier(start, ctrl, end)
    if np.any(curve < lo) or np.any(curve > hi):
        return None
    return curve


def generate(params: SynthParams = SynthParams()) -> SynthResult:
    """Render an RGB image and its centerline label mask."""
    rng = np.random.default_rng(params.seed)
    h, w = params.height, params.width
    n_art = int(round(params.n_vessels * params.artery_fraction))
    if 0 < params.artery_fraction < 1 and params.n_vessels >= 2:
        n_art = min(max(n_art, 1), params.n_vessels - 1)
    labels = [ARTERY] * n_art + [VEIN] * (params.n_vessels - n_art)
    labels = [labels[i] for i in rng.permutation(len(labels))]

    placed: list[SynthVessel] = []
    trees: list[cKDTree] = []
    for label in labels:
        wrange = params.artery_width if label == ARTERY else params.vein_width
        width = rng.uniform(*wrange)
        for _ in range(params.max_retries):
            curve = _random_curve(rng, params)
            if curve is None:
                continue
            ok = True
            for other, tree in zip(placed, trees):
                gap = params.clearance + (width + other.width) / 2
                if np.isfinite(tree.query(curve, distance_upper_bound=gap)[0]).any():
                    ok = False
                    break
            if ok:
                break
        else:
            raise PlacementError(
                f"could not place vessel {len(placed) + 1} of {params.n_vessels} "
                f"in a {w}x{h} image after {params.max_retries} attempts")
        gain = float(np.exp(rng.uniform(np.log(params.contrast_range[0]), np.log(params.contrast_range[1]))))
        base = params.vessel_darkness * (params.artery_darkness_ratio if label == ARTERY else 1.0)
        frac = rng.uniform(*(params.artery_reflex if label == ARTERY else params.vein_reflex))
        reflex = params.reflex_amplitude * frac * gain
        placed.append(SynthVessel(label, width, base * gain, reflex, curve))
        trees.append(cKDTree(curve))

    intensity = np.full((h, w), params.background_level, dtype=np.float64)
    mask = np.zeros((h, w), dtype=np.uint8)
    for vessel, tree in zip(placed, trees):
        reach = vessel.width / 2 + 1.5
        # only pixels in the curve's padded bounding box can be reached
        x0, y0 = np.maximum(np.floor(vessel.curve.min(axis=0) - reach), 0).astype(int)
        x1, y1 = np.minimum(np.ceil(vessel.curve.max(axis=0) + reach), [w - 1, h - 1]).astype(int)
        ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
        dist, _ = tree.query(np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64),
                             distance_upper_bound=reach)
        near = np.isfinite(dist)
        drop = np.zeros(dist.shape)
        drop[near] = vessel_profile(dist[near], vessel.width, vessel.darkness, vessel.reflex)
        intensity[y0:y1 + 1, x0:x1 + 1] -= drop.reshape(xs.shape)
        px = np.unique(np.rint(vessel.curve).astype(np.int64), axis=0)
        mask[px[:, 1], px[:, 0]] = vessel.label

    noisy = intensity.copy()
    if params.texture_amplitude > 0:
        texture = ndimage.gaussian_filter(rng.normal(0.0, 1.0, intensity.shape), params.texture_scale)
        noisy += texture * (params.texture_amplitude / texture.std())
    if params.noise_sigma > 0:
        noisy += rng.normal(0.0, params.noise_sigma, intensity.shape)
    gamma = float(np.exp(rng.uniform(np.log(params.gamma_range[0]), np.log(params.gamma_range[1]))))
    linear = np.clip(noisy[:, :, None] * CHANNEL_GAINS, 0.0, 255.0)
    rgb = np.rint(255.0 * (linear / 255.0) ** gamma).astype(np.uint8)
    return SynthResult(rgb, mask, placed, intensity)
