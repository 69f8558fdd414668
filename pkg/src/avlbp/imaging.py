"""Raster and label-mask I/O.

Rasters are plain ``uint8`` arrays of shape ``(height, width, channels)``
with ``channels`` in {1, 3}.  Scalar fields are 2-D ``float64`` arrays.
Label masks are 2-D ``uint8`` arrays holding 0 (background), 1 (artery)
or 2 (vein).
"""
from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DimensionError, ImageFormatError

BACKGROUND, ARTERY, VEIN = 0, 1, 2
CLASS_NAMES = {ARTERY: "artery", VEIN: "vein"}
CLASS_CODES = {"artery": ARTERY, "vein": VEIN}

# exact mask colours, anything else is rejected
MASK_COLORS = {
    BACKGROUND: (0, 0, 0),
    ARTERY: (255, 0, 0),
    VEIN: (0, 0, 255),
}

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
_CHANNEL_NAMES = {"red": 0, "green": 1, "blue": 2}


def _as_raster(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ImageFormatError(f"unsupported raster shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ImageFormatError("raster has zero width or height")
    return np.ascontiguousarray(arr, dtype=np.uint8)


def load_image(path) -> np.ndarray:
    """Decode a PPM (P5/P6) or 8-bit PNG file into a ``(H, W, C)`` raster."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    try:
        with Image.open(path) as im:
            if im.format not in ("PPM", "PNG"):
                raise ImageFormatError(f"{path}: unsupported format {im.format}")
            mode = im.mode
            if mode in ("1", "L"):
                arr = np.asarray(im.convert("L"))
            elif mode in ("RGB", "RGBA", "P", "LA"):
                arr = np.asarray(im.convert("RGB"))
            else:
                raise ImageFormatError(f"{path}: unsupported pixel mode {mode}")
    except UnidentifiedImageError as exc:
        raise ImageFormatError(f"{path}: not a PPM or PNG image") from exc
    except (OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: {exc}") from exc
    return _as_raster(arr)


def _atomic_write(path: Path, write) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data: bytes) -> None:
    _atomic_write(Path(path), lambda fh: fh.write(data))


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save_image(img: np.ndarray, path) -> None:
    """Write a raster as PNG (PPM when the suffix is .ppm/.pgm)."""
    img = _as_raster(img)
    pil = Image.fromarray(img[:, :, 0] if img.shape[2] == 1 else img)
    fmt = "PPM" if Path(path).suffix.lower() in (".ppm", ".pgm", ".pnm") else "PNG"
    _atomic_write(Path(path), lambda fh: pil.save(fh, format=fmt))


def extract_field(img: np.ndarray, mode: int | str = "green") -> np.ndarray:
    """Return a single-channel float field in [0, 255].

    ``mode`` is a channel index, a channel name (``red``/``green``/``blue``)
    or ``"luminance"`` (0.299 R + 0.587 G + 0.114 B).  Single-channel rasters
    accept channel 0, any colour name and luminance alike.
    """
    img = _as_raster(img)
    n_channels = img.shape[2]
    if mode == "luminance":
        if n_channels == 1:
            return img[:, :, 0].astype(np.float64)
        rgb = img.astype(np.float64)
        field = LUMA_WEIGHTS[0] * rgb[:, :, 0] + LUMA_WEIGHTS[1] * rgb[:, :, 1] + LUMA_WEIGHTS[2] * rgb[:, :, 2]
        return np.clip(field, 0.0, 255.0)
    if isinstance(mode, str):
        if mode not in _CHANNEL_NAMES:
            raise ValueError(f"unknown field mode {mode!r}")
        index = 0 if n_channels == 1 else _CHANNEL_NAMES[mode]
    else:
        index = int(mode)
    if not 0 <= index < n_channels:
        raise IndexError(f"channel {index} out of range for {n_channels}-channel image")
    return img[:, :, index].astype(np.float64)


def decode_label_mask(rgb: np.ndarray) -> np.ndarray:
    rgb = _as_raster(rgb)
    if rgb.shape[2] == 1:
        rgb = np.repeat(rgb, 3, axis=2)
    codes = np.full(rgb.shape[:2], 255, dtype=np.uint8)
    for code, color in MASK_COLORS.items():
        codes[np.all(rgb == np.array(color, dtype=np.uint8), axis=2)] = code
    bad = codes == 255
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise ImageFormatError(f"unrecognized mask colour {tuple(rgb[y, x])} at x={x}, y={y}")
    return codes


def encode_label_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise DimensionError("label mask must be 2-D")
    if not np.isin(mask, list(MASK_COLORS)).all():
        raise ValueError("label mask codes must be in {0, 1, 2}")
    rgb = np.zeros(mask.shape + (3,), dtype=np.uint8)
    for code, color in MASK_COLORS.items():
        rgb[mask == code] = color
    return rgb


def load_label_mask(path, shape: Sequence[int] | None = None) -> np.ndarray:
    """Read a colour-coded mask PNG.

    When ``shape`` (the paired image's ``(height, width)``) is given, the mask
    must match it exactly.
    """
    codes = decode_label_mask(load_image(path))
    if shape is not None and codes.shape != tuple(shape[:2]):
        raise DimensionError(
            f"mask is {codes.shape[1]}x{codes.shape[0]}, image is {shape[1]}x{shape[0]}")
    return codes


def save_label_mask(mask: np.ndarray, path) -> None:
    save_image(encode_label_mask(mask), path)


def save_binary_mask(mask: np.ndarray, path) -> None:
    """PNG with white vessel pixels on black."""
    save_image(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8), path)


def load_binary_mask(path) -> np.ndarray:
    img = load_image(path)
    return img.max(axis=2) > 127


def render_overlay(img: np.ndarray, segments, classes: Mapping[int, str | int]) -> np.ndarray:
    """Paint classified centerlines onto a copy of ``img``.

    Arteries become pure red, veins pure blue.  Segments whose id is missing
    from ``classes`` are left unpainted.
    """
    img = _as_raster(img)
    out = np.repeat(img, 3, axis=2) if img.shape[2] == 1 else img.copy()
    for seg in segments:
        cls = classes.get(seg.id)
        if cls is None:
            continue
        code = CLASS_CODES[cls] if isinstance(cls, str) else int(cls)
        if code not in CLASS_NAMES:
            raise ValueError(f"segment {seg.id}: cannot paint class {cls!r}")
        pts = np.asarray(seg.points)
        if pts.size == 0:
            continue
        if (pts[:, 0].max() >= out.shape[1] or pts[:, 1].max() >= out.shape[0]
                or pts.min() < 0):
            raise DimensionError(f"segment {seg.id} lies outside the image")
        out[pts[:, 1], pts[:, 0]] = MASK_COLORS[code]
    return out


def save_overlay(img: np.ndarray, segments, classes: Mapping[int, str | int], path) -> None:
    save_image(render_overlay(img, segments, classes), path)
