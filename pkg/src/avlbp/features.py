"""Per-segment feature vectors, labels and dataset assembly."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from . import imaging, lbp, segmentation, skeleton
from .config import RunConfig
from .errors import DimensionError, EmptyDataError, SchemaError
from .imaging import ARTERY, VEIN
from .skeleton import VesselSegment

log = logging.getLogger(__name__)

UNKNOWN = "unknown"


@dataclass
class Dataset:
    X: np.ndarray  # (n, d) float64
    y: np.ndarray  # (n,) int8, 1 = artery, 0 = vein
    image_ids: list[str]
    segment_ids: np.ndarray
    schema_id: str
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64).reshape(len(self.y), -1)
        self.y = np.asarray(self.y, dtype=np.int8)
        self.segment_ids = np.asarray(self.segment_ids, dtype=np.int64)
        if not (len(self.X) == len(self.image_ids) == len(self.segment_ids)):
            raise DimensionError("dataset columns have different lengths")
        if not np.isfinite(self.X).all():
            raise ValueError("feature matrix contains non-finite values")
        if len(self.y) and not np.isin(self.y, (0, 1)).all():
            raise ValueError("labels must be 0 (vein) or 1 (artery)")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def keys(self) -> list[tuple[str, int]]:
        return list(zip(self.image_ids, self.segment_ids.tolist()))

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.X[index], self.y[index], [self.image_ids[i] for i in np.arange(len(self))[index]],
                       self.segment_ids[index], self.schema_id)

    @property
    def class_names(self) -> list[str]:
        return ["artery" if v == 1 else "vein" for v in self.y]


# --- schemas ------------------------------------------------------------

def lbp_schema_id(scales: Sequence[lbp.LbpConfig], window: int, channel: str) -> str:
    return f"lbp:{','.join(s.tag() for s in scales)};w{window};{channel}"


def rgb_schema_id(half_width: int) -> str:
    return f"rgb:hw{half_width}"


def schema_blocks(schema_id: str) -> list[int]:
    """Histogram block lengths of an LBP schema id (one per scale)."""
    if not schema_id.startswith("lbp:"):
        raise SchemaError(f"{schema_id!r} is not an LBP schema")
    tags = schema_id[4:].split(";")[0].split(",")
    blocks = []
    for tag in tags:
        ri = tag.endswith("ri")
        p, r = tag[1:].removesuffix("ri").split("R")
        blocks.append(lbp.LbpConfig(int(p), float(r), ri).n_bins)
    return blocks


# --- LBP features -------------------------------------------------------

def _window_counts(cf: lbp.CodeField, centers: np.ndarray, window: int) -> np.ndarray:
    half = window // 2
    table = lbp.bin_map(cf.config.P, cf.config.rotation_invariant)
    n_bins = cf.config.n_bins
    h, w = cf.codes.shape
    offs = np.arange(-half, half + 1)
    ys = centers[:, 1, None, None] + offs[None, :, None]
    xs = centers[:, 0, None, None] + offs[None, None, :]
    ys, xs = np.broadcast_arrays(ys, xs)
    inside = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
    yc, xc = np.clip(ys, 0, h - 1), np.clip(xs, 0, w - 1)
    ok = inside & cf.valid[yc, xc]
    rows = np.broadcast_to(np.arange(len(centers))[:, None, None], ok.shape)
    flat = rows[ok] * n_bins + table[cf.codes[yc, xc]][ok]
    return np.bincount(flat, minlength=len(centers) * n_bins).reshape(len(centers), n_bins)


def lbp_features_from_codes(code_fields: Sequence[lbp.CodeField], seg: VesselSegment,
                            window: int) -> np.ndarray:
    """Mean per-point window histogram for each scale, concatenated.

    Points whose window holds no valid code at some scale are skipped at
    every scale.  Column sums run over sorted values, so the result does
    not depend on the direction the segment was traced in.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    centers = np.asarray(seg.points, dtype=np.int64).reshape(-1, 2)
    counts = [_window_counts(cf, centers, window) for cf in code_fields]
    usable = np.all([c.sum(axis=1) > 0 for c in counts], axis=0)
    if not usable.any():
        raise EmptyDataError(f"segment {seg.id}: no point has a valid window at every scale")
    blocks = []
    for c in counts:
        c = c[usable].astype(np.float64)
        per_point = c / c.sum(axis=1, keepdims=True)
        mean = np.sort(per_point, axis=0).sum(axis=0) / len(per_point)
        blocks.append(mean / mean.sum())
    return np.concatenate(blocks)


def segment_lbp_features(field: np.ndarray, seg: VesselSegment, scales: Sequence[lbp.LbpConfig],
                         window: int = 15) -> np.ndarray:
    return lbp_features_from_codes([lbp.code_field(field, s) for s in scales], seg, window)


# --- RGB baseline -------------------------------------------------------

def _distance_crop(seg: VesselSegment, shape, reach: float):
    pts = np.asarray(seg.points)
    h, w = shape
    pad = int(np.ceil(reach)) + 1
    x0, y0 = max(pts[:, 0].min() - pad, 0), max(pts[:, 1].min() - pad, 0)
    x1, y1 = min(pts[:, 0].max() + pad + 1, w), min(pts[:, 1].max() + pad + 1, h)
    line = np.ones((y1 - y0, x1 - x0), dtype=bool)
    line[pts[:, 1] - y0, pts[:, 0] - x0] = False
    return ndimage.distance_transform_edt(line), (slice(y0, y1), slice(x0, x1))


def segment_rgb_features(img: np.ndarray, seg: VesselSegment, half_width: int = 2) -> np.ndarray:
    """Mean and variance per channel of the vessel band, relative to its surroundings.

    The band is every pixel within ``half_width`` of the centerline; its
    values are offset by the mean of the wider neighbourhood within
    ``3 * half_width + 2`` pixels.  Output order: mean_R, var_R, mean_G,
    var_G, mean_B, var_B.
    """
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[:, :, None]
    pts = np.asarray(seg.points)
    h, w = img.shape[:2]
    if pts.size == 0:
        raise EmptyDataError(f"segment {seg.id} has no points")
    if pts.min() < 0 or pts[:, 0].max() >= w or pts[:, 1].max() >= h:
        raise DimensionError(f"segment {seg.id} lies outside the image")
    context_reach = 3 * half_width + 2
    dist, window = _distance_crop(seg, (h, w), context_reach)
    band = dist <= half_width
    context = dist <= context_reach
    if not band.any():
        raise EmptyDataError(f"segment {seg.id}: empty neighbourhood")
    crop = img[window].astype(np.float64)
    out = []
    for ch in range(crop.shape[2]):
        values = crop[:, :, ch]
        centred = values[band] - values[context].mean()
        out.extend([centred.mean(), centred.var()])
    if crop.shape[2] == 1:
        out = out * 3
    return np.array(out, dtype=np.float64)


# --- PCA baseline -------------------------------------------------------

@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, d), rows orthonormal
    explained_variance: np.ndarray  # (k,), non-increasing


def pca_fit(data, k: int) -> PcaModel:
    """Principal axes of the sample covariance (``Dataset`` or matrix input)."""
    X = np.asarray(data.X if isinstance(data, Dataset) else data, dtype=np.float64)
    n, d = X.shape
    if n < 2:
        raise EmptyDataError("PCA needs at least two samples")
    if not 1 <= k <= d:
        raise ValueError(f"k must lie in [1, {d}], got {k}")
    mean = X.mean(axis=0)
    cov = np.cov(X - mean, rowvar=False).reshape(d, d)
    values, vectors = np.linalg.eigh(cov)
    order = np.argsort(values)[::-1][:k]
    comps = vectors[:, order].T
    # deterministic sign: largest-magnitude loading positive
    signs = np.sign(comps[np.arange(k), np.abs(comps).argmax(axis=1)])
    signs[signs == 0] = 1
    return PcaModel(mean, comps * signs[:, None], np.clip(values[order], 0.0, None))


def pca_transform(model: PcaModel, fv) -> np.ndarray:
    return (np.asarray(fv, dtype=np.float64) - model.mean) @ model.components.T


def pca_dataset(ds: Dataset, k: int) -> tuple[Dataset, PcaModel]:
    model = pca_fit(ds, k)
    out = Dataset(pca_transform(model, ds.X), ds.y, list(ds.image_ids), ds.segment_ids,
                  f"pca:k{k}:{ds.schema_id}", dict(ds.provenance))
    return out, model


# --- labels -------------------------------------------------------------

def label_segment(seg: VesselSegment, mask: np.ndarray, radius: float = 2.0) -> str:
    """Majority class among labelled mask pixels within ``radius`` of the centerline."""
    mask = np.asarray(mask)
    pts = np.asarray(seg.points)
    h, w = mask.shape
    if pts.size and (pts.min() < 0 or pts[:, 0].max() >= w or pts[:, 1].max() >= h):
        raise DimensionError(f"segment {seg.id} lies outside the {w}x{h} mask")
    dist, window = _distance_crop(seg, mask.shape, radius)
    near = mask[window][dist <= radius]
    n_art = int(np.count_nonzero(near == ARTERY))
    n_vein = int(np.count_nonzero(near == VEIN))
    if n_art == n_vein:
        return UNKNOWN
    return "artery" if n_art > n_vein else "vein"


# --- pipeline -----------------------------------------------------------

def vessel_segments(img: np.ndarray, config: RunConfig) -> list[VesselSegment]:
    """Segmentation, cleanup, thinning and junction splitting for one image."""
    field = imaging.extract_field(img, config.segment_channel)
    bank = segmentation.build_filter_bank(config.mf_sigma, config.mf_length, config.mf_orientations)
    params = segmentation.ProbeParams(
        config.probe_threshold_high, config.probe_threshold_low, config.probe_threshold_step,
        config.probe_min_region_size, config.probe_max_region_size, config.probe_fill_ratio_limit)
    mask = segmentation.segment_vessels(field, bank, params)
    return skeleton.extract_segments(mask, config.min_object_size, config.max_spur_length,
                                     config.min_segment_length)


SCHEMAS = ("msri_lbp", "rgb")


def _extractors(img, config: RunConfig, schemas):
    out = {}
    for schema in schemas:
        if schema == "msri_lbp":
            scales = config.lbp_configs()
            field = imaging.extract_field(img, config.lbp_channel)
            codes = [lbp.code_field(field, s) for s in scales]
            sid = lbp_schema_id(scales, config.lbp_window, config.lbp_channel)
            out[schema] = (sid, lambda seg, codes=codes: lbp_features_from_codes(codes, seg, config.lbp_window))
        elif schema == "rgb":
            out[schema] = (rgb_schema_id(config.rgb_half_width),
                           lambda seg: segment_rgb_features(img, seg, config.rgb_half_width))
        else:
            raise ValueError(f"unknown feature schema {schema!r}; expected one of {SCHEMAS}")
    return out


def build_datasets(items: Iterable[tuple[str, np.ndarray, np.ndarray]], config: RunConfig = RunConfig(),
                   schemas: Sequence[str] = ("msri_lbp",)) -> dict[str, Dataset]:
    """Run the pipeline over ``(image_id, image, label_mask)`` triples.

    All requested schemas describe the same set of labelled segments.
    Samples are ordered by image (input order) then segment id.
    """
    rows = {s: [] for s in schemas}
    keys, labels = [], []
    provenance = {}
    sids = {}
    for image_id, img, mask in items:
        if img.shape[:2] != mask.shape:
            raise DimensionError(f"{image_id}: mask {mask.shape} does not match image {img.shape[:2]}")
        if image_id in provenance:
            raise ValueError(f"duplicate image id {image_id!r}")
        segments = vessel_segments(img, config)
        extractors = _extractors(img, config, schemas)
        stats = {"segments": len(segments), "unknown": 0, "dropped": 0, "used": 0}
        for seg in segments:
            cls = label_segment(seg, mask, config.label_radius)
            if cls == UNKNOWN:
                stats["unknown"] += 1
                continue
            try:
                vectors = {s: fn(seg) for s, (_, fn) in extractors.items()}
            except EmptyDataError as exc:
                log.warning("%s: dropping segment %d: %s", image_id, seg.id, exc)
                stats["dropped"] += 1
                continue
            for s, v in vectors.items():
                rows[s].append(v)
            keys.append((image_id, seg.id))
            labels.append(1 if cls == "artery" else 0)
            stats["used"] += 1
        for s, (sid, _) in extractors.items():
            sids[s] = sid
        provenance[image_id] = stats
    if not keys:
        raise EmptyDataError("no usable labelled segments in the input images")
    image_ids = [k[0] for k in keys]
    seg_ids = [k[1] for k in keys]
    return {s: Dataset(np.vstack(rows[s]), labels, image_ids, seg_ids, sids[s], provenance)
            for s in schemas}


def build_dataset(items, config: RunConfig = RunConfig(), schema: str = "msri_lbp") -> Dataset:
    return build_datasets(items, config, (schema,))[schema]


# --- CSV ----------------------------------------------------------------

def format_dataset_csv(ds: Dataset) -> str:
    buf = io.StringIO()
    buf.write(f"# schema_id={ds.schema_id}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["image_id", "segment_id", "class"] + [f"f{i}" for i in range(ds.n_features)])
    for row, (image_id, seg_id, cls) in enumerate(zip(ds.image_ids, ds.segment_ids.tolist(), ds.class_names)):
        writer.writerow([image_id, seg_id, cls] + [repr(float(v)) for v in ds.X[row]])
    return buf.getvalue()


def save_dataset_csv(ds: Dataset, path) -> None:
    imaging.atomic_write_text(path, format_dataset_csv(ds))


def parse_dataset_csv(text: str, require_labels: bool = True) -> Dataset:
    """Parse the dataset CSV; with ``require_labels=False`` blank classes map to vein
    and are meant to be ignored (prediction input)."""
    lines = text.splitlines()
    schema_id = ""
    if lines and lines[0].startswith("#"):
        head = lines.pop(0)[1:].strip()
        if head.startswith("schema_id="):
            schema_id = head[len("schema_id="):]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyDataError("empty dataset CSV") from None
    if header[:3] != ["image_id", "segment_id", "class"]:
        raise SchemaError("dataset CSV header must start with image_id,segment_id,class")
    n_feat = len(header) - 3
    if header[3:] != [f"f{i}" for i in range(n_feat)]:
        raise SchemaError("feature columns must be named f0..fN in order")
    X, y, image_ids, seg_ids = [], [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise SchemaError(f"CSV row {lineno}: expected {len(header)} fields, got {len(row)}")
        cls = row[2].strip()
        if cls not in ("artery", "vein") and (require_labels or cls not in ("", UNKNOWN)):
            raise SchemaError(f"CSV row {lineno}: class must be artery or vein, got {cls!r}")
        try:
            X.append([float(v) for v in row[3:]])
            seg_ids.append(int(row[1]))
        except ValueError as exc:
            raise SchemaError(f"CSV row {lineno}: {exc}") from exc
        image_ids.append(row[0])
        y.append(1 if cls == "artery" else 0)
    if not X:
        raise EmptyDataError("dataset CSV has no samples")
    return Dataset(np.array(X, dtype=np.float64), y, image_ids, seg_ids, schema_id)


def load_dataset_csv(path, require_labels: bool = True) -> Dataset:
    return parse_dataset_csv(Path(path).read_text(), require_labels)
