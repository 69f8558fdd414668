"""Command-line front end: ``avlbp <subcommand> ...``.

Every subcommand reads the flat ``key = value`` run configuration given by
``--config`` (optional), then applies ``--set key=value`` overrides and
finally its own dedicated flags.  Exit codes: 0 success, 1 usage error,
2 data error.  Outputs are written atomically.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import classify, evaluation, features, imaging, segmentation, skeleton, synth
from .config import ConfigError, RunConfig, load_config
from .errors import AvlbpError, SchemaError

log = logging.getLogger("avlbp")

TREE_KINDS = ("cart", "random_tree", "random_forest", "bagging_cart")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --- config plumbing ----------------------------------------------------

def resolve_config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    for key, dest in getattr(args, "_config_flags", {}).items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = value
    return config.replace(**overrides) if overrides else config


def classifier_spec(config: RunConfig) -> classify.ClassifierSpec:
    """Classifier spec described by the ``classifier*`` config keys."""
    kind = config.classifier
    hp = {}
    if kind in TREE_KINDS:
        hp["max_depth"] = config.max_depth
        hp["min_leaf"] = config.min_leaf
    if kind in ("random_forest", "bagging_cart"):
        hp["n_trees"] = config.n_trees
    if kind == "majority_voting":
        hp["members"] = [m.strip() for m in config.voting_members.split(",") if m.strip()]
    return classify.ClassifierSpec(kind, hp, config.classifier_seed)


def synth_params(config: RunConfig, index: int) -> synth.SynthParams:
    return synth.SynthParams(
        width=config.synth_width, height=config.synth_height, n_vessels=config.synth_vessels,
        noise_sigma=config.synth_noise_sigma, reflex_amplitude=config.synth_reflex_amplitude,
        seed=config.synth_seed + index)


def synth_items(config: RunConfig):
    for i in range(config.synth_images):
        res = synth.generate(synth_params(config, i))
        yield f"synth{i:03d}", res.image, res.mask


def schema_dataset(items, config: RunConfig, schema: str) -> features.Dataset:
    if schema == "pca":
        base = features.build_dataset(items, config, "rgb")
        return features.pca_dataset(base, config.pca_components)[0]
    return features.build_dataset(items, config, schema)


# --- subcommands --------------------------------------------------------

def cmd_segment(args, config):
    img = imaging.load_image(args.image)
    field = imaging.extract_field(img, config.segment_channel)
    bank = segmentation.build_filter_bank(config.mf_sigma, config.mf_length, config.mf_orientations)
    mfr = segmentation.matched_filter_response(field, bank)
    params = segmentation.ProbeParams(
        config.probe_threshold_high, config.probe_threshold_low, config.probe_threshold_step,
        config.probe_min_region_size, config.probe_max_region_size, config.probe_fill_ratio_limit)
    mask = segmentation.threshold_probe(mfr, params)
    imaging.save_binary_mask(mask, args.output)
    if args.mfr:
        segmentation.save_float_grid(mfr, args.mfr)
    log.info("%s: %d vessel pixels", args.image, int(mask.sum()))


def cmd_skeletonize(args, config):
    mask = imaging.load_binary_mask(args.mask)
    segs = skeleton.extract_segments(mask, config.min_object_size, config.max_spur_length,
                                     config.min_segment_length)
    skeleton.save_segments(segs, args.output)
    log.info("%s: %d segments", args.mask, len(segs))


def _pairs(args):
    if len(args.images) != len(args.masks):
        raise UsageError(f"got {len(args.images)} images but {len(args.masks)} masks")
    items = []
    for img_path, mask_path in zip(args.images, args.masks):
        img = imaging.load_image(img_path)
        items.append((Path(img_path).stem, img, imaging.load_label_mask(mask_path, img.shape)))
    return items


def cmd_features(args, config):
    if args.synth:
        if args.images or args.masks:
            raise UsageError("--synth cannot be combined with --images/--masks")
        items = list(synth_items(config))
    else:
        if not args.images:
            raise UsageError("give --images and --masks, or --synth")
        items = _pairs(args)
    ds = schema_dataset(items, config, args.schema)
    features.save_dataset_csv(ds, args.output)
    log.info("%s: %d samples x %d features (%s)", args.output, len(ds), ds.n_features, ds.schema_id)


def cmd_train(args, config):
    ds = features.load_dataset_csv(args.dataset)
    model = classify.train(classifier_spec(config), ds)
    classify.save_model(model, args.output)


def format_predictions(ds: features.Dataset, scores) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["image_id", "segment_id", "label", "artery_score"])
    for (image_id, seg_id), s in zip(ds.keys, scores):
        writer.writerow([image_id, seg_id, "artery" if s >= 0.5 else "vein", repr(float(s))])
    return buf.getvalue()


def load_predictions(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and not {"image_id", "segment_id", "label"} <= set(rows[0]):
        raise SchemaError(f"{path}: predictions need image_id, segment_id and label columns")
    return rows


def cmd_predict(args, config):
    model = classify.load_model(args.model)
    ds = features.load_dataset_csv(args.dataset, require_labels=False)
    if ds.schema_id != model.schema_id:
        raise SchemaError(f"dataset schema {ds.schema_id!r} does not match model schema {model.schema_id!r}")
    imaging.atomic_write_text(args.output, format_predictions(ds, classify.predict_dataset(model, ds)))


def _load_spec(args, config):
    if args.spec:
        return classify.ClassifierSpec.from_json(json.loads(Path(args.spec).read_text()))
    return classifier_spec(config)


def cmd_evaluate(args, config):
    ds = features.load_dataset_csv(args.dataset)
    spec = _load_spec(args, config)
    report = evaluation.cross_validate(spec, ds, config.cv_folds, config.cv_seed,
                                       config.cv_group_by_image, config=config.as_dict())
    prefix = args.output
    imaging.atomic_write_text(f"{prefix}.txt", report.to_text())
    imaging.atomic_write_text(f"{prefix}.json", report.to_json_text())
    print(f"recognition_rate {report.recognition_rate:.2f} auc {report.auc:.4f}")


def cmd_compare(args, config):
    datasets = {}
    for item in args.datasets:
        name, _, path = item.rpartition("=")
        ds = features.load_dataset_csv(path)
        datasets[name or ds.schema_id] = ds
    kinds = [k.strip() for k in args.classifiers.split(",") if k.strip()]
    specs = [classifier_spec(config.replace(classifier=k)) for k in kinds]
    table = evaluation.compare(specs, datasets, config.cv_folds, config.cv_seed, config.cv_group_by_image)
    text = table.render("rate") + "\n" + table.render("auc")
    if args.output:
        imaging.atomic_write_text(args.output, text)
    else:
        sys.stdout.write(text)


def cmd_overlay(args, config):
    img = imaging.load_image(args.image)
    image_id = args.image_id or Path(args.image).stem
    segs = (skeleton.load_segments(args.segments) if args.segments
            else features.vessel_segments(img, config))
    classes = {int(r["segment_id"]): r["label"] for r in load_predictions(args.predictions)
               if r["image_id"] == image_id}
    if not classes:
        log.warning("no predictions for image id %r", image_id)
    imaging.save_overlay(img, segs, classes, args.output)


def cmd_synth(args, config):
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(config.synth_images):
        res = synth.generate(synth_params(config, i))
        imaging.save_image(res.image, out / f"synth{i:03d}_image.png")
        imaging.save_label_mask(res.mask, out / f"synth{i:03d}_mask.png")
    log.info("wrote %d image/mask pairs to %s", config.synth_images, out)


# --- parser -------------------------------------------------------------

def _flag(p, name, key, **kw):
    """Add a flag that overrides config key ``key``."""
    dest = key
    p.add_argument(name, dest=dest, default=None, help=f"{kw.pop('help', '')} (config key {key})", **kw)
    p.set_defaults(_config_flags={**p.get_default("_config_flags"), key: dest})


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="avlbp", description="Artery/vein classification of retinal vessel segments "
                                                 "with multiscale rotation-invariant LBP features.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="run configuration file (key = value lines)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key; may repeat")
        p.set_defaults(func=func, _config_flags={})
        return p

    p = add("segment", cmd_segment, "matched filter + threshold probing: image -> binary vessel mask PNG")
    p.add_argument("image", help="PNG or PPM fundus image")
    p.add_argument("-o", "--output", required=True, help="output mask PNG")
    p.add_argument("--mfr", help="also write the matched filter response as a float grid")
    _flag(p, "--channel", "segment_channel", help="field to filter: red, green, blue, luminance or index")

    p = add("skeletonize", cmd_skeletonize, "binary mask -> centerline segments text file")
    p.add_argument("mask", help="binary vessel mask PNG")
    p.add_argument("-o", "--output", required=True, help="output segments file")

    p = add("features", cmd_features, "image/label-mask pairs -> dataset CSV")
    p.add_argument("--images", nargs="+", default=[], help="fundus images")
    p.add_argument("--masks", nargs="+", default=[], help="label masks, one per image, same order")
    p.add_argument("--synth", action="store_true", help="use the synthetic generator (synth_* keys) as input")
    p.add_argument("--schema", choices=("msri_lbp", "rgb", "pca"), default="msri_lbp",
                   help="feature schema (default msri_lbp)")
    p.add_argument("-o", "--output", required=True, help="output dataset CSV")

    p = add("train", cmd_train, "dataset CSV -> model file")
    p.add_argument("dataset", help="labelled dataset CSV")
    p.add_argument("-o", "--output", required=True, help="output model file")
    _flag(p, "--classifier", "classifier", choices=classify.KINDS, help="classifier kind")
    _flag(p, "--seed", "classifier_seed", help="classifier seed")
    _flag(p, "--n-trees", "n_trees", help="ensemble size")

    p = add("predict", cmd_predict, "model + dataset CSV -> predictions CSV")
    p.add_argument("model", help="model file from 'train'")
    p.add_argument("dataset", help="dataset CSV (class column may be blank)")
    p.add_argument("-o", "--output", required=True, help="output predictions CSV")

    p = add("evaluate", cmd_evaluate, "k-fold cross-validation report (PREFIX.txt and PREFIX.json)")
    p.add_argument("dataset", help="labelled dataset CSV")
    p.add_argument("-o", "--output", required=True, metavar="PREFIX", help="report path prefix")
    p.add_argument("--spec", help="classifier spec JSON (kind, hyperparameters, seed); "
                                  "overrides the classifier config keys")
    _flag(p, "--classifier", "classifier", choices=classify.KINDS, help="classifier kind")
    _flag(p, "--seed", "classifier_seed", help="classifier seed")
    _flag(p, "--folds", "cv_folds", help="number of folds")
    _flag(p, "--cv-seed", "cv_seed", help="fold assignment seed")
    _flag(p, "--group-by-image", "cv_group_by_image", action="store_const", const="true",
          help="keep each image's segments in one fold")

    p = add("compare", cmd_compare, "cross-validate several classifiers on several feature sets")
    p.add_argument("datasets", nargs="+", metavar="[NAME=]CSV",
                   help="dataset CSVs describing the same segments; NAME defaults to the schema id")
    p.add_argument("--classifiers", default="naive_bayes,cart,random_tree,random_forest,"
                                            "bagging_cart,majority_voting",
                   help="comma-separated classifier kinds")
    p.add_argument("-o", "--output", help="output text file (default stdout)")
    _flag(p, "--folds", "cv_folds", help="number of folds")
    _flag(p, "--cv-seed", "cv_seed", help="fold assignment seed")

    p = add("overlay", cmd_overlay, "paint classified centerlines red (artery) / blue (vein)")
    p.add_argument("image", help="fundus image")
    p.add_argument("predictions", help="predictions CSV from 'predict'")
    p.add_argument("-o", "--output", required=True, help="output PNG")
    p.add_argument("--segments", help="segments file; recomputed from the image when omitted")
    p.add_argument("--image-id", help="image id in the predictions (default: image file stem)")

    p = add("synth", cmd_synth, "write synthetic image/label-mask pairs")
    p.add_argument("-o", "--output-dir", required=True, help="output directory")
    _flag(p, "--count", "synth_images", help="number of images")
    _flag(p, "--seed", "synth_seed", help="seed of the first image")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        config = resolve_config(args)
    except (ConfigError, OSError) as exc:
        print(f"avlbp: {exc}", file=sys.stderr)
        return 1
    try:
        args.func(args, config)
    except (UsageError, ConfigError) as exc:
        print(f"avlbp {args.command}: {exc}", file=sys.stderr)
        return 1
    except (AvlbpError, ValueError, OSError) as exc:
        print(f"avlbp {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
