"""File-level workflows behind the command line: synthesize, train, infer, evaluate."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import asm, cascade, fileio, metrics, nncore, synthdata
from .config import ConfigError
from .fusion import ViewpointSet

log = logging.getLogger(__name__)

PREDICTIONS_NAME = "predictions.tsv"
SHAPE_MODEL_NAME = "shape_model.bin"
# config keys that do not influence results and stay out of model sidecars
_VOLATILE_KEYS = ("data_dir", "model_dir", "out_dir", "jobs")


def default_jobs(jobs=0):
    return jobs if jobs and jobs > 0 else (os.cpu_count() or 1)


def synth(cfg, out_dir):
    arc_max = cfg.max_arc_deg
    # shape sizes are specified for 96 px images and scale with the image
    f = cfg.image_size / 96.0
    shape = synthdata.ShapeRanges()
    shape = replace(
        shape,
        base_radius=(shape.base_radius[0] * f, shape.base_radius[1] * f),
        center_jitter=shape.center_jitter * f,
    )
    ranges = synthdata.DatasetRanges(
        size=cfg.image_size,
        shape=shape,
        degradation=replace(synthdata.DegradationRanges(), arc_span_deg=(min(20.0, arc_max), arc_max)),
    )
    return synthdata.gen_dataset(out_dir, cfg.n_train, cfg.n_test, ranges, cfg.data_seed)


def level_configs(cfg):
    return [
        cascade.LevelConfig(s, na, nr)
        for s, na, nr in zip(cfg.scales, cfg.per_level("n_angle"), cfg.per_level("n_radius"))
    ]


def entry_name(entry):
    return f"{entry.split}_{Path(entry.image).stem}"


def load_split(manifest, split):
    entries = [e for e in synthdata.read_manifest(manifest) if e.split == split]
    if not entries:
        raise ConfigError(f"{manifest}: no '{split}' entries")
    return entries


def _check_writable(out_dir, sentinel, force):
    out = Path(out_dir)
    if (out / sentinel).exists() and not force:
        raise ConfigError(f"{out / sentinel} exists; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def train(cfg, manifest, out_dir, force=False, jobs=1):
    """Train the cascade and the shape model from the manifest's train split."""
    cfg.validate()
    configs = level_configs(cfg)
    out = _check_writable(out_dir, "cascade.json", force)
    entries = load_split(manifest, "train")
    images = [fileio.read_pgm(e.image) for e in entries]
    labels = [fileio.read_pgm(e.mask) for e in entries]
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ConfigError(f"training images differ in size: {sorted(shapes)}")
    (image_shape,) = shapes

    params = cascade.CascadeTrainParams(
        hidden=cfg.hidden,
        epochs=tuple(cfg.per_level("epochs")),
        init_std=cfg.init_std,
        optimizer=nncore.TrainConfig(cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_epsilon, cfg.clip_norm),
        uniform_init_value=cfg.uniform_init_value,
        views=ViewpointSet(cfg.viewpoint_offsets),
    )

    def on_level(k, _partial, reports):
        write_loss_csv(out / f"loss_level{k}.csv", reports)

    trained, curves = cascade.train_cascade(configs, images, labels, params, cfg.train_seed, jobs, on_level)
    trained.image_shape = image_shape
    meta = {k: v for k, v in asdict(cfg).items() if k not in _VOLATILE_KEYS}
    cascade.save_cascade(out, trained, {"train_config": meta})

    contours = [asm.sample_landmarks(lab) for lab in labels]
    shape_model = asm.build_shape_model(contours, cfg.asm_variance_kept)
    shape_model.save(out / SHAPE_MODEL_NAME)
    (out / "train.cfg").write_text(cfg.to_text())
    log.info("trained %d levels; shape model keeps %d modes", len(trained), shape_model.n_modes)
    return trained, curves


def write_loss_csv(path, reports):
    lines = ["epoch,mean_loss"] + [f"{r.epoch},{r.mean_loss!r}" for r in reports]
    Path(path).write_text("\n".join(lines) + "\n")


def read_loss_csv(path):
    rows = Path(path).read_text().splitlines()[1:]
    return [nncore.LossReport(int(e), float(v)) for e, v in (r.split(",") for r in rows)]


@dataclass
class InferResult:
    name: str
    contour: Path
    map: Path
    levels: list
    level_changes: list


def infer(model_dir, inputs, out_dir, per_level=False, raw=False, jobs=1, asm_iters=30, asm_profile_len=8):
    """Run the cascade and the shape-model fit on ``inputs`` (``(name, image path)`` pairs).

    Writes ``<name>_map.pgm`` and ``<name>_contour.txt`` per image (plus
    per-level maps on request) and a ``predictions.tsv`` index.
    """
    model_dir = Path(model_dir)
    casc = cascade.load_cascade(model_dir)
    shape_model = asm.ShapeModel.load(model_dir / SHAPE_MODEL_NAME)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def one(item):
        name, path = item
        img = fileio.read_pgm(path)
        final, levels = cascade.run_cascade(casc, img)
        for m in levels:
            if not np.all(np.isfinite(m.data)):
                raise nncore.NumericalError(f"{name}: non-finite prediction map")
        try:
            contour = asm.fit_asm(shape_model, final.data, iters=asm_iters, profile_len=asm_profile_len).contour
        except asm.NoEdgeError as exc:
            log.warning("%s: %s; keeping the initial contour", name, exc)
            contour = exc.contour
        res = InferResult(
            name, out / f"{name}_contour.txt", out / f"{name}_map.pgm", [], cascade.level_changes(levels)
        )
        contour.save(res.contour)
        fileio.write_pgm(res.map, final.data)
        if raw:
            fileio.write_raw_map(out / f"{name}_map.raw", final.data)
        if per_level:
            for k, m in enumerate(levels):
                p = out / f"{name}_level{k}.pgm"
                fileio.write_pgm(p, m.data)
                if raw:
                    p = out / f"{name}_level{k}.raw"
                    fileio.write_raw_map(p, m.data)
                res.levels.append(p)
        return res

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(one, inputs))
    else:
        results = [one(it) for it in inputs]
    lines = ["# name\tcontour\tmap\tlevels\tlevel_change"]
    for r in results:
        lv = ",".join(p.name for p in r.levels)
        ch = ",".join(f"{c:.6f}" for c in r.level_changes)
        lines.append(f"{r.name}\t{r.contour.name}\t{r.map.name}\t{lv}\t{ch}")
    (out / PREDICTIONS_NAME).write_text("\n".join(lines) + "\n")
    return results


def read_predictions(path):
    path = Path(path)
    if path.is_dir():
        path = path / PREDICTIONS_NAME
    preds = {}
    for line in path.read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        name, contour, pmap, levels = (line.split("\t") + [""] * 4)[:4]
        preds[name] = (
            path.parent / contour,
            path.parent / pmap,
            [path.parent / p for p in levels.split(",") if p],
        )
    return preds


def _load_prediction_mask(path, shape):
    path = Path(path)
    if path.suffix == ".pgm":
        return fileio.read_pgm(path) >= 0.5
    return asm.contour_to_mask(fileio.read_contour(path), shape[1], shape[0]) > 0.5


def _load_level_mask(path):
    path = Path(path)
    data = fileio.read_raw_map(path) if path.suffix == ".raw" else fileio.read_pgm(path)
    return data >= 0.5


@dataclass
class EvalResult:
    reports: list
    summary: metrics.MetricReport
    level_summaries: list
    unmatched: list


def evaluate(predictions, truth_manifest, out_dir, split="test"):
    """Score predicted contours (or masks) against the manifest's ground truth."""
    preds = read_predictions(predictions)
    entries = load_split(truth_manifest, split)
    truth_by_name = {entry_name(e): e for e in entries}
    unmatched = sorted(set(preds) ^ set(truth_by_name))
    for name in unmatched:
        log.warning("unmatched entry excluded: %s", name)
    names = sorted(set(preds) & set(truth_by_name))
    if not names:
        raise ConfigError("no prediction matches a ground-truth entry")
    reports = []
    level_reports = {}
    for name in names:
        truth = fileio.read_pgm(truth_by_name[name].mask) >= 0.5
        contour_path, _, level_paths = preds[name]
        pred = _load_prediction_mask(contour_path, truth.shape)
        reports.append(metrics.evaluate_masks(pred, truth, name))
        for k, lp in enumerate(level_paths):
            level_reports.setdefault(k, []).append(metrics.evaluate_masks(_load_level_mask(lp), truth, name))
    summary = metrics.mean_report(reports)
    level_summaries = [metrics.mean_report(level_reports[k], f"level{k}") for k in sorted(level_reports)]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "per_image.csv").write_text(metrics.per_image_csv(reports))
    (out / "summary.tsv").write_text(metrics.table_text([], summary))
    (out / "summary.txt").write_text(metrics.summary_keyvalue(summary, {"n_images": len(reports)}))
    if level_summaries:
        (out / "levels.tsv").write_text(metrics.table_text(level_summaries[:-1], level_summaries[-1]))
    return EvalResult(reports, summary, level_summaries, unmatched)
