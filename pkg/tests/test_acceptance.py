"""Acceptance suite. Each test records one PASS/FAIL line, printed at the end of the run.

The end-to-end criteria train the full default cascade twice (about 20 minutes
per run on one core).
"""
import itertools
import os
import re
import time

import numpy as np
import pytest

from polarseg import asm, cli, fusion, geometry, metrics, pipeline
from polarseg import synthdata as sd

TOL = 1e-12


def test_criterion_1_gradient_check(criterion, capsys):
    with criterion(1, "BPTT gradients match finite differences", 10.0) as c:
        code = cli.main(["gradcheck", "--input-dim", "3", "--hidden", "4", "--output-dim", "3", "--steps", "5",
                         "--step", "1e-5"])
        last = capsys.readouterr().out.splitlines()[-1]
        err = float(re.search(r"max relative error (\S+)", last).group(1))
        c.note(f"exit {code}, max relative error {err:.2e} (< 1e-4)")
        assert code == 0 and err < 1e-4


def test_criterion_2_geometry_round_trip(criterion):
    with criterion(2, "polar round trip and band partition", 1.0) as c:
        size = 96
        center = geometry.default_center((size, size))
        r_max = geometry.default_r_max((size, size))
        yy, xx = np.mgrid[:size, :size]
        r = np.hypot(xx - center[0], yy - center[1])
        img = np.clip(r / r_max, 0, 1)
        polar = geometry.serialize(img, n_angle=192, n_radius=192)
        back = geometry.deserialize(polar, size, size)
        sel = (r >= 2) & (r <= 0.95 * r_max)
        mae = float(np.abs(back - img)[sel].mean())
        exact = True
        rng = np.random.default_rng(0)
        for n_angle, s in [(80, 16), (80, 10), (80, 8), (192, 1), (192, 192)]:
            p = geometry.PolarImage(rng.random((n_angle, 48)), center, r_max, 0.3)
            again = geometry.assemble(geometry.partition(p, s), center, r_max)
            exact &= np.array_equal(again.data, p.data) and again.viewpoint_offset == p.viewpoint_offset
        c.note(f"annulus MAE {mae:.4f} (< 0.02), assemble(partition) exact: {exact}")
        assert mae < 0.02 and exact


def random_mask(rng, size=40):
    """Random blob: a thresholded smoothed noise field, never empty."""
    field = rng.random((size // 4, size // 4))
    mask = np.kron(field, np.ones((4, 4))) > rng.uniform(0.3, 0.7)
    mask[rng.integers(size), rng.integers(size)] = True
    return mask


def circle_points(radius, n=1024):
    t = 2 * np.pi * np.arange(n) / n
    return np.stack([radius * np.cos(t), radius * np.sin(t)], axis=1)


def test_criterion_3_metric_identities(criterion):
    with criterion(3, "overlap identities and concentric-circle Adb", 5.0) as c:
        rng = np.random.default_rng(3)
        worst_j = worst_c = 0.0
        for _ in range(100):
            pred, truth = random_mask(rng), random_mask(rng)
            m = metrics.overlap_metrics(pred, truth)
            worst_j = max(worst_j, abs(m.jaccard - m.dice / (2 - m.dice)))
            if m.dice > 0:
                worst_c = max(worst_c, abs(m.conformity - (3 * m.dice - 2) / m.dice))
        d = metrics.adb(circle_points(20.0), circle_points(23.0))
        c.note(f"jaccard err {worst_j:.1e}, conformity err {worst_c:.1e}, circle Adb {d:.4f}")
        assert worst_j <= TOL and worst_c <= TOL and abs(d - 3.0) <= 0.1


def test_criterion_7_asm_suite(criterion):
    with criterion(7, "shape model reconstruction, fit recovery and mode limits", 30.0) as c:
        train_seeds, _ = sd.split_seeds(0, 300, 60)
        ranges = sd.DatasetRanges()
        masks = [sd.gen_shape(s, ranges.shape, ranges.size)[1] for s in train_seeds]
        shapes = [asm.sample_landmarks(m).points for m in masks]

        full = asm.build_shape_model(shapes, variance_kept=1.0)
        recon = 0.0
        for pts in shapes:
            coeffs, pose = asm.project(full, pts, n_std=np.inf, iters=50)
            recon = max(recon, float(np.max(np.abs(asm.apply_similarity(full.shape(coeffs), pose) - pts))))

        model = asm.build_shape_model(shapes)
        errors, inside = [], True
        for mask, pts in zip(masks[:20], shapes[:20]):
            fit = asm.fit_asm(model, mask.astype(np.float64))
            errors.append(float(np.mean(np.linalg.norm(fit.contour.points - pts, axis=1))))
            inside &= bool(np.all(np.abs(fit.coeffs) <= model.limits() + 1e-12))
        c.note(
            f"reconstruction max err {recon:.1e} ({full.n_modes} modes), fit mean landmark err "
            f"{np.mean(errors):.3f} px over 20 shapes, coefficients within 3 sqrt(lambda): {inside}"
        )
        assert recon <= 1e-6 and np.mean(errors) < 1.0 and inside


def test_criterion_8_fusion_properties(criterion):
    with criterion(8, "fusion idempotence, permutation invariance and bounds", 1.0) as c:
        rng = np.random.default_rng(8)
        worst = 0.0
        for _ in range(50):
            maps = [fusion.PredictionMap(rng.random((32, 32)), np.ones((32, 32), bool)) for _ in range(3)]
            fused = fusion.fuse_views(maps).data
            worst = max(worst, float(np.max(np.abs(fusion.fuse_views([maps[0]] * 3).data - maps[0].data))))
            for perm in itertools.permutations(maps):
                worst = max(worst, float(np.max(np.abs(fusion.fuse_views(perm).data - fused))))
            stack = np.stack([m.data for m in maps])
            worst = max(worst, float(np.max(stack.min(axis=0) - fused)), float(np.max(fused - stack.max(axis=0))))
        c.note(f"worst violation {worst:.1e}")
        assert worst <= TOL


def run_pipeline(root):
    """synth, train, infer and eval with the default configuration, all paths relative to ``root``."""
    root.mkdir(parents=True, exist_ok=True)
    cwd = os.getcwd()
    os.chdir(root)
    try:
        steps = [
            ["synth", "--out", "data"],
            ["train", "--manifest", "data/manifest.tsv", "--out", "model"],
            ["infer", "--model", "model", "--manifest", "data/manifest.tsv", "--out", "pred", "--per-level", "--raw"],
            ["eval", "pred", "--manifest", "data/manifest.tsv", "--out", "report"],
        ]
        for args in steps:
            code = cli.main(args)
            assert code == 0, f"{args[0]} exited with {code}"
    finally:
        os.chdir(cwd)
    return root


def read_summary(path):
    return {k: float(v) for k, v in (line.split(" = ") for line in path.read_text().splitlines())}


def read_levels(path):
    rows = [line.split("\t") for line in path.read_text().splitlines()]
    col = rows[0].index("dice")
    return [float(r[col]) for r in rows[1:]]


@pytest.fixture(scope="session")
def pipeline_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("acceptance")
    start = time.perf_counter()
    first = run_pipeline(base / "run_a")
    elapsed = time.perf_counter() - start
    return {"first": first, "elapsed": elapsed, "base": base}


def test_criterion_4_end_to_end(criterion, pipeline_runs):
    # the pipeline ran inside the fixture; its time is checked against the budget here
    with criterion(4, "end-to-end boundary completion", 2 * 3600.0) as c:
        summary = read_summary(pipeline_runs["first"] / "report" / "summary.txt")
        elapsed = pipeline_runs["elapsed"]
        c.note(f"mean Dice {summary['dice']:.4f} (>= 0.90), mean Adb {summary['adb']:.3f} px (<= 3.0), "
               f"{int(summary['n_images'])} images, pipeline {elapsed / 60:.1f} min")
        assert summary["n_images"] == 60
        assert summary["dice"] >= 0.90 and summary["adb"] <= 3.0
        assert elapsed <= 2 * 3600.0


def test_criterion_5_cascade_trend(criterion, pipeline_runs):
    with criterion(5, "cascade level trend", 60.0) as c:
        d0, d1, d2 = read_levels(pipeline_runs["first"] / "report" / "levels.tsv")
        c.note(f"level Dice {d0:.4f} -> {d1:.4f} -> {d2:.4f} (need +0.005, then >= -0.005)")
        assert d1 >= d0 + 0.005 and d2 >= d1 - 0.005


def test_criterion_6_learning_curves(criterion, pipeline_runs):
    with criterion(6, "level-1 loss falls faster than level-0", 60.0) as c:
        ratios = []
        for k in (0, 1):
            rows = pipeline.read_loss_csv(pipeline_runs["first"] / "model" / f"loss_level{k}.csv")
            loss = {r.epoch: r.mean_loss for r in rows}
            ratios.append(loss[5] / loss[1])
        c.note(f"epoch-5 / epoch-1 mean loss: level0 {ratios[0]:.3f}, level1 {ratios[1]:.3f} (need level1 < level0)")
        assert ratios[1] < ratios[0]


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_9_determinism(criterion, pipeline_runs):
    with criterion(9, "repeated training is byte identical", 2 * 3600.0) as c:
        second = run_pipeline(pipeline_runs["base"] / "run_b")
        first = pipeline_runs["first"]
        compared = 0
        for sub in ("model", "report"):
            a, b = tree_bytes(first / sub), tree_bytes(second / sub)
            assert sorted(a) == sorted(b), f"{sub} file lists differ"
            differing = [k for k in a if a[k] != b[k]]
            assert not differing, f"{sub} files differ: {differing}"
            compared += len(a)
        assert (first / "model" / "level2.bin").exists()
        c.note(f"{compared} model and report files identical")
