"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line.  Run with `pytest -v -s tests/test_acceptance.py`.

The headline full-scale numbers (~0.99 accuracy on APTOS with pretrained
DenseNet121/InceptionV3 branches) need GPU-scale training and are NOT
reproduced here; criteria 2-11 check the machinery with independent
oracles and a desk-scale end-to-end run instead.
"""
import functools
import json
import math
from pathlib import Path

import numpy as np
import pytest

import drstack as ds
from drstack.config import smoke_config
from drstack.dataset import DatasetManifest, SampleRecord
from drstack.labels import source_id
from drstack.model import META_LAYER_PLAN
from drstack.pipeline import run_pipeline

REPO_ROOT = Path(__file__).resolve().parents[1]


def criterion(number, title):
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"ACCEPTANCE {number:2d} FAIL: {title}")
                raise
            print(f"ACCEPTANCE {number:2d} PASS: {title}")

        return run

    return wrap


@pytest.fixture(scope="module")
def smoke_runs(tmp_path_factory):
    """Two end-to-end runs with the same pinned config and seed."""
    root = tmp_path_factory.mktemp("acceptance")
    reports = []
    for tag in ("first", "second"):
        cfg = smoke_config(root / tag, seed=0)
        reports.append((cfg, run_pipeline(cfg)))
    return reports


@criterion(1, "headline full-scale figures are out of desk scope and documented as such")
def test_headline_scope_statement():
    readme = (REPO_ROOT / "README.md").read_text()
    assert "0.99" in readme and "not" in readme.lower()


@criterion(2, "ordinal encoding round-trips and grade 4 encodes to [1,1,1,1]")
def test_ordinal_round_trip():
    for grade in range(5):
        assert ds.decode(ds.encode(grade), 0.5) == grade
    assert ds.encode(4).tolist() == [1, 1, 1, 1]


@criterion(3, "resampler hits 700 per class exactly with tight multiplicities")
def test_resampler_exactness():
    counts = {0: 1543, 1: 314, 2: 849, 3: 164, 4: 251}
    plan = ds.build_resample_plan(counts, 700, seed=0)
    assert sum(len(m) for m in plan.mapping.values()) == 3500
    for cls, n in counts.items():
        mapping = plan.mapping[cls]
        assert len(mapping) == 700
        base = 700 // n
        multiplicities = np.bincount(mapping, minlength=n)
        assert set(multiplicities.tolist()) <= {base, base + 1}
    class3 = np.bincount(plan.mapping[3], minlength=164)
    assert int((class3 == 5).sum()) == 44  # 700 = 4 * 164 + 44


def _shifted(img, dy, dx):
    """img sampled at clamped (y+dy, x+dx): edge-replicated shift."""
    h, w = img.shape[:2]
    rows = np.clip(np.arange(h) + dy, 0, h - 1)
    cols = np.clip(np.arange(w) + dx, 0, w - 1)
    return img[rows][:, cols]


def blur_direct_summation(img, sigma, half):
    """Direct weighted sum over the (2k+1)^2 window, nothing shared with
    the separable implementation."""
    weights = {}
    for j in range(-half, half + 1):
        for i in range(-half, half + 1):
            weights[(j, i)] = math.exp(-(i * i) / (2 * sigma**2) - (j * j) / (2 * sigma**2))
    total = sum(weights.values())
    out = np.zeros_like(img)
    for (j, i), w in weights.items():
        out += (w / total) * _shifted(img, j, i)
    return out


@criterion(4, "gaussian blur matches an independent direct-summation oracle")
def test_blur_oracle():
    rng = np.random.default_rng(42)
    kernel = ds.GaussianKernelSpec(1.0, 1.0, 3)
    worst = 0.0
    for _ in range(20):
        img = rng.random((32, 32, 3))
        ours = ds.gaussian_blur(img, kernel)
        reference = blur_direct_summation(img, 1.0, 3)
        worst = max(worst, float(np.abs(ours - reference).max()))
    assert worst < 1e-6, f"max abs error {worst}"
    constant = np.full((32, 32, 3), 0.37)
    assert np.abs(ds.gaussian_blur(constant, kernel) - 0.37).max() < 1e-6


def _enumerate_positions(extent, window, stride):
    count, start = 0, 0
    while start + window <= extent:
        count += 1
        start += stride
    return count


@criterion(5, "conv/pool shape formulas match window enumeration on the full grid")
def test_shape_formula_grid():
    conv_expect = {}
    for n in range(1, 65):
        for f in range(1, 9):
            for s in range(1, 5):
                for p in range(0, 4):
                    if n + 2 * p >= f:
                        conv_expect[(n, f, s, p)] = _enumerate_positions(n + 2 * p, f, s)
    mismatches = 0
    for f in range(1, 9):
        for s in range(1, 5):
            for p in range(0, 4):
                spec = ds.ConvSpec(f, 7, p, s)
                for x1 in range(1, 65):
                    if (x1, f, s, p) not in conv_expect:
                        continue
                    for y1 in range(1, 65):
                        if (y1, f, s, p) not in conv_expect:
                            continue
                        out = ds.conv_output_shape(ds.VolumeShape(x1, y1, 3), spec)
                        if (
                            out.width != conv_expect[(x1, f, s, p)]
                            or out.height != conv_expect[(y1, f, s, p)]
                            or out.depth != 7
                        ):
                            mismatches += 1
    for f in range(1, 9):
        for s in range(1, 5):
            spec = ds.PoolSpec(f, s)
            for x1 in range(f, 65):
                for y1 in range(f, 65):
                    out = ds.pool_output_shape(ds.VolumeShape(x1, y1, 3), spec)
                    if (
                        out.width != _enumerate_positions(x1, f, s)
                        or out.height != _enumerate_positions(y1, f, s)
                        or out.depth != 3
                    ):
                        mismatches += 1
    assert mismatches == 0


def qwk_double_loop(cm):
    cm = np.asarray(cm, dtype=float)
    n = cm.shape[0]
    total = cm.sum()
    row, col = cm.sum(axis=1), cm.sum(axis=0)
    num = den = 0.0
    for i in range(n):
        for j in range(n):
            w = (i - j) ** 2 / (n - 1) ** 2
            num += w * cm[i, j]
            den += w * row[i] * col[j] / total
    return 1.0 - num / den


@criterion(6, "quadratic weighted kappa matches the brute-force double loop")
def test_qwk_oracle():
    rng = np.random.default_rng(7)
    for _ in range(200):
        actual = rng.integers(0, 5, size=rng.integers(5, 80))
        predicted = rng.integers(0, 5, size=len(actual))
        cm = ds.confusion(actual, predicted)
        assert abs(ds.quadratic_weighted_kappa(cm) - qwk_double_loop(cm)) < 1e-9
    assert ds.quadratic_weighted_kappa(np.diag([9, 1, 5, 2, 3])) == 1.0
    cm = ds.confusion(rng.integers(0, 5, 60), rng.integers(0, 5, 60))
    base = ds.quadratic_weighted_kappa(cm)
    for scale in (2, 13):
        assert abs(ds.quadratic_weighted_kappa(cm * scale) - base) < 1e-12


@criterion(7, "binary cross-entropy value and gradient are correct")
def test_bce_correctness():
    value = ds.bce_loss(np.array([0.9, 0.8, 0.2, 0.1]), np.array([1.0, 1.0, 0.0, 0.0]))
    assert abs(value - 0.1643) < 1e-4
    rng = np.random.default_rng(11)
    eps = 1e-6
    for _ in range(20):
        pred = rng.uniform(0.05, 0.95, size=4)
        target = (rng.random(4) > 0.5).astype(float)
        grad = ds.bce_grad(pred, target)
        for j in range(4):
            up, down = pred.copy(), pred.copy()
            up[j] += eps
            down[j] -= eps
            fd = (ds.bce_loss(up, target) - ds.bce_loss(down, target)) / (2 * eps)
            assert abs(fd - grad[j]) / max(abs(fd), 1e-8) < 1e-4


@criterion(8, "branch and meta architectures conform to the layer listing")
def test_architecture_conformance():
    spec = ds.backbone_spec("tiny-cnn", input_size=224)
    branch = ds.build_branch(spec, ds.BranchHeadSpec(), seed=0)
    signature = branch.structural_signature()
    # backbone blocks, then: pooling -> dense(+relu) -> dropout -> dense(4) -> sigmoid
    assert signature[-6:] == ("GlobalAvgPool", "Dense", "ReLU", "Dropout", "Dense", "Sigmoid")
    out = branch.predict(np.random.default_rng(0).random((2, 224, 224, 3)))
    assert out.shape == (2, 4) and ((out > 0) & (out < 1)).all()

    meta = ds.build_meta(ds.MetaModelSpec(), seed=0)
    expected_meta = (
        "Dense", "ReLU", "Dense", "ReLU", "Dropout",
        "Dense", "ReLU", "Dense", "ReLU", "Dropout",
        "Dense", "ReLU", "Dense", "ReLU", "Dense", "ReLU",
        "Dense", "Sigmoid",
    )
    assert meta.structural_signature() == expected_meta
    assert META_LAYER_PLAN == (
        "dense_relu", "dense_relu", "dropout", "dense_relu", "dense_relu",
        "dropout", "dense_relu", "dense_relu", "dense_relu", "sigmoid",
    )
    mout = meta.predict(np.random.default_rng(1).random((3, 8)))
    assert mout.shape == (3, 4) and ((mout > 0) & (mout < 1)).all()
    # closed-form parameter count over 8->64->64->32->32->16->8->4->4
    chain = [8, 64, 64, 32, 32, 16, 8, 4, 4]
    hand_sum = sum(a * b + b for a, b in zip(chain[:-1], chain[1:]))
    assert meta.network.count_params() == hand_sum == 8592


@criterion(9, "end-to-end smoke run learns the synthetic task and stacking holds up")
def test_end_to_end_smoke(smoke_runs):
    cfg, report = smoke_runs[0]
    for name, path in report.artifacts.items():
        assert path.exists(), f"missing artifact {name}"
    ensemble = report.ensemble_report
    b1, b2 = report.branch_val_qwk()
    assert ensemble.accuracy >= 0.8, f"accuracy {ensemble.accuracy}"
    assert ensemble.qwk >= 0.6, f"qwk {ensemble.qwk}"
    assert ensemble.qwk >= max(b1, b2) - 0.05, f"ensemble {ensemble.qwk} vs branches {b1}, {b2}"


@criterion(10, "identical config and seed reproduce identical metrics files")
def test_determinism(smoke_runs):
    (cfg_a, _), (cfg_b, _) = smoke_runs
    metrics_a = json.loads((cfg_a.output_dir / "metrics.json").read_text())
    metrics_b = json.loads((cfg_b.output_dir / "metrics.json").read_text())
    assert metrics_a["confusion"] == metrics_b["confusion"]
    for key in ("accuracy", "precision", "recall", "f1", "qwk"):
        assert abs(metrics_a[key] - metrics_b[key]) <= 1e-9
    for name in ("branch1", "branch2", "meta"):
        hist_a = (cfg_a.output_dir / f"history_{name}.csv").read_text().splitlines()
        hist_b = (cfg_b.output_dir / f"history_{name}.csv").read_text().splitlines()
        assert hist_a[0] == hist_b[0]
        for row_a, row_b in zip(hist_a[1:], hist_b[1:]):
            for cell_a, cell_b in zip(row_a.split(","), row_b.split(",")):
                assert abs(float(cell_a) - float(cell_b)) <= 1e-9


@criterion(11, "resampling never leaks into or duplicates validation records")
def test_leakage_guard():
    rng = np.random.default_rng(23)
    for trial in range(50):
        records = []
        for grade in range(5):
            for i in range(int(rng.integers(2, 20))):
                records.append(SampleRecord(f"t{trial}_g{grade}_{i}", None, grade))
        manifest = DatasetManifest(tuple(records))
        train, val = ds.split(manifest, 0.75, seed=trial)
        plan = ds.build_resample_plan(train.class_counts(), 10, seed=trial)
        resampled = ds.apply_resample_plan(plan, train)

        val_ids = [r.id for r in val.records]
        assert len(set(val_ids)) == len(val_ids)
        resampled_sources = {source_id(r.id) for r in resampled.records}
        assert resampled_sources.isdisjoint(set(val_ids))
        assert {source_id(r.id) for r in val.records} == set(val_ids)
