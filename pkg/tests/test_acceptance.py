"""Acceptance suite: twelve criteria, each printing one PASS/FAIL line.

The trend criteria train the small backbone on a synthetic benchmark at a
reduced learning rate and epoch budget so the whole file finishes in well
under half an hour on one CPU core.
"""
import time

import numpy as np
import pytest
from scipy import ndimage

from drkit import layers as L
from drkit import objectives as O
from drkit.config import FusionSpec, RunConfig
from drkit.data import SyntheticSpec, generate_synthetic
from drkit.ensemble import EnsembleSpec
from drkit.harness import DatasetCache, run
from drkit.metrics import quadratic_weighted_kappa
from drkit.optim import ScheduleSpec, lr_at
from drkit.preprocess import ClaheParams, GrahamParams, clahe, graham
from drkit.rng import Rng
from drkit.sampling import (
    SamplerSpec,
    SamplerState,
    class_balanced_weights,
    draw_epoch,
    progressive_weights,
)

from gradcheck import numeric_grad, rel_error
from oracles import qwk_direct

BENCH = SyntheticSpec(image_side=64, split_sizes=(1000, 500, 1000), seed=1)
PAIRED = SyntheticSpec(image_side=64, split_sizes=(1000, 500, 1000), corrupt_fraction=0.2, seed=2)

# Shared training recipe for the trend criteria.
BASE = RunConfig(resolution=32, epochs=15).replace(**{"schedule.lr0": 0.0005, "loss.kind": "mse"})
FUSION = FusionSpec(enabled=True, lr=0.002)

CACHE = DatasetCache()


@pytest.fixture(scope="module")
def bench_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("bench")
    generate_synthetic(BENCH, root)
    return root


@pytest.fixture(scope="module")
def paired_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("paired")
    generate_synthetic(PAIRED, root)
    return root


@pytest.fixture
def verdict(capsys):
    def report(number, ok, detail, seconds, budget):
        ok = bool(ok) and seconds < budget
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {detail}  ({seconds:.1f}s, budget {budget:.0f}s)")
        assert ok, detail

    return report


def _test_kappa(config, root):
    return run(config, root, cache=CACHE).report


# ---- exact-math criteria ----------------------------------------------------

def test_criterion_01_metric_oracle(verdict):
    t = time.time()
    r = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        cm = r.integers(0, 101, size=(5, 5))
        worst = max(worst, abs(quadratic_weighted_kappa(cm) - qwk_direct(cm)))
    perfect = quadratic_weighted_kappa(np.diag([3, 1, 4, 1, 5]))
    anti = quadratic_weighted_kappa(np.array([[0, 7], [7, 0]]))
    ok = worst <= 1e-12 and perfect == 1.0 and anti == -1.0
    verdict(1, ok, f"max |diff|={worst:.2e}, diagonal={perfect}, anti-diagonal={anti}", time.time() - t, 5)


def _loss_fns():
    yield "ce", lambda p, y: O.cross_entropy(p, y)
    yield "focal", lambda p, y: O.focal(p, y, 2.0)
    yield "kappa", O.kappa_loss
    yield "kappa_plus_ce", lambda p, y: O.kappa_plus_ce(p, y, 0.5)


def _layer_checks(r):
    """(name, forward, backward, input) for each layer at a fresh random instance."""
    x = r.normal(size=(3, 6))
    w, b = r.normal(size=(4, 6)), r.normal(size=4)
    yield "linear.input", lambda v: L.linear_forward(v, w, b), lambda g: L.linear_backward(g, x, w)[0], x
    yield "linear.weight", lambda v: L.linear_forward(x, v, b), lambda g: L.linear_backward(g, x, w)[1], w
    yield "linear.bias", lambda v: L.linear_forward(x, w, v), lambda g: L.linear_backward(g, x, w)[2], b
    im = r.normal(size=(2, 3, 6, 6))
    kern, kb = r.normal(size=(2, 3, 3, 3)), r.normal(size=2)
    _, cols = L.conv_forward(im, kern, kb)
    yield "conv.input", lambda v: L.conv_forward(v, kern, kb)[0], \
        lambda g: L.conv_backward(g, cols, im.shape, kern)[0], im
    yield "conv.weight", lambda v: L.conv_forward(im, v, kb)[0], \
        lambda g: L.conv_backward(g, cols, im.shape, kern)[1], kern
    yield "conv.bias", lambda v: L.conv_forward(im, kern, v)[0], \
        lambda g: L.conv_backward(g, cols, im.shape, kern)[2], kb
    yield "relu", L.relu_forward, lambda g: L.relu_backward(g, im), im
    _, arg = L.maxpool2d_forward(im, 2)
    yield "maxpool2d", lambda v: L.maxpool2d_forward(v, 2)[0], lambda g: L.maxpool2d_backward(g, arg, im.shape), im
    yield "gap", L.gap_forward, lambda g: L.gap_backward(g, im.shape), im
    vec = r.normal(size=(3, 7))
    _, idx = L.maxpool1d_forward(vec, 2)
    yield "maxpool1d", lambda v: L.maxpool1d_forward(v, 2)[0], lambda g: L.maxpool1d_backward(g, idx, 7), vec
    logits = r.normal(size=(3, 5))
    yield "softmax", L.softmax, lambda g: L.softmax_backward(L.softmax(logits), g), logits


def test_criterion_02_gradient_suite(verdict):
    t = time.time()
    r = np.random.default_rng(2)
    worst = {}
    for _ in range(20):
        logits = r.normal(size=(6, 5))
        p = L.softmax(logits)
        y = r.integers(0, 5, size=6)
        for name, fn in _loss_fns():
            err = rel_error(fn(p, y).grad, numeric_grad(lambda: fn(p, y).value, p))
            # and end to end through the softmax, as used in training
            spec = O.LossSpec(name)
            err_logits = rel_error(O.compute_loss(spec, logits, y).grad,
                                   numeric_grad(lambda: O.compute_loss(spec, logits, y).value, logits))
            worst[name] = max(worst.get(name, 0.0), err, err_logits)
        s = r.uniform(-1, 5, size=(6, 1))
        d = np.abs(s[:, 0] - np.round(s[:, 0]))
        s[d < 1e-3, 0] += 0.01  # keep clear of the MAE / SmoothL1 kinks
        for kind in O.REGRESSION_LOSSES:
            err = rel_error(O.regression_loss(s, y, kind).grad,
                            numeric_grad(lambda: O.regression_loss(s, y, kind).value, s))
            worst[kind] = max(worst.get(kind, 0.0), err)
        for name, fwd, bwd, x in _layer_checks(r):
            g = r.normal(size=fwd(x).shape)
            err = rel_error(bwd(g), numeric_grad(lambda: float((fwd(x) * g).sum()), x))
            worst[name] = max(worst.get(name, 0.0), err)
    bad = {k: v for k, v in worst.items() if not v < 1e-4}
    verdict(2, not bad, f"{len(worst)} losses/layers x 20 instances, worst rel err {max(worst.values()):.1e}"
            + (f" failing {bad}" if bad else ""), time.time() - t, 60)


def test_criterion_03_schedule_exactness(verdict):
    t = time.time()
    lr0 = 0.001
    cos = ScheduleSpec("cosine", lr0, total_epochs=25)
    exp = ScheduleSpec("exponential", lr0, gamma=0.9)
    step = ScheduleSpec("multistep", lr0, milestones=(15, 20), factor=0.1)
    errs = [abs(lr_at(cos, 0) - lr0), abs(lr_at(cos, 25)), abs(lr_at(ScheduleSpec("cosine", lr0, total_epochs=24), 12) - lr0 / 2)]
    errs += [abs(lr_at(exp, k) - lr0 * 0.9 ** k) for k in range(26)]
    errs += [abs(lr_at(step, k) - lr0 * (1 if k < 15 else 0.1 if k < 20 else 0.1 * 0.1)) for k in range(26)]
    worst = max(errs)
    verdict(3, worst <= 1e-15, f"max deviation from closed forms {worst:.1e}", time.time() - t, 1)


def test_criterion_04_sampler_distributions(verdict):
    t = time.time()
    counts = [720, 200, 80, 40, 20]  # 36:1 between the extremes
    labels = np.repeat(np.arange(5), counts)
    plan = draw_epoch(SamplerState.from_spec(SamplerSpec("class_balanced"), labels), Rng(4), 100_000)
    freq = np.bincount(labels[plan], minlength=5) / plan.size
    dev = float(np.abs(freq - 0.2).max())
    exact = np.array_equal(progressive_weights(labels, 0.98, 0), class_balanced_weights(labels))
    verdict(4, dev < 0.02 and exact, f"max |freq - 1/5|={dev:.4f}, t=0 blend equals class-balanced: {exact}",
            time.time() - t, 10)


def _direct_graham(img, p):
    r = int(np.ceil(3 * p.theta))
    d = np.arange(-r, r + 1)
    g = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2 * p.theta ** 2))
    g /= g.sum()
    blur = np.stack([ndimage.convolve(ch, g, mode="mirror") for ch in img])
    return np.clip(p.alpha * img + p.beta * blur + p.gamma_offset, 0, 255)


def test_criterion_05_graham(verdict):
    t = time.time()
    p = GrahamParams()
    margin = int(3 * p.theta) + 1
    const_err = max(float(np.abs(graham(np.full((3, 80, 80), c), p)[:, margin:-margin, margin:-margin] - 128).max())
                    for c in (0.0, 55.0, 200.0, 255.0))
    r = np.random.default_rng(5)
    conv_err = 0.0
    for _ in range(10):
        img = r.uniform(0, 255, size=(3, 48, 48))
        conv_err = max(conv_err, float(np.abs(graham(img, p) - _direct_graham(img, p)).max()))
    verdict(5, const_err <= 1e-6 and conv_err <= 1e-6,
            f"constant->128 err {const_err:.1e}, direct convolution err {conv_err:.1e}", time.time() - t, 30)


def test_criterion_06_clahe(verdict):
    t = time.time()
    constant_ok = all(np.array_equal(clahe(np.full((3, 64, 64), float(c))), np.full((3, 64, 64), float(c)))
                      for c in (0, 77, 255))
    r = np.random.default_rng(6)
    worst = 0.0
    for _ in range(5):
        img = np.rint(r.beta(2, 4, size=(3, 50, 60)) * 255)
        out = clahe(img, ClaheParams(clip_limit=1e12, tile_grid=1))
        for ch in range(3):
            v = img[ch].astype(int).ravel()
            he = 255.0 * np.searchsorted(np.sort(v), v, side="right") / v.size
            worst = max(worst, float(np.abs(out[ch].ravel() - he).max()))
    verdict(6, constant_ok and worst <= 1.0, f"constant unchanged: {constant_ok}, max |CLAHE - HE|={worst:.3f}",
            time.time() - t, 30)


# ---- trend criteria on the synthetic benchmark -------------------------------

@pytest.mark.slow
def test_criterion_07_mse_beats_ce(bench_root, verdict):
    t = time.time()
    stats = {}
    for loss in ("ce", "mse"):
        reports = [_test_kappa(BASE.replace(**{"loss.kind": loss, "seed": s}), bench_root) for s in range(5)]
        stats[loss] = (np.mean([r["test"]["kappa"] for r in reports]),
                       np.mean([r["test"]["mean_quadratic_distance"] for r in reports]))
    (k_ce, d_ce), (k_mse, d_mse) = stats["ce"], stats["mse"]
    verdict(7, k_mse > k_ce and d_mse < d_ce,
            f"mean test kappa MSE {k_mse:.4f} vs CE {k_ce:.4f}; mean quadratic distance {d_mse:.4f} vs {d_ce:.4f}",
            time.time() - t, 1800)


@pytest.mark.slow
def test_criterion_08_resolution(bench_root, verdict):
    t = time.time()
    kappas = {}
    for side in (16, 64):
        kappas[side] = np.mean([_test_kappa(BASE.replace(resolution=side, seed=s), bench_root)["test"]["kappa"]
                                for s in range(3)])
    gain = kappas[64] - kappas[16]
    verdict(8, gain >= 0.05, f"kappa side 64 {kappas[64]:.4f} vs side 16 {kappas[16]:.4f}, gain {gain:+.4f}",
            time.time() - t, 1800)


@pytest.mark.slow
def test_criterion_09_paired_fusion(paired_root, verdict):
    t = time.time()
    gains = []
    for s in range(3):
        rep = _test_kappa(BASE.replace(seed=s, fusion=FUSION), paired_root)
        gains.append(rep["test"]["kappa"] - rep["test_backbone"]["kappa"])
    mean_gain = float(np.mean(gains))
    verdict(9, mean_gain > 0, f"fused minus backbone test kappa per seed {np.round(gains, 4).tolist()}, "
            f"mean {mean_gain:+.4f}", time.time() - t, 900)


@pytest.mark.slow
def test_criterion_10_seed_ensemble(bench_root, verdict):
    t = time.time()
    ens, single = [], []
    for d in range(3):
        seeds = tuple(range(100 + 5 * d, 105 + 5 * d))
        rep = _test_kappa(BASE.replace(ensemble=EnsembleSpec("multi_model", seeds)), bench_root)
        ens.append(rep["test"]["kappa"])
        single.append(float(np.mean(rep["test_members"])))
    worst = min(e - s for e, s in zip(ens, single))
    ok = np.mean(ens) >= np.mean(single) and worst >= -0.005
    verdict(10, ok, f"ensemble {np.round(ens, 4).tolist()} vs mean single {np.round(single, 4).tolist()}",
            time.time() - t, 1200)


def test_criterion_11_determinism(tiny_data, tmp_path, verdict):
    t = time.time()
    cfg = RunConfig(resolution=32, epochs=2, seed=7)
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        run(cfg, tiny_data, out_dir=out)
        outs.append(out)
    files = sorted(p.name for p in outs[0].iterdir() if p.name != "timing.json")
    same = all((outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files)
    has_ckpt = any(f.endswith(".ckpt") for f in files)
    verdict(11, same and has_ckpt and "report.json" in files,
            f"{len(files)} artifacts byte-identical across repeats: {same}", time.time() - t, 600)


def _gap(report, tail=5):
    epochs = report["members"][0]["epochs"][-tail:]
    return float(np.mean([e["train_kappa"] - e["val_kappa"] for e in epochs]))


@pytest.mark.slow
def test_criterion_12_sampler_overfitting(bench_root, verdict):
    t = time.time()
    gaps = {}
    for kind in ("instance", "class_balanced"):
        gaps[kind] = np.mean([_gap(_test_kappa(BASE.replace(seed=s, sampler=SamplerSpec(kind)), bench_root))
                              for s in range(3)])
    verdict(12, gaps["class_balanced"] > gaps["instance"],
            f"train-minus-validation kappa gap class-balanced {gaps['class_balanced']:+.4f} "
            f"vs instance {gaps['instance']:+.4f}", time.time() - t, 1200)
