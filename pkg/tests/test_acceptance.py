"""Acceptance criteria, one test each, at their stated tolerances.

Every test prints a ``PASS``/``FAIL`` verdict line; the lines are also
repeated in the terminal summary under "acceptance criteria".
"""
import time

import numpy as np
import pytest

from mepsnet.audit import grad_check, pink_noise_slope
from mepsnet.checkpoint import load_model, save_model, serialized_value_count
from mepsnet.metrics import evaluate_dataset, gaussian_window, psnr, ssim
from mepsnet.model import DESK_DEFAULT, DESK_TINY, PAPER_DEFAULT, MepsNet, SConv, count_for, count_parameters, \
    init_parameters, materialize_weight
from mepsnet.rng import Rng
from mepsnet.shdd import DistortionSpec, apply_entry, distort_region, generate_dataset, load_manifest, load_rgb
from mepsnet.tensor import Tensor
from mepsnet.train import DESK_TRAIN, load_pairs, model_restorer, train


def test_criterion_1_gradient_audit(verdict):
    t0 = time.perf_counter()
    rows = grad_check(DESK_TINY, seed=0, size=8, eps=1e-5)
    elapsed = time.perf_counter() - t0
    worst = max(rows, key=lambda r: r.rel_err)
    kinds = {r.name.split(".")[-1] for r in rows}
    covered = {"alpha", "templates", "w1", "w2", "w", "b"} <= kinds
    ok = worst.rel_err < 1e-6 and elapsed < 60 and covered
    verdict(1, "gradient audit", ok,
            f"worst rel_err {worst.rel_err:.2e} ({worst.name}) over {len(rows)} tensors in {elapsed:.1f}s")


def test_criterion_2_parameter_decoupling(verdict):
    one = count_for(PAPER_DEFAULT, n_experts=1)["total"]
    three = count_for(PAPER_DEFAULT, n_experts=3)["total"]
    five = count_for(PAPER_DEFAULT, n_experts=5)["total"]
    unshared = count_for(PAPER_DEFAULT, n_experts=1, shared=False)["total"]
    r3, r5, rs = three / one, five / one, unshared / one
    verdict(2, "parameter decoupling", r3 <= 1.20 and r5 <= 1.45 and rs >= 1.5,
            f"N3/N1={r3:.3f} (<=1.20) N5/N1={r5:.3f} (<=1.45) unshared/shared={rs:.2f} (>=1.5)")


def test_criterion_3_weight_generation_algebra(verdict):
    r = Rng(3)
    K = 5
    bank = Tensor(r.randn((K, 4, 4, 3, 3)), dtype=np.float64)
    gen = lambda a: materialize_weight(SConv(Tensor(a, dtype=np.float64), None), bank).data  # noqa: E731
    recover = all(np.array_equal(gen(np.eye(K)[j]), bank.data[j]) for j in range(K))
    a, b = r.randn(K), r.randn(K)
    # scaling by a power of two is exact in binary floating point
    homogeneous = np.array_equal(gen(4.0 * a), 4.0 * gen(a))
    # additivity on integer-valued data is exact (no rounding anywhere)
    ib = Tensor(np.round(r.randn((K, 4, 4, 3, 3)) * 8), dtype=np.float64)
    gi = lambda a: materialize_weight(SConv(Tensor(a, dtype=np.float64), None), ib).data  # noqa: E731
    ia, ic = np.round(a * 8), np.round(b * 8)
    additive = np.array_equal(gi(ia + ic), gi(ia) + gi(ic))
    verdict(3, "weight generation algebra", recover and homogeneous and additive,
            f"unit-vector recovery={recover} homogeneity={homogeneous} additivity={additive}")


def test_criterion_4_shdd_generator(clean_dirs, tmp_path, verdict):
    t0 = time.perf_counter()
    splits = {"train": clean_dirs / "train"}
    reports = [generate_dataset(tmp_path / name, "moderate", 11, splits, threads=th)
               for name, th in (("a", 1), ("b", 1), ("c", 4))]
    same_hash = len({r.manifest_sha256 for r in reports}) == 1
    files = sorted(p.name for p in (tmp_path / "a" / "train").iterdir())
    same_bytes = all((tmp_path / d / "train" / f).read_bytes() == (tmp_path / "a" / "train" / f).read_bytes()
                     for d in ("b", "c") for f in files)
    arithmetic = reports[0].counts == {"train": 96} and len(files) == 96

    img = np.full((256, 256, 3), 0.5)
    var = np.var(distort_region(img, DistortionSpec("gaussian-noise", 0.01, 1), clip=False) - img)
    noise_ok = abs(var - 0.01) <= 0.1 * 0.01

    slope = pink_noise_slope(256, 0)
    slope_ok = abs(slope + 2.0) <= 0.4

    _, entries = load_manifest(tmp_path / "a")
    tiled = identity_ok = True
    for e in entries:
        clean = load_rgb(tmp_path / "a" / "clean" / f"{e.source}.png")
        stored = load_rgb(tmp_path / "a" / e.file)
        cover = np.zeros(clean.shape[:2], dtype=int)
        for r, spec in e.regions:
            cover[r.y:r.y + r.h, r.x:r.x + r.w] += 1
            if spec.kind == "identity":
                sl = (slice(r.y, r.y + r.h), slice(r.x, r.x + r.w))
                identity_ok &= bool(np.array_equal(stored[sl], clean[sl]))
        tiled &= bool(np.all(cover == 1))
        identity_ok &= bool(np.array_equal(np.round(np.clip(apply_entry(clean, e), 0, 1) * 255) / 255, stored))
    elapsed = time.perf_counter() - t0
    ok = same_hash and same_bytes and arithmetic and noise_ok and slope_ok and tiled and identity_ok and elapsed < 120
    verdict(4, "SHDD generator", ok,
            f"deterministic={same_hash and same_bytes} 8->96={arithmetic} noise var {var:.5f} (0.01+-10%) "
            f"slope {slope:.3f} (-2+-0.4) tiling={tiled} identity/regeneration={identity_ok} {elapsed:.1f}s")


def direct_ssim(a, b):
    """Explicit per-window double loop over a 2-D Gaussian window, channels averaged."""
    w2 = np.outer(gaussian_window(), gaussian_window())
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    per_channel = []
    for c in range(a.shape[2]):
        x, y = a[..., c], b[..., c]
        vals = []
        for i in range(x.shape[0] - 10):
            for j in range(x.shape[1] - 10):
                px, py = x[i:i + 11, j:j + 11], y[i:i + 11, j:j + 11]
                mx, my = np.sum(w2 * px), np.sum(w2 * py)
                vx, vy = np.sum(w2 * (px - mx) ** 2), np.sum(w2 * (py - my) ** 2)
                cxy = np.sum(w2 * (px - mx) * (py - my))
                vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
        per_channel.append(np.mean(vals))
    return float(np.mean(per_channel))


def test_criterion_5_metric_oracles(verdict):
    hand = psnr(np.zeros((10, 10, 3)), np.full((10, 10, 3), 0.1))
    psnr_ok = abs(hand - 20.0) < 1e-9
    r = np.random.default_rng(5)
    x = r.random((16, 16, 3))
    self_ok = abs(ssim(x, x) - 1.0) < 1e-12
    worst = 0.0
    for _ in range(10):
        a = r.random((16, 18, 3))
        b = np.clip(a + r.uniform(0.02, 0.5) * r.standard_normal(a.shape), 0, 1)
        worst = max(worst, abs(ssim(a, b) - direct_ssim(a, b)))
    verdict(5, "metric oracles", psnr_ok and self_ok and worst < 1e-6,
            f"psnr(mse=0.01)={hand:.12f} ssim(x,x)={ssim(x, x):.12f} max |ssim-direct|={worst:.1e} (<1e-6)")


@pytest.mark.slow
def test_criterion_6_desk_training(mini_shdd, tmp_path, verdict):
    assert DESK_DEFAULT.n_experts == 3 and DESK_DEFAULT.expert_width == 16 and DESK_DEFAULT.n_templates == 4
    assert (DESK_TRAIN.iters, DESK_TRAIN.batch, DESK_TRAIN.patch) == (500, 8, 32)
    t0 = time.perf_counter()
    model = MepsNet(DESK_DEFAULT)
    init_parameters(model, Rng(DESK_TRAIN.seed))
    result = train(model, load_pairs(mini_shdd, "train"), DESK_TRAIN, tmp_path)
    elapsed = time.perf_counter() - t0
    first, last = np.mean(result.losses[:100]), np.mean(result.losses[-100:])
    report = evaluate_dataset(model_restorer(model), mini_shdd, "test")
    gain = report.mean_psnr - report.baseline_psnr
    ok = report.n == 4 and last <= 0.5 * first and gain > 0.3 and elapsed < 900
    verdict(6, "desk training sanity", ok,
            f"loss {first:.4f} -> {last:.4f} (ratio {last / first:.3f}, <=0.5); restored {report.mean_psnr:.2f} dB "
            f"vs input {report.baseline_psnr:.2f} dB (gain {gain:+.2f}, >0.3); {elapsed:.0f}s")


def test_criterion_7_checkpoint_round_trip(tmp_path, verdict):
    ok_all, details = True, []
    for name, cfg in (("desk-tiny", DESK_TINY), ("desk", DESK_DEFAULT)):
        m = MepsNet(cfg)
        init_parameters(m, Rng(7))
        path = tmp_path / f"{name}.meps"
        save_model(path, m)
        loaded, _ = load_model(path)
        x = Tensor(Rng(8).random(2 * 3 * 12 * 12).reshape(2, 3, 12, 12))
        same = np.array_equal(loaded(x).data, m(x).data)
        census = count_parameters(m)["total"]
        stored = serialized_value_count(path)
        ok_all &= same and census == stored
        details.append(f"{name}: bit-identical={same} census={census} serialized={stored}")
    verdict(7, "checkpoint round-trip", ok_all, "; ".join(details))
