"""Verification routines shared by ``inspect`` and the acceptance suite."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import DESK_TINY, MepsNet, MepsNetConfig, init_parameters
from .rng import Rng
from .shdd import pink_noise_field
from .tensor import Tensor


@dataclass
class GradCheckRow:
    name: str
    size: int
    rel_err: float  # ||analytic - numeric|| / max(||analytic||, ||numeric||)
    max_abs_err: float


def grad_check(config: MepsNetConfig = DESK_TINY, seed: int = 0, size: int = 8, eps: float = 1e-5,
               batch: int = 1) -> list[GradCheckRow]:
    """Compare backprop against central differences for every parameter of a 64-bit model."""
    model = MepsNet(config, dtype=np.float64)
    rng = Rng(seed)
    init_parameters(model, rng)
    # nonzero biases so every bias path carries signal
    for name, t in model.params.items():
        if model.kinds[name] == "bias":
            t.data = 0.1 * rng.randn(t.shape)
    x = Tensor(rng.random(batch * 3 * size * size).reshape(batch, 3, size, size), dtype=np.float64)
    y = Tensor(rng.random(batch * 3 * size * size).reshape(batch, 3, size, size), dtype=np.float64)

    loss = T.mse_loss(model(x), y)
    T.backward(loss, model.params.values())
    rows = []
    for name, t in model.params.items():
        analytic = t.grad.copy()
        original = t.data

        def f(p, t=t):
            t.data = p
            return T.mse_loss(model(x), y).item()

        numeric = T.finite_diff_grad(f, original, eps)
        t.data = original
        diff = analytic - numeric
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-300)
        rows.append(GradCheckRow(name, t.data.size, float(np.linalg.norm(diff) / scale),
                                 float(np.abs(diff).max())))
    return rows


def radial_power_spectrum(field: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean power per integer radius (cycles per image), radius 1 upward."""
    h, w = field.shape
    power = np.abs(np.fft.fft2(field)) ** 2
    fy = np.fft.fftfreq(h) * h
    fx = np.fft.fftfreq(w) * w
    r = np.rint(np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)).astype(int)
    rmax = min(h, w) // 2
    sums = np.bincount(r.ravel(), weights=power.ravel())
    counts = np.bincount(r.ravel())
    radii = np.arange(1, rmax)
    return radii.astype(float), sums[1:rmax] / counts[1:rmax]


def spectral_slope(field: np.ndarray, lo: int = 4, hi: int | None = None) -> float:
    """Least-squares slope of log power vs log radius over [lo, hi)."""
    radii, power = radial_power_spectrum(field)
    hi = hi or int(radii[-1]) // 2
    sel = (radii >= lo) & (radii < hi)
    slope, _ = np.polyfit(np.log(radii[sel]), np.log(power[sel]), 1)
    return float(slope)


def pink_noise_slope(size: int = 256, seed: int = 0) -> float:
    return spectral_slope(pink_noise_field(size, size, Rng(seed)))
