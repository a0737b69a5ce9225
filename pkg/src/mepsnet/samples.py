"""Procedural clean images standing in for DIV2K in tests and desk runs."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.special import expit

from .rng import Rng
from .shdd import save_png


def procedural_image(h: int, w: int, rng: Rng) -> np.ndarray:
    """Gradient background, soft-edged shapes and a striped texture; ``[h, w, 3]`` in [0, 1]."""
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(angle) * xx + np.sin(angle) * yy
    c0, c1 = rng.random(3), rng.random(3)
    img = c0 + (c1 - c0) * ((ramp - ramp.min()) / (np.ptp(ramp) + 1e-12))[:, :, None]

    for _ in range(rng.integer(3, 6)):
        cy, cx = rng.uniform(0, 1) * h / max(h, w), rng.uniform(0, 1) * w / max(h, w)
        ry, rx = rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3)
        d = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
        if rng.random() < 0.5:
            d = np.maximum(np.abs(yy - cy) / ry, np.abs(xx - cx) / rx) ** 2
        mask = expit((1.0 - d) * 12.0)
        img = img * (1 - mask[:, :, None]) + rng.random(3) * mask[:, :, None]

    freq, phase = rng.uniform(10, 30), rng.uniform(0, 2 * np.pi)
    theta = rng.uniform(0, np.pi)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    y0, x0 = rng.integer(0, h // 2), rng.integer(0, w // 2)
    win = np.zeros((h, w))
    win[y0:y0 + h // 3, x0:x0 + w // 3] = 1.0
    img = img * (1 - 0.35 * win[:, :, None]) + 0.35 * (win * stripes)[:, :, None] * rng.random(3)
    return np.clip(img, 0.0, 1.0)


def write_clean_set(out_dir: Path, n: int, size: int = 96, seed: int = 0, prefix: str = "img") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = Rng(seed)
    paths = []
    for i in range(n):
        p = out_dir / f"{prefix}{i:04d}.png"
        save_png(procedural_image(size, size, root.child(i)), p)
        paths.append(p)
    return paths
