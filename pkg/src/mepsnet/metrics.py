"""PSNR / SSIM on RGB images in [0, 1], plus dataset-level evaluation."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.ndimage import correlate1d

from .shdd import load_manifest, load_rgb

log = logging.getLogger(__name__)

PSNR_CAP = 100.0
SSIM_WIN = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(data_range ** 2 / mse)))


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    t = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-0.5 * (t / sigma) ** 2)
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable correlation over the spatial axes, keeping only full-window positions
    r = (len(g) - 1) // 2
    y = correlate1d(correlate1d(x, g, axis=0, mode="constant"), g, axis=1, mode="constant")
    return y[r:y.shape[0] - r, r:y.shape[1] - r]


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Mean SSIM over channels and all full-window positions (``[H, W]`` or ``[H, W, C]``)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[:2]) < SSIM_WIN:
        raise ValueError(f"ssim: image {a.shape[:2]} smaller than the {SSIM_WIN}x{SSIM_WIN} window")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    g = gaussian_window()
    c1, c2 = (K1 * data_range) ** 2, (K2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class EvalReport:
    split: str
    per_image: list[dict] = field(default_factory=list)
    skipped: int = 0

    @property
    def n(self) -> int:
        return len(self.per_image)

    def _mean(self, key: str) -> float:
        return float(np.mean([r[key] for r in self.per_image])) if self.per_image else float("nan")

    @property
    def mean_psnr(self) -> float:
        return self._mean("psnr")

    @property
    def mean_ssim(self) -> float:
        return self._mean("ssim")

    @property
    def baseline_psnr(self) -> float:
        return self._mean("baseline_psnr")

    @property
    def baseline_ssim(self) -> float:
        return self._mean("baseline_ssim")

    def counts_per_level(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.per_image:
            out[r["level"]] = out.get(r["level"], 0) + 1
        return out

    def to_json(self) -> dict:
        return {"split": self.split, "n": self.n, "mean_psnr": self.mean_psnr, "mean_ssim": self.mean_ssim,
                "baseline_psnr": self.baseline_psnr, "baseline_ssim": self.baseline_ssim,
                "skipped": self.skipped, "counts_per_level": self.counts_per_level(),
                "per_image": self.per_image}

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1), encoding="utf-8")


def evaluate_dataset(restore: Callable[[np.ndarray], np.ndarray], dataset_dir: Path, split: str,
                     threads: int = 1) -> EvalReport:
    """Score ``restore(distorted)`` against the clean image for every entry of ``split``.

    ``restore`` maps an ``[H, W, 3]`` float image to a restored one of the same
    shape; see :func:`mepsnet.train.model_restorer`. The distorted input
    itself is scored too, as the baseline. Results keep manifest order
    whatever ``threads`` is.
    """
    dataset_dir = Path(dataset_dir)
    manifest, entries = load_manifest(dataset_dir)
    report = EvalReport(split)
    todo = []
    for e in entries:
        if e.split != split:
            continue
        if not (dataset_dir / "clean" / f"{e.source}.png").exists():
            log.warning("no clean counterpart for %s; skipped", e.file)
            report.skipped += 1
            continue
        todo.append(e)

    def score(e) -> dict:
        clean = load_rgb(dataset_dir / "clean" / f"{e.source}.png")
        distorted = load_rgb(dataset_dir / e.file)
        restored = np.clip(restore(distorted), 0.0, 1.0)
        return {
            "file": e.file, "level": manifest["level"],
            "psnr": psnr(restored, clean), "ssim": ssim(restored, clean),
            "baseline_psnr": psnr(distorted, clean), "baseline_ssim": ssim(distorted, clean),
        }

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            report.per_image = list(pool.map(score, todo))
    else:
        report.per_image = [score(e) for e in todo]
    return report
