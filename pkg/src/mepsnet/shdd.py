"""Spatially-heterogeneous distortion dataset (SHDD) synthesis.

Divide: recursively cut the largest region along a random axis-aligned line.
Distort: corrupt every region with an independently drawn distortion.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import correlate1d

from .rng import Rng, child_seed, string_id

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
KINDS = ("gaussian-noise", "gaussian-blur", "f-noise", "contrast-change", "identity")
STRENGTH_RANGES = {
    "gaussian-noise": (0.005, 0.02),  # variance
    "gaussian-blur": (1.0, 2.5),  # variance
    "f-noise": (6.0, 10.0),  # scale in 8-bit units
    "contrast-change": (25.0, 40.0),  # level
}
LEVELS = {"easy": 2, "moderate": 3, "difficult": 4}
SPLIT_VARIANTS = {"train": 12, "val": 1, "test": 1}
MIN_SIDE = 64


@dataclass(frozen=True)
class Region:
    x: int
    y: int
    w: int
    h: int

    @property
    def area(self) -> int:
        return self.w * self.h


@dataclass(frozen=True)
class DistortionSpec:
    kind: str
    strength: float | None
    seed: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distortion kind {self.kind!r}")
        if self.kind == "identity":
            if self.strength is not None:
                raise ValueError("identity distortion takes no strength")
            return
        lo, hi = STRENGTH_RANGES[self.kind]
        if self.strength is None or not lo <= self.strength <= hi:
            raise ValueError(f"{self.kind} strength {self.strength} outside [{lo}, {hi}]")


@dataclass
class ManifestEntry:
    source: str
    variant: int
    level: str
    split: str
    master_seed: int
    regions: list[tuple[Region, DistortionSpec]] = field(default_factory=list)

    @property
    def file(self) -> str:
        return f"{self.split}/{self.source}_{self.variant}.png"

    def to_json(self) -> dict:
        return {
            "source": self.source,
            "variant": self.variant,
            "split": self.split,
            "file": self.file,
            "clean": f"clean/{self.source}.png",
            "regions": [{**asdict(r), "kind": d.kind, "strength": d.strength, "seed": d.seed}
                        for r, d in self.regions],
        }

    @classmethod
    def from_json(cls, obj: dict, level: str, master_seed: int) -> "ManifestEntry":
        regions = [(Region(r["x"], r["y"], r["w"], r["h"]), DistortionSpec(r["kind"], r["strength"], r["seed"]))
                   for r in obj["regions"]]
        return cls(obj["source"], obj["variant"], level, obj["split"], master_seed, regions)


# ---------------------------------------------------------------- divide

def split_regions(width: int, height: int, chops: int, rng: Rng) -> list[Region]:
    """Cut the image ``chops`` times; returns ``chops + 1`` tiling regions.

    Each cut takes the largest region (first on ties), an orientation chosen
    uniformly, and a position leaving both children at least 25% of the
    parent's extent along the cut axis.
    """
    if width < MIN_SIDE or height < MIN_SIDE:
        raise ValueError(f"image {width}x{height} is smaller than the {MIN_SIDE}px minimum side")
    if chops not in (2, 3, 4):
        raise ValueError(f"chops must be 2, 3 or 4, got {chops}")
    regions = [Region(0, 0, width, height)]
    for _ in range(chops):
        idx = max(range(len(regions)), key=lambda k: (regions[k].area, -k))
        r = regions.pop(idx)
        vertical = rng.random() < 0.5  # vertical line -> cut along x
        extent = r.w if vertical else r.h
        margin = math.ceil(0.25 * extent)
        if margin < 1 or extent - margin < margin:
            raise ValueError(f"region {r} too small to cut with a 25% margin")
        cut = rng.integer(margin, extent - margin)
        if vertical:
            a, b = Region(r.x, r.y, cut, r.h), Region(r.x + cut, r.y, r.w - cut, r.h)
        else:
            a, b = Region(r.x, r.y, r.w, cut), Region(r.x, r.y + cut, r.w, r.h - cut)
        regions[idx:idx] = [a, b]
    return regions


# ---------------------------------------------------------------- distort

def pink_noise_field(w: int, h: int, rng: Rng) -> np.ndarray:
    """Zero-mean, unit-std field with amplitude spectrum proportional to 1/f."""
    if w < 8 or h < 8:
        raise ValueError(f"pink noise field needs sides >= 8, got {w}x{h}")
    white = rng.randn((h, w))
    spec = np.fft.fft2(white)
    fy = np.fft.fftfreq(h) * h  # cycles per image
    fx = np.fft.fftfreq(w) * w
    f = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2)
    f[0, 0] = 1.0
    spec = spec / f
    spec[0, 0] = 0.0
    field = np.fft.ifft2(spec).real
    field -= field.mean()
    return field / field.std()


def gaussian_kernel(variance: float) -> np.ndarray:
    sigma = math.sqrt(variance)
    radius = math.ceil(3 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def distort_region(pixels: np.ndarray, spec: DistortionSpec, clip: bool = True) -> np.ndarray:
    """Apply one distortion to an ``[H, W, 3]`` float image in [0, 1]."""
    img = np.asarray(pixels, dtype=np.float64)
    if spec.kind == "identity":
        return np.array(pixels, copy=True)
    rng = Rng(spec.seed)
    if spec.kind == "gaussian-noise":
        out = img + math.sqrt(spec.strength) * rng.randn(img.shape)
    elif spec.kind == "gaussian-blur":
        k = gaussian_kernel(spec.strength)
        out = correlate1d(correlate1d(img, k, axis=0, mode="reflect"), k, axis=1, mode="reflect")
    elif spec.kind == "f-noise":
        h, w = img.shape[:2]
        field = pink_noise_field(max(w, 8), max(h, 8), rng)[:h, :w]
        out = img + (spec.strength / 255.0) * field[:, :, None]
    else:  # contrast-change
        out = (img - 0.5) * (spec.strength / 100.0) + 0.5
    return np.clip(out, 0.0, 1.0) if clip else out


def sample_spec(rng: Rng) -> DistortionSpec:
    kind = KINDS[rng.integer(0, len(KINDS) - 1)]
    strength = None
    if kind != "identity":
        lo, hi = STRENGTH_RANGES[kind]
        strength = rng.uniform(lo, hi)
    return DistortionSpec(kind, strength, rng.next_u64())


def image_seed(master_seed: int, split: str, source: str, variant: int) -> int:
    return child_seed(child_seed(master_seed, string_id(f"{split}/{source}")), variant)


def apply_entry(clean: np.ndarray, entry: ManifestEntry) -> np.ndarray:
    """Re-create the distorted image described by a manifest entry."""
    out = np.array(clean, dtype=np.float64, copy=True)
    for r, spec in entry.regions:
        sl = (slice(r.y, r.y + r.h), slice(r.x, r.x + r.w))
        out[sl] = distort_region(clean[sl], spec)
    return out


def synthesize_image(clean: np.ndarray, level: str, variant: int, master_seed: int,
                     source: str = "image", split: str = "train") -> tuple[np.ndarray, ManifestEntry]:
    """Divide-and-distort one clean ``[H, W, 3]`` image in [0, 1]."""
    rng = Rng(image_seed(master_seed, split, source, variant))
    h, w = clean.shape[:2]
    regions = split_regions(w, h, LEVELS[level], rng)
    entry = ManifestEntry(source, variant, level, split, master_seed,
                          [(r, sample_spec(rng)) for r in regions])
    return apply_entry(clean, entry), entry


# ---------------------------------------------------------------- IO

def load_rgb(path: Path) -> np.ndarray:
    """Decode an 8-bit image to float ``[H, W, 3]`` in [0, 1]; grayscale promoted."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return arr.astype(np.float64) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(img: np.ndarray, path: Path) -> None:
    arr = img if img.dtype == np.uint8 else to_uint8(img)
    Image.fromarray(arr).save(path, format="PNG")


@dataclass
class GenerateReport:
    out_dir: Path
    counts: dict[str, int]
    warnings: int
    manifest_sha256: str


def _list_images(d: Path) -> list[Path]:
    return sorted(p for p in Path(d).iterdir() if p.is_file() and p.suffix.lower() == ".png")


def generate_dataset(out_dir: Path, level: str, seed: int, splits: dict[str, Path],
                     variants: dict[str, int] | None = None, threads: int = 1) -> GenerateReport:
    """Write ``<out>/{split}/<image>_<variant>.png``, ``<out>/clean/`` and ``<out>/manifest.json``.

    ``splits`` maps split name to a directory of clean PNGs. Output is
    assembled in a temporary directory and moved into place only on success.
    """
    if level not in LEVELS:
        raise ValueError(f"unknown level {level!r}; expected one of {sorted(LEVELS)}")
    variants = {**SPLIT_VARIANTS, **(variants or {})}
    jobs: list[tuple[str, str, Path, int]] = []
    for split, src in splits.items():
        if split not in SPLIT_VARIANTS:
            raise ValueError(f"unknown split {split!r}")
        files = _list_images(src) if Path(src).is_dir() else []
        if not files:
            raise FileNotFoundError(f"no PNG images in {src} for split {split!r}")
        for f in files:
            jobs.append((split, f.stem, f, variants[split]))

    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".shdd-", dir=out_dir.parent))
    try:
        (stage / "clean").mkdir()
        for split in splits:
            (stage / split).mkdir()

        def work(job):
            split, stem, path, n_var = job
            try:
                clean = load_rgb(path)
            except Exception as exc:  # undecodable input is skipped, not fatal
                log.warning("skipping %s: %s", path, exc)
                return None
            save_png(clean, stage / "clean" / f"{stem}.png")
            entries = []
            for v in range(n_var):
                img, entry = synthesize_image(clean, level, v, seed, source=stem, split=split)
                save_png(img, stage / entry.file)
                entries.append(entry)
            return entries

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(work, jobs))
        else:
            results = [work(j) for j in jobs]

        warnings = sum(r is None for r in results)
        entries = [e for r in results if r is not None for e in r]
        if not entries:
            raise RuntimeError("no images could be decoded; nothing generated")
        manifest = {"version": MANIFEST_VERSION, "master_seed": seed, "level": level,
                    "entries": [e.to_json() for e in entries]}
        text = json.dumps(manifest, indent=1, sort_keys=True)
        (stage / "manifest.json").write_text(text, encoding="utf-8")
        if out_dir.exists():
            shutil.rmtree(out_dir)
        stage.rename(out_dir)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise

    counts = {s: sum(e.split == s for e in entries) for s in splits}
    return GenerateReport(out_dir, counts, warnings, hashlib.sha256(text.encode()).hexdigest())


def load_manifest(dataset_dir: Path) -> tuple[dict, list[ManifestEntry]]:
    obj = json.loads((Path(dataset_dir) / "manifest.json").read_text(encoding="utf-8"))
    entries = [ManifestEntry.from_json(e, obj["level"], obj["master_seed"]) for e in obj["entries"]]
    return obj, entries
