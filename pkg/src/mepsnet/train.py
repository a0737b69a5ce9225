"""Patch-based L2 training with Adam and a step learning-rate schedule."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_model, load_tensors, save_model, save_tensors
from .model import MepsNet
from .rng import Rng, child_seed
from .shdd import load_manifest, load_rgb
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 8
    patch: int = 32
    iters: int = 500
    base_lr: float = 2.5e-3  # desk scale; full scale uses 1e-4
    lr_drops: tuple[int, ...] = (200, 350)
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    seed: int = 0
    # 0 writes only the final checkpoint
    checkpoint_every: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lr_drops", tuple(int(d) for d in self.lr_drops))
        if list(self.lr_drops) != sorted(self.lr_drops):
            raise ValueError(f"lr_drops must be ascending, got {self.lr_drops}")
        if self.batch < 1 or self.patch < 1 or self.iters < 0:
            raise ValueError("batch and patch must be >= 1 and iters >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_drops"] = list(self.lr_drops)
        return d


PAPER_TRAIN = TrainConfig(batch=16, patch=80, iters=1_200_000, base_lr=1e-4, lr_drops=(120_000, 300_000))
# desk base_lr chosen by a sweep over 1e-4..1e-2 on the 8-image mini set
DESK_TRAIN = TrainConfig()


def lr_at(it: int, config: TrainConfig) -> float:
    drops = sum(1 for d in config.lr_drops if d <= it)
    return config.base_lr * 0.5 ** drops


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState, lr: float,
              config: TrainConfig, no_decay: frozenset[str] = frozenset()) -> None:
    """One in-place Adam update with coupled L2 weight decay (skipped for names in ``no_decay``)."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}; step aborted")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if config.weight_decay and name not in no_decay:
            g = g + config.weight_decay * p
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + config.eps)).astype(p.dtype)


# ---------------------------------------------------------------- data

@dataclass
class PairDataset:
    """Distorted/clean pairs as float32 ``[3, H, W]`` arrays."""
    distorted: list[np.ndarray]
    clean: list[np.ndarray]
    names: list[str]

    def __len__(self) -> int:
        return len(self.names)


def load_pairs(dataset_dir: Path, split: str = "train") -> PairDataset:
    dataset_dir = Path(dataset_dir)
    _, entries = load_manifest(dataset_dir)
    cache: dict[str, np.ndarray] = {}
    dist, clean, names = [], [], []
    for e in entries:
        if e.split != split:
            continue
        if e.source not in cache:
            cache[e.source] = _chw(load_rgb(dataset_dir / "clean" / f"{e.source}.png"))
        dist.append(_chw(load_rgb(dataset_dir / e.file)))
        clean.append(cache[e.source])
        names.append(e.file)
    if not names:
        raise ValueError(f"no '{split}' entries in {dataset_dir}")
    return PairDataset(dist, clean, names)


def _chw(img: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(img.transpose(2, 0, 1), dtype=np.float32)


def sample_patch_batch(dataset: PairDataset, patch: int, batch: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Uniform image, uniform top-left corner; the same crop for distorted and clean."""
    if not any(min(d.shape[1:]) >= patch for d in dataset.distorted):
        raise ValueError(f"no image in the dataset is at least {patch}x{patch}")
    xs = np.empty((batch, 3, patch, patch), dtype=np.float32)
    ys = np.empty_like(xs)
    b = 0
    while b < batch:
        i = rng.integer(0, len(dataset) - 1)
        d, c = dataset.distorted[i], dataset.clean[i]
        _, h, w = d.shape
        if h < patch or w < patch:
            continue
        y0, x0 = rng.integer(0, h - patch), rng.integer(0, w - patch)
        xs[b] = d[:, y0:y0 + patch, x0:x0 + patch]
        ys[b] = c[:, y0:y0 + patch, x0:x0 + patch]
        b += 1
    return xs, ys


def batch_rng(config: TrainConfig, it: int) -> Rng:
    return Rng(child_seed(config.seed, it))


# ---------------------------------------------------------------- loop

class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    losses: list[float]
    final_checkpoint: Path
    start_iter: int = 0


def _no_decay(model: MepsNet) -> frozenset[str]:
    return frozenset(n for n, k in model.kinds.items() if k == "bias")


def save_training_state(path: Path, model: MepsNet, state: AdamState, it: int, config: TrainConfig) -> None:
    save_model(path, model, iter=it, train=config.to_dict())
    tensors = {f"m.{k}": v for k, v in state.m.items()}
    tensors.update({f"v.{k}": v for k, v in state.v.items()})
    save_tensors(Path(str(path) + ".adam"), tensors, {"t": state.t, "iter": it})


def load_training_state(path: Path) -> tuple[MepsNet, AdamState, int]:
    model, meta = load_model(path)
    state = AdamState()
    adam = Path(str(path) + ".adam")
    if adam.exists():
        tensors, ameta = load_tensors(adam)
        state.t = ameta["t"]
        for k, v in tensors.items():
            kind, name = k.split(".", 1)
            (state.m if kind == "m" else state.v)[name] = v
    return model, state, int(meta.get("iter", 0))


def train(model: MepsNet, dataset: PairDataset, config: TrainConfig, out_dir: Path,
          state: AdamState | None = None, start_iter: int = 0) -> TrainResult:
    """Run ``config.iters`` total iterations (resuming at ``start_iter``).

    Appends ``iter=<n> loss=<f> lr=<f>`` lines to ``out_dir/train.log`` and
    writes ``ckpt_<iter>.meps`` files plus ``final.meps``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = state or AdamState()
    no_decay = _no_decay(model)
    params = list(model.params.values())
    losses: list[float] = []
    with open(out_dir / "train.log", "a" if start_iter else "w", encoding="utf-8") as logf:
        for it in range(start_iter, config.iters):
            xs, ys = sample_patch_batch(dataset, config.patch, config.batch, batch_rng(config, it))
            loss = T.mse_loss(model(Tensor(xs, dtype=model.dtype)), Tensor(ys, dtype=model.dtype))
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at iteration {it}; last checkpoint kept in {out_dir}")
            T.backward(loss, params)
            lr = lr_at(it, config)
            adam_step(model.state_dict(), {n: t.grad for n, t in model.params.items()}, state, lr, config, no_decay)
            losses.append(value)
            logf.write(f"iter={it} loss={value:.8g} lr={lr:.8g}\n")
            done = it + 1
            if config.checkpoint_every and done % config.checkpoint_every == 0 and done < config.iters:
                save_training_state(out_dir / f"ckpt_{done:07d}.meps", model, state, done, config)
    final = out_dir / "final.meps"
    save_training_state(final, model, state, max(config.iters, start_iter), config)
    return TrainResult(losses, final, start_iter)


def model_restorer(model: MepsNet):
    """Wrap a model as an ``[H, W, 3] -> [H, W, 3]`` restoration function."""
    def restore(img: np.ndarray) -> np.ndarray:
        x = Tensor(img.transpose(2, 0, 1)[None], dtype=model.dtype)
        return model(x).data[0].transpose(1, 2, 0).astype(np.float64)
    return restore
