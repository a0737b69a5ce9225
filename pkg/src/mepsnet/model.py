"""MEPSNet: feature extraction, template-bank-shared experts, attentive fusion, reconstruction."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import tensor as T
from .rng import Rng
from .tensor import Tensor


@dataclass(frozen=True)
class MepsNetConfig:
    n_experts: int = 3
    n_srir_per_expert: int = 1
    n_sresidual_per_srir: int = 2
    n_templates: int = 4
    expert_width: int = 16
    fusion_reduction: int = 4
    kernel_size: int = 3
    # kernel of the unshared convs wrapping each expert's SRIR chain
    envelope_kernel: int = 1
    # False builds the no-sharing ablation: every SConv stores its own weight
    shared: bool = True

    def __post_init__(self):
        for f in ("n_experts", "n_srir_per_expert", "n_sresidual_per_srir", "n_templates",
                  "expert_width", "fusion_reduction", "kernel_size", "envelope_kernel"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be >= 1, got {getattr(self, f)}")
        if self.kernel_size % 2 == 0 or self.envelope_kernel % 2 == 0:
            raise ValueError("kernel sizes must be odd")
        if (self.n_experts * self.expert_width) % self.fusion_reduction:
            raise ValueError(f"n_experts*expert_width={self.n_experts * self.expert_width} "
                             f"not divisible by fusion_reduction={self.fusion_reduction}")

    @classmethod
    def from_dict(cls, d: dict) -> "MepsNetConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


PAPER_DEFAULT = MepsNetConfig(n_experts=3, n_srir_per_expert=3, n_sresidual_per_srir=12, n_templates=16,
                              expert_width=256, fusion_reduction=16, kernel_size=3)
DESK_DEFAULT = MepsNetConfig(n_experts=3, n_srir_per_expert=1, n_sresidual_per_srir=2, n_templates=4,
                             expert_width=16, fusion_reduction=4, kernel_size=3)
DESK_TINY = MepsNetConfig(n_experts=2, n_srir_per_expert=1, n_sresidual_per_srir=1, n_templates=2,
                          expert_width=4, fusion_reduction=2, kernel_size=3)


@dataclass
class Conv:
    weight: Tensor
    bias: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias)


@dataclass
class SConv:
    """Convolution whose weight is a mix of the bank's templates (or, unshared, its own)."""
    coeffs: Tensor | None
    bias: Tensor
    weight: Tensor | None = None


@dataclass
class SResidual:
    conv1: SConv
    conv2: SConv


@dataclass
class Expert:
    entry: Conv
    srirs: list[list[SResidual]]
    exit: Conv


@dataclass
class Fusion:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


def materialize_weight(layer: SConv, bank: Tensor) -> Tensor:
    """Adaptive weight ``sum_j alpha_j T_j``; unshared layers return their own weight."""
    if layer.coeffs is None:
        return layer.weight
    if layer.coeffs.shape[0] != bank.shape[0]:
        raise ValueError(f"layer has {layer.coeffs.shape[0]} coefficients but bank holds {bank.shape[0]} templates")
    return T.weighted_sum(layer.coeffs, bank)


def sconv_forward(x: Tensor, layer: SConv, bank: Tensor) -> Tensor:
    return T.conv2d(x, materialize_weight(layer, bank), layer.bias)


def sresidual_forward(x: Tensor, block: SResidual, bank: Tensor) -> Tensor:
    h = T.relu(sconv_forward(x, block.conv1, bank))
    return T.add(x, sconv_forward(h, block.conv2, bank))


def srir_forward(x: Tensor, blocks: list[SResidual], bank: Tensor) -> Tensor:
    h = x
    for block in blocks:
        h = sresidual_forward(h, block, bank)
    return T.add(x, h)


def expert_forward(f0: Tensor, expert: Expert, bank: Tensor) -> Tensor:
    h = expert.entry(f0)
    for blocks in expert.srirs:
        h = srir_forward(h, blocks, bank)
    return T.add(f0, expert.exit(h))


def fuse_features(fd: Tensor, fusion: Fusion) -> Tensor:
    """Channel attention: pool, bottleneck, sigmoid gate, rescale."""
    descriptor = T.global_avg_pool(fd)
    hidden = T.relu(T.linear(descriptor, fusion.w1, fusion.b1))
    gate = T.sigmoid(T.linear(hidden, fusion.w2, fusion.b2))
    return T.scale_channels(fd, gate)


class MepsNet:
    """Parameter container; ``params`` maps stable names to leaf tensors in a fixed order."""

    def __init__(self, config: MepsNetConfig, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.kinds: dict[str, str] = {}
        c = config
        C, S, E = c.expert_width, c.kernel_size, c.envelope_kernel

        widths = [3, math.ceil(C / 4), math.ceil(C / 2), C]
        self.extraction = [self._conv(f"ext.{i}", widths[i], widths[i + 1], S) for i in range(3)]
        self.bank = self._param("bank.templates", (c.n_templates, C, C, S, S), "template") if c.shared else None

        self.experts = []
        for k in range(c.n_experts):
            entry = self._conv(f"expert{k}.entry", C, C, E)
            srirs = []
            for i in range(c.n_srir_per_expert):
                blocks = []
                for j in range(c.n_sresidual_per_srir):
                    pre = f"expert{k}.srir{i}.res{j}"
                    blocks.append(SResidual(self._sconv(f"{pre}.conv1"), self._sconv(f"{pre}.conv2")))
                srirs.append(blocks)
            self.experts.append(Expert(entry, srirs, self._conv(f"expert{k}.exit", C, C, E)))

        NC = c.n_experts * C
        hidden = NC // c.fusion_reduction
        self.fusion = Fusion(self._param("fuse.w1", (hidden, NC), "weight"), self._param("fuse.b1", (hidden,), "bias"),
                             self._param("fuse.w2", (NC, hidden), "weight"), self._param("fuse.b2", (NC,), "bias"))
        self.reconstruction = [self._conv("recon.0", NC, C, S), self._conv("recon.1", C, 3, S)]

    def _param(self, name: str, shape: tuple[int, ...], kind: str) -> Tensor:
        t = Tensor(np.zeros(shape, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        self.kinds[name] = kind
        return t

    def _conv(self, name: str, cin: int, cout: int, size: int) -> Conv:
        return Conv(self._param(f"{name}.w", (cout, cin, size, size), "weight"),
                    self._param(f"{name}.b", (cout,), "bias"))

    def _sconv(self, name: str) -> SConv:
        c = self.config
        C, S = c.expert_width, c.kernel_size
        bias = self._param(f"{name}.b", (C,), "bias")
        if c.shared:
            return SConv(self._param(f"{name}.alpha", (c.n_templates,), "coeff"), bias)
        return SConv(None, bias, self._param(f"{name}.w", (C, C, S, S), "weight"))

    @property
    def sconv_layers(self) -> list[SConv]:
        return [conv for e in self.experts for blocks in e.srirs for b in blocks for conv in (b.conv1, b.conv2)]

    def extract(self, x: Tensor) -> Tensor:
        h = x
        for i, conv in enumerate(self.extraction):
            h = conv(h)
            if i < len(self.extraction) - 1:
                h = T.relu(h)
        return h

    def reconstruct(self, ff: Tensor) -> Tensor:
        return self.reconstruction[1](T.relu(self.reconstruction[0](ff)))

    def expert_outputs(self, x: Tensor) -> tuple[Tensor, list[Tensor]]:
        f0 = self.extract(x)
        return f0, [expert_forward(f0, e, self.bank) for e in self.experts]

    def __call__(self, x: Tensor) -> Tensor:
        return mepsnet_forward(x, self)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise KeyError(f"state mismatch; missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, t in self.params.items():
            if state[k].shape != t.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != expected {t.shape}")
            t.data = np.array(state[k], dtype=self.dtype)

    def copy(self, dtype=None) -> "MepsNet":
        m = MepsNet(self.config, dtype or self.dtype)
        m.load_state_dict(self.state_dict())
        return m


def mepsnet_forward(x: Tensor, model: MepsNet) -> Tensor:
    if x.data.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected input [B,3,H,W], got {x.shape}")
    S = model.config.kernel_size
    if min(x.shape[2:]) < S:
        raise ValueError(f"spatial size {x.shape[2:]} smaller than kernel size {S}")
    _, outs = model.expert_outputs(x)
    fd = outs[0] if len(outs) == 1 else T.concat_channels(outs)
    return model.reconstruct(fuse_features(fd, model.fusion))


def count_parameters(model: MepsNet) -> dict[str, int]:
    census = {"shared_templates": 0, "coefficients": 0, "unshared": 0}
    for name, t in model.params.items():
        kind = model.kinds[name]
        key = "shared_templates" if kind == "template" else "coefficients" if kind == "coeff" else "unshared"
        census[key] += t.data.size
    census["total"] = sum(census.values())
    return census


def count_for(config: MepsNetConfig, **overrides) -> dict[str, int]:
    """Census of a config without allocating the (possibly large) parameters."""
    c = replace(config, **overrides)
    C, S, E, K, N = c.expert_width, c.kernel_size, c.envelope_kernel, c.n_templates, c.n_experts
    widths = [3, math.ceil(C / 4), math.ceil(C / 2), C]
    conv = lambda cin, cout, s: cout * cin * s * s + cout  # noqa: E731
    n_sconv = N * c.n_srir_per_expert * c.n_sresidual_per_srir * 2
    NC, hidden = N * C, N * C // c.fusion_reduction
    unshared = sum(conv(widths[i], widths[i + 1], S) for i in range(3))
    unshared += N * 2 * conv(C, C, E) + n_sconv * C
    unshared += 2 * NC * hidden + hidden + NC
    unshared += conv(NC, C, S) + conv(C, 3, S)
    census = {"shared_templates": K * C * C * S * S if c.shared else 0,
              "coefficients": n_sconv * K if c.shared else 0,
              "unshared": unshared + (0 if c.shared else n_sconv * C * C * S * S)}
    census["total"] = sum(census.values())
    return census


def init_parameters(model: MepsNet, rng: Rng) -> None:
    """He-normal weights and templates, alpha ~ N(0, 1/K), zero biases."""
    K = model.config.n_templates
    for name, t in model.params.items():
        kind = model.kinds[name]
        shape = t.shape
        if kind == "bias":
            values = np.zeros(shape)
        elif kind == "coeff":
            values = rng.randn(shape) / math.sqrt(K)
        else:
            fan_in = int(np.prod(shape[-3:] if kind == "template" else shape[1:]))
            values = rng.randn(shape) * math.sqrt(2.0 / fan_in)
        t.data = values.astype(model.dtype)


def dump_expert_features(model: MepsNet, x, out_dir: Path) -> list[Path]:
    """Write one grayscale PNG per expert: channel-mean of its output, min-max scaled to 8 bits."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    xt = x if isinstance(x, Tensor) else Tensor(np.asarray(x), dtype=model.dtype)
    _, outs = model.expert_outputs(xt)
    paths = []
    for k, f in enumerate(outs):
        m = f.data[0].mean(axis=0).astype(np.float64)
        lo, hi = m.min(), m.max()
        norm = (m - lo) / (hi - lo) if hi > lo else np.zeros_like(m)
        path = out_dir / f"expert{k}.png"
        Image.fromarray(np.round(norm * 255).astype(np.uint8), mode="L").save(path)
        paths.append(path)
    return paths
