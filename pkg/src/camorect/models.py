"""Conditional encoders and the mask denoiser.

The Leader encodes high-quality images with a small convolutional pyramid.
The Follower encodes low-quality images either with the same pyramid or
with a time-dependent token transformer (TCE) whose layers see embedded
diffusion-timestep tokens. Both feed a U-Net denoiser that predicts the
clean mask and exposes its three decoder-layer feature maps.

Condition pyramids are ordered fine to coarse: level ``k`` has spatial size
``resolution / (stem_stride * 2**k)`` (rounded up).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F
from safetensors import safe_open
from safetensors.torch import save_file

__all__ = [
    "ArchConfig",
    "ConditionalDistribution",
    "HybridDistribution",
    "ConvPyramidEncoder",
    "TimeTokenEncoder",
    "MaskDenoiser",
    "CondDiffusionModel",
    "TCE_MODES",
    "tap_layers",
    "leader_encode",
    "follower_encode",
    "fuse_layers",
    "denoise",
    "build_model",
    "save_model",
    "load_model",
    "write_tensor_file",
    "read_tensor_file",
    "ContractError",
]

TCE_MODES = ("FL", "OL", "GL", "EL")
SCHEMA_VERSION = 1


class ContractError(ValueError):
    """Leader/Follower feature shapes disagree."""


@dataclass(frozen=True)
class ArchConfig:
    resolution: int = 128
    in_channels: int = 3
    stem_stride: int = 4
    cond_channels: int = 16
    leader_widths: tuple[int, ...] = (16, 24, 32, 32)
    # TCE transformer
    patch: int = 8
    dim: int = 32
    depth: int = 8
    heads: int = 2
    mlp_ratio: int = 2
    # denoiser
    stem_width: int = 8
    den_widths: tuple[int, ...] = (16, 24, 32, 32)
    time_dim: int = 32

    @property
    def levels(self) -> int:
        return len(self.leader_widths)

    def level_sizes(self) -> list[int]:
        s = self.resolution // self.stem_stride
        sizes = [s]
        for _ in range(self.levels - 1):
            s = -(-s // 2)
            sizes.append(s)
        return sizes

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown arch keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class ConditionalDistribution:
    levels: list[torch.Tensor]
    source: str
    time_conditioned: bool = False

    def shapes(self) -> list[tuple[int, ...]]:
        return [tuple(x.shape) for x in self.levels]

    def detach(self) -> "ConditionalDistribution":
        return ConditionalDistribution([x.detach() for x in self.levels], self.source, self.time_conditioned)


@dataclass
class HybridDistribution:
    layers: list[torch.Tensor]
    t: int | torch.Tensor | None = None

    def shapes(self) -> list[tuple[int, ...]]:
        return [tuple(x.shape) for x in self.layers]

    def detach(self) -> "HybridDistribution":
        return HybridDistribution([x.detach() for x in self.layers], self.t)


def check_same_shapes(a: list[torch.Tensor], b: list[torch.Tensor], what: str) -> None:
    if len(a) != len(b):
        raise ContractError(f"{what}: {len(a)} vs {len(b)} entries")
    for i, (x, y) in enumerate(zip(a, b)):
        if x.shape != y.shape:
            raise ContractError(f"{what} {i + 1}: shape {tuple(x.shape)} vs {tuple(y.shape)}")


# --------------------------------------------------------------------------
# building blocks


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half, 1))
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


def _as_batch_t(t, batch: int, device=None) -> torch.Tensor:
    if isinstance(t, torch.Tensor):
        t = t.reshape(-1)
        return t.expand(batch) if t.numel() == 1 else t
    return torch.full((batch,), int(t), dtype=torch.long, device=device)


def _groups(ch: int) -> int:
    return max(1, ch // 8)


class ConvBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, stride=stride, padding=1)
        self.norm = nn.GroupNorm(_groups(cout), cout)

    def forward(self, x):
        return F.silu(self.norm(self.conv(x)))


def _stem_downs(stride: int) -> int:
    n = int(round(math.log2(stride)))
    if 2**n != stride:
        raise ValueError(f"stem_stride must be a power of two, got {stride}")
    return n


class ConvPyramidEncoder(nn.Module):
    """Strided conv stages, one condition map per stage."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.arch = arch
        w = arch.leader_widths
        n_down = _stem_downs(arch.stem_stride)
        stem = []
        cin = arch.in_channels
        for i in range(n_down):
            cout = w[0] if i == n_down - 1 else max(w[0] // 2, 1)
            stem.append(ConvBlock(cin, cout, stride=2))
            cin = cout
        if not stem:
            stem.append(ConvBlock(cin, w[0]))
        self.stem = nn.Sequential(*stem)
        self.stages = nn.ModuleList(
            [ConvBlock(w[0], w[0])] + [ConvBlock(w[k - 1], w[k], stride=2) for k in range(1, len(w))]
        )
        self.proj = nn.ModuleList([nn.Conv2d(wk, arch.cond_channels, 1) for wk in w])

    def forward(self, x: torch.Tensor, t=None) -> list[torch.Tensor]:
        h = self.stem(x)
        out = []
        for stage, proj in zip(self.stages, self.proj):
            h = stage(h)
            out.append(proj(h))
        return out


class TransformerLayer(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int):
        super().__init__()
        if dim % heads:
            raise ValueError("dim must be divisible by heads")
        self.heads = heads
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, dim * mlp_ratio), nn.GELU(), nn.Linear(dim * mlp_ratio, dim))

    def forward(self, x):
        b, n, d = x.shape
        hd = d // self.heads
        q, k, v = self.qkv(self.norm1(x)).reshape(b, n, 3, self.heads, hd).permute(2, 0, 3, 1, 4)
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(hd), dim=-1)
        y = (att @ v).transpose(1, 2).reshape(b, n, d)
        x = x + self.out(y)
        return x + self.mlp(self.norm2(x))


def tap_layers(depth: int) -> list[int]:
    """1-based layers fused into the condition pyramid.

    Quartiles of the depth: {2, 4, 6, 8} for depth 8, {6, 12, 18, 24} for
    depth 24.
    """
    if depth < 4:
        raise ValueError("TCE needs at least 4 layers")
    return [int(round(depth * k / 4)) for k in range(1, 5)]


def time_token_plan(mode: str, depth: int) -> list[int | None]:
    """Embedding index used before each layer, or None for no time token.

    FL: first layer only. OL: the four tap layers, one embedding each.
    GL: one embedding shared by each consecutive pair of layers.
    EL: a distinct embedding for every layer.
    """
    if mode == "FL":
        return [0] + [None] * (depth - 1)
    if mode == "OL":
        taps = tap_layers(depth)
        return [taps.index(n) if n in taps else None for n in range(1, depth + 1)]
    if mode == "GL":
        return [n // 2 for n in range(depth)]
    if mode == "EL":
        return list(range(depth))
    raise ValueError(f"unknown tce_mode {mode!r}; expected one of {TCE_MODES}")


class TimeTokenEncoder(nn.Module):
    """Patch-token transformer with per-layer time tokens and 4-tap fusion."""

    def __init__(self, arch: ArchConfig, mode: str):
        super().__init__()
        if arch.resolution % arch.patch:
            raise ValueError("resolution must be divisible by patch size")
        self.arch = arch
        self.mode = mode
        self.plan = time_token_plan(mode, arch.depth)
        self.taps = tap_layers(arch.depth)
        self.grid = arch.resolution // arch.patch
        d = arch.dim
        self.patch_embed = nn.Conv2d(arch.in_channels, d, arch.patch, stride=arch.patch)
        self.pos = nn.Parameter(torch.zeros(1, self.grid * self.grid, d))
        self.layers = nn.ModuleList([TransformerLayer(d, arch.heads, arch.mlp_ratio) for _ in range(arch.depth)])
        n_emb = max(i for i in self.plan if i is not None) + 1
        self.time_embed = nn.ModuleList([nn.Linear(d, d) for _ in range(n_emb)])
        self.fuse_proj = nn.ModuleList([nn.Conv2d(d, arch.cond_channels, 1, bias=False) for _ in range(4)])
        self.trace: list[int] = []

    def forward_features(self, x: torch.Tensor, t) -> list[torch.Tensor]:
        f = self.patch_embed(x).flatten(2).transpose(1, 2) + self.pos
        b, n, _ = f.shape
        temb = timestep_embedding(_as_batch_t(t, b, x.device), self.arch.dim).to(f.dtype)
        self.trace = []
        taps = []
        for i, layer in enumerate(self.layers, start=1):
            k = self.plan[i - 1]
            if k is not None:
                f = torch.cat([f, self.time_embed[k](temb)[:, None]], dim=1)
            self.trace.append(f.shape[1])
            f = layer(f)[:, :n]
            if i in self.taps:
                taps.append(f)
        return taps

    def fuse_layers(self, feats: list[torch.Tensor]) -> list[torch.Tensor]:
        if len(feats) != 4:
            raise ValueError(f"fuse_layers expects 4 feature sets, got {len(feats)}")
        sizes = self.arch.level_sizes()
        out = []
        for f, proj, s in zip(feats, self.fuse_proj, sizes):
            b, n, d = f.shape
            m = proj(f.transpose(1, 2).reshape(b, d, self.grid, self.grid))
            out.append(_resample(m, s))
        return out

    def forward(self, x: torch.Tensor, t) -> list[torch.Tensor]:
        return self.fuse_layers(self.forward_features(x, t))


def _resample(x: torch.Tensor, size: int) -> torch.Tensor:
    h = x.shape[-1]
    if h == size:
        return x
    if h > size:
        return F.adaptive_avg_pool2d(x, size)
    return F.interpolate(x, size=(size, size), mode="bilinear", align_corners=False)


class MaskDenoiser(nn.Module):
    """U-Net over the noisy mask with condition injection at every level.

    Injection is concat + 1x1 conv. The decoder has ``levels - 1`` layers
    (3 for the default 4-level pyramid) whose outputs form the hybrid
    distribution.
    """

    def __init__(self, arch: ArchConfig):
        super().__init__()
        if len(arch.den_widths) != arch.levels:
            raise ValueError("den_widths must have one entry per pyramid level")
        self.arch = arch
        w = arch.den_widths
        ws, td = arch.stem_width, arch.time_dim
        self.time_mlp = nn.Sequential(nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td))
        self.stem = nn.Conv2d(1, ws, 3, padding=1)
        n_down = _stem_downs(arch.stem_stride)
        downs = [ConvBlock(ws, ws, stride=2) for _ in range(max(n_down - 1, 0))]
        self.stem_down = nn.Sequential(*downs)
        self.enc = nn.ModuleList(
            [ConvBlock(ws, w[0], stride=2 if n_down else 1)]
            + [ConvBlock(w[k - 1], w[k], stride=2) for k in range(1, len(w))]
        )
        self.enc_time = nn.ModuleList([nn.Linear(td, wk) for wk in w])
        self.inject = nn.ModuleList([nn.Conv2d(wk + arch.cond_channels, wk, 1) for wk in w])
        self.dec = nn.ModuleList([ConvBlock(w[k + 1] + w[k], w[k]) for k in reversed(range(len(w) - 1))])
        self.dec_time = nn.ModuleList([nn.Linear(td, w[k]) for k in reversed(range(len(w) - 1))])
        self.head = nn.Sequential(nn.Conv2d(w[0] + ws, ws, 3, padding=1), nn.SiLU(), nn.Conv2d(ws, 1, 1))

    def forward(self, m_t: torch.Tensor, t, cond: list[torch.Tensor]):
        if len(cond) != self.arch.levels:
            raise ValueError(f"expected {self.arch.levels} condition levels, got {len(cond)}")
        b = m_t.shape[0]
        temb = self.time_mlp(timestep_embedding(_as_batch_t(t, b, m_t.device), self.arch.time_dim).to(m_t.dtype))
        h0 = self.stem(m_t)
        h = self.stem_down(h0)
        skips = []
        for k, (block, tp, inj) in enumerate(zip(self.enc, self.enc_time, self.inject)):
            h = block(h) + tp(temb)[:, :, None, None]
            c = cond[k]
            if c.shape[-2:] != h.shape[-2:] or c.shape[1] != self.arch.cond_channels:
                raise ValueError(
                    f"condition level {k + 1} has shape {tuple(c.shape[1:])}, "
                    f"injection point expects ({self.arch.cond_channels}, {h.shape[-2]}, {h.shape[-1]})"
                )
            h = inj(torch.cat([h, c], dim=1))
            skips.append(h)
        hybrid = []
        for j, (block, tp) in enumerate(zip(self.dec, self.dec_time)):
            skip = skips[-2 - j]
            up = F.interpolate(h, size=skip.shape[-2:], mode="nearest")
            h = block(torch.cat([up, skip], dim=1)) + tp(temb)[:, :, None, None]
            hybrid.append(h)
        up = F.interpolate(h, size=m_t.shape[-2:], mode="bilinear", align_corners=False)
        logits = self.head(torch.cat([up, h0], dim=1))
        return logits, HybridDistribution(hybrid, t)


# --------------------------------------------------------------------------
# model container


def init_uniform_fan_in(module: nn.Module, seed: int) -> None:
    """Re-initialise every parameter deterministically from ``seed``."""
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, mod in sorted(module.named_modules(), key=lambda kv: kv[0]):
            if isinstance(mod, (nn.Conv2d, nn.Linear)):
                fan_in = mod.weight[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                mod.weight.copy_(torch.rand(mod.weight.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound)
                if mod.bias is not None:
                    mod.bias.copy_(torch.rand(mod.bias.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound)
            elif isinstance(mod, (nn.GroupNorm, nn.LayerNorm)):
                mod.weight.fill_(1.0)
                mod.bias.zero_()
            elif isinstance(mod, TimeTokenEncoder):
                mod.pos.copy_((torch.rand(mod.pos.shape, generator=gen, dtype=torch.float64) * 2 - 1) * 0.02)


class CondDiffusionModel(nn.Module):
    """Conditional encoder + mask denoiser for one role (leader/follower)."""

    def __init__(self, arch: ArchConfig, role: str = "leader", tce_mode: str | None = None, seed: int = 0):
        super().__init__()
        if role not in ("leader", "follower"):
            raise ValueError(f"role must be leader or follower, got {role!r}")
        if role == "leader" and tce_mode is not None:
            raise ValueError("the leader encoder is not time conditioned")
        if tce_mode is not None and tce_mode not in TCE_MODES:
            raise ValueError(f"unknown tce_mode {tce_mode!r}; expected one of {TCE_MODES}")
        self.arch = arch
        self.role = role
        self.tce_mode = tce_mode
        self.seed = int(seed)
        self.frozen = False
        self.encoder = TimeTokenEncoder(arch, tce_mode) if tce_mode else ConvPyramidEncoder(arch)
        self.denoiser = MaskDenoiser(arch)
        init_uniform_fan_in(self, seed)

    def freeze(self) -> "CondDiffusionModel":
        self.frozen = True
        for p in self.parameters():
            p.requires_grad_(False)
        return self.eval()

    def train(self, mode: bool = True):
        # a frozen model stays in eval mode
        return super().train(mode and not self.frozen)

    def encode(self, x: torch.Tensor, t=None) -> ConditionalDistribution:
        res = self.arch.resolution
        if x.shape[-2:] != (res, res):
            raise ValueError(f"expected {res}x{res} input, got {tuple(x.shape[-2:])}")
        if res % self.arch.stem_stride:
            raise ValueError(f"resolution {res} not divisible by stride {self.arch.stem_stride}")
        levels = self.encoder(x, t)
        return ConditionalDistribution(levels, self.role, self.tce_mode is not None)

    def denoise(self, m_t: torch.Tensor, t, c: ConditionalDistribution):
        return self.denoiser(m_t, t, c.levels)

    def x0_signal(self, m_t: torch.Tensor, t, c: ConditionalDistribution) -> torch.Tensor:
        """Denoiser output mapped to the [-1, 1] diffusion domain."""
        logits, _ = self.denoise(m_t, t, c)
        return torch.tanh(logits / 2)

    def manifest(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "module": self.role,
            "tce_mode": self.tce_mode,
            "seed": self.seed,
            "frozen": self.frozen,
            "arch": self.arch.to_dict(),
        }


def build_model(arch: ArchConfig, role: str, tce_mode: str | None = None, seed: int = 0) -> CondDiffusionModel:
    return CondDiffusionModel(arch, role, tce_mode, seed)


def leader_encode(x_h: torch.Tensor, model: CondDiffusionModel) -> ConditionalDistribution:
    return model.encode(x_h)


def follower_encode(x_l: torch.Tensor, t, model: CondDiffusionModel, T: int | None = None) -> ConditionalDistribution:
    if T is not None:
        tt = t if isinstance(t, torch.Tensor) else torch.tensor([int(t)])
        if int(tt.min()) < 1 or int(tt.max()) > T:
            raise ValueError(f"timestep out of range [1, {T}]")
    return model.encode(x_l, t)


def fuse_layers(model: CondDiffusionModel, feats: list[torch.Tensor]) -> ConditionalDistribution:
    if not isinstance(model.encoder, TimeTokenEncoder):
        raise ValueError("fuse_layers needs a time-token encoder")
    return ConditionalDistribution(model.encoder.fuse_layers(feats), model.role, True)


def denoise(m_t: torch.Tensor, t, c: ConditionalDistribution, model: CondDiffusionModel):
    return model.denoise(m_t, t, c)


# --------------------------------------------------------------------------
# serialization


def write_tensor_file(path, tensors: dict[str, torch.Tensor], manifest: dict) -> None:
    """Write named tensors plus a JSON manifest; output bytes depend only on content."""
    meta = {"manifest": json.dumps(manifest, sort_keys=True)}
    clean = {k: v.detach().contiguous().clone() for k, v in tensors.items()}
    save_file(clean, str(path), metadata=meta)


def read_tensor_file(path) -> tuple[dict[str, torch.Tensor], dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with safe_open(str(path), framework="pt") as f:
        meta = f.metadata() or {}
        tensors = {k: f.get_tensor(k) for k in f.keys()}
    if "manifest" not in meta:
        raise ValueError(f"{path}: missing manifest")
    return tensors, json.loads(meta["manifest"])


def model_tensors(model: CondDiffusionModel, prefix: str = "") -> dict[str, torch.Tensor]:
    return {prefix + k: v for k, v in model.state_dict().items()}


def model_from_manifest(manifest: dict, tensors: dict[str, torch.Tensor], prefix: str = "") -> CondDiffusionModel:
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {manifest.get('schema_version')}")
    arch = ArchConfig.from_dict(manifest["arch"])
    model = CondDiffusionModel(arch, manifest["module"], manifest["tce_mode"], manifest["seed"])
    state = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
    model.load_state_dict(state, strict=True)
    if manifest.get("frozen"):
        model.freeze()
    return model


def save_model(model: CondDiffusionModel, path) -> None:
    write_tensor_file(path, model_tensors(model), model.manifest())


def load_model(path) -> CondDiffusionModel:
    tensors, manifest = read_tensor_file(path)
    return model_from_manifest(manifest, tensors)
