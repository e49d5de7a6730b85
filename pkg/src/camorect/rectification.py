"""Knowledge-rectification objectives.

Distribution distances between Follower and (frozen) Leader features, the
conditional-distribution (CDC) and hybrid-distribution (HDC) consistency
losses built on them, and their cross-view sum (CC).

Every distance takes the Follower tensor ``p`` first and the Leader tensor
``q`` second; ``q`` is always detached.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F

from .models import ConditionalDistribution, ContractError, HybridDistribution, check_same_shapes

__all__ = [
    "METRIC_NAMES",
    "DistMetric",
    "RectificationConfig",
    "dist_metric",
    "cdc_loss",
    "hdc_loss",
    "cc_losses",
]

METRIC_NAMES = ("MAE", "MSE", "MMD", "FA", "CS", "KL")


@dataclass(frozen=True)
class DistMetric:
    name: str = "KL"
    temperature: float = 1.0
    # spatial positions kept for the quadratic metrics
    max_positions_fa: int = 64
    max_positions_mmd: int = 256

    def __post_init__(self):
        if self.name not in METRIC_NAMES:
            raise ValueError(f"unknown metric {self.name!r}; expected one of {METRIC_NAMES}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass
class RectificationConfig:
    cdc_enabled: bool = True
    hdc_enabled: bool = True
    hdc_layers: tuple[int, ...] = (2, 3)
    cc_enabled: bool = True
    metric_cdc: DistMetric = field(default_factory=DistMetric)
    metric_hdc: DistMetric = field(default_factory=DistMetric)
    weight_cdc: float = 1.0
    weight_hdc: float = 1.0

    def __post_init__(self):
        if isinstance(self.metric_cdc, (str, dict)):
            self.metric_cdc = _metric(self.metric_cdc)
        if isinstance(self.metric_hdc, (str, dict)):
            self.metric_hdc = _metric(self.metric_hdc)
        self.hdc_layers = tuple(sorted(set(int(i) for i in self.hdc_layers)))
        if self.hdc_enabled and not self.hdc_layers:
            raise ValueError("hdc_enabled requires a non-empty hdc_layers")
        if not set(self.hdc_layers) <= {1, 2, 3}:
            raise ValueError(f"hdc_layers must be a subset of {{1, 2, 3}}, got {self.hdc_layers}")
        if self.weight_cdc < 0 or self.weight_hdc < 0:
            raise ValueError("loss weights must be non-negative")

    @classmethod
    def disabled(cls) -> "RectificationConfig":
        return cls(cdc_enabled=False, hdc_enabled=False, cc_enabled=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hdc_layers"] = list(self.hdc_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RectificationConfig":
        known = {"cdc_enabled", "hdc_enabled", "hdc_layers", "cc_enabled", "metric_cdc", "metric_hdc",
                 "weight_cdc", "weight_hdc"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown rectification keys: {sorted(unknown)}")
        return cls(**d)


def _metric(m) -> DistMetric:
    if isinstance(m, DistMetric):
        return m
    if isinstance(m, str):
        return DistMetric(m)
    return DistMetric(**m)


def _positions(x: torch.Tensor, cap: int) -> torch.Tensor:
    """(B, C, H, W) -> (B, N, C) with N <= cap evenly strided positions."""
    b, c = x.shape[:2]
    v = x.reshape(b, c, -1).transpose(1, 2)
    n = v.shape[1]
    if n > cap:
        idx = torch.linspace(0, n - 1, cap).round().long()
        v = v[:, idx]
    return v


def _kl(p, q, tau):
    b, c = p.shape[:2]
    log_ps = F.log_softmax(p.reshape(b, c, -1) / tau, dim=-1)
    log_pt = F.log_softmax(q.reshape(b, c, -1) / tau, dim=-1)
    kl = (log_pt.exp() * (log_pt - log_ps)).sum(-1)
    return kl.mean() * tau**2


def _cs(p, q):
    pn = F.normalize(p, dim=1, eps=1e-12)
    qn = F.normalize(q, dim=1, eps=1e-12)
    # 1 - cos for unit vectors, and exactly 0 when p == q
    return 0.5 * ((pn - qn) ** 2).sum(1).mean()


def _sqdist(a, b):
    return ((a[:, :, None, :] - b[:, None, :, :]) ** 2).sum(-1)


def _mmd(p, q, cap):
    x = _positions(p, cap)
    y = _positions(q, cap)
    dyy = _sqdist(y, y)
    n = y.shape[1]
    if n > 1:
        iu = torch.triu_indices(n, n, offset=1)
        med = dyy[:, iu[0], iu[1]].median(dim=1).values
    else:
        med = torch.ones(y.shape[0], dtype=y.dtype)
    bw = torch.where(med > 0, med, torch.ones_like(med))[:, None, None].detach()
    kxx = torch.exp(-_sqdist(x, x) / (2 * bw)).mean((1, 2))
    kyy = torch.exp(-dyy / (2 * bw)).mean((1, 2))
    kxy = torch.exp(-_sqdist(x, y) / (2 * bw)).mean((1, 2))
    return (kxx + kyy - 2 * kxy).clamp_min(0).mean()


def _fa(p, q, cap):
    x = F.normalize(_positions(p, cap), dim=-1, eps=1e-12)
    y = F.normalize(_positions(q, cap), dim=-1, eps=1e-12)
    ax = x @ x.transpose(1, 2)
    ay = y @ y.transpose(1, 2)
    return ((ax - ay) ** 2).mean()


def dist_metric(metric, p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """Distance between feature maps ``p`` (student) and ``q`` (teacher).

    Inputs are (B, C, H, W) or (C, H, W). The returned scalar is the loss
    form of the metric: non-negative and zero when ``p == q``.

    MAE, MSE: elementwise mean. KL: KL(softmax(q/tau) || softmax(p/tau)) over
    the spatial axis of each channel. CS: one minus the cosine similarity of
    per-pixel channel vectors. MMD: squared RBF-kernel MMD between the sets
    of per-pixel feature vectors, bandwidth from the median pairwise squared
    distance of ``q``. FA: mean squared difference of cosine-affinity
    matrices over subsampled positions.
    """
    metric = _metric(metric)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {tuple(p.shape)} vs {tuple(q.shape)}")
    q = q.detach()
    if p.dim() == 3:
        p, q = p[None], q[None]
    name = metric.name
    if name == "MAE":
        return (p - q).abs().mean()
    if name == "MSE":
        return ((p - q) ** 2).mean()
    if name == "KL":
        return _kl(p, q, metric.temperature)
    if name == "CS":
        return _cs(p, q)
    if name == "MMD":
        return _mmd(p, q, metric.max_positions_mmd)
    return _fa(p, q, metric.max_positions_fa)


def cdc_loss(c_l: ConditionalDistribution, c_h: ConditionalDistribution, metric) -> torch.Tensor:
    """Sum of per-level distances between Follower and Leader condition pyramids."""
    a = c_l.levels if isinstance(c_l, ConditionalDistribution) else list(c_l)
    b = c_h.levels if isinstance(c_h, ConditionalDistribution) else list(c_h)
    if len(a) != len(b):
        raise ContractError(f"condition level count mismatch: {len(a)} vs {len(b)}")
    check_same_shapes(a, b, "condition level")
    return sum(dist_metric(metric, x, y) for x, y in zip(a, b))


def hdc_loss(d_l: HybridDistribution, d_h: HybridDistribution, layers=(2, 3), metric="KL") -> torch.Tensor:
    """Sum of distances over the selected (1-based) decoder layers."""
    a = d_l.layers if isinstance(d_l, HybridDistribution) else list(d_l)
    b = d_h.layers if isinstance(d_h, HybridDistribution) else list(d_h)
    layers = sorted(set(int(i) for i in layers))
    if not layers:
        raise ValueError("hdc_loss needs at least one layer")
    if len(a) != 3 or len(b) != 3:
        raise ContractError(f"hybrid distributions must have 3 layers, got {len(a)} and {len(b)}")
    if not set(layers) <= {1, 2, 3}:
        raise ValueError(f"layers must be a subset of {{1, 2, 3}}, got {layers}")
    check_same_shapes(a, b, "hybrid layer")
    return sum(dist_metric(metric, a[i - 1], b[i - 1]) for i in layers)


def single_view_loss(view, config: RectificationConfig) -> torch.Tensor:
    c_l, c_h, d_l, d_h = view
    total = 0.0
    if config.cdc_enabled:
        total = total + config.weight_cdc * cdc_loss(c_l, c_h, config.metric_cdc)
    if config.hdc_enabled:
        total = total + config.weight_hdc * hdc_loss(d_l, d_h, config.hdc_layers, config.metric_hdc)
    if not torch.is_tensor(total):
        total = torch.zeros((), dtype=c_l.levels[0].dtype)
    return total


def cc_losses(view_a, view_A, config: RectificationConfig) -> torch.Tensor:
    """Rectification loss summed over the two augmented views.

    Each view is a tuple ``(c_l, c_h, d_l, d_h)``. Passing ``view_A=None``
    gives the single-view objective.
    """
    total = single_view_loss(view_a, config)
    if view_A is not None:
        total = total + single_view_loss(view_A, config)
    return total
