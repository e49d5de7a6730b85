"""Leader pretraining, Follower training with rectification, and ablations.

Training state is deterministic given ``TrainConfig.seed``: each epoch draws
its shuffling, timesteps, noise and augmentations from generators seeded by
``(seed, epoch)``, so resuming from a checkpoint replays the same stream.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import diffusion as dfn
from . import metrics as mt
from .models import (
    ArchConfig,
    CondDiffusionModel,
    ConditionalDistribution,
    ContractError,
    HybridDistribution,
    build_model,
    check_same_shapes,
    model_from_manifest,
    model_tensors,
    read_tensor_file,
    write_tensor_file,
)
from .rectification import RectificationConfig, cc_losses
from .synth import Corpus, apply_aug, load_corpus, resize_bicubic, sample_aug_params

__all__ = [
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "structure_loss",
    "leader_step_loss",
    "follower_step_loss",
    "train_leader",
    "train_follower",
    "load_checkpoint",
    "predict",
    "evaluate_model",
    "run_ablation",
    "file_sha256",
]

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.safetensors"
LOG_NAME = "train_log.jsonl"


class TrainingError(RuntimeError):
    """Non-finite loss or a broken training invariant."""


# --------------------------------------------------------------------------
# config


@dataclass
class TrainConfig:
    corpus: str = "corpus"
    scale: int = 4
    resolution: int = 128
    T: int = 100
    schedule: str = "linear"
    # None: the standard 1e-4..0.02 range rescaled to T steps
    beta_min: float | None = None
    beta_max: float | None = None
    sampling_steps: int = 10
    batch_size: int = 20
    lr: float = 1e-4
    weight_decay: float = 1e-2
    epochs: int = 30
    rectification: RectificationConfig = field(default_factory=RectificationConfig)
    tce_mode: str | None = "EL"
    seed: int = 0
    arch: dict = field(default_factory=dict)
    threads: int | None = 1

    def __post_init__(self):
        if isinstance(self.rectification, dict):
            self.rectification = RectificationConfig.from_dict(self.rectification)
        for name in ("scale", "resolution", "T", "sampling_steps", "batch_size", "epochs"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.sampling_steps > self.T:
            raise ValueError(f"sampling_steps ({self.sampling_steps}) exceeds T ({self.T})")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if "resolution" in self.arch:
            raise ValueError("set resolution on the config, not inside arch")
        self.arch_config()  # validates arch keys

    def arch_config(self) -> ArchConfig:
        return ArchConfig.from_dict({**self.arch, "resolution": self.resolution})

    def betas(self) -> tuple[float, float]:
        k = 1000.0 / self.T
        lo = self.beta_min if self.beta_min is not None else 1e-4 * k
        hi = self.beta_max if self.beta_max is not None else min(0.02 * k, 0.999)
        return lo, hi

    def noise_schedule(self) -> dfn.NoiseSchedule:
        lo, hi = self.betas()
        return dfn.make_schedule(self.T, self.schedule, lo, hi)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["rectification"] = self.rectification.to_dict()
        d["arch"] = dict(self.arch)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.from_dict(json.loads(text))

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# losses


def structure_loss(pred_logits: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Boundary-weighted BCE plus weighted IoU, averaged over the batch.

    Pixel weights are ``1 + 5 * |avgpool31(gt) - gt|`` (zero-padded window),
    which emphasises pixels near the object boundary.
    """
    if pred_logits.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred_logits.shape)} vs {tuple(gt.shape)}")
    if pred_logits.dim() != 4:
        raise ValueError("expected (B, 1, H, W) tensors")
    gt = gt.to(pred_logits.dtype)
    weit = 1 + 5 * (F.avg_pool2d(gt, 31, stride=1, padding=15) - gt).abs()
    wbce = F.binary_cross_entropy_with_logits(pred_logits, gt, reduction="none")
    wbce = (weit * wbce).sum((2, 3)) / weit.sum((2, 3))
    prob = torch.sigmoid(pred_logits)
    inter = (prob * gt * weit).sum((2, 3))
    union = ((prob + gt) * weit).sum((2, 3))
    wiou = 1 - (inter + 1) / (union - inter + 1)
    return (wbce + wiou).mean()


def leader_step_loss(model: CondDiffusionModel, x: torch.Tensor, mask: torch.Tensor, t: torch.Tensor,
                     eps: torch.Tensor, schedule: dfn.NoiseSchedule) -> torch.Tensor:
    """Plain conditional-diffusion loss on one batch with given draws."""
    m_t = dfn.forward_noise(dfn.mask_to_signal(mask), t, eps, schedule).values
    logits, _ = model.denoise(m_t, t, model.encode(x))
    return structure_loss(logits, mask)


def _split(batch_feats, n_views: int):
    return [list(z) for z in zip(*(f.chunk(n_views, 0) for f in batch_feats))]


def follower_step_loss(
    follower: CondDiffusionModel,
    leader: CondDiffusionModel | None,
    x_h: torch.Tensor,
    x_l: torch.Tensor,
    mask: torch.Tensor,
    t: torch.Tensor,
    t_prime: torch.Tensor,
    eps: torch.Tensor,
    schedule: dfn.NoiseSchedule,
    rect: RectificationConfig,
    n_views: int = 1,
) -> tuple[torch.Tensor, dict]:
    """Follower objective for a batch holding ``n_views`` stacked views.

    The Leader sees HQ inputs at timestep ``t``; the Follower sees LQ inputs
    at ``t_prime``. Both noise the same mask with the same ``eps``.
    """
    x0 = dfn.mask_to_signal(mask)
    m_tp = dfn.forward_noise(x0, t_prime, eps, schedule).values
    c_l = follower.encode(x_l, t_prime if follower.tce_mode else None)
    logits, d_l = follower.denoise(m_tp, t_prime, c_l)
    s_loss = sum(structure_loss(lg, m) for lg, m in zip(logits.chunk(n_views), mask.chunk(n_views)))
    parts = {"structure": s_loss.item()}
    if not (rect.cdc_enabled or rect.hdc_enabled):
        parts["rect"] = 0.0
        return s_loss, parts
    if leader is None:
        raise ValueError("rectification needs a leader model")
    with torch.no_grad():
        m_t = dfn.forward_noise(x0, t, eps, schedule).values
        c_h = leader.encode(x_h)
        _, d_h = leader.denoise(m_t, t, c_h)
    check_same_shapes(c_l.levels, c_h.levels, "condition level")
    check_same_shapes(d_l.layers, d_h.layers, "hybrid layer")
    views = []
    for cl, ch, dl, dh in zip(_split(c_l.levels, n_views), _split(c_h.levels, n_views),
                              _split(d_l.layers, n_views), _split(d_h.layers, n_views)):
        views.append((ConditionalDistribution(cl, "follower", bool(follower.tce_mode)),
                      ConditionalDistribution(ch, "leader", False),
                      HybridDistribution(dl), HybridDistribution(dh)))
    r_loss = cc_losses(views[0], views[1] if n_views > 1 else None, rect)
    parts["rect"] = r_loss.item()
    return s_loss + r_loss, parts


# --------------------------------------------------------------------------
# data


def _fit_images(x: np.ndarray, res: int) -> np.ndarray:
    if x.shape[-1] == res and x.shape[-2] == res:
        return x
    return np.clip(resize_bicubic(x, res, res), 0, 1).astype(np.float32)


def _fit_masks(m: np.ndarray, res: int) -> np.ndarray:
    h, w = m.shape[-2:]
    if (h, w) == (res, res):
        return m
    iy = np.minimum(((np.arange(res) + 0.5) * h / res).astype(int), h - 1)
    ix = np.minimum(((np.arange(res) + 0.5) * w / res).astype(int), w - 1)
    return m[..., iy[:, None], ix[None, :]]


@dataclass
class _Data:
    ids: list
    hq: np.ndarray
    lq: np.ndarray | None
    mask: np.ndarray


def load_split(corpus: Corpus, split: str, scale: int | None, res: int) -> _Data:
    if scale is not None and scale not in corpus.scales:
        raise ValueError(f"scale {scale} not in corpus scales {corpus.scales}")
    ids, hq, lq, masks = corpus.arrays(split, scale)
    if not ids:
        raise ValueError(f"corpus split {split!r} is empty")
    return _Data(ids, _fit_images(hq, res), None if lq is None else _fit_images(lq, res), _fit_masks(masks, res))


def _open_corpus(config: TrainConfig) -> Corpus:
    try:
        return load_corpus(config.corpus, verify=False)
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"training corpus not found: {config.corpus}") from exc


def _epoch_generators(seed: int, epoch: int, salt: int) -> tuple[torch.Generator, np.random.Generator]:
    ss = np.random.SeedSequence([int(seed), int(epoch), salt])
    a, b = ss.generate_state(2, dtype=np.uint64)
    return torch.Generator().manual_seed(int(a) & (2**63 - 1)), np.random.default_rng(int(b))


# --------------------------------------------------------------------------
# checkpoints


@dataclass
class TrainResult:
    checkpoint: Path
    epoch_losses: list[float]
    model: CondDiffusionModel
    audit: dict = field(default_factory=dict)

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else float("nan")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _optim_tensors(opt: torch.optim.Optimizer) -> tuple[dict, dict]:
    sd = opt.state_dict()
    tensors = {}
    for idx, st in sd["state"].items():
        for k, v in st.items():
            tensors[f"optim.{idx}.{k}"] = v if torch.is_tensor(v) else torch.tensor(v)
    return tensors, {"param_groups": sd["param_groups"]}


def _optim_load(opt: torch.optim.Optimizer, tensors: dict, meta: dict) -> None:
    state: dict = {}
    for key, v in tensors.items():
        if not key.startswith("optim."):
            continue
        _, idx, name = key.split(".", 2)
        state.setdefault(int(idx), {})[name] = v
    opt.load_state_dict({"state": state, "param_groups": meta["param_groups"]})


def _save_checkpoint(path: Path, model: CondDiffusionModel, opt, config: TrainConfig, epoch: int,
                     history: list[float], extra: dict) -> None:
    tensors = model_tensors(model, "model.")
    otensors, ometa = _optim_tensors(opt)
    tensors.update(otensors)
    gen = torch.Generator().manual_seed(0)
    tensors["rng.torch"] = gen.get_state()
    manifest = {
        "kind": "checkpoint",
        "model": model.manifest(),
        "config": config.to_dict(),
        "config_hash": config.hash(),
        "epoch": epoch,
        "epoch_losses": history,
        "optimizer": ometa,
        "rng": {"seed": config.seed, "next_epoch": epoch + 1},
        **extra,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    write_tensor_file(path, tensors, manifest)


def load_checkpoint(path) -> tuple[CondDiffusionModel, dict, dict]:
    """Return ``(model, manifest, tensors)``; plain model files load too."""
    tensors, manifest = read_tensor_file(path)
    if manifest.get("kind") == "checkpoint":
        model = model_from_manifest(manifest["model"], tensors, "model.")
    else:
        model = model_from_manifest(manifest, tensors)
    return model, manifest, tensors


def _load_leader(leader_ckpt) -> tuple[CondDiffusionModel, str]:
    path = Path(leader_ckpt)
    if not path.exists():
        raise FileNotFoundError(f"leader checkpoint not found: {path}")
    model, manifest, _ = load_checkpoint(path)
    if model.role != "leader":
        raise ContractError(f"{path} holds a {model.role} model, expected a leader")
    return model.freeze(), file_sha256(path)


# --------------------------------------------------------------------------
# training loops


class _Logger:
    def __init__(self, path: Path | None):
        self.path = path

    def write(self, record: dict) -> None:
        if self.path is None:
            return
        with open(self.path, "a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")


def _check_finite(loss: torch.Tensor, epoch: int, step: int, parts: dict) -> None:
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite loss at epoch {epoch} step {step}: {loss.item()} (components {parts})")


def _setup(config: TrainConfig):
    if config.threads:
        torch.set_num_threads(int(config.threads))
    return config.noise_schedule()


def _resume_state(resume, model, opt, config: TrainConfig) -> tuple[int, list[float]]:
    if resume is None:
        return 0, []
    tensors, manifest = read_tensor_file(resume)
    if manifest.get("config_hash") != config.hash():
        raise ValueError(f"{resume}: config hash {manifest.get('config_hash')} does not match {config.hash()}")
    state = {k[len("model."):]: v for k, v in tensors.items() if k.startswith("model.")}
    model.load_state_dict(state, strict=True)
    _optim_load(opt, tensors, manifest["optimizer"])
    return int(manifest["epoch"]), list(manifest["epoch_losses"])


def train_leader(config: TrainConfig, out_dir=None, resume=None, max_steps: int | None = None) -> TrainResult:
    """Train the Leader on HQ images; one checkpoint is written per epoch."""
    schedule = _setup(config)
    corpus = _open_corpus(config)
    data = load_split(corpus, "train", None, config.resolution)
    model = build_model(config.arch_config(), "leader", None, config.seed)
    opt = torch.optim.AdamW(model.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    logger = _Logger(out / LOG_NAME if out else None)
    ckpt = out / CHECKPOINT_NAME if out else None
    start, history = _resume_state(resume, model, opt, config)
    n = len(data.ids)
    steps = 0
    for epoch in range(start + 1, config.epochs + 1):
        gen, _ = _epoch_generators(config.seed, epoch, 1)
        perm = torch.randperm(n, generator=gen)
        model.train()
        total, count = 0.0, 0
        for step, lo in enumerate(range(0, n, config.batch_size)):
            idx = perm[lo:lo + config.batch_size].numpy()
            x = torch.from_numpy(data.hq[idx])
            m = torch.from_numpy(data.mask[idx].astype(np.float32))[:, None]
            t = torch.randint(1, config.T + 1, (len(idx),), generator=gen)
            eps = torch.randn(m.shape, generator=gen)
            loss = leader_step_loss(model, x, m, t, eps, schedule)
            _check_finite(loss, epoch, step, {})
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
            logger.write({"epoch": epoch, "step": step, "loss": loss.item(), "structure": loss.item()})
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        history.append(total / count)
        logger.write({"epoch": epoch, "epoch_loss": history[-1]})
        log.info("leader epoch %d loss %.5f", epoch, history[-1])
        if ckpt is not None:
            _save_checkpoint(ckpt, model, opt, config, epoch, history, {"role": "leader"})
        if max_steps is not None and steps >= max_steps:
            break
    model.eval()
    return TrainResult(ckpt, history, model)


def _views(data: _Data, idx: np.ndarray, rng: np.random.Generator, two: bool):
    """HQ, LQ and mask tensors for view ``a`` and, with ``two``, an augmented view ``A``."""
    hq = [data.hq[idx]]
    lq = [data.lq[idx]]
    mk = [data.mask[idx]]
    if two:
        ah, al, am = [], [], []
        for i in idx:
            p = sample_aug_params(rng)
            h, m = apply_aug(data.hq[i], data.mask[i], p)
            l, _ = apply_aug(data.lq[i], data.mask[i], p)
            ah.append(h)
            al.append(l)
            am.append(m)
        hq.append(np.stack(ah))
        lq.append(np.stack(al))
        mk.append(np.stack(am))
    return (torch.from_numpy(np.concatenate(hq)), torch.from_numpy(np.concatenate(lq)),
            torch.from_numpy(np.concatenate(mk).astype(np.float32))[:, None])


def train_follower(config: TrainConfig, leader_ckpt, out_dir=None, resume=None,
                   max_steps: int | None = None) -> TrainResult:
    """Train the Follower on LQ images, rectified against a frozen Leader.

    Every step checks that no Leader parameter has received a gradient; the
    Leader checkpoint file is re-hashed at every epoch end.
    """
    schedule = _setup(config)
    leader, leader_hash = _load_leader(leader_ckpt)
    if leader.arch != config.arch_config():
        raise ContractError("leader architecture differs from the configured architecture")
    corpus = _open_corpus(config)
    data = load_split(corpus, "train", config.scale, config.resolution)
    follower = build_model(config.arch_config(), "follower", config.tce_mode, config.seed)
    opt = torch.optim.AdamW(follower.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    rect = config.rectification
    two = rect.cc_enabled and (rect.cdc_enabled or rect.hdc_enabled)
    n_views = 2 if two else 1
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    logger = _Logger(out / LOG_NAME if out else None)
    ckpt = out / CHECKPOINT_NAME if out else None
    start, history = _resume_state(resume, follower, opt, config)
    audit = {"steps_audited": 0, "leader_grad_nonzero": 0, "leader_hash": leader_hash}
    n = len(data.ids)
    steps = 0
    for epoch in range(start + 1, config.epochs + 1):
        gen, rng = _epoch_generators(config.seed, epoch, 2)
        perm = torch.randperm(n, generator=gen)
        follower.train()
        total, count = 0.0, 0
        for step, lo in enumerate(range(0, n, config.batch_size)):
            idx = perm[lo:lo + config.batch_size].numpy()
            x_h, x_l, m = _views(data, idx, rng, two)
            b = m.shape[0]
            t = torch.randint(1, config.T + 1, (b,), generator=gen)
            t_prime = torch.randint(1, config.T + 1, (b,), generator=gen)
            eps = torch.randn(m.shape, generator=gen)
            loss, parts = follower_step_loss(follower, leader, x_h, x_l, m, t, t_prime, eps,
                                             schedule, rect, n_views)
            _check_finite(loss, epoch, step, parts)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            audit["steps_audited"] += 1
            if any(p.grad is not None and bool(p.grad.ne(0).any()) for p in leader.parameters()):
                audit["leader_grad_nonzero"] += 1
                raise TrainingError(f"leader received gradients at epoch {epoch} step {step}")
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
            logger.write({"epoch": epoch, "step": step, "loss": loss.item(), **parts})
            steps += 1
            if max_steps is not None and steps >= max_steps:
                break
        history.append(total / count)
        logger.write({"epoch": epoch, "epoch_loss": history[-1]})
        log.info("follower epoch %d loss %.5f", epoch, history[-1])
        if file_sha256(leader_ckpt) != leader_hash:
            raise TrainingError(f"leader checkpoint {leader_ckpt} changed during training")
        if ckpt is not None:
            _save_checkpoint(ckpt, follower, opt, config, epoch, history,
                             {"role": "follower", "leader_sha256": leader_hash})
        if max_steps is not None and steps >= max_steps:
            break
    follower.eval()
    return TrainResult(ckpt, history, follower, audit)


# --------------------------------------------------------------------------
# sampling and evaluation


def predict(model: CondDiffusionModel, images: np.ndarray, schedule: dfn.NoiseSchedule, steps: int,
            seed: int, batch_size: int = 50) -> np.ndarray:
    """Sample probability maps (N, H, W) for images (N, 3, H, W)."""
    model.eval()
    out = []
    timed = model.tce_mode is not None
    for bi, lo in enumerate(range(0, len(images), batch_size)):
        x = torch.from_numpy(np.ascontiguousarray(images[lo:lo + batch_size]))
        cond = None if timed else model.encode(x)

        def fn(m_t, t, _c):
            c = model.encode(x, t) if timed else cond
            return model.x0_signal(m_t, t, c)

        shape = (x.shape[0], 1, *x.shape[-2:])
        out.append(dfn.sample(fn, None, steps, shape, seed + bi, schedule)[:, 0].numpy())
    return np.concatenate(out).astype(np.float64)


def _report(ids, preds, masks, config_hash: str, scale) -> mt.EvalReport:
    rows = [{"id": sid, **mt.all_metrics(p, g)} for sid, p, g in zip(ids, preds, masks)]
    return mt.EvalReport(rows, mt.aggregate_rows(rows), config_hash, scale)


def evaluate_model(model: CondDiffusionModel, config: TrainConfig, split: str = "test",
                   use_hq: bool = False, seed: int | None = None) -> tuple[mt.EvalReport, np.ndarray]:
    corpus = _open_corpus(config)
    data = load_split(corpus, split, None if use_hq else config.scale, config.resolution)
    images = data.hq if use_hq else data.lq
    seed = config.seed if seed is None else seed
    preds = predict(model, images, config.noise_schedule(), config.sampling_steps, seed)
    report = _report(data.ids, preds, data.mask, config.hash(), None if use_hq else config.scale)
    return report, preds


# --------------------------------------------------------------------------
# ablation


def _row_config(base: TrainConfig, row: dict) -> TrainConfig:
    d = base.to_dict()
    for k, v in row.items():
        if k == "name":
            continue
        if k == "rectification":
            d["rectification"] = {**d["rectification"], **v}
        elif k not in d:
            raise ValueError(f"unknown ablation key {k!r}")
        else:
            d[k] = v
    return TrainConfig.from_dict(d)


def run_ablation(base_config: TrainConfig, rows: list[dict], leader_ckpt, out_dir) -> list[dict]:
    """Train and evaluate one Follower per row under the base seed.

    A row is a dict with a ``name`` and any TrainConfig overrides;
    ``rectification`` overrides merge into the base rectification config.
    Failures are recorded in the row and do not stop later rows. Writes
    ``table.tsv`` and ``table.json`` plus one sub-directory per row.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = []
    for i, row in enumerate(rows):
        name = str(row.get("name", f"row{i}"))
        rdir = out / f"{i:02d}_{_slug(name)}"
        entry = {"name": name}
        t0 = time.time()
        try:
            cfg = _row_config(base_config, row)
            res = train_follower(cfg, leader_ckpt, rdir)
            report, _ = evaluate_model(res.model, cfg)
            report.write(rdir)
            entry.update(report.aggregate)
            entry["final_loss"] = res.final_loss
            entry["checkpoint"] = str(res.checkpoint)
            if not all(math.isfinite(x) for x in res.epoch_losses):
                raise TrainingError("non-finite epoch loss")
        except Exception as exc:  # noqa: BLE001 - rows are independent
            log.exception("ablation row %s failed", name)
            entry["error"] = f"{type(exc).__name__}: {exc}"
        entry["seconds"] = round(time.time() - t0, 2)
        table.append(entry)
        _write_table(out, table)
    _write_table(out, table)
    return table


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in name).strip("_")[:40] or "row"


def _write_table(out: Path, table: list[dict]) -> None:
    (out / "table.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    lines = ["name\t" + "\t".join(mt.METRIC_KEYS) + "\terror"]
    for e in table:
        vals = "\t".join(f"{e[k]:.4f}" if k in e else "nan" for k in mt.METRIC_KEYS)
        lines.append(f"{e['name']}\t{vals}\t{e.get('error', '')}")
    (out / "table.tsv").write_text("\n".join(lines) + "\n")
