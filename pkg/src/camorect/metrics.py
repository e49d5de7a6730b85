"""Camouflaged-object-detection metrics.

S-measure, mean E-measure, weighted F-measure and MAE on continuous
prediction maps in [0, 1] against binary ground truth. The formulas follow
the authors' reference MATLAB code (1-based centroids, ``ddof=1``
deviations, MATLAB ``eps``), with two exceptions for the E-measure noted in
:func:`e_measure`.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

__all__ = [
    "METRIC_KEYS",
    "EvalReport",
    "mae",
    "s_measure",
    "e_measure",
    "weighted_f",
    "all_metrics",
    "evaluate_dataset",
    "load_prediction",
    "save_prediction",
]

log = logging.getLogger(__name__)

EPS = np.finfo(np.float64).eps
METRIC_KEYS = ("s_alpha", "e_phi", "f_beta_w", "mae")


def _prep(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if pred.ndim != 2:
        raise ValueError("expected 2-D maps")
    return pred, gt > 0.5


def mae(pred, gt) -> float:
    pred, gt = _prep(pred, gt)
    return float(np.abs(pred - gt).mean())


# --------------------------------------------------------------------------
# S-measure


def _object_score(x: np.ndarray) -> float:
    mu = x.mean()
    sigma = x.std(ddof=1) if x.size > 1 else 0.0
    return 2.0 * mu / (mu * mu + 1.0 + sigma + EPS)


def _s_object(pred, gt) -> float:
    u = gt.mean()
    return u * _object_score(pred[gt]) + (1 - u) * _object_score(1.0 - pred[~gt])


def _ssim(pred, gt) -> float:
    n = pred.size
    if n == 0:
        return 0.0
    g = gt.astype(np.float64)
    x, y = pred.mean(), g.mean()
    sx = ((pred - x) ** 2).sum() / (n - 1 + EPS)
    sy = ((g - y) ** 2).sum() / (n - 1 + EPS)
    sxy = ((pred - x) * (g - y)).sum() / (n - 1 + EPS)
    a = 4 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0:
        return a / (b + EPS)
    return 1.0 if b == 0 else 0.0


def _centroid(gt) -> tuple[int, int]:
    # 1-based, rounded half away from zero
    rows, cols = gt.shape
    total = gt.sum()
    cy = np.floor((gt.sum(1) * np.arange(1, rows + 1)).sum() / total + 0.5)
    cx = np.floor((gt.sum(0) * np.arange(1, cols + 1)).sum() / total + 0.5)
    return int(cy), int(cx)


def _s_region(pred, gt) -> float:
    h, w = gt.shape
    area = h * w
    y, x = _centroid(gt)
    w1 = x * y / area
    w2 = (w - x) * y / area
    w3 = x * (h - y) / area
    w4 = 1.0 - w1 - w2 - w3
    return (
        w1 * _ssim(pred[:y, :x], gt[:y, :x])
        + w2 * _ssim(pred[:y, x:], gt[:y, x:])
        + w3 * _ssim(pred[y:, :x], gt[y:, :x])
        + w4 * _ssim(pred[y:, x:], gt[y:, x:])
    )


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    """Structure measure: ``alpha * object + (1 - alpha) * region``.

    An all-background GT scores ``1 - mean(pred)``, an all-foreground GT
    scores ``mean(pred)``.
    """
    pred, gt = _prep(pred, gt)
    y = gt.mean()
    if y == 0:
        return float(1.0 - pred.mean())
    if y == 1:
        return float(pred.mean())
    q = alpha * _s_object(pred, gt) + (1 - alpha) * _s_region(pred, gt)
    return float(max(q, 0.0))


# --------------------------------------------------------------------------
# E-measure

E_THRESHOLDS = np.arange(1, 256, dtype=np.float64) / 255.0


def _enhanced(f: float, g: float, mu_f, mu_g):
    af = f - mu_f
    ag = g - mu_g
    align = 2.0 * af * ag / (ag * ag + af * af + EPS)
    return (align + 1.0) ** 2 / 4.0


def e_measure(pred, gt) -> float:
    """Mean enhanced-alignment measure over binarisation thresholds.

    The map is binarised as ``pred >= k/255`` for k = 1..255, i.e. every
    non-trivial cut of an 8-bit map, and the per-threshold scores are
    averaged. Each score is the mean (over all W*H pixels) of the enhanced
    alignment matrix, so a perfect binary prediction scores exactly 1.
    """
    pred, gt = _prep(pred, gt)
    n = gt.size
    fg = np.sort(pred[gt])
    bg = np.sort(pred[~gt])
    tp = fg.size - np.searchsorted(fg, E_THRESHOLDS, side="left")
    fp = bg.size - np.searchsorted(bg, E_THRESHOLDS, side="left")
    fn = fg.size - tp
    tn = bg.size - fp
    if fg.size == 0:
        scores = (n - (tp + fp)) / n
    elif bg.size == 0:
        scores = (tp + fp) / n
    else:
        mu_f = (tp + fp) / n
        mu_g = fg.size / n
        scores = (
            tp * _enhanced(1, 1, mu_f, mu_g)
            + fp * _enhanced(1, 0, mu_f, mu_g)
            + fn * _enhanced(0, 1, mu_f, mu_g)
            + tn * _enhanced(0, 0, mu_f, mu_g)
        ) / n
    return float(np.mean(scores))


# --------------------------------------------------------------------------
# weighted F-measure


def _gauss_kernel(size: int = 7, sigma: float = 5.0) -> np.ndarray:
    r = (size - 1) / 2
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    k = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    return k / k.sum()


def weighted_f(pred, gt, beta2: float = 1.0) -> float:
    """Weighted F-measure with dependency- and importance-weighted errors.

    Errors of background pixels are replaced by the error of their nearest
    foreground pixel (ties resolved column-major, as MATLAB ``bwdist``),
    smoothed by a 7x7 Gaussian (sigma 5), and background errors are
    up-weighted with distance from the object. An empty GT scores 0.
    """
    pred, gt = _prep(pred, gt)
    if not gt.any():
        return 0.0
    err = np.abs(pred - gt)
    dist, (iy, ix) = ndimage.distance_transform_edt(~gt, return_indices=True)
    et = err.copy()
    bgm = ~gt
    et[bgm] = err[iy[bgm], ix[bgm]]
    ea = ndimage.correlate(et, _gauss_kernel(), mode="constant", cval=0.0)
    min_e = np.where(gt & (ea < err), ea, err)
    b = np.ones_like(err)
    b[bgm] = 2.0 - np.exp(np.log(0.5) / 5.0 * dist[bgm])
    ew = min_e * b
    tpw = gt.sum() - ew[gt].sum()
    fpw = ew[bgm].sum()
    recall = 1.0 - ew[gt].mean()
    precision = tpw / (EPS + tpw + fpw)
    return float((1 + beta2) * recall * precision / (EPS + recall + beta2 * precision))


def all_metrics(pred, gt) -> dict[str, float]:
    return {
        "s_alpha": s_measure(pred, gt),
        "e_phi": e_measure(pred, gt),
        "f_beta_w": weighted_f(pred, gt),
        "mae": mae(pred, gt),
    }


# --------------------------------------------------------------------------
# dataset evaluation


@dataclass
class EvalReport:
    per_sample: list[dict]
    aggregate: dict[str, float] | None
    config_hash: str
    scale: int | None
    errors: list[str] = field(default_factory=list)
    warning: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)

    def to_text(self) -> str:
        lines = [f"config_hash: {self.config_hash}", f"scale: {self.scale}", f"warning: {str(self.warning).lower()}"]
        if self.aggregate is not None:
            for k in METRIC_KEYS:
                lines.append(f"{k}: {self.aggregate[k]:.6f}")
        for e in self.errors:
            lines.append(f"error: {e}")
        lines.append("")
        lines.append("id\t" + "\t".join(METRIC_KEYS))
        for row in self.per_sample:
            lines.append(row["id"] + "\t" + "\t".join(f"{row[k]:.6f}" for k in METRIC_KEYS))
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        txt, js = out / "report.txt", out / "report.json"
        txt.write_text(self.to_text())
        js.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return txt, js


def aggregate_rows(rows: list[dict]) -> dict[str, float] | None:
    if not rows:
        return None
    return {k: float(np.mean([r[k] for r in rows])) for k in METRIC_KEYS}


def save_prediction(path, pred: np.ndarray) -> None:
    """Store a [0, 1] map as an 8-bit grayscale PNG."""
    data = np.round(np.clip(pred, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(data).save(path, format="PNG")


def load_prediction(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path).astype(np.float64)
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def _find_prediction(pred_dir: Path, sid: str) -> Path | None:
    for ext in (".png", ".npy"):
        p = pred_dir / f"{sid}{ext}"
        if p.exists():
            return p
    return None


def evaluate_dataset(pred_dir, corpus, scale: int | None = None, split: str = "test", out_dir=None) -> EvalReport:
    """Score every prediction ``<id>.png`` (or ``.npy``) against the corpus masks."""
    pred_dir = Path(pred_dir)
    ids = corpus.ids(split)
    rows, errors = [], []
    for sid in ids:
        p = _find_prediction(pred_dir, sid)
        if p is None:
            errors.append(f"missing prediction for {sid}")
            continue
        gt = corpus.sample(sid).mask
        pred = load_prediction(p)
        if pred.shape != gt.shape:
            errors.append(f"{sid}: prediction shape {pred.shape} != mask shape {gt.shape}")
            continue
        rows.append({"id": sid, **all_metrics(pred, gt)})
    if errors:
        log.warning("%d of %d predictions missing or invalid", len(errors), len(ids))
    cfg = {"split": split, "scale": scale, "corpus": corpus.manifest.get("corpus_seed"),
           "corpus_size": corpus.manifest.get("size"), "count": len(ids)}
    digest = hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]
    report = EvalReport(rows, aggregate_rows(rows), digest, scale, errors, warning=bool(errors))
    if out_dir is not None:
        report.write(out_dir)
    return report
