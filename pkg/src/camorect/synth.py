"""Procedural camouflage corpus.

Each sample is a value-noise background with one star-shaped object whose
texture copies the background's colour statistics and adds high-frequency
detail that bicubic downsampling removes. Images are stored on the 8-bit
grid so that PNG round-trips are exact.
"""
from __future__ import annotations

import hashlib
import json
import os
from functools import lru_cache
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

__all__ = [
    "SCALES",
    "CamoSample",
    "AugParams",
    "AugmentedPair",
    "CorruptCorpusError",
    "Corpus",
    "cubic_kernel",
    "resize_bicubic",
    "degrade",
    "upsample",
    "gen_sample",
    "sample_aug_params",
    "apply_aug",
    "augment_pair",
    "build_corpus",
    "load_corpus",
    "split_sizes",
    "sample_seed",
]

SCALES = (2, 4, 8)
CORPUS_SCHEMA = 1


class CorruptCorpusError(RuntimeError):
    pass


@dataclass
class CamoSample:
    image_hq: np.ndarray  # (3, H, W) float32 in [0, 1]
    image_lq: dict[int, np.ndarray]  # scale -> (3, H/n, W/n)
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    seed: int
    meta: dict = field(default_factory=dict)
    sample_id: str = ""

    @property
    def size(self) -> tuple[int, int]:
        return self.mask.shape


# --------------------------------------------------------------------------
# bicubic resampling


def cubic_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel (Catmull-Rom for a = -0.5)."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    out = np.zeros_like(x)
    m1 = x < 1
    m2 = (x >= 1) & (x < 2)
    out[m1] = ((a + 2) * x[m1] - (a + 3)) * x[m1] ** 2 + 1
    out[m2] = (((x[m2] - 5) * x[m2] + 8) * x[m2] - 4) * a
    return out


@lru_cache(maxsize=256)
def _resize_weights(n_in: int, n_out: int) -> np.ndarray:
    # pixel-centre alignment; kernel widened by the scale when shrinking;
    # taps outside the image are dropped and the rest renormalised
    scale = n_in / n_out
    fscale = max(scale, 1.0)
    support = 2.0 * fscale
    W = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        center = (i + 0.5) * scale
        lo = max(int(center - support + 0.5), 0)
        hi = min(int(center + support + 0.5), n_in)
        j = np.arange(lo, hi)
        w = cubic_kernel((j + 0.5 - center) / fscale)
        W[i, lo:hi] = w / w.sum()
    W.setflags(write=False)
    return W


def resize_bicubic(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bicubic resize of a (C, H, W) or (H, W) array."""
    squeeze = img.ndim == 2
    x = img[None] if squeeze else img
    wy = _resize_weights(x.shape[1], out_h)
    wx = _resize_weights(x.shape[2], out_w)
    out = (wy @ x.astype(np.float64)) @ wx.T
    return out[0] if squeeze else out


def degrade(image_hq: np.ndarray, n: int) -> np.ndarray:
    """Bicubic downsampling by an integer factor, clipped to [0, 1]."""
    if n not in SCALES:
        raise ValueError(f"scale must be one of {SCALES}, got {n}")
    h, w = image_hq.shape[-2:]
    if h % n or w % n:
        raise ValueError(f"image size {h}x{w} not divisible by {n}")
    out = resize_bicubic(image_hq, h // n, w // n)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def upsample(image_lq: np.ndarray, h: int, w: int) -> np.ndarray:
    return np.clip(resize_bicubic(image_lq, h, w), 0.0, 1.0).astype(np.float32)


def _quantize(x: np.ndarray) -> np.ndarray:
    # same arithmetic as decoding an 8-bit PNG
    return np.round(np.clip(x, 0, 1) * 255).astype(np.uint8).astype(np.float32) / np.float32(255)


# --------------------------------------------------------------------------
# generation


def _value_noise(rng: np.random.Generator, h: int, w: int, cells: int, octaves: int) -> np.ndarray:
    total = np.zeros((h, w))
    amp, norm = 1.0, 0.0
    for o in range(octaves):
        c = cells * 2**o
        grid = rng.random((c + 1, c + 1))
        total += amp * resize_bicubic(grid, h, w)
        norm += amp
        amp *= 0.5
    total /= norm
    return (total - total.mean()) / (total.std() + 1e-8)


def _blob_mask(rng: np.random.Generator, h: int, w: int) -> tuple[np.ndarray, dict]:
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    for _ in range(100):
        cy = rng.uniform(0.35, 0.65) * h
        cx = rng.uniform(0.35, 0.65) * w
        r0 = rng.uniform(0.14, 0.3) * min(h, w)
        ks = np.arange(2, 6)
        amps = rng.uniform(0, 0.3, size=ks.size) / np.sqrt(ks)
        phases = rng.uniform(0, 2 * np.pi, size=ks.size)
        theta = np.arctan2(yy - cy, xx - cx)
        r = r0 * (1 + (amps[:, None, None] * np.cos(ks[:, None, None] * theta + phases[:, None, None])).sum(0))
        r = np.maximum(r, 0.3 * r0)
        mask = np.hypot(yy - cy, xx - cx) < r
        lab, n = ndimage.label(mask, structure=np.ones((3, 3)))
        if n > 1:
            sizes = ndimage.sum(mask, lab, range(1, n + 1))
            mask = lab == (1 + int(np.argmax(sizes)))
        frac = mask.mean()
        if 0.01 <= frac <= 0.6:
            meta = {"shape": "blob", "center": [float(cy), float(cx)], "radius": float(r0),
                    "harmonic_amps": [float(a) for a in amps]}
            return mask.astype(np.uint8), meta
    raise RuntimeError("could not draw a blob within the area bounds")


def _grating(rng: np.random.Generator, h: int, w: int, period: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    phi = rng.uniform(0, np.pi)
    ph = rng.uniform(0, 2 * np.pi)
    g1 = np.sin(2 * np.pi * (xx * np.cos(phi) + yy * np.sin(phi)) / period + ph)
    g2 = np.sin(2 * np.pi * (xx * np.cos(phi + np.pi / 2) + yy * np.sin(phi + np.pi / 2)) / period + ph)
    return 0.5 * (g1 + g2)


def sample_seed(base_seed: int, index: int) -> int:
    """Per-sample seed derived from a corpus seed."""
    return int(np.random.SeedSequence([int(base_seed), int(index)]).generate_state(1)[0])


def gen_sample(seed: int, size: tuple[int, int] = (128, 128)) -> CamoSample:
    """Deterministically generate one camouflaged sample from ``seed``."""
    h, w = (int(size[0]), int(size[1]))
    if h % 8 or w % 8 or h < 64 or w < 64:
        raise ValueError(f"size must be >= 64 and divisible by 8, got {h}x{w}")
    rng = np.random.default_rng(seed)

    base = rng.uniform(0.3, 0.7, size=3)
    tint = rng.uniform(0.6, 1.0, size=3)
    tex_amp = rng.uniform(0.08, 0.14)

    def texture():
        lum = _value_noise(rng, h, w, cells=4, octaves=3)
        chroma = np.stack([_value_noise(rng, h, w, cells=3, octaves=2) for _ in range(3)])
        return tex_amp * (tint[:, None, None] * lum[None] + 0.3 * chroma)

    bg = base[:, None, None] + texture()
    fg_tex = texture()
    mask, meta = _blob_mask(rng, h, w)
    m = mask.astype(bool)

    # object texture shares the background's per-channel mean and spread
    fg = np.empty_like(bg)
    for ch in range(3):
        t = fg_tex[ch]
        fg[ch] = (t - t[m].mean()) / (t[m].std() + 1e-8) * bg[ch][~m].std() + bg[ch][~m].mean()

    p_fine = rng.uniform(4.5, 6.0)
    p_mid = rng.uniform(9.0, 12.0)
    a_fine = rng.uniform(0.06, 0.09)
    a_mid = rng.uniform(0.04, 0.06)
    detail = a_fine * _grating(rng, h, w, p_fine) + a_mid * _grating(rng, h, w, p_mid)
    offset = rng.uniform(0.015, 0.03) * rng.choice([-1.0, 1.0], size=3)
    fg = fg + detail[None] + offset[:, None, None]

    hq = _quantize(np.where(m[None], fg, bg))
    lq = {n: _quantize(degrade(hq, n)) for n in SCALES}
    meta.update({"base_color": [float(v) for v in base], "fine_period": float(p_fine), "mid_period": float(p_mid),
                 "fine_amp": float(a_fine), "mid_amp": float(a_mid), "color_offset": [float(v) for v in offset]})
    return CamoSample(image_hq=hq, image_lq=lq, mask=mask, seed=int(seed), meta=meta)


def camouflage_stats(sample: CamoSample) -> dict:
    """Foreground/background mean-colour distance and mean gradient magnitudes."""
    m = sample.mask.astype(bool)
    img = sample.image_hq.astype(np.float64)
    dist = float(np.linalg.norm(img[:, m].mean(1) - img[:, ~m].mean(1)))
    gy, gx = np.gradient(img, axis=(1, 2))
    g = np.sqrt(gx**2 + gy**2).mean(0)
    inner = ndimage.binary_erosion(m, iterations=2)
    outer = ndimage.binary_erosion(~m, iterations=2)
    return {"color_distance": dist, "grad_fg": float(g[inner].mean()), "grad_bg": float(g[outer].mean())}


# --------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugParams:
    flip: bool = False
    crop: tuple[float, float, float] = (1.0, 0.0, 0.0)  # fraction, y offset, x offset (relative)
    brightness: float = 0.0
    contrast: float = 1.0

    @property
    def is_identity(self) -> bool:
        return not self.flip and self.crop[0] == 1.0 and self.brightness == 0.0 and self.contrast == 1.0

    def to_dict(self) -> dict:
        return {"flip": self.flip, "crop": list(self.crop), "brightness": self.brightness, "contrast": self.contrast}


@dataclass
class AugmentedPair:
    view_a: tuple[np.ndarray, np.ndarray]
    view_A: tuple[np.ndarray, np.ndarray]
    aug_params_a: AugParams
    aug_params_A: AugParams


def sample_aug_params(rng: np.random.Generator) -> AugParams:
    frac = float(rng.uniform(0.9, 1.0))
    return AugParams(
        flip=bool(rng.random() < 0.5),
        crop=(frac, float(rng.random()), float(rng.random())),
        brightness=float(rng.uniform(-0.1, 0.1)),
        contrast=float(rng.uniform(0.9, 1.1)),
    )


def _crop_resize(x: np.ndarray, crop, order: int) -> np.ndarray:
    frac, oy, ox = crop
    if frac == 1.0:
        return x
    h, w = x.shape[-2:]
    ch, cw = max(1, int(round(h * frac))), max(1, int(round(w * frac)))
    y0 = int(round(oy * (h - ch)))
    x0 = int(round(ox * (w - cw)))
    patch = x[..., y0:y0 + ch, x0:x0 + cw]
    if order == 0:
        iy = np.minimum(((np.arange(h) + 0.5) * ch / h).astype(int), ch - 1)
        ix = np.minimum(((np.arange(w) + 0.5) * cw / w).astype(int), cw - 1)
        return patch[..., iy[:, None], ix[None, :]]
    return np.clip(resize_bicubic(patch, h, w), 0, 1).astype(x.dtype)


def apply_aug(image: np.ndarray, mask: np.ndarray, params: AugParams) -> tuple[np.ndarray, np.ndarray]:
    """Apply one descriptor to an image (C, H, W) and its mask (H, W)."""
    img, m = image, mask
    if params.flip:
        img, m = img[..., ::-1], m[..., ::-1]
    img = _crop_resize(img, params.crop, order=3)
    m = _crop_resize(m, params.crop, order=0)
    if params.brightness != 0.0 or params.contrast != 1.0:
        img = np.clip((img - 0.5) * params.contrast + 0.5 + params.brightness, 0, 1)
    return np.ascontiguousarray(img, dtype=np.float32), np.ascontiguousarray(m)


def augment_pair(
    sample: CamoSample,
    scale: int,
    rng_seed: int,
    params: tuple[AugParams, AugParams] | None = None,
) -> tuple[AugmentedPair, AugmentedPair]:
    """Two augmented views of a sample, applied identically to HQ, LQ and mask.

    The LQ image is bicubic-upsampled to the HQ size first. Returns the HQ
    pair and the LQ pair, which share descriptors.
    """
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {SCALES}, got {scale}")
    if params is None:
        rng = np.random.default_rng(rng_seed)
        params = (sample_aug_params(rng), sample_aug_params(rng))
    h, w = sample.size
    lq_up = upsample(sample.image_lq[scale], h, w)
    views_hq, views_lq = [], []
    for p in params:
        views_hq.append(apply_aug(sample.image_hq, sample.mask, p))
        views_lq.append(apply_aug(lq_up, sample.mask, p))
    pa, pA = params
    return (AugmentedPair(views_hq[0], views_hq[1], pa, pA), AugmentedPair(views_lq[0], views_lq[1], pa, pA))


# --------------------------------------------------------------------------
# corpus on disk


def split_sizes(count: int, ratios=(0.7, 0.1, 0.2)) -> tuple[int, int, int]:
    n_train = int(round(count * ratios[0]))
    n_val = int(round(count * ratios[1]))
    n_train = min(n_train, count)
    n_val = min(n_val, count - n_train)
    return n_train, n_val, count - n_train - n_val


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_png(path: Path, arr: np.ndarray) -> None:
    if arr.ndim == 3:
        data = np.round(arr.transpose(1, 2, 0) * 255).astype(np.uint8)
    else:
        data = arr.astype(np.uint8) * np.uint8(255)
    Image.fromarray(data).save(path, format="PNG")


def _read_png(path: Path, rgb: bool) -> np.ndarray:
    with Image.open(path) as im:
        data = np.asarray(im)
    if rgb:
        return (data.astype(np.float32) / np.float32(255)).transpose(2, 0, 1).copy()
    return (data > 127).astype(np.uint8)


def default_cache_dir() -> Path:
    return Path(os.environ.get("CAMORECT_CACHE", Path.home() / ".cache" / "camorect"))


def build_corpus(count: int, size=(128, 128), out_dir=None, seed: int = 0, ratios=(0.7, 0.1, 0.2),
                 force: bool = False) -> "Corpus":
    """Generate ``count`` samples into ``out_dir`` and write the manifest last."""
    if count < 1:
        raise ValueError("count must be >= 1")
    h, w = int(size[0]), int(size[1])
    if h % 8 or w % 8 or h < 64 or w < 64:
        raise ValueError(f"size must be >= 64 and divisible by 8, got {h}x{w}")
    if out_dir is None:
        out_dir = default_cache_dir() / f"corpus-n{count}-{h}x{w}-s{seed}"
    root = Path(out_dir)
    if (root / "manifest.json").exists() and not force:
        raise FileExistsError(f"corpus already exists at {root} (use force to overwrite)")
    n_train, n_val, n_test = split_sizes(count, ratios)
    entries = []
    for i in range(count):
        sid = f"s{i:05d}"
        s = gen_sample(sample_seed(seed, i), (h, w))
        d = root / "samples" / sid
        d.mkdir(parents=True, exist_ok=True)
        files = {"hq": d / "hq.png", "mask": d / "mask.png"}
        _write_png(files["hq"], s.image_hq)
        _write_png(files["mask"], s.mask)
        for n in SCALES:
            files[f"lq_x{n}"] = d / f"lq_x{n}.png"
            _write_png(files[f"lq_x{n}"], s.image_lq[n])
        split = "train" if i < n_train else "val" if i < n_train + n_val else "test"
        entries.append({
            "id": sid,
            "seed": s.seed,
            "split": split,
            "files": {k: {"path": str(p.relative_to(root)), "sha256": _sha256(p)} for k, p in files.items()},
            "meta": s.meta,
        })
    manifest = {
        "schema_version": CORPUS_SCHEMA,
        "corpus_seed": int(seed),
        "count": count,
        "size": [h, w],
        "scales": list(SCALES),
        "split_ratios": list(ratios),
        "split_sizes": {"train": n_train, "val": n_val, "test": n_test},
        "samples": entries,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return Corpus(root, manifest)


class Corpus:
    """Handle on a corpus directory."""

    def __init__(self, root, manifest: dict):
        self.root = Path(root)
        self.manifest = manifest
        self._by_id = {e["id"]: e for e in manifest["samples"]}
        self._cache: dict[str, CamoSample] = {}

    @property
    def size(self) -> tuple[int, int]:
        return tuple(self.manifest["size"])

    @property
    def scales(self) -> tuple[int, ...]:
        return tuple(self.manifest["scales"])

    def ids(self, split: str | None = None) -> list[str]:
        return [e["id"] for e in self.manifest["samples"] if split is None or e["split"] == split]

    def __len__(self) -> int:
        return len(self._by_id)

    def verify(self) -> None:
        for e in self.manifest["samples"]:
            for f in e["files"].values():
                p = self.root / f["path"]
                if not p.exists():
                    raise CorruptCorpusError(f"missing file {p}")
                if _sha256(p) != f["sha256"]:
                    raise CorruptCorpusError(f"checksum mismatch for {p}")

    def sample(self, sid: str) -> CamoSample:
        if sid in self._cache:
            return self._cache[sid]
        e = self._by_id[sid]
        f = e["files"]
        try:
            hq = _read_png(self.root / f["hq"]["path"], rgb=True)
            mask = _read_png(self.root / f["mask"]["path"], rgb=False)
            lq = {n: _read_png(self.root / f[f"lq_x{n}"]["path"], rgb=True) for n in self.scales}
        except OSError as exc:
            raise OSError(f"failed reading sample {sid} under {self.root}: {exc}") from exc
        s = CamoSample(hq, lq, mask, e["seed"], e.get("meta", {}), sid)
        self._cache[sid] = s
        return s

    def arrays(self, split: str, scale: int | None = None):
        """Stacked (hq, lq_upsampled, mask) arrays for a split."""
        ids = self.ids(split)
        hq, lq, masks = [], [], []
        for sid in ids:
            s = self.sample(sid)
            hq.append(s.image_hq)
            masks.append(s.mask)
            if scale is not None:
                lq.append(upsample(s.image_lq[scale], *s.size))
        return ids, np.stack(hq), (np.stack(lq) if lq else None), np.stack(masks)


def load_corpus(path, verify: bool = True) -> Corpus:
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.exists():
        alt = default_cache_dir() / str(path)
        if (alt / "manifest.json").exists():
            root, mpath = alt, alt / "manifest.json"
        else:
            raise FileNotFoundError(f"no corpus manifest at {mpath}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptCorpusError(f"unreadable manifest {mpath}: {exc}") from exc
    if manifest.get("schema_version") != CORPUS_SCHEMA:
        raise CorruptCorpusError(f"{mpath}: unsupported schema {manifest.get('schema_version')}")
    corpus = Corpus(root, manifest)
    if verify:
        corpus.verify()
    return corpus
