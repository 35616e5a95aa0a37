"""Image distortions for robustness evaluation.

All transforms take and return ``uint8`` arrays of shape ``(H, W, 3)`` and
are pure functions of ``(image, spec, seed, record_id)``.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image
from scipy import ndimage

from .datamodel import ImageRecord

KINDS = (
    "jpeg", "resize", "gaussian_noise", "flip_horizontal", "rotate",
    "sharpen", "contrast", "blur", "identity",
)

# ITU-R BT.601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114])


class PerturbationError(ValueError):
    pass


@dataclass(frozen=True)
class PerturbationSpec:
    tag: str
    kind: str
    parameter: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PerturbationError(f"unknown perturbation kind {self.kind!r}")

    @property
    def slug(self) -> str:
        return self.tag.lower().replace(" ", "_").replace(".", "p")


_SUITE = (
    PerturbationSpec("JPEG 70", "jpeg", 70),
    PerturbationSpec("JPEG 80", "jpeg", 80),
    PerturbationSpec("Resize 0.5", "resize", 0.5),
    PerturbationSpec("Resize 0.75", "resize", 0.75),
    PerturbationSpec("Gaussian 10", "gaussian_noise", 10),
    PerturbationSpec("Gaussian 5", "gaussian_noise", 5),
    PerturbationSpec("Flip horizontal", "flip_horizontal"),
    PerturbationSpec("Rotate 15", "rotate", 15),
    PerturbationSpec("Sharpen 1.5", "sharpen", 1.5),
    PerturbationSpec("Contrast 0.7", "contrast", 0.7),
    PerturbationSpec("Contrast 1.3", "contrast", 1.3),
    PerturbationSpec("Blur 3", "blur", 3),
    PerturbationSpec("Origin", "identity"),
)


def suite() -> list[PerturbationSpec]:
    """The robustness grid in reporting order, ending with the unmodified image."""
    return list(_SUITE)


def _norm_tag(tag: str) -> str:
    return "".join(tag.lower().split())


def get_spec(tag: str) -> PerturbationSpec:
    """Look up a suite entry by tag, ignoring case and whitespace ("Rotate15" works)."""
    key = _norm_tag(tag)
    for spec in _SUITE:
        if _norm_tag(spec.tag) == key or spec.slug == tag:
            return spec
    raise PerturbationError(f"no perturbation tagged {tag!r}")


def _check(spec: PerturbationSpec) -> None:
    p = spec.parameter
    bad = {
        "jpeg": not (1 <= p <= 100),
        "resize": not (0 < p <= 1),
        "gaussian_noise": p < 0,
        "rotate": not math.isfinite(p),
        "sharpen": p <= 0,
        "contrast": p <= 0,
        "blur": p < 0,
    }.get(spec.kind, False)
    if bad:
        raise PerturbationError(f"parameter {p} out of range for {spec.kind}")


def noise_generator(seed: int, record_id: str = "") -> np.random.Generator:
    """Counter-based generator keyed by (seed, record_id), independent of call order."""
    digest = hashlib.sha256(f"{seed}\x00{record_id}".encode()).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def _bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample ``img`` at float coordinates already clamped to the valid range."""
    h, w = img.shape[:2]
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[..., None]
    wx = (xs - x0)[..., None]
    f = img.astype(np.float64)
    top = f[y0, x0] * (1 - wx) + f[y0, x1] * wx
    bottom = f[y1, x0] * (1 - wx) + f[y1, x1] * wx
    return top * (1 - wy) + bottom * wy


def jpeg(image: np.ndarray, quality: int) -> np.ndarray:
    buf = io.BytesIO()
    Image.fromarray(image, "RGB").save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    with Image.open(buf) as im:
        return np.asarray(im.convert("RGB")).copy()


def resize(image: np.ndarray, factor: float) -> np.ndarray:
    h, w = image.shape[:2]
    oh = max(1, int(math.floor(factor * h + 0.5)))
    ow = max(1, int(math.floor(factor * w + 0.5)))
    if (oh, ow) == (h, w):
        return image.copy()
    # half-pixel centres
    ys = np.clip((np.arange(oh) + 0.5) * (h / oh) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(ow) + 0.5) * (w / ow) - 0.5, 0, w - 1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return _to_uint8(_bilinear(image, yy, xx))


def rotate(image: np.ndarray, degrees: float) -> np.ndarray:
    """Counterclockwise rotation about the centre; same canvas, black fill."""
    h, w = image.shape[:2]
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    dy, dx = yy - cy, xx - cx
    # inverse map; y axis points down, so a visual CCW turn uses these signs
    xs = cx + dx * c - dy * s
    ys = cy + dx * s + dy * c
    eps = 1e-9
    inside = (xs >= -eps) & (xs <= w - 1 + eps) & (ys >= -eps) & (ys <= h - 1 + eps)
    out = _bilinear(image, np.clip(ys, 0, h - 1), np.clip(xs, 0, w - 1))
    out[~inside] = 0.0
    return _to_uint8(out)


def add_gaussian_noise(image: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    noise = rng.standard_normal(image.shape) * sigma
    return _to_uint8(image.astype(np.float64) + noise)


def sharpen(image: np.ndarray, factor: float) -> np.ndarray:
    f = image.astype(np.float64)
    smooth = ndimage.uniform_filter(f, size=(3, 3, 1), mode="reflect")
    return _to_uint8(smooth + factor * (f - smooth))


def contrast(image: np.ndarray, factor: float) -> np.ndarray:
    f = image.astype(np.float64)
    mu = float((f @ _LUMA).mean())
    return _to_uint8(mu + factor * (f - mu))


def blur(image: np.ndarray, sigma: float) -> np.ndarray:
    if sigma == 0:
        return image.copy()
    f = image.astype(np.float64)
    return _to_uint8(ndimage.gaussian_filter(f, sigma=(sigma, sigma, 0), truncate=3.0, mode="reflect"))


def apply(image: np.ndarray, spec: PerturbationSpec, seed: int = 0, record_id: str = "") -> np.ndarray:
    """Apply one perturbation to an 8-bit RGB raster.

    Args:
        image: ``uint8`` array of shape ``(H, W, 3)``.
        spec: which distortion and its strength.
        seed: run seed; only the noise kind consumes randomness.
        record_id: mixed into the noise key so each record gets its own stream.

    Returns:
        A new ``uint8`` array. Only ``resize`` changes the dimensions.
    """
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.size == 0:
        raise PerturbationError(f"expected a non-empty (H, W, 3) image, got {image.shape}")
    if image.dtype != np.uint8:
        raise PerturbationError(f"expected uint8 pixels, got {image.dtype}")
    _check(spec)
    kind, p = spec.kind, spec.parameter
    if kind == "identity":
        return image.copy()
    if kind == "flip_horizontal":
        return image[:, ::-1].copy()
    if kind == "jpeg":
        return jpeg(image, int(p))
    if kind == "resize":
        return resize(image, p)
    if kind == "rotate":
        return image.copy() if p == 0 else rotate(image, p)
    if kind == "gaussian_noise":
        return add_gaussian_noise(image, p, noise_generator(seed, record_id))
    if kind == "sharpen":
        return sharpen(image, p)
    if kind == "contrast":
        return contrast(image, p)
    return blur(image, p)


# -- file level ---------------------------------------------------------------


def load_rgb(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB")).copy()
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot decode image {path}: {exc}") from exc


def save_rgb(image: np.ndarray, path: str | Path) -> None:
    Image.fromarray(image, "RGB").save(path, format="PNG")


def perturb_records(records: Iterable[ImageRecord], spec: PerturbationSpec, seed: int,
                    out_dir: str | Path) -> list[ImageRecord]:
    """Write perturbed copies of every record's image and return the derived records.

    Perturbed images are stored losslessly as PNG under ``out_dir/<slug>/``.
    Derived records keep their ids and carry ``perturbation`` and ``seed`` keys.
    """
    target = Path(out_dir) / spec.slug
    target.mkdir(parents=True, exist_ok=True)
    derived = []
    for rec in records:
        img = apply(load_rgb(rec.image_path), spec, seed, rec.id)
        safe = hashlib.sha1(rec.id.encode()).hexdigest()[:16]
        path = target / f"{safe}.png"
        save_rgb(img, path)
        extra = dict(rec.extra)
        extra.update(perturbation=spec.tag, seed=seed, original_image_path=rec.image_path)
        derived.append(ImageRecord(rec.id, str(path), rec.authenticity, rec.category,
                                   rec.source, rec.hard_sample, extra))
    return derived
