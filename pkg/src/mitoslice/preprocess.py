"""Center crop, resize, normalization and the training augmentation policy.

Images are H x W x 3 numpy arrays. Model inputs are float32 3 x S x S arrays.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class CropSpec:
    ratio: float = 0.6
    output_size: int = 128

    def __post_init__(self):
        if not 0 < self.ratio <= 1:
            raise ValueError(f"crop ratio must be in (0, 1], got {self.ratio}")
        if self.output_size <= 0:
            raise ValueError(f"output_size must be positive, got {self.output_size}")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class AugmentPolicy:
    p_transpose: float = 0.5
    p_hflip: float = 0.5
    p_vflip: float = 0.5
    p_ssr: float = 0.5
    # (shift fraction of side, scale fraction, rotation degrees)
    ssr_limits: tuple[float, float, float] = (0.0625, 0.1, 45.0)

    def __post_init__(self):
        for name in ("p_transpose", "p_hflip", "p_vflip", "p_ssr"):
            p = getattr(self, name)
            if not 0 <= p <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        object.__setattr__(self, "ssr_limits", tuple(float(v) for v in self.ssr_limits))

    @classmethod
    def disabled(cls):
        return cls(0.0, 0.0, 0.0, 0.0)

    def to_dict(self):
        d = asdict(self)
        d["ssr_limits"] = list(self.ssr_limits)
        return d


@dataclass(frozen=True)
class NormalizationStats:
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD

    def __post_init__(self):
        if len(self.mean) != 3 or len(self.std) != 3:
            raise ValueError("mean and std need exactly 3 channels")
        if any(s <= 0 for s in self.std):
            raise ValueError(f"std components must be positive, got {self.std}")
        object.__setattr__(self, "mean", tuple(float(v) for v in self.mean))
        object.__setattr__(self, "std", tuple(float(v) for v in self.std))

    def to_dict(self):
        return {"mean": list(self.mean), "std": list(self.std)}


def crop_box(side: int, ratio: float) -> tuple[int, int]:
    """Return ``(offset, crop_side)`` for a centered square crop."""
    c = int(np.floor(ratio * side + 0.5))
    return (side - c) // 2, c


def center_crop(image: np.ndarray, spec: CropSpec) -> np.ndarray:
    h, w = image.shape[:2]
    if h != w:
        raise ValueError(f"center_crop needs a square image, got {h}x{w}")
    off, c = crop_box(h, spec.ratio)
    if c < 1:
        raise ValueError(f"crop ratio {spec.ratio} leaves no pixels of a {h}px image")
    return image[off : off + c, off : off + c]


def _linear_weights(n_in: int, n_out: int):
    # Half-pixel centers, edge clamped (matches align_corners=False).
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def resize(image: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of a square (or rectangular) H x W x C image to size x size."""
    if size <= 0:
        raise ValueError(f"size must be positive, got {size}")
    img = np.asarray(image, dtype=np.float32)
    h, w = img.shape[:2]
    if (h, w) == (size, size):
        return img.copy()
    r0, r1, fr = _linear_weights(h, size)
    c0, c1, fc = _linear_weights(w, size)
    fr = fr.astype(np.float32)[:, None, None]
    fc = fc.astype(np.float32)[None, :, None]
    rows = img[r0] * (1 - fr) + img[r1] * fr
    return rows[:, c0] * (1 - fc) + rows[:, c1] * fc


def normalize(image: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    mean = np.asarray(stats.mean, dtype=np.float32)
    std = np.asarray(stats.std, dtype=np.float32)
    return (np.asarray(image, dtype=np.float32) - mean) / std


def denormalize(image: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    mean = np.asarray(stats.mean, dtype=np.float32)
    std = np.asarray(stats.std, dtype=np.float32)
    return np.asarray(image, dtype=np.float32) * std + mean


def hflip(image):
    return image[:, ::-1]


def vflip(image):
    return image[::-1]


def transpose(image):
    return image.transpose(1, 0, 2)


def shift_scale_rotate(image: np.ndarray, shift, scale: float, angle_deg: float) -> np.ndarray:
    """Affine warp about the image center with mirrored borders, bilinear sampling.

    ``shift`` is (dy, dx) as a fraction of the side.
    """
    h, w = image.shape[:2]
    theta = np.deg2rad(angle_deg)
    c, s = np.cos(theta), np.sin(theta)
    # Forward map: out = scale * R @ (in - center) + center + t; invert for sampling.
    fwd = scale * np.array([[c, -s], [s, c]])
    inv = np.linalg.inv(fwd)
    center = np.array([(h - 1) / 2, (w - 1) / 2])
    t = np.array([shift[0] * h, shift[1] * w])
    offset = center - inv @ (center + t)
    img = np.asarray(image, dtype=np.float32)
    out = np.empty_like(img)
    for ch in range(img.shape[2]):
        out[..., ch] = ndimage.affine_transform(img[..., ch], inv, offset=offset, order=1, mode="mirror")
    return out


def augment(image: np.ndarray, policy: AugmentPolicy, rng):
    """Apply transpose, hflip, vflip, shift-scale-rotate in that order.

    Each gate consumes one ``rng.random()`` draw whether or not it fires, so the
    stream position is independent of which transforms were applied.
    """
    if rng.random() < policy.p_transpose:
        image = transpose(image)
    if rng.random() < policy.p_hflip:
        image = hflip(image)
    if rng.random() < policy.p_vflip:
        image = vflip(image)
    if rng.random() < policy.p_ssr:
        shift_lim, scale_lim, rot_lim = policy.ssr_limits
        dy, dx = rng.uniform(-shift_lim, shift_lim, size=2)
        scale = 1.0 + rng.uniform(-scale_lim, scale_lim)
        angle = rng.uniform(-rot_lim, rot_lim)
        image = shift_scale_rotate(image, (dy, dx), scale, angle)
    return np.ascontiguousarray(image), rng


def _to_unit_float(image: np.ndarray) -> np.ndarray:
    if image.dtype == np.uint8:
        return image.astype(np.float32) / 255.0
    return np.asarray(image, dtype=np.float32)


def _to_chw(image):
    return np.ascontiguousarray(image.transpose(2, 0, 1), dtype=np.float32)


def preprocess_eval(image: np.ndarray, crop: CropSpec, stats: NormalizationStats) -> np.ndarray:
    x = resize(_to_unit_float(center_crop(image, crop)), crop.output_size)
    return _to_chw(normalize(x, stats))


def preprocess_train(image, crop: CropSpec, policy: AugmentPolicy, stats: NormalizationStats, rng) -> np.ndarray:
    x = resize(_to_unit_float(center_crop(image, crop)), crop.output_size)
    x, _ = augment(x, policy, rng)
    return _to_chw(normalize(x, stats))


@dataclass(frozen=True)
class PreprocessConfig:
    crop: CropSpec = field(default_factory=CropSpec)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    normalization: NormalizationStats = field(default_factory=NormalizationStats)

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessConfig":
        aug = dict(d.get("augment", {}))
        if "ssr_limits" in aug:
            aug["ssr_limits"] = tuple(aug["ssr_limits"])
        norm = d.get("normalization", {})
        return cls(
            crop=CropSpec(**d.get("crop", {})),
            augment=AugmentPolicy(**aug),
            normalization=NormalizationStats(
                **{k: tuple(v) for k, v in norm.items()}
            ),
        )

    def to_dict(self):
        return {
            "crop": self.crop.to_dict(),
            "augment": self.augment.to_dict(),
            "normalization": self.normalization.to_dict(),
        }
