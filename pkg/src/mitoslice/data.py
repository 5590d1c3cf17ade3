"""Sample manifests, class balance and the synthetic desk-scale dataset."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .preprocess import resize

log = logging.getLogger(__name__)

MANIFEST_HEADER = ["sample_id", "image_path", "label", "domain", "case_id"]
LABEL_NAMES = {0: "NMF", 1: "AMF"}
_LABEL_TOKENS = {"nmf": 0, "amf": 1, "0": 0, "1": 1}

IMAGE_SIZE = 128
N_SYNTH_DOMAINS = 4
# Central 60% region of a 128 px crop: rows/cols 25..101 inclusive.
_CENTER_LO, _CENTER_HI = 25, 101


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    image_ref: str
    label: int
    domain_id: str
    case_id: str

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {self.label!r}")


@dataclass
class DatasetManifest:
    """Ordered sample catalog. Relative image refs resolve against ``root``."""

    records: list[SampleRecord]
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        if not self.records:
            raise DataError("empty manifest")
        seen = set()
        for rec in self.records:
            if rec.sample_id in seen:
                raise DataError(f"duplicate sample_id {rec.sample_id!r}")
            seen.add(rec.sample_id)

    @property
    def counts(self) -> tuple[int, int]:
        n_amf = sum(r.label for r in self.records)
        return len(self.records) - n_amf, n_amf

    def __len__(self):
        return len(self.records)

    def resolve(self, record: SampleRecord) -> Path:
        p = Path(record.image_ref)
        return p if p.is_absolute() else self.root / p

    def by_id(self) -> dict[str, SampleRecord]:
        return {r.sample_id: r for r in self.records}

    def subset(self, sample_ids) -> "DatasetManifest":
        wanted = set(sample_ids)
        return DatasetManifest([r for r in self.records if r.sample_id in wanted], self.root)


def parse_label(token: str) -> int:
    try:
        return _LABEL_TOKENS[token.strip().lower()]
    except KeyError:
        raise DataError(f"unknown label token {token!r}") from None


def read_image(path) -> np.ndarray:
    """Decode an image file to a uint8 H x W x 3 array."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc


def _check_image(path):
    img = read_image(path)
    if img.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
        raise DataError(f"{path}: expected {IMAGE_SIZE}x{IMAGE_SIZE}x3, got {img.shape}")


def load_manifest(path, validate_images: bool = False) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise DataError("empty manifest")
        missing = set(MANIFEST_HEADER) - set(reader.fieldnames)
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        records = [
            SampleRecord(
                sample_id=row["sample_id"],
                image_ref=row["image_path"],
                label=parse_label(row["label"]),
                domain_id=row["domain"],
                case_id=row["case_id"],
            )
            for row in reader
        ]
    manifest = DatasetManifest(records, root=path.parent)
    if validate_images:
        for rec in manifest.records:
            p = manifest.resolve(rec)
            if not p.is_file():
                raise DataError(f"missing image for {rec.sample_id}: {p}")
            _check_image(p)
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in manifest.records:
            writer.writerow([r.sample_id, r.image_ref, LABEL_NAMES[r.label], r.domain_id, r.case_id])
    return path


def class_balance(manifest: DatasetManifest) -> tuple[int, int, float]:
    n_nmf, n_amf = manifest.counts
    return n_nmf, n_amf, n_amf / (n_nmf + n_amf)


def load_images(manifest: DatasetManifest) -> dict[str, np.ndarray]:
    return {r.sample_id: read_image(manifest.resolve(r)) for r in manifest.records}


# --- synthetic data ---------------------------------------------------------

_DOMAIN_TINTS = np.array(
    [[0, 0, 0], [12, -8, -4], [-10, 6, 10], [6, 10, -12]], dtype=np.float64
)
_NUCLEUS_RGB = np.array([72, 38, 112], dtype=np.float64)


def _ellipse_mask(shape, cy, cx, ry, rx, theta):
    yy, xx = np.mgrid[: shape[0], : shape[1]].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(theta), np.sin(theta)
    u = (c * dx + s * dy) / rx
    v = (-s * dx + c * dy) / ry
    return u * u + v * v <= 1.0


def _figure_params(rng, cy, cx, radius):
    """Draw the geometry of one mitotic-figure-like blob."""
    ry = radius * rng.uniform(0.75, 1.0)
    rx = radius * rng.uniform(0.75, 1.0)
    theta = rng.uniform(0, np.pi)
    n_frag = int(rng.integers(4, 8))
    frag = [
        (rng.uniform(0.15, 0.7), rng.uniform(0, 2 * np.pi), rng.uniform(0.18, 0.3))
        for _ in range(n_frag)
    ]
    return (cy, cx, ry, rx, theta, frag)


def _figure_mask(shape, params, atypical):
    cy, cx, ry, rx, theta, frag = params
    if not atypical:
        # Compact, solid chromatin mass.
        return _ellipse_mask(shape, cy, cx, ry, rx, theta)
    # Scattered fragments over the same footprint.
    mask = np.zeros(shape, dtype=bool)
    for dist, ang, rel in frag:
        fy = cy + dist * ry * np.sin(ang)
        fx = cx + dist * rx * np.cos(ang)
        r = max(1.5, rel * max(rx, ry))
        mask |= _ellipse_mask(shape, fy, fx, r, r, 0.0)
    return mask


def _peripheral_center(rng, radius):
    lo, hi = _CENTER_LO, _CENTER_HI
    side = int(rng.integers(4))
    along = rng.uniform(radius, IMAGE_SIZE - 1 - radius)
    if side in (0, 2):
        across = rng.uniform(radius, lo - 1 - radius)
    else:
        across = rng.uniform(hi + 1 + radius, IMAGE_SIZE - 1 - radius)
    # sides 0/1: top/bottom band (across = row); 2/3: left/right band
    return (across, along) if side in (0, 1) else (along, across)


def render_sample(rng: np.random.Generator, label: int, domain: int = 0, draw_distractors: bool = True):
    """Render one synthetic 128x128 crop.

    The class signal lives in a single figure inside the central 60% region:
    solid for NMF, fragmented for AMF. One to four distractor figures of random
    style sit in the peripheral ring only. Returns ``(image, distractor_mask)``.
    """
    shape = (IMAGE_SIZE, IMAGE_SIZE)
    # Draw every random quantity up front so the rng stream does not depend on
    # draw_distractors.
    base = np.array([232.0, 196.0, 214.0]) + _DOMAIN_TINTS[domain % N_SYNTH_DOMAINS]
    coarse = rng.normal(0, 6, size=(8, 8, 3))
    fine = rng.normal(0, 5, size=(IMAGE_SIZE, IMAGE_SIZE, 3))
    cy, cx = 64 + rng.uniform(-6, 6, size=2)
    center = _figure_params(rng, cy, cx, rng.uniform(11, 16))
    center_shade = rng.uniform(-15, 15)
    n_distract = int(rng.integers(1, 5))
    distractors = []
    for _ in range(n_distract):
        r = rng.uniform(5, 9)
        dy, dx = _peripheral_center(rng, r)
        distractors.append((_figure_params(rng, dy, dx, r), bool(rng.integers(2)), rng.uniform(-15, 15)))

    img = base + resize(coarse, IMAGE_SIZE).astype(np.float64) + fine
    center_mask = _figure_mask(shape, center, atypical=bool(label))
    img[center_mask] = _NUCLEUS_RGB + center_shade + fine[center_mask]

    distractor_mask = np.zeros(shape, dtype=bool)
    for params, atypical, shade in distractors:
        m = _figure_mask(shape, params, atypical)
        distractor_mask |= m
        if draw_distractors:
            img[m] = _NUCLEUS_RGB + shade + fine[m]
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), distractor_mask


def generate_synthetic_dataset(n: int, amf_fraction: float, seed: int, out_dir) -> DatasetManifest:
    """Write ``n`` PNG crops plus ``manifest.csv`` under ``out_dir``.

    Output is byte-identical for identical ``(n, amf_fraction, seed)``.
    """
    if n <= 0:
        raise DataError(f"n must be positive, got {n}")
    if not 0 < amf_fraction < 1:
        raise DataError(f"amf_fraction must be in (0, 1), got {amf_fraction}")
    out_dir = Path(out_dir)
    try:
        (out_dir / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot write to {out_dir}: {exc}") from exc

    n_amf = int(np.floor(n * amf_fraction + 0.5))
    ss = np.random.SeedSequence(seed)
    label_ss, *sample_ss = ss.spawn(n + 1)
    labels = np.zeros(n, dtype=int)
    labels[np.random.default_rng(label_ss).permutation(n)[:n_amf]] = 1

    records = []
    for i in range(n):
        domain = i % N_SYNTH_DOMAINS
        img, _ = render_sample(np.random.default_rng(sample_ss[i]), int(labels[i]), domain)
        ref = f"images/syn_{i:05d}.png"
        try:
            Image.fromarray(img).save(out_dir / ref, format="PNG")
        except OSError as exc:
            raise DataError(f"cannot write to {out_dir}: {exc}") from exc
        records.append(
            SampleRecord(f"syn_{i:05d}", ref, int(labels[i]), str(domain), f"case_{i // 10:04d}")
        )
    manifest = DatasetManifest(records, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.csv")
    log.info("wrote %d synthetic samples (%d AMF) to %s", n, n_amf, out_dir)
    return manifest
