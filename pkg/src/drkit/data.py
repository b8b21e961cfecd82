"""Dataset manifests, the synthetic paired-eye benchmark, and batch iteration."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import augment as aug
from .errors import DataError
from .preprocess import NormStats, PreprocessOptions, chw_to_hwc_uint8, gaussian_blur, hwc_to_chw, preprocess_raw, zscore
from .rng import Rng

SPLITS = ("train", "validation", "test")
LATERALITIES = ("left", "right")
MANIFEST_FIELDS = ("image", "grade", "patient_id", "laterality", "split")
NUM_GRADES = 5

# Largest and smallest per-grade image counts of the EyePACS training set;
# middle grades interpolate geometrically between them.
EYEPACS_EXTREMES = (25810, 708)


def geometric_class_counts(hi=EYEPACS_EXTREMES[0], lo=EYEPACS_EXTREMES[1], n=NUM_GRADES):
    ratio = (lo / hi) ** (1.0 / (n - 1))
    return tuple(int(round(hi * ratio ** g)) for g in range(n))


DEFAULT_CLASS_COUNTS = geometric_class_counts()


@dataclass(frozen=True)
class Sample:
    image: str
    grade: int
    patient_id: str
    laterality: str
    split: str = "train"


@dataclass
class Manifest:
    samples: list[Sample]
    root: Path | None = None

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def split(self, name: str) -> "Manifest":
        return Manifest([s for s in self.samples if s.split == name], self.root)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.grade for s in self.samples], dtype=np.int64)

    def path_of(self, sample: Sample) -> Path:
        p = Path(sample.image)
        return p if p.is_absolute() or self.root is None else self.root / p

    def partners(self) -> np.ndarray:
        """Index of the other eye of each sample's patient within this manifest, or -1."""
        where = {}
        for i, s in enumerate(self.samples):
            if s.laterality in LATERALITIES:
                where[(s.split, s.patient_id, s.laterality)] = i
        out = np.full(len(self.samples), -1, dtype=np.int64)
        for i, s in enumerate(self.samples):
            if s.laterality in LATERALITIES:
                other = "right" if s.laterality == "left" else "left"
                out[i] = where.get((s.split, s.patient_id, other), -1)
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        for s in self.samples:
            h.update("|".join([s.image, str(s.grade), s.patient_id, s.laterality, s.split]).encode())
            h.update(b"\n")
        return h.hexdigest()


def load_manifest(path) -> Manifest:
    """Read a CSV manifest with header ``image,grade,patient_id,laterality[,split]``."""
    path = Path(path)
    samples = []
    seen = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"image", "grade", "patient_id", "laterality"} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: manifest header lacks {sorted(missing)}")
        for row in reader:
            line = reader.line_num
            try:
                grade = int(row["grade"])
            except (TypeError, ValueError):
                raise DataError(f"{path}:{line}: grade {row.get('grade')!r} is not an integer") from None
            if not 0 <= grade < NUM_GRADES:
                raise DataError(f"{path}:{line}: grade {grade} outside 0..{NUM_GRADES - 1}")
            image = (row.get("image") or "").strip()
            patient = (row.get("patient_id") or "").strip()
            if not image or not patient:
                raise DataError(f"{path}:{line}: empty image path or patient id")
            lat = (row.get("laterality") or "").strip().lower()
            split = (row.get("split") or "train").strip() or "train"
            if split not in SPLITS:
                raise DataError(f"{path}:{line}: unknown split {split!r}")
            if lat in LATERALITIES:
                key = (split, patient, lat)
                if key in seen:
                    raise DataError(
                        f"{path}:{line}: duplicate {lat} eye for patient {patient} in split {split} "
                        f"(first on line {seen[key]})"
                    )
                seen[key] = line
            samples.append(Sample(image, grade, patient, lat, split))
    return Manifest(samples, path.parent)


def write_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for s in manifest.samples:
            w.writerow([s.image, s.grade, s.patient_id, s.laterality, s.split])


def read_image(path) -> np.ndarray:
    """Load an 8-bit RGB image (PNG, PPM, ...) as ``[3, H, W]`` float64 in [0, 255]."""
    try:
        with Image.open(path) as im:
            return hwc_to_chw(np.asarray(im.convert("RGB")))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def write_image(path, img) -> None:
    Image.fromarray(chw_to_hwc_uint8(img)).save(path)


# --- synthetic paired-eye benchmark ----------------------------------------

# (dark lesion count range, bright lesion count range) per grade, inclusive.
LESION_COUNTS = (
    ((0, 0), (0, 0)),
    ((2, 3), (0, 0)),
    ((5, 7), (1, 2)),
    ((9, 12), (3, 4)),
    ((14, 18), (5, 7)),
)


@dataclass(frozen=True)
class SyntheticSpec:
    image_side: int = 64
    class_counts: tuple[int, ...] = DEFAULT_CLASS_COUNTS
    split_sizes: tuple[int, int, int] = (2000, 500, 500)  # images per train/validation/test
    pair_grade_jitter: float = 0.04
    lesion_radius: float = 1.3  # in pixels at side 64, scaled with image_side
    corrupt_fraction: float = 0.0  # fraction of images blurred (always one eye of a pair)
    corrupt_blur: float = 2.5  # blur sigma in pixels at side 64
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "class_counts", tuple(int(c) for c in self.class_counts))
        object.__setattr__(self, "split_sizes", tuple(int(c) for c in self.split_sizes))
        if len(self.class_counts) != NUM_GRADES or min(self.class_counts) < 0 or sum(self.class_counts) == 0:
            raise DataError("class_counts needs five non-negative entries, at least one positive")
        if not 0 <= self.pair_grade_jitter <= 0.05:
            raise DataError("pair_grade_jitter must lie in [0, 0.05]")
        if not 0 <= self.corrupt_fraction <= 0.5:
            raise DataError("corrupt_fraction must lie in [0, 0.5] (one eye per pair at most)")
        if self.image_side < 16:
            raise DataError("image_side must be >= 16")
        if any(n % 2 for n in self.split_sizes):
            raise DataError("split sizes must be even (two eyes per patient)")


def apportion(total: int, weights) -> list[int]:
    """Largest-remainder split of ``total`` by ``weights``; every positive weight gets at least 1."""
    w = np.asarray(weights, dtype=np.float64)
    positive = w > 0
    base = np.where(positive, 1, 0)
    rest = total - int(base.sum())
    if rest < 0:
        raise DataError(f"cannot place {total} items across {int(positive.sum())} non-empty classes")
    exact = rest * w / w.sum()
    counts = np.floor(exact).astype(int)
    order = np.argsort(-(exact - counts), kind="stable")
    for k in order[: rest - counts.sum()]:
        counts[k] += 1
    return (counts + base).tolist()


def _place_lesions(rng: Rng, n: int, cy, cx, radius_fov, blob_r, avoid, spacing: float = 3.0):
    pts = []
    limit = 0.86 * radius_fov
    min_gap = 2.0 * blob_r + spacing
    tries = 0
    while len(pts) < n:
        tries += 1
        if tries > 20000:
            raise DataError("could not place lesions; image too small for the lesion count")
        r = limit * math.sqrt(rng.random())
        t = 2 * math.pi * rng.random()
        y, x = cy + r * math.sin(t), cx + r * math.cos(t)
        if math.hypot(y - avoid[0], x - avoid[1]) < avoid[2] + min_gap:
            continue
        if all(math.hypot(y - py, x - px) >= min_gap for py, px in pts):
            pts.append((y, x))
    return pts


def render_fundus(grade: int, rng: Rng, side: int = 64, lesion_radius: float = 1.3, blur: float = 0.0):
    """One synthetic fundus image as ``[3, side, side]`` 8-bit-domain floats plus lesion counts."""
    s = side / 64.0
    yy, xx = np.meshgrid(np.arange(side, dtype=np.float64), np.arange(side, dtype=np.float64), indexing="ij")
    cy = (side - 1) / 2 + rng.uniform(-1.0, 1.0) * s
    cx = (side - 1) / 2 + rng.uniform(-1.0, 1.0) * s
    radius = side * rng.uniform(0.42, 0.47)
    dist = np.hypot(yy - cy, xx - cx)
    inside = np.clip(radius + 0.5 - dist, 0.0, 1.0)
    brightness = rng.uniform(0.75, 1.15)
    falloff = 1.0 - 0.35 * np.clip(dist / radius, 0, 1) ** 2
    base = np.array([180.0, 85.0, 40.0]) * brightness
    img = base[:, None, None] * falloff[None]
    # optic disc
    t = 2 * math.pi * rng.random()
    od = (cy + 0.45 * radius * math.sin(t), cx + 0.45 * radius * math.cos(t), 0.09 * side)
    od_w = np.exp(-((yy - od[0]) ** 2 + (xx - od[1]) ** 2) / (2 * (od[2] / 1.5) ** 2))
    img = img + np.array([60.0, 55.0, 30.0])[:, None, None] * od_w[None]

    (d_lo, d_hi), (b_lo, b_hi) = LESION_COUNTS[grade]
    n_dark = d_lo + int(rng.random() * (d_hi - d_lo + 1)) if d_hi else 0
    n_bright = b_lo + int(rng.random() * (b_hi - b_lo + 1)) if b_hi else 0
    blob_r = lesion_radius * s
    pts = _place_lesions(rng, n_dark + n_bright, cy, cx, radius, blob_r * 1.3, od, 3.0 * s)
    for k, (py, px) in enumerate(pts):
        r = blob_r * rng.uniform(0.85, 1.3)
        w = np.clip(r + 0.5 - np.hypot(yy - py, xx - px), 0.0, 1.0)[None]
        if k < n_dark:
            img = img * (1.0 - 0.6 * w)
        else:
            img = img + np.array([75.0, 80.0, 15.0])[:, None, None] * w
    noise = rng.normal_array(0.0, 2.0, 3 * side * side).reshape(3, side, side)
    img = img * inside[None] + noise * inside[None]
    if blur > 0:
        img = gaussian_blur(img, blur * s)
    img = np.clip(img, 0.0, 255.0) + rng.random_array(3 * side * side).reshape(3, side, side) * 3.0 * (1 - inside)
    return np.clip(img, 0.0, 255.0), {"dark": n_dark, "bright": n_bright}


def _pair_grades(rng: Rng, grade: int, jitter: float):
    if rng.random() >= jitter:
        return grade, grade
    options = [g for g in (grade - 1, grade + 1) if 0 <= g < NUM_GRADES]
    other = options[int(rng.random() * len(options))]
    return (grade, other) if rng.coin() else (other, grade)


def generate_synthetic(spec: SyntheticSpec, root) -> tuple[Manifest, list[dict]]:
    """Write PNG images under ``<root>/<split>/<patient>_<eye>.png`` plus ``manifest.csv``.

    Returns the manifest and per-image metadata (lesion counts, corruption).
    Corruption blurs exactly one eye of a ``2 * corrupt_fraction`` share of
    patients, so corrupted images always have a clean partner.
    """
    root = Path(root)
    rng = Rng(spec.seed)
    samples, meta = [], []
    pid = 0
    for split, n_images in zip(SPLITS, spec.split_sizes):
        (root / split).mkdir(parents=True, exist_ok=True)
        n_pairs = n_images // 2
        grades = np.repeat(np.arange(NUM_GRADES), apportion(n_pairs, spec.class_counts))
        order = np.argsort(rng.child("order", split).random_array(n_pairs), kind="stable")
        grades = grades[order]
        n_corrupt = int(round(2 * spec.corrupt_fraction * n_pairs))
        corrupt_rng = rng.child("corrupt", split)
        corrupt_pairs = set(np.argsort(corrupt_rng.random_array(n_pairs), kind="stable")[:n_corrupt].tolist())
        for k in range(n_pairs):
            patient = f"P{pid:06d}"
            pid += 1
            prng = rng.child("patient", patient)
            eye_grades = _pair_grades(prng, int(grades[k]), spec.pair_grade_jitter)
            bad_eye = int(prng.coin()) if k in corrupt_pairs else -1
            for e, lat in enumerate(LATERALITIES):
                blur = spec.corrupt_blur if e == bad_eye else 0.0
                img, counts = render_fundus(eye_grades[e], prng.child(lat), spec.image_side, spec.lesion_radius, blur)
                rel = f"{split}/{patient}_{lat}.png"
                write_image(root / rel, img)
                samples.append(Sample(rel, eye_grades[e], patient, lat, split))
                meta.append({"image": rel, **counts, "corrupted": e == bad_eye})
    manifest = Manifest(samples, root)
    write_manifest(manifest, root / "manifest.csv")
    with open(root / "synthetic.json", "w") as fh:
        json.dump({"spec": asdict(spec), "images": meta}, fh, indent=1)
    return manifest, meta


# --- in-memory datasets and batching -----------------------------------------

@dataclass
class ImageSet:
    """Preprocessed ``[0, 1]`` images of one split, with labels and eye pairing."""

    manifest: Manifest
    images: np.ndarray  # [N, 3, S, S]
    labels: np.ndarray
    partners: np.ndarray

    def __len__(self):
        return len(self.labels)


def load_split(manifest: Manifest, split: str, options: PreprocessOptions) -> ImageSet:
    part = manifest.split(split)
    if len(part) == 0:
        raise DataError(f"split {split!r} is empty")
    imgs = np.empty((len(part), 3, options.resolution, options.resolution))
    for i, s in enumerate(part):
        imgs[i] = preprocess_raw(read_image(part.path_of(s)), options)
    return ImageSet(part, imgs, part.labels, part.partners())


def iterate_batches(images, labels, plan, batch_size: int, augmentation: aug.AugmentationSpec,
                    rng: Rng, stats: NormStats, epoch: int = 0, basis=None):
    """Yield ``(batch, labels, indices)`` following ``plan`` in order.

    Each plan position ``k`` is augmented with the stream ``rng.child(epoch, k)``,
    so results do not depend on batch size or on how batches are consumed.
    The last batch may be short.
    """
    plan = np.asarray(plan, dtype=np.int64)
    mean = np.asarray(stats.mean)[:, None, None]
    std = np.asarray(stats.std)[:, None, None]
    for start in range(0, len(plan), batch_size):
        idx = plan[start:start + batch_size]
        if augmentation.is_identity:
            batch = images[idx]
        else:
            batch = np.stack([
                aug.apply(augmentation, images[i], rng.child(epoch, start + k), basis)
                for k, i in enumerate(idx)
            ])
        yield (batch - mean) / std, labels[idx], idx


def normalize(images, stats: NormStats) -> np.ndarray:
    return np.stack([zscore(im, stats) for im in images]) if len(images) else np.asarray(images)


__all__ = [
    "Sample", "Manifest", "load_manifest", "write_manifest", "SyntheticSpec", "generate_synthetic",
    "render_fundus", "ImageSet", "load_split", "iterate_batches", "read_image", "write_image",
]
