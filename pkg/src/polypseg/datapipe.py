"""Kvasir-SEG loading, mask binarization, box cropping, rotation/zoom augmentation and splits."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np
from PIL import Image
from scipy import ndimage

from polypseg.errors import DomainError, LoadError, ShapeError

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")
DEFAULT_MARGIN = 0.1
ROTATION_RANGE = (-30.0, 30.0)
ZOOM_RANGE = (0.8, 1.25)
AUGMENT_PROB = 0.5


@dataclass(frozen=True, eq=False)
class ImageSample:
    """An RGB image (3 x H x W, float32 in [0, 1]) and its binary mask (H x W, uint8)."""

    id: str
    image: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        image = np.asarray(self.image, dtype=np.float32)
        mask = np.asarray(self.mask)
        if image.ndim != 3 or image.shape[0] != 3:
            raise ShapeError(f"{self.id}: image must be 3 x H x W, got {image.shape}")
        if mask.shape != image.shape[1:]:
            raise ShapeError(f"{self.id}: mask {mask.shape} does not match image {image.shape[1:]}")
        if not np.isin(mask, (0, 1)).all():
            raise DomainError(f"{self.id}: mask is not binary")
        object.__setattr__(self, "image", image)
        object.__setattr__(self, "mask", mask.astype(np.uint8))

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


@dataclass(frozen=True)
class BBox:
    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self):
        if self.x0 < 0 or self.y0 < 0 or self.width < 1 or self.height < 1:
            raise DomainError(f"invalid box {self}")


@dataclass(frozen=True)
class Rotation:
    angle: float  # degrees, counter-clockwise


@dataclass(frozen=True)
class Zoom:
    factor: float  # > 1 magnifies around the image centre


AugmentOp = Union[Rotation, Zoom]


def binarize_mask(gray: np.ndarray, threshold: int = 127) -> np.ndarray:
    """1 where ``gray > threshold``, else 0."""
    if not 0 <= threshold <= 255:
        raise DomainError(f"threshold must lie in [0, 255], got {threshold}")
    return (np.asarray(gray) > threshold).astype(np.uint8)


def _index(directory: Path) -> dict[str, Path]:
    if not directory.is_dir():
        raise LoadError(f"missing directory {directory}")
    return {p.stem: p for p in sorted(directory.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def load_sample(image_path: Path, mask_path: Path, threshold: int = 127) -> ImageSample:
    with Image.open(image_path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    with Image.open(mask_path) as im:
        gray = np.asarray(im.convert("L"))
    if gray.shape != rgb.shape[:2]:
        raise LoadError(f"{image_path.name}: image {rgb.shape[:2]} and mask {gray.shape} differ in size")
    return ImageSample(image_path.stem, rgb.transpose(2, 0, 1), binarize_mask(gray, threshold))


def load_dataset(root: Union[str, Path], threshold: int = 127) -> list[ImageSample]:
    """Read ``root/images`` and ``root/masks`` pairs matched by filename stem, sorted by id."""
    root = Path(root)
    images = _index(root / "images")
    masks = _index(root / "masks")
    for stem, path in images.items():
        if stem not in masks:
            raise LoadError(f"image {path.name} has no matching mask in {root / 'masks'}")
    for stem, path in masks.items():
        if stem not in images:
            raise LoadError(f"mask {path.name} has no matching image in {root / 'images'}")
    return [load_sample(images[s], masks[s], threshold) for s in sorted(images)]


def save_dataset(samples: Iterable[ImageSample], root: Union[str, Path]) -> int:
    """Write samples as ``images/<id>.png`` and ``masks/<id>.png`` (masks as {0, 255})."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    n = 0
    for s in samples:
        rgb = np.clip(np.rint(s.image.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(rgb, "RGB").save(root / "images" / f"{s.id}.png")
        Image.fromarray(s.mask * np.uint8(255), "L").save(root / "masks" / f"{s.id}.png")
        n += 1
    return n


def mask_bbox(mask: np.ndarray, margin: float = DEFAULT_MARGIN) -> BBox:
    """Tight box around the foreground, grown by ``margin * max(w, h)`` per side and clipped."""
    if margin < 0:
        raise DomainError("margin must be >= 0")
    mask = np.asarray(mask)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise DomainError("no foreground")
    y0, y1 = int(rows[0]), int(rows[-1]) + 1
    x0, x1 = int(cols[0]), int(cols[-1]) + 1
    pad = math.ceil(margin * max(x1 - x0, y1 - y0))
    h, w = mask.shape
    x0, y0 = max(0, x0 - pad), max(0, y0 - pad)
    x1, y1 = min(w, x1 + pad), min(h, y1 + pad)
    return BBox(x0, y0, x1 - x0, y1 - y0)


def crop_to_bbox(sample: ImageSample, box: BBox) -> ImageSample:
    h, w = sample.shape
    if box.x0 + box.width > w or box.y0 + box.height > h:
        raise ShapeError(f"box {box} exceeds image bounds {w}x{h}")
    ys = slice(box.y0, box.y0 + box.height)
    xs = slice(box.x0, box.x0 + box.width)
    return ImageSample(f"{sample.id}.crop", sample.image[:, ys, xs].copy(), sample.mask[ys, xs].copy())


def _sample_grid(coords: np.ndarray, image: np.ndarray, mask: np.ndarray, mode: str):
    # snap near-integer coordinates so right-angle rotations and identities are exact
    snapped = np.rint(coords)
    coords = np.where(np.abs(coords - snapped) < 1e-9, snapped, coords)
    out_img = np.stack(
        [ndimage.map_coordinates(ch, coords, order=1, mode=mode, cval=0.0) for ch in image]
    ).astype(np.float32)
    out_mask = ndimage.map_coordinates(mask, coords, order=0, mode=mode, cval=0)
    return out_img, out_mask.astype(np.uint8)


def _affine_coords(h: int, w: int, angle: float, zoom: float) -> np.ndarray:
    """Source coordinates for each output pixel: rotate by ``angle`` and scale by ``zoom`` about the centre."""
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    theta = math.radians(angle)
    c, s = math.cos(theta), math.sin(theta)
    # inverse map; rows grow downward so counter-clockwise flips the sine sign
    src_x = (c * dx - s * dy) / zoom + cx
    src_y = (s * dx + c * dy) / zoom + cy
    return np.stack([src_y, src_x])


def augment(sample: ImageSample, op: AugmentOp) -> ImageSample:
    """Apply one geometric transform jointly: bilinear on the image, nearest on the mask.

    Output size is unchanged; regions mapped from outside the frame are zero.
    """
    if isinstance(op, Rotation):
        if not -180.0 <= op.angle <= 180.0:
            raise DomainError(f"rotation angle must lie in [-180, 180], got {op.angle}")
        angle, zoom = op.angle, 1.0
    elif isinstance(op, Zoom):
        if not 0.5 <= op.factor <= 2.0:
            raise DomainError(f"zoom factor must lie in [0.5, 2.0], got {op.factor}")
        angle, zoom = 0.0, op.factor
    else:
        raise DomainError(f"unknown augmentation {op!r}")
    h, w = sample.shape
    image, mask = _sample_grid(_affine_coords(h, w, angle, zoom), sample.image, sample.mask, "constant")
    return replace(sample, image=image, mask=mask)


def random_augment(sample: ImageSample, seed: int, ops: Sequence[str] = ("rotation", "zoom")) -> ImageSample:
    """Each listed op fires with probability 0.5, parameters drawn from the default ranges."""
    rng = random.Random(seed)
    out = sample
    for name in ops:
        op = draw_op(name, rng)
        if rng.random() < AUGMENT_PROB:
            out = augment(out, op)
    return out


def draw_op(name: str, rng: random.Random) -> AugmentOp:
    if name == "rotation":
        return Rotation(rng.uniform(*ROTATION_RANGE))
    if name == "zoom":
        return Zoom(rng.uniform(*ZOOM_RANGE))
    raise DomainError(f"unknown augmentation {name!r}")


def resize(sample: ImageSample, height: int, width: int) -> ImageSample:
    """Bilinear image / nearest mask resize with half-pixel centre alignment."""
    if height < 8 or width < 8:
        raise DomainError(f"target size must be at least 8x8, got {height}x{width}")
    h, w = sample.shape
    if (h, w) == (height, width):
        return sample
    yy = (np.arange(height) + 0.5) * (h / height) - 0.5
    xx = (np.arange(width) + 0.5) * (w / width) - 0.5
    coords = np.stack(np.meshgrid(yy, xx, indexing="ij"))
    image, mask = _sample_grid(coords, sample.image, sample.mask, "nearest")
    return replace(sample, image=image, mask=mask)


def split(samples: Sequence, train_fraction: float, seed: int) -> tuple[list, list]:
    """Seeded shuffle, then the first ``floor(n * train_fraction)`` go to train."""
    if not 0.0 < train_fraction < 1.0:
        raise DomainError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if not samples:
        raise DomainError("cannot split an empty sequence")
    order = list(range(len(samples)))
    random.Random(seed).shuffle(order)
    k = math.floor(len(samples) * train_fraction)
    return [samples[i] for i in order[:k]], [samples[i] for i in order[k:]]


def prepare(
    samples: Sequence[ImageSample],
    crop: bool = False,
    margin: float = DEFAULT_MARGIN,
    augment_ops: Sequence[str] = (),
    seed: int = 0,
) -> list[ImageSample]:
    """Originals, plus a box-cropped copy of each (``crop``) and one augmented copy per op.

    Samples with an empty mask get no cropped copy.
    """
    rng = random.Random(seed)
    out = list(samples)
    if crop:
        for s in samples:
            if s.mask.any():
                out.append(crop_to_bbox(s, mask_bbox(s.mask, margin)))
    base = list(out)
    for name in augment_ops:
        for s in base:
            op = draw_op(name, rng)
            out.append(replace(augment(s, op), id=f"{s.id}.{name}"))
    return out


def blob_samples(n: int, size: int = 64, seed: int = 0) -> list[ImageSample]:
    """Synthetic polyp-like samples: one or two random ellipses per mask, tinted in the image."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    out = []
    for i in range(n):
        mask = np.zeros((size, size), dtype=bool)
        for _ in range(int(rng.integers(1, 3))):
            cy, cx = rng.uniform(0.2 * size, 0.8 * size, 2)
            ry, rx = rng.uniform(0.08 * size, 0.22 * size, 2)
            t = rng.uniform(0, math.pi)
            dy, dx = yy - cy, xx - cx
            u = (dx * math.cos(t) + dy * math.sin(t)) / rx
            v = (-dx * math.sin(t) + dy * math.cos(t)) / ry
            mask |= u * u + v * v <= 1.0
        background = rng.uniform(0.3, 0.6, 3)[:, None, None]
        tint = rng.uniform(0.15, 0.3, 3)[:, None, None] * np.array([1.0, -0.5, -0.5])[:, None, None]
        noise = rng.normal(0.0, 0.05, (3, size, size))
        image = np.clip(background + tint * mask + noise, 0.0, 1.0)
        out.append(ImageSample(f"blob{i:03d}", image.astype(np.float32), mask.astype(np.uint8)))
    return out
