"""Dataset ingestion, patch extraction, subset plans, noise, augmentation.

On-disk layout: paired grayscale image and 16-bit integer label files
matched by filename stem under ``images/`` and ``masks/`` directories,
optionally nested in ``train/``, ``val/`` and ``test/`` split folders.
Cached noisy variants mirror the source layout under
``<root>/noise_n<std>/``.
"""

import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".tif", ".tiff")

MAX_LABEL_ID = 65535  # labels are stored as 16-bit unsigned integers

PATCH_SIZE_DEFAULT = 128

NORM_PERCENTILES = (1.0, 99.8)


@dataclass
class DatasetLayout:
    """Directory names that describe a dataset on disk."""

    train_dir: str = "train"
    val_dir: str = "val"
    test_dir: str = "test"
    images_dir: str = "images"
    masks_dir: str = "masks"


@dataclass
class DatasetSplit:
    """Image/label pairs partitioned into train, validation and test."""

    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)

    def counts(self):
        return len(self.train), len(self.val), len(self.test)


@dataclass
class SubsetPlan:
    """Nested index sets P_1 ⊂ ... ⊂ P_n into a training pool."""

    sizes: list
    seed: int
    indices: list

    def subset(self, i: int) -> list:
        """Indices of subset P_i (1-based)."""
        return self.indices[i - 1]


@dataclass
class NoiseSpec:
    """Additive pixel-wise Gaussian noise parameters."""

    std: float
    mean: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.std < 0:
            raise ValueError(f"noise std must be >= 0, got {self.std}")

    @property
    def label(self) -> str:
        return "clean" if self.std == 0 else f"n{self.std:g}"


def noise_spec_from_label(label: str, seed: int = 0) -> NoiseSpec:
    """Parse labels like 'n40' or 'clean' into a NoiseSpec."""
    if label in ("clean", "n0", ""):
        return NoiseSpec(std=0.0, seed=seed)
    if not label.startswith("n"):
        raise ValueError(f"unrecognized noise label {label!r}")
    return NoiseSpec(std=float(label[1:]), seed=seed)


def read_image(path) -> np.ndarray:
    arr = np.asarray(Image.open(path))
    if arr.ndim == 3:  # collapse RGB(A) to grayscale by averaging color channels
        arr = arr[..., :3].mean(axis=2)
    return arr.astype(np.float32)


def read_labels(path) -> np.ndarray:
    arr = np.asarray(Image.open(path))
    if arr.ndim != 2:
        raise ValueError(f"label map must be single-channel: {path}")
    if arr.min() < 0:
        raise ValueError(f"label map contains negative ids: {path}")
    if arr.max() > MAX_LABEL_ID:
        raise ValueError(
            f"label map {path} has ids above {MAX_LABEL_ID}; 16-bit storage required"
        )
    return arr.astype(np.int32)


def write_image(path, arr: np.ndarray):
    """Write a grayscale image; float arrays go to 32-bit TIFF, ints to PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if np.issubdtype(arr.dtype, np.floating):
        if path.suffix.lower() not in (".tif", ".tiff"):
            raise ValueError(f"float images must be saved as TIFF, got {path}")
        Image.fromarray(arr.astype(np.float32), mode="F").save(path)
    else:
        Image.fromarray(arr.astype(np.uint16)).save(path)


def write_labels(path, labels: np.ndarray):
    if labels.min() < 0 or labels.max() > MAX_LABEL_ID:
        raise ValueError("label ids must be within 0..65535 for 16-bit storage")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(labels.astype(np.uint16)).save(path)


def _load_pairs(split_dir: Path, layout: DatasetLayout) -> list:
    images_dir = split_dir / layout.images_dir
    masks_dir = split_dir / layout.masks_dir
    image_files = sorted(
        p for p in images_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    mask_files = {
        p.stem: p for p in masks_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    } if masks_dir.is_dir() else {}

    pairs = []
    seen = set()
    for img_path in image_files:
        if img_path.stem not in mask_files:
            raise FileNotFoundError(f"no label map paired with image {img_path}")
        seen.add(img_path.stem)
        image = read_image(img_path)
        labels = read_labels(mask_files[img_path.stem])
        if image.shape != labels.shape:
            raise ValueError(
                f"shape mismatch for {img_path.stem}: image {image.shape} "
                f"vs labels {labels.shape}"
            )
        pairs.append((image, labels))
    orphans = sorted(set(mask_files) - seen)
    if orphans:
        raise FileNotFoundError(
            f"no image paired with label map {masks_dir / orphans[0]}"
        )
    return pairs


def load_dataset(root, layout: DatasetLayout = DatasetLayout()) -> DatasetSplit:
    """Load a dataset from disk into a DatasetSplit.

    Each of the train/val/test folders named by `layout` is read when
    present; a root that directly contains images/ and masks/ is loaded
    entirely into the train set.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")

    split = DatasetSplit()
    found = False
    for name, attr in ((layout.train_dir, "train"), (layout.val_dir, "val"),
                       (layout.test_dir, "test")):
        sub = root / name
        if (sub / layout.images_dir).is_dir():
            getattr(split, attr).extend(_load_pairs(sub, layout))
            found = True
    if not found and (root / layout.images_dir).is_dir():
        split.train.extend(_load_pairs(root, layout))
        found = True
    if not found or sum(split.counts()) == 0:
        raise FileNotFoundError(f"no image/label pairs found under {root}")
    return split


def save_split(root, split: DatasetSplit, layout: DatasetLayout = DatasetLayout()):
    """Write a DatasetSplit to disk in the standard layout.

    Images go to 32-bit float TIFF (lossless for noisy data), labels to
    16-bit PNG.
    """
    root = Path(root)
    for name, pairs in ((layout.train_dir, split.train), (layout.val_dir, split.val),
                        (layout.test_dir, split.test)):
        for i, (image, labels) in enumerate(pairs):
            stem = f"{i:05d}"
            write_image(root / name / layout.images_dir / f"{stem}.tif",
                        image.astype(np.float32))
            write_labels(root / name / layout.masks_dir / f"{stem}.png", labels)


def extract_patches(pairs, size: int = PATCH_SIZE_DEFAULT) -> list:
    """Tile image/label pairs into non-overlapping size×size patches.

    Tiling starts at the top-left corner; residual borders narrower than
    `size` are discarded. Images smaller than `size` in either dimension
    are skipped with a warning. Label ids are preserved, so objects
    clipped at patch borders keep their id.
    """
    out = []
    for image, labels in pairs:
        h, w = image.shape
        if h < size or w < size:
            logger.warning("skipping %sx%s image smaller than patch size %s",
                           h, w, size)
            continue
        for y in range(0, h - size + 1, size):
            for x in range(0, w - size + 1, size):
                out.append((image[y:y + size, x:x + size].copy(),
                            labels[y:y + size, x:x + size].copy()))
    return out


def make_subsets(train_size: int, sizes, seed: int) -> SubsetPlan:
    """Draw nested training subsets of the given sizes.

    A single seeded permutation is drawn; subset i is its first sizes[i]
    elements, which guarantees P_i ⊂ P_{i+1}.
    """
    sizes = list(sizes)
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError(f"subset sizes must be strictly increasing, got {sizes}")
    if sizes and sizes[-1] > train_size:
        raise ValueError(
            f"largest subset ({sizes[-1]}) exceeds training pool size {train_size}"
        )
    perm = np.random.default_rng(seed).permutation(train_size)
    indices = [[int(i) for i in perm[:s]] for s in sizes]
    return SubsetPlan(sizes=sizes, seed=seed, indices=indices)


def add_gaussian_noise(image: np.ndarray, spec: NoiseSpec) -> np.ndarray:
    """Add i.i.d. Gaussian noise; float output, no clipping or rounding."""
    if spec.std == 0:
        return image.astype(np.float32, copy=True)
    rng = np.random.default_rng(spec.seed)
    noise = rng.normal(spec.mean, spec.std, size=image.shape)
    return (image.astype(np.float64) + noise).astype(np.float32)


def _file_seed(base_seed: int, tag: str) -> int:
    return (base_seed * 1000003 + zlib.crc32(tag.encode())) % (2 ** 31)


def corrupt_split(split: DatasetSplit, spec: NoiseSpec) -> DatasetSplit:
    """Apply one noise variant to all three splits, deterministically.

    Per-pair seeds derive from the spec seed and the pair's position so
    the variant is reproducible no matter which subset is read later.
    """
    def corrupt(pairs, name):
        return [
            (add_gaussian_noise(
                img, NoiseSpec(std=spec.std, mean=spec.mean,
                               seed=_file_seed(spec.seed, f"{name}/{i}"))),
             labels)
            for i, (img, labels) in enumerate(pairs)
        ]

    return DatasetSplit(
        train=corrupt(split.train, "train"),
        val=corrupt(split.val, "val"),
        test=corrupt(split.test, "test"),
    )


def normalize(image: np.ndarray, p_low: float = NORM_PERCENTILES[0],
              p_high: float = NORM_PERCENTILES[1]) -> np.ndarray:
    """Percentile-normalize an image; constant images map to all-zeros.

    Values outside the percentile window are kept (no clipping), so
    noise tails survive normalization.
    """
    if not 0 <= p_low < p_high <= 100:
        raise ValueError(f"bad percentile range ({p_low}, {p_high})")
    v_low, v_high = np.percentile(image, (p_low, p_high))
    if v_high == v_low:
        return np.zeros_like(image, dtype=np.float32)
    return ((image - v_low) / (v_high - v_low)).astype(np.float32)


def apply_dihedral(arr: np.ndarray, k: int) -> np.ndarray:
    """Apply element k (0..7) of the dihedral group D4 to a 2-D array.

    k % 4 selects the number of 90° rotations; k >= 4 adds a horizontal
    flip (applied before the rotation).
    """
    if arr.ndim != 2:
        raise ValueError("dihedral transforms expect 2-D arrays")
    if not 0 <= k < 8:
        raise ValueError(f"dihedral index must be in 0..7, got {k}")
    out = np.fliplr(arr) if k >= 4 else arr
    return np.ascontiguousarray(np.rot90(out, k % 4))


def augment8(image: np.ndarray, paired: np.ndarray) -> list:
    """Return the 8 dihedral-group variants of an image and a paired array.

    Both arrays receive the identical geometric transform. Per-pixel
    vector targets (e.g. star distances) are not valid inputs here: they
    additionally need their ray channels permuted, so targets should be
    recomputed from the augmented label map instead.
    """
    if image.shape != paired.shape:
        raise ValueError("image and paired array must share a shape")
    if image.shape[0] != image.shape[1]:
        raise ValueError(f"augment8 expects square inputs, got {image.shape}")
    return [(apply_dihedral(image, k), apply_dihedral(paired, k)) for k in range(8)]
