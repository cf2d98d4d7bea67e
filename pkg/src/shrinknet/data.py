"""Datasets: synthetic generators, IDX image files, label corruption, batching.

The IDX reader/writer follows the classic big-endian layout:

    images  int32 magic 0x00000803, int32 count, int32 rows, int32 cols,
            then count*rows*cols unsigned bytes
    labels  int32 magic 0x00000801, int32 count, then count unsigned bytes

Pixel bytes are scaled to [0, 1] on load.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ConfigError, FormatError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Inputs plus aligned labels.

    ``task`` is "classification" (integer labels in [0, num_classes)) or
    "regression" (float targets).  ``clean_labels`` keeps the pre-corruption
    labels when :func:`corrupt_labels` produced this dataset.
    """

    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"
    task: str = "classification"
    num_classes: int | None = None
    provenance: dict = field(default_factory=dict)
    clean_labels: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if len(self.inputs) != len(self.labels):
            raise ValueError(
                f"inputs ({len(self.inputs)}) and labels ({len(self.labels)}) differ in length"
            )
        if self.task == "classification":
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.num_classes is None:
                self.num_classes = int(self.labels.max()) + 1 if len(self.labels) else 0
            if len(self.labels) and (
                self.labels.min() < 0 or self.labels.max() >= self.num_classes
            ):
                raise ValueError(
                    f"class labels must lie in [0, {self.num_classes}), got "
                    f"[{self.labels.min()}, {self.labels.max()}]"
                )
        elif self.task == "regression":
            self.labels = np.asarray(self.labels, dtype=np.float64)
        else:
            raise ValueError(f"unknown task {self.task!r}")

    def __len__(self) -> int:
        return len(self.inputs)

    def batches(
        self, batch_size: int, rng: np.random.Generator | None = None
    ) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """Yield (inputs, labels) batches; shuffled when ``rng`` is given."""
        n = len(self)
        order = rng.permutation(n) if rng is not None else np.arange(n)
        for start in range(0, n, batch_size):
            sel = order[start:start + batch_size]
            yield self.inputs[sel], self.labels[sel]

    def subset(self, n: int, split: str | None = None) -> "Dataset":
        """First ``n`` examples, in file order."""
        return Dataset(
            self.inputs[:n].copy(),
            self.labels[:n].copy(),
            split=split or self.split,
            task=self.task,
            num_classes=self.num_classes,
            provenance={**self.provenance, "subset_first": int(n)},
            clean_labels=None if self.clean_labels is None else self.clean_labels[:n].copy(),
        )


# ---------------------------------------------------------------------------
# synthetic generators
# ---------------------------------------------------------------------------


def gen_sparse_linear(
    n: int,
    p: int,
    s: int,
    noise_sd: float = 0.5,
    coef_scale: float = 1.0,
    seed: int = 0,
    split: str = "train",
):
    """Sparse linear-regression task with known ground truth.

    X has unit-variance standard-normal entries; the true coefficient vector
    has ``s`` nonzeros equal to +-coef_scale; y = X w + noise_sd * eps.

    Returns (dataset, w_true, support_indices).
    """
    if not 0 <= s <= p:
        raise ValueError(f"support size {s} must lie in [0, {p}]")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    support = np.sort(rng.permutation(p)[:s])
    w = np.zeros(p)
    w[support] = coef_scale * rng.choice([-1.0, 1.0], size=s)
    y = x @ w + noise_sd * rng.standard_normal(n)
    ds = Dataset(
        x,
        y,
        split=split,
        task="regression",
        provenance={
            "generator": "sparse_linear",
            "n": n, "p": p, "s": s,
            "noise_sd": noise_sd, "coef_scale": coef_scale, "seed": seed,
        },
    )
    return ds, w, support


def _class_templates(num_classes: int, side: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth per-class template images from a low-frequency cosine mixture."""
    freq = 4
    grid = (np.arange(side) + 0.5) / side
    ax = np.stack([np.cos(np.pi * u * grid) for u in range(freq)])  # (freq, side)
    templates = np.empty((num_classes, side, side))
    for c in range(num_classes):
        coeff = rng.standard_normal((freq, freq)) / (1.0 + np.add.outer(np.arange(freq), np.arange(freq)))
        img = np.einsum("uv,ui,vj->ij", coeff, ax, ax)
        lo, hi = img.min(), img.max()
        templates[c] = (img - lo) / (hi - lo) if hi > lo else np.full((side, side), 0.5)
    return templates


def gen_class_images(
    n: int,
    num_classes: int = 10,
    side: int = 28,
    seed: int = 0,
    noise_sd: float = 0.15,
    max_shift: int = 2,
    split: str = "train",
    template_seed: int | None = None,
) -> Dataset:
    """Synthetic image-classification task: shifted, noisy class templates.

    Each class has a fixed smooth template; samples are the template rolled by
    a random offset in [-max_shift, max_shift]^2 plus pixel noise, clipped to
    [0, 1].  Images come out as (n, side, side).  ``template_seed`` (default:
    ``seed``) pins the templates so train/test splits drawn with different
    sample seeds still share one task.
    """
    rng = np.random.default_rng(seed)
    template_rng = np.random.default_rng(
        seed if template_seed is None else template_seed
    )
    templates = _class_templates(num_classes, side, template_rng)
    labels = rng.integers(0, num_classes, size=n)
    images = np.empty((n, side, side))
    shifts = rng.integers(-max_shift, max_shift + 1, size=(n, 2))
    for i in range(n):
        img = np.roll(templates[labels[i]], tuple(shifts[i]), axis=(0, 1))
        images[i] = img
    images += noise_sd * rng.standard_normal(images.shape)
    np.clip(images, 0.0, 1.0, out=images)
    return Dataset(
        images,
        labels,
        split=split,
        task="classification",
        num_classes=num_classes,
        provenance={
            "generator": "class_images",
            "n": n, "num_classes": num_classes, "side": side,
            "seed": seed, "noise_sd": noise_sd, "max_shift": max_shift,
            "template_seed": seed if template_seed is None else template_seed,
        },
    )


def upscale_nearest(images: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbor upscaling of (N, H, W) images by an integer factor."""
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    return np.kron(images, np.ones((1, factor, factor), dtype=images.dtype))


def shift_augment(
    images: np.ndarray,
    labels: np.ndarray,
    copies: int,
    max_shift: int = 2,
    noise_sd: float = 0.0,
    seed: int = 0,
    pad_to: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Expand an image set ``copies``-fold by random integer shifts + noise.

    The first copy keeps the originals unshifted.  ``pad_to`` zero-pads the
    spatial extents up to a square size first (centered).
    """
    rng = np.random.default_rng(seed)
    images = np.asarray(images, dtype=np.float64)
    if pad_to is not None:
        n, h, w = images.shape
        if pad_to < max(h, w):
            raise ValueError(f"pad_to={pad_to} smaller than image extents {h}x{w}")
        top, left = (pad_to - h) // 2, (pad_to - w) // 2
        padded = np.zeros((n, pad_to, pad_to))
        padded[:, top:top + h, left:left + w] = images
        images = padded
    out_images = [images]
    out_labels = [labels]
    for _ in range(copies - 1):
        shifts = rng.integers(-max_shift, max_shift + 1, size=(len(images), 2))
        shifted = np.empty_like(images)
        for i in range(len(images)):
            shifted[i] = np.roll(images[i], tuple(shifts[i]), axis=(0, 1))
        if noise_sd:
            shifted = np.clip(shifted + noise_sd * rng.standard_normal(shifted.shape), 0.0, 1.0)
        out_images.append(shifted)
        out_labels.append(labels)
    return np.concatenate(out_images), np.concatenate(out_labels)


def corrupt_labels(ds: Dataset, rho: float, seed: int = 0) -> Dataset:
    """Flip each label with probability ``rho`` to a uniformly random
    *different* class.  The clean labels ride along in ``clean_labels``."""
    if ds.task != "classification":
        raise ValueError("corrupt_labels applies to classification datasets only")
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    k = ds.num_classes
    if k is None or k < 2:
        raise ValueError("label corruption needs at least two classes")
    rng = np.random.default_rng(seed)
    flip = rng.random(len(ds)) < rho
    offsets = rng.integers(1, k, size=len(ds))  # shift by 1..k-1 => always different
    new_labels = ds.labels.copy()
    new_labels[flip] = (ds.labels[flip] + offsets[flip]) % k
    return Dataset(
        ds.inputs,
        new_labels,
        split=ds.split,
        task="classification",
        num_classes=k,
        provenance={**ds.provenance, "label_noise": rho, "label_noise_seed": seed},
        clean_labels=ds.labels.copy(),
    )


def digits_datasets(
    n_train: int = 10_000,
    n_test: int = 2_000,
    seed: int = 0,
    upscale: int = 3,
    pad_to: int = 28,
    max_shift: int = 2,
    noise_sd: float = 0.05,
    test_fraction: float = 0.2,
) -> tuple[Dataset, Dataset]:
    """Handwritten-digit classification built from scikit-learn's bundled
    8x8 digit scans, upscaled and shift-augmented to the requested sizes.

    The base scans are split into train/test pools *before* augmentation so
    no augmented copy of a test digit can leak into training.
    """
    try:
        from sklearn.datasets import load_digits
    except ImportError as exc:  # pragma: no cover - environment dependent
        raise ConfigError(
            "data=digits needs scikit-learn (pip install scikit-learn)"
        ) from exc
    bunch = load_digits()
    images = bunch.images.astype(np.float64) / 16.0
    labels = bunch.target.astype(np.int64)

    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(labels))
    images, labels = images[perm], labels[perm]
    n_base_test = max(1, int(round(test_fraction * len(labels))))
    pools = {
        "test": (images[:n_base_test], labels[:n_base_test], n_test),
        "train": (images[n_base_test:], labels[n_base_test:], n_train),
    }

    out = {}
    for split, (base_x, base_y, want) in pools.items():
        up = upscale_nearest(base_x, upscale)
        copies = max(1, -(-want // len(base_x)))  # ceil division
        aug_x, aug_y = shift_augment(
            up, base_y, copies,
            max_shift=max_shift,
            noise_sd=noise_sd if split == "train" else 0.0,
            seed=seed + (1 if split == "train" else 2),
            pad_to=pad_to,
        )
        order = rng.permutation(len(aug_x))[:want]
        out[split] = Dataset(
            aug_x[order],
            aug_y[order],
            split=split,
            task="classification",
            num_classes=10,
            provenance={
                "source": "sklearn_digits",
                "n": want, "seed": seed, "upscale": upscale,
                "pad_to": pad_to, "max_shift": max_shift,
                "noise_sd": noise_sd if split == "train" else 0.0,
            },
        )
    return out["train"], out["test"]


# ---------------------------------------------------------------------------
# IDX files
# ---------------------------------------------------------------------------


def _read_exact(f, count: int, path: str, what: str) -> bytes:
    offset = f.tell()
    buf = f.read(count)
    if len(buf) != count:
        raise FormatError(
            f"{path}: truncated while reading {what} at offset {offset} "
            f"(wanted {count} bytes, got {len(buf)})"
        )
    return buf


def read_idx_images(path) -> np.ndarray:
    """Read an IDX image file into a (N, rows, cols) uint8 array."""
    path = str(path)
    with open(path, "rb") as f:
        magic, = struct.unpack(">i", _read_exact(f, 4, path, "magic"))
        if magic != IMAGES_MAGIC:
            raise FormatError(
                f"{path}: bad image magic 0x{magic:08x} at offset 0 "
                f"(expected 0x{IMAGES_MAGIC:08x})"
            )
        count, rows, cols = struct.unpack(">iii", _read_exact(f, 12, path, "header"))
        if min(count, rows, cols) < 0:
            raise FormatError(f"{path}: negative extent in header ({count}, {rows}, {cols})")
        raw = _read_exact(f, count * rows * cols, path, "pixels")
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after {count} images at offset {f.tell() - 1}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    """Read an IDX label file into a (N,) uint8 array."""
    path = str(path)
    with open(path, "rb") as f:
        magic, = struct.unpack(">i", _read_exact(f, 4, path, "magic"))
        if magic != LABELS_MAGIC:
            raise FormatError(
                f"{path}: bad label magic 0x{magic:08x} at offset 0 "
                f"(expected 0x{LABELS_MAGIC:08x})"
            )
        count, = struct.unpack(">i", _read_exact(f, 4, path, "count"))
        if count < 0:
            raise FormatError(f"{path}: negative count {count}")
        raw = _read_exact(f, count, path, "labels")
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after {count} labels at offset {f.tell() - 1}")
    return np.frombuffer(raw, dtype=np.uint8)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.ascontiguousarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError(f"expected (N, rows, cols) images, got shape {images.shape}")
    with open(str(path), "wb") as f:
        f.write(struct.pack(">iiii", IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    if labels.ndim != 1:
        raise ValueError(f"expected flat labels, got shape {labels.shape}")
    with open(str(path), "wb") as f:
        f.write(struct.pack(">ii", LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(str(path), "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Load paired IDX image/label files; pixels scaled to [0, 1]."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise FormatError(
            f"image count {len(images)} ({images_path}) != label count "
            f"{len(labels)} ({labels_path})"
        )
    return Dataset(
        images.astype(np.float64) / 255.0,
        labels.astype(np.int64),
        split=split,
        task="classification",
        num_classes=None if len(labels) else 0,
        provenance={
            "images_file": str(images_path),
            "labels_file": str(labels_path),
            "images_sha256": _sha256(images_path),
            "labels_sha256": _sha256(labels_path),
        },
    )
