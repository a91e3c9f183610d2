"""Dataset handling: labeled samples, augmentation, padding, disk I/O, and a
synthetic shape-segmentation generator for desk-scale runs.

On-disk layout::

    root/
      train/images/<stem>.png   8-bit RGB
      train/labels/<stem>.png   single-channel 8-bit, class = pixel value,
      val/...                   255 = void
      test/...
      classes.txt               optional, one class name per line

Images are normalized to [0, 1] by dividing by 255; there is no mean
subtraction because batch statistics recenter everything anyway. Every
augmentation applies the identical spatial transform to the image and the
label map.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import DatasetError

VOID_LABEL = 255

_IMAGE_EXTENSIONS = (".png", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg")


@dataclass
class LabeledSample:
    """An image with its per-pixel class map.

    image: (3, h, w) float32 in [0, 1]; labels: (h, w) integer indices in
    [0, n_classes) plus the void label.
    """

    image: np.ndarray
    labels: np.ndarray
    void_label: int = VOID_LABEL
    name: str = ""

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        self.labels = np.asarray(self.labels)
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise DatasetError(
                f"sample image must be (3, h, w), got {self.image.shape}"
            )
        if self.labels.shape != self.image.shape[1:]:
            raise DatasetError(
                f"label shape {self.labels.shape} does not match image "
                f"spatial shape {self.image.shape[1:]}"
            )
        if not np.issubdtype(self.labels.dtype, np.integer):
            self.labels = self.labels.astype(np.int64)

    @property
    def height(self):
        return self.image.shape[1]

    @property
    def width(self):
        return self.image.shape[2]


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)
    n_classes: int = 0
    class_names: list = field(default_factory=list)
    void_label: int = VOID_LABEL


def random_crop(sample, size, rng):
    """Crop image and labels identically at a uniform random offset."""
    ch = cw = size if np.isscalar(size) else None
    if ch is None:
        ch, cw = size
    h, w = sample.height, sample.width
    if ch > h or cw > w:
        raise DatasetError(
            f"crop {ch}x{cw} larger than image {h}x{w} ({sample.name or 'sample'})"
        )
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return LabeledSample(
        image=sample.image[:, top:top + ch, left:left + cw].copy(),
        labels=sample.labels[top:top + ch, left:left + cw].copy(),
        void_label=sample.void_label,
        name=sample.name,
    )


def random_flip(sample, rng, axis="horizontal", p=0.5):
    """Mirror image and labels together with probability ``p``.

    ``axis='horizontal'`` mirrors left-right (across the vertical axis);
    ``axis='vertical'`` mirrors top-bottom.
    """
    if axis not in ("horizontal", "vertical"):
        raise ValueError(f"flip axis must be 'horizontal' or 'vertical', got {axis!r}")
    if rng.random() >= p:
        return sample
    if axis == "horizontal":
        image = sample.image[:, :, ::-1]
        labels = sample.labels[:, ::-1]
    else:
        image = sample.image[:, ::-1, :]
        labels = sample.labels[::-1, :]
    return LabeledSample(
        image=np.ascontiguousarray(image),
        labels=np.ascontiguousarray(labels),
        void_label=sample.void_label,
        name=sample.name,
    )


def pad_to_multiple(sample, multiple):
    """Zero-pad the image (void-pad the labels) on the bottom/right so both
    spatial dims are multiples of ``multiple``. Returns the padded sample and
    the original (h, w) so predictions can be cropped back."""
    h, w = sample.height, sample.width
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return sample, (h, w)
    image = np.pad(sample.image, ((0, 0), (0, ph), (0, pw)))
    labels = np.pad(sample.labels, ((0, ph), (0, pw)),
                    constant_values=sample.void_label)
    padded = LabeledSample(image, labels, sample.void_label, sample.name)
    return padded, (h, w)


def crop_prediction(prediction, original_size):
    h, w = original_size
    return prediction[..., :h, :w]


# Distinct, well-separated base colors; index = class.
_PALETTE = np.array([
    (0.20, 0.20, 0.20),
    (0.85, 0.25, 0.20),
    (0.20, 0.45, 0.85),
    (0.95, 0.85, 0.25),
    (0.25, 0.75, 0.35),
    (0.75, 0.30, 0.80),
    (0.15, 0.80, 0.80),
    (0.90, 0.55, 0.15),
], dtype=np.float32)


def class_colors(n_classes):
    if n_classes > len(_PALETTE):
        raise ValueError(
            f"synthetic generator supports up to {len(_PALETTE)} classes, "
            f"got {n_classes}"
        )
    return _PALETTE[:n_classes]


def _synth_sample(image_size, n_classes, rng, shapes_per_image, noise,
                  void_border, name):
    h = w = image_size
    colors = class_colors(n_classes)
    labels = np.zeros((h, w), dtype=np.int64)
    image = np.empty((3, h, w), dtype=np.float32)
    image[:] = colors[0][:, None, None]

    yy, xx = np.mgrid[0:h, 0:w]
    n_shapes = int(rng.integers(shapes_per_image[0], shapes_per_image[1] + 1))
    for _ in range(n_shapes):
        cls = int(rng.integers(1, n_classes))
        if rng.random() < 0.5:
            # axis-aligned rectangle
            rh = int(rng.integers(h // 6, h // 2))
            rw = int(rng.integers(w // 6, w // 2))
            top = int(rng.integers(0, h - rh + 1))
            left = int(rng.integers(0, w - rw + 1))
            mask = np.zeros((h, w), dtype=bool)
            mask[top:top + rh, left:left + rw] = True
        else:
            # disc
            r = int(rng.integers(h // 8, h // 4))
            cy = int(rng.integers(r, h - r))
            cx = int(rng.integers(r, w - r))
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        labels[mask] = cls
        image[:, mask] = colors[cls][:, None]

    image += rng.normal(0.0, noise, size=image.shape).astype(np.float32)
    np.clip(image, 0.0, 1.0, out=image)

    border = int(round(void_border * image_size))
    if border > 0:
        labels[:border, :] = VOID_LABEL
        labels[-border:, :] = VOID_LABEL
        labels[:, :border] = VOID_LABEL
        labels[:, -border:] = VOID_LABEL
    return LabeledSample(image, labels, VOID_LABEL, name)


def synth_dataset(n_samples, image_size=64, n_classes=3, rng=None, *,
                  n_val=None, n_test=None, shapes_per_image=(2, 4),
                  noise=0.06, void_border=0.03):
    """Generate a reproducible synthetic segmentation dataset.

    Images contain randomly placed rectangles and discs whose colors
    correlate with their class, over a background class, plus Gaussian
    noise; labels are the exact shape masks. ``void_border`` is the fraction
    of each image edge marked void in the labels.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if n_val is None:
        n_val = max(4, n_samples // 8)
    if n_test is None:
        n_test = max(4, n_samples // 8)

    def make(count, tag):
        return [
            _synth_sample(image_size, n_classes, rng, shapes_per_image, noise,
                          void_border, f"{tag}_{i:04d}")
            for i in range(count)
        ]

    return DatasetSplit(
        train=make(n_samples, "train"),
        val=make(n_val, "val"),
        test=make(n_test, "test"),
        n_classes=n_classes,
        class_names=[f"class_{c}" for c in range(n_classes)],
        void_label=VOID_LABEL,
    )


def _find_files(directory):
    return sorted(
        p for p in directory.iterdir()
        if p.suffix.lower() in _IMAGE_EXTENSIONS
    )


def _load_split(root, split_name, void_label):
    split_dir = Path(root) / split_name
    images_dir = split_dir / "images"
    labels_dir = split_dir / "labels"
    if not images_dir.is_dir():
        warnings.warn(f"no {split_name}/images directory under {root}; "
                      f"{split_name} split is empty")
        return []
    label_files = {p.stem: p for p in _find_files(labels_dir)} \
        if labels_dir.is_dir() else {}
    samples = []
    for image_path in _find_files(images_dir):
        label_path = label_files.pop(image_path.stem, None)
        if label_path is None:
            raise DatasetError(
                f"image {image_path} has no matching label file in {labels_dir}"
            )
        image = np.asarray(Image.open(image_path).convert("RGB"), dtype=np.uint8)
        labels = np.asarray(Image.open(label_path), dtype=np.uint8)
        if labels.ndim != 2:
            raise DatasetError(
                f"label file {label_path} must be single-channel, got shape "
                f"{labels.shape}"
            )
        samples.append(LabeledSample(
            image=image.astype(np.float32).transpose(2, 0, 1) / 255.0,
            labels=labels.astype(np.int64),
            void_label=void_label,
            name=image_path.stem,
        ))
    if label_files:
        stray = sorted(label_files)[0]
        raise DatasetError(
            f"label file {labels_dir / stray} has no matching image"
        )
    return samples


def load_dataset(root, void_label=VOID_LABEL):
    """Load a directory-layout dataset; pairs are matched by filename stem."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset directory {root} does not exist")
    split = DatasetSplit(
        train=_load_split(root, "train", void_label),
        val=_load_split(root, "val", void_label),
        test=_load_split(root, "test", void_label),
        void_label=void_label,
    )
    names_file = root / "classes.txt"
    if names_file.is_file():
        split.class_names = [
            line.strip() for line in names_file.read_text().splitlines()
            if line.strip()
        ]
        split.n_classes = len(split.class_names)
    else:
        top = 0
        for samples in (split.train, split.val, split.test):
            for s in samples:
                real = s.labels[s.labels != void_label]
                if real.size:
                    top = max(top, int(real.max()))
        split.n_classes = top + 1
        split.class_names = [f"class_{c}" for c in range(split.n_classes)]
    for samples in (split.train, split.val, split.test):
        for s in samples:
            real = s.labels[s.labels != void_label]
            if real.size and int(real.max()) >= split.n_classes:
                raise DatasetError(
                    f"sample {s.name!r} has label {int(real.max())} >= "
                    f"n_classes ({split.n_classes})"
                )
    return split


def save_sample(sample, images_dir, labels_dir):
    images_dir = Path(images_dir)
    labels_dir = Path(labels_dir)
    images_dir.mkdir(parents=True, exist_ok=True)
    labels_dir.mkdir(parents=True, exist_ok=True)
    rgb = np.clip(np.rint(sample.image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(rgb.transpose(1, 2, 0)).save(images_dir / f"{sample.name}.png")
    Image.fromarray(sample.labels.astype(np.uint8)).save(
        labels_dir / f"{sample.name}.png"
    )


def save_dataset(split, root):
    """Write a DatasetSplit in the on-disk layout (8-bit quantized images)."""
    root = Path(root)
    for split_name in ("train", "val", "test"):
        for sample in getattr(split, split_name):
            save_sample(sample, root / split_name / "images",
                        root / split_name / "labels")
    if split.class_names:
        (root / "classes.txt").write_text("\n".join(split.class_names) + "\n")
    return root
