"""Datasets: CIFAR-10 binary loader, the synthetic desk-scale generator,
and the adversarial-set file format.

Pixels live in [0, 1] everywhere inside the package; raw CIFAR bytes are
divided by 255 at load time.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._binio import Reader, Writer
from .errors import FormatError, ShapeError

CIFAR10_CLASS_NAMES = ("airplane", "automobile", "bird", "cat", "deer",
                       "dog", "frog", "horse", "ship", "truck")

_CIFAR_RECORD = 3073  # 1 label byte + 3 x 32 x 32 pixel bytes

ADVSET_MAGIC = b"ADVLSET1"
ADVSET_VERSION = 1


@dataclass(frozen=True, eq=False)
class Image:
    """Pixel tensor [channels, height, width], values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(self.pixels, dtype=np.float64)
        if p.ndim != 3:
            raise ShapeError(f"image must be [C,H,W], got shape {p.shape}")
        if p.size and (p.min() < 0.0 or p.max() > 1.0):
            raise ShapeError("pixel values outside [0, 1]")
        object.__setattr__(self, "pixels", p)

    @property
    def channels(self):
        return self.pixels.shape[0]

    @property
    def height(self):
        return self.pixels.shape[1]

    @property
    def width(self):
        return self.pixels.shape[2]

    @property
    def shape(self):
        return self.pixels.shape


@dataclass(frozen=True, eq=False)
class LabeledExample:
    image: Image
    label: int

    def __post_init__(self):
        if self.label < 0:
            raise ShapeError(f"label must be >= 0, got {self.label}")


class Dataset:
    """Immutable collection of same-shaped labeled images."""

    def __init__(self, examples, class_count: int, class_names=None,
                 split: str = "train"):
        examples = tuple(examples)
        if not examples:
            raise ShapeError("dataset must be nonempty")
        shape = examples[0].image.shape
        for ex in examples:
            if ex.image.shape != shape:
                raise ShapeError("all images in a dataset must share a shape")
            if ex.label >= class_count:
                raise ShapeError(f"label {ex.label} >= class_count "
                                 f"{class_count}")
        self.examples = examples
        self.class_count = int(class_count)
        self.class_names = tuple(class_names) if class_names else None
        self.split = split
        self._images = None
        self._labels = None

    def __len__(self):
        return len(self.examples)

    @property
    def image_shape(self):
        return self.examples[0].image.shape

    def images_array(self) -> np.ndarray:
        """Stacked pixels [N, C, H, W] (cached)."""
        if self._images is None:
            self._images = np.stack([ex.image.pixels for ex in self.examples])
        return self._images

    def labels_array(self) -> np.ndarray:
        if self._labels is None:
            self._labels = np.array([ex.label for ex in self.examples],
                                    dtype=np.int64)
        return self._labels

    @staticmethod
    def from_arrays(images, labels, class_count, class_names=None,
                    split="train"):
        examples = [LabeledExample(Image(img), int(lab))
                    for img, lab in zip(images, labels)]
        return Dataset(examples, class_count, class_names, split)


# ----------------------------------------------------------------------
# CIFAR-10 binary version
# ----------------------------------------------------------------------

def load_cifar10(path, split: str = "train", max_per_class: int | None = None
                 ) -> Dataset:
    """Load the CIFAR-10 binary-version files under `path`.

    `path` may be a directory (train: data_batch_*.bin, test:
    test_batch.bin) or a single .bin file. Records are 3073 bytes: one
    label byte, then 3072 pixel bytes (R, G, B planes, 32x32 row-major).
    Raw bytes are scaled to [0, 1] by dividing by 255.
    """
    path = Path(path)
    if path.is_dir():
        if split == "train":
            files = sorted(path.glob("data_batch_*.bin"))
        else:
            files = sorted(path.glob("test_batch*.bin"))
        if not files:
            raise FileNotFoundError(f"no CIFAR-10 {split} batch files "
                                    f"under {path}")
    else:
        if not path.exists():
            raise FileNotFoundError(str(path))
        files = [path]

    taken = [0] * 10
    examples = []
    for f in files:
        raw = f.read_bytes()
        if len(raw) % _CIFAR_RECORD:
            offset = len(raw) - len(raw) % _CIFAR_RECORD
            raise FormatError(f"{f}: truncated record at byte offset "
                              f"{offset} (file length {len(raw)} is not a "
                              f"multiple of {_CIFAR_RECORD})")
        arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, _CIFAR_RECORD)
        for rec in arr:
            label = int(rec[0])
            if label > 9:
                raise FormatError(f"{f}: label byte {label} out of range")
            if max_per_class is not None and taken[label] >= max_per_class:
                continue
            taken[label] += 1
            pixels = rec[1:].astype(np.float64).reshape(3, 32, 32) / 255.0
            examples.append(LabeledExample(Image(pixels), label))
    return Dataset(examples, 10, CIFAR10_CLASS_NAMES, split)


# ----------------------------------------------------------------------
# synthetic desk-scale dataset
# ----------------------------------------------------------------------

def synth_dataset(seed: int, class_count: int, per_class: int,
                  image_shape=(1, 16, 16), split: str = "train", *,
                  noise: float = 0.06, block: int = 4,
                  template_range=(0.25, 0.75)) -> Dataset:
    """Generate a separable synthetic dataset.

    Each class gets a fixed blocky template (a low-resolution uniform
    pattern upsampled by `block`); samples are the template plus clipped
    Gaussian noise. Templates depend only on (seed, class_count,
    image_shape), so train/test/val splits drawn with the same seed share
    them while using independent noise.
    """
    if class_count < 2:
        raise ValueError(f"class_count must be >= 2, got {class_count}")
    if per_class < 2:
        raise ValueError(f"per_class must be >= 2, got {per_class}")
    c, h, w = image_shape
    if h % block or w % block:
        raise ShapeError(f"image sides must be divisible by block={block}")

    lo, hi = template_range
    rng_t = np.random.default_rng([seed, 1000 + class_count])
    templates = []
    for _ in range(class_count):
        coarse = rng_t.uniform(lo, hi, size=(c, h // block, w // block))
        templates.append(np.kron(coarse, np.ones((1, block, block))))

    split_ids = {"train": 1, "test": 2, "val": 3}
    if split not in split_ids:
        raise ValueError(f"unknown split {split!r}")
    rng_n = np.random.default_rng([seed, split_ids[split]])

    examples = []
    for label, tpl in enumerate(templates):
        samples = tpl + rng_n.normal(0.0, noise, size=(per_class, c, h, w))
        np.clip(samples, 0.0, 1.0, out=samples)
        for s in samples:
            examples.append(LabeledExample(Image(s), label))
    return Dataset(examples, class_count, split=split)


# ----------------------------------------------------------------------
# adversarial-set file format
# ----------------------------------------------------------------------

def save_adv_set(path, adv_examples) -> None:
    """Write adversarial examples losslessly (64-bit pixels)."""
    adv_examples = list(adv_examples)
    if adv_examples:
        shape = adv_examples[0].original.shape
        attack = adv_examples[0].attack_name
    else:
        shape, attack = (0, 0, 0), ""
    with open(path, "wb") as fh:
        wr = Writer(fh, ADVSET_MAGIC, ADVSET_VERSION)
        wr.text(attack)
        for d in shape:
            wr.u32(d)
        wr.u32(len(adv_examples))
        for ex in adv_examples:
            wr.array(ex.original.pixels, np.float64)
            wr.array(ex.adversarial.pixels, np.float64)
            wr.i64(ex.true_label)
            wr.i64(ex.clean_prediction)
            wr.i64(ex.adv_prediction)
            wr.i64(-1 if ex.labeler_label is None else ex.labeler_label)
            wr.f64(ex.l2_distance)
            wr.f64(ex.linf_distance)
            wr.u8(1 if ex.success else 0)
            wr.text(ex.attack_name)


def load_adv_set(path):
    """Read an adversarial set written by save_adv_set."""
    from .attacks import AdversarialExample  # local import: avoids cycle

    out = []
    with open(path, "rb") as fh:
        rd = Reader(fh, ADVSET_MAGIC, ADVSET_VERSION, str(path))
        rd.text()  # attack name of the set; also carried per record
        shape = tuple(rd.u32() for _ in range(3))
        count = rd.u32()
        for _ in range(count):
            original = rd.array(np.float64)
            adversarial = rd.array(np.float64)
            if original.shape != shape or adversarial.shape != shape:
                raise FormatError(f"{path}: record shape mismatch")
            true_label = rd.i64()
            clean_pred = rd.i64()
            adv_pred = rd.i64()
            labeler_label = rd.i64()
            l2 = rd.f64()
            linf = rd.f64()
            success = bool(rd.u8())
            attack_name = rd.text()
            out.append(AdversarialExample(
                original=Image(original), adversarial=Image(adversarial),
                true_label=true_label, clean_prediction=clean_pred,
                adv_prediction=adv_pred, l2_distance=l2, linf_distance=linf,
                attack_name=attack_name, success=success,
                labeler_label=None if labeler_label < 0 else labeler_label))
    return out
