"""Dataset containers, binary parsers (MNIST IDX, CIFAR-10), synthetic
generators, and the validation/stream split.

Pixels are normalized to [0,1] float32 at ingest; any fixed-point conversion
happens inside the model pipeline.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError
from .rng import Xoshiro256StarStar
from .tensor import FLOAT32, Tensor

NUM_CLASSES = 10

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
CIFAR_RECORD_LEN = 3073  # 1 label byte + 3*32*32 pixels


@dataclass(frozen=True, eq=False)
class Dataset:
    name: str
    items: tuple[tuple[Tensor, int], ...]
    source: str

    def __post_init__(self):
        shapes = {img.shape for img, _ in self.items}
        if len(shapes) > 1:
            raise DataError(f"dataset {self.name!r} mixes image shapes: {sorted(shapes)}")
        for i, (_, label) in enumerate(self.items):
            if not 0 <= label < NUM_CLASSES:
                raise DataError(f"dataset {self.name!r} item {i} has label {label} outside [0, {NUM_CLASSES})")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def image_shape(self) -> tuple[int, ...] | None:
        return self.items[0][0].shape if self.items else None

    def images(self) -> list[Tensor]:
        return [img for img, _ in self.items]

    def labels(self) -> list[int]:
        return [label for _, label in self.items]


@dataclass(frozen=True)
class SplitPlan:
    validation_count: int = 100
    stream_count: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.validation_count < 0 or self.stream_count < 0:
            raise ConfigError("split counts must be nonnegative")


class _Cursor:
    def __init__(self, buf: bytes, label: str):
        self.buf = buf
        self.label = label
        self.off = 0

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.buf):
            raise ParseError(f"{self.label} truncated reading {what}", offset=self.off)
        chunk = self.buf[self.off : self.off + n]
        self.off += n
        return chunk

    def u32be(self, what: str) -> int:
        return struct.unpack(">I", self.take(4, what))[0]

    def done(self):
        if self.off != len(self.buf):
            raise ParseError(
                f"{self.label} has {len(self.buf) - self.off} trailing bytes", offset=self.off
            )


def _scale_pixels(raw: np.ndarray) -> np.ndarray:
    return raw.astype(np.float32) / np.float32(255.0)


def parse_idx(images_path: str | Path, labels_path: str | Path) -> Dataset:
    """Parse an MNIST-style IDX image/label file pair (big-endian headers)."""
    img_cur = _Cursor(Path(images_path).read_bytes(), "images file")
    magic = img_cur.u32be("magic")
    if magic != IDX_IMAGES_MAGIC:
        raise ParseError(f"images file magic {magic}, expected {IDX_IMAGES_MAGIC}", offset=0)
    count = img_cur.u32be("image count")
    rows = img_cur.u32be("row count")
    cols = img_cur.u32be("column count")
    pixels = np.frombuffer(
        img_cur.take(count * rows * cols, "pixel data"), dtype=np.uint8
    )
    img_cur.done()

    lab_cur = _Cursor(Path(labels_path).read_bytes(), "labels file")
    magic = lab_cur.u32be("magic")
    if magic != IDX_LABELS_MAGIC:
        raise ParseError(f"labels file magic {magic}, expected {IDX_LABELS_MAGIC}", offset=0)
    label_count = lab_cur.u32be("label count")
    if label_count != count:
        raise ParseError(
            f"label count {label_count} does not match image count {count}", offset=4
        )
    labels = lab_cur.take(count, "label data")
    lab_cur.done()
    for i, label in enumerate(labels):
        if label >= NUM_CLASSES:
            raise ParseError(f"label {label} at item {i} outside [0, {NUM_CLASSES})", offset=8 + i)

    scaled = _scale_pixels(pixels)
    per_image = rows * cols
    items = tuple(
        (
            Tensor((1, rows, cols), FLOAT32, scaled[i * per_image : (i + 1) * per_image]),
            int(labels[i]),
        )
        for i in range(count)
    )
    return Dataset(name="mnist", items=items, source="mnist")


def write_idx(dataset: Dataset, images_path: str | Path, labels_path: str | Path) -> None:
    """Write a single-channel dataset back to the IDX pair format.

    Pixels are mapped to bytes by round(v*255), so datasets that came from
    IDX files round-trip exactly.
    """
    shape = dataset.image_shape
    if shape is None:
        shape = (1, 0, 0)
    if len(shape) != 3 or shape[0] != 1:
        raise ConfigError(f"IDX writer needs (1, H, W) images, got {shape}")
    _, rows, cols = shape
    img_blob = bytearray(struct.pack(">IIII", IDX_IMAGES_MAGIC, len(dataset), rows, cols))
    lab_blob = bytearray(struct.pack(">II", IDX_LABELS_MAGIC, len(dataset)))
    for img, label in dataset.items:
        raw = np.clip(np.rint(img.data.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
        img_blob += raw.tobytes()
        lab_blob.append(label)
    Path(images_path).write_bytes(bytes(img_blob))
    Path(labels_path).write_bytes(bytes(lab_blob))


def parse_cifar10(bin_path: str | Path) -> Dataset:
    """Parse a CIFAR-10 binary batch: 3073-byte records, RGB planes."""
    buf = Path(bin_path).read_bytes()
    if len(buf) % CIFAR_RECORD_LEN != 0:
        full = len(buf) // CIFAR_RECORD_LEN
        raise ParseError(
            f"file size {len(buf)} is not a multiple of {CIFAR_RECORD_LEN}",
            offset=full * CIFAR_RECORD_LEN,
        )
    items = []
    for rec in range(len(buf) // CIFAR_RECORD_LEN):
        start = rec * CIFAR_RECORD_LEN
        label = buf[start]
        if label >= NUM_CLASSES:
            raise ParseError(f"record {rec} has label {label} outside [0, {NUM_CLASSES})", offset=start)
        raw = np.frombuffer(buf, dtype=np.uint8, count=CIFAR_RECORD_LEN - 1, offset=start + 1)
        items.append((Tensor((3, 32, 32), FLOAT32, _scale_pixels(raw)), label))
    return Dataset(name="cifar10", items=tuple(items), source="cifar10")


def write_cifar10(dataset: Dataset, bin_path: str | Path) -> None:
    """Write a (3, 32, 32) dataset to the CIFAR-10 binary record format."""
    shape = dataset.image_shape
    if shape is not None and shape != (3, 32, 32):
        raise ConfigError(f"CIFAR-10 writer needs (3, 32, 32) images, got {shape}")
    blob = bytearray()
    for img, label in dataset.items:
        blob.append(label)
        blob += np.clip(np.rint(img.data.astype(np.float64) * 255.0), 0, 255).astype(np.uint8).tobytes()
    Path(bin_path).write_bytes(bytes(blob))


def synthesize(count: int, shape: tuple[int, ...], seed: int, mode: str = "uniform") -> Dataset:
    """Generate a deterministic synthetic dataset.

    uniform: pixels i.i.d. in [0,1), image-like. gaussianActivationProbe:
    pixels i.i.d. standard normal (unclipped), for driving wide activation
    excursions in Monte-Carlo probes. Labels are assigned round-robin.
    """
    if count < 0:
        raise ConfigError("count must be >= 0")
    if mode not in ("uniform", "gaussianActivationProbe"):
        raise ConfigError(f"unknown synthesis mode {mode!r}")
    rng = Xoshiro256StarStar(seed)
    n = int(np.prod(shape, dtype=np.int64))
    items = []
    for i in range(count):
        if mode == "uniform":
            vals = np.array([rng.next_double() for _ in range(n)], dtype=np.float32)
        else:
            vals = np.array(_box_muller(rng, n), dtype=np.float32)
        items.append((Tensor(shape, FLOAT32, vals), i % NUM_CLASSES))
    return Dataset(name=f"synthetic-{mode}-{seed}", items=tuple(items), source=f"synthetic({seed})")


def _box_muller(rng: Xoshiro256StarStar, n: int) -> list[float]:
    out: list[float] = []
    while len(out) < n:
        u1 = 1.0 - rng.next_double()  # (0, 1]: keeps log() finite
        u2 = rng.next_double()
        radius = math.sqrt(-2.0 * math.log(u1))
        out.append(radius * math.cos(2.0 * math.pi * u2))
        if len(out) < n:
            out.append(radius * math.sin(2.0 * math.pi * u2))
    return out


def split(dataset: Dataset, plan: SplitPlan) -> tuple[Dataset, Dataset]:
    """Carve disjoint validation and stream subsets, order-preserving.

    A seeded Fisher-Yates shuffle picks the index sets; within each subset
    the original dataset order is kept.
    """
    need = plan.validation_count + plan.stream_count
    if need > len(dataset):
        raise DataError(
            f"split needs {need} items ({plan.validation_count} validation + "
            f"{plan.stream_count} stream) but dataset {dataset.name!r} has {len(dataset)}"
        )
    rng = Xoshiro256StarStar(plan.seed)
    perm = list(range(len(dataset)))
    for i in range(len(perm) - 1, 0, -1):
        j = rng.next_u64() % (i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    val_idx = sorted(perm[: plan.validation_count])
    stream_idx = sorted(perm[plan.validation_count : need])
    validation = Dataset(
        name=f"{dataset.name}/validation",
        items=tuple(dataset.items[i] for i in val_idx),
        source=dataset.source,
    )
    stream = Dataset(
        name=f"{dataset.name}/stream",
        items=tuple(dataset.items[i] for i in stream_idx),
        source=dataset.source,
    )
    return validation, stream
