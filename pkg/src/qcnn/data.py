"""Synthetic LArTPC-style particle images and the dataset file format.

The generator draws single-particle events on a small canvas. It is not a
detector simulation; it only reproduces the visual contrasts a classifier
has to pick up:

* ``track_mip``: thin, faint track that wanders a little step to step, with
  a short faint stub at the stopping point (decay product)
* ``shower``: spatially extended cone of short branching segments
* ``track_heavy``: straight, thick track at least twice as bright
* ``track_kink``: a ``track_mip`` with one abrupt 20-60 degree turn

Intensities are on a fixed absolute scale (no per-image rescaling) so the
brightness difference between classes survives into the pixels.

File layout (little-endian)::

    b"QCDS" | u8 version=1 | u32 N | u32 H | u32 W | u32 C
    C x (u16 length | utf-8 name)
    N*H*W float32 pixels, image-major then row-major
    N u8 labels
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError, ShapeError, TruncatedFileError

CLASS_NAMES = ("track_mip", "shower", "track_heavy", "track_kink")

MAGIC = b"QCDS"
VERSION = 1

# Peak deposit per class, before noise. Heavy tracks are >= 2x MIP tracks.
MIP_INTENSITY = (0.25, 0.38)
HEAVY_INTENSITY = (0.8, 1.0)
SHOWER_INTENSITY = (0.3, 0.55)
MIP_WIDTH = 0.45
HEAVY_WIDTH = 0.75
STEP = 0.35  # deposit spacing along a path, in pixels


@dataclass
class Dataset:
    images: np.ndarray  # (N, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) uint8
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.images.ndim != 3:
            raise ShapeError(f"images must be (N, H, W), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ShapeError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and int(self.labels.max()) >= len(self.class_names):
            raise ValueError("label index exceeds the number of class names")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.images.shape[1:]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], list(self.class_names))

    def class_counts(self) -> dict[str, int]:
        counts = np.bincount(self.labels, minlength=len(self.class_names))
        return {name: int(c) for name, c in zip(self.class_names, counts)}


@dataclass
class GeneratorConfig:
    height: int = 30
    width: int = 30
    classes: tuple[str, ...] = ("track_mip", "shower")
    samples_per_class: int = 100
    noise_level: float = 0.02
    wiggle: float = 0.12
    seed: int = 0

    def __post_init__(self):
        self.classes = tuple(self.classes)
        unknown = [c for c in self.classes if c not in CLASS_NAMES]
        if unknown:
            raise ConfigurationError(f"unknown classes {unknown}; choose from {list(CLASS_NAMES)}")
        if len(set(self.classes)) != len(self.classes):
            raise ConfigurationError("class list contains duplicates")
        if len(self.classes) < 2:
            raise ConfigurationError("at least two classes are needed")
        if self.height < 4 or self.width < 4:
            raise ConfigurationError("canvas must be at least 4x4")
        if self.samples_per_class < 1:
            raise ConfigurationError("samples_per_class must be positive")
        if self.noise_level < 0 or self.wiggle < 0:
            raise ConfigurationError("noise_level and wiggle must be non-negative")


# --- rendering -------------------------------------------------------------


class _Canvas:
    def __init__(self, h: int, w: int):
        self.h, self.w = h, w
        self.rows = np.arange(h)[:, None, None]
        self.cols = np.arange(w)[None, :, None]
        self.pixels = np.zeros((h, w))

    def stroke(self, points: np.ndarray, intensity: float, width: float) -> None:
        """Deposit a Gaussian line of peak ``intensity`` along a polyline."""
        pts = _resample(points, STEP)
        if len(pts) == 0:
            return
        amp = intensity * STEP / (math.sqrt(2 * math.pi) * width)
        d2 = (self.rows - pts[:, 0]) ** 2 + (self.cols - pts[:, 1]) ** 2
        self.pixels += amp * np.exp(-d2 / (2 * width * width)).sum(axis=-1)


def _resample(points: np.ndarray, step: float) -> np.ndarray:
    out = []
    for a, b in zip(points[:-1], points[1:]):
        length = float(np.hypot(*(b - a)))
        k = max(1, int(round(length / step)))
        t = (np.arange(k) + 0.5) / k
        out.append(a + t[:, None] * (b - a))
    return np.concatenate(out) if out else np.zeros((0, 2))


def _unit(angle: float) -> np.ndarray:
    return np.array([math.sin(angle), math.cos(angle)])


def _start_and_length(rng, h, w):
    size = min(h, w)
    start = np.array([rng.uniform(0.15, 0.45) * h, rng.uniform(0.15, 0.45) * w])
    length = rng.uniform(0.55, 0.75) * size
    # Aim roughly toward the canvas centre so tracks stay mostly in view.
    centre = np.array([h / 2, w / 2]) + rng.normal(0, 0.1 * size, 2)
    heading = math.atan2(*(centre - start)) + rng.normal(0, 0.35)
    return start, length, heading


def _wandering_path(rng, start, heading, length, wiggle, kink_at=None, kink_angle=0.0):
    pts = [start]
    pos = start.copy()
    travelled = 0.0
    kinked = kink_at is None
    while travelled < length:
        step = min(1.0, length - travelled)
        if not kinked and travelled >= kink_at:
            heading += kink_angle
            kinked = True
        heading += rng.normal(0, wiggle)
        pos = pos + step * _unit(heading)
        pts.append(pos)
        travelled += step
    return np.array(pts), heading


def _draw_mip(rng, canvas, cfg, kink=False):
    start, length, heading = _start_and_length(rng, canvas.h, canvas.w)
    intensity = rng.uniform(*MIP_INTENSITY)
    kink_at = kink_angle = None
    if kink:
        kink_at = rng.uniform(0.3, 0.7) * length
        kink_angle = math.radians(rng.uniform(20, 60)) * rng.choice([-1, 1])
    path, end_heading = _wandering_path(rng, start, heading, length, cfg.wiggle, kink_at, kink_angle or 0.0)
    canvas.stroke(path, intensity, MIP_WIDTH)
    stub_dir = end_heading + rng.uniform(-math.pi, math.pi)
    stub_len = rng.uniform(1.5, 3.0) * min(canvas.h, canvas.w) / 30 + 1.0
    stub = np.array([path[-1], path[-1] + stub_len * _unit(stub_dir)])
    canvas.stroke(stub, 0.5 * intensity, MIP_WIDTH)


def _draw_heavy(rng, canvas, cfg):
    start, length, heading = _start_and_length(rng, canvas.h, canvas.w)
    intensity = rng.uniform(*HEAVY_INTENSITY)
    path, _ = _wandering_path(rng, start, heading, length, 0.05 * cfg.wiggle)
    canvas.stroke(path, intensity, HEAVY_WIDTH)


def _draw_shower(rng, canvas, cfg):
    size = min(canvas.h, canvas.w)
    start, length, heading = _start_and_length(rng, canvas.h, canvas.w)
    intensity = rng.uniform(*SHOWER_INTENSITY)
    half_open = math.radians(rng.uniform(25, 40))
    # Short trunk, then segments that fan out inside the cone.
    trunk_end = start + 0.2 * length * _unit(heading)
    canvas.stroke(np.array([start, trunk_end]), intensity, MIP_WIDTH)
    segments = [(start, trunk_end, heading, intensity)]
    for _ in range(int(rng.integers(10, 16))):
        a, b, parent_dir, parent_int = segments[int(rng.integers(len(segments)))]
        origin = a + rng.uniform(0.4, 1.0) * (b - a)
        d = parent_dir + rng.normal(0, half_open / 1.5)
        d = float(np.clip(d, heading - half_open, heading + half_open))
        end = origin + rng.uniform(0.12, 0.3) * size * _unit(d)
        # Branches lose energy as the shower develops.
        seg_int = parent_int * rng.uniform(0.75, 0.95)
        canvas.stroke(np.array([origin, end]), seg_int, MIP_WIDTH)
        segments.append((origin, end, d, seg_int))


def _render(kind: str, rng: np.random.Generator, cfg: GeneratorConfig) -> np.ndarray:
    canvas = _Canvas(cfg.height, cfg.width)
    if kind == "track_mip":
        _draw_mip(rng, canvas, cfg)
    elif kind == "track_kink":
        _draw_mip(rng, canvas, cfg, kink=True)
    elif kind == "track_heavy":
        _draw_heavy(rng, canvas, cfg)
    elif kind == "shower":
        _draw_shower(rng, canvas, cfg)
    else:
        raise ConfigurationError(f"unknown class {kind!r}")
    img = canvas.pixels
    if cfg.noise_level > 0:
        img = img + rng.normal(0, cfg.noise_level, img.shape)
    return np.clip(img, 0.0, 1.0)


def generate(config: GeneratorConfig) -> Dataset:
    """Images ordered class by class. Each image draws from its own stream
    seeded by (seed, class, index), so any subset can be regenerated alone.
    """
    images, labels = [], []
    for label, kind in enumerate(config.classes):
        code = CLASS_NAMES.index(kind)
        for i in range(config.samples_per_class):
            rng = np.random.default_rng([config.seed, code, i])
            images.append(_render(kind, rng, config))
            labels.append(label)
    return Dataset(np.stack(images), np.array(labels), list(config.classes))


def split(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified, seeded train/test split. Every class lands in both halves."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(len(dataset.class_names)):
        members = np.flatnonzero(dataset.labels == c)
        if len(members) == 0:
            continue
        if len(members) < 2:
            raise ValueError(f"class {dataset.class_names[c]!r} has fewer than 2 samples")
        members = rng.permutation(members)
        k = min(max(int(round(train_fraction * len(members))), 1), len(members) - 1)
        train_idx.extend(members[:k])
        test_idx.extend(members[k:])
    return dataset.subset(np.sort(train_idx)), dataset.subset(np.sort(test_idx))


# --- persistence -----------------------------------------------------------


def dataset_to_bytes(dataset: Dataset) -> bytes:
    n, h, w = dataset.images.shape
    parts = [MAGIC, bytes([VERSION]), struct.pack("<4I", n, h, w, len(dataset.class_names))]
    for name in dataset.class_names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
    parts.append(dataset.images.astype("<f4").tobytes())
    parts.append(dataset.labels.astype(np.uint8).tobytes())
    return b"".join(parts)


def dataset_from_bytes(buf: bytes) -> Dataset:
    def need(offset, count, what):
        if offset + count > len(buf):
            raise TruncatedFileError(f"file truncated while reading {what}", len(buf))

    need(0, 5, "header")
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", 0)
    if buf[4] != VERSION:
        raise FormatError(f"unsupported version {buf[4]}", 4)
    need(5, 16, "header")
    n, h, w, c = struct.unpack_from("<4I", buf, 5)
    pos = 21
    names = []
    for _ in range(c):
        need(pos, 2, "class name length")
        (length,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        need(pos, length, "class name")
        try:
            names.append(buf[pos : pos + length].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError("class name is not valid utf-8", pos) from exc
        pos += length
    need(pos, 4 * n * h * w, "pixels")
    images = np.frombuffer(buf, dtype="<f4", count=n * h * w, offset=pos).reshape(n, h, w)
    pos += 4 * n * h * w
    need(pos, n, "labels")
    labels = np.frombuffer(buf, dtype=np.uint8, count=n, offset=pos)
    bad = np.flatnonzero(labels >= c)
    if bad.size:
        raise FormatError(f"label {labels[bad[0]]} >= class count {c}", pos + int(bad[0]))
    pos += n
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} unexpected trailing bytes", pos)
    return Dataset(images.astype(np.float32), labels.copy(), names)


def save_dataset(dataset: Dataset, path) -> None:
    Path(path).write_bytes(dataset_to_bytes(dataset))


def load_dataset(path) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes())
