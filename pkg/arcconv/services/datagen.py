"""Synthetic oriented-bar dataset.

Each sample is one anti-aliased bar at a uniformly drawn orientation in
[0, 180) degrees, labelled by orientation bin. All randomness comes from
SplitMix64 so a dataset is a pure function of its config on every platform.
"""

import csv
import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from arcconv.core.errors import ConfigurationError
from arcconv.models.configs import DatasetConfig

logger = logging.getLogger(__name__)

MANIFEST_HEADER = ["index", "orientation_deg", "label", "checksum"]

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


class SplitMix64:
    """Vectorised SplitMix64 stream."""

    def __init__(self, seed: int):
        self.state = np.uint64(int(seed) & _MASK64)

    def next_u64(self, count: int) -> np.ndarray:
        steps = np.arange(1, count + 1, dtype=np.uint64)
        z = self.state + steps * _GAMMA
        self.state = z[-1]
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))

    def uniform(self, count: int) -> np.ndarray:
        """Doubles in [0, 1) from the top 53 bits."""
        return (self.next_u64(count) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def normal(self, count: int) -> np.ndarray:
        """Standard normals by Box-Muller, both branches used."""
        pairs = (count + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        angle = 2.0 * math.pi * u[:, 1]
        return np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1).reshape(-1)[:count]


@dataclass(frozen=True)
class OrientedBarSample:
    index: int
    image: np.ndarray  # [1, H, W] in [0, 1]
    orientation: float  # degrees in [0, 180)
    label: int

    @property
    def checksum(self) -> str:
        return image_checksum(self.image)


def image_checksum(image: np.ndarray) -> str:
    """SHA-256 of the image quantised to 16 bits (insensitive to last-ulp libm differences)."""
    quantised = np.round(np.clip(image, 0.0, 1.0) * 65535.0).astype("<u2")
    return hashlib.sha256(quantised.tobytes()).hexdigest()


def orientation_label(orientation: float, bins: int) -> int:
    return min(int(orientation * bins // 180.0), bins - 1)


def _snap(value: float) -> float:
    return 0.0 if abs(value) < 1e-15 else value


def render_bar(config: DatasetConfig, orientation: float, dx: float = 0.0, dy: float = 0.0) -> np.ndarray:
    """Coverage image [H, W] of a bar centred at (size/2 + dx, size/2 + dy).

    x grows to the right and y grows upward, so orientation is counter-clockwise
    as displayed. Each pixel averages a supersample x supersample grid of
    point-in-rectangle tests taken at odd multiples of 1/(2*supersample).
    """
    size, s = config.image_size, config.supersample
    offsets = (np.arange(s) + 0.5) / s
    coords = (np.arange(size)[:, None] + offsets[None, :]).reshape(-1)
    cx, cy = size / 2.0 + dx, size / 2.0 + dy
    rx = (coords - cx)[None, :]
    ry = (size - coords - cy)[:, None]
    phi = math.radians(orientation)
    cos, sin = _snap(math.cos(phi)), _snap(math.sin(phi))
    along = rx * cos + ry * sin
    across = -rx * sin + ry * cos
    inside = (np.abs(along) <= config.bar_length / 2.0) & (np.abs(across) <= config.bar_width / 2.0)
    return inside.reshape(size, s, size, s).mean(axis=(1, 3))


class DatasetGenerator:
    """Generates oriented-bar samples for one DatasetConfig."""

    def __init__(self, config: DatasetConfig):
        self.config = config

    def sample(self, index: int, sample_seed: int, orientation: Optional[float] = None) -> OrientedBarSample:
        cfg = self.config
        stream = SplitMix64(sample_seed)
        u_orient, u_dx, u_dy = stream.uniform(3)
        if orientation is None:
            orientation = 180.0 * float(u_orient)
        dx = cfg.jitter * (2.0 * float(u_dx) - 1.0)
        dy = cfg.jitter * (2.0 * float(u_dy) - 1.0)
        image = render_bar(cfg, orientation, dx, dy)
        if cfg.noise_sigma > 0:
            noise = stream.normal(cfg.image_size * cfg.image_size).reshape(image.shape)
            image = np.clip(image + cfg.noise_sigma * noise, 0.0, 1.0)
        return OrientedBarSample(index=index, image=image[None], orientation=float(orientation),
                                 label=orientation_label(orientation, cfg.bins))

    def generate(self, count: int, orientations: Optional[Sequence[float]] = None) -> List[OrientedBarSample]:
        if count < 1:
            raise ConfigurationError(f"count must be >= 1, got {count}")
        if orientations is not None and len(orientations) != count:
            raise ConfigurationError("need exactly one forced orientation per sample")
        seeds = SplitMix64(self.config.seed).next_u64(count)
        samples = [
            self.sample(i, int(seeds[i]), None if orientations is None else float(orientations[i]))
            for i in range(count)
        ]
        logger.debug("generated %d samples (seed %d)", count, self.config.seed)
        return samples


def generate(config: DatasetConfig, count: int,
             orientations: Optional[Sequence[float]] = None) -> List[OrientedBarSample]:
    return DatasetGenerator(config).generate(count, orientations)


def make_dataset_config(**overrides) -> DatasetConfig:
    """DatasetConfig constructor that reports invalid geometry as ConfigurationError."""
    try:
        return DatasetConfig(**overrides)
    except ValidationError as exc:
        raise ConfigurationError(str(exc)) from exc


def _allocate(sizes: Dict[int, int], fraction: float, n_train: int) -> Dict[int, int]:
    """Per-label training quotas summing to n_train (largest remainder).

    Labels with at least two samples keep one sample on each side.
    """
    exact = {label: fraction * size for label, size in sizes.items()}
    quota = {label: int(math.floor(v)) for label, v in exact.items()}
    by_remainder = sorted(sizes, key=lambda label: (-(exact[label] - quota[label]), label))
    for label in by_remainder[: n_train - sum(quota.values())]:
        quota[label] += 1

    def bounds(label: int) -> Tuple[int, int]:
        size = sizes[label]
        return (1, size - 1) if size >= 2 else (0, size)

    for label in quota:
        low, high = bounds(label)
        quota[label] = min(max(quota[label], low), high)
    by_size = sorted(sizes, key=lambda label: (-sizes[label], label))
    while sum(quota.values()) != n_train:
        step = 1 if sum(quota.values()) < n_train else -1
        for label in by_size:
            low, high = bounds(label)
            if low <= quota[label] + step <= high:
                quota[label] += step
                break
        else:
            raise ConfigurationError("cannot split this dataset with both sides covering every label")
    return quota


def split(dataset: Sequence[OrientedBarSample], train_fraction: float,
          seed: int) -> Tuple[List[OrientedBarSample], List[OrientedBarSample]]:
    """Deterministic shuffled split, stratified by label."""
    total = len(dataset)
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError(f"train fraction must lie in (0, 1), got {train_fraction}")
    n_train = int(round(train_fraction * total))
    if n_train < 1 or n_train >= total:
        raise ConfigurationError(f"a {train_fraction} split of {total} samples leaves one side empty")

    order = np.argsort(SplitMix64(seed).next_u64(total), kind="stable")
    by_label: Dict[int, List[int]] = {}
    for position in order:
        by_label.setdefault(dataset[position].label, []).append(int(position))
    quota = _allocate({label: len(idx) for label, idx in by_label.items()}, train_fraction, n_train)

    train_ids = {i for label, idx in by_label.items() for i in idx[: quota[label]]}
    train = [dataset[i] for i in order if i in train_ids]
    test = [dataset[i] for i in order if i not in train_ids]
    return train, test


def stack(samples: Sequence[OrientedBarSample], dtype=np.float32) -> Tuple[np.ndarray, np.ndarray]:
    """Images [N, 1, H, W] and labels [N]."""
    images = np.stack([s.image for s in samples]).astype(dtype)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return images, labels


def write_pgm(path: Path, image: np.ndarray) -> None:
    """Binary PGM (P5), 8 bits per pixel."""
    plane = np.asarray(image).reshape(image.shape[-2], image.shape[-1])
    pixels = np.round(np.clip(plane, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


def export_dataset(samples: Sequence[OrientedBarSample], out_dir: Path, pgm: bool = False) -> Path:
    """Write manifest.csv (and optional sample_XXXXX.pgm images) into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.csv"
    with manifest.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for sample in samples:
            writer.writerow([sample.index, repr(sample.orientation), sample.label, sample.checksum])
            if pgm:
                write_pgm(out_dir / f"sample_{sample.index:05d}.pgm", sample.image)
    logger.info("wrote %d samples to %s", len(samples), out_dir)
    return manifest
