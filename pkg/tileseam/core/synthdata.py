"""
Synthetic heterogeneous volumes with spherical blobs and three-class labels.

The blobs sit in the first ``dense_fraction`` of the last axis, an intensity ramp falls along that axis, and an
occasional bright plane lies in the sparse part. Statistics of a tile therefore depend on where it is taken.
"""
import json
import itertools
import logging
import numpy as np
from os import makedirs
from os.path import join, isfile
from dataclasses import dataclass, asdict
from typing import Tuple
from .errors import ConfigError, SynthesisError, ShapeError
from .tensor import DTYPE, SplitMix64
from ..utils import write_message
from ..io.npy import read_npy, write_npy

CLASS_NAMES = ('background', 'foreground', 'boundary')

IMAGE_FILE = 'image.npy'
LABELS_FILE = 'labels.npy'
SPEC_FILE = 'spec.json'


@dataclass
class SynthSpec:
    shape: Tuple[int, int, int] = (64, 64, 128)
    blob_count: Tuple[int, int] = (30, 60)
    blob_radius: Tuple[float, float] = (4.0, 8.0)
    shell_thickness: int = 1
    dense_fraction: float = 0.5
    base_intensity: float = 0.1
    blob_intensity: Tuple[float, float] = (0.6, 1.0)
    ramp_amplitude: float = 0.2
    noise_sigma: float = 0.05
    bright_line_prob: float = 0.3
    bright_line_intensity: float = 0.5
    max_attempts: int = 1000
    seed: int = 0

    def __post_init__(self):
        self.shape = tuple(int(e) for e in self.shape)
        self.blob_count = tuple(int(c) for c in self.blob_count)
        self.blob_radius = tuple(float(r) for r in self.blob_radius)
        self.blob_intensity = tuple(float(i) for i in self.blob_intensity)

    @property
    def dense_extent(self):
        return int(round(self.shape[-1] * self.dense_fraction))

    def validate(self):
        if len(self.shape) != 3 or any(e <= 0 or e % 4 for e in self.shape):
            raise ConfigError('Volume extents must be positive multiples of 4, got {0}'.format(self.shape))
        low, high = self.blob_count
        if not 0 <= low <= high:
            raise ConfigError('Invalid blob count range {0}'.format(self.blob_count))
        r_min, r_max = self.blob_radius
        if not 0.0 < r_min <= r_max:
            raise ConfigError('Invalid blob radius range {0}'.format(self.blob_radius))
        if not 0.0 < self.dense_fraction <= 1.0:
            raise ConfigError('dense_fraction must lie in (0, 1], got {0}'.format(self.dense_fraction))
        room = min(self.shape[:-1] + (self.dense_extent,))
        if high > 0 and 2 * int(np.ceil(r_max)) + 1 > room:
            raise ConfigError('Blobs of radius {0} do not fit into the dense region {1}'
                              .format(r_max, self.shape[:-1] + (self.dense_extent,)))
        if self.shell_thickness < 1:
            raise ConfigError('shell_thickness must be at least 1, got {0}'.format(self.shell_thickness))
        if not 0.0 <= self.bright_line_prob <= 1.0:
            raise ConfigError('bright_line_prob must lie in [0, 1]')
        if self.noise_sigma < 0.0:
            raise ConfigError('noise_sigma must be non-negative')
        return self

    def to_dict(self):
        return {key: list(value) if isinstance(value, tuple) else value for key, value in asdict(self).items()}

    @classmethod
    def from_dict(cls, values):
        unknown = set(values) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError('Unknown synthesis keys: {0}'.format(sorted(unknown)))
        return cls(**values)


def _place_blobs(spec, count, rng):
    r_min, r_max = spec.blob_radius
    bounds = spec.shape[:-1] + (spec.dense_extent,)
    centers, radii = [], []
    for index in range(count):
        for _ in range(spec.max_attempts):
            radius = r_min + rng.uniform() * (r_max - r_min)
            reach = int(np.ceil(radius))
            center = tuple(reach + rng.uniform() * (extent - 1 - 2 * reach) for extent in bounds)
            if all(np.linalg.norm(np.subtract(center, other)) >= radius + other_radius + 1.0
                   for other, other_radius in zip(centers, radii)):
                centers.append(center)
                radii.append(radius)
                break
        else:
            raise SynthesisError('Could not place blob {0} of {1} without overlap after {2} attempts'
                                 .format(index + 1, count, spec.max_attempts))
    return centers, radii


def rasterize(shape, centers, radii):
    """
    Instance map: 0 is background, blob ``k`` is labelled ``k + 1``
    """
    instances = np.zeros(shape, dtype=np.int32)
    for label, (center, radius) in enumerate(zip(centers, radii), start=1):
        reach = int(np.ceil(radius))
        lower = [max(int(np.floor(c)) - reach, 0) for c in center]
        upper = [min(int(np.floor(c)) + reach + 2, e) for c, e in zip(center, shape)]
        grid = np.ogrid[tuple(slice(lo, hi) for lo, hi in zip(lower, upper))]
        distance = sum((axis - c) ** 2 for axis, c in zip(grid, center))
        box = instances[tuple(slice(lo, hi) for lo, hi in zip(lower, upper))]
        box[distance <= radius ** 2] = label
    return instances


def boundary_shell(instances, thickness=1):
    """
    Voxels of an instance that have a voxel of another label (or background) within Chebyshev distance
    ``thickness``. The volume border does not count as an edge.
    """
    padded = np.pad(instances, thickness, mode='edge')
    shell = np.zeros(instances.shape, dtype=bool)
    extent = instances.shape
    for offset in itertools.product(range(-thickness, thickness + 1), repeat=3):
        window = tuple(slice(thickness + o, thickness + o + e) for o, e in zip(offset, extent))
        shell |= padded[window] != instances
    return shell & (instances > 0)


def one_hot_labels(instances, thickness=1):
    boundary = boundary_shell(instances, thickness)
    objects = instances > 0
    return np.stack([~objects, objects & ~boundary, boundary]).astype(DTYPE)


def generate(spec):
    """
    Returns:
        tuple: ``(image [1, D, H, W], labels [3, D, H, W])`` with one-hot background/foreground/boundary labels

    Raises:
        SynthesisError: blobs could not be placed or the dense half is not brighter than the sparse half by
            more than the noise level
    """
    spec.validate()
    rng = SplitMix64(spec.seed)
    count = rng.integer(*spec.blob_count)
    centers, radii = _place_blobs(spec, count, rng)
    instances = rasterize(spec.shape, centers, radii)
    labels = one_hot_labels(instances, spec.shell_thickness)

    image = np.full(spec.shape, spec.base_intensity, dtype=DTYPE)
    low, high = spec.blob_intensity
    for label in range(1, count + 1):
        image[instances == label] += low + rng.uniform() * (high - low)
    last = spec.shape[-1]
    image += spec.ramp_amplitude * (1.0 - np.arange(last, dtype=DTYPE) / max(last - 1, 1))
    if rng.uniform() < spec.bright_line_prob:
        row = rng.integer(0, spec.shape[1] - 1)
        image[:, row, spec.dense_extent:] += spec.bright_line_intensity
        write_message('Bright plane artifact at row {0}'.format(row), level=logging.DEBUG)
    image += spec.noise_sigma * rng.normal_array(image.size).reshape(spec.shape)

    half = last // 2
    contrast = image[..., :half].mean() - image[..., half:].mean()
    if not contrast > spec.noise_sigma:
        raise SynthesisError('Dense half is only {0:.4f} brighter than the sparse half, noise sigma is {1}'
                             .format(contrast, spec.noise_sigma))
    write_message('Generated {0} blobs, contrast {1:.3f}'.format(count, contrast), level=logging.DEBUG)
    return image[None], labels


def save_sample(directory, image, labels, spec):
    makedirs(directory, exist_ok=True)
    write_npy(join(directory, IMAGE_FILE), image)
    write_npy(join(directory, LABELS_FILE), labels)
    with open(join(directory, SPEC_FILE), 'w') as fp:
        json.dump(spec.to_dict(), fp, indent=2, sort_keys=True)
    return directory


def load_sample(directory):
    image_path = join(directory, IMAGE_FILE)
    if not isfile(image_path):
        raise FileNotFoundError('{0} has no {1}'.format(directory, IMAGE_FILE))
    image = read_npy(image_path)
    if image.ndim == 3:
        image = image[None]
    labels_path = join(directory, LABELS_FILE)
    labels = read_npy(labels_path) if isfile(labels_path) else None
    if labels is not None and labels.shape[1:] != image.shape[1:]:
        raise ShapeError('{0}: labels {1} do not match image {2}'.format(directory, labels.shape, image.shape))
    return image, labels
