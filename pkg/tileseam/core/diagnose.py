"""
Receptive-field probes, tile mismatch, train/eval disparity and Dice evaluation.
"""
import logging
import itertools
import numpy as np
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union
from .errors import ConfigError, PlanError, ShapeError
from .layers import Mode
from .infer import NormalizeSpec, NormalizeStrategy, quantile_normalize, predict_sliding, map_tiles
from .tensor import DTYPE
from .unet import ModelConfig, build
from ..utils import write_message

FULL_TILE = 'FULL_TILE'
ERF_FLOOR = 1e-12
NO_MISMATCH = 'no'


@dataclass(frozen=True)
class TrfBox:
    """
    Per-axis number of input voxels to the left and to the right of an output voxel that can influence it,
    maximised over all positions on the pooling grid
    """
    left: Tuple[int, int, int]
    right: Tuple[int, int, int]

    @property
    def radius(self):
        return max(self.left + self.right)

    @property
    def size(self):
        return tuple(l + r + 1 for l, r in zip(self.left, self.right))

    def to_dict(self):
        return {'left': list(self.left), 'right': list(self.right), 'radius': self.radius}


def _network(source):
    if isinstance(source, ModelConfig):
        return build(source)
    return source


def compute_trf(source, mode=Mode.EVAL, ignore_statistics=False):
    """
    Theoretical receptive field by interval propagation through the layer graph.

    Args:
        source (ModelConfig or Layer): configuration or network to probe
        mode (Mode): mode in which the network would run
        ignore_statistics (bool): report the geometric footprint even for tile-wise normalization

    Returns:
        TrfBox or str: the box, or ``FULL_TILE`` when a layer uses statistics of the whole tile
    """
    network = _network(source)
    if not ignore_statistics and network.tile_statistics(mode):
        return FULL_TILE
    left = right = 0
    for phase in range(network.alignment):
        lo, hi = network.footprint(phase, phase)
        left = max(left, phase - lo)
        right = max(right, hi - phase)
    return TrfBox(left=(left,) * 3, right=(right,) * 3)


def halo_for(source):
    """
    Halo that makes stitching exact for the same architecture with global statistics
    """
    return compute_trf(source, ignore_statistics=True).radius


def trf_interval(network, position):
    return network.footprint(position, position)


def _seed_gradient(output, center):
    seed = np.zeros_like(output)
    seed[(0, slice(None)) + tuple(center)] = 1.0
    return seed


def _center(tile_size):
    return tuple(extent // 2 for extent in tile_size)


def gradient_support_box(source, tile_size, center=None):
    """
    Receptive field measured on the linearized network: the bounding box of the input voxels with non-zero
    gradient of the output voxel at ``center`` (summed over output channels).

    Returns:
        tuple: ``(lower, upper)`` inclusive corner coordinates, clipped to the tile
    """
    network = _network(source).linearize()
    tile_size = tuple(tile_size)
    center = _center(tile_size) if center is None else tuple(center)
    x = np.ones((1, network.in_channels) + tile_size, dtype=DTYPE)
    output = network.forward(x, Mode.EVAL, commit=False, record=True)
    grad = network.backward(_seed_gradient(output, center))
    support = np.nonzero(np.abs(grad[0]).sum(axis=0))
    return tuple(int(a.min()) for a in support), tuple(int(a.max()) for a in support)


def compute_erf(network, tile_size, n_samples, rng, mode=Mode.EVAL):
    """
    log10 of the mean absolute input gradient of the center output voxel over ``n_samples`` uniform random
    tiles. Values below 1e-12 are floored before the logarithm.
    """
    if n_samples < 1:
        raise ConfigError('ERF needs at least one sample, got {0}'.format(n_samples))
    tile_size = tuple(tile_size)
    center = _center(tile_size)
    shape = (1, network.in_channels) + tile_size
    total = np.zeros(tile_size, dtype=DTYPE)
    for _ in range(n_samples):
        x = rng.uniform_array(int(np.prod(shape))).reshape(shape)
        output = network.forward(x, mode, commit=False, record=True)
        grad = network.backward(_seed_gradient(output, center))
        total += np.abs(grad[0]).sum(axis=0)
    network.zero_grad()
    return np.log10(np.maximum(total / n_samples, ERF_FLOOR))


@dataclass
class RFReport:
    trf: Union[TrfBox, str]
    erf_map: Optional[np.ndarray]
    tile_size: Tuple[int, int, int]
    samples: int
    # (left, right) read back from a report; the map is not serialized
    support: Optional[Tuple[Tuple[int, ...], Tuple[int, ...]]] = None

    def erf_support(self):
        if self.erf_map is None:
            if self.support is None:
                raise ShapeError('Receptive field report has neither an ERF map nor a stored support')
            return self.support
        support = np.nonzero(self.erf_map > np.log10(ERF_FLOOR))
        center = _center(self.tile_size)
        return tuple(c - int(a.min()) for a, c in zip(support, center)), \
            tuple(int(a.max()) - c for a, c in zip(support, center))

    def to_dict(self):
        left, right = self.erf_support()
        return {'kind': 'receptive_field',
                'trf': self.trf if self.trf == FULL_TILE else self.trf.to_dict(),
                'erf_support': {'left': list(left), 'right': list(right)},
                'tile_size': list(self.tile_size), 'samples': self.samples}

    @classmethod
    def from_dict(cls, values, erf_map=None):
        trf = values['trf']
        if trf != FULL_TILE:
            trf = TrfBox(left=tuple(trf['left']), right=tuple(trf['right']))
        support = values['erf_support']
        return cls(trf=trf, erf_map=erf_map, tile_size=tuple(values['tile_size']), samples=values['samples'],
                   support=(tuple(support['left']), tuple(support['right'])))


def probe_receptive_field(network, tile_size, n_samples, rng, mode=Mode.EVAL):
    return RFReport(trf=compute_trf(network, mode), erf_map=compute_erf(network, tile_size, n_samples, rng, mode),
                    tile_size=tuple(tile_size), samples=n_samples)


def dice(a, b):
    """
    Dice coefficient of two boolean masks; two empty masks agree perfectly
    """
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


@dataclass(frozen=True)
class ProbeGeometry:
    """
    Two tiles of size ``tile`` inside a probe box of ``probe``, offset by ``split_offset`` along the last axis,
    probe boxes sampled with ``stride``
    """
    probe: Tuple[int, int, int] = (32, 32, 48)
    split_offset: int = 16
    stride: int = 16

    @property
    def tile(self):
        return self.probe[:-1] + (self.probe[-1] - self.split_offset,)

    @property
    def overlap(self):
        return self.tile[-1] - self.split_offset

    def validate(self, halo):
        if self.split_offset < 1 or self.stride < 1:
            raise PlanError('split_offset and stride must be positive')
        if self.overlap < 2 * halo + 1:
            raise PlanError('Overlap {0} of the probe tiles is smaller than 2 * halo + 1 = {1}'
                            .format(self.overlap, 2 * halo + 1))
        if any(extent < 2 * halo + 1 for extent in self.tile):
            raise PlanError('Probe tile {0} has no valid region with halo {1}'.format(self.tile, halo))
        return self

    def to_dict(self):
        return {'probe': list(self.probe), 'split_offset': self.split_offset, 'stride': self.stride}


FULL_SCALE_PROBE = ProbeGeometry(probe=(192, 192, 288), split_offset=96, stride=64)
DESK_PROBE = ProbeGeometry(probe=(32, 32, 48), split_offset=16, stride=16)


def probe_geometry_for(halo, align=1, split_offset=16, stride=16, minimum=32):
    """
    Smallest cubic probe tile (at least ``minimum``, a multiple of ``align``) whose overlap keeps a valid
    region for ``halo``
    """
    tile = max(minimum, 2 * halo + 1 + split_offset)
    tile = -(-tile // align) * align
    return ProbeGeometry(probe=(tile, tile, tile + split_offset), split_offset=split_offset, stride=stride)


@dataclass
class MismatchReport:
    max_dist: float
    per_channel_mismatch: List[float]
    tiles_compared: int
    per_tile_mismatch: List[List[float]] = field(default_factory=list)
    per_tile_max: List[float] = field(default_factory=list)

    @property
    def seamless(self):
        return self.max_dist == 0.0

    def mismatch_cells(self):
        if self.seamless:
            return [NO_MISMATCH] * len(self.per_channel_mismatch)
        return list(self.per_channel_mismatch)

    def to_dict(self):
        return {'kind': 'mismatch', 'max_dist': self.max_dist, 'per_channel_mismatch': self.per_channel_mismatch,
                'tiles_compared': self.tiles_compared, 'seamless': self.seamless,
                'per_tile_mismatch': self.per_tile_mismatch, 'per_tile_max': self.per_tile_max}

    @classmethod
    def from_dict(cls, values):
        return cls(max_dist=values['max_dist'], per_channel_mismatch=list(values['per_channel_mismatch']),
                   tiles_compared=values['tiles_compared'],
                   per_tile_mismatch=[list(row) for row in values.get('per_tile_mismatch', [])],
                   per_tile_max=list(values.get('per_tile_max', [])))


def _median_rows(rows, channels):
    if not rows:
        return [0.0] * channels
    return [float(np.median(column)) for column in np.asarray(rows, dtype=DTYPE).T]


def merge_mismatch(reports):
    """
    Pools the tile pairs of several reports into one
    """
    if not reports:
        raise ConfigError('Nothing to merge')
    rows = [row for report in reports for row in report.per_tile_mismatch]
    maxima = [value for report in reports for value in report.per_tile_max]
    return MismatchReport(max_dist=max(report.max_dist for report in reports),
                          per_channel_mismatch=_median_rows(rows, len(reports[0].per_channel_mismatch)),
                          tiles_compared=sum(report.tiles_compared for report in reports),
                          per_tile_mismatch=rows, per_tile_max=maxima)


def probe_positions(volume_shape, geometry):
    ranges = [range(0, extent - probe + 1, geometry.stride) for extent, probe in zip(volume_shape, geometry.probe)]
    positions = list(itertools.product(*ranges))
    if not positions:
        raise PlanError('Probe {0} does not fit into the volume {1}'.format(geometry.probe, tuple(volume_shape)))
    return positions


def tile_mismatch(model, volume, geometry=DESK_PROBE, halo=0, threshold=0.5, spec=None, workers=1):
    """
    Predicts two overlapping tiles at every probe position and compares them on the valid part of the overlap,
    i.e. the overlap shrunk by ``halo`` from every tile edge.

    Returns:
        MismatchReport: ``max_dist`` is the largest absolute difference of the raw outputs, the per-channel
        mismatch is the median over probe positions of 1 - Dice of the thresholded outputs
    """
    spec = spec or NormalizeSpec()
    geometry.validate(halo)
    volume = np.asarray(volume, dtype=DTYPE)
    if volume.ndim != 4:
        raise ShapeError('Expected a [C, D, H, W] volume, got shape {0}'.format(volume.shape))
    align = getattr(model, 'alignment', 1)
    if geometry.split_offset % align or geometry.stride % align:
        write_message('Probe offsets are not multiples of the pooling grid {0}; the tiles see shifted grids'
                      .format(align), level=logging.WARNING)
    source = quantile_normalize(volume, spec) if spec.strategy is NormalizeStrategy.GLOBAL else volume
    tile = geometry.tile
    offset = geometry.split_offset
    first_valid = tuple(slice(halo, t - halo) for t in tile[:-1]) + (slice(offset + halo, tile[-1] - halo),)
    second_valid = tuple(slice(halo, t - halo) for t in tile[:-1]) + (slice(halo, tile[-1] - offset - halo),)

    def predict(corner):
        window = source[(slice(None),) + tuple(slice(c, c + t) for c, t in zip(corner, tile))]
        if spec.strategy is NormalizeStrategy.TILE_WISE:
            window = quantile_normalize(window, spec)
        return model.predict(window[None], Mode.EVAL)[0]

    def compare(position):
        first = predict(position)[(slice(None),) + first_valid]
        second = predict(position[:-1] + (position[-1] + offset,))[(slice(None),) + second_valid]
        distance = float(np.abs(first - second).max())
        mismatch = [1.0 - dice(a > threshold, b > threshold) for a, b in zip(first, second)]
        return distance, mismatch

    positions = probe_positions(volume.shape[1:], geometry)
    results = map_tiles(compare, positions, workers)
    maxima = [distance for distance, _ in results]
    rows = [mismatch for _, mismatch in results]
    report = MismatchReport(max_dist=max(maxima), per_channel_mismatch=_median_rows(rows, len(rows[0])),
                            tiles_compared=len(positions), per_tile_mismatch=rows, per_tile_max=maxima)
    write_message('Tile mismatch over {0} probes: max dist {1:.3e}'.format(len(positions), report.max_dist),
                  level=logging.INFO)
    return report


@dataclass
class DisparityReport:
    per_volume: List[float]
    median: float

    def to_dict(self):
        return {'kind': 'disparity', 'per_volume': self.per_volume, 'median': self.median}

    @classmethod
    def from_dict(cls, values):
        return cls(per_volume=list(values['per_volume']), median=values['median'])


def train_eval_disparity(model, volumes, tile_size, halo, spec=None, threshold=0.5, workers=1):
    """
    1 - Dice between sliding-window predictions with training-mode and evaluation-mode statistics, pooled over
    all channels
    """
    if not volumes:
        raise ConfigError('Disparity needs at least one volume')
    values = []
    for volume in volumes:
        train = predict_sliding(model, volume, spec, tile_size, halo, mode=Mode.TRAIN, workers=workers)
        evaluation = predict_sliding(model, volume, spec, tile_size, halo, mode=Mode.EVAL, workers=workers)
        values.append(1.0 - dice(train > threshold, evaluation > threshold))
    return DisparityReport(per_volume=values, median=float(np.median(values)))


@dataclass
class DiceReport:
    per_volume: List[List[float]]
    per_class_median: List[float]
    mode: str = Mode.EVAL.value
    class_names: List[str] = field(default_factory=list)

    def to_dict(self):
        return {'kind': 'dice', 'per_volume': self.per_volume, 'per_class_median': self.per_class_median,
                'mode': self.mode, 'class_names': self.class_names}

    @classmethod
    def from_dict(cls, values):
        return cls(per_volume=[list(row) for row in values['per_volume']],
                   per_class_median=list(values['per_class_median']), mode=values.get('mode', Mode.EVAL.value),
                   class_names=list(values.get('class_names', [])))


def dice_per_class(prediction, labels, threshold=0.5):
    if prediction.shape != labels.shape:
        raise ShapeError('Prediction {0} and labels {1} differ in shape'.format(prediction.shape, labels.shape))
    return [dice(p > threshold, l > 0.5) for p, l in zip(prediction, labels)]


def dice_eval(model, volumes_with_labels, tile_size, halo, spec=None, mode=Mode.EVAL, threshold=0.5, workers=1,
              class_names=None):
    """
    Median over volumes of the per-class Dice between thresholded sliding-window predictions and one-hot labels
    """
    if not volumes_with_labels:
        raise ConfigError('Dice evaluation needs at least one labelled volume')
    rows = []
    for volume, labels in volumes_with_labels:
        prediction = predict_sliding(model, volume, spec, tile_size, halo, mode=mode, workers=workers)
        rows.append(dice_per_class(prediction, labels, threshold))
    medians = [float(np.median(column)) for column in np.asarray(rows, dtype=DTYPE).T]
    return DiceReport(per_volume=rows, per_class_median=medians, mode=mode.value,
                      class_names=list(class_names or []))


def tile_size_sweep(model, volumes_with_labels, geometries, spec=None, threshold=0.5, workers=1, class_names=None):
    """
    Dice per class for every ``(tile_size, halo)`` pair in ``geometries``
    """
    results = []
    for tile_size, halo in geometries:
        report = dice_eval(model, volumes_with_labels, tile_size, halo, spec, threshold=threshold, workers=workers,
                           class_names=class_names)
        results.append(((tile_size, halo), report))
        write_message('Tile {0}, halo {1}: Dice {2}'.format(tile_size, halo, report.per_class_median),
                      level=logging.INFO)
    return results


def sweep_spread(results):
    """
    Largest per-class Dice difference across the geometries of a sweep
    """
    table = np.asarray([report.per_class_median for _, report in results], dtype=DTYPE)
    return float((table.max(axis=0) - table.min(axis=0)).max())


@dataclass
class SweepReport:
    # (tile_size, halo) per geometry and the per-class median Dice obtained with it
    geometries: List[Tuple[Tuple[int, int, int], int]]
    per_geometry: List[List[float]]
    spread: float
    class_names: List[str] = field(default_factory=list)

    @classmethod
    def from_results(cls, results, class_names=None):
        """
        Collects the output of :func:`tile_size_sweep`
        """
        geometries = [(tuple(int(t) for t in np.broadcast_to(tile_size, (3,))), int(halo))
                      for (tile_size, halo), _ in results]
        return cls(geometries=geometries, per_geometry=[list(report.per_class_median) for _, report in results],
                   spread=sweep_spread(results), class_names=list(class_names or []))

    def to_dict(self):
        geometries = [{'tile_size': list(tile), 'halo': halo} for tile, halo in self.geometries]
        return {'kind': 'sweep', 'geometries': geometries,
                'per_geometry': self.per_geometry, 'spread': self.spread, 'class_names': self.class_names}

    @classmethod
    def from_dict(cls, values):
        return cls(geometries=[(tuple(entry['tile_size']), entry['halo']) for entry in values['geometries']],
                   per_geometry=[list(row) for row in values['per_geometry']], spread=values['spread'],
                   class_names=list(values.get('class_names', [])))
