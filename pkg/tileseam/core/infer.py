"""
Sliding-window prediction with halo cropping.

Adjacent windows overlap by ``2 * halo``; every window contributes only its core, the part at least ``halo``
voxels away from every edge it shares with a neighbour. Windows touching the volume boundary own everything up
to that boundary. A tile larger than an extent is shrunk to it; only an extent off the pooling grid is zero
padded up to the next grid line.
"""
import enum
import logging
import itertools
import numpy as np
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Tuple
from .errors import ConfigError, PlanError, ShapeError
from .layers import Mode
from .tensor import DTYPE, quantile
from ..utils import write_message


class NormalizeStrategy(enum.Enum):
    GLOBAL = 'global'
    TILE_WISE = 'tile_wise'


@dataclass
class NormalizeSpec:
    q_min: float = 0.01
    q_max: float = 0.98
    strategy: NormalizeStrategy = NormalizeStrategy.GLOBAL
    clip: Tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if isinstance(self.strategy, str):
            self.strategy = NormalizeStrategy(self.strategy)
        if not 0.0 <= self.q_min < self.q_max <= 1.0:
            raise ConfigError('Quantiles must satisfy 0 <= q_min < q_max <= 1, got {0} and {1}'
                              .format(self.q_min, self.q_max))

    def to_dict(self):
        return {'q_min': self.q_min, 'q_max': self.q_max, 'strategy': self.strategy.value, 'clip': list(self.clip)}


def quantile_normalize(image, spec):
    """
    Maps the ``q_min`` and ``q_max`` quantiles of ``image`` to 0 and 1 and clips. A constant image maps to zeros.
    """
    image = np.asarray(image, dtype=DTYPE)
    low = quantile(image, spec.q_min)
    high = quantile(image, spec.q_max)
    if high == low:
        return np.zeros_like(image)
    return np.clip((image - low) / (high - low), *spec.clip)


@dataclass
class TileSpec:
    window: Tuple[slice, ...]
    padding: Tuple[Tuple[int, int], ...]
    core: Tuple[slice, ...]
    local_core: Tuple[slice, ...]


@dataclass
class StitchPlan:
    volume_shape: Tuple[int, ...]
    tile_size: Tuple[int, ...]
    halo: Tuple[int, ...]
    tiles: List[TileSpec] = field(default_factory=list)

    def coverage(self):
        """
        Number of cores covering every voxel
        """
        counts = np.zeros(self.volume_shape, dtype=np.int64)
        for tile in self.tiles:
            counts[tile.core] += 1
        return counts


def _per_axis(value, name):
    values = (value,) * 3 if np.isscalar(value) else tuple(value)
    if len(values) != 3:
        raise ConfigError('{0} needs one or three entries, got {1}'.format(name, value))
    return tuple(int(v) for v in values)


def grid_extent(extent, align=1):
    return -(-extent // align) * align


def clamp_tile(extent, tile, align=1):
    """
    ``tile`` shrunk to the extent rounded up to the alignment grid
    """
    return min(tile, grid_extent(extent, align))


def tile_for_halo(halo, align=1, core=16, minimum=32):
    """
    Smallest tile on the alignment grid that keeps a core of at least ``core`` voxels inside ``2 * halo``
    """
    return max(minimum, grid_extent(2 * halo + core, align))


def plan_axis(extent, tile, halo, align=1):
    """
    Window starts and owned cores along one axis. ``tile`` is clamped with :func:`clamp_tile`; a single window
    covering the whole axis needs no halo.

    Returns:
        list: ``(start, core_start, core_stop)`` in volume coordinates
    """
    if tile < 1 or tile % align:
        raise PlanError('Tile size {0} must be a positive multiple of {1}'.format(tile, align))
    padded = grid_extent(extent, align)
    tile = clamp_tile(extent, tile, align)
    if tile == padded:
        if halo < 0:
            raise PlanError('Halo {0} must be non-negative'.format(halo))
        return [(0, 0, extent)]
    if halo < 0 or 2 * halo >= tile:
        raise PlanError('Halo {0} must be non-negative and smaller than half the tile size {1}'.format(halo, tile))
    stride = (tile - 2 * halo) // align * align
    if stride < 1:
        raise PlanError('Tile {0} with halo {1} leaves no stride on the alignment grid {2}'.format(tile, halo, align))
    starts = list(range(0, padded - tile, stride)) + [padded - tile]
    bounds = [0] + [start + halo for start in starts[1:]] + [extent]
    return [(start, bounds[i], bounds[i + 1]) for i, start in enumerate(starts)]


def plan_grid(volume_shape, tile_size, halo, align=1):
    """
    Tile grid whose cores partition the volume.

    Args:
        volume_shape (tuple): spatial extents ``(D, H, W)``
        tile_size (int or tuple): window size per axis
        halo (int or tuple): voxels cropped from every inner window edge
        align (int): window starts and sizes stay on multiples of ``align`` (the network's pooling grid)

    Returns:
        StitchPlan: the plan
    """
    volume_shape = tuple(int(e) for e in volume_shape)
    tile_size = _per_axis(tile_size, 'tile_size')
    halo = _per_axis(halo, 'halo')
    if any(t < 1 or t % align for t in tile_size):
        raise PlanError('Tile size {0} must be a positive multiple of {1}'.format(tile_size, align))
    tile_size = tuple(clamp_tile(e, t, align) for e, t in zip(volume_shape, tile_size))
    axes = [plan_axis(e, t, h, align) for e, t, h in zip(volume_shape, tile_size, halo)]
    plan = StitchPlan(volume_shape=volume_shape, tile_size=tile_size, halo=halo)
    for entries in itertools.product(*axes):
        window, padding, core, local_core = [], [], [], []
        for (start, core_start, core_stop), extent, tile in zip(entries, volume_shape, tile_size):
            stop = min(start + tile, extent)
            window.append(slice(start, stop))
            padding.append((0, start + tile - stop))
            core.append(slice(core_start, core_stop))
            local_core.append(slice(core_start - start, core_stop - start))
        plan.tiles.append(TileSpec(tuple(window), tuple(padding), tuple(core), tuple(local_core)))
    return plan


def _tile_input(source, tile, spec):
    window = source[(slice(None),) + tile.window]
    if spec.strategy is NormalizeStrategy.TILE_WISE:
        window = quantile_normalize(window, spec)
    return np.pad(window, ((0, 0),) + tile.padding)


def map_tiles(function, items, workers=1):
    """
    Ordered map over independent work items, on a thread pool when ``workers > 1``
    """
    if workers <= 1:
        return [function(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(function, items))


def predict_sliding(model, volume, spec=None, tile_size=32, halo=0, mode=Mode.EVAL, workers=1):
    """
    Stitched prediction of ``volume [C, D, H, W]`` assembled from tile cores.

    The model runs with ``commit=False`` and ``record=False``: in TRAIN mode every tile is normalized with its own
    statistics but no running statistic is touched.
    """
    spec = spec or NormalizeSpec()
    volume = np.asarray(volume, dtype=DTYPE)
    if volume.ndim != 4:
        raise ShapeError('Expected a [C, D, H, W] volume, got shape {0}'.format(volume.shape))
    in_channels = getattr(model, 'in_channels', None)
    if in_channels is not None and volume.shape[0] != in_channels:
        raise ShapeError('Model expects {0} channels, volume has {1}'.format(in_channels, volume.shape[0]))
    plan = plan_grid(volume.shape[1:], tile_size, halo, getattr(model, 'alignment', 1))
    write_message('Sliding window: {0} tiles of {1}, halo {2}, {3} normalization, {4} mode'
                  .format(len(plan.tiles), plan.tile_size, plan.halo, spec.strategy.value, mode.value),
                  level=logging.DEBUG)
    source = quantile_normalize(volume, spec) if spec.strategy is NormalizeStrategy.GLOBAL else volume

    def predict_tile(tile):
        prediction = model.predict(_tile_input(source, tile, spec)[None], mode)[0]
        return prediction[(slice(None),) + tile.local_core]

    cores = map_tiles(predict_tile, plan.tiles, workers)
    output = np.empty((cores[0].shape[0],) + volume.shape[1:], dtype=DTYPE)
    for tile, core in zip(plan.tiles, cores):
        output[(slice(None),) + tile.core] = core
    return output
