"""
Training loop: soft Dice loss, Adam with gradient accumulation, random tile sampling with flip augmentation, and
the staged batch renormalization schedule (plain batch normalization during warmup, then a linear ramp of the
clip bounds).
"""
import time
import logging
import numpy as np
from os.path import join
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple
from .errors import ConfigError, ShapeError, TrainingDivergedError
from .layers import Mode, NormKind
from .infer import NormalizeSpec, NormalizeStrategy, quantile_normalize
from .tensor import DTYPE, SplitMix64
from ..utils import write_message
from ..io.checkpoint import save_checkpoint

DICE_SMOOTH = 1e-5


@dataclass
class TrainConfig:
    lr: float = 1e-3
    steps: int = 300
    accum_steps: int = 8
    batch_size: int = 1
    tile_size: Tuple[int, int, int] = (32, 32, 32)
    flip_prob: float = 0.5
    renorm_warmup_steps: Optional[int] = 100
    renorm_ramp_steps: int = 1000
    seed: int = 0
    input_normalization: NormalizeSpec = field(default_factory=NormalizeSpec)
    checkpoint_every: int = 0
    checkpoint_dir: Optional[str] = None
    log_every: int = 25
    snapshot_every: int = 25

    def __post_init__(self):
        self.tile_size = tuple(int(t) for t in ((self.tile_size,) * 3 if np.isscalar(self.tile_size)
                                                else self.tile_size))

    def validate(self):
        if self.lr < 0.0:
            raise ConfigError('Learning rate must be non-negative, got {0}'.format(self.lr))
        for name in ('steps', 'accum_steps', 'batch_size'):
            if getattr(self, name) < 1:
                raise ConfigError('{0} must be positive, got {1}'.format(name, getattr(self, name)))
        if len(self.tile_size) != 3 or any(t < 1 for t in self.tile_size):
            raise ConfigError('tile_size must have three positive extents, got {0}'.format(self.tile_size))
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ConfigError('flip_prob must lie in [0, 1], got {0}'.format(self.flip_prob))
        if self.renorm_warmup_steps is not None and self.renorm_warmup_steps < 0:
            raise ConfigError('renorm_warmup_steps must be non-negative')
        if self.renorm_ramp_steps < 0:
            raise ConfigError('renorm_ramp_steps must be non-negative')
        if self.snapshot_every < 0:
            raise ConfigError('snapshot_every must be non-negative')
        if self.checkpoint_every and not self.checkpoint_dir:
            raise ConfigError('checkpoint_every needs a checkpoint_dir')
        return self


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, size):
        return cls(m=np.zeros(size, dtype=DTYPE), v=np.zeros(size, dtype=DTYPE))


def adam_step(params, grads, state, lr):
    """
    One bias-corrected Adam update.

    Returns:
        tuple: ``(params', state')``, the inputs are left untouched
    """
    if not params.shape == grads.shape == state.m.shape:
        raise ShapeError('Parameter, gradient and moment lengths differ: {0}, {1}, {2}'
                         .format(params.shape, grads.shape, state.m.shape))
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    return params - lr * m_hat / (np.sqrt(v_hat) + state.eps), replace(state, m=m, v=v, t=t)


def dice_loss(pred, target, smooth=DICE_SMOOTH):
    """
    Soft Dice loss per sample and channel, averaged over the channels with a non-empty target, then over the
    batch. Samples without any foreground contribute zero loss and zero gradient.

    Returns:
        tuple: ``(loss, gradient)``
    """
    if pred.shape != target.shape:
        raise ShapeError('Prediction {0} and target {1} differ in shape'.format(pred.shape, target.shape))
    axes = tuple(range(2, pred.ndim))
    intersection = (pred * target).sum(axis=axes)
    denominator = pred.sum(axis=axes) + target.sum(axis=axes) + smooth
    numerator = 2.0 * intersection + smooth
    present = target.sum(axis=axes) > 0
    counts = present.sum(axis=1)
    weights = np.where(present, 1.0 / np.maximum(counts, 1)[:, None], 0.0) / pred.shape[0]
    loss = float((weights * (1.0 - numerator / denominator)).sum())
    expand = (slice(None), slice(None)) + (None,) * len(axes)
    grad = -weights[expand] * (2.0 * target * denominator[expand] - numerator[expand]) / denominator[expand] ** 2
    return loss, grad


def sample_tile(volume, labels, tile_size, rng):
    """
    Uniformly random tile of ``volume [C, D, H, W]`` and the matching labels

    Returns:
        tuple: ``(image_tile, label_tile, offset)``
    """
    spatial = volume.shape[1:]
    if any(t > e for t, e in zip(tile_size, spatial)):
        raise ShapeError('Tile {0} does not fit into the volume {1}'.format(tuple(tile_size), spatial))
    offset = tuple(int(rng.uniform() * (e - t + 1)) for e, t in zip(spatial, tile_size))
    window = (slice(None),) + tuple(slice(o, o + t) for o, t in zip(offset, tile_size))
    return volume[window], labels[window], offset


def flip_augment(image_tile, label_tile, rng, flip_prob=0.5):
    """
    Flips every spatial axis independently with probability ``flip_prob``; image and labels flip together

    Returns:
        tuple: ``(image_tile, label_tile, flipped_axes)``
    """
    axes = tuple(axis for axis in (1, 2, 3) if rng.uniform() < flip_prob)
    if axes:
        image_tile = np.flip(image_tile, axis=axes)
        label_tile = np.flip(label_tile, axis=axes)
    return np.ascontiguousarray(image_tile), np.ascontiguousarray(label_tile), axes


def renorm_progress(step, warmup, ramp):
    """
    Fraction of the renormalization clip range in effect at ``step``: zero during warmup (and forever when
    ``warmup`` is None), then a linear ramp over ``ramp`` steps
    """
    if warmup is None or step < warmup:
        return 0.0
    if ramp == 0:
        return 1.0
    return min((step - warmup) / ramp, 1.0)


@dataclass
class StepRecord:
    step: int
    loss: float
    r_max_eff: Optional[float]
    d_max_eff: Optional[float]
    wall_ms: float
    r_min_seen: Optional[float] = None
    r_max_seen: Optional[float] = None
    d_abs_seen: Optional[float] = None


@dataclass
class TrainingLog:
    records: List[StepRecord] = field(default_factory=list)
    # (step, {layer: (running_mu, running_var)}) every snapshot_every steps and after the last one
    snapshots: List[Tuple[int, dict]] = field(default_factory=list)

    FIELDS = ('step', 'loss', 'r_max_eff', 'd_max_eff', 'wall_ms', 'r_min_seen', 'r_max_seen', 'd_abs_seen')

    @property
    def losses(self):
        return np.asarray([record.loss for record in self.records], dtype=DTYPE)

    def smoothed_losses(self, window=20):
        losses = self.losses
        window = max(1, min(window, losses.size))
        return np.convolve(losses, np.ones(window) / window, mode='valid')

    def rows(self):
        return [[getattr(record, name) for name in self.FIELDS] for record in self.records]


def _renorm_layers(model):
    return [layer for _, layer in model.norm_layers() if layer.kind is NormKind.BATCH_RENORM]


def _observed_factors(layers):
    factors = [layer.last_factors for layer in layers if layer.last_factors is not None]
    if not factors:
        return None, None, None
    return min(float(r.min()) for r, _ in factors), max(float(r.max()) for r, _ in factors), \
        max(float(np.abs(d).max()) for _, d in factors)


def _prepare(dataset, spec):
    prepared = []
    for image, labels in dataset:
        image = np.asarray(image, dtype=DTYPE)
        if image.ndim == 3:
            image = image[None]
        if image.shape[1:] != labels.shape[1:]:
            raise ShapeError('Image {0} and labels {1} differ in spatial shape'.format(image.shape, labels.shape))
        if spec.strategy is NormalizeStrategy.GLOBAL:
            image = quantile_normalize(image, spec)
        prepared.append((image, labels))
    return prepared


def draw_batch(volumes, config, rng):
    images, labels = [], []
    spec = config.input_normalization
    for _ in range(config.batch_size):
        image, label = volumes[rng.integer(0, len(volumes) - 1)]
        image, label, _ = sample_tile(image, label, config.tile_size, rng)
        if spec.strategy is NormalizeStrategy.TILE_WISE:
            image = quantile_normalize(image, spec)
        image, label, _ = flip_augment(image, label, rng, config.flip_prob)
        images.append(image)
        labels.append(label)
    return np.stack(images), np.stack(labels)


def train(model, dataset, config):
    """
    Trains ``model`` in place on ``dataset``, a sequence of ``(image [C, D, H, W], labels [K, D, H, W])`` pairs.
    Every optimizer step averages the gradients of ``accum_steps`` micro-batches.

    Returns:
        tuple: ``(model, TrainingLog)``

    Raises:
        TrainingDivergedError: the loss became non-finite
    """
    config.validate()
    if not dataset:
        raise ConfigError('Training needs at least one volume')
    volumes = _prepare(dataset, config.input_normalization)
    rng = SplitMix64(config.seed)
    renorm_layers = _renorm_layers(model)
    params = model.flat_parameters()
    adam = AdamState.fresh(params.size)
    log = TrainingLog()
    for step in range(config.steps):
        started = time.perf_counter()
        progress = renorm_progress(step, config.renorm_warmup_steps, config.renorm_ramp_steps)
        for layer in renorm_layers:
            layer.set_renorm_progress(progress)
        model.zero_grad()
        losses = []
        seen = []
        for _ in range(config.accum_steps):
            images, labels = draw_batch(volumes, config, rng)
            prediction = model.forward(images, Mode.TRAIN)
            loss, grad = dice_loss(prediction, labels)
            if not np.isfinite(loss):
                raise TrainingDivergedError('Loss became {0} at step {1}'.format(loss, step))
            model.backward(grad)
            losses.append(loss)
            seen.append(_observed_factors(renorm_layers))
        params, adam = adam_step(params, model.flat_gradients() / config.accum_steps, adam, config.lr)
        model.set_flat_parameters(params)
        model.trained_steps += 1

        r_min, r_max, d_abs = None, None, None
        if renorm_layers:
            r_min = min(s[0] for s in seen)
            r_max = max(s[1] for s in seen)
            d_abs = max(s[2] for s in seen)
        bounds = renorm_layers[0].state if renorm_layers else None
        log.records.append(StepRecord(step=step, loss=float(np.mean(losses)),
                                      r_max_eff=bounds.r_max if bounds else None,
                                      d_max_eff=bounds.d_max if bounds else None,
                                      wall_ms=(time.perf_counter() - started) * 1e3,
                                      r_min_seen=r_min, r_max_seen=r_max, d_abs_seen=d_abs))
        if config.snapshot_every and ((step + 1) % config.snapshot_every == 0 or step + 1 == config.steps):
            log.snapshots.append((step, {name: (layer.state.running_mu.copy(), layer.state.running_var.copy())
                                         for name, layer in model.norm_layers() if layer.kind.tracks_running_stats}))
        if config.log_every and (step + 1) % config.log_every == 0:
            write_message('step {0}/{1}: loss {2:.4f}'.format(step + 1, config.steps, log.records[-1].loss)
                          + (' r_max {0:.3f} d_max {1:.3f}'.format(bounds.r_max, bounds.d_max) if bounds else ''),
                          level=logging.INFO)
        if config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            save_checkpoint(model, join(config.checkpoint_dir, 'step_{0:06d}'.format(step + 1)))
    return model, log
