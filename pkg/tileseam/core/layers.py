"""
Differentiable layers with explicit training/evaluation semantics.

Batched tensors are laid out ``[N, C, D, H, W]``. Every layer implements the same protocol:

  - ``forward(x, mode, commit=True, record=True)``: ``commit`` lets normalization layers write their
    running statistics, ``record`` keeps what ``backward`` needs. With both switched off a forward pass
    does not write to the layer at all and may run concurrently.
  - ``backward(upstream)``: accumulates parameter gradients and returns the input gradient.
  - ``footprint(lo, hi)``: maps an interval of output positions along one axis to the interval of input
    positions it depends on.
  - ``tile_statistics(mode)``: whether the output depends on statistics of the whole input tile.
"""
import enum
import copy
import numpy as np
from dataclasses import dataclass, replace
from typing import Optional, Tuple
from .errors import ShapeError, ConfigError, StaleCacheError
from .tensor import DTYPE, conv3d, conv3d_backward, conv3d_transposed, conv3d_transposed_backward, max_pool3d, \
    max_pool3d_backward, avg_pool3d, avg_pool3d_backward, sigmoid


class Mode(enum.Enum):
    TRAIN = 'train'
    EVAL = 'eval'


class NormKind(enum.Enum):
    BATCH_NORM = 'batchnorm'
    INSTANCE_NORM = 'instancenorm'
    INSTANCE_NORM_TRACKED = 'instancenorm_tracked'
    BATCH_RENORM = 'batchrenorm'
    IDENTITY = 'identity'

    def tile_statistics(self, mode):
        if self is NormKind.INSTANCE_NORM:
            return True
        if self is NormKind.IDENTITY:
            return False
        return mode is Mode.TRAIN

    @property
    def per_sample(self):
        return self in (NormKind.INSTANCE_NORM, NormKind.INSTANCE_NORM_TRACKED)

    @property
    def tracks_running_stats(self):
        return self in (NormKind.BATCH_NORM, NormKind.BATCH_RENORM, NormKind.INSTANCE_NORM_TRACKED)

    @property
    def mode_independent(self):
        return self in (NormKind.INSTANCE_NORM, NormKind.IDENTITY)


@dataclass
class NormState:
    """
    Affine parameters and running statistics of one normalization layer. ``r_max`` and ``d_max`` are the
    clip bounds currently in effect for batch renormalization.
    """
    gamma: np.ndarray
    beta: np.ndarray
    running_mu: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.01
    eps: float = 1e-5
    r_max: float = 3.0
    d_max: float = 5.0
    step_count: int = 0

    def __post_init__(self):
        if not 0.0 < self.momentum <= 1.0:
            raise ConfigError('momentum must lie in (0, 1], got {0}'.format(self.momentum))
        if self.eps <= 0.0:
            raise ConfigError('eps must be positive, got {0}'.format(self.eps))
        if self.r_max < 1.0:
            raise ConfigError('r_max must be at least 1, got {0}'.format(self.r_max))
        if self.d_max < 0.0:
            raise ConfigError('d_max must be non-negative, got {0}'.format(self.d_max))
        if np.any(self.running_var < 0.0):
            raise ConfigError('running_var must be non-negative')
        shapes = {a.shape for a in (self.gamma, self.beta, self.running_mu, self.running_var)}
        if len(shapes) != 1:
            raise ShapeError('NormState arrays disagree in shape: {0}'.format(shapes))

    @classmethod
    def fresh(cls, channels, **kwargs):
        return cls(gamma=np.ones(channels, dtype=DTYPE), beta=np.zeros(channels, dtype=DTYPE),
                   running_mu=np.zeros(channels, dtype=DTYPE), running_var=np.ones(channels, dtype=DTYPE), **kwargs)

    @property
    def channels(self):
        return self.gamma.shape[0]

    def copy(self):
        return replace(self, gamma=self.gamma.copy(), beta=self.beta.copy(), running_mu=self.running_mu.copy(),
                       running_var=self.running_var.copy())

    def updated(self, batch_mu, batch_var):
        m = self.momentum
        return replace(self, running_mu=(1.0 - m) * self.running_mu + m * batch_mu,
                       running_var=(1.0 - m) * self.running_var + m * batch_var, step_count=self.step_count + 1)


@dataclass
class NormCache:
    kind: NormKind
    shape: Tuple[int, ...]
    gamma: Optional[np.ndarray] = None
    xhat: Optional[np.ndarray] = None
    normalized: Optional[np.ndarray] = None
    inv_std: Optional[np.ndarray] = None
    axes: Optional[Tuple[int, ...]] = None
    r: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None


@dataclass
class LayerGrad:
    input: np.ndarray
    gamma: Optional[np.ndarray] = None
    beta: Optional[np.ndarray] = None


def _channelwise(values):
    return values.reshape(1, -1, 1, 1, 1)


def renorm_factors(batch_mu, batch_var, state):
    """
    Clipped correction factors ``r`` and ``d`` of batch renormalization, shaped like the batch statistics
    """
    sigma = _channelwise(np.sqrt(state.running_var + state.eps))
    r = np.clip(np.sqrt(batch_var + state.eps) / sigma, 1.0 / state.r_max, state.r_max)
    d = np.clip((batch_mu - _channelwise(state.running_mu)) / sigma, -state.d_max, state.d_max)
    return r, d


def norm_forward(x, state, kind, mode, factors=None):
    """
    Feature normalization ``gamma * (x - mu) / sqrt(var + eps) + beta`` for every kind and mode.

    Args:
        x (np.ndarray): input of shape ``[N, C, D, H, W]``
        state (NormState): parameters and running statistics, never modified
        kind (NormKind): normalization strategy
        mode (Mode): training or evaluation statistics
        factors (tuple): fixed ``(r, d)`` replacing the computed renormalization factors

    Returns:
        tuple: ``(y, state', cache)`` where ``state'`` carries the updated running statistics
    """
    if x.ndim != 5 or x.shape[0] < 1:
        raise ShapeError('Normalization expects an [N, C, D, H, W] input, got shape {0}'.format(x.shape))
    if x.shape[1] != state.channels:
        raise ShapeError('Input has {0} channels, normalization state has {1}'.format(x.shape[1], state.channels))
    if kind is NormKind.IDENTITY:
        return x, state, NormCache(kind=kind, shape=x.shape)

    new_state = state
    r = d = None
    if kind.tile_statistics(mode):
        axes = (2, 3, 4) if kind.per_sample else (0, 2, 3, 4)
        mu = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (x - mu) * inv_std
        if kind is NormKind.BATCH_RENORM:
            r, d = factors if factors is not None else renorm_factors(mu, var, state)
            normalized = xhat * r + d
        else:
            normalized = xhat
        if kind.tracks_running_stats:
            channels = state.channels
            new_state = state.updated(mu.reshape(-1, channels).mean(axis=0), var.reshape(-1, channels).mean(axis=0))
    else:
        axes = None
        inv_std = _channelwise(1.0 / np.sqrt(state.running_var + state.eps))
        xhat = (x - _channelwise(state.running_mu)) * inv_std
        normalized = xhat
    y = _channelwise(state.gamma) * normalized + _channelwise(state.beta)
    cache = NormCache(kind=kind, shape=x.shape, gamma=state.gamma, xhat=xhat, normalized=normalized,
                      inv_std=inv_std, axes=axes, r=r, d=d)
    return y, new_state, cache


def norm_backward(cache, upstream):
    if cache is None or upstream.shape != cache.shape:
        raise StaleCacheError('No recorded normalization forward pass matches an upstream gradient of shape {0}'
                              .format(upstream.shape))
    if cache.kind is NormKind.IDENTITY:
        return LayerGrad(input=upstream)
    parameter_axes = (0, 2, 3, 4)
    grad_gamma = (upstream * cache.normalized).sum(axis=parameter_axes)
    grad_beta = upstream.sum(axis=parameter_axes)
    grad_xhat = upstream * _channelwise(cache.gamma)
    if cache.r is not None:
        grad_xhat = grad_xhat * cache.r
    if cache.axes is None:
        grad_input = grad_xhat * cache.inv_std
    else:
        mean_grad = grad_xhat.mean(axis=cache.axes, keepdims=True)
        mean_projection = (grad_xhat * cache.xhat).mean(axis=cache.axes, keepdims=True)
        grad_input = cache.inv_std * (grad_xhat - mean_grad - cache.xhat * mean_projection)
    return LayerGrad(input=grad_input, gamma=grad_gamma, beta=grad_beta)


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(x, upstream):
    return upstream * (x > 0.0)


def _check_batch(x, channels=None):
    if x.ndim != 5:
        raise ShapeError('Layers expect an [N, C, D, H, W] input, got shape {0}'.format(x.shape))
    if channels is not None and x.shape[1] != channels:
        raise ShapeError('Expected {0} input channels, got {1}'.format(channels, x.shape[1]))


class Layer(object):
    alignment = 1
    in_channels = None

    def __init__(self):
        self._cache = None

    def forward(self, x, mode, commit=True, record=True):
        raise NotImplementedError

    def backward(self, upstream):
        raise NotImplementedError

    def predict(self, x, mode=Mode.EVAL):
        return self.forward(x, mode, commit=False, record=False)

    def _take_cache(self):
        if self._cache is None:
            raise StaleCacheError('{0}.backward called without a recorded forward pass'.format(type(self).__name__))
        cache, self._cache = self._cache, None
        return cache

    def children(self):
        return []

    def walk(self):
        yield self
        for _, child in self.children():
            yield from child.walk()

    def _own_parameters(self):
        return []

    def _own_gradients(self):
        return []

    def _own_buffers(self):
        return []

    def _collect(self, method, prefix):
        result = [(prefix + name, array) for name, array in getattr(self, method)()]
        for name, child in self.children():
            result.extend(child._collect(method, '{0}{1}.'.format(prefix, name)))
        return result

    def named_parameters(self, prefix=''):
        return self._collect('_own_parameters', prefix)

    def named_gradients(self, prefix=''):
        return self._collect('_own_gradients', prefix)

    def named_buffers(self, prefix=''):
        return self._collect('_own_buffers', prefix)

    def named_layers(self, prefix=''):
        result = [(prefix.rstrip('.'), self)]
        for name, child in self.children():
            result.extend(child.named_layers('{0}{1}.'.format(prefix, name)))
        return result

    def norm_layers(self):
        return [(name, layer) for name, layer in self.named_layers() if isinstance(layer, Norm3d)]

    def parameter_count(self):
        return sum(array.size for _, array in self.named_parameters())

    def flat_parameters(self):
        arrays = [array.ravel() for _, array in self.named_parameters()]
        return np.concatenate(arrays) if arrays else np.zeros(0, dtype=DTYPE)

    def flat_gradients(self):
        arrays = [array.ravel() for _, array in self.named_gradients()]
        return np.concatenate(arrays) if arrays else np.zeros(0, dtype=DTYPE)

    def set_flat_parameters(self, flat):
        if flat.shape != (self.parameter_count(),):
            raise ShapeError('Expected a flat vector of {0} parameters, got shape {1}'
                             .format(self.parameter_count(), flat.shape))
        offset = 0
        for _, array in self.named_parameters():
            array[...] = flat[offset:offset + array.size].reshape(array.shape)
            offset += array.size

    def zero_grad(self):
        for _, array in self.named_gradients():
            array[...] = 0.0

    def initialize(self, rng):
        for _, child in self.children():
            child.initialize(rng)

    def footprint(self, lo, hi):
        return lo, hi

    def tile_statistics(self, mode):
        return any(child.tile_statistics(mode) for _, child in self.children())

    def linearize(self):
        """
        Copy of this network in which every path from input to output carries a positive weight: absolute
        weights plus one, identity activations and average pooling. Its input gradient is non-zero exactly on
        the computation graph of the probed output voxel.
        """
        network = copy.deepcopy(self)
        for layer in network.walk():
            layer._cache = None
            if hasattr(layer, 'linear'):
                layer.linear = True
        for _, array in network.named_parameters():
            array[...] = np.abs(array) + 1.0
        return network


class Conv3d(Layer):

    def __init__(self, in_channels, out_channels, kernel=3, padding=None, stride=1):
        super(Conv3d, self).__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.weight = np.zeros((out_channels, in_channels, kernel, kernel, kernel), dtype=DTYPE)
        self.bias = np.zeros(out_channels, dtype=DTYPE)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    @property
    def fan_in(self):
        return self.in_channels * self.kernel ** 3

    def initialize(self, rng):
        std = np.sqrt(2.0 / self.fan_in)
        self.weight[...] = rng.normal_array(self.weight.size).reshape(self.weight.shape) * std
        self.bias[...] = 0.0

    def _own_parameters(self):
        return [('weight', self.weight), ('bias', self.bias)]

    def _own_gradients(self):
        return [('weight', self.grad_weight), ('bias', self.grad_bias)]

    def forward(self, x, mode, commit=True, record=True):
        _check_batch(x, self.in_channels)
        out = np.stack([conv3d(sample, self.weight, self.bias, self.stride, self.padding) for sample in x])
        if record:
            self._cache = x
        return out

    def backward(self, upstream):
        x = self._take_cache()
        grads = []
        for sample, grad in zip(x, upstream):
            grad_input, grad_weight, grad_bias = conv3d_backward(sample, self.weight, grad, self.stride, self.padding)
            self.grad_weight += grad_weight
            self.grad_bias += grad_bias
            grads.append(grad_input)
        return np.stack(grads)

    def footprint(self, lo, hi):
        return lo * self.stride - self.padding, hi * self.stride - self.padding + self.kernel - 1


class ConvTranspose3d(Layer):

    def __init__(self, in_channels, out_channels):
        super(ConvTranspose3d, self).__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.weight = np.zeros((in_channels, out_channels, 2, 2, 2), dtype=DTYPE)
        self.bias = np.zeros(out_channels, dtype=DTYPE)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    @property
    def fan_in(self):
        # every output voxel receives exactly one tap per input channel
        return self.in_channels

    def initialize(self, rng):
        std = np.sqrt(2.0 / self.fan_in)
        self.weight[...] = rng.normal_array(self.weight.size).reshape(self.weight.shape) * std
        self.bias[...] = 0.0

    def _own_parameters(self):
        return [('weight', self.weight), ('bias', self.bias)]

    def _own_gradients(self):
        return [('weight', self.grad_weight), ('bias', self.grad_bias)]

    def forward(self, x, mode, commit=True, record=True):
        _check_batch(x, self.in_channels)
        out = np.stack([conv3d_transposed(sample, self.weight, self.bias) for sample in x])
        if record:
            self._cache = x
        return out

    def backward(self, upstream):
        x = self._take_cache()
        grads = []
        for sample, grad in zip(x, upstream):
            grad_input, grad_weight, grad_bias = conv3d_transposed_backward(sample, self.weight, grad)
            self.grad_weight += grad_weight
            self.grad_bias += grad_bias
            grads.append(grad_input)
        return np.stack(grads)

    def footprint(self, lo, hi):
        return lo // 2, hi // 2


class MaxPool3d(Layer):
    alignment = 2

    def __init__(self, linear=False):
        super(MaxPool3d, self).__init__()
        self.linear = linear

    def forward(self, x, mode, commit=True, record=True):
        _check_batch(x)
        if self.linear:
            out = np.stack([avg_pool3d(sample) for sample in x])
            indices = None
        else:
            pooled = [max_pool3d(sample) for sample in x]
            out = np.stack([p for p, _ in pooled])
            indices = [i for _, i in pooled]
        if record:
            self._cache = (x.shape, indices)
        return out

    def backward(self, upstream):
        shape, indices = self._take_cache()
        if indices is None:
            grad = np.stack([avg_pool3d_backward(g) for g in upstream])
        else:
            grad = np.stack([max_pool3d_backward(g, i) for g, i in zip(upstream, indices)])
        if grad.shape != shape:
            raise ShapeError('Pooling gradient shape {0} does not match the input {1}'.format(grad.shape, shape))
        return grad

    def footprint(self, lo, hi):
        return 2 * lo, 2 * hi + 1


class ReLU(Layer):

    def __init__(self, linear=False):
        super(ReLU, self).__init__()
        self.linear = linear

    def forward(self, x, mode, commit=True, record=True):
        if record:
            self._cache = x
        return x if self.linear else relu_forward(x)

    def backward(self, upstream):
        x = self._take_cache()
        return upstream if self.linear else relu_backward(x, upstream)


class Sigmoid(Layer):

    def __init__(self, linear=False):
        super(Sigmoid, self).__init__()
        self.linear = linear

    def forward(self, x, mode, commit=True, record=True):
        y = x if self.linear else sigmoid(x)
        if record:
            self._cache = y
        return y

    def backward(self, upstream):
        y = self._take_cache()
        return upstream if self.linear else upstream * y * (1.0 - y)


class Norm3d(Layer):
    """
    Normalization layer holding a :class:`NormState`. ``r_limit`` and ``d_limit`` are the configured
    renormalization bounds; the bounds in effect live in ``state`` and follow the training schedule.
    """

    def __init__(self, channels, kind=NormKind.BATCH_NORM, momentum=0.01, eps=1e-5, r_max=3.0, d_max=5.0):
        super(Norm3d, self).__init__()
        self.kind = kind
        self.in_channels = channels
        self.r_limit = r_max
        self.d_limit = d_max
        self.state = NormState.fresh(channels, momentum=momentum, eps=eps, r_max=r_max, d_max=d_max)
        self.grad_gamma = np.zeros(channels, dtype=DTYPE)
        self.grad_beta = np.zeros(channels, dtype=DTYPE)
        self.frozen_factors = None
        self.last_factors = None

    def _own_parameters(self):
        if self.kind is NormKind.IDENTITY:
            return []
        return [('gamma', self.state.gamma), ('beta', self.state.beta)]

    def _own_gradients(self):
        if self.kind is NormKind.IDENTITY:
            return []
        return [('gamma', self.grad_gamma), ('beta', self.grad_beta)]

    def _own_buffers(self):
        if not self.kind.tracks_running_stats:
            return []
        return [('running_mu', self.state.running_mu), ('running_var', self.state.running_var)]

    def forward(self, x, mode, commit=True, record=True):
        y, state, cache = norm_forward(x, self.state, self.kind, mode, factors=self.frozen_factors)
        if commit:
            self.state = state
        if record:
            self._cache = cache
            self.last_factors = (cache.r, cache.d) if cache.r is not None else None
        return y

    def backward(self, upstream):
        grads = norm_backward(self._take_cache(), upstream)
        if grads.gamma is not None:
            self.grad_gamma += grads.gamma
            self.grad_beta += grads.beta
        return grads.input

    def tile_statistics(self, mode):
        return self.kind.tile_statistics(mode)

    def set_renorm_progress(self, progress):
        progress = min(max(progress, 0.0), 1.0)
        self.state = replace(self.state, r_max=1.0 + progress * (self.r_limit - 1.0), d_max=progress * self.d_limit)


class Sequential(Layer):

    def __init__(self, *layers, names=None):
        super(Sequential, self).__init__()
        names = names or [str(index) for index in range(len(layers))]
        if len(names) != len(layers):
            raise ConfigError('Got {0} names for {1} layers'.format(len(names), len(layers)))
        self.layers = list(zip(names, layers))

    def children(self):
        return self.layers

    @property
    def in_channels(self):
        for _, layer in self.layers:
            if layer.in_channels is not None:
                return layer.in_channels
        return None

    @property
    def alignment(self):
        alignment = 1
        for _, layer in self.layers:
            alignment *= layer.alignment
        return alignment

    def forward(self, x, mode, commit=True, record=True):
        for _, layer in self.layers:
            x = layer.forward(x, mode, commit=commit, record=record)
        return x

    def backward(self, upstream):
        for _, layer in reversed(self.layers):
            upstream = layer.backward(upstream)
        return upstream

    def footprint(self, lo, hi):
        for _, layer in reversed(self.layers):
            lo, hi = layer.footprint(lo, hi)
        return lo, hi


class ConvBlock(Sequential):
    """
    conv -> norm -> relu
    """

    def __init__(self, in_channels, out_channels, kind=NormKind.BATCH_NORM, kernel=3, **norm_options):
        super(ConvBlock, self).__init__(Conv3d(in_channels, out_channels, kernel=kernel),
                                        Norm3d(out_channels, kind=kind, **norm_options), ReLU(),
                                        names=['conv', 'norm', 'relu'])
