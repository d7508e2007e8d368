"""
Dense float64 kernels (convolution, pooling, order statistics) and the SplitMix64 generator.

Every spatial tensor handled here is a C-contiguous ``numpy.ndarray`` laid out as ``[C, D, H, W]``. The
convolution kernels accumulate with a fixed loop order (input channel, then kz, ky, kx) using elementwise
products only, so an output voxel is bit-identical no matter where its input window sits inside a larger
tensor.
"""
import math
import numpy as np
from .errors import ShapeError, NonFiniteError, ConfigError

DTYPE = np.float64

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_MULTIPLIER_1 = 0xBF58476D1CE4E5B9
MIX_MULTIPLIER_2 = 0x94D049BB133111EB
STREAM_CONSTANT = 0xD1B54A32D192ED03
UNIT_SCALE = 2.0 ** -53


def as_tensor(values):
    return np.ascontiguousarray(values, dtype=DTYPE)


def assert_finite(tensor, what='tensor'):
    if not np.all(np.isfinite(tensor)):
        raise NonFiniteError('{0} contains non-finite values'.format(what))
    return tensor


def output_extent(extent, kernel, stride, padding):
    span = extent + 2 * padding - kernel
    if span < 0 or span % stride:
        raise ShapeError('Extent {0} with kernel {1}, stride {2} and padding {3} gives a non-integral output extent'
                         .format(extent, kernel, stride, padding))
    return span // stride + 1


def _window(offset, out_shape, stride):
    return tuple(slice(o, o + stride * (n - 1) + 1, stride) for o, n in zip(offset, out_shape))


def _pad(inputs, padding):
    if not padding:
        return inputs
    return np.pad(inputs, ((0, 0),) + ((padding, padding),) * 3)


def _unpad(inputs, padding):
    if not padding:
        return inputs
    return np.ascontiguousarray(inputs[(slice(None),) + (slice(padding, -padding),) * 3])


def _check_conv(inputs, weights, bias, stride, padding):
    if inputs.ndim != 4:
        raise ShapeError('conv3d expects a [C, D, H, W] input, got shape {0}'.format(inputs.shape))
    if weights.ndim != 5:
        raise ShapeError('conv3d expects [C_out, C_in, k, k, k] weights, got shape {0}'.format(weights.shape))
    c_out, c_in, kd, kh, kw = weights.shape
    if c_in != inputs.shape[0]:
        raise ShapeError('Weights expect {0} input channels, input has {1}'.format(c_in, inputs.shape[0]))
    if not kd == kh == kw:
        raise ShapeError('Only cubic kernels are supported, got {0}'.format(weights.shape[2:]))
    if not (kd % 2 == 1 or (kd == 2 and stride == 2)):
        raise ShapeError('Kernel size must be odd, or 2 together with stride 2')
    if not 0 <= padding < kd:
        raise ShapeError('Padding {0} must be smaller than the kernel size {1}'.format(padding, kd))
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError('Bias shape {0} does not match {1} output channels'.format(bias.shape, c_out))
    return kd, tuple(output_extent(e, kd, stride, padding) for e in inputs.shape[1:])


def conv3d(inputs, weights, bias, stride=1, padding=0):
    """
    Direct 3D cross-correlation of a single sample.

    Args:
        inputs (np.ndarray): input of shape ``[C_in, D, H, W]``
        weights (np.ndarray): kernel of shape ``[C_out, C_in, k, k, k]``
        bias (np.ndarray): bias of shape ``[C_out]``
        stride (int): stride along every axis
        padding (int): zero padding added on both sides of every axis

    Returns:
        np.ndarray: the output of shape ``[C_out, D', H', W']``
    """
    kernel, out_shape = _check_conv(inputs, weights, bias, stride, padding)
    padded = _pad(inputs, padding)
    out = np.zeros((weights.shape[0],) + out_shape, dtype=DTYPE)
    for ci in range(inputs.shape[0]):
        channel = padded[ci]
        for offset in np.ndindex(kernel, kernel, kernel):
            tap = weights[(slice(None), ci) + offset]
            out += tap[:, None, None, None] * channel[_window(offset, out_shape, stride)]
    out += bias[:, None, None, None]
    return assert_finite(out, 'conv3d output')


def conv3d_backward(inputs, weights, upstream, stride=1, padding=0):
    """
    Gradients of :func:`conv3d` with respect to the input, the weights and the bias

    Returns:
        tuple: ``(grad_input, grad_weights, grad_bias)``
    """
    kernel, out_shape = _check_conv(inputs, weights, None, stride, padding)
    if upstream.shape != (weights.shape[0],) + out_shape:
        raise ShapeError('Upstream gradient shape {0} does not match the conv3d output {1}'
                         .format(upstream.shape, (weights.shape[0],) + out_shape))
    padded = _pad(inputs, padding)
    grad_padded = np.zeros_like(padded)
    grad_weights = np.zeros_like(weights)
    everything = (slice(None), slice(None))
    for offset in np.ndindex(kernel, kernel, kernel):
        window = (slice(None),) + _window(offset, out_shape, stride)
        grad_padded[window] += np.tensordot(weights[everything + offset], upstream, axes=(0, 0))
        grad_weights[everything + offset] = np.tensordot(upstream, padded[window], axes=([1, 2, 3], [1, 2, 3]))
    grad_bias = upstream.sum(axis=(1, 2, 3))
    return _unpad(grad_padded, padding), grad_weights, grad_bias


def _check_transposed(inputs, weights, bias):
    if inputs.ndim != 4:
        raise ShapeError('conv3d_transposed expects a [C, D, H, W] input, got shape {0}'.format(inputs.shape))
    if weights.ndim != 5 or weights.shape[2:] != (2, 2, 2):
        raise ShapeError('conv3d_transposed expects [C_in, C_out, 2, 2, 2] weights, got {0}'.format(weights.shape))
    if weights.shape[0] != inputs.shape[0]:
        raise ShapeError('Weights expect {0} input channels, input has {1}'.format(weights.shape[0], inputs.shape[0]))
    if bias is not None and bias.shape != (weights.shape[1],):
        raise ShapeError('Bias shape {0} does not match {1} output channels'.format(bias.shape, weights.shape[1]))


def _phase(offset):
    return tuple(slice(o, None, 2) for o in offset)


def conv3d_transposed(inputs, weights, bias):
    """
    Transposed convolution with kernel 2 and stride 2, doubling every spatial extent
    """
    _check_transposed(inputs, weights, bias)
    c_in, c_out = weights.shape[:2]
    out = np.zeros((c_out,) + tuple(2 * e for e in inputs.shape[1:]), dtype=DTYPE)
    for ci in range(c_in):
        for offset in np.ndindex(2, 2, 2):
            tap = weights[(ci, slice(None)) + offset]
            out[(slice(None),) + _phase(offset)] += tap[:, None, None, None] * inputs[ci]
    out += bias[:, None, None, None]
    return assert_finite(out, 'conv3d_transposed output')


def conv3d_transposed_backward(inputs, weights, upstream):
    _check_transposed(inputs, weights, None)
    expected = (weights.shape[1],) + tuple(2 * e for e in inputs.shape[1:])
    if upstream.shape != expected:
        raise ShapeError('Upstream gradient shape {0} does not match {1}'.format(upstream.shape, expected))
    grad_input = np.zeros_like(inputs)
    grad_weights = np.zeros_like(weights)
    everything = (slice(None), slice(None))
    for offset in np.ndindex(2, 2, 2):
        phase = upstream[(slice(None),) + _phase(offset)]
        grad_input += np.tensordot(weights[everything + offset], phase, axes=(1, 0))
        grad_weights[everything + offset] = np.tensordot(inputs, phase, axes=([1, 2, 3], [1, 2, 3]))
    return grad_input, grad_weights, upstream.sum(axis=(1, 2, 3))


def _blocks(inputs):
    if inputs.ndim != 4:
        raise ShapeError('Pooling expects a [C, D, H, W] input, got shape {0}'.format(inputs.shape))
    c, d, h, w = inputs.shape
    if d % 2 or h % 2 or w % 2:
        raise ShapeError('Pooling needs even spatial extents, got {0}'.format(inputs.shape[1:]))
    return inputs.reshape(c, d // 2, 2, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 5, 2, 4, 6)\
        .reshape(c, d // 2, h // 2, w // 2, 8)


def _unblocks(blocks):
    c, d, h, w, _ = blocks.shape
    return np.ascontiguousarray(
        blocks.reshape(c, d, h, w, 2, 2, 2).transpose(0, 1, 4, 2, 5, 3, 6).reshape(c, 2 * d, 2 * h, 2 * w))


def max_pool3d(inputs):
    """
    2x2x2 max pooling with stride 2.

    Returns:
        tuple: the pooled tensor and the flat position (0..7) of the maximum inside every window. Ties go
        to the first position in row-major window order.
    """
    blocks = _blocks(inputs)
    argmax = blocks.argmax(axis=-1)
    return np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0], argmax


def max_pool3d_backward(upstream, argmax):
    if upstream.shape != argmax.shape:
        raise ShapeError('Upstream gradient shape {0} does not match the pooled shape {1}'
                         .format(upstream.shape, argmax.shape))
    blocks = np.zeros(upstream.shape + (8,), dtype=DTYPE)
    np.put_along_axis(blocks, argmax[..., None], upstream[..., None], axis=-1)
    return _unblocks(blocks)


def avg_pool3d(inputs):
    return _blocks(inputs).mean(axis=-1)


def avg_pool3d_backward(upstream):
    return upstream.repeat(2, axis=1).repeat(2, axis=2).repeat(2, axis=3) / 8.0


def quantile(values, q):
    """
    Order statistic with linear interpolation at rank ``q * (n - 1)``
    """
    if not 0.0 <= q <= 1.0:
        raise ConfigError('Quantile level must lie in [0, 1], got {0}'.format(q))
    values = np.asarray(values, dtype=DTYPE).ravel()
    if values.size == 0:
        raise ShapeError('Cannot compute the quantile of an empty input')
    return float(np.quantile(values, q))


def sigmoid(x):
    with np.errstate(over='ignore'):
        return 1.0 / (1.0 + np.exp(-x))


def _mix(z):
    z = ((z ^ (z >> 30)) * MIX_MULTIPLIER_1) & MASK64
    z = ((z ^ (z >> 27)) * MIX_MULTIPLIER_2) & MASK64
    return z ^ (z >> 31)


def _mix_array(z):
    with np.errstate(over='ignore'):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX_MULTIPLIER_1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX_MULTIPLIER_2)
    return z ^ (z >> np.uint64(31))


def prng_next_u64(state):
    state = (state + GOLDEN_GAMMA) & MASK64
    return state, _mix(state)


def prng_uniform(state):
    state, value = prng_next_u64(state)
    return state, (value >> 11) * UNIT_SCALE


def prng_normal(state):
    generator = SplitMix64(state)
    value = generator.normal()
    return generator.state, value


class SplitMix64(object):
    """
    SplitMix64 stream. Scalar and array draws consume the same sequence, so ``uniform_array(n)`` equals
    ``n`` calls of ``uniform()``.
    """

    def __init__(self, seed=0):
        self.state = int(seed) & MASK64

    def next_u64(self):
        self.state, value = prng_next_u64(self.state)
        return value

    def uniform(self):
        self.state, value = prng_uniform(self.state)
        return value

    def normal(self):
        return float(self.normal_array(1)[0])

    def u64_array(self, count):
        if count <= 0:
            return np.zeros(0, dtype=np.uint64)
        with np.errstate(over='ignore'):
            steps = np.arange(1, count + 1, dtype=np.uint64) * np.uint64(GOLDEN_GAMMA)
            states = steps + np.uint64(self.state)
        self.state = (self.state + count * GOLDEN_GAMMA) & MASK64
        return _mix_array(states)

    def uniform_array(self, count):
        return (self.u64_array(count) >> np.uint64(11)).astype(DTYPE) * UNIT_SCALE

    def normal_array(self, count):
        """
        Box-Muller transform, two uniforms per normal draw
        """
        pairs = self.uniform_array(2 * count).reshape(count, 2)
        radius = np.sqrt(-2.0 * np.log1p(-pairs[:, 0]))
        return radius * np.cos(2.0 * math.pi * pairs[:, 1])

    def integer(self, low, high):
        """
        Uniform integer in ``[low, high]``
        """
        return low + int(self.uniform() * (high - low + 1))

    def fork(self, stream_id):
        return SplitMix64(self.state ^ ((stream_id * STREAM_CONSTANT) & MASK64))
