import numpy as np
import pytest
from tileseam.core.layers import Mode, NormKind
from tileseam.core.unet import ModelConfig, build
from tileseam.core.tensor import SplitMix64
from tileseam.core.synthdata import SynthSpec


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run the desk-scale training tests')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip_slow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)


def random_tensor(shape, seed=0, scale=1.0, shift=0.0):
    return SplitMix64(seed).normal_array(int(np.prod(shape))).reshape(shape) * scale + shift


def central_difference(loss, array, h=1e-6):
    """
    Entrywise central differences of ``loss()`` with respect to ``array``, which is perturbed in place
    """
    grad = np.zeros_like(array)
    for index in np.ndindex(array.shape):
        original = array[index]
        array[index] = original + h
        plus = loss()
        array[index] = original - h
        minus = loss()
        array[index] = original
        grad[index] = (plus - minus) / (2.0 * h)
    return grad


def directional_difference(loss, array, direction, h=1e-6):
    original = array.copy()
    array[...] = original + h * direction
    plus = loss()
    array[...] = original - h * direction
    minus = loss()
    array[...] = original
    return (plus - minus) / (2.0 * h)


def relative_error(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if scale == 0.0 else float(np.linalg.norm(a - b) / scale)


class FiniteDifferences(object):
    central = staticmethod(central_difference)
    directional = staticmethod(directional_difference)
    relative_error = staticmethod(relative_error)
    random = staticmethod(random_tensor)


@pytest.fixture
def fd():
    return FiniteDifferences()


@pytest.fixture
def rng():
    return SplitMix64(1234)


def micro_config(kind=NormKind.BATCH_NORM, **overrides):
    values = dict(features_per_level=(2, 4), levels=1, blocks_per_level=1, norm_kind=kind, seed=3)
    values.update(overrides)
    return ModelConfig(**values)


@pytest.fixture
def micro_model():
    """
    One level, one block per stage, receptive field radius 5
    """
    def factory(kind=NormKind.BATCH_NORM, **overrides):
        return build(micro_config(kind, **overrides))
    return factory


@pytest.fixture
def small_model():
    """
    Two levels, two blocks per stage, features (2, 3, 4): the default topology at toy width
    """
    def factory(kind=NormKind.BATCH_NORM, **overrides):
        values = dict(features_per_level=(2, 3, 4), norm_kind=kind, seed=5)
        values.update(overrides)
        return build(ModelConfig(**values))
    return factory


@pytest.fixture
def tiny_spec():
    return SynthSpec(shape=(12, 12, 28), blob_count=(3, 4), blob_radius=(1.5, 2.5), seed=11)


@pytest.fixture
def heterogeneous_volume():
    """
    Smooth gradient along the last axis plus noise: tile statistics depend on the tile position
    """
    shape = (1, 12, 12, 28)
    ramp = np.linspace(0.0, 3.0, shape[-1])[None, None, None, :]
    return random_tensor(shape, seed=21, scale=0.3) + ramp + np.zeros(shape)


MODES = (Mode.TRAIN, Mode.EVAL)
