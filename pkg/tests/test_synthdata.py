import json
import os
import numpy as np
import pytest
from numpy.testing import assert_array_equal
from tileseam.core.errors import ConfigError, SynthesisError
from tileseam.core.synthdata import SynthSpec, CLASS_NAMES, SPEC_FILE, generate, rasterize, boundary_shell, \
    one_hot_labels, save_sample, load_sample


def test_one_hot_labels(tiny_spec):
    image, labels = generate(tiny_spec)
    assert image.shape == (1,) + tiny_spec.shape
    assert labels.shape == (len(CLASS_NAMES),) + tiny_spec.shape
    assert_array_equal(labels.sum(axis=0), 1.0)
    assert labels[2].sum() > 0


def test_deterministic(tiny_spec):
    first, second = generate(tiny_spec), generate(tiny_spec)
    assert_array_equal(first[0], second[0])
    assert_array_equal(first[1], second[1])


def test_seed_matters(tiny_spec):
    other = SynthSpec(**dict(tiny_spec.to_dict(), seed=12))
    assert not np.array_equal(generate(tiny_spec)[0], generate(other)[0])


def test_blobs_stay_in_the_dense_part(tiny_spec):
    _, labels = generate(tiny_spec)
    assert tiny_spec.dense_extent == 14
    assert_array_equal(labels[1:, ..., tiny_spec.dense_extent:], 0.0)


def test_dense_part_is_brighter(tiny_spec):
    image, _ = generate(tiny_spec)
    half = tiny_spec.shape[-1] // 2
    assert image[..., :half].mean() - image[..., half:].mean() > tiny_spec.noise_sigma


def test_no_blobs():
    spec = SynthSpec(shape=(12, 12, 28), blob_count=(0, 0), bright_line_prob=0.0, seed=1)
    _, labels = generate(spec)
    assert_array_equal(labels[0], 1.0)


class TestGeometry:

    def test_rasterize_unit_ball(self):
        instances = rasterize((5, 5, 5), [(2.0, 2.0, 2.0)], [1.0])
        assert (instances == 1).sum() == 7
        assert instances[2, 2, 2] == 1
        assert instances[1, 1, 2] == 0

    def test_rasterize_labels_blobs_in_order(self):
        instances = rasterize((8, 8, 8), [(2.0, 2.0, 2.0), (5.0, 5.0, 5.0)], [1.0, 1.0])
        assert instances[2, 2, 2] == 1
        assert instances[5, 5, 5] == 2

    def test_shell_of_a_cube(self):
        instances = np.zeros((5, 5, 5), dtype=np.int32)
        instances[1:4, 1:4, 1:4] = 1
        shell = boundary_shell(instances)
        assert shell.sum() == 26
        assert not shell[2, 2, 2]

    def test_volume_border_is_not_an_edge(self):
        assert not boundary_shell(np.ones((4, 4, 4), dtype=np.int32)).any()

    def test_touching_instances(self):
        instances = np.ones((2, 2, 2), dtype=np.int32)
        instances[..., 1:] = 2
        assert boundary_shell(instances).all()

    def test_one_hot_classes(self):
        instances = np.zeros((5, 5, 5), dtype=np.int32)
        instances[1:4, 1:4, 1:4] = 1
        labels = one_hot_labels(instances)
        assert labels[0].sum() == 125 - 27
        assert labels[1].sum() == 1
        assert labels[2].sum() == 26


class TestFailures:

    @pytest.mark.parametrize('overrides', [dict(shape=(12, 12, 30)), dict(blob_radius=(6.0, 7.0)),
                                           dict(blob_count=(4, 2)), dict(dense_fraction=0.0),
                                           dict(shell_thickness=0)])
    def test_invalid_spec(self, tiny_spec, overrides):
        with pytest.raises(ConfigError):
            generate(SynthSpec(**dict(tiny_spec.to_dict(), **overrides)))

    def test_overcrowded(self, tiny_spec):
        with pytest.raises(SynthesisError):
            generate(SynthSpec(**dict(tiny_spec.to_dict(), blob_count=(60, 60), max_attempts=5)))

    def test_noise_drowns_the_contrast(self):
        with pytest.raises(SynthesisError):
            generate(SynthSpec(shape=(12, 12, 28), blob_count=(0, 0), noise_sigma=10.0, seed=2))

    def test_unknown_keys(self):
        with pytest.raises(ConfigError):
            SynthSpec.from_dict({'blobs': 3})


class TestStorage:

    def test_roundtrip(self, tiny_spec, tmp_path):
        image, labels = generate(tiny_spec)
        directory = save_sample(str(tmp_path / 'sample'), image, labels, tiny_spec)
        loaded_image, loaded_labels = load_sample(directory)
        assert_array_equal(loaded_image, image)
        assert_array_equal(loaded_labels, labels)
        with open(os.path.join(directory, SPEC_FILE)) as fp:
            assert SynthSpec.from_dict(json.load(fp)) == tiny_spec

    def test_unlabelled(self, tiny_spec, tmp_path):
        image, labels = generate(tiny_spec)
        directory = save_sample(str(tmp_path), image, labels, tiny_spec)
        os.remove(os.path.join(directory, 'labels.npy'))
        assert load_sample(directory)[1] is None

    def test_missing_image(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_sample(str(tmp_path))
