import numpy as np
import pytest
from numpy.testing import assert_array_equal, assert_allclose
from tileseam.core.errors import ConfigError, ShapeError
from tileseam.core.layers import Mode, NormKind
from tileseam.core.unet import ModelConfig, UNet, build, forward, backward, parameter_count
from conftest import random_tensor, directional_difference, micro_config


class TestModelConfig:

    def test_needs_a_level(self):
        with pytest.raises(ConfigError):
            build(ModelConfig(levels=0))

    def test_feature_list_length(self):
        with pytest.raises(ConfigError):
            ModelConfig(features_per_level=(8, 16)).validate()

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(conv_kernel=4).validate()

    def test_dict_roundtrip(self):
        config = ModelConfig(features_per_level=(4, 8, 16), norm_kind=NormKind.BATCH_RENORM, seed=9)
        values = config.to_dict()
        assert values['norm_kind'] == 'batchrenorm'
        assert ModelConfig.from_dict(values) == config

    def test_unknown_keys(self):
        with pytest.raises(ConfigError):
            ModelConfig.from_dict({'depth': 3})


class TestBuild:

    @pytest.mark.parametrize('kind', [NormKind.BATCH_NORM, NormKind.IDENTITY])
    def test_parameter_count_closed_form(self, kind):
        config = ModelConfig(norm_kind=kind)
        assert build(config).parameter_count() == parameter_count(config)

    def test_same_seed_same_parameters(self):
        config = micro_config(seed=4)
        assert_array_equal(build(config).flat_parameters(), build(config).flat_parameters())

    def test_different_seeds_differ(self):
        a = build(micro_config(seed=4)).flat_parameters()
        b = build(micro_config(seed=5)).flat_parameters()
        assert not np.array_equal(a, b)

    def test_layer_names(self):
        model = build(micro_config())
        assert [name for name, _ in model.children()] == ['encoder0', 'pool0', 'bottleneck', 'upsample0', 'decoder0',
                                                          'head', 'activation']
        names = [name for name, _ in model.named_parameters()]
        assert names[0] == 'encoder0.block0.conv.weight'
        assert 'decoder0.block0.norm.gamma' in names
        assert names[-1] == 'head.bias'

    def test_decoder_sees_skip_and_upsampled_features(self):
        model = build(micro_config())
        assert dict(model.decoders[0].children())['block0'].in_channels == 4


class TestForward:

    def test_output_shape_and_range(self, small_model):
        model = small_model()
        x = random_tensor((1, 1, 8, 8, 12), seed=1)
        y = forward(model, x, Mode.EVAL)
        assert y.shape == (1, 3, 8, 8, 12)
        assert np.all(y > 0.0) and np.all(y < 1.0)

    def test_extent_must_match_pooling_grid(self, small_model):
        with pytest.raises(ShapeError):
            small_model().forward(np.zeros((1, 1, 8, 8, 6)), Mode.EVAL)

    def test_channel_count(self, micro_model):
        with pytest.raises(ShapeError):
            micro_model().forward(np.zeros((1, 2, 4, 4, 4)), Mode.EVAL)

    def test_identity_norm_is_translation_equivariant(self, micro_model):
        model = micro_model(NormKind.IDENTITY)
        x = random_tensor((1, 1, 6, 6, 32), seed=2)
        full = model.predict(x)
        shifted = model.predict(np.ascontiguousarray(x[..., 4:28]))
        assert_array_equal(shifted[..., 5:19], full[..., 9:23])

    def test_instance_norm_depends_on_tile_content(self, micro_model, heterogeneous_volume):
        model = micro_model(NormKind.INSTANCE_NORM)
        x = heterogeneous_volume[None]
        full = model.predict(x)
        part = model.predict(np.ascontiguousarray(x[..., :12]))
        assert np.abs(part[..., 5:7] - full[..., 5:7]).max() > 0.0

    def test_eval_forward_does_not_touch_running_statistics(self, micro_model):
        model = micro_model()
        before = [array.copy() for _, array in model.named_buffers()]
        model.forward(random_tensor((1, 1, 4, 4, 4), seed=3), Mode.EVAL)
        for (name, array), copy in zip(model.named_buffers(), before):
            assert_array_equal(array, copy)

    def test_train_forward_updates_running_statistics(self, micro_model):
        model = micro_model()
        model.forward(random_tensor((1, 1, 4, 4, 4), seed=3, shift=2.0), Mode.TRAIN)
        assert all(layer.state.step_count == 1 for _, layer in model.norm_layers())

    def test_linear_head(self):
        model = build(micro_config(final_activation='linear'))
        y = model.predict(random_tensor((1, 1, 4, 4, 4), seed=4, scale=50.0))
        assert isinstance(model, UNet)
        assert y.min() < 0.0 or y.max() > 1.0


class TestBackward:

    def test_zero_upstream(self, micro_model):
        model = micro_model()
        x = random_tensor((1, 1, 4, 4, 4), seed=5)
        y = forward(model, x, Mode.TRAIN)
        assert_array_equal(backward(model, np.zeros_like(y)), 0.0)

    @pytest.mark.parametrize('kind', [NormKind.BATCH_NORM, NormKind.INSTANCE_NORM, NormKind.IDENTITY,
                                      NormKind.BATCH_RENORM])
    def test_gradient_check(self, micro_model, kind):
        model = micro_model(kind)
        model.set_renorm_progress(0.0)
        x = random_tensor((1, 1, 8, 8, 8), seed=6)
        weights = random_tensor((1, 3, 8, 8, 8), seed=7)

        def loss():
            return float((model.forward(x, Mode.TRAIN, commit=False, record=False) * weights).sum())

        model.zero_grad()
        model.forward(x, Mode.TRAIN, commit=False)
        grad_input = model.backward(weights)
        grads = model.flat_gradients()

        params = model.flat_parameters()
        direction = random_tensor(params.shape, seed=8)

        def parameter_loss():
            model.set_flat_parameters(params + delta[0])
            return loss()

        h = 1e-6
        delta = [h * direction]
        plus = parameter_loss()
        delta[0] = -h * direction
        minus = parameter_loss()
        model.set_flat_parameters(params)
        numeric = (plus - minus) / (2.0 * h)
        analytic = float(grads @ direction)
        assert abs(numeric - analytic) / (abs(numeric) + abs(analytic)) < 1e-5

        input_direction = random_tensor(x.shape, seed=9)
        numeric = directional_difference(loss, x, input_direction)
        analytic = float((grad_input * input_direction).sum())
        assert abs(numeric - analytic) / (abs(numeric) + abs(analytic)) < 1e-5

    def test_accumulation_is_a_sum(self, micro_model):
        model = micro_model(NormKind.INSTANCE_NORM)
        x1, x2 = random_tensor((1, 1, 4, 4, 4), seed=10), random_tensor((1, 1, 4, 4, 4), seed=11)
        w1, w2 = random_tensor((1, 3, 4, 4, 4), seed=12), random_tensor((1, 3, 4, 4, 4), seed=13)

        def single(x, w):
            model.zero_grad()
            model.forward(x, Mode.TRAIN, commit=False)
            return backward(model, w).copy()

        separate = single(x1, w1) + single(x2, w2)
        model.zero_grad()
        model.forward(x1, Mode.TRAIN, commit=False)
        model.backward(w1)
        model.forward(x2, Mode.TRAIN, commit=False)
        model.backward(w2)
        assert_allclose(model.flat_gradients(), separate, rtol=1e-12, atol=1e-15)
