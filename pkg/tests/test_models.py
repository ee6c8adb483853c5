import numpy as np
import pytest

from forestseg.errors import ConfigurationError, DataError
from forestseg.nn.autodiff import Tensor, no_grad
from forestseg.nn.models import (
    ARCHITECTURES,
    ModelConfig,
    build_model,
    parameter_checksum,
    predict_proba,
)
from forestseg.nn.modules import AttentionGate

from .gradcheck import check_gradients

ALL_ARCHS = sorted(ARCHITECTURES)


def tiny_config(arch, **kw):
    defaults = dict(arch=arch, in_channels=2, base_width=4, depth=2, seed=0)
    defaults.update(kw)
    return ModelConfig(**defaults)


class TestConfigValidation:
    def test_unknown_arch(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(arch="resnet101")

    def test_channel_arity_must_match_a_scenario(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(in_channels=3)

    def test_width_and_depth_bounds(self):
        with pytest.raises(ConfigurationError):
            ModelConfig(base_width=2)
        with pytest.raises(ConfigurationError):
            ModelConfig(depth=1)

    def test_round_trip_dict(self):
        cfg = tiny_config("unet", blocks_per_stage=(2, 2))
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestShapeRange:
    @pytest.mark.parametrize("arch", ALL_ARCHS)
    @pytest.mark.parametrize("channels", [2, 4, 6, 7])
    def test_output_shape_and_open_unit_range(self, arch, channels, rng):
        model = build_model(tiny_config(arch, in_channels=channels))
        x = rng.standard_normal((2, channels, 32, 32)).astype(np.float32)
        out = predict_proba(model, x)
        assert out.shape == (2, 1, 32, 32)
        assert 0.0 < out.min() and out.max() < 1.0

    @pytest.mark.parametrize("arch", ALL_ARCHS)
    def test_indivisible_dims_rejected_with_requirement(self, arch, rng):
        model = build_model(tiny_config(arch, depth=3))
        x = rng.standard_normal((1, 2, 20, 20)).astype(np.float32)
        with pytest.raises(DataError, match="divisible by 2\\*\\*depth = 8"):
            predict_proba(model, x)

    def test_wrong_channel_count_rejected(self, rng):
        model = build_model(tiny_config("unet"))
        with pytest.raises(DataError, match="expected 2 input channels"):
            predict_proba(model, rng.standard_normal((1, 4, 16, 16)))


class TestDeterminism:
    @pytest.mark.parametrize("arch", ALL_ARCHS)
    def test_same_seed_same_checksum(self, arch):
        a = build_model(tiny_config(arch, seed=7))
        b = build_model(tiny_config(arch, seed=7))
        c = build_model(tiny_config(arch, seed=8))
        assert parameter_checksum(a) == parameter_checksum(b)
        assert parameter_checksum(a) != parameter_checksum(c)

    def test_forward_reproducible(self, rng):
        model = build_model(tiny_config("unet"))
        x = rng.standard_normal((1, 2, 16, 16)).astype(np.float32)
        np.testing.assert_array_equal(predict_proba(model, x), predict_proba(model, x))


class TestBatchIndependence:
    @pytest.mark.parametrize("arch", ALL_ARCHS)
    def test_duplicated_sample_gives_identical_rows(self, arch, rng):
        model = build_model(tiny_config(arch))
        x1 = rng.standard_normal((1, 2, 16, 16)).astype(np.float32)
        x2 = np.concatenate([x1, x1])
        out = predict_proba(model, x2)
        np.testing.assert_array_equal(out[0], out[1])

    def test_permuting_batch_permutes_outputs(self, rng):
        model = build_model(tiny_config("unet"))
        x = rng.standard_normal((4, 2, 16, 16)).astype(np.float32)
        perm = [2, 0, 3, 1]
        out = predict_proba(model, x)
        out_perm = predict_proba(model, x[perm])
        np.testing.assert_allclose(out_perm, out[perm], atol=1e-7)


class TestParameterScaling:
    @pytest.mark.parametrize("arch", ALL_ARCHS)
    def test_doubling_width_at_least_triples_params(self, arch):
        small = build_model(tiny_config(arch, base_width=8, depth=3))
        big = build_model(tiny_config(arch, base_width=16, depth=3))
        assert big.parameter_count() >= 3 * small.parameter_count()

    def test_full_scale_presets_exist(self):
        from forestseg.nn.models import RESNET50_BLOCKS, VGG16_CONVS

        segnet = build_model(
            ModelConfig(
                arch="segnet_resnet50",
                in_channels=2,
                base_width=8,
                depth=4,
                blocks_per_stage=RESNET50_BLOCKS,
            )
        )
        fcn = build_model(
            ModelConfig(
                arch="fcn32_vgg16",
                in_channels=2,
                base_width=8,
                depth=5,
                blocks_per_stage=VGG16_CONVS,
            )
        )
        assert segnet.parameter_count() > 0
        assert fcn.parameter_count() > 0


class TestAttentionGate:
    def _gate(self, rng_seed=0, skip_c=6, gate_c=6):
        rng = np.random.default_rng(rng_seed)
        return AttentionGate(skip_c, gate_c, rng, dtype=np.float64)

    def test_zeroed_psi_halves_skip(self, rng):
        gate = self._gate()
        gate.psi.w.data[:] = 0.0
        gate.psi.b.data[:] = 0.0
        skip = Tensor(rng.standard_normal((2, 6, 8, 8)))
        g = Tensor(rng.standard_normal((2, 6, 8, 8)))
        with no_grad():
            out = gate(skip, g)
        np.testing.assert_allclose(out.data, skip.data * 0.5, atol=1e-12)

    def test_alpha_in_open_unit_interval(self, rng):
        gate = self._gate(1)
        skip = Tensor(rng.standard_normal((1, 6, 8, 8)) * 5)
        g = Tensor(rng.standard_normal((1, 6, 8, 8)) * 5)
        with no_grad():
            alpha = gate.attention(skip, g)
        assert 0.0 < alpha.data.min() and alpha.data.max() < 1.0
        assert alpha.data.shape == (1, 1, 8, 8)

    def test_zero_skip_gives_zero_output(self, rng):
        gate = self._gate(2)
        skip = Tensor(np.zeros((1, 6, 8, 8)))
        g = Tensor(rng.standard_normal((1, 6, 8, 8)))
        with no_grad():
            out = gate(skip, g)
        assert (out.data == 0).all()

    def test_spatial_mismatch_rejected(self, rng):
        gate = self._gate(3)
        skip = Tensor(rng.standard_normal((1, 6, 8, 8)))
        g = Tensor(rng.standard_normal((1, 6, 4, 4)))
        with pytest.raises(ValueError, match="aligned"):
            gate(skip, g)


class TestGradients:
    @pytest.mark.parametrize("arch", ["unet", "segnet_resnet50"])
    def test_analytic_matches_central_differences(self, arch):
        checked, skipped, worst = check_gradients(arch, n_params=12)
        assert checked == 12


class TestUpsampleHead:
    def test_fcn32_outputs_are_blockwise_constant(self, rng):
        model = build_model(tiny_config("fcn32_vgg16", depth=3))
        x = rng.standard_normal((1, 2, 32, 32)).astype(np.float32)
        out = predict_proba(model, x)[0, 0]
        blocks = out.reshape(4, 8, 4, 8)
        assert (blocks == blocks[:, :1, :, :1]).all()
