import numpy as np
import pytest

from fastbci.errors import DataFormatError, ShapeError
from fastbci.model import (
    ClassifierSpec,
    NormKind,
    build_classifier,
    clone_params,
    forward_logits,
    load_model,
    param_count,
    save_model,
    sidecar_path,
)
from fastbci.nnops import softmax_cross_entropy
from fastbci.optim import sgd_step
from fastbci.params import ParamSet, params_equal
from fastbci.autograd import Tensor

from modelcheck import DOWNSIZED, model_gradcheck

TRACE_EXPECTED = [
    ("temporal_conv", (8, 64, 321)),
    ("depthwise_conv", (16, 1, 321)),
    ("pool1", (16, 1, 80)),
    ("separable_conv", (16, 1, 80)),
    ("pool2", (16, 1, 10)),
    ("flatten", (160,)),
    ("logits", (2,)),
]


@pytest.fixture(scope="module")
def default_model():
    spec = ClassifierSpec()
    return spec, build_classifier(spec, np.random.default_rng(7))


class TestSpec:
    def test_default_flatten_width(self):
        assert ClassifierSpec().flatten_width == 160

    def test_downsized_flatten_width(self):
        assert ClassifierSpec(time_points=160).flatten_width == 80

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            ClassifierSpec(time_points=16)
        with pytest.raises(ValueError):
            ClassifierSpec(dropout_p=1.0)

    def test_roundtrip_dict(self):
        spec = ClassifierSpec(norm=NormKind.batch, channels=8, time_points=33)
        assert ClassifierSpec.from_dict(spec.to_dict()) == spec


class TestForward:
    def test_single_trial_two_logits(self, default_model):
        spec, params = default_model
        out = forward_logits(params, np.zeros((64, 321)))
        assert out.shape == (1, 2)

    def test_shape_trace(self, default_model):
        spec, params = default_model
        trace = []
        forward_logits(params, np.zeros((2, 64, 321)), trace=trace)
        assert trace == TRACE_EXPECTED

    def test_eval_mode_deterministic(self, default_model):
        _, params = default_model
        x = np.random.default_rng(11).normal(size=(3, 64, 321))
        a = forward_logits(params, x).data
        b = forward_logits(params, x).data
        assert np.array_equal(a, b)

    def test_batch_shape(self, default_model):
        _, params = default_model
        out = forward_logits(params, np.zeros((5, 64, 321)))
        assert out.shape == (5, 2)

    def test_shape_mismatch_raises(self, default_model):
        _, params = default_model
        with pytest.raises(ShapeError):
            forward_logits(params, np.zeros((3, 32, 321)))

    def test_zero_input_layer_norm_gives_dense_bias(self):
        spec = ClassifierSpec(channels=8, time_points=33)
        params = build_classifier(spec, np.random.default_rng(3))
        bias = np.array([0.7, -0.4])
        params["dense.bias"].data[:] = bias
        out = forward_logits(params, np.zeros((4, 8, 33)))
        np.testing.assert_allclose(out.data, np.tile(bias, (4, 1)), atol=1e-12)

    def test_layer_norm_sample_independent_of_batch(self):
        spec = ClassifierSpec(channels=8, time_points=33)
        params = build_classifier(spec, np.random.default_rng(5))
        rng = np.random.default_rng(6)
        x = rng.normal(size=(4, 8, 33))
        alone = forward_logits(params, x[:1], training=False).data
        x2 = x.copy()
        x2[1:] *= 50.0  # perturb the rest of the batch
        together = forward_logits(params, x2, training=False).data
        np.testing.assert_allclose(together[0], alone[0], atol=1e-12)

    def test_batch_norm_sample_depends_on_batch_in_training(self):
        spec = ClassifierSpec(channels=8, time_points=33, norm=NormKind.batch,
                              dropout_p=0.0)
        params = build_classifier(spec, np.random.default_rng(5))
        rng = np.random.default_rng(6)
        x = rng.normal(size=(4, 8, 33))
        base = forward_logits(params.clone(), x, training=False).data
        x2 = x.copy()
        x2[1:] *= 50.0
        other = forward_logits(params.clone(), x2, training=True).data
        assert not np.allclose(other[0], base[0], atol=1e-6)


class TestParams:
    def test_param_count_dense_only(self):
        ps = ParamSet()
        ps.add("dense.weight", Tensor(np.zeros((2, 160)), requires_grad=True))
        ps.add("dense.bias", Tensor(np.zeros(2), requires_grad=True))
        assert param_count(ps) == 322

    def test_param_count_temporal_conv(self, default_model):
        _, params = default_model
        assert params["conv1.kernel"].size == 512

    def test_param_count_full_default_model(self, default_model):
        spec, params = default_model
        # layer-by-layer from the architecture table (layer-norm variant)
        expected = (
            8 * 1 * 1 * 64
            + 2 * (8 * 64 * 321)
            + 8 * 2 * 64 * 1
            + 2 * (16 * 1 * 321)
            + 16 * 1 * 1 * 16
            + 16 * 16 * 1 * 1
            + 2 * (16 * 1 * 80)
            + 160 * 2 + 2
        )
        assert expected == 343906
        assert param_count(params) == expected

    def test_clone_isolated_from_original(self, default_model):
        _, params = default_model
        twin = clone_params(params)
        assert params_equal(params, twin)
        twin.zero_grad()
        for _, t in twin.items():
            t.grad[...] = 1.0
        sgd_step(twin, 0.5)
        assert not params_equal(params, twin)

    def test_adapted_clone_then_meta_step_moves_original_once(self):
        spec = ClassifierSpec(channels=8, time_points=33)
        params = build_classifier(spec, np.random.default_rng(8))
        snapshot = clone_params(params)
        rng = np.random.default_rng(9)
        x = rng.normal(size=(4, 8, 33))
        y = rng.integers(0, 2, size=4)

        adapted = clone_params(params)
        for _ in range(10):
            adapted.zero_grad()
            softmax_cross_entropy(forward_logits(adapted, x, training=False), y).backward()
            sgd_step(adapted, 0.05)
        assert params_equal(params, snapshot)  # untouched during adaptation

        adapted.zero_grad()
        softmax_cross_entropy(forward_logits(adapted, x, training=False), y).backward()
        params.zero_grad()
        for name, t in params.items():
            t.grad[...] = adapted[name].grad
        sgd_step(params, 0.05)
        for name, t in params.items():
            np.testing.assert_allclose(
                t.data, snapshot[name].data - 0.05 * adapted[name].grad, atol=1e-15)


class TestGradcheck:
    @pytest.mark.parametrize("norm", [NormKind.layer, NormKind.batch])
    def test_downsized_model_matches_finite_differences(self, norm):
        spec = ClassifierSpec(norm=norm, **DOWNSIZED)
        assert model_gradcheck(spec, seed=0) < 1e-4


class TestModelFile:
    def test_roundtrip_bit_exact(self, tmp_path, default_model):
        _, params = default_model
        params.meta["provenance"] = {"strategy": "transfer", "activity": 2, "seed": 7}
        path = tmp_path / "model.fabm"
        save_model(params, path)
        loaded = load_model(path)
        assert params_equal(params, loaded)
        assert loaded.meta["spec"] == params.meta["spec"]
        assert loaded.meta["provenance"]["activity"] == 2

    def test_batch_norm_buffers_roundtrip(self, tmp_path):
        spec = ClassifierSpec(channels=8, time_points=33, norm=NormKind.batch)
        params = build_classifier(spec, np.random.default_rng(1))
        params.buffers["norm1.running_mean"][:] = 0.25
        path = tmp_path / "m.fabm"
        save_model(params, path)
        loaded = load_model(path)
        assert params_equal(params, loaded)
        out = forward_logits(loaded, np.zeros((2, 8, 33)))
        assert out.shape == (2, 2)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "m.fabm"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        sidecar_path(path).write_text("{}")
        with pytest.raises(DataFormatError):
            load_model(path)

    def test_version_mismatch_rejected(self, tmp_path, default_model):
        _, params = default_model
        path = tmp_path / "m.fabm"
        save_model(params, path)
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(DataFormatError):
            load_model(path)

    def test_missing_sidecar_rejected(self, tmp_path, default_model):
        _, params = default_model
        path = tmp_path / "m.fabm"
        save_model(params, path)
        sidecar_path(path).unlink()
        with pytest.raises(DataFormatError):
            load_model(path)
