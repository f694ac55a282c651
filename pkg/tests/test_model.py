import dataclasses
import math

import numpy as np
import pytest

from convnilm import nncore as nn
from convnilm.dataio import Standardizer
from convnilm.errors import ConfigError, StateError, StructuralError
from convnilm.model import (
    Activation,
    LayerSpec,
    Model,
    ModelConfig,
    build_model,
    compile_graph,
    count_parameters,
    decide,
    desk_config,
    init_glorot,
    paper_config,
    predict_profile,
    preset,
    tiny_config,
)
from convnilm.nncore import OpMode
from fdcheck import numerical_grad, rel_err
from modelcheck import whole_model_fd

SEEDS = range(20)


# --------------------------------------------------------------------------- #
# Presets and configuration


def test_desk_preset_shape_and_count():
    cfg = desk_config(512)
    names = [n for n, _ in cfg.layer_specs()]
    assert len(names) == 1 + 8 + 2 + 8 + 1
    assert [blk[0].out_channels for blk in cfg.encoder_blocks] == [16, 32, 64, 128]
    assert [s.dilation for blk in cfg.encoder_blocks for s in blk] == [1, 2, 4, 8, 1, 2, 4, 8]
    m = build_model(cfg, seed=0)
    summed = sum(m.params[k].size for k in m.trainable())
    assert m.num_parameters() == summed == count_parameters(cfg) == 461457
    assert build_model(cfg, seed=1).num_parameters() == summed


def test_paper_preset_is_46_layers_near_41m():
    cfg = paper_config()
    assert len(cfg.layer_specs()) == 46
    assert len(cfg.representation_layers) == 4
    assert sum(len(b) for b in cfg.encoder_blocks + cfg.decoder_blocks) == 40
    n = count_parameters(cfg)
    assert abs(n - 41e6) <= 0.1 * 41e6
    assert cfg.window_len == 10800


def test_tiny_preset_count():
    assert count_parameters(tiny_config(32)) == 773


def test_preset_lookup():
    assert preset("desk", window_len=256).window_len == 256
    with pytest.raises(ConfigError):
        preset("huge")


def test_config_dict_round_trip():
    cfg = desk_config(512)
    again = ModelConfig.from_dict(cfg.to_dict())
    assert again == cfg


@pytest.mark.parametrize("cfg", [tiny_config(32), desk_config(512), desk_config(64), paper_config(10800)])
def test_length_preserved(cfg):
    nodes = compile_graph(cfg)
    assert (nodes[-1].channels, nodes[-1].length) == (1, cfg.window_len)


def test_residual_channel_mismatch_names_link():
    cfg = tiny_config(32)
    cfg.residuals = cfg.residuals + [("input", "enc1.1")]
    cfg.encoder_blocks[1][1] = dataclasses.replace(cfg.encoder_blocks[1][1], out_channels=5)
    with pytest.raises(ConfigError, match="residual"):
        compile_graph(cfg)


def test_residual_across_pool_is_rejected():
    cfg = tiny_config(32)
    cfg.residuals.append(("enc0.0", "enc1.0"))  # 32 vs 16 samples
    with pytest.raises(ConfigError, match="enc0.0 -> enc1.0|enc0.0->enc1.0"):
        compile_graph(cfg)


def test_window_not_divisible_by_pooling():
    with pytest.raises(ConfigError, match="divisible"):
        compile_graph(desk_config(100))


def test_layer_spec_invariants():
    with pytest.raises(ConfigError):
        LayerSpec(4, kernel_size=4).validate("x")
    with pytest.raises(ConfigError):
        LayerSpec(4, pool_after=2, unpool_before=2).validate("x")


def test_output_layer_must_be_single_sigmoid():
    cfg = tiny_config(32)
    cfg.output_layer = dataclasses.replace(cfg.output_layer, activation=Activation.LRELU)
    with pytest.raises(ConfigError):
        compile_graph(cfg)


def test_first_hidden_layer_is_sigmoid():
    cfg = desk_config(512)
    assert cfg.input_layer.activation is Activation.LOGSG
    assert all(s.activation is Activation.LRELU for n, s in cfg.layer_specs()[1:-1])


# --------------------------------------------------------------------------- #
# Glorot


def test_glorot_unit_bound():
    w = init_glorot((1, 1, 3), 0, np.float64)  # fan_in = fan_out = 3
    assert np.all(np.abs(w) <= 1.0)
    big = init_glorot((1000, 1, 3), 1, np.float64)  # fan_in 3, fan_out 3000
    assert np.abs(big).max() <= math.sqrt(6 / 3003)


def test_glorot_limit_is_one_for_fan_three():
    w = init_glorot((3, 3), 0, np.float64)  # dense 3x3: fan_in = fan_out = 3
    assert np.abs(w).max() <= 1.0
    assert np.abs(w).max() > 0.5


def test_glorot_mean():
    w = init_glorot((100_000, 1, 1), 7, np.float64)  # fan_in 1, fan_out 1e5
    L = math.sqrt(6 / (1 + 100_000))
    assert abs(w.mean()) < 4 * L / math.sqrt(3 * 100_000)
    flat = init_glorot((1, 3, 1), 0, np.float64)
    assert flat.shape == (1, 3, 1)


def test_glorot_mean_fan_three():
    rng = np.random.default_rng(3)
    w = np.concatenate([init_glorot((3, 1, 1), rng, np.float64).ravel() for _ in range(100_000 // 3 + 1)])[:100_000]
    assert abs(w.mean()) < 4 * 1.0 / math.sqrt(3 * 100_000)


def test_glorot_deterministic():
    np.testing.assert_array_equal(init_glorot((4, 2, 3), 5), init_glorot((4, 2, 3), 5))


def test_fresh_model_bias_and_bn_init():
    m = build_model(tiny_config(32), seed=0)
    for k, v in m.params.items():
        if k.endswith(("bias", "beta", "running_mean")):
            assert not v.any()
        if k.endswith(("gamma", "running_var")):
            assert np.all(v == 1)


# --------------------------------------------------------------------------- #
# Forward


def test_output_is_probability():
    rng = np.random.default_rng(0)
    for seed in range(5):
        m = build_model(desk_config(64), seed=seed)
        out = m.forward(rng.normal(scale=3, size=(4, 64)))
        assert out.shape == (4, 1, 64)
        assert np.all((out > 0) & (out < 1))


def test_infer_is_deterministic():
    m = build_model(tiny_config(32), seed=0)
    x = np.random.default_rng(1).normal(size=(3, 32))
    np.testing.assert_array_equal(m.forward(x), m.forward(x))


def test_wrong_input_length():
    m = build_model(tiny_config(32), seed=0)
    with pytest.raises(StructuralError):
        m.forward(np.zeros((1, 31)))


def test_float32_preserved():
    m = build_model(tiny_config(32), seed=0, dtype=np.float32)
    assert m.forward(np.zeros((1, 32))).dtype == np.float32


def _three_layer_config():
    return ModelConfig(
        window_len=16,
        input_layer=LayerSpec(3, 3, 1, Activation.LOGSG),
        encoder_blocks=[],
        representation_layers=[LayerSpec(2, 5, 2)],
        decoder_blocks=[],
        output_layer=LayerSpec(1, 1, 1, Activation.LOGSG, has_bn=False, has_gn=False),
    )


def test_forward_equals_manual_composition():
    cfg = _three_layer_config()
    m = build_model(cfg, seed=4, dtype=np.float64)
    rng = np.random.default_rng(0)
    for k in m.params:
        m.params[k] = rng.uniform(0.5, 1.5, m.params[k].shape) if k.endswith("var") else rng.normal(size=m.params[k].shape)
    x = rng.normal(size=(2, 1, 16))

    def layer(h, name, act):
        p = m.params
        z = nn.conv1d_forward(h, nn.ConvParams(p[f"{name}.kernel"], p[f"{name}.bias"], 1 if name != "rep0" else 2))
        if f"{name}.gamma" in p:
            bn = nn.BatchNormParams(p[f"{name}.gamma"], p[f"{name}.beta"],
                                    p[f"{name}.running_mean"], p[f"{name}.running_var"])
            z = nn.batchnorm_forward(z, bn, OpMode.INFER)
        return act(z)

    h = layer(x, "input", nn.logistic_sigmoid)
    h = layer(h, "rep0", lambda z: nn.leaky_relu(z, 0.01))
    h = layer(h, "output", nn.logistic_sigmoid)
    np.testing.assert_array_equal(m.forward(x), h)


def test_train_mode_noise_needs_rng():
    m = build_model(tiny_config(32), seed=0)
    with pytest.raises(ValueError):
        m.forward(np.zeros((2, 32)), OpMode.TRAIN)


# --------------------------------------------------------------------------- #
# Backward


@pytest.mark.parametrize("seed", SEEDS)
def test_whole_model_gradient(seed):
    assert whole_model_fd(seed, coords_per_tensor=8) <= 1e-3


def test_backward_needs_forward():
    m = build_model(tiny_config(32), seed=0)
    with pytest.raises(StateError):
        m.backward(np.zeros((1, 1, 32)))
    m.forward(np.zeros((1, 32)), OpMode.INFER)
    with pytest.raises(StateError):
        m.backward(np.zeros((1, 1, 32)))


def test_zero_upstream_gradient():
    m = build_model(tiny_config(32), seed=0, dtype=np.float64)
    m.forward(np.random.default_rng(0).normal(size=(2, 32)), OpMode.TRAIN, np.random.default_rng(1))
    grads = m.backward(np.zeros((2, 1, 32)))
    assert set(grads) == set(m.trainable())
    assert all(not g.any() for g in grads.values())


def test_duplicated_skip_doubles_branch_gradient():
    base = tiny_config(32, noise_sigma=0.0)
    dup = dataclasses.replace(base, outer_skips=base.outer_skips + [(1, 0)])
    m1 = build_model(base, seed=0, dtype=np.float64)
    m2 = build_model(dup, seed=0, dtype=np.float64)
    # dec0.0 sees [unpool (4 ch), enc1 skip (4 ch)] vs [unpool, skip, skip]: give both skip copies the same taps
    for k, v in m1.params.items():
        if k != "dec0.0.kernel":
            m2.params[k] = v.copy()
    k1 = m1.params["dec0.0.kernel"]
    m2.params["dec0.0.kernel"] = np.concatenate([k1, k1[:, 4:]], axis=1)
    x = np.random.default_rng(2).normal(size=(2, 32))
    for m in (m1, m2):
        m.forward(x, OpMode.TRAIN, np.random.default_rng(0))
    w = np.random.default_rng(3).normal(size=(2, 1, 32))
    m1.backward(w, record_edges=True)
    m2.backward(w, record_edges=True)
    edge1 = m1.edge_grads[("dec0.0.concat", "enc1.1.res")]
    edge2 = m2.edge_grads[("dec0.0.concat", "enc1.1.res")]
    assert len(edge1) == 1 and len(edge2) == 2
    np.testing.assert_array_equal(edge2[0], edge2[1])
    # every copy receives what the single skip would receive from the same upstream gradient
    d1 = m1.edge_grads[("dec0.0", "dec0.0.concat")][0]
    d2 = m2.edge_grads[("dec0.0", "dec0.0.concat")][0]
    np.testing.assert_array_equal(d2[:, 4:8], d2[:, 8:12])
    assert np.linalg.norm(sum(edge2)) == pytest.approx(2 * np.linalg.norm(edge2[0]))
    assert d1.shape[1] == 8 and d2.shape[1] == 12


def test_fan_out_gradients_are_summed():
    m = build_model(tiny_config(32), seed=1, dtype=np.float64)
    m.forward(np.random.default_rng(0).normal(size=(2, 32)), OpMode.TRAIN, np.random.default_rng(0))
    m.backward(np.random.default_rng(1).normal(size=(2, 1, 32)), record_edges=True)
    # enc1.1.res feeds the pool, the outer skip into dec0 and nothing else
    consumers = {c for (c, s) in m.edge_grads if s == "enc1.1.res"}
    assert consumers == {"enc1.1.pool", "dec0.0.concat"}


def test_descent_step_does_not_increase_loss():
    m = build_model(tiny_config(32, noise_sigma=0.0), seed=0, dtype=np.float64)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 32))
    y = (rng.random((4, 1, 32)) > 0.5).astype(float)

    def loss():
        p = np.clip(m.forward(x, OpMode.TRAIN, rng), 1e-7, 1 - 1e-7)
        return float(-np.sum(y * np.log(p) + (1 - y) * np.log(1 - p)))

    before = loss()
    p = m.forward(x, OpMode.TRAIN, rng)
    grads = m.backward((p - y) / (p * (1 - p)))
    for k, g in grads.items():
        m.params[k] -= 1e-4 * g
    assert loss() <= before + 1e-12


def test_gradient_of_input_weights_matches_fd_through_bn():
    # float64 spot check of the first layer with several batch sizes
    for batch in (1, 3):
        m = build_model(tiny_config(32), seed=batch, dtype=np.float64)
        rng = np.random.default_rng(batch)
        x = rng.normal(size=(batch, 32))
        w = rng.normal(size=(batch, 1, 32))
        f = lambda: float(np.sum(w * m.forward(x, OpMode.TRAIN, np.random.default_rng(9))))
        f()
        g = m.backward(w)["input.kernel"]
        assert rel_err(g, numerical_grad(f, m.params["input.kernel"])) <= 1e-6


# --------------------------------------------------------------------------- #
# Decision rule


def test_decision_examples():
    np.testing.assert_array_equal(decide(np.array([0.6, 0.4, 0.5])), [1, 0, 1])


def test_decision_equals_two_class_rule_on_grid():
    p = np.linspace(0, 1, 100_001)
    p = np.concatenate([p, np.nextafter(0.5, [0, 1]), [0.5]])
    expected = np.where((1 - p) > p, 0, 1)
    np.testing.assert_array_equal(decide(p), expected)
    np.testing.assert_array_equal(decide(p), (p >= 0.5).astype(int))


def test_predict_profile_binary():
    m = build_model(tiny_config(32), seed=0)
    out = predict_profile(m, np.random.default_rng(0).normal(size=(2, 32)))
    assert out.shape == (2, 32) and set(np.unique(out)) <= {0, 1}


def test_standardization_removes_affine_scale():
    m = build_model(tiny_config(32), seed=0, dtype=np.float64)
    raw = np.random.default_rng(0).gamma(2.0, 50.0, size=(3, 32)) + 80
    outs = []
    for a, b in [(1.0, 0.0), (3.5, 0.0), (0.01, 250.0)]:
        x = a * raw + b
        z = Standardizer.fit(x).apply(x)
        outs.append(predict_profile(m, z))
    np.testing.assert_array_equal(outs[0], outs[1])
    np.testing.assert_array_equal(outs[0], outs[2])


def test_model_rejects_foreign_params():
    m = build_model(tiny_config(32), seed=0)
    with pytest.raises(StructuralError):
        Model(desk_config(64), m.params)
