from collections import OrderedDict

import numpy as np
import pytest

from app.core.exceptions import DataFormatError, ShapeError, UnknownMixerError
from app.engine.autodiff import Parameter
from app.engine.tensor import Shape
from app.mixers.dense import InitPolicy
from app.mixers.spec import MixerFamily
from app.models.blocks import BlockConfig, init_block_params, mixer_spec, run_block
from app.models.checkpoint import MAGIC, load_checkpoint, load_into, save_checkpoint
from app.models.convert import convert_to_dense
from app.models.layers import (
    NORM_EPS,
    DownsampleStage,
    Normalization,
    channel_mixer_ffn,
    downsample_embed,
    embed,
    parse_stages,
    patchify,
)
from app.models.sequence import (
    TEMPLATES,
    Task,
    TemplateConfig,
    build_model,
    materialize_mixers,
    parameter_census,
    predict,
)


def template_config(template: str, task: Task = Task.FORECAST, **overrides) -> TemplateConfig:
    values = dict(template=template, task=task, lookback=8, channels=2, horizon=3, n_classes=3, width=4,
                  heads=2, n_blocks=1, ffn_hidden=5, patch_len=2, kernel_size=2, state_size=2)
    values.update(overrides)
    return TemplateConfig(**values)


def standardize(values: np.ndarray) -> np.ndarray:
    return (values - values.mean()) / np.sqrt(values.var() + NORM_EPS)


# Layers ----------------------------------------------------------------------

def test_embed(rng):
    X = rng.normal(size=(8, 3))
    assert np.array_equal(embed(X, np.eye(3), np.zeros((8, 3))), X)
    W_pos = rng.normal(size=(8, 4))
    assert np.array_equal(embed(np.zeros((8, 3)), rng.normal(size=(3, 4)), W_pos), W_pos)
    W_V = rng.normal(size=(3, 4))
    assert np.allclose(embed(X, W_V, W_pos), X @ W_V + W_pos)
    with pytest.raises(ShapeError):
        embed(X, W_V, np.zeros((7, 4)))


def test_patchify():
    X = np.arange(1.0, 5.0)[:, None]
    assert np.array_equal(patchify(X, 2), [[1.0, 2.0], [3.0, 4.0]])
    Y = np.arange(12.0).reshape(4, 3)
    assert np.array_equal(patchify(Y, 1), Y)
    assert patchify(Y, 4).shape == (1, 12)
    with pytest.raises(ShapeError):
        patchify(Y, 3)


def test_channel_mixer_ffn(rng):
    assert np.array_equal(channel_mixer_ffn(np.zeros((4, 3)), rng.normal(size=(3, 5)), rng.normal(size=(5, 3))),
                          np.zeros((4, 3)))
    assert np.array_equal(channel_mixer_ffn(np.ones((2, 3)), -np.ones((3, 5)), rng.normal(size=(5, 3))),
                          np.zeros((2, 3)))
    Y, W_up, W_down = rng.normal(size=(4, 3)), rng.normal(size=(3, 5)), rng.normal(size=(5, 3))
    assert np.allclose(channel_mixer_ffn(Y, W_up, W_down), np.maximum(Y @ W_up, 0) @ W_down)


def test_downsample_identity_stage(rng):
    X = rng.normal(size=(8, 2))
    out = downsample_embed(X, [(np.array([1.0]), 1)])
    assert out.shape == (2, 8, 1)
    assert np.allclose(out[:, :, 0], standardize(X.T))


def test_downsample_stride_halves_length(rng):
    assert downsample_embed(rng.normal(size=(8, 1)), [(rng.normal(size=(2, 3)), 2)]).shape == (1, 4, 3)
    with pytest.raises(ShapeError):
        downsample_embed(rng.normal(size=(6, 1)), [(np.ones(2), 4)])


def test_two_stage_downsampling_of_a_ramp():
    X = np.arange(8.0)[:, None]
    out = downsample_embed(X, [(np.array([1.0, 1.0]), 2), (np.array([[1.0], [2.0]]), 2)])
    first = standardize(np.array([0 + 1, 2 + 3, 4 + 5, 6 + 7], dtype=np.float64))
    second = standardize(np.array([first[0] + 2 * first[1], first[2] + 2 * first[3]]))
    assert np.allclose(out[0, :, 0], second)


def test_parse_stages():
    assert parse_stages("2x2, 4x1") == [DownsampleStage(2, 2), DownsampleStage(4, 1)]
    assert parse_stages("3") == [DownsampleStage(3, 3)]
    assert parse_stages("") == []


# Blocks ----------------------------------------------------------------------

def dense_block(n=4, D=3):
    cfg = BlockConfig(shape=Shape(L=n, C=1, D=D, H=1, P=D), mixer=MixerFamily.DENSE, ffn_hidden=2,
                      normalization=Normalization.NONE)
    params = {
        "b.dense": Parameter("b.dense", np.eye(n)[None]),
        "b.ffn.W_up": Parameter("b.ffn.W_up", np.zeros((D, 2))),
        "b.ffn.W_down": Parameter("b.ffn.W_down", np.zeros((2, D))),
    }
    return cfg, params


def test_identity_mixer_block_doubles_its_input(rng):
    cfg, params = dense_block()
    V = rng.normal(size=(4, 3))
    assert np.allclose(run_block(cfg, params, "b", V), 2.0 * V)


def test_zero_input_with_zero_weights_stays_zero():
    cfg = BlockConfig(shape=Shape(L=4, C=1, D=4, H=2, P=2), mixer="attention", ffn_hidden=3,
                      normalization="none")
    params = {name: Parameter(name, np.zeros_like(p.value))
              for name, p in init_block_params(cfg, "b", np.random.default_rng(0)).items()}
    assert np.array_equal(run_block(cfg, params, "b", np.zeros((4, 4))), np.zeros((4, 4)))


@pytest.mark.parametrize("mixer", ["attention", "autocorrelation", "toeplitz"])
def test_block_preserves_shape(mixer, rng):
    cfg = BlockConfig(shape=Shape(L=6, C=1, D=4, H=2, P=2), mixer=mixer, ffn_hidden=3)
    params = init_block_params(cfg, "b", rng)
    assert run_block(cfg, params, "b", rng.normal(size=(6, 4))).shape == (6, 4)
    assert run_block(cfg, params, "b", rng.normal(size=(3, 6, 4))).shape == (3, 6, 4)


def test_block_config_validation():
    with pytest.raises(ShapeError):
        BlockConfig(shape=Shape(L=4, C=1, D=4, H=2, P=2), mixer="semiseparable", ffn_hidden=3)
    with pytest.raises(ShapeError):
        BlockConfig(shape=Shape(L=2, C=1, D=2, H=2, P=1), mixer="toeplitz", ffn_hidden=3, kernel_size=3)
    with pytest.raises(UnknownMixerError):
        BlockConfig(shape=Shape(L=4, C=1, D=4, H=2, P=2), mixer="mamba", ffn_hidden=3)
    lowrank = BlockConfig(shape=Shape(L=3, C=3, D=4, H=2, P=2), mixer="masked-lowrank", ffn_hidden=3)
    assert lowrank.feature_axis and lowrank.mixer_dim == 4 and lowrank.mixer_heads == 1


def test_bidirectional_block_matches_hand_composition(rng):
    cfg = BlockConfig(shape=Shape(L=5, C=1, D=3, H=3, P=1), mixer="semiseparable", ffn_hidden=4, state_size=2)
    params = {}
    params.update(init_block_params(cfg, "b.fwd", rng))
    params.update(init_block_params(cfg, "b.rev", rng))
    X = rng.normal(size=(5, 3))
    expected = run_block(cfg, params, "b.fwd", X) + run_block(cfg, params, "b.rev", X[::-1])[::-1]
    assert np.allclose(run_block(cfg, params, "b", X, bidirectional=True), expected, atol=1e-12)


def test_mixer_spec_from_block_parameters(rng):
    cfg = BlockConfig(shape=Shape(L=6, C=1, D=4, H=2, P=2), mixer="attention", ffn_hidden=3)
    params = init_block_params(cfg, "b", rng)
    spec = mixer_spec(cfg, params, "b")
    assert spec.family is MixerFamily.ATTENTION and spec.dim == 6


# Templates -------------------------------------------------------------------

@pytest.mark.parametrize("task", list(Task))
@pytest.mark.parametrize("template", TEMPLATES)
def test_every_template_keeps_its_output_shape_through_conversion(template, task, rng):
    model = build_model(template_config(template, task), rng)
    X = rng.normal(size=(3, 8, 2))
    expected = (3,) + model.out_shape
    assert predict(model, X).shape == expected
    dense = convert_to_dense(model, InitPolicy.scaled(), rng=rng)
    assert predict(dense, X).shape == expected
    assert all(block.mixer is MixerFamily.DENSE for block in dense.blocks)


def test_template_rejects_unknown_names_and_mixers():
    with pytest.raises(UnknownMixerError):
        TemplateConfig(template="hyena")
    with pytest.raises(UnknownMixerError):
        build_model(template_config("attention", mixer="toeplitz"), np.random.default_rng(0))
    with pytest.raises(ShapeError):
        build_model(template_config("patched-attention", patch_len=3), np.random.default_rng(0))


def test_forward_rejects_wrong_window_shape(rng):
    model = build_model(template_config("attention"), rng)
    with pytest.raises(ShapeError):
        predict(model, rng.normal(size=(2, 7, 2)))


def test_build_is_deterministic():
    a = build_model(template_config("semiseparable"), np.random.default_rng(3))
    b = build_model(template_config("semiseparable"), np.random.default_rng(3))
    assert all(np.array_equal(a.params[name].value, b.params[name].value) for name in a.params)


def test_attention_census_delta():
    cfg = template_config("attention", n_blocks=2)
    model = build_model(cfg, np.random.default_rng(0))
    dense = convert_to_dense(model, InitPolicy.zero())
    before, after = parameter_census(model), parameter_census(dense)
    L, D, H, P = 8, 4, 2, 2
    per_block = H * L * L - 2 * H * D * P
    assert after["mixer"] - before["mixer"] == 2 * per_block
    assert after["total"] - before["total"] == 2 * per_block
    for component in ("embedding", "channel", "norm", "head"):
        assert after[component] == before[component]


def test_conversion_copies_non_mixer_parameters(rng):
    model = build_model(template_config("attention"), rng)
    dense = convert_to_dense(model, InitPolicy.zero())
    for name, param in dense.params.items():
        if name.endswith(".dense"):
            assert np.array_equal(param.value, np.zeros((2, 8, 8)))
        else:
            assert np.array_equal(param.value, model.params[name].value)
            assert param is not model.params[name]
    with pytest.raises(UnknownMixerError):
        convert_to_dense(dense, InitPolicy.zero())


@pytest.mark.parametrize("template", ["attention", "patched-attention", "semiseparable",
                                      "bidirectional-semiseparable"])
def test_distilled_model_reproduces_the_original_on_its_calibration_window(template, rng):
    model = build_model(template_config(template), rng)
    X = rng.normal(size=(1, 8, 2))
    dense = convert_to_dense(model, InitPolicy.distill(), calibration=X)
    assert np.max(np.abs(predict(dense, X) - predict(model, X))) <= 1e-9


def test_distilled_toeplitz_model_is_exact_on_any_batch(rng):
    model = build_model(template_config("toeplitz"), rng)
    dense = convert_to_dense(model, InitPolicy.distill())
    X = rng.normal(size=(5, 8, 2))
    assert np.max(np.abs(predict(dense, X) - predict(model, X))) <= 1e-9


@pytest.mark.parametrize("template", ["attention", "toeplitz", "semiseparable", "bidirectional-semiseparable"])
def test_dense_replacements_of_causal_mixers_stay_lower_triangular(template, rng):
    model = build_model(template_config(template), rng)
    dense = convert_to_dense(model, InitPolicy.scaled(), rng=rng)
    causal = template != "attention"
    assert all(block.causal_dense == causal for block in dense.blocks)
    for mixers in materialize_mixers(dense, rng.normal(size=(2, 8, 2))).values():
        upper = np.triu(mixers, k=1)
        assert np.all(upper == 0.0) if causal else np.any(upper != 0.0)


def test_distilling_input_dependent_mixers_needs_calibration(rng):
    with pytest.raises(ValueError):
        convert_to_dense(build_model(template_config("attention"), rng), InitPolicy.distill())


def test_materialized_mixer_shapes(rng):
    X = rng.normal(size=(4, 8, 2))
    expectations = {
        "attention": {"blocks.0": (2, 8, 8)},
        "channel-attention": {"blocks.0": (1, 4, 4)},
        "toeplitz": {"blocks.0": (4, 4, 4)},
        "bidirectional-semiseparable": {"blocks.0.fwd": (4, 8, 8), "blocks.0.rev": (4, 8, 8)},
    }
    for template, shapes in expectations.items():
        mixers = materialize_mixers(build_model(template_config(template), rng), X)
        assert {prefix: M.shape for prefix, M in mixers.items()} == shapes


def test_attention_mixers_are_row_stochastic(rng):
    mixers = materialize_mixers(build_model(template_config("attention"), rng), rng.normal(size=(3, 8, 2)))
    assert np.allclose(mixers["blocks.0"].sum(axis=-1), 1.0)


# Checkpoints -----------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    model = build_model(template_config("bidirectional-semiseparable"), rng)
    path = save_checkpoint(model.params, tmp_path / "model.jdck")
    assert path.read_bytes()[:4] == MAGIC
    tensors = load_checkpoint(path)
    assert list(tensors) == list(model.params)
    for name, value in tensors.items():
        assert np.array_equal(value, model.params[name].value)

    fresh = build_model(template_config("bidirectional-semiseparable"), np.random.default_rng(99))
    load_into(fresh, path)
    X = rng.normal(size=(2, 8, 2))
    assert np.array_equal(predict(fresh, X), predict(model, X))


def test_checkpoint_scalar_tensor(tmp_path):
    params = OrderedDict(s=Parameter("s", np.array(2.5)))
    assert load_checkpoint(save_checkpoint(params, tmp_path / "s.jdck"))["s"] == 2.5


def test_checkpoint_rejects_corruption(tmp_path, rng):
    model = build_model(template_config("attention"), rng)
    path = save_checkpoint(model.params, tmp_path / "model.jdck")
    data = path.read_bytes()

    (tmp_path / "magic.jdck").write_bytes(b"XXXX" + data[4:])
    (tmp_path / "short.jdck").write_bytes(data[:-5])
    (tmp_path / "long.jdck").write_bytes(data + b"\x00")
    for name in ("magic", "short", "long"):
        with pytest.raises(DataFormatError):
            load_checkpoint(tmp_path / f"{name}.jdck")
    with pytest.raises(DataFormatError):
        load_checkpoint(tmp_path / "missing.jdck")


def test_load_into_rejects_other_architectures(tmp_path, rng):
    path = save_checkpoint(build_model(template_config("attention"), rng).params, tmp_path / "a.jdck")
    with pytest.raises(DataFormatError):
        load_into(build_model(template_config("semiseparable"), rng), path)
    with pytest.raises(ShapeError):
        load_into(build_model(template_config("attention", width=6), rng), path)


def test_tape_is_not_shared_between_predictions(rng):
    model = build_model(template_config("attention"), rng)
    X = rng.normal(size=(2, 8, 2))
    assert np.array_equal(predict(model, X), predict(model, X))
    assert all(p.grad.sum() == 0.0 for p in model.parameters())
