import numpy as np
import pytest
import torch

from graphcc.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from graphcc.config import ModelConfig, TrainConfig
from graphcc.encoder import GCCModel, build_model, forward_view
from graphcc.errors import ConfigError, FormatError, ShapeError


def cfg(**over):
    base = {"aug.window_len": 8, "model.d": 8, "model.kbar": 2}
    base.update(over)
    return TrainConfig().replace(**base)


def views(b=2, n=3, k=4, f=8, seed=0, dtype=torch.float32):
    return torch.randn(b, n, k, f, generator=torch.Generator().manual_seed(seed), dtype=dtype)


def test_init_is_deterministic():
    a = build_model(cfg(), 4, seed=3).state_dict()
    b = build_model(cfg(), 4, seed=3).state_dict()
    c = build_model(cfg(), 4, seed=4).state_dict()
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert not all(torch.equal(a[k], c[k]) for k in a)


def test_biases_start_at_zero():
    model = build_model(cfg(), 4, seed=1)
    biases = [p for n, p in model.named_parameters() if n.endswith("bias")]
    assert biases and all(torch.count_nonzero(p) == 0 for p in biases)


def test_head_parameter_count():
    model = build_model(cfg(**{"aug.window_len": 16, "model.d": 16, "model.kbar": 4}), 8)
    # four affine d->d maps: 4 * (16 * 16 + 16)
    assert sum(p.numel() for p in model.heads.parameters()) == 4 * (16 * 16 + 16) == 1088


def test_head_count_follows_kbar():
    assert len(build_model(cfg(), 4).heads) == 2
    assert len(build_model(cfg(**{"model.kbar": None}), 6).heads) == 3


def test_param_groups_cover_everything():
    model = build_model(cfg(), 4)
    groups = model.param_groups()
    assert list(groups) == ["cnn", "W_g", "summarizer", "heads"]
    assert sum(len(v) for v in groups.values()) == len(list(model.parameters()))


def test_heads_must_divide_d():
    with pytest.raises(ConfigError, match="divisible"):
        GCCModel(ModelConfig(d=6, transformer_heads=4), 4, 8)


def test_nothing_to_predict():
    with pytest.raises(ConfigError, match="nothing to predict"):
        GCCModel(ModelConfig(d=8, kbar=4), 4, 8)


def test_encode_windows_shape_and_errors():
    model = build_model(cfg(), 4)
    assert model.encode_windows(views()[0]).shape == (3, 4, 8)
    with pytest.raises(ShapeError):
        model.encode_windows(torch.zeros(3, 4, 7))


def test_encode_windows_sensor_equivariance():
    model = build_model(cfg(), 4)
    x = views()[0]
    perm = torch.tensor([2, 0, 1])
    assert torch.allclose(model.encode_windows(x)[perm], model.encode_windows(x[perm]), atol=1e-6)


def test_duplicate_windows_share_features():
    model = build_model(cfg(), 4)
    x = views()[0]
    x[1, 3] = x[0, 1]
    z = model.encode_windows(x)
    assert torch.equal(z[1, 3], z[0, 1])


def test_forward_shapes_and_global():
    model = build_model(cfg(), 4)
    trace = forward_view(model, views(), 2, torch.Generator().manual_seed(0))
    assert trace.window_features.shape == (2, 3, 4, 8)
    assert trace.contexts.contexts.shape == (2, 3, 8)
    assert trace.predictions.shape == (2, 3, 2, 8)
    assert torch.equal(trace.globals, torch.cat([trace.contexts.contexts[:, i] for i in range(3)], dim=-1))
    single = forward_view(model, views()[0], 3)
    assert single.window_features.shape == (3, 4, 8) and single.globals.shape == (24,)


def test_forward_is_deterministic_given_generator():
    model = build_model(cfg(), 4)
    a = forward_view(model, views(), 1, torch.Generator().manual_seed(5))
    b = forward_view(model, views(), 1, torch.Generator().manual_seed(5))
    assert torch.equal(a.globals, b.globals) and torch.equal(a.predictions, b.predictions)


def test_unaugmented_forward_is_sensor_equivariant():
    model = build_model(cfg(), 4, dtype=torch.float64)
    x = views(dtype=torch.float64)
    perm = torch.tensor([1, 2, 0])
    a = forward_view(model, x, 3)
    b = forward_view(model, x[:, perm], 3)
    assert torch.allclose(a.contexts.contexts[:, perm], b.contexts.contexts, atol=1e-10)


def test_mean_summarizer_without_gnn():
    model = build_model(cfg(**{"model.summarizer": "mean", "graph.gnn_layers": 0}), 4)
    x = views()
    trace = forward_view(model, x, 3)
    z = model.encode_windows(x)
    assert torch.allclose(trace.contexts.contexts, z[:, :, :2].mean(dim=2), atol=1e-7)
    assert torch.equal(trace.window_features, z)


def test_nonlinear_heads_are_nonnegative():
    model = build_model(cfg(**{"model.nonlinear_heads": True}), 4)
    assert torch.all(forward_view(model, views(), 3).predictions >= 0)


def test_wrong_window_count():
    model = build_model(cfg(), 4)
    with pytest.raises(ConfigError):
        forward_view(model, views(k=5), 3)


def test_checkpoint_round_trip(tmp_path):
    c = cfg()
    model = build_model(c, 4, seed=2)
    ckpt = Checkpoint.from_model(model, c, {"num_sensors": 3, "length": 32, "num_windows": 4},
                                 [{"epoch": 1, "total": 1.5}])
    path = tmp_path / "m.gcck"
    save_checkpoint(ckpt, path)
    back = load_checkpoint(path)
    assert back == ckpt
    x = views()
    assert torch.equal(forward_view(back.model(), x, 3).globals, forward_view(model, x, 3).globals)


def test_checkpoint_format_errors(tmp_path):
    c = cfg()
    ckpt = Checkpoint.from_model(build_model(c, 4), c, {"num_sensors": 3, "length": 32, "num_windows": 4})
    path = tmp_path / "m.gcck"
    save_checkpoint(ckpt, path)
    blob = path.read_bytes()
    (tmp_path / "bad.gcck").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(FormatError) as err:
        load_checkpoint(tmp_path / "bad.gcck")
    assert err.value.offset == 0
    (tmp_path / "short.gcck").write_bytes(blob[:-10])
    with pytest.raises(FormatError, match="truncated"):
        load_checkpoint(tmp_path / "short.gcck")


def test_float64_model_round_trip(tmp_path):
    c = cfg()
    model = build_model(c, 4, dtype=torch.float64)
    ckpt = Checkpoint.from_model(model, c, {"num_sensors": 3, "length": 32, "num_windows": 4})
    save_checkpoint(ckpt, tmp_path / "m.gcck")
    back = load_checkpoint(tmp_path / "m.gcck")
    assert back.state["W_g"].dtype == np.float64
    assert next(back.model().parameters()).dtype == torch.float64
