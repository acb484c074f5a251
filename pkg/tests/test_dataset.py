import struct

import numpy as np
import pytest

from graphcc.dataset import (
    MTSDataset,
    MTSSample,
    SyntheticSpec,
    batch_iter,
    class_table,
    draw_latent,
    generate_synthetic,
    load_dataset,
    normalize_sensors,
    render_sample,
    save_dataset,
    train_test_split,
)
from graphcc.errors import ConfigError, FormatError


def test_generate_small_spec_is_deterministic():
    spec = SyntheticSpec(n=4, N=2, L=8, num_classes=2, noise_std=0.0, seed=7)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert len(a) == 4
    assert set(a.labels) <= {0, 1}
    assert a.values.tobytes() == b.values.tobytes()
    assert a == b


def test_noiseless_same_class_same_latent_identical():
    spec = SyntheticSpec(n=4, N=3, L=32, num_classes=2, noise_std=0.0, seed=3)
    table = class_table(spec)
    latent = draw_latent(np.random.default_rng(11), spec.N, spec.L)
    x1 = render_sample(table, 1, latent, 0.0, np.random.default_rng(1))
    x2 = render_sample(table, 1, latent, 0.0, np.random.default_rng(2))
    np.testing.assert_array_equal(x1, x2)


def test_classes_differ_in_frequency_and_correlation_structure():
    spec = SyntheticSpec(n=8, N=6, L=128, num_classes=3, seed=5)
    table = class_table(spec)
    for a in range(3):
        for b in range(a + 1, 3):
            assert np.all(table.freqs[a] != table.freqs[b])
            assert not np.array_equal(table.shared[a], table.shared[b])


def test_raw_linear_probe_oracle():
    # least-squares linear classifier on raw flattened signals
    ds = generate_synthetic(SyntheticSpec(n=512, N=6, L=128, num_classes=2, noise_std=0.1, seed=1))
    x = ds.values.reshape(len(ds), -1).astype(np.float64)
    x = np.hstack([x, np.ones((len(x), 1))])
    y = np.where(ds.labels == 1, 1.0, -1.0)
    w, *_ = np.linalg.lstsq(x, y, rcond=None)
    assert np.mean(np.sign(x @ w) == y) > 0.70


@pytest.mark.parametrize("field,value", [("N", 1), ("num_classes", 1), ("noise_std", -1.0), ("n", 0)])
def test_invalid_spec_names_field(field, value):
    spec = SyntheticSpec(n=4, N=2, L=8)
    setattr(spec, field, value)
    with pytest.raises(ConfigError) as err:
        generate_synthetic(spec)
    assert err.value.key == field


def test_sample_invariants():
    with pytest.raises(ConfigError):
        MTSSample(np.zeros((1, 5)))
    with pytest.raises(ConfigError):
        MTSSample(np.array([[0.0, np.nan], [1.0, 2.0]]))
    with pytest.raises(ConfigError):
        MTSDataset([MTSSample(np.zeros((2, 3)), 2)], num_classes=2)
    with pytest.raises(ConfigError):
        MTSDataset([MTSSample(np.zeros((2, 3))), MTSSample(np.zeros((2, 4)))])


def test_round_trip(tmp_path):
    ds = generate_synthetic(SyntheticSpec(n=10, N=3, L=17, num_classes=3, noise_std=0.5, seed=2))
    save_dataset(ds, tmp_path / "train.gccd")
    back = load_dataset(tmp_path / "train.gccd")
    assert back == ds
    assert back.values.tobytes() == ds.values.tobytes()


def test_round_trip_unlabeled(tmp_path):
    ds = MTSDataset.from_arrays(np.random.default_rng(0).normal(size=(3, 2, 5)), split_tag="test")
    save_dataset(ds, tmp_path / "test.gccd")
    back = load_dataset(tmp_path / "test.gccd")
    assert back == ds and back.num_classes == 0 and back.labels is None


def test_layout_written_by_hand(tmp_path):
    values = np.arange(2 * 3 * 4, dtype="<f4")
    blob = struct.pack("<4s5I", b"GCCD", 1, 2, 3, 4, 2) + values.tobytes() + np.array([1, 0], "<i4").tobytes()
    (tmp_path / "d.gccd").write_bytes(blob)
    ds = load_dataset(tmp_path / "d.gccd")
    assert ds.values.shape == (2, 3, 4)
    assert list(ds.labels) == [1, 0]
    np.testing.assert_array_equal(ds.values[1, 2], [20, 21, 22, 23])


def test_bad_magic_and_truncation(tmp_path):
    good = struct.pack("<4s5I", b"GCCD", 1, 1, 2, 2, 0) + np.zeros(4, "<f4").tobytes()
    (tmp_path / "bad.gccd").write_bytes(b"XXXX" + good[4:])
    with pytest.raises(FormatError) as err:
        load_dataset(tmp_path / "bad.gccd")
    assert err.value.offset == 0
    (tmp_path / "short.gccd").write_bytes(good[:-3])
    with pytest.raises(FormatError, match="truncated"):
        load_dataset(tmp_path / "short.gccd")
    (tmp_path / "ver.gccd").write_bytes(good[:4] + struct.pack("<I", 9) + good[8:])
    with pytest.raises(FormatError) as err:
        load_dataset(tmp_path / "ver.gccd")
    assert err.value.offset == 4


def test_batch_iter_pretrain_drops_tail():
    batches = [b.tolist() for b in batch_iter(10, 4, shuffle=False, pretrain=True)]
    assert batches == [[0, 1, 2, 3], [4, 5, 6, 7]]
    eval_batches = [b.tolist() for b in batch_iter(10, 4, shuffle=False)]
    assert eval_batches[-1] == [8, 9]


def test_batch_iter_deterministic_and_covering():
    a = [b.tolist() for b in batch_iter(23, 5, seed=4)]
    b = [b.tolist() for b in batch_iter(23, 5, seed=4)]
    assert a == b
    assert sorted(sum(a, [])) == list(range(23))


def test_batch_iter_errors():
    with pytest.raises(ConfigError):
        list(batch_iter(3, 4, pretrain=True))
    with pytest.raises(ConfigError):
        list(batch_iter(10, 1, pretrain=True))


def test_split_is_80_20():
    ds = generate_synthetic(SyntheticSpec(n=512, N=2, L=8, seed=1))
    train, test = train_test_split(ds, seed=1)
    assert (len(train), len(test)) == (410, 102)
    assert sorted(np.concatenate([train.values, test.values]).reshape(512, -1)[:, 0]) == sorted(
        ds.values.reshape(512, -1)[:, 0])


def test_normalize_sensors():
    x = np.random.default_rng(0).normal(3, 5, size=(4, 3, 50))
    z = normalize_sensors(x)
    np.testing.assert_allclose(z.mean(-1), 0, atol=1e-5)
    np.testing.assert_allclose(z.std(-1), 1, atol=1e-4)
