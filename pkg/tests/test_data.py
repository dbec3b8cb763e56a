import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedsec.data import (LabeledDataset, generate_synthetic, load_idx, partition_equal,
                         save_idx, train_test_split)
from fedsec.errors import ConsistencyError, FormatError
from fedsec.federation import evaluate
from fedsec.nn import AdamState, MlpSpec, adam_step, init_mlp, mlp_backward


def write_idx_pair(tmp_path, pixels: np.ndarray, labels, rows=1):
    n, width = pixels.shape
    img = tmp_path / "images.idx"
    lbl = tmp_path / "labels.idx"
    img.write_bytes(struct.pack(">IIII", 0x803, n, rows, width // rows)
                    + pixels.astype(np.uint8).tobytes())
    lbl.write_bytes(struct.pack(">II", 0x801, len(labels)) + bytes(labels))
    return img, lbl


def test_synthetic_counts_per_label():
    ds = generate_synthetic(2, 5, 50, seed=3)
    assert len(ds) == 100
    assert np.bincount(ds.labels).tolist() == [50, 50]
    assert ds.features.min() >= 0 and ds.features.max() <= 1


def test_synthetic_is_deterministic_per_seed():
    a = generate_synthetic(4, 8, 30, seed=11)
    b = generate_synthetic(4, 8, 30, seed=11)
    c = generate_synthetic(4, 8, 30, seed=12)
    assert a.features.tobytes() == b.features.tobytes()
    assert a.labels.tobytes() == b.labels.tobytes()
    assert a.features.tobytes() != c.features.tobytes()


def test_blobs_are_learnable_by_a_small_mlp():
    ds = generate_synthetic(4, 8, 100, seed=0)
    spec = MlpSpec(8, (16,), 4)
    params = init_mlp(spec, np.random.default_rng(0))
    state = AdamState.for_params(params, learning_rate=0.05)
    for _ in range(50):
        _, grad = mlp_backward(params, spec, ds.features, ds.labels)
        params, state = adam_step(params, grad, state)
    assert evaluate(params, spec, ds) >= 0.90


def test_idx_endpoints_scale_to_unit_interval(tmp_path):
    pixels = np.array([[0, 255, 0, 255], [255, 255, 0, 0]])
    img, lbl = write_idx_pair(tmp_path, pixels, [3, 1], rows=2)
    ds = load_idx(img, lbl)
    assert ds.features.tolist() == [[0.0, 1.0, 0.0, 1.0], [1.0, 1.0, 0.0, 0.0]]
    assert ds.labels.tolist() == [3, 1]
    assert ds.dim == 4


def test_idx_bad_magic(tmp_path):
    img, lbl = write_idx_pair(tmp_path, np.zeros((2, 4)), [0, 1])
    raw = bytearray(img.read_bytes())
    raw[3] = 0x02
    img.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        load_idx(img, lbl)


def test_idx_truncated_file_is_format_error(tmp_path):
    img, lbl = write_idx_pair(tmp_path, np.full((3, 4), 9), [0, 1, 2])
    img.write_bytes(img.read_bytes()[:-1])
    with pytest.raises(FormatError):
        load_idx(img, lbl)


def test_idx_count_mismatch(tmp_path):
    img, _ = write_idx_pair(tmp_path, np.zeros((2, 4)), [0, 1])
    lbl = tmp_path / "other.idx"
    lbl.write_bytes(struct.pack(">II", 0x801, 3) + bytes([0, 1, 2]))
    with pytest.raises(ConsistencyError):
        load_idx(img, lbl)


def test_idx_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    pixels = rng.integers(0, 256, size=(7, 16))
    ds = LabeledDataset(pixels / 255.0, rng.integers(0, 10, 7), 10)
    save_idx(ds, tmp_path / "i", tmp_path / "l")
    back = load_idx(tmp_path / "i", tmp_path / "l", class_count=10)
    assert back.features.tobytes() == ds.features.tobytes()
    assert back.labels.tolist() == ds.labels.tolist()


def test_partition_ten_by_ten():
    shards = partition_equal(100, 10, seed=0)
    assert [len(s) for s in shards] == [10] * 10


def test_partition_remainder_goes_to_one_shard():
    sizes = sorted(len(s) for s in partition_equal(101, 10, seed=0))
    assert sizes == [10] * 9 + [11]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 500), st.integers(1, 20), st.integers(0, 10**6))
def test_partition_is_disjoint_exhaustive_balanced(n, eds, seed):
    shards = partition_equal(n, eds, seed)
    assert len(shards) == eds
    joined = np.sort(np.concatenate(shards))
    assert joined.tolist() == list(range(n))
    sizes = [len(s) for s in shards]
    assert max(sizes) - min(sizes) <= 1


def test_train_test_split_is_a_partition():
    ds = generate_synthetic(4, 8, 500, seed=1)
    train, test = train_test_split(ds, 0.2, seed=2)
    assert len(train) == 1600 and len(test) == 400
    rows = {r.tobytes() for r in ds.features}
    assert {r.tobytes() for r in train.features} | {r.tobytes() for r in test.features} == rows


def test_dataset_is_read_only():
    ds = generate_synthetic(2, 3, 4, seed=0)
    with pytest.raises(ValueError):
        ds.labels[0] = 1
