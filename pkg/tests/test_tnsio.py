import numpy as np
import pytest

from daonet.tensor import Rng, Tensor, rand_uniform
from daonet.tnsio import (TnsFormatError, WeightStore, load_tensor, save_tensor,
                          tensor_from_bytes, tensor_to_bytes,
                          weightstore_from_bytes, weightstore_to_bytes)


def test_tensor_roundtrip_bitwise(tmp_path):
    t = rand_uniform(Rng(1), [2, 3, 4, 5], -10.0, 10.0)
    p = tmp_path / "x.tns"
    save_tensor(p, t)
    back = load_tensor(p)
    assert back.dims == t.dims
    assert np.array_equal(back.data, t.data)
    save_tensor(tmp_path / "y.tns", back)
    assert (tmp_path / "x.tns").read_bytes() == (tmp_path / "y.tns").read_bytes()


def test_tensor_header_layout():
    t = Tensor(np.asarray([1.0, 2.0, 3.0], dtype=np.float32), dims=(3,))
    blob = tensor_to_bytes(t)
    assert blob[:4] == b"TNSR"
    assert int.from_bytes(blob[4:8], "little") == 1
    assert int.from_bytes(blob[8:12], "little") == 3
    assert len(blob) == 12 + 3 * 4


def test_truncated_payload_names_the_field():
    blob = tensor_to_bytes(rand_uniform(Rng(2), [4, 4], 0.0, 1.0))
    with pytest.raises(TnsFormatError, match="payload shorter than header dims"):
        tensor_from_bytes(blob[:-4])


def test_bad_magic_rejected():
    with pytest.raises(TnsFormatError, match="magic"):
        tensor_from_bytes(b"NOPE" + b"\x00" * 32)


def test_bad_rank_and_zero_dim_rejected():
    good = tensor_to_bytes(Tensor(np.zeros((2, 2), dtype=np.float32)))
    bad_rank = good[:4] + (9).to_bytes(4, "little") + good[8:]
    with pytest.raises(TnsFormatError, match="rank"):
        tensor_from_bytes(bad_rank)
    zero_dim = good[:8] + (0).to_bytes(4, "little") + good[12:]
    with pytest.raises(TnsFormatError, match="positive"):
        tensor_from_bytes(zero_dim)


def test_oversized_payload_rejected():
    blob = tensor_to_bytes(rand_uniform(Rng(3), [2, 2], 0.0, 1.0))
    with pytest.raises(TnsFormatError, match="longer"):
        tensor_from_bytes(blob + b"\x00\x00\x00\x00")


def test_weightstore_roundtrip_and_order(tmp_path):
    store = WeightStore()
    rng = Rng(4)
    store.add("b.second", rand_uniform(rng, [3, 3], -1.0, 1.0))
    store.add("a.first", rand_uniform(rng, [2], -1.0, 1.0))
    blob = weightstore_to_bytes(store)
    back = weightstore_from_bytes(blob)
    assert [p for p, _ in back.entries] == ["b.second", "a.first"]
    assert weightstore_to_bytes(back) == blob
    for path, t in store.entries:
        assert np.array_equal(back.get(path).data, t.data)


def test_weightstore_rejects_duplicates_and_reports_missing():
    store = WeightStore()
    store.add("w", Tensor.scalar(1.0))
    with pytest.raises(ValueError, match="duplicate"):
        store.add("w", Tensor.scalar(2.0))
    with pytest.raises(TnsFormatError, match="missing from store"):
        store.get("nope")


def test_weightstore_bad_header_rejected():
    with pytest.raises(TnsFormatError, match="magic"):
        weightstore_from_bytes(b"XXXX\x00\x00\x00\x00")
    blob = b"WSTR" + (999).to_bytes(4, "little") + b"{}"
    with pytest.raises(TnsFormatError, match="truncated"):
        weightstore_from_bytes(blob)
