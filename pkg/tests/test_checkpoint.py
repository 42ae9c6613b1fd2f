"""Checkpoint format tests: round trips, byte identity, corruption detection."""

import hashlib
import json
import struct

import numpy as np
import pytest

from stockcast.checkpoint import (
    FORMAT_VERSION,
    MAGIC,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from stockcast.models import CatFeature, ModelSpec, build_model


def _spec():
    return ModelSpec(kind="stock2vec", cat_features=(CatFeature("sym", 5),),
                     n_continuous=2, hidden_sizes=(6, 3), hidden_dropout=(0.0, 0.0))


def _save(path, **overrides):
    spec = overrides.pop("spec", _spec())
    model = build_model(spec, seed=1)
    kwargs = dict(seed=1, best_valid=0.25,
                  optimizer=None, vocab=None, extra=None)
    kwargs.update(overrides)
    save_checkpoint(path, spec, model.state_arrays(), **kwargs)
    return model


def test_round_trip_restores_arrays_exactly(tmp_path):
    path = tmp_path / "m.s2vf"
    model = _save(path)
    ck = load_checkpoint(path)
    assert ck.version == FORMAT_VERSION
    assert ck.seed == 1 and ck.best_valid == 0.25
    assert ck.spec == _spec()
    original = model.state_arrays()
    assert set(ck.arrays) == set(original)
    for name, arr in original.items():
        np.testing.assert_array_equal(ck.arrays[name], arr)
        assert ck.arrays[name].dtype == arr.dtype


def test_round_trip_model_predicts_identically(tmp_path):
    path = tmp_path / "m.s2vf"
    model = _save(path)
    ck = load_checkpoint(path)
    clone = build_model(ck.spec, seed=99)
    clone.load_state_arrays(ck.arrays)
    model.eval(), clone.eval()
    r = np.random.default_rng(0)
    cats = [r.integers(0, 5, size=8)]
    conts = r.normal(size=(8, 2)).astype(np.float32)
    np.testing.assert_array_equal(model.predict(cats, conts, None).data,
                                  clone.predict(cats, conts, None).data)


def test_save_load_save_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.s2vf", tmp_path / "b.s2vf"
    _save(a, optimizer={"lr": 1e-3, "t": 7, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8,
                        "m": {"head.out.bias": np.zeros(1, dtype=np.float32)},
                        "v": {"head.out.bias": np.ones(1, dtype=np.float32)}},
          vocab={"sym": ["A", "B", "C", "D"]}, extra={"note": "x"})
    ck = load_checkpoint(a)
    save_checkpoint(b, ck.spec, ck.arrays, seed=ck.seed, best_valid=ck.best_valid,
                    optimizer=ck.optimizer, vocab=ck.vocab, extra=ck.extra)
    ha = hashlib.sha256(a.read_bytes()).hexdigest()
    hb = hashlib.sha256(b.read_bytes()).hexdigest()
    assert ha == hb


def test_optimizer_state_round_trips(tmp_path):
    path = tmp_path / "m.s2vf"
    m = {"w": np.arange(3, dtype=np.float32)}
    v = {"w": np.arange(3, dtype=np.float32) ** 2}
    _save(path, optimizer={"lr": 5e-4, "t": 42, "beta1": 0.9, "beta2": 0.999,
                           "eps": 1e-8, "m": m, "v": v})
    ck = load_checkpoint(path)
    assert ck.optimizer["t"] == 42 and ck.optimizer["lr"] == 5e-4
    np.testing.assert_array_equal(ck.optimizer["m"]["w"], m["w"])
    np.testing.assert_array_equal(ck.optimizer["v"]["w"], v["w"])
    # optimizer slabs must not leak into the model arrays
    assert all(not k.startswith("__optim__.") for k in ck.arrays)


def test_vocab_and_extra_round_trip(tmp_path):
    path = tmp_path / "m.s2vf"
    _save(path, vocab={"sym": ["AAPL", "MSFT"]}, extra={"stage": "finetune", "k": 3})
    ck = load_checkpoint(path)
    assert ck.vocab == {"sym": ["AAPL", "MSFT"]}
    assert ck.extra == {"stage": "finetune", "k": 3}


def test_expected_spec_mismatch_is_rejected(tmp_path):
    path = tmp_path / "m.s2vf"
    _save(path)
    other = ModelSpec(kind="ts-lstm", window=8)
    with pytest.raises(CheckpointError, match="spec"):
        load_checkpoint(path, expect_spec=other)
    assert load_checkpoint(path, expect_spec=_spec()).seed == 1


def test_bad_magic_is_rejected(tmp_path):
    path = tmp_path / "m.s2vf"
    _save(path)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"XXXX"
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_unknown_version_is_rejected(tmp_path):
    path = tmp_path / "m.s2vf"
    _save(path)
    blob = bytearray(path.read_bytes())
    blob[4:8] = struct.pack("<I", 99)
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_truncated_payload_is_rejected(tmp_path):
    path = tmp_path / "m.s2vf"
    _save(path)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 5])
    with pytest.raises(CheckpointError, match="truncat"):
        load_checkpoint(path)


def test_truncated_header_is_rejected(tmp_path):
    path = tmp_path / "m.s2vf"
    _save(path)
    path.write_bytes(path.read_bytes()[:10])
    with pytest.raises(CheckpointError, match="truncat"):
        load_checkpoint(path)


def test_corrupt_header_json_is_rejected(tmp_path):
    path = tmp_path / "m.s2vf"
    _save(path)
    blob = bytearray(path.read_bytes())
    header_len = struct.unpack("<I", blob[8:12])[0]
    blob[12] = ord("!")  # clobber first header byte
    assert header_len > 0
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="header"):
        load_checkpoint(path)


def test_tampered_arrays_fail_spec_hash_check(tmp_path):
    path = tmp_path / "m.s2vf"
    _save(path)
    blob = bytearray(path.read_bytes())
    header_len = struct.unpack("<I", blob[8:12])[0]
    header = json.loads(blob[12:12 + header_len].decode())
    header["spec_hash"] = "0" * 64
    new_header = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    out = blob[:8] + struct.pack("<I", len(new_header)) + new_header + blob[12 + header_len:]
    path.write_bytes(bytes(out))
    with pytest.raises(CheckpointError, match="hash"):
        load_checkpoint(path)


def test_unsupported_dtype_is_rejected(tmp_path):
    path = tmp_path / "m.s2vf"
    with pytest.raises(CheckpointError, match="dtype"):
        save_checkpoint(path, _spec(), {"w": np.arange(3, dtype=np.int64)},
                        seed=0, best_valid=None, optimizer=None, vocab=None, extra=None)


def test_float64_arrays_are_supported(tmp_path):
    path = tmp_path / "m.s2vf"
    arrays = {"w": np.linspace(0, 1, 7, dtype=np.float64)}
    save_checkpoint(path, _spec(), arrays, seed=0, best_valid=None,
                    optimizer=None, vocab=None, extra=None)
    ck = load_checkpoint(path)
    assert ck.arrays["w"].dtype == np.float64
    np.testing.assert_array_equal(ck.arrays["w"], arrays["w"])


def test_missing_file_is_a_checkpoint_error(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.s2vf")
