import struct

import numpy as np
import pytest

from decomp_embed import container
from decomp_embed.checkpoint import (
    MAGIC,
    VERSION,
    load_checkpoint,
    load_compressed,
    save_checkpoint,
    save_compressed,
)
from decomp_embed.errors import IntegrityError, VersionError
from decomp_embed.optim import make_optimizer
from decomp_embed.tensor import make_rng

from test_train import batch, tiny_model


def trained_tiny(dtype=np.float32):
    model = tiny_model(seed=3, dtype=dtype)
    opt = make_optimizer("adagrad", 0.1)
    cats, dense, y = batch(seed=4)
    for _ in range(3):
        logits, cache = model.forward(cats, dense, cache=True)
        model.apply(model.backward(cache, (1 / (1 + np.exp(-logits)) - y) / len(y)), opt)
    return model, opt


class TestRoundTrip:
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_parameters_bit_exact(self, tmp_path, dtype):
        model, opt = trained_tiny(dtype)
        path = tmp_path / "m.cemb"
        save_checkpoint(model, path, opt, seed=11, dataset={"fingerprint": "abc"})
        ck = load_checkpoint(path)
        assert ck.seed == 11
        assert ck.dataset == {"fingerprint": "abc"}
        for a, b in zip(model.all_params().items(), ck.model.all_params().items()):
            assert a[0] == b[0]
            assert a[1].dtype == b[1].dtype
            assert a[1].tobytes() == b[1].tobytes()
        assert sorted(ck.optimizer.state) == sorted(opt.state)
        for k, v in opt.state.items():
            assert v.tobytes() == ck.optimizer.state[k].tobytes()

    def test_kinds_and_configs_survive(self, tmp_path):
        model, _ = trained_tiny()
        save_checkpoint(model, tmp_path / "m.cemb")
        ck = load_checkpoint(tmp_path / "m.cemb")
        assert [e.kind for e in ck.model.embeddings] == [e.kind for e in model.embeddings]
        assert [e.config for e in ck.model.embeddings] == [e.config for e in model.embeddings]
        assert ck.optimizer is None

    def test_lookups_and_predictions_bit_exact(self, tmp_path):
        model, _ = trained_tiny()
        save_checkpoint(model, tmp_path / "m.cemb")
        loaded = load_checkpoint(tmp_path / "m.cemb").model
        cats, dense, _ = batch(seed=9, size=40)
        for e0, e1 in zip(model.embeddings, loaded.embeddings):
            assert e0.lookup(cats[:, 0]).tobytes() == e1.lookup(cats[:, 0]).tobytes()
        assert model.predict(cats, dense).tobytes() == loaded.predict(cats, dense).tobytes()

    def test_resave_is_byte_identical(self, tmp_path):
        model, opt = trained_tiny()
        save_checkpoint(model, tmp_path / "a.cemb", opt)
        ck = load_checkpoint(tmp_path / "a.cemb")
        save_checkpoint(ck.model, tmp_path / "b.cemb", ck.optimizer)
        assert (tmp_path / "a.cemb").read_bytes() == (tmp_path / "b.cemb").read_bytes()


class TestCorruption:
    @pytest.fixture
    def saved(self, tmp_path):
        model, opt = trained_tiny()
        path = tmp_path / "m.cemb"
        save_checkpoint(model, path, opt)
        return path

    @pytest.mark.parametrize("keep", [0, 3, 11, 100, -1])
    def test_truncated(self, saved, keep):
        data = saved.read_bytes()
        saved.write_bytes(data[:keep] if keep >= 0 else data[:-1])
        with pytest.raises(IntegrityError):
            load_checkpoint(saved)

    def test_flipped_payload_byte(self, saved):
        data = bytearray(saved.read_bytes())
        data[len(data) // 2] ^= 0x40
        saved.write_bytes(bytes(data))
        with pytest.raises(IntegrityError, match="checksum"):
            load_checkpoint(saved)

    def test_flipped_version_byte(self, saved):
        data = bytearray(saved.read_bytes())
        data[4] ^= 0x02
        saved.write_bytes(bytes(data))
        with pytest.raises(VersionError) as info:
            load_checkpoint(saved)
        assert f"expected {VERSION}" in str(info.value)
        assert f"found {VERSION ^ 0x02}" in str(info.value)

    def test_wrong_magic(self, saved):
        data = saved.read_bytes()
        saved.write_bytes(b"XXXX" + data[4:])
        with pytest.raises(IntegrityError, match="magic"):
            load_checkpoint(saved)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_checkpoint(tmp_path / "absent.cemb")

    def test_compressed_artifact_is_not_a_model(self, tmp_path):
        save_compressed(tmp_path / "c.cemb", "int4-minmax", [({"k": 1}, {"a": np.zeros(3)})], {})
        with pytest.raises(IntegrityError):
            load_checkpoint(tmp_path / "c.cemb")


class TestLayout:
    def test_prefix_fields(self, tmp_path):
        model, _ = trained_tiny()
        save_checkpoint(model, tmp_path / "m.cemb")
        raw = (tmp_path / "m.cemb").read_bytes()
        magic, version, header_len = struct.unpack_from("<4sII", raw)
        assert magic == MAGIC and version == VERSION
        assert raw[12:12 + header_len].startswith(b"{")

    def test_array_payload_is_little_endian(self, tmp_path):
        a = np.arange(6, dtype=">f4").reshape(2, 3)
        blob = container.dumps(b"TEST", 1, {}, {"a": a})
        _, arrays = container.loads(blob, b"TEST", 1)
        assert arrays["a"].dtype.str == "<f4"
        np.testing.assert_array_equal(arrays["a"], a)
        assert np.arange(6, dtype="<f4").tobytes() in blob

    def test_compressed_round_trip(self, tmp_path):
        rng = make_rng(0)
        tables = [({"strategy": "minmax", "shape": [4, 2]},
                   {"packed": rng.integers(0, 255, 4, dtype=np.uint8), "scale": rng.random(4)})]
        save_compressed(tmp_path / "c.cemb", "int4-minmax", tables, {"note": 1})
        meta, got = load_compressed(tmp_path / "c.cemb")
        assert meta["method"] == "int4-minmax" and meta["report"] == {"note": 1}
        for k, v in tables[0][1].items():
            assert got[0][1][k].tobytes() == v.tobytes()
