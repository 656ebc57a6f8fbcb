import json
import struct

import numpy as np
import pytest

from nullcollide.container import (
    WeightContainer,
    load_container,
    load_tensor,
    save_container,
    save_tensor,
    write_pgm,
)
from nullcollide.errors import (
    DuplicateNameError,
    MalformedHeaderError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
)


def _write_raw(path, header: dict, payload: bytes, raw_header: bytes | None = None):
    raw = raw_header if raw_header is not None else json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        fh.write(payload)


class TestRoundTrip:
    def test_f32_identity_bit_exact(self, tmp_path):
        c = WeightContainer()
        c.add("w", np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32))
        path = str(tmp_path / "c.safetensors")
        save_container(c, path)
        loaded = load_container(path)
        assert loaded.names() == ["w"]
        assert loaded.array("w").dtype == np.float32
        assert loaded.array("w").tobytes() == c.array("w").tobytes()

    def test_empty_container(self, tmp_path):
        path = str(tmp_path / "empty.safetensors")
        save_container(WeightContainer(), path)
        loaded = load_container(path)
        assert loaded.names() == []

    def test_mixed_dtypes_and_metadata(self, tmp_path):
        rng = np.random.default_rng(0)
        c = WeightContainer()
        c.add("a", rng.normal(size=(3, 4)))
        c.add("b", rng.normal(size=(2,)).astype(np.float32))
        c.metadata = {"source": "test", "note": "x"}
        path = str(tmp_path / "m.safetensors")
        save_container(c, path)
        loaded = load_container(path)
        assert loaded.metadata == c.metadata
        for name in ("a", "b"):
            assert loaded.array(name).tobytes() == c.array(name).tobytes()
            assert loaded.array(name).dtype == c.array(name).dtype

    def test_save_is_deterministic(self, tmp_path):
        c = WeightContainer()
        c.add("z", np.ones((2, 2)))
        c.add("a", np.zeros(3, dtype=np.float32))
        p1, p2 = str(tmp_path / "1.st"), str(tmp_path / "2.st")
        save_container(c, p1)
        save_container(c, p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_f64_upconversion_view(self, tmp_path):
        c = WeightContainer()
        c.add("w", np.array([1.5, 2.5], dtype=np.float32))
        path = str(tmp_path / "c.st")
        save_container(c, path)
        loaded = load_container(path)
        up = loaded.as_f64("w")
        assert up.dtype == np.float64
        np.testing.assert_array_equal(up, [1.5, 2.5])


class TestFormatErrors:
    def test_truncated_payload(self, tmp_path):
        path = str(tmp_path / "t.st")
        header = {"w": {"dtype": "F32", "shape": [4], "data_offsets": [0, 16]}}
        _write_raw(path, header, b"\x00" * 8)  # half the declared bytes
        with pytest.raises(TruncatedPayloadError):
            load_container(path)

    def test_header_longer_than_file(self, tmp_path):
        path = str(tmp_path / "h.st")
        with open(path, "wb") as fh:
            fh.write(struct.pack("<Q", 10_000))
            fh.write(b"{}")
        with pytest.raises(MalformedHeaderError):
            load_container(path)

    def test_header_not_json(self, tmp_path):
        path = str(tmp_path / "j.st")
        _write_raw(path, {}, b"", raw_header=b"not json at all")
        with pytest.raises(MalformedHeaderError):
            load_container(path)

    def test_duplicate_names(self, tmp_path):
        path = str(tmp_path / "d.st")
        entry = '{"dtype": "F32", "shape": [1], "data_offsets": [0, 4]}'
        raw = ('{"w": %s, "w": %s}' % (entry, entry)).encode()
        _write_raw(path, {}, b"\x00" * 4, raw_header=raw)
        with pytest.raises(DuplicateNameError):
            load_container(path)

    def test_unsupported_dtype(self, tmp_path):
        path = str(tmp_path / "u.st")
        header = {"w": {"dtype": "I64", "shape": [1], "data_offsets": [0, 8]}}
        _write_raw(path, header, b"\x00" * 8)
        with pytest.raises(UnsupportedDtypeError):
            load_container(path)

    def test_span_shape_mismatch(self, tmp_path):
        path = str(tmp_path / "s.st")
        header = {"w": {"dtype": "F32", "shape": [3], "data_offsets": [0, 8]}}
        _write_raw(path, header, b"\x00" * 8)
        with pytest.raises(MalformedHeaderError):
            load_container(path)

    def test_add_rejects_int_arrays(self):
        c = WeightContainer()
        with pytest.raises(UnsupportedDtypeError):
            c.add("w", np.arange(4))

    def test_add_rejects_duplicates(self):
        c = WeightContainer()
        c.add("w", np.zeros(1))
        with pytest.raises(DuplicateNameError):
            c.add("w", np.zeros(1))


class TestNpy:
    def test_round_trip(self, tmp_path):
        path = str(tmp_path / "x.npy")
        x = np.arange(6, dtype=np.float32).reshape(2, 3)
        save_tensor(path, x)
        back = load_tensor(path)
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back, x)

    def test_version_1_0_header(self, tmp_path):
        path = str(tmp_path / "x.npy")
        save_tensor(path, np.zeros((2, 2)))
        with open(path, "rb") as fh:
            magic = fh.read(8)
        assert magic[:6] == b"\x93NUMPY"
        assert magic[6:8] == b"\x01\x00"

    def test_rejects_int_dtype(self, tmp_path):
        path = str(tmp_path / "i.npy")
        np.save(path, np.arange(3))
        with pytest.raises(UnsupportedDtypeError):
            load_tensor(path)


class TestPgm:
    def test_writes_valid_header_and_records_normalization(self, tmp_path):
        path = str(tmp_path / "p.pgm")
        arr = np.linspace(-1.0, 1.0, 12).reshape(3, 4)
        info = write_pgm(path, arr)
        blob = open(path, "rb").read()
        assert blob.startswith(b"P5\n4 3\n255\n")
        assert len(blob) == len(b"P5\n4 3\n255\n") + 12
        assert info["min"] == pytest.approx(-1.0)
        assert info["max"] == pytest.approx(1.0)

    def test_channel_mean_for_3d(self, tmp_path):
        path = str(tmp_path / "c.pgm")
        info = write_pgm(path, np.ones((3, 2, 2)))
        assert info["channel_reduction"] == "channel_mean"

    def test_constant_image(self, tmp_path):
        path = str(tmp_path / "k.pgm")
        write_pgm(path, np.full((2, 2), 7.0))
        blob = open(path, "rb").read()
        assert blob.endswith(b"\x00" * 4)
