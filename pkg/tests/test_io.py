import struct

import numpy as np
import pytest

from demul.io import (
    FormatError,
    ibm_to_float,
    load_checkpoint,
    read_dataset,
    read_metric_rows,
    read_segy_gathers,
    save_checkpoint,
    write_dataset,
    write_metric_rows,
    write_pgm,
)
from demul.synthgen import GatherGeometry, ParamSpace, make_pair, make_dataset
from demul.unet import UNetConfig, build, parse_schedule

GEO = GatherGeometry(n_traces=8, n_samples=32)


def ieee_to_ibm_word(value: float) -> int:
    """Test-side IBM encoder: value = (-1)^s * (m/2^24) * 16^(e-64)."""
    if value == 0.0:
        return 0
    sign = 0x80000000 if value < 0 else 0
    v = abs(value)
    exp = 64
    while v >= 1.0:
        v /= 16.0
        exp += 1
    while v < 1.0 / 16.0:
        v *= 16.0
        exp -= 1
    mantissa = int(round(v * (1 << 24)))
    if mantissa == 1 << 24:
        mantissa >>= 4
        exp += 1
    return sign | (exp << 24) | mantissa


def make_segy_bytes(data: np.ndarray, fmt: int, dt_us: int = 4000) -> bytes:
    n_traces, n_samples = data.shape
    out = bytearray(b" " * 3200)
    binary = bytearray(400)
    struct.pack_into(">H", binary, 16, dt_us)
    struct.pack_into(">H", binary, 20, n_samples)
    struct.pack_into(">H", binary, 24, fmt)
    out += binary
    for tr in range(n_traces):
        hdr = bytearray(240)
        struct.pack_into(">H", hdr, 114, n_samples)
        out += hdr
        if fmt == 5:
            out += data[tr].astype(">f4").tobytes()
        else:
            words = np.array([ieee_to_ibm_word(v) for v in data[tr]], dtype=">u4")
            out += words.tobytes()
    return bytes(out)


class TestDataset:
    def test_roundtrip_bitwise(self, tmp_path):
        space = ParamSpace()
        geo = GatherGeometry()
        pairs = [make_pair(space, geo, s) for s in range(3)]
        path = tmp_path / "train.dmlt"
        write_dataset(pairs, 3, geo, path)
        back, geo2 = read_dataset(path)
        assert (geo2.n_traces, geo2.n_samples, geo2.dt) == (64, 256, 0.004)
        for a, b in zip(pairs, back):
            np.testing.assert_array_equal(a.x.data, b.x.data)
            np.testing.assert_array_equal(a.y.data, b.y.data)
            np.testing.assert_array_equal(a.m.data, b.m.data)

    def test_make_dataset_deterministic_bytes(self, tmp_path):
        space = ParamSpace()
        geo = GatherGeometry()
        p1, p2 = tmp_path / "a.dmlt", tmp_path / "b.dmlt"
        make_dataset(space, geo, 4, seed=99, path=p1)
        make_dataset(space, geo, 4, seed=99, path=p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncation_names_pair(self, tmp_path):
        space = ParamSpace()
        geo = GatherGeometry()
        path = tmp_path / "t.dmlt"
        make_dataset(space, geo, 2, seed=0, path=path)
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) - 100])
        with pytest.raises(FormatError, match="pair 1"):
            read_dataset(path)

    def test_empty_dataset_roundtrips(self, tmp_path):
        path = tmp_path / "empty.dmlt"
        write_dataset([], 0, GEO, path)
        pairs, geo = read_dataset(path)
        assert pairs == [] and geo.n_traces == GEO.n_traces

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.dmlt"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(FormatError, match="magic"):
            read_dataset(path)


class TestCheckpoint:
    @pytest.mark.parametrize("down,up", [("maxpool", "bilinear"),
                                         ("strided_conv", "transposed_conv")])
    def test_roundtrip_bit_exact(self, tmp_path, down, up):
        cfg = UNetConfig(n_blocks=5, base_channels=4,
                         kernel_schedule=parse_schedule("12 22"),
                         down_mode=down, up_mode=up)
        model = build(cfg, seed=13)
        path = tmp_path / "model.dmlw"
        save_checkpoint(model, path)
        back = load_checkpoint(path)
        assert back.config == model.config
        params_a, params_b = model.parameters(), back.parameters()
        assert len(params_a) == len(params_b)
        for pa, pb in zip(params_a, params_b):
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_truncated_weights(self, tmp_path):
        model = build(UNetConfig(n_blocks=5, base_channels=2), seed=0)
        path = tmp_path / "model.dmlw"
        save_checkpoint(model, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-40])
        with pytest.raises(FormatError, match="truncated"):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.dmlw"
        path.write_bytes(b"XXXX" + b"\x00" * 20)
        with pytest.raises(FormatError, match="magic"):
            load_checkpoint(path)


class TestIbmFloat:
    def test_reference_word(self):
        assert ibm_to_float(np.array([0x42640000], dtype=np.uint32))[0] == 100.0

    def test_zero_word(self):
        assert ibm_to_float(np.array([0], dtype=np.uint32))[0] == 0.0

    def test_sign_bit(self):
        assert ibm_to_float(np.array([0xC2640000], dtype=np.uint32))[0] == -100.0

    def test_encoder_decoder_roundtrip(self):
        vals = np.array([0.0, 1.0, -1.0, 0.15625, 118.625, -0.0078125, 3.1415926])
        words = np.array([ieee_to_ibm_word(v) for v in vals], dtype=np.uint32)
        np.testing.assert_allclose(ibm_to_float(words), vals, rtol=1e-6, atol=1e-9)


class TestSegy:
    @pytest.mark.parametrize("fmt", [1, 5])
    def test_fixture_roundtrip(self, tmp_path, fmt):
        rng = np.random.default_rng(0)
        data = rng.uniform(-1, 1, size=(16, 32))
        path = tmp_path / "fix.segy"
        path.write_bytes(make_segy_bytes(data, fmt))
        geo = GatherGeometry(n_traces=8, n_samples=32)
        gathers = read_segy_gathers(path, traces_per_gather=8, geometry=geo)
        assert len(gathers) == 2
        np.testing.assert_allclose(gathers[0].data, data[:8], atol=1e-6)
        np.testing.assert_allclose(gathers[1].data, data[8:], atol=1e-6)

    def test_time_center_crop(self, tmp_path):
        data = np.zeros((4, 64))
        data[:, 30] = 7.0
        path = tmp_path / "crop.segy"
        path.write_bytes(make_segy_bytes(data, 5))
        geo = GatherGeometry(n_traces=4, n_samples=32)
        (g,) = read_segy_gathers(path, 4, geometry=geo)
        assert g.data.shape == (4, 32)
        assert np.argmax(g.data[0]) == 30 - 16

    def test_trace_resampling(self, tmp_path):
        data = np.tile(np.linspace(0, 1, 9)[:, None], (1, 32))
        path = tmp_path / "res.segy"
        path.write_bytes(make_segy_bytes(data, 5))
        geo = GatherGeometry(n_traces=5, n_samples=32)
        (g,) = read_segy_gathers(path, 9, geometry=geo)
        np.testing.assert_allclose(g.data[:, 0], [0, 0.25, 0.5, 0.75, 1.0], atol=1e-6)

    def test_unsupported_format_code(self, tmp_path):
        path = tmp_path / "bad.segy"
        blob = bytearray(make_segy_bytes(np.zeros((2, 8)), 5))
        struct.pack_into(">H", blob, 3224, 2)  # two's-complement int: unsupported
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="format"):
            read_segy_gathers(path, 2)

    def test_truncated_trace(self, tmp_path):
        blob = make_segy_bytes(np.ones((2, 16)), 5)
        path = tmp_path / "trunc.segy"
        path.write_bytes(blob[:-10])
        with pytest.raises(FormatError, match="truncated"):
            read_segy_gathers(path, 2)

    def test_inconsistent_trace_length(self, tmp_path):
        blob = bytearray(make_segy_bytes(np.ones((2, 16)), 5))
        trace1_hdr = 3600 + (240 + 64)
        struct.pack_into(">H", blob, trace1_hdr + 114, 99)
        path = tmp_path / "inc.segy"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="samples"):
            read_segy_gathers(path, 2)

    def test_header_too_short(self, tmp_path):
        path = tmp_path / "short.segy"
        path.write_bytes(b"\x00" * 100)
        with pytest.raises(FormatError, match="header"):
            read_segy_gathers(path, 1)


class TestImagesAndCsv:
    def test_pgm_header_and_payload(self, tmp_path):
        img = np.array([[0.0, 0.5], [1.0, 0.25]])
        path = tmp_path / "img.pgm"
        write_pgm(img, path)
        blob = path.read_bytes()
        assert blob.startswith(b"P5\n2 2\n255\n")
        assert blob[-4:] == bytes([0, 128, 255, 64])

    def test_constant_image_is_black(self, tmp_path):
        path = tmp_path / "c.pgm"
        write_pgm(np.full((2, 3), 4.2), path)
        assert path.read_bytes()[-6:] == b"\x00" * 6

    def test_metric_rows_roundtrip(self, tmp_path):
        rows = [(1, 0, "mse", 0.5), (1, 1, "mse", 0.25)]
        path = tmp_path / "log.csv"
        write_metric_rows(rows, path, header=("epoch", "seed", "metric", "value"))
        header, back = read_metric_rows(path)
        assert header == ["epoch", "seed", "metric", "value"]
        assert back[0] == ["1", "0", "mse", "0.5"]
        assert back[1][3] == "0.25"
