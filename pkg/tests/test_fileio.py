import struct

import numpy as np
import pytest

from mimosar import fileio as fio
from mimosar import geometry as geo
from mimosar import imaging as im
from mimosar import rangeproc as rp
from mimosar import wavesim as ws
from mimosar.errors import FormatError


@pytest.fixture
def cube(short_chirp, small_array):
    scene = ws.Scene.point(0.01, 0.0, 0.4) + ws.Scene.point(-0.01, 0.003, 0.5, 0.5j)
    raw = ws.simulate_beat(scene, small_array, geo.scan_positions(3, 1e-3), short_chirp)
    return ws.inject_channel_errors(raw, ws.ChannelError.random(16, 3, range_max=0.01))


def _roundtrip_bytes(tmp_path, write, read, obj):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    write(a, obj)
    back = read(a)
    write(b, back)
    assert a.read_bytes() == b.read_bytes()
    return back


def test_cube_roundtrip_bitwise(tmp_path, cube):
    back = _roundtrip_bytes(tmp_path, fio.write_cube, fio.read_cube, cube)
    assert np.array_equal(back.samples, cube.samples.astype(np.complex64))
    assert back.chirp == cube.chirp
    assert back.elements == cube.elements
    assert back.scan == cube.scan
    assert back.stage == cube.stage


def test_profiles_roundtrip_bitwise(tmp_path, cube):
    prof, _ = rp.range_align(rp.range_compress(cube, 128, "hann"))
    back = _roundtrip_bytes(tmp_path, fio.write_profiles, fio.read_profiles, prof)
    assert back.window == "hann" and back.stage == ws.Stage.ALIGNED
    assert back.n_fft == 128
    assert isinstance(fio.read_any(tmp_path / "a.bin"), rp.RangeProfileSet)


def test_volume_roundtrip_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.normal(size=(2, 3, 4)) + 1j * rng.normal(size=(2, 3, 4))
    vol = im.ImageVolume(data, np.linspace(-1, 1, 4), np.linspace(0, 1, 3), [0.3, 0.31], "bp")
    back = _roundtrip_bytes(tmp_path, fio.write_volume, fio.read_volume, vol)
    assert np.array_equal(back.data, data.astype(np.complex64))
    assert np.array_equal(back.z_planes, vol.z_planes) and back.algorithm == "bp"


def test_layout_is_little_endian_fast_time_fastest(tmp_path, cube):
    p = tmp_path / "c.bin"
    fio.write_cube(p, cube)
    raw = p.read_bytes()
    magic, version, hlen = struct.unpack_from("<8sIQ", raw)
    assert (magic, version) == (b"MSARCUBE", 1)
    payload = raw[20 + hlen:]
    first = np.frombuffer(payload[:16], dtype="<c8")
    assert np.array_equal(first, cube.samples[:2, 0, 0].astype(np.complex64))


def test_determinism(tmp_path, short_chirp, small_array):
    def make(path):
        c = ws.simulate_beat(ws.Scene.point(0, 0, 0.4), small_array, geo.scan_positions(2, 1e-3), short_chirp)
        c = ws.inject_channel_errors(c, ws.ChannelError.random(16, 9, range_max=0.01))
        fio.write_cube(path, ws.add_noise(c, 20.0, 9))
        return path.read_bytes()
    assert make(tmp_path / "x.bin") == make(tmp_path / "y.bin")


def test_hash_checks(tmp_path, cube, nominal_chirp, tidep_elements):
    p = tmp_path / "c.bin"
    fio.write_cube(p, cube)
    assert fio.read_cube(p, chirp=cube.chirp, geometry=(cube.elements, cube.scan)).shape == cube.shape
    with pytest.raises(FormatError, match="different chirp"):
        fio.read_cube(p, chirp=nominal_chirp)
    with pytest.raises(FormatError, match="different geometry"):
        fio.read_cube(p, geometry=(tidep_elements, cube.scan))
    assert fio.chirp_hash(cube.chirp) == fio.chirp_hash(ws.ChirpConfig(**cube.chirp.as_dict()))


def test_corrupt_files(tmp_path, cube):
    p = tmp_path / "c.bin"
    fio.write_cube(p, cube)
    raw = p.read_bytes()
    cases = {
        "short": raw[:10],
        "magic": b"XXXXXXXX" + raw[8:],
        "version": raw[:8] + struct.pack("<I", 7) + raw[12:],
        "truncated": raw[:-8],
        "header": raw[:20] + b"[" + raw[21:],
    }
    for name, blob in cases.items():
        bad = tmp_path / f"{name}.bin"
        bad.write_bytes(blob)
        with pytest.raises(FormatError):
            fio.read_cube(bad)
    # tampered chirp without a matching hash
    hlen = struct.unpack_from("<8sIQ", raw)[2]
    header = raw[20:20 + hlen].replace(b'"fs":1600000.0', b'"fs":1600001.0')
    assert header != raw[20:20 + hlen]
    bad = tmp_path / "tamper.bin"
    bad.write_bytes(raw[:20] + header + raw[20 + hlen:])
    with pytest.raises(FormatError, match="hash"):
        fio.read_cube(bad)
    with pytest.raises(FormatError):
        fio.read_volume(p)
