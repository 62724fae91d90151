"""Binary cube and volume files.

Both start with an 8-byte magic, a little-endian ``u32`` version and a
``u64`` header length, followed by a sorted-key JSON header and a
little-endian complex64 payload. Cube payloads are stored fast time fastest
(azimuth, channel, sample), range-profile payloads range bin fastest, and
volume payloads x fastest (z, y, x).
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import ApertureScan, VirtualElement
from .imaging import ImageVolume
from .rangeproc import RangeProfileSet
from .wavesim import ChirpConfig, DataCube, Stage

CUBE_MAGIC = b"MSARCUBE"
VOLUME_MAGIC = b"MSARVOL\0"
PROFILES_MAGIC = b"MSARPROF"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def _digest(obj):
    return hashlib.sha256(_canonical(obj)).hexdigest()


def _element_rows(elements):
    return [[e.channel_id, e.tx_index, e.rx_index, *e.midpoint, *e.separation] for e in elements]


def _scan_dict(scan: ApertureScan):
    return {"x": list(scan.x_positions), "y": list(scan.y_positions)}


def chirp_hash(chirp: ChirpConfig):
    return _digest(chirp.as_dict())


def geometry_hash(elements, scan):
    return _digest({"elements": _element_rows(elements), "scan": _scan_dict(scan)})


def _write(path, magic, header, payload):
    head = _canonical(header)
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(magic, VERSION, len(head)))
        fh.write(head)
        fh.write(payload)


def _read(path, magic):
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: file too short")
    got, version, hlen = _PREFIX.unpack_from(raw)
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(raw[start:start + hlen])
    except ValueError as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from None
    return header, raw[start + hlen:]


def _fast_header(dims, stage, chirp, elements, scan):
    return {
        "dims": list(dims),
        "stage": stage.tag,
        "chirp": chirp.as_dict(),
        "elements": _element_rows(elements),
        "scan": _scan_dict(scan),
        "chirp_hash": chirp_hash(chirp),
        "geometry_hash": geometry_hash(elements, scan),
    }


def _fast_payload(samples):
    return np.ascontiguousarray(np.transpose(samples, (2, 1, 0))).astype("<c8").tobytes()


def _parse_fast(path, header, payload, chirp, geometry):
    try:
        n_k, n_chan, n_az = (int(v) for v in header["dims"])
        c = ChirpConfig(**header["chirp"])
        elements = tuple(VirtualElement(int(r[0]), int(r[1]), int(r[2]), (r[3], r[4]), (r[5], r[6]))
                         for r in header["elements"])
        scan = ApertureScan(tuple(header["scan"]["x"]), tuple(header["scan"]["y"]))
        stage = Stage.from_tag(header["stage"])
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise FormatError(f"{path}: incomplete header ({exc})") from None
    if chirp_hash(c) != header.get("chirp_hash"):
        raise FormatError(f"{path}: chirp hash mismatch")
    if geometry_hash(elements, scan) != header.get("geometry_hash"):
        raise FormatError(f"{path}: geometry hash mismatch")
    if chirp is not None and chirp_hash(chirp) != header["chirp_hash"]:
        raise FormatError(f"{path}: data was recorded with a different chirp")
    if geometry is not None and geometry_hash(*geometry) != header["geometry_hash"]:
        raise FormatError(f"{path}: data was recorded with a different geometry")
    expected = 8 * n_k * n_chan * n_az
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype="<c8").reshape(n_az, n_chan, n_k)
    return np.transpose(data, (2, 1, 0)).astype(np.complex128), c, elements, scan, stage


def cube_header(cube: DataCube):
    return _fast_header(cube.shape, cube.stage, cube.chirp, cube.elements, cube.scan)


def write_cube(path, cube: DataCube):
    _write(path, CUBE_MAGIC, cube_header(cube), _fast_payload(cube.samples))


def read_cube(path, chirp=None, geometry=None) -> DataCube:
    """Load a cube; ``chirp`` and ``geometry = (elements, scan)`` are checked
    against the stored hashes when given."""
    header, payload = _read(path, CUBE_MAGIC)
    samples, c, elements, scan, stage = _parse_fast(path, header, payload, chirp, geometry)
    try:
        return DataCube(samples, c, elements, scan, stage)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_profiles(path, prof: RangeProfileSet):
    header = _fast_header(prof.profiles.shape, prof.stage, prof.chirp, prof.elements, prof.scan)
    header["window"] = prof.window
    _write(path, PROFILES_MAGIC, header, _fast_payload(prof.profiles))


def read_profiles(path, chirp=None, geometry=None) -> RangeProfileSet:
    header, payload = _read(path, PROFILES_MAGIC)
    data, c, elements, scan, stage = _parse_fast(path, header, payload, chirp, geometry)
    try:
        return RangeProfileSet(data, c, elements, scan, header.get("window", "rect"), stage)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def read_any(path):
    """Cube or profile set, by magic."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic == PROFILES_MAGIC:
        return read_profiles(path)
    return read_cube(path)


def write_volume(path, vol: ImageVolume):
    header = {
        "dims": list(vol.shape),
        "x_axis": vol.x_axis.tolist(),
        "y_axis": vol.y_axis.tolist(),
        "z_planes": vol.z_planes.tolist(),
        "algorithm": vol.algorithm,
    }
    _write(path, VOLUME_MAGIC, header, np.ascontiguousarray(vol.data).astype("<c8").tobytes())


def read_volume(path) -> ImageVolume:
    header, payload = _read(path, VOLUME_MAGIC)
    try:
        dims = tuple(int(v) for v in header["dims"])
        x, y, z = header["x_axis"], header["y_axis"], header["z_planes"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: incomplete header ({exc})") from None
    if len(dims) != 3 or 8 * int(np.prod(dims)) != len(payload):
        raise FormatError(f"{path}: payload does not match dims {dims}")
    data = np.frombuffer(payload, dtype="<c8").reshape(dims).astype(np.complex128)
    return ImageVolume(data, x, y, z, header.get("algorithm", "rma"))
