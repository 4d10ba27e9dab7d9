"""Persistence: dataset container, model checkpoints, SEG-Y ingestion,
grayscale image export, and metric CSV logs.

Container formats use little-endian integers and IEEE f32 payloads; SEG-Y is
big-endian per the standard. All round-trips are bitwise exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .nn import Objective
from .synthgen import Gather, GatherGeometry, GatherPair
from .unet import Model, UNetConfig, build

DATASET_MAGIC = b"DMLT"
DATASET_VERSION = 1
CHECKPOINT_MAGIC = b"DMLW"
CHECKPOINT_VERSION = 1

_DATASET_HEADER = struct.Struct("<4sHIHHII")  # magic, ver, n_pairs, n_tr, n_samp, dt_us, flags


class FormatError(IOError):
    """Malformed or truncated container / SEG-Y input."""


# ---------------------------------------------------------------------------
# dataset container


def write_dataset(pairs: Iterable[GatherPair], n: int, geometry: GatherGeometry,
                  path) -> None:
    """n (x, y, m) triplets as little-endian f32 blobs in index order."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_DATASET_HEADER.pack(DATASET_MAGIC, DATASET_VERSION, n,
                                      geometry.n_traces, geometry.n_samples,
                                      round(geometry.dt * 1e6), 0))
        count = 0
        for pair in pairs:
            for g in (pair.x, pair.y, pair.m):
                fh.write(np.ascontiguousarray(g.data, dtype="<f4").tobytes())
            count += 1
        if count != n:
            raise FormatError(f"writer promised {n} pairs but produced {count}")


def read_dataset(path) -> tuple[list[GatherPair], GatherGeometry]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _DATASET_HEADER.size:
        raise FormatError(f"{path}: too short for a dataset header")
    magic, version, n_pairs, n_tr, n_samp, dt_us, _flags = _DATASET_HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {DATASET_MAGIC!r}")
    if version != DATASET_VERSION:
        raise FormatError(f"{path}: unsupported dataset version {version}")
    if n_tr == 0 or n_samp == 0:
        raise FormatError(f"{path}: zero-sized geometry in header")
    geometry = GatherGeometry(n_traces=n_tr, n_samples=n_samp, dt=dt_us / 1e6)
    frame = n_tr * n_samp * 4
    pairs = []
    off = _DATASET_HEADER.size
    for i in range(n_pairs):
        if off + 3 * frame > len(raw):
            raise FormatError(f"{path}: truncated at pair {i} of {n_pairs}")
        bufs = []
        for _ in range(3):
            arr = np.frombuffer(raw, dtype="<f4", count=n_tr * n_samp, offset=off)
            bufs.append(arr.reshape(n_tr, n_samp).copy())
            off += frame
        pairs.append(GatherPair(x=Gather(bufs[0], geometry), y=Gather(bufs[1], geometry),
                                m=Gather(bufs[2], geometry)))
    return pairs, geometry


def iter_dataset_arrays(path) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """(x, y, m) arrays per pair, for callers that do not need Gather wrappers."""
    pairs, _ = read_dataset(path)
    for p in pairs:
        yield p.x.data, p.y.data, p.m.data


# ---------------------------------------------------------------------------
# model checkpoints


def save_checkpoint(model: Model, path) -> None:
    """Magic, version, JSON config block, then f32 weight blobs in build order."""
    cfg = model.config
    cfg_doc = {
        "n_blocks": cfg.n_blocks,
        "base_channels": cfg.base_channels,
        "kernel_schedule": [list(f) for f in cfg.kernel_schedule],
        "down_mode": cfg.down_mode,
        "up_mode": cfg.up_mode,
        "objective": cfg.objective.value,
        "in_channels": cfg.in_channels,
        "input_shape": list(cfg.input_shape),
        "seed": model.seed,
    }
    blob = json.dumps(cfg_doc, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path) -> Model:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<H", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack_from("<I", raw, 6)
    try:
        doc = json.loads(raw[10:10 + cfg_len])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: corrupt config block: {exc}") from exc
    config = UNetConfig(
        n_blocks=doc["n_blocks"],
        base_channels=doc["base_channels"],
        kernel_schedule=[tuple(f) for f in doc["kernel_schedule"]],
        down_mode=doc["down_mode"],
        up_mode=doc["up_mode"],
        objective=Objective(doc["objective"]),
        in_channels=doc["in_channels"],
        input_shape=tuple(doc["input_shape"]),
    )
    model = build(config, seed=doc.get("seed", 0))
    off = 10 + cfg_len
    for p in model.parameters():
        nbytes = p.data.size * 4
        if off + nbytes > len(raw):
            raise FormatError(f"{path}: truncated weight blob")
        p.data = np.frombuffer(raw, dtype="<f4", count=p.data.size,
                               offset=off).reshape(p.data.shape).copy()
        off += nbytes
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes after weights")
    return model


# ---------------------------------------------------------------------------
# SEG-Y subset reader

_SEGY_TEXT = 3200
_SEGY_BIN = 400
_SEGY_TRACE_HEADER = 240


def ibm_to_float(words: np.ndarray) -> np.ndarray:
    """IBM System/360 hex floats -> float64: (-1)^s * (m / 2^24) * 16^(e-64)."""
    words = words.astype(np.uint32)
    sign = np.where(words >> 31, -1.0, 1.0)
    exponent = ((words >> 24) & 0x7F).astype(np.int64) - 64
    mantissa = (words & 0x00FFFFFF).astype(np.float64) / float(1 << 24)
    return sign * mantissa * np.power(16.0, exponent, dtype=np.float64)


def read_segy_gathers(path, traces_per_gather: int,
                      geometry: GatherGeometry | None = None) -> list[Gather]:
    """Read a rev-1 SEG-Y file and group consecutive traces into gathers.

    Supports sample format 1 (IBM float) and 5 (IEEE f32), fixed-length
    traces. Each gather is adapted to `geometry` (default 64x256 @ 4 ms):
    the time axis is center-cropped (or zero-padded), the trace axis
    linearly resampled.
    """
    if traces_per_gather < 1:
        raise ValueError("traces_per_gather must be >= 1")
    raw = Path(path).read_bytes()
    if len(raw) < _SEGY_TEXT + _SEGY_BIN:
        raise FormatError(f"{path}: shorter than the SEG-Y textual+binary headers")
    # binary header bytes 3217-3226 (1-based): dt, orig dt, ns, orig ns, format
    dt_us, _, n_samples, _, fmt = struct.unpack(">HHHHH", raw[3216:3226])
    if fmt not in (1, 5):
        raise FormatError(f"{path}: unsupported SEG-Y sample format code {fmt} "
                          "(only 1=IBM float and 5=IEEE f32)")
    if n_samples == 0:
        raise FormatError(f"{path}: binary header declares zero samples per trace")
    off = _SEGY_TEXT + _SEGY_BIN
    frame = _SEGY_TRACE_HEADER + 4 * n_samples
    traces = []
    while off < len(raw):
        if off + frame > len(raw):
            raise FormatError(f"{path}: truncated trace after {len(traces)} traces")
        ns_header = struct.unpack(">H", raw[off + 114:off + 116])[0]
        if ns_header and ns_header != n_samples:
            raise FormatError(
                f"{path}: trace {len(traces)} has {ns_header} samples, expected {n_samples}")
        payload = raw[off + _SEGY_TRACE_HEADER:off + frame]
        if fmt == 5:
            traces.append(np.frombuffer(payload, dtype=">f4").astype(np.float64))
        else:
            words = np.frombuffer(payload, dtype=">u4")
            traces.append(ibm_to_float(words))
        off += frame
    if not traces:
        raise FormatError(f"{path}: no traces")
    geometry = geometry or GatherGeometry()
    data = np.stack(traces)
    gathers = []
    for start in range(0, len(traces) - traces_per_gather + 1, traces_per_gather):
        block = data[start:start + traces_per_gather]
        gathers.append(Gather(_regrid(block, geometry).astype(np.float32), geometry,
                              meta={"source_trace_offset": start, "source_dt_us": dt_us}))
    return gathers


def _regrid(block: np.ndarray, geometry: GatherGeometry) -> np.ndarray:
    """Center-crop/pad time; linear resample the trace axis."""
    n_tr, n_s = block.shape
    target_s = geometry.n_samples
    if n_s >= target_s:
        lo = (n_s - target_s) // 2
        block = block[:, lo:lo + target_s]
    else:
        lo = (target_s - n_s) // 2
        padded = np.zeros((n_tr, target_s))
        padded[:, lo:lo + n_s] = block
        block = padded
    if n_tr == geometry.n_traces:
        return block
    src = np.arange(n_tr, dtype=np.float64)
    dst = np.linspace(0, n_tr - 1, geometry.n_traces)
    i0 = np.clip(np.floor(dst).astype(int), 0, n_tr - 2)
    frac = dst - i0
    return block[i0] * (1 - frac)[:, None] + block[i0 + 1] * frac[:, None]


# ---------------------------------------------------------------------------
# image + CSV export


def write_pgm(image: np.ndarray, path) -> None:
    """8-bit binary PGM with per-image min-max normalization."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi > lo:
        img = (img - lo) / (hi - lo)
    else:
        img = np.zeros_like(img)
    gray = np.round(img * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode())
        fh.write(gray.tobytes())


def write_metric_rows(rows: Iterable[tuple], path, header: tuple[str, ...]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def read_metric_rows(path) -> tuple[list[str], list[list[str]]]:
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]
