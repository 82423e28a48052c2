"""Minimal RIFF/WAVE reader+writer for IEEE float32 mono files.

The stdlib wave module only speaks integer PCM, so the handful of chunk
operations needed for format tag 3 live here. Output bytes are fully
deterministic for identical inputs.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

_FMT_IEEE_FLOAT = 3


def write_wav_f32(path, samples: np.ndarray, sr: int = 48000) -> None:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ValueError("expected a mono 1-D sample array")
    data = samples.astype("<f4").tobytes()
    n = samples.size
    fmt = struct.pack("<HHIIHH", _FMT_IEEE_FLOAT, 1, sr, sr * 4, 4, 32)
    fact = struct.pack("<I", n)
    body = (
        b"WAVE"
        + b"fmt " + struct.pack("<I", len(fmt)) + fmt
        + b"fact" + struct.pack("<I", len(fact)) + fact
        + b"data" + struct.pack("<I", len(data)) + data
    )
    blob = b"RIFF" + struct.pack("<I", len(body)) + body
    Path(path).write_bytes(blob)


def read_wav_f32(path) -> tuple[np.ndarray, int]:
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise ValueError(f"{path}: not a RIFF/WAVE file")
    pos = 12
    fmt_chunk = None
    data = None
    while pos + 8 <= len(blob):
        cid = blob[pos:pos + 4]
        (size,) = struct.unpack("<I", blob[pos + 4:pos + 8])
        payload = blob[pos + 8:pos + 8 + size]
        if cid == b"fmt ":
            fmt_chunk = struct.unpack("<HHIIHH", payload[:16])
        elif cid == b"data":
            data = payload
        pos += 8 + size + (size & 1)  # chunks are word-aligned
    if fmt_chunk is None or data is None:
        raise ValueError(f"{path}: missing fmt/data chunk")
    tag, channels, sr, _, _, bits = fmt_chunk
    if tag != _FMT_IEEE_FLOAT or channels != 1 or bits != 32:
        raise ValueError(
            f"{path}: expected IEEE float32 mono, got tag={tag} channels={channels} bits={bits}"
        )
    samples = np.frombuffer(data, dtype="<f4").astype(np.float64)
    return samples, sr
