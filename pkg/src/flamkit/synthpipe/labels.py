"""Activity curves on the 50 Hz label grid: rasterization, RLE, smoothing."""

from __future__ import annotations

import numpy as np

LABEL_RATE = 50
N_FRAMES = 500  # 10 s


def rasterize_segments(segments, n_frames: int = N_FRAMES) -> np.ndarray:
    """Mark frames whose [i/50, (i+1)/50) span overlaps any segment with positive length.

    Boundaries sitting on a frame edge (within 1e-9 frames, which absorbs the
    seconds->frames float round trip) count for the frame they open, not the
    one they merely touch.
    """
    curve = np.zeros(n_frames, dtype=bool)
    eps = 1e-9
    for on, off in segments:
        if off <= on:
            continue
        start = int(np.floor(on * LABEL_RATE + eps))
        stop = int(np.ceil(off * LABEL_RATE - eps))
        curve[max(start, 0):min(stop, n_frames)] = True
    return curve


def runs(curve: np.ndarray) -> list[tuple[int, int]]:
    """Half-open [start, stop) index pairs of True runs."""
    curve = np.asarray(curve, dtype=bool)
    if curve.size == 0:
        return []
    edges = np.flatnonzero(np.diff(curve.astype(np.int8)))
    starts = list(edges[curve[edges + 1]] + 1)
    stops = list(edges[~curve[edges + 1]] + 1)
    if curve[0]:
        starts.insert(0, 0)
    if curve[-1]:
        stops.append(curve.size)
    return list(zip(starts, stops))


def segments_from_curve(curve: np.ndarray) -> list[list[float]]:
    return [[start / LABEL_RATE, stop / LABEL_RATE] for start, stop in runs(curve)]


def rle_encode(curve: np.ndarray) -> list[int]:
    """Run lengths, alternating starting with an inactive run (possibly 0)."""
    curve = np.asarray(curve, dtype=bool)
    out: list[int] = []
    value = False
    i = 0
    while i < curve.size:
        j = i
        while j < curve.size and curve[j] == value:
            j += 1
        out.append(j - i)
        value = not value
        i = j
    if not out:
        out = [0]
    return out


def rle_decode(rle, n_frames: int = N_FRAMES) -> np.ndarray:
    curve = np.zeros(n_frames, dtype=bool)
    pos = 0
    value = False
    for length in rle:
        if length < 0 or pos + length > n_frames:
            raise ValueError("run-length encoding does not fit the label grid")
        curve[pos:pos + length] = value
        pos += length
        value = not value
    if pos != n_frames:
        raise ValueError("run-length encoding does not cover the label grid")
    return curve


def smooth_labels(curve: np.ndarray) -> np.ndarray:
    """Two fixed cleanup passes, in order, one pass each.

    1. Inactive runs shorter than 10 frames strictly between active runs are
       re-marked active (brief dips inside an event are not real gaps).
    2. Active runs shorter than 2 frames are removed, but only when the curve
       carries more than 10 active frames in total (a tiny blip next to a real
       event is noise; a tiny event on its own is kept).
    Applying the function twice gives the same result as applying it once.
    """
    out = np.asarray(curve, dtype=bool).copy()

    active = runs(out)
    for (_, stop_prev), (start_next, _) in zip(active, active[1:]):
        if start_next - stop_prev < 10:
            out[stop_prev:start_next] = True

    if int(out.sum()) > 10:
        for start, stop in runs(out):
            if stop - start < 2:
                out[start:stop] = False
    return out
