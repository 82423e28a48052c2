"""A-weighted level measurement.

The weighting curve is the standard acoustics one: four zeros at DC and the
classic pole pairs, gain-normalized to 0 dB at 1 kHz, discretized with the
bilinear transform at 48 kHz and applied as second-order sections. Levels are
reported in dBFS with full scale = 1.0, so a full-scale 1 kHz sine sits near
-3 dBFS (its RMS).
"""

from __future__ import annotations

import numpy as np
from scipy import signal

SR = 48000
RMS_WINDOW = 2400
RMS_HOP = 1200
LABEL_RATE = 50
SILENCE_DB = -240.0

_sos_cache: dict[int, np.ndarray] = {}


def _design_a_weighting(sr: int) -> np.ndarray:
    f1, f2, f3, f4 = 20.598997, 107.65265, 737.86223, 12194.217
    z = [0.0, 0.0, 0.0, 0.0]
    p = [
        -2 * np.pi * f1, -2 * np.pi * f1,
        -2 * np.pi * f2, -2 * np.pi * f3,
        -2 * np.pi * f4, -2 * np.pi * f4,
    ]
    # unity gain at 1 kHz
    s = 2j * np.pi * 1000.0
    h = s ** 4 / np.prod([s - pk for pk in p])
    k = 1.0 / abs(h)
    zd, pd, kd = signal.bilinear_zpk(z, p, k, fs=sr)
    return signal.zpk2sos(zd, pd, kd)


def a_weight(x: np.ndarray, sr: int = SR) -> np.ndarray:
    if sr not in _sos_cache:
        _sos_cache[sr] = _design_a_weighting(sr)
    return signal.sosfilt(_sos_cache[sr], np.asarray(x, dtype=np.float64))


def _rms_db(x: np.ndarray) -> float:
    rms = float(np.sqrt(np.mean(x * x))) if x.size else 0.0
    if rms <= 0.0:
        return SILENCE_DB
    return max(20.0 * np.log10(rms), SILENCE_DB)


def a_rms_db(x: np.ndarray, mask: np.ndarray | None = None, sr: int = SR) -> float:
    """Overall A-weighted RMS level in dBFS, optionally over masked samples only."""
    w = a_weight(x, sr)
    if mask is not None:
        w = w[np.asarray(mask, dtype=bool)]
    return _rms_db(w)


def windowed_rms_db(x: np.ndarray, window: int = RMS_WINDOW, hop: int = RMS_HOP) -> np.ndarray:
    """A-weighted RMS per sliding window, in dBFS. One value per full window."""
    w = a_weight(x)
    n = (len(w) - window) // hop + 1
    if n <= 0:
        return np.array([_rms_db(w)])
    sq = w * w
    csum = np.concatenate([[0.0], np.cumsum(sq)])
    starts = np.arange(n) * hop
    means = (csum[starts + window] - csum[starts]) / window
    out = np.full(n, SILENCE_DB)
    nz = means > 0
    out[nz] = np.maximum(10.0 * np.log10(means[nz]), SILENCE_DB)
    return out


def _windows_to_frames(levels: np.ndarray, n_frames: int, threshold_db: float) -> np.ndarray:
    """Each label frame reads the RMS window whose center lies nearest its own center."""
    n_windows = len(levels)
    frame_centers = (np.arange(n_frames) + 0.5) / LABEL_RATE
    window_centers = (np.arange(n_windows) * RMS_HOP + RMS_WINDOW / 2) / SR
    idx = np.clip(np.round((frame_centers - window_centers[0]) / (RMS_HOP / SR)).astype(int), 0, n_windows - 1)
    return levels[idx] >= threshold_db


def rms_gate(x: np.ndarray, n_frames: int = 500, threshold_db: float = -70.0) -> np.ndarray:
    """Map windowed RMS onto the 50 Hz label grid and gate against a threshold.

    Window/hop give a coarser curve than the label grid, so each label frame
    reads the RMS window whose center lies nearest its own center.
    """
    return _windows_to_frames(windowed_rms_db(x), n_frames, threshold_db)


class EventAnalysis:
    """A-weighted view of an event signal that is silent outside its extent.

    The weighting filter runs once, over the extent slice only (exact, because
    the input is zero before the slice and the filter starts from zero state);
    level and gate both read off the same filtered array. The filter is linear,
    so a post-hoc gain on the signal is a scalar on the filtered values.
    """

    def __init__(self, sig: np.ndarray, active_mask: np.ndarray):
        active = np.flatnonzero(active_mask)
        if active.size == 0:
            raise ValueError("event signal has no active samples")
        a, b = int(active[0]), int(active[-1]) + 1
        n_total = max(1, (len(sig) - RMS_WINDOW) // RMS_HOP + 1)
        self.w_lo = max(0, (a - RMS_WINDOW) // RMS_HOP + 1)
        self.w_hi = min(n_total, b // RMS_HOP + 1)
        self.n_total_windows = n_total
        start = self.w_lo * RMS_HOP
        stop = min(len(sig), (self.w_hi - 1) * RMS_HOP + RMS_WINDOW)
        self._filtered = a_weight(sig[start:stop])
        self._mask = np.asarray(active_mask, dtype=bool)[start:stop]
        self.level_db = _rms_db(self._filtered[self._mask])

    def gate(self, scale: float, n_frames: int = 500, threshold_db: float = -70.0) -> np.ndarray:
        w = self._filtered * scale
        sq = w * w
        csum = np.concatenate([[0.0], np.cumsum(sq)])
        n_local = self.w_hi - self.w_lo
        starts = np.arange(n_local) * RMS_HOP
        means = (csum[np.minimum(starts + RMS_WINDOW, len(w))] - csum[starts]) / RMS_WINDOW
        levels = np.full(self.n_total_windows, SILENCE_DB)
        nz = means > 0
        local = np.full(n_local, SILENCE_DB)
        local[nz] = np.maximum(10.0 * np.log10(means[nz]), SILENCE_DB)
        levels[self.w_lo:self.w_hi] = local
        return _windows_to_frames(levels, n_frames, threshold_db)
