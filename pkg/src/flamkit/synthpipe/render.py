"""Mixture rendering: gain staging against the background, fades, relabeling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import labels
from .aweight import EventAnalysis, a_rms_db, rms_gate
from .placement import PlacedEvent

SR = 48000
CLIP_SAMPLES = 480000
FADE = int(0.010 * SR)
RELABEL_THRESHOLD_DB = -70.0
PEAK_CEILING = 0.99


@dataclass
class RenderedEvent:
    placed: PlacedEvent
    activity: np.ndarray  # final 500-frame curve after gating + smoothing


@dataclass
class RenderResult:
    mixture: np.ndarray
    events: list[RenderedEvent]
    norm_gain_db: float


def _fade_edges(x: np.ndarray) -> np.ndarray:
    n = len(x)
    f = min(FADE, n // 2)
    if f > 0:
        x = x.copy()
        ramp = np.linspace(0.0, 1.0, f, endpoint=False)
        x[:f] *= ramp
        x[n - f:] *= ramp[::-1]
    return x


def _place_event(event: PlacedEvent, waveform: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lay the event's pieces onto the clip timeline. Returns (signal, active sample mask)."""
    sig = np.zeros(CLIP_SAMPLES)
    active = np.zeros(CLIP_SAMPLES, dtype=bool)
    for piece in event.pieces:
        src0 = int(round(piece.src_start * SR))
        length = int(round(piece.dur * SR))
        chunk = waveform[src0:src0 + length]
        if chunk.size == 0:
            continue
        chunk = _fade_edges(chunk)
        on = int(round(piece.onset * SR))
        stop = min(on + chunk.size, CLIP_SAMPLES)
        sig[on:stop] += chunk[:stop - on]
        active[on:stop] = True
    return sig, active


def rms_relabel(event_signal: np.ndarray, raw_activity: np.ndarray,
                threshold_db: float = RELABEL_THRESHOLD_DB) -> np.ndarray:
    """Gate placement activity against measured A-weighted level.

    Frames whose nearest RMS window sits below the threshold are marked
    inactive; the result is intersected with the raw curve, so relabeling can
    only ever remove activity, never invent it.
    """
    raw = np.asarray(raw_activity, dtype=bool)
    gate = rms_gate(event_signal, n_frames=raw.size, threshold_db=threshold_db)
    return raw & gate


def render_mixture(background: np.ndarray, placed: list[tuple[PlacedEvent, np.ndarray]]) -> RenderResult:
    """Mix placed events over a background with A-weighted gain offsets.

    Each event is scaled so its A-weighted RMS over its own active region sits
    gain_db above the background's level. The sum is peak-normalized (gain
    recorded) rather than clipped. Labels are the placement activity gated by
    measured level and smoothed.
    """
    if background.shape != (CLIP_SAMPLES,):
        raise ValueError("background must be exactly 10 s at 48 kHz")
    bg_db = a_rms_db(background)
    mix = background.copy()
    rendered: list[RenderedEvent] = []
    for event, waveform in placed:
        sig, active = _place_event(event, waveform)
        if not active.any():
            continue
        analysis = EventAnalysis(sig, active)
        scale = 10.0 ** ((bg_db + event.gain_db - analysis.level_db) / 20.0)
        mix += sig * scale
        raw = labels.rasterize_segments(event.segments())
        gate = analysis.gate(scale, n_frames=raw.size, threshold_db=RELABEL_THRESHOLD_DB)
        final = labels.smooth_labels(raw & gate)
        rendered.append(RenderedEvent(placed=event, activity=final))

    peak = float(np.max(np.abs(mix)))
    if peak > PEAK_CEILING:
        gain = PEAK_CEILING / peak
        mix *= gain
        norm_gain_db = 20.0 * float(np.log10(gain))
    else:
        norm_gain_db = 0.0
    return RenderResult(mixture=mix, events=rendered, norm_gain_db=norm_gain_db)
