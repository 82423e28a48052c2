"""Procedural waveform generation for the catalog's event and background kinds.

Everything is synthesized at 48 kHz from an explicit Generator, so a given
(recipe, duration, stream) triple always yields the identical waveform.
Events come back peak-normalized to 0.9 with short attack/release ramps.
"""

from __future__ import annotations

import numpy as np
from scipy import signal

from .catalog import BackgroundRecipe, EventRecipe
from .aweight import a_rms_db

SR = 48000


def _env(n: int, rng: np.random.Generator) -> np.ndarray:
    attack = int(rng.uniform(0.010, 0.040) * SR)
    release = int(rng.uniform(0.020, 0.060) * SR)
    env = np.ones(n)
    attack = min(attack, n // 2)
    release = min(release, n // 2)
    if attack > 0:
        env[:attack] = np.linspace(0.0, 1.0, attack, endpoint=False)
    if release > 0:
        env[n - release:] = np.linspace(1.0, 0.0, release)
    return env


def _phase(freq: np.ndarray, phi0: float) -> np.ndarray:
    return phi0 + 2.0 * np.pi * np.cumsum(freq) / SR


def _peak_normalize(x: np.ndarray, peak: float = 0.9) -> np.ndarray:
    m = float(np.max(np.abs(x)))
    return x * (peak / m) if m > 0 else x


def generate_event_audio(recipe: EventRecipe, duration: float, rng: np.random.Generator) -> np.ndarray:
    n = int(round(duration * SR))
    t = np.arange(n) / SR
    f0 = rng.uniform(recipe.f_lo, recipe.f_hi)
    phi = rng.uniform(0.0, 2.0 * np.pi)
    kind = recipe.kind

    if kind == "tone":
        x = np.sin(2 * np.pi * f0 * t + phi)
    elif kind in ("chirp_up", "chirp_down"):
        octaves = rng.uniform(0.8, 1.5)
        sweep = np.linspace(0.0, octaves, n)
        freq = f0 * 2.0 ** (sweep if kind == "chirp_up" else -sweep)
        x = np.sin(_phase(freq, phi))
    elif kind == "am_tone":
        fm = rng.uniform(3.0, 8.0)
        x = np.sin(2 * np.pi * f0 * t + phi) * (0.5 + 0.5 * np.sin(2 * np.pi * fm * t))
    elif kind == "harmonic":
        x = np.zeros(n)
        for k in range(1, 6):
            if k * f0 < 20000:
                x += np.sin(2 * np.pi * k * f0 * t + phi * k) / k
    elif kind == "clicks":
        rate = rng.uniform(8.0, 14.0)
        tau = rng.uniform(0.008, 0.020)
        click_len = int(0.060 * SR)
        ct = np.arange(click_len) / SR
        click = np.exp(-ct / tau) * np.sin(2 * np.pi * f0 * ct)
        x = np.zeros(n)
        pos = 0
        period = int(SR / rate)
        while pos + click_len <= n:
            x[pos:pos + click_len] += click
            pos += period
    elif kind == "noise_burst":
        lo = max(f0 * 0.8, 40.0)
        hi = min(f0 * 1.3, SR / 2 * 0.95)
        sos = signal.butter(2, [lo, hi], btype="bandpass", fs=SR, output="sos")
        x = signal.sosfilt(sos, rng.standard_normal(n))
    elif kind == "siren":
        rate = rng.uniform(0.4, 1.0)
        tri = 2.0 * np.abs(((t * rate + rng.uniform(0, 1)) % 1.0) - 0.5)  # 0..1 triangle
        freq = f0 * 2.0 ** tri
        x = np.sin(_phase(freq, phi))
    elif kind == "two_tone":
        hold = rng.uniform(0.15, 0.30)
        which = (np.floor(t / hold) % 2).astype(np.float64)
        freq = f0 * (1.0 + 0.5 * which)
        x = np.sin(_phase(freq, phi))
    elif kind == "bell":
        ratios = [1.0, 2.76, 5.40, 8.93]
        decay = rng.uniform(0.35, 0.7) * duration
        x = np.zeros(n)
        for i, r in enumerate(ratios):
            if f0 * r < 20000:
                x += np.exp(-t * (i + 1) / decay) * np.sin(2 * np.pi * f0 * r * t + phi * (i + 1)) / (i + 1)
    else:
        raise ValueError(f"unknown event kind {kind!r}")

    return _peak_normalize(x * _env(n, rng))


def _pink(n: int, rng: np.random.Generator) -> np.ndarray:
    # classic 1/f approximation (three-pole IIR over white noise)
    b = [0.049922035, -0.095993537, 0.050612699, -0.004408786]
    a = [1.0, -2.494956002, 2.017265875, -0.522189400]
    return signal.lfilter(b, a, rng.standard_normal(n))


def generate_background_audio(
    recipe: BackgroundRecipe,
    rng: np.random.Generator,
    duration: float = 10.0,
    level_db: float = -38.0,
) -> np.ndarray:
    """A 10 s ambience bed, scaled to the requested A-weighted RMS level."""
    n = int(round(duration * SR))
    t = np.arange(n) / SR
    kind = recipe.kind
    if kind == "rain":
        sos = signal.butter(2, 7000, btype="lowpass", fs=SR, output="sos")
        x = signal.sosfilt(sos, rng.standard_normal(n))
        x *= 1.0 + 0.15 * np.sin(2 * np.pi * rng.uniform(0.1, 0.3) * t + rng.uniform(0, 2 * np.pi))
    elif kind == "pink":
        x = _pink(n, rng)
    elif kind == "brown":
        x = np.cumsum(rng.standard_normal(n))
        sos = signal.butter(2, 25, btype="highpass", fs=SR, output="sos")
        x = signal.sosfilt(sos, x)
    elif kind == "wind":
        sos = signal.butter(2, [90, 1300], btype="bandpass", fs=SR, output="sos")
        x = signal.sosfilt(sos, _pink(n, rng))
        x *= 0.7 + 0.3 * np.sin(2 * np.pi * rng.uniform(0.1, 0.25) * t + rng.uniform(0, 2 * np.pi))
    else:
        raise ValueError(f"unknown background kind {kind!r}")

    gain = 10.0 ** ((level_db - a_rms_db(x)) / 20.0)
    return x * gain
