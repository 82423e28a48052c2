"""Toy dual encoders with hand-derived gradients.

Audio path: 48 kHz waveform -> 16 kHz -> magnitude STFT -> 64 triangular
bands -> log1p -> mean-pool to one window per model frame -> shared 2-layer
tanh trunk -> linear projection -> unit-norm frame embeddings. The global
embedding is the re-normalized mean of the frame rows.

Text path: hashed bag-of-words -> 2-layer tanh trunk (its output is the
feature vector the per-text heads consume) -> projection -> unit norm.

Everything is numpy forward passes plus explicit backward functions; there is
no autodiff anywhere, which keeps the stop-gradient rules checkable.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict

import numpy as np
from scipy.signal import resample_poly

from .numcore import Rng, _fnv1a64, l2_normalize

SR = 48000
CLIP_SECONDS = 10.0
CLIP_SAMPLES = int(SR * CLIP_SECONDS)
INTERNAL_SR = 16000
STFT_WIN = 1024
STFT_HOP = 512

CHECKPOINT_MAGIC = b"FLMK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    n_bands: int = 64
    n_frames: int = 32          # L
    embed_dim: int = 64         # d
    trunk_hidden: int = 128
    trunk_out: int = 128        # text feature dim fed to the heads
    text_buckets: int = 4096
    head_hidden: int = 64

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


# small dims so finite-difference sweeps over every parameter stay fast
MINI_CONFIG = ModelConfig(n_bands=5, n_frames=4, embed_dim=6, trunk_hidden=7,
                          trunk_out=8, text_buckets=32, head_hidden=5)


# ---------------------------------------------------------------------------
# front end (parameter-free)

def _mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def _mel_inv(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


_FILTERBANK_CACHE: dict[tuple, np.ndarray] = {}


def mel_filterbank(n_bands: int, n_fft: int = STFT_WIN, sr: int = INTERNAL_SR) -> np.ndarray:
    """(n_bands, n_fft//2+1) triangular weights, peaks on a mel-spaced grid."""
    key = (n_bands, n_fft, sr)
    if key not in _FILTERBANK_CACHE:
        n_bins = n_fft // 2 + 1
        freqs = np.arange(n_bins) * sr / n_fft
        edges = _mel_inv(np.linspace(_mel(0.0), _mel(sr / 2), n_bands + 2))
        fb = np.zeros((n_bands, n_bins))
        for i in range(n_bands):
            lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
            up = (freqs - lo) / max(mid - lo, 1e-9)
            down = (hi - freqs) / max(hi - mid, 1e-9)
            fb[i] = np.clip(np.minimum(up, down), 0.0, None)
        _FILTERBANK_CACHE[key] = fb
    return _FILTERBANK_CACHE[key]


def audio_features(wave: np.ndarray, sr: int, config: ModelConfig) -> np.ndarray:
    """(L, n_bands) standardized log band energies for a 10 s clip."""
    wave = np.asarray(wave, dtype=np.float64)
    if sr != SR:
        raise ValueError(f"expected {SR} Hz input, got {sr}")
    if wave.ndim != 1 or wave.shape[0] != CLIP_SAMPLES:
        raise ValueError(f"expected {CLIP_SAMPLES} samples, got shape {wave.shape}")
    x = resample_poly(wave, 1, SR // INTERNAL_SR)
    frames = np.lib.stride_tricks.sliding_window_view(x, STFT_WIN)[::STFT_HOP]
    spec = np.abs(np.fft.rfft(frames * np.hanning(STFT_WIN), axis=1))
    bands = np.log1p(spec @ mel_filterbank(config.n_bands).T)   # (T, n_bands)
    t = bands.shape[0]
    edges = [w * t // config.n_frames for w in range(config.n_frames + 1)]
    pooled = np.stack([bands[edges[w]:edges[w + 1]].mean(axis=0)
                       for w in range(config.n_frames)])
    mean = pooled.mean(axis=1, keepdims=True)
    std = pooled.std(axis=1, keepdims=True)
    return (pooled - mean) / (std + 1e-5)


# ---------------------------------------------------------------------------
# text tokenization

def tokenize(caption: str, buckets: int) -> tuple[np.ndarray, np.ndarray]:
    """Hash tokens into buckets; returns (unique bucket ids, counts)."""
    tokens = [t for t in "".join(c if c.isalnum() else " " for c in caption.lower()).split() if t]
    if not tokens:
        raise ValueError(f"caption has no tokens: {caption!r}")
    ids = np.array([_fnv1a64(t.encode("utf-8")) % buckets for t in tokens], dtype=np.int64)
    uniq, counts = np.unique(ids, return_counts=True)
    return uniq, counts.astype(np.float64)


# ---------------------------------------------------------------------------
# parameters

def init_params(config: ModelConfig, seed: int) -> dict[str, np.ndarray]:
    """All weights; head last layers are zero with the pinned biases so the
    initial per-text scale/bias are exactly 10 and -8 for every caption."""
    r = Rng(seed)

    def dense(name, fan_in, fan_out):
        return r.stream(f"init/{name}", 0).normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out))

    def bias(name, n):
        # small but nonzero: an all-zero feature row (silence) must still map
        # to a nonzero projection, or row normalization would divide by zero
        return r.stream(f"init/{name}", 0).normal(0.0, 0.1, n)

    c = config
    p = {
        "audio/w1": dense("audio/w1", c.n_bands, c.trunk_hidden),
        "audio/b1": bias("audio/b1", c.trunk_hidden),
        "audio/w2": dense("audio/w2", c.trunk_hidden, c.trunk_out),
        "audio/b2": bias("audio/b2", c.trunk_out),
        "audio/proj": dense("audio/proj", c.trunk_out, c.embed_dim),
        "text/w1": dense("text/w1", c.text_buckets, c.trunk_hidden),
        "text/b1": bias("text/b1", c.trunk_hidden),
        "text/w2": dense("text/w2", c.trunk_hidden, c.trunk_out),
        "text/b2": bias("text/b2", c.trunk_out),
        "text/proj": dense("text/proj", c.trunk_out, c.embed_dim),
        "head_alpha/w1": dense("head_alpha/w1", c.trunk_out, c.head_hidden),
        "head_alpha/b1": np.zeros(c.head_hidden),
        "head_alpha/w2": np.zeros((c.head_hidden, 1)),
        "head_alpha/b2": np.array([np.log(10.0)]),
        "head_prior/w1": dense("head_prior/w1", c.trunk_out, c.head_hidden),
        "head_prior/b1": np.zeros(c.head_hidden),
        "head_prior/w2": np.zeros((c.head_hidden, 1)),
        "head_prior/b2": np.array([-8.0]),
        "clip/log_alpha": np.array([np.log(10.0)]),
        # scalar stand-ins for the per-text heads, engaged by ablation flags
        "ablate/log_alpha_t": np.array([np.log(10.0)]),
        "ablate/beta_t": np.array([-10.0]),
    }
    return p


def zero_grads(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def flatten_params(params: dict[str, np.ndarray]) -> tuple[np.ndarray, list]:
    names = sorted(params)
    layout = [(n, params[n].shape, params[n].size) for n in names]
    vec = np.concatenate([params[n].ravel() for n in names]) if names else np.zeros(0)
    return vec, layout


def unflatten_params(vec: np.ndarray, layout: list) -> dict[str, np.ndarray]:
    out = {}
    pos = 0
    for name, shape, size in layout:
        out[name] = vec[pos:pos + size].reshape(shape).copy()
        pos += size
    return out


# ---------------------------------------------------------------------------
# audio encoder

def audio_forward(params: dict, feats: np.ndarray):
    """feats (B, L, n_bands) -> frame embeddings (B, L, d) unit rows,
    global embeddings (B, d) unit rows, plus the cache for backward."""
    h1 = np.tanh(feats @ params["audio/w1"] + params["audio/b1"])
    h2 = np.tanh(h1 @ params["audio/w2"] + params["audio/b2"])
    proj = h2 @ params["audio/proj"]
    norms = np.linalg.norm(proj, axis=-1, keepdims=True)
    frames = proj / norms
    mean = frames.mean(axis=1)
    mean_norms = np.linalg.norm(mean, axis=-1, keepdims=True)
    glob = mean / mean_norms
    cache = {"feats": feats, "h1": h1, "h2": h2, "norms": norms,
             "frames": frames, "mean_norms": mean_norms, "glob": glob}
    return frames, glob, cache


def audio_backward(params: dict, cache: dict, d_frames, d_glob, grads: dict) -> None:
    """Accumulate parameter gradients; either upstream term may be None."""
    frames = cache["frames"]
    b, length, _ = frames.shape
    d_total = np.zeros_like(frames)
    if d_frames is not None:
        d_total += d_frames
    if d_glob is not None:
        g = cache["glob"]
        d_mean = (d_glob - g * np.sum(g * d_glob, axis=-1, keepdims=True)) / cache["mean_norms"]
        d_total += d_mean[:, None, :] / length
    d_proj = (d_total - frames * np.sum(frames * d_total, axis=-1, keepdims=True)) / cache["norms"]
    h1, h2 = cache["h1"], cache["h2"]
    grads["audio/proj"] += np.einsum("blt,bld->td", h2, d_proj)
    d_h2p = (d_proj @ params["audio/proj"].T) * (1.0 - h2 * h2)
    grads["audio/w2"] += np.einsum("blh,blt->ht", h1, d_h2p)
    grads["audio/b2"] += d_h2p.sum(axis=(0, 1))
    d_h1p = (d_h2p @ params["audio/w2"].T) * (1.0 - h1 * h1)
    grads["audio/w1"] += np.einsum("blf,blh->fh", cache["feats"], d_h1p)
    grads["audio/b1"] += d_h1p.sum(axis=(0, 1))


# ---------------------------------------------------------------------------
# text encoder

def text_forward(params: dict, captions: list[str], config: ModelConfig):
    """captions -> unit embeddings (K, d), head features (K, trunk_out), cache."""
    bows = [tokenize(c, config.text_buckets) for c in captions]
    h1p = np.stack([params["text/w1"][ids].T @ cnt for ids, cnt in bows]) \
        if bows else np.zeros((0, config.trunk_hidden))
    h1 = np.tanh(h1p + params["text/b1"])
    h2 = np.tanh(h1 @ params["text/w2"] + params["text/b2"])
    proj = h2 @ params["text/proj"]
    norms = np.linalg.norm(proj, axis=-1, keepdims=True)
    emb = proj / norms
    cache = {"bows": bows, "h1": h1, "h2": h2, "norms": norms, "emb": emb}
    return emb, h2, cache


def text_backward(params: dict, cache: dict, d_emb, d_feats, grads: dict) -> None:
    """d_emb hits the projection; d_feats hits the trunk output directly.

    Head gradients never arrive here: head inputs are detached, so the heads'
    backward passes produce no d_feats term by construction.
    """
    h1, h2, emb = cache["h1"], cache["h2"], cache["emb"]
    d_h2 = np.zeros_like(h2)
    if d_emb is not None:
        d_proj = (d_emb - emb * np.sum(emb * d_emb, axis=-1, keepdims=True)) / cache["norms"]
        grads["text/proj"] += h2.T @ d_proj
        d_h2 += d_proj @ params["text/proj"].T
    if d_feats is not None:
        d_h2 += d_feats
    d_h2p = d_h2 * (1.0 - h2 * h2)
    grads["text/w2"] += h1.T @ d_h2p
    grads["text/b2"] += d_h2p.sum(axis=0)
    d_h1p = (d_h2p @ params["text/w2"].T) * (1.0 - h1 * h1)
    grads["text/b1"] += d_h1p.sum(axis=0)
    gw1 = grads["text/w1"]
    for k, (ids, cnt) in enumerate(cache["bows"]):
        gw1[ids] += cnt[:, None] * d_h1p[k][None, :]


# ---------------------------------------------------------------------------
# per-text heads

def head_forward(params: dict, head: str, feats: np.ndarray):
    """feats (K, trunk_out) -> raw outputs (K,). `head` is 'head_alpha' or
    'head_prior'. Inputs are treated as constants (stop-gradient)."""
    hidden = np.tanh(feats @ params[f"{head}/w1"] + params[f"{head}/b1"])
    out = hidden @ params[f"{head}/w2"][:, 0] + params[f"{head}/b2"][0]
    return out, {"feats": feats, "hidden": hidden}


def head_backward(params: dict, head: str, cache: dict, d_out: np.ndarray, grads: dict) -> None:
    hidden = cache["hidden"]
    grads[f"{head}/w2"][:, 0] += hidden.T @ d_out
    grads[f"{head}/b2"][0] += d_out.sum()
    d_hid = np.outer(d_out, params[f"{head}/w2"][:, 0]) * (1.0 - hidden * hidden)
    grads[f"{head}/w1"] += cache["feats"].T @ d_hid
    grads[f"{head}/b1"] += d_hid.sum(axis=0)


def text_scale(params: dict, feats: np.ndarray) -> np.ndarray:
    """alpha^t per caption: exp of the scale head output, so always > 0."""
    out, _ = head_forward(params, "head_alpha", feats)
    return np.exp(out)


def text_bias(params: dict, feats: np.ndarray) -> np.ndarray:
    out, _ = head_forward(params, "head_prior", feats)
    return out


# ---------------------------------------------------------------------------
# user-facing encode calls

def encode_audio(params: dict, config: ModelConfig, wave: np.ndarray, sr: int):
    feats = audio_features(wave, sr, config)
    frames, glob, _ = audio_forward(params, feats[None])
    return frames[0], glob[0]


def encode_text(params: dict, config: ModelConfig, caption: str):
    emb, feats, _ = text_forward(params, [caption], config)
    return emb[0], feats[0]


# ---------------------------------------------------------------------------
# checkpoint / cache file format

def save_blocks(path, blocks: dict[str, np.ndarray]) -> None:
    """Magic, version u32, count u32, then per block: name (u32 length +
    UTF-8), rank u32, dims u32 each, row-major float32 little-endian data."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blocks)))
        for name in sorted(blocks):
            arr = np.ascontiguousarray(blocks[name], dtype="<f4")
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_blocks(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError("not a parameter block file (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported block file version {version}")
    pos = 12
    blocks = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape)
        pos += 4 * size
        blocks[name] = arr.astype(np.float64)
    return blocks


def save_checkpoint(path, params: dict, config: ModelConfig, meta: dict) -> None:
    save_blocks(path, params)
    doc = dict(meta)
    doc["model_config"] = json.loads(config.to_json())
    with open(str(path) + ".meta.json", "w") as f:
        json.dump(doc, f, sort_keys=True, indent=2)
        f.write("\n")


def load_checkpoint(path) -> tuple[dict, ModelConfig, dict]:
    params = load_blocks(path)
    with open(str(path) + ".meta.json") as f:
        meta = json.load(f)
    config = ModelConfig(**meta.pop("model_config"))
    return params, config, meta
