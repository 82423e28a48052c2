"""Batch construction: prompt unions, frame-level label tensors, sampling.

Labels live on two grids. Manifests carry 500-frame activity at 50 Hz; the
model scores 32 frames of 0.3125 s each, so activity is max-pooled onto the
model grid. A clip that never mentions a prompt counts as negative everywhere
for it (absence assumption), which is what makes every (clip, prompt, frame)
triple scoreable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import Rng
from .synthpipe.dataset import MixtureRecord

N_MODEL_FRAMES = 32
N_LABEL_FRAMES = 500
FRAME_DUR = 10.0 / N_MODEL_FRAMES  # 0.3125 s
MAX_PROMPTS_PER_CLIP = 5

# boundaries of each model frame on the 50 Hz grid: frame l covers
# [floor(l*500/32), floor((l+1)*500/32))
_POOL_EDGES = np.array([l * N_LABEL_FRAMES // N_MODEL_FRAMES for l in range(N_MODEL_FRAMES + 1)])


def normalize_caption(text: str) -> str:
    """Lowercase and collapse whitespace; the dedup key for prompts."""
    return " ".join(text.lower().split())


def downsample_activity(curve: np.ndarray) -> np.ndarray:
    """Max-pool a 500-frame activity curve onto the 32-frame model grid."""
    curve = np.asarray(curve, dtype=bool)
    if curve.shape != (N_LABEL_FRAMES,):
        raise ValueError(f"expected a {N_LABEL_FRAMES}-frame curve")
    return np.array([curve[_POOL_EDGES[l]:_POOL_EDGES[l + 1]].any() for l in range(N_MODEL_FRAMES)])


def union_prompts(per_clip: list[list[str]]) -> tuple[list[str], list[list[int]], list[int]]:
    """Dedup normalized captions across the batch, first-appearance order.

    Returns (prompts, per-clip prompt index lists, first-clip index per prompt).
    """
    prompts: list[str] = []
    index: dict[str, int] = {}
    first_clip: list[int] = []
    clip_ids: list[list[int]] = []
    for i, captions in enumerate(per_clip):
        ids = []
        for c in captions:
            key = normalize_caption(c)
            if key not in index:
                index[key] = len(prompts)
                prompts.append(key)
                first_clip.append(i)
            ids.append(index[key])
        clip_ids.append(ids)
    return prompts, clip_ids, first_clip


def build_label_tensor(per_clip_prompt_ids: list[list[int]],
                       per_clip_activity: list[list[np.ndarray]],
                       n_prompts: int) -> np.ndarray:
    """z in {-1,+1}^(B x K x L). Positive only where a clip's own event is active.

    When one clip carries the same prompt twice (two events, one caption) the
    activities are OR-ed, so positives are counted once per (clip, frame).
    """
    b = len(per_clip_prompt_ids)
    z = np.full((b, n_prompts, N_MODEL_FRAMES), -1, dtype=np.int8)
    for i, (ids, acts) in enumerate(zip(per_clip_prompt_ids, per_clip_activity)):
        for k, curve in zip(ids, acts):
            pooled = downsample_activity(curve)
            z[i, k, pooled] = 1
    return z


@dataclass
class SedBatch:
    clip_ids: list[str]
    records: list[MixtureRecord]
    prompts: list[str]                  # K normalized captions, union order
    prompt_first_clip: np.ndarray       # (K,) owner clip per prompt
    clip_prompt_ids: list[list[int]]
    z: np.ndarray                       # (B, K, L) int8
    global_captions: list[str]          # one per clip, for the clip-level loss

    @property
    def size(self) -> int:
        return len(self.clip_ids)

    @property
    def n_prompts(self) -> int:
        return len(self.prompts)


def global_caption(record: MixtureRecord) -> str:
    """Clip-level pairing text: background plus the clip's distinct event captions."""
    parts = [normalize_caption(record.background_caption)]
    seen = set()
    for ev in record.events:
        key = normalize_caption(ev.caption)
        if key not in seen:
            seen.add(key)
            parts.append(key)
    return "; ".join(parts)


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    return Rng(seed).stream("epoch", epoch).permutation(n)


def drop_words(text: str, rng: np.random.Generator, p: float) -> str:
    """Drop each word independently with probability p; never empty the text.

    Draws len(words) uniforms even when the full text survives, so batch
    streams stay aligned whatever the outcome."""
    words = text.split()
    keep = rng.random(len(words)) >= p
    if not keep.any():
        return text
    return " ".join(w for w, k in zip(words, keep) if k)


def _clip_event_texts(record: MixtureRecord, rng: np.random.Generator,
                      caption_mode: str, caption_to_class: dict[str, str] | None,
                      caption_dropout: float = 0.0):
    """Caption or bare class tag per event, then per-clip dedup (activities OR-ed)."""
    chosen: dict[str, np.ndarray] = {}
    for ev in record.events:
        text = normalize_caption(ev.caption)
        if caption_mode != "caption" and caption_to_class:
            tag = caption_to_class.get(text)
            if tag is not None and (caption_mode == "tag" or rng.random() < 0.5):
                text = normalize_caption(tag)
        if caption_dropout > 0.0:
            text = drop_words(text, rng, caption_dropout)
        act = ev.activity()
        if text in chosen:
            chosen[text] = chosen[text] | act
        else:
            chosen[text] = act
    return chosen


def sample_batch(records: list[MixtureRecord], batch_size: int, seed: int, step: int,
                 caption_mode: str = "caption",
                 caption_to_class: dict[str, str] | None = None,
                 max_prompts_per_clip: int = MAX_PROMPTS_PER_CLIP,
                 caption_dropout: float = 0.0) -> SedBatch:
    """Deterministic batch for a training step.

    Clips are drawn without replacement within an epoch (a seeded permutation
    per epoch); per-clip prompt lists beyond the cap are subsampled, seeded by
    (seed, step, clip). caption_dropout randomly thins prompt wordings during
    training so the text side cannot pin a class to one exact phrase.
    """
    if caption_mode not in ("caption", "tag", "mixed"):
        raise ValueError(f"unknown caption mode {caption_mode!r}")
    if not 0.0 <= caption_dropout < 1.0:
        raise ValueError("caption_dropout must be in [0, 1)")
    n = len(records)
    if batch_size > n:
        raise ValueError("batch size exceeds the dataset")
    steps_per_epoch = n // batch_size
    epoch = step // steps_per_epoch
    pos = (step % steps_per_epoch) * batch_size
    perm = epoch_permutation(n, seed, epoch)
    rows = [records[j] for j in perm[pos:pos + batch_size]]

    base = Rng(seed)
    per_clip_texts: list[list[str]] = []
    per_clip_acts: list[list[np.ndarray]] = []
    for i, rec in enumerate(rows):
        rng = base.stream(f"batch/{step}/clip", i)
        chosen = _clip_event_texts(rec, rng, caption_mode, caption_to_class,
                                   caption_dropout)
        texts = list(chosen)
        if len(texts) > max_prompts_per_clip:
            keep = rng.choice(len(texts), size=max_prompts_per_clip, replace=False)
            texts = [texts[j] for j in sorted(keep)]
        per_clip_texts.append(texts)
        per_clip_acts.append([chosen[t] for t in texts])

    prompts, clip_ids, first_clip = union_prompts(per_clip_texts)
    z = build_label_tensor(clip_ids, per_clip_acts, len(prompts))
    return SedBatch(
        clip_ids=[r.id for r in rows],
        records=rows,
        prompts=prompts,
        prompt_first_clip=np.array(first_clip, dtype=int),
        clip_prompt_ids=clip_ids,
        z=z,
        global_captions=[global_caption(r) for r in rows],
    )
