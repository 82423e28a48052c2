"""Evaluation metrics for frame-level detection and retrieval.

Scored frames are passed as paired vectors (score, binary label); every
metric here has a brute-force oracle in the test suite and raises on
degenerate input rather than returning a conventional placeholder.
"""

import json
from pathlib import Path

import numpy as np

from . import batcher, encoders, inference
from .synthpipe.wavio import read_wav_f32

MAX_FPR = 0.1
N_SEGMENTS = 10  # 1 s pooling windows over the 10 s clip


def _check_scored(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ValueError("scores and labels must be matching 1-d vectors")
    u = np.unique(labels)
    if not np.all(np.isin(u, (0, 1))):
        raise ValueError("labels must be binary")
    if u.size < 2:
        raise ValueError("metric undefined without both a positive and a negative")
    return scores, labels.astype(np.int64)


def average_ranks(x: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties assigned the mean rank of their group."""
    x = np.asarray(x)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def frame_auroc(scores, labels) -> float:
    """Mann-Whitney AUROC: P(score_pos > score_neg) + 0.5 P(tie), via rank sums."""
    scores, labels = _check_scored(scores, labels)
    r = average_ranks(scores)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    u = r[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    """Threshold sweep over distinct scores, returned as (fpr, tpr) from (0,0) to (1,1)."""
    scores, labels = _check_scored(scores, labels)
    order = np.argsort(-scores, kind="stable")
    y = labels[order]
    s = scores[order]
    # last index of each distinct-score group
    last = np.r_[np.flatnonzero(np.diff(s) != 0.0), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(1 - y)[last]
    fpr = np.r_[0.0, fp / fp[-1]]
    tpr = np.r_[0.0, tp / tp[-1]]
    return fpr, tpr


def mpauc(scores, labels, max_fpr: float = MAX_FPR) -> float:
    """Partial AUC on FPR in [0, max_fpr], rescaled so chance = 0.5 and perfect = 1.

    Trapezoidal area with linear interpolation at the cap, then the McClish
    map 0.5 * (1 + (A - A_min) / (A_max - A_min)) with A_min the chance
    diagonal's share (cap^2 / 2) and A_max the full column (cap).
    """
    if not 0.0 < max_fpr <= 1.0:
        raise ValueError("max_fpr must lie in (0, 1]")
    fpr, tpr = roc_curve(scores, labels)
    keep = fpr <= max_fpr
    fx, ty = fpr[keep], tpr[keep]
    if fx[-1] < max_fpr:
        # cap falls inside a segment; fpr strictly increases across it
        j = int(np.searchsorted(fpr, max_fpr, side="right"))
        frac = (max_fpr - fpr[j - 1]) / (fpr[j] - fpr[j - 1])
        fx = np.r_[fx, max_fpr]
        ty = np.r_[ty, tpr[j - 1] + frac * (tpr[j] - tpr[j - 1])]
    area = float(np.trapezoid(ty, fx))
    a_min = 0.5 * max_fpr * max_fpr
    a_max = max_fpr
    return float(0.5 * (1.0 + (area - a_min) / (a_max - a_min)))


def spearman_rho(scores, labels) -> float:
    """Pearson correlation of average ranks (tie-aware Spearman)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ValueError("scores and labels must be matching 1-d vectors")
    if scores.size < 3:
        raise ValueError("need at least 3 frames")
    if np.all(scores == scores[0]) or np.all(labels == labels[0]):
        raise ValueError("rank correlation undefined for constant input")
    rs = average_ranks(scores)
    rl = average_ranks(labels)
    rs -= rs.mean()
    rl -= rl.mean()
    return float((rs @ rl) / np.sqrt((rs @ rs) * (rl @ rl)))


def recall_at_k(similarity: np.ndarray, k: int) -> tuple[float, float]:
    """Fraction of rows / columns whose diagonal entry ranks in the top k.

    Rows are queries in one direction, columns in the other. Ties are broken
    by index order (lower index wins), so the result is deterministic.
    """
    sim = np.asarray(similarity, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError("similarity must be a square matrix")
    n = sim.shape[0]
    if not 1 <= k <= n:
        raise ValueError("k must lie in [1, n]")

    def _recall(mat):
        hits = 0
        for i in range(n):
            order = np.argsort(-mat[i], kind="stable")
            hits += int(np.flatnonzero(order == i)[0] < k)
        return hits / n

    return _recall(sim), _recall(sim.T)


# ---------------------------------------------------------------------------
# corpus evaluation

def clip_event_labels(record) -> dict[str, np.ndarray]:
    """Per-caption activity on the model frame grid, OR-merged across
    same-caption events in the clip."""
    out: dict[str, np.ndarray] = {}
    for ev in record.events:
        cap = batcher.normalize_caption(ev.caption)
        act = batcher.downsample_activity(ev.activity())
        out[cap] = np.maximum(out[cap], act) if cap in out else act
    return out


def segment_pool(scores: np.ndarray, labels: np.ndarray,
                 n_segments: int = N_SEGMENTS) -> tuple[np.ndarray, np.ndarray]:
    """Pool one clip's frames into coarse windows: mean score, max label."""
    n = scores.shape[0]
    seg_s, seg_l = [], []
    for w in range(n_segments):
        lo, hi = (w * n) // n_segments, ((w + 1) * n) // n_segments
        if hi > lo:
            seg_s.append(scores[lo:hi].mean())
            seg_l.append(labels[lo:hi].max())
    return np.asarray(seg_s), np.asarray(seg_l, dtype=np.int64)


def pool_event_metrics(pairs_by_event: dict) -> tuple[dict, list, dict | None]:
    """Per-event frame AUROC / segment MPAUC / Spearman rho, then macro means.

    pairs_by_event maps caption -> list of (scores, labels) pairs, one pair
    per clip. Events whose pooled frames or segments are single-class, or
    whose scores are constant, cannot support the metrics and are returned
    in the skipped list instead of being scored.
    """
    per_event: dict[str, dict] = {}
    skipped: list[str] = []
    for cap in sorted(pairs_by_event):
        pairs = pairs_by_event[cap]
        sc = np.concatenate([np.asarray(s, dtype=np.float64) for s, _ in pairs])
        lab = np.concatenate([np.asarray(l) for _, l in pairs]).astype(np.int64)
        pooled = [segment_pool(np.asarray(s, dtype=np.float64), np.asarray(l)) for s, l in pairs]
        seg_s = np.concatenate([s for s, _ in pooled])
        seg_l = np.concatenate([l for _, l in pooled])
        degenerate = (lab.min() == lab.max() or seg_l.min() == seg_l.max()
                      or bool(np.all(sc == sc[0])))
        if degenerate:
            skipped.append(cap)
            continue
        per_event[cap] = {
            "auroc": frame_auroc(sc, lab),
            "mpauc": mpauc(seg_s, seg_l),
            "rho": spearman_rho(sc, lab),
            "n_frames": int(lab.size),
        }
    if per_event:
        macro = {m: float(np.mean([e[m] for e in per_event.values()]))
                 for m in ("auroc", "mpauc", "rho")}
        macro["n_events"] = len(per_event)
    else:
        macro = None
    return per_event, skipped, macro


def evaluate_sed(params: dict, config, records: list, audio_root,
                 dataset_name: str = "eval", prompt_policy: str = "gt",
                 config_hash: str = "") -> dict:
    """Score a manifest's clips and report per-event and macro metrics.

    prompt_policy "gt" scores each clip only against its own ground-truth
    event prompts; "all" scores every clip against the corpus prompt union
    (clips lacking the event contribute all-negative frames).
    """
    if prompt_policy not in ("gt", "all"):
        raise ValueError("prompt_policy must be 'gt' or 'all'")
    if config.n_frames != batcher.N_MODEL_FRAMES:
        raise ValueError("evaluation assumes the standard model frame grid")
    root = Path(audio_root)
    labels_by_clip = [clip_event_labels(r) for r in records]
    vocab = sorted(set().union(*(set(d) for d in labels_by_clip))) if labels_by_clip else []

    text_emb, text_alpha = {}, {}
    for cap in vocab:
        emb, feats = encoders.encode_text(params, config, cap)
        text_emb[cap] = emb
        text_alpha[cap] = float(encoders.text_scale(params, feats[None])[0])

    zeros = np.zeros(config.n_frames, dtype=np.int8)
    pairs: dict[str, list] = {cap: [] for cap in vocab}
    for rec, labels in zip(records, labels_by_clip):
        wave, sr = read_wav_f32(root / rec.audio)
        frames, _ = encoders.encode_audio(params, config, wave, sr)
        caps = vocab if prompt_policy == "all" else sorted(labels)
        for cap in caps:
            raw = inference.frame_scores(frames, text_emb[cap], text_alpha[cap])
            pairs[cap].append((inference.median_filter(raw), labels.get(cap, zeros)))
    pairs = {c: p for c, p in pairs.items() if p}

    per_event, skipped, macro = pool_event_metrics(pairs)
    return {
        "dataset": dataset_name,
        "prompt_policy": prompt_policy,
        "n_clips": len(records),
        "per_event": per_event,
        "skipped_events": skipped,
        "macro": macro,
        "config_hash": config_hash,
    }


def write_report(path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
