"""Calibrated detection utilities.

The exact two-hypothesis classifier compares the posterior under the prompt
against the prior; its decision boundary sits at 0.5 by construction. At
inference we use the cheaper approximation that drops the per-text bias
(valid because trained biases sit far in the negative tail), so a frame's
score is just the logistic of the scaled cosine. Scores are median-filtered
before thresholding into a timeline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numcore import sigmoid

FRAME_DUR = 0.3125  # seconds per model frame


def exact_classifier(p_post, p_prior):
    """s = p_post / (p_post + p_prior); accepts scalars or arrays in (0,1)."""
    p1 = np.asarray(p_post, dtype=np.float64)
    p0 = np.asarray(p_prior, dtype=np.float64)
    if ((p1 <= 0) | (p1 >= 1)).any() or ((p0 <= 0) | (p0 >= 1)).any():
        raise ValueError("probabilities must lie strictly inside (0,1)")
    out = p1 / (p1 + p0)
    return float(out) if out.ndim == 0 else out


def approx_classifier_error(beta_star: float, r):
    """|s_exact - sigmoid(r)| where s_exact = 1 / (1 + sig(b*)/sig(r+b*)).

    The deviation vanishes as beta_star -> -inf, which is why inference can
    skip estimating the bias altogether."""
    r = np.asarray(r, dtype=np.float64)
    s_exact = 1.0 / (1.0 + sigmoid(beta_star) / sigmoid(r + beta_star))
    err = np.abs(s_exact - sigmoid(r))
    return float(err) if err.ndim == 0 else err


def frame_scores(frames: np.ndarray, prompt_emb: np.ndarray, alpha_t: float) -> np.ndarray:
    """Per-frame detection probabilities sigmoid(alpha * cosine)."""
    if alpha_t <= 0:
        raise ValueError("scale must be positive")
    return sigmoid(alpha_t * (frames @ prompt_emb))


def median_filter(scores: np.ndarray, width: int = 3) -> np.ndarray:
    """Centered median with replicate edge padding."""
    if width % 2 == 0 or width < 1:
        raise ValueError("width must be odd and positive")
    if width == 1:
        return np.asarray(scores, dtype=np.float64).copy()
    scores = np.asarray(scores, dtype=np.float64)
    pad = width // 2
    padded = np.concatenate([np.full(pad, scores[0]), scores, np.full(pad, scores[-1])])
    windows = np.lib.stride_tricks.sliding_window_view(padded, width)
    return np.median(windows, axis=1)


@dataclass
class Segment:
    onset: float
    offset: float
    score: float

    def to_dict(self) -> dict:
        return {"onset": self.onset, "offset": self.offset, "score": self.score}


def extract_timeline(scores: np.ndarray, threshold: float = 0.5,
                     frame_dur: float = FRAME_DUR) -> list[Segment]:
    """Maximal runs of frames scoring above threshold, as timed segments
    with their mean score."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0,1)")
    above = np.asarray(scores) > threshold
    edges = np.flatnonzero(np.diff(np.concatenate([[0], above.astype(np.int8), [0]])))
    segments = []
    for start, stop in edges.reshape(-1, 2):
        segments.append(Segment(onset=start * frame_dur, offset=stop * frame_dur,
                                score=float(np.mean(scores[start:stop]))))
    return segments
