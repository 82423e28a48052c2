"""Training objectives and their hand-derived gradients.

Four losses: a symmetric InfoNCE over global embeddings, a pairwise sigmoid
variant (kept for the bias-fit experiment), the frame-level detection loss
over (clip, prompt, frame) triples, and the prior loss that calibrates the
per-text bias head against each prompt's average label.

Gradient routing rules enforced here rather than by an autodiff graph:
  - the detection loss reaches frame embeddings, prompt embeddings, and the
    scale head, but never the bias head (its output enters the logit as a
    constant);
  - the prior loss touches only the bias head;
  - head inputs are detached, so no loss reaches the text trunk through a head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numcore import sigmoid, softplus

GAMMA_DEFAULT = (1.0, 200.0, 1.0)


def _check_unit_rows(mat: np.ndarray, name: str) -> None:
    err = np.abs(np.linalg.norm(mat, axis=-1) - 1.0)
    if err.size and err.max() > 1e-4:
        raise ValueError(f"{name} rows are not unit-norm (max deviation {err.max():.2e})")


# ---------------------------------------------------------------------------
# global (clip-level) losses

def clip_loss(ea: np.ndarray, et: np.ndarray, alpha: float):
    """Symmetric InfoNCE over B matched (audio, text) pairs.

    Returns (loss, d_ea, d_et, d_alpha). Rows must be unit-norm; alpha is the
    scalar logit scale (the caller owns the exp-parameterization chain).
    """
    _check_unit_rows(ea, "audio embeddings")
    _check_unit_rows(et, "text embeddings")
    b = ea.shape[0]
    dots = ea @ et.T
    s = alpha * dots
    # softmax per row (audio -> text) and per column (text -> audio)
    p_row = np.exp(s - s.max(axis=1, keepdims=True))
    p_row /= p_row.sum(axis=1, keepdims=True)
    p_col = np.exp(s - s.max(axis=0, keepdims=True))
    p_col /= p_col.sum(axis=0, keepdims=True)
    diag = np.arange(b)
    loss = -0.5 * (np.log(p_row[diag, diag]).mean() + np.log(p_col[diag, diag]).mean())
    g = (p_row + p_col) / (2 * b)
    g[diag, diag] -= 1.0 / b
    d_ea = alpha * (g @ et)
    d_et = alpha * (g.T @ ea)
    d_alpha = float((g * dots).sum())
    return float(loss), d_ea, d_et, d_alpha


def siglip_loss(ea: np.ndarray, et: np.ndarray, alpha: float, beta: float):
    """Pairwise sigmoid loss over all B^2 pairs, normalized by B.

    Returns (loss, d_ea, d_et, d_alpha, d_beta)."""
    _check_unit_rows(ea, "audio embeddings")
    _check_unit_rows(et, "text embeddings")
    b = ea.shape[0]
    dots = ea @ et.T
    z = -np.ones((b, b))
    np.fill_diagonal(z, 1.0)
    h = alpha * dots + beta
    loss = softplus(-z * h).sum() / b
    dh = -z * sigmoid(-z * h) / b
    d_ea = alpha * (dh @ et)
    d_et = alpha * (dh.T @ ea)
    return float(loss), d_ea, d_et, float((dh * dots).sum()), float(dh.sum())


# ---------------------------------------------------------------------------
# frame-level detection loss

@dataclass
class SedTerms:
    """Unnormalized sums so partial results can be accumulated across devices."""
    loss_sum: float
    count: int
    d_frames: np.ndarray   # (B, L, d)
    d_text: np.ndarray     # (K, d)
    d_alpha: np.ndarray    # (K,)
    d_beta: np.ndarray     # (K,)


def sed_terms(frames: np.ndarray, text: np.ndarray, alpha_t: np.ndarray,
              beta_t: np.ndarray, z: np.ndarray,
              slot_mask: np.ndarray | None = None,
              clip_mask: np.ndarray | None = None) -> SedTerms:
    """Sum over valid (clip, prompt, frame) triples of -log sigmoid(z * h).

    Valid slots and clips are compacted before any arithmetic, so padded
    entries influence neither the value's bits nor the gradients; gradients
    are scattered back to the padded shapes.
    """
    b, length, _ = frames.shape
    k = text.shape[0]
    if z.shape != (b, k, length):
        raise ValueError(f"label tensor shape {z.shape} does not match ({b},{k},{length})")
    if not np.isin(z, (-1, 1)).all():
        raise ValueError("label tensor entries must be -1 or +1")
    sm = np.ones(k, dtype=bool) if slot_mask is None else np.asarray(slot_mask, dtype=bool)
    cm = np.ones(b, dtype=bool) if clip_mask is None else np.asarray(clip_mask, dtype=bool)

    fv = frames[cm]
    tv, av, bv = text[sm], alpha_t[sm], beta_t[sm]
    zv = z[np.ix_(cm, sm)].astype(np.float64)
    d_frames = np.zeros_like(frames)
    d_text = np.zeros_like(text)
    d_alpha = np.zeros_like(alpha_t)
    d_beta = np.zeros_like(beta_t)
    count = zv.size
    if count == 0:
        return SedTerms(0.0, 0, d_frames, d_text, d_alpha, d_beta)

    dots = np.einsum("bld,kd->bkl", fv, tv)
    h = av[None, :, None] * dots + bv[None, :, None]
    t = zv * h
    loss_sum = float(np.sum(softplus(-t).ravel()))
    w = -zv * sigmoid(-t)                      # d(loss_sum)/dh
    d_frames[cm] = np.einsum("bkl,k,kd->bld", w, av, tv)
    d_text[sm] = np.einsum("bkl,k,bld->kd", w, av, fv)
    d_alpha[sm] = np.einsum("bkl,bkl->k", w, dots)
    d_beta[sm] = w.sum(axis=(0, 2))
    return SedTerms(loss_sum, count, d_frames, d_text, d_alpha, d_beta)


def sed_loss(frames, text, alpha_t, beta_t, z, slot_mask=None, clip_mask=None):
    """Mean detection loss over valid triples; the monolithic reference.

    Returns (loss, d_frames, d_text, d_alpha_t, d_beta_t). The caller decides
    what to do with d_beta_t: in per-text mode it is discarded (the bias head
    is trained by the prior loss alone)."""
    terms = sed_terms(frames, text, alpha_t, beta_t, z, slot_mask, clip_mask)
    if terms.count == 0:
        return 0.0, terms.d_frames, terms.d_text, terms.d_alpha, terms.d_beta
    n = terms.count
    return (terms.loss_sum / n, terms.d_frames / n, terms.d_text / n,
            terms.d_alpha / n, terms.d_beta / n)


# ---------------------------------------------------------------------------
# prior loss

def zbar(z: np.ndarray, slot_mask=None, clip_mask=None) -> np.ndarray:
    """Per-prompt mean positive rate over valid (clip, frame) pairs, in [0,1].

    Entries for masked-out slots are 0 (they carry no meaning)."""
    b, k, length = z.shape
    sm = np.ones(k, dtype=bool) if slot_mask is None else np.asarray(slot_mask, dtype=bool)
    cm = np.ones(b, dtype=bool) if clip_mask is None else np.asarray(clip_mask, dtype=bool)
    out = np.zeros(k)
    if cm.sum() == 0:
        return out
    pos = 0.5 * (z[cm].astype(np.float64) + 1.0)
    out[sm] = pos.mean(axis=(0, 2))[sm]
    return out


def prior_loss(beta_t: np.ndarray, zb: np.ndarray, slot_mask=None):
    """Mean BCE of sigmoid(beta) against each prompt's average label.

    Returns (loss, d_beta). Per-prompt minimizer: beta = log(zb/(1-zb))."""
    k = beta_t.shape[0]
    sm = np.ones(k, dtype=bool) if slot_mask is None else np.asarray(slot_mask, dtype=bool)
    n = int(sm.sum())
    d_beta = np.zeros_like(beta_t)
    if n == 0:
        return 0.0, d_beta
    bv, zv = beta_t[sm], zb[sm]
    loss = float(np.sum(zv * softplus(-bv) + (1.0 - zv) * softplus(bv)) / n)
    d_beta[sm] = (sigmoid(bv) - zv) / n
    return loss, d_beta


# ---------------------------------------------------------------------------
# combined training objective

@dataclass
class LossReport:
    clip: float
    sed: float
    prior: float
    total: float
    grad_norms: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"clip": self.clip, "sed": self.sed, "prior": self.prior,
                "total": self.total, "grad_norms": dict(self.grad_norms)}


def combined_loss(params: dict, config, feats: np.ndarray, prompts: list[str],
                  global_captions: list[str], z: np.ndarray,
                  gamma=GAMMA_DEFAULT,
                  ablate_scale: bool = False, ablate_bias: bool = False,
                  global_loss: bool = True, sed_impl=None):
    """Full forward/backward for one batch. Returns (LossReport, grads).

    feats: (B, L, n_bands) front-end features. prompts: K captions matching
    z's second axis. sed_impl may replace the monolithic frame-loss kernel
    with a numerically equivalent one (the ring simulation).
    """
    from . import encoders  # deferred: encoders never imports objectives

    if any(g < 0 for g in gamma):
        raise ValueError("loss weights must be nonnegative")
    g_clip, g_sed, g_prior = gamma
    if sed_impl is None:
        sed_impl = sed_loss
    grads = encoders.zero_grads(params)

    frames, glob, a_cache = encoders.audio_forward(params, feats)
    t_emb, t_feats, t_cache = encoders.text_forward(params, prompts, config)
    k = len(prompts)

    # per-text scale/bias, or their scalar ablation stand-ins
    if ablate_scale:
        alpha_t = np.full(k, np.exp(params["ablate/log_alpha_t"][0]))
        alpha_cache = None
    else:
        alpha_raw, alpha_cache = encoders.head_forward(params, "head_alpha", t_feats)
        alpha_t = np.exp(alpha_raw)
    if ablate_bias:
        beta_t = np.full(k, params["ablate/beta_t"][0])
        prior_cache = None
    else:
        # values enter the logit; parameters receive no detection-loss gradient
        beta_t, prior_cache = encoders.head_forward(params, "head_prior", t_feats)

    sed_val, d_frames, d_temb, d_alpha_t, d_beta_t = sed_impl(
        frames, t_emb, alpha_t, beta_t, z)

    clip_val = 0.0
    d_glob = None
    if global_loss and g_clip > 0:
        ge_emb, _, g_cache = encoders.text_forward(params, global_captions, config)
        alpha_clip = np.exp(params["clip/log_alpha"][0])
        clip_val, d_ea, d_et, d_alpha_clip = clip_loss(glob, ge_emb, alpha_clip)
        d_glob = g_clip * d_ea
        encoders.text_backward(params, g_cache, g_clip * d_et, None, grads)
        grads["clip/log_alpha"][0] += g_clip * d_alpha_clip * alpha_clip

    prior_val = 0.0
    if not ablate_bias:
        zb = zbar(z)
        prior_val, d_beta_prior = prior_loss(beta_t, zb)
        if g_prior > 0:
            encoders.head_backward(params, "head_prior", prior_cache,
                                   g_prior * d_beta_prior, grads)

    encoders.audio_backward(params, a_cache, g_sed * d_frames, d_glob, grads)
    encoders.text_backward(params, t_cache, g_sed * d_temb, None, grads)
    if ablate_scale:
        grads["ablate/log_alpha_t"][0] += g_sed * float(d_alpha_t @ alpha_t)
    else:
        encoders.head_backward(params, "head_alpha", alpha_cache,
                               g_sed * d_alpha_t * alpha_t, grads)
    if ablate_bias:
        grads["ablate/beta_t"][0] += g_sed * float(d_beta_t.sum())
    # per-text mode: d_beta_t is discarded (stop-gradient into the bias head)

    total = g_clip * clip_val + g_sed * sed_val + g_prior * prior_val
    norms = {}
    for prefix in ("audio", "text", "head_alpha", "head_prior", "clip", "ablate"):
        sq = sum(float((v * v).sum()) for n, v in grads.items() if n.startswith(prefix + "/"))
        norms[prefix] = float(np.sqrt(sq))
    report = LossReport(clip=clip_val, sed=sed_val, prior=prior_val,
                        total=float(total), grad_norms=norms)
    return report, grads


# ---------------------------------------------------------------------------
# tabular world: exact expected-loss optimum

@dataclass
class TabularWorld:
    """Finite world with prompts independent of frames in the scoring
    distribution: p(z=+1, x, l, y) = p_frame(x,l) * p_prompt(y) * activity."""
    p_frame: np.ndarray   # (X, L), sums to 1, strictly positive
    p_prompt: np.ndarray  # (Y,), sums to 1, strictly positive
    activity: np.ndarray  # (X, L, Y), p(z=+1 | x,l,y), in (0,1)

    def validate(self) -> None:
        if not np.isclose(self.p_frame.sum(), 1.0) or (self.p_frame <= 0).any():
            raise ValueError("frame distribution must be strictly positive and sum to 1")
        if not np.isclose(self.p_prompt.sum(), 1.0) or (self.p_prompt <= 0).any():
            raise ValueError("prompt distribution must be strictly positive and sum to 1")
        if ((self.activity <= 0) | (self.activity >= 1)).any():
            raise ValueError("activity probabilities must lie strictly inside (0,1)")

    def cell_mass(self) -> np.ndarray:
        return self.p_frame[..., None] * self.p_prompt

    def optimal_table(self) -> np.ndarray:
        """Pointwise minimizer: the log-odds of activity at each (x,l,y)."""
        return np.log(self.activity / (1.0 - self.activity))

    def positive_rate(self) -> np.ndarray:
        """Per-prompt marginal p(z=+1 | y)."""
        return np.einsum("xl,xly->y", self.p_frame, self.activity)

    def beta_star(self) -> np.ndarray:
        a = self.positive_rate()
        return np.log(a / (1.0 - a))


def uniform_mass_world(seed: int, n_clips: int = 2, n_frames: int = 4,
                       n_prompts: int = 3, frame_mass: float = 0.005) -> TabularWorld:
    """Random world whose per-frame expected activity mass is constant.

    Holding sum_y p(y) * activity(x,l,y) fixed across frames (and keeping
    rates small) is what makes the fitted table decompose into a frame term
    plus a per-prompt bias; free-form worlds do not satisfy that identity.
    """
    from .numcore import Rng
    rng = Rng(seed).stream("world", 0)
    p_frame = rng.uniform(0.5, 1.5, (n_clips, n_frames))
    p_frame /= p_frame.sum()
    p_prompt = rng.uniform(0.5, 1.5, n_prompts)
    p_prompt /= p_prompt.sum()
    a0 = rng.uniform(0.2, 1.0, (n_clips, n_frames, n_prompts))
    mass0 = a0 @ p_prompt
    activity = a0 * (frame_mass / mass0)[..., None]
    world = TabularWorld(p_frame, p_prompt, activity)
    world.validate()
    return world


def tabular_sed_optimum(world: TabularWorld, steps: int = 20000, lr: float = 50.0) -> dict:
    """Gradient descent on the exact expected detection loss over a free
    logit table h(x,l,y). Returns the fitted table plus convergence info."""
    world.validate()
    cell = world.cell_mass()
    p1 = cell * world.activity
    p0 = cell * (1.0 - world.activity)
    h = np.zeros_like(world.activity)
    max_grad = np.inf
    done = 0
    for step in range(steps):
        g = p0 * sigmoid(h) - p1 * sigmoid(-h)
        h -= lr * g
        done = step + 1
        max_grad = float(np.abs(g / cell).max())
        if max_grad < 1e-10:
            break
    return {"table": h, "converged": max_grad < 1e-8,
            "max_grad": max_grad, "steps": done}


# ---------------------------------------------------------------------------
# scalar logistic fit (bias experiment)

def fit_logistic_bias(dots: np.ndarray, z: np.ndarray, fit_scale: bool = True,
                      alpha_init: float = 1.0, beta_init: float = 0.0,
                      iters: int = 200) -> tuple[float, float]:
    """Fit h = alpha*dot + beta to labels z in {-1,+1} by Newton descent on
    the mean logistic loss. Returns (alpha, beta); alpha fixed if fit_scale
    is false."""
    d = np.asarray(dots, dtype=np.float64).ravel()
    zz = np.asarray(z, dtype=np.float64).ravel()
    if d.shape != zz.shape:
        raise ValueError("dots and labels must have matching shapes")
    if not np.isin(zz, (-1.0, 1.0)).all():
        raise ValueError("labels must be -1 or +1")
    alpha, beta = float(alpha_init), float(beta_init)
    for _ in range(iters):
        h = alpha * d + beta
        s = sigmoid(-zz * h)
        g_b = float(np.mean(-zz * s))
        w = s * (1.0 - s)
        if fit_scale:
            g_a = float(np.mean(-zz * d * s))
            haa = float(np.mean(w * d * d)) + 1e-12
            hab = float(np.mean(w * d))
            hbb = float(np.mean(w)) + 1e-12
            det = haa * hbb - hab * hab
            if abs(det) < 1e-18:
                break
            da = (hbb * g_a - hab * g_b) / det
            db = (haa * g_b - hab * g_a) / det
            da = np.clip(da, -5.0, 5.0)
            db = np.clip(db, -5.0, 5.0)
            alpha, beta = alpha - da, beta - db
            if max(abs(da), abs(db)) < 1e-13:
                break
        else:
            hbb = float(np.mean(w)) + 1e-12
            db = np.clip(g_b / hbb, -5.0, 5.0)
            beta -= db
            if abs(db) < 1e-13:
                break
    return alpha, beta
