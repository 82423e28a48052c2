"""Simulated multi-device computation of the frame-level detection loss.

The batch's clips are split contiguously across N simulated devices. Each
device gets text slots for five times its clip count; every batch prompt
lives in exactly one device's block (the device of the clip that introduced
it). Blocks of (embeddings, scale, bias, mask) circulate around the ring for
N-1 hops so each device scores its local frames against every block once.
Gradient buffers ride with their block and are applied by the owner after
the full cycle, which makes the result match the monolithic computation.

Devices are stepped sequentially in a fixed order; the point here is the
protocol's arithmetic, not transport.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .objectives import sed_terms

SLOTS_PER_CLIP = 5


@dataclass
class RingSchedule:
    n_devices: int

    @property
    def hops(self) -> int:
        return self.n_devices - 1

    def resident_block(self, device: int, hop: int) -> int:
        """Which text block device holds at a given hop (blocks move +1)."""
        return (device - hop) % self.n_devices

    def visit_matrix(self) -> np.ndarray:
        n = self.n_devices
        return np.array([[self.resident_block(d, h) for h in range(n)] for d in range(n)])

    def hop_pairs(self, hop: int) -> list[tuple[int, int]]:
        n = self.n_devices
        return [(d, (d + 1) % n) for d in range(n)]


@dataclass
class SlotLayout:
    n_devices: int
    clips_per_device: int
    slots_per_device: int
    slot_prompt: np.ndarray   # (N, S) global prompt index, -1 for padding
    slot_mask: np.ndarray     # (N, S) bool

    def owned_prompts(self, device: int) -> np.ndarray:
        row = self.slot_prompt[device]
        return row[row >= 0]


def build_slot_layout(owner_clip: np.ndarray, n_prompts: int, n_clips_padded: int,
                      n_devices: int, slots_per_clip: int = SLOTS_PER_CLIP) -> SlotLayout:
    """Assign each prompt to the device of its owning clip, first-appearance
    order within the device. Raises if a device's prompts exceed its budget
    (the per-clip prompt cap upstream is what rules this out)."""
    cpd = n_clips_padded // n_devices
    slots = slots_per_clip * cpd
    slot_prompt = np.full((n_devices, slots), -1, dtype=int)
    owner_clip = np.asarray(owner_clip, dtype=int)
    if owner_clip.shape != (n_prompts,):
        raise ValueError("owner map length must equal the prompt count")
    owner_device = owner_clip // cpd
    for d in range(n_devices):
        owned = np.flatnonzero(owner_device == d)  # ascending = first-appearance
        if owned.size > slots:
            raise ValueError(
                f"device {d} owns {owned.size} prompts but has {slots} text slots")
        slot_prompt[d, :owned.size] = owned
    return SlotLayout(n_devices, cpd, slots, slot_prompt, slot_prompt >= 0)


def ring_sed_loss(frames: np.ndarray, text: np.ndarray, alpha_t: np.ndarray,
                  beta_t: np.ndarray, z: np.ndarray, owner_clip: np.ndarray,
                  n_devices: int, slots_per_clip: int = SLOTS_PER_CLIP,
                  want_diagnostics: bool = False):
    """Ring-sharded mean detection loss.

    Returns (loss, d_frames, d_text, d_alpha_t, d_beta_t) like the monolithic
    version; with want_diagnostics, a dict with the visit matrix and the
    (clip, prompt) coverage counts is appended.
    """
    b, length, dim = frames.shape
    k = text.shape[0]
    if n_devices < 1:
        raise ValueError("need at least one device")
    cpd = -(-b // n_devices)                 # ceil
    b_pad = cpd * n_devices
    clip_valid = np.arange(b_pad) < b
    if b_pad > b:
        frames = np.concatenate([frames, np.zeros((b_pad - b, length, dim))])
        z = np.concatenate([z, np.ones((b_pad - b, k, length), dtype=z.dtype)])

    layout = build_slot_layout(owner_clip, k, b_pad, n_devices, slots_per_clip)
    schedule = RingSchedule(n_devices)
    s = layout.slots_per_device

    # build the per-device text blocks (the payload that circulates)
    blocks = []
    for dev in range(n_devices):
        sp = layout.slot_prompt[dev]
        mask = layout.slot_mask[dev]
        idx = np.where(mask, sp, 0) if mask.any() else np.zeros(s, dtype=int)
        empty = not mask.any()
        blocks.append({
            "text": np.zeros((s, dim)) if empty else np.where(mask[:, None], text[idx], 0.0),
            "alpha": np.zeros(s) if empty else np.where(mask, alpha_t[idx], 0.0),
            "beta": np.zeros(s) if empty else np.where(mask, beta_t[idx], 0.0),
            "mask": mask,
            "d_text": np.zeros((s, dim)),
            "d_alpha": np.zeros(s),
            "d_beta": np.zeros(s),
        })

    total_sum = 0.0
    total_count = 0
    d_frames_pad = np.zeros_like(frames)
    coverage = np.zeros((b_pad, k), dtype=int)

    # device-major accumulation: each device walks its N resident blocks
    for dev in range(n_devices):
        lo, hi = dev * cpd, (dev + 1) * cpd
        f_loc = frames[lo:hi]
        cm = clip_valid[lo:hi]
        for hop in range(n_devices):
            blk_id = schedule.resident_block(dev, hop)
            blk = blocks[blk_id]
            if not blk["mask"].any():
                continue
            sp = layout.slot_prompt[blk_id]
            idx = np.where(blk["mask"], sp, 0)
            z_blk = np.where(blk["mask"][None, :, None], z[lo:hi, idx, :], -1).astype(np.int8)
            terms = sed_terms(f_loc, blk["text"], blk["alpha"], blk["beta"], z_blk,
                              slot_mask=blk["mask"], clip_mask=cm)
            total_sum += terms.loss_sum
            total_count += terms.count
            d_frames_pad[lo:hi] += terms.d_frames
            blk["d_text"] += terms.d_text
            blk["d_alpha"] += terms.d_alpha
            blk["d_beta"] += terms.d_beta
            coverage[np.ix_(np.arange(lo, hi)[cm], sp[blk["mask"]])] += 1

    d_text = np.zeros_like(text)
    d_alpha = np.zeros_like(alpha_t)
    d_beta = np.zeros_like(beta_t)
    for dev in range(n_devices):          # owner applies after the full cycle
        mask = layout.slot_mask[dev]
        owned = layout.slot_prompt[dev][mask]
        blk = blocks[dev]
        d_text[owned] = blk["d_text"][mask]
        d_alpha[owned] = blk["d_alpha"][mask]
        d_beta[owned] = blk["d_beta"][mask]

    if total_count == 0:
        out = (0.0, d_frames_pad[:b], d_text, d_alpha, d_beta)
    else:
        n = total_count
        out = (total_sum / n, d_frames_pad[:b] / n, d_text / n, d_alpha / n, d_beta / n)
    if want_diagnostics:
        return out + ({"visit_matrix": schedule.visit_matrix(),
                       "coverage": coverage[:b], "hops": schedule.hops,
                       "valid_triples": total_count},)
    return out


def peak_memory_report(batch_size: int, n_frames: int, dim: int, n_devices: int,
                       slots_per_clip: int = SLOTS_PER_CLIP) -> dict:
    """Deterministic per-device resident element counts for the ring pass.

    Count per device: local frames and their gradient buffer, one resident
    text block with its gradient buffer, the local label slice, and the
    logit workspace for one (clips x slots x frames) kernel call.
    """
    cpd = -(-batch_size // n_devices)
    slots = slots_per_clip * cpd
    frame_elems = cpd * n_frames * dim
    block_elems = slots * (dim + 3)
    label_elems = cpd * slots * n_frames
    work_elems = cpd * slots * n_frames
    per_device = []
    for dev in range(n_devices):
        per_device.append({
            "device": dev,
            "clips": cpd,
            "text_slots": slots,
            "hops": n_devices - 1,
            "frame_elements": 2 * frame_elems,
            "block_elements": 2 * block_elems,
            "label_elements": label_elems,
            "workspace_elements": work_elems,
            "peak_elements": 2 * frame_elems + 2 * block_elems + label_elems + work_elems,
        })
    return {"devices": n_devices, "slots_per_clip": slots_per_clip,
            "per_device": per_device}
