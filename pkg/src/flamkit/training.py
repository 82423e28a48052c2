"""Deterministic training loop: Adam over the dual encoders with the
ring-sharded detection loss, JSONL loss logging, and reproducible artifacts.

Every artifact (config snapshot, loss log, checkpoint sidecar) embeds the
config hash and tool version and contains no timestamps, so repeated runs of
the same config are bit-identical.
"""

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, batcher, encoders, numcore, objectives, ringsim
from .synthpipe.catalog import Catalog
from .synthpipe.dataset import read_manifest
from .synthpipe.wavio import read_wav_f32

ABLATION_CHOICES = ("on", "scalar")
GLOBAL_CHOICES = ("on", "off")


@dataclass
class RunConfig:
    """One training run, serializable as a single JSON document."""
    seed: int = 0
    train_manifest: str = ""
    eval_manifest: str = ""
    catalog: str = ""              # needed only when caption_mode uses tags
    out_dir: str = "run"
    batch_size: int = 16
    devices: int = 2
    steps: int = 2000
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    adam_eps: float = 1e-8
    gamma_clip: float = 1.0
    gamma_sed: float = 200.0
    gamma_prior: float = 1.0
    per_text_scale: str = "on"     # on | scalar
    per_text_bias: str = "on"      # on | scalar
    global_loss: str = "on"        # on | off
    caption_mode: str = "mixed"    # caption | tag | mixed
    caption_dropout: float = 0.0   # per-word drop rate for training prompts
    log_interval: int = 20
    checkpoint_interval: int = 0   # 0: final checkpoint only
    model: dict = field(default_factory=dict)  # ModelConfig field overrides

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.devices < 1:
            raise ValueError("devices must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if min(self.gamma_clip, self.gamma_sed, self.gamma_prior) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.per_text_scale not in ABLATION_CHOICES:
            raise ValueError(f"per_text_scale must be one of {ABLATION_CHOICES}")
        if self.per_text_bias not in ABLATION_CHOICES:
            raise ValueError(f"per_text_bias must be one of {ABLATION_CHOICES}")
        if self.global_loss not in GLOBAL_CHOICES:
            raise ValueError(f"global_loss must be one of {GLOBAL_CHOICES}")
        if self.caption_mode not in ("caption", "tag", "mixed"):
            raise ValueError("caption_mode must be caption, tag, or mixed")
        if not 0.0 <= self.caption_dropout < 1.0:
            raise ValueError("caption_dropout must be in [0, 1)")
        if not self.train_manifest:
            raise ValueError("train_manifest is required")

    def model_config(self) -> encoders.ModelConfig:
        base = asdict(encoders.ModelConfig())
        unknown = set(self.model) - set(base)
        if unknown:
            raise ValueError(f"unknown model fields: {sorted(unknown)}")
        base.update(self.model)
        return encoders.ModelConfig(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    @staticmethod
    def from_dict(doc: dict) -> "RunConfig":
        # save() annotates the snapshot with these two informational keys
        doc = {k: v for k, v in doc.items()
               if k not in ("config_hash", "tool_version")}
        known = {f for f in RunConfig.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return RunConfig(**doc)

    @staticmethod
    def load(path) -> "RunConfig":
        return RunConfig.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        doc = self.to_dict()
        doc["config_hash"] = self.config_hash()
        doc["tool_version"] = __version__
        Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


@dataclass
class RunArtifacts:
    checkpoint: str
    loss_log: str
    config_path: str
    config_hash: str


class TrainAbort(RuntimeError):
    """Raised when the loss stops being finite; carries the offending batch."""

    def __init__(self, step: int, clip_ids: list):
        super().__init__(f"non-finite loss at step {step}; clips {clip_ids}")
        self.step = step
        self.clip_ids = list(clip_ids)


def n_workers() -> int:
    """Worker-pool width, capped by the FLAMKIT_THREADS environment variable."""
    raw = os.environ.get("FLAMKIT_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def load_features(audio_root, records: list, config) -> dict:
    """Front-end features per clip id. Each clip is independent, so a thread
    pool changes wall time only, never the values."""
    root = Path(audio_root)

    def one(rec):
        wave, sr = read_wav_f32(root / rec.audio)
        return encoders.audio_features(wave, sr, config)

    workers = n_workers()
    if workers == 1:
        feats = [one(r) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            feats = list(pool.map(one, records))
    return {rec.id: f for rec, f in zip(records, feats)}


def train(cfg: RunConfig, records: list | None = None,
          feature_cache: dict | None = None) -> RunArtifacts:
    """Run the loop and write config snapshot, loss log, and checkpoint.

    records/feature_cache may be passed to skip manifest and WAV reads (the
    tests use this; the CLI always goes through the files).
    """
    cfg.validate()
    if records is None:
        records = read_manifest(cfg.train_manifest)
    model_config = cfg.model_config()
    if feature_cache is None:
        feature_cache = load_features(Path(cfg.train_manifest).parent, records,
                                      model_config)

    caption_to_class = None
    if cfg.caption_mode != "caption" and cfg.catalog:
        caption_to_class = Catalog.load(cfg.catalog).caption_to_class()

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config_path = out / "config.json"
    cfg.save(config_path)
    chash = cfg.config_hash()
    meta = {"config_hash": chash, "steps": cfg.steps, "tool_version": __version__}

    params = encoders.init_params(model_config, cfg.seed)
    vec, layout = encoders.flatten_params(params)
    opt = numcore.AdamState(lr=cfg.lr, beta1=cfg.adam_beta1,
                            beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    gamma = (cfg.gamma_clip, cfg.gamma_sed, cfg.gamma_prior)
    log_lines = []

    def abort(step, batch, report):
        dump = {"step": step, "clips": list(batch.clip_ids),
                "losses": None if report is None else report.to_dict()}
        (out / "abort.json").write_text(json.dumps(dump, sort_keys=True,
                                                   indent=2) + "\n")
        return TrainAbort(step, batch.clip_ids)

    for step in range(cfg.steps):
        batch = batcher.sample_batch(records, cfg.batch_size, cfg.seed, step,
                                     cfg.caption_mode, caption_to_class,
                                     caption_dropout=cfg.caption_dropout)
        feats = np.stack([feature_cache[r.id] for r in batch.records])
        owner = np.asarray(batch.prompt_first_clip, dtype=np.int64)

        def sed_impl(frames, t_emb, alpha_t, beta_t, z, _owner=owner):
            return ringsim.ring_sed_loss(frames, t_emb, alpha_t, beta_t, z,
                                         _owner, cfg.devices)

        try:
            report, grads = objectives.combined_loss(
                params, model_config, feats, batch.prompts, batch.global_captions,
                batch.z, gamma,
                ablate_scale=cfg.per_text_scale == "scalar",
                ablate_bias=cfg.per_text_bias == "scalar",
                global_loss=cfg.global_loss == "on",
                sed_impl=sed_impl)
            if not np.isfinite(report.total):
                raise abort(step, batch, report)
            gvec, _ = encoders.flatten_params(grads)
            vec, opt = numcore.adam_step(vec, gvec, opt)
        except numcore.NonFiniteError as err:
            # a diverging step overflows inside the loss or the optimizer
            raise abort(step, batch, None) from err
        params = encoders.unflatten_params(vec, layout)

        if step % cfg.log_interval == 0 or step == cfg.steps - 1:
            log_lines.append(json.dumps({"step": step, **report.to_dict()},
                                        sort_keys=True))
        if cfg.checkpoint_interval > 0 and (step + 1) % cfg.checkpoint_interval == 0 \
                and step + 1 < cfg.steps:
            encoders.save_checkpoint(out / f"model.step{step + 1:06d}.ckpt",
                                     params, model_config,
                                     {**meta, "steps": step + 1})

    loss_log = out / "loss_log.jsonl"
    loss_log.write_text("\n".join(log_lines) + ("\n" if log_lines else ""))
    ckpt = out / "model.ckpt"
    encoders.save_checkpoint(ckpt, params, model_config, meta)
    return RunArtifacts(checkpoint=str(ckpt), loss_log=str(loss_log),
                        config_path=str(config_path), config_hash=chash)
