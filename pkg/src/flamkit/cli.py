"""Command line entry points: synth, train, eval, infer, verify.

Exit codes: 0 success, 1 check or run failure (verify failures, aborted
training), 2 invalid input (bad catalogs, malformed configs, mismatched
checkpoint/config pairs, wrong audio format). FLAMKIT_THREADS caps the
worker pool used for front-end feature extraction.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, batcher, encoders, inference, metrics, training, verify
from .synthpipe.catalog import Catalog, default_catalog
from .synthpipe.dataset import read_manifest, synthesize_dataset
from .synthpipe.wavio import read_wav_f32


def cmd_synth(args) -> int:
    catalog = Catalog.load(args.catalog) if args.catalog else default_catalog()
    catalog.validate()
    manifest = synthesize_dataset(catalog, args.count, args.seed, args.out,
                                  partition=args.partition)
    print(f"wrote {args.count} mixtures under {args.out}")
    print(f"manifest: {manifest}")
    print(f"events: {len(catalog.partition_events(args.partition))} recipes "
          f"({len(catalog.train_events())} train / {len(catalog.heldout_events())} held out), "
          f"{len(catalog.backgrounds)} backgrounds")
    return 0


def cmd_train(args) -> int:
    cfg = training.RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if args.devices is not None:
        cfg.devices = args.devices
    if args.steps is not None:
        cfg.steps = args.steps
    if args.ablate_per_text_bias:
        cfg.per_text_bias = "scalar"
    if args.ablate_per_text_scale:
        cfg.per_text_scale = "scalar"
    if args.no_global_loss:
        cfg.global_loss = "off"
    arts = training.train(cfg)
    print(f"checkpoint: {arts.checkpoint}")
    print(f"loss log:   {arts.loss_log}")
    print(f"config:     {arts.config_path} (hash {arts.config_hash[:12]})")
    return 0


def cmd_eval(args) -> int:
    params, model_config, meta = encoders.load_checkpoint(args.checkpoint)
    chash = meta.get("config_hash", "")
    if args.config:
        want = training.RunConfig.load(args.config).config_hash()
        if want != chash:
            raise ValueError(
                f"config hash mismatch: checkpoint carries {chash[:12]}, "
                f"config file gives {want[:12]}")
    records = read_manifest(args.manifest)
    root = Path(args.manifest).parent
    report = metrics.evaluate_sed(params, model_config, records, root,
                                  dataset_name=args.dataset_name,
                                  prompt_policy=args.policy, config_hash=chash)

    # retrieval over (global audio embedding, global caption embedding) pairs
    audio_embs, text_embs = [], []
    for rec in records:
        wave, sr = read_wav_f32(root / rec.audio)
        _, glob = encoders.encode_audio(params, model_config, wave, sr)
        audio_embs.append(glob)
        emb, _ = encoders.encode_text(params, model_config,
                                      batcher.global_caption(rec))
        text_embs.append(emb)
    retrieval = {}
    if len(records) >= 2:
        sim = np.stack(text_embs) @ np.stack(audio_embs).T
        for k in (1, 5):
            if k <= len(records):
                t2a, a2t = metrics.recall_at_k(sim, k)
                retrieval[f"r{k}"] = {"text_to_audio": t2a, "audio_to_text": a2t}
    report["retrieval"] = retrieval

    if args.out:
        metrics.write_report(args.out, report)
        print(f"report: {args.out}")
    macro = report["macro"]
    if macro is None:
        print("macro: no scoreable events")
    else:
        print(f"macro: auroc {macro['auroc']:.4f}  mpauc {macro['mpauc']:.4f}  "
              f"rho {macro['rho']:.4f}  over {macro['n_events']} events")
    for k, pair in retrieval.items():
        print(f"retrieval {k}: text->audio {pair['text_to_audio']:.3f}  "
              f"audio->text {pair['audio_to_text']:.3f}")
    return 0


def cmd_infer(args) -> int:
    params, model_config, meta = encoders.load_checkpoint(args.checkpoint)
    wave, sr = read_wav_f32(args.wav)
    if sr != encoders.SR or wave.shape[0] != encoders.CLIP_SAMPLES:
        raise ValueError(
            f"expected a 10 s clip at {encoders.SR} Hz, got {wave.shape[0]} "
            f"samples at {sr} Hz; resample or pad the file first")
    frames, _ = encoders.encode_audio(params, model_config, wave, sr)
    emb, feats = encoders.encode_text(params, model_config, args.prompt)
    alpha = float(encoders.text_scale(params, feats[None])[0])
    scores = inference.median_filter(inference.frame_scores(frames, emb, alpha))
    segments = inference.extract_timeline(scores, args.threshold)
    doc = {
        "wav": str(args.wav),
        "prompt": args.prompt,
        "threshold": args.threshold,
        "config_hash": meta.get("config_hash", ""),
        "segments": [s.to_dict() for s in segments],
    }
    if args.out:
        Path(args.out).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    if segments:
        for s in segments:
            print(f"{s.onset:7.3f} .. {s.offset:7.3f} s  score {s.score:.3f}")
    else:
        print("no segments above threshold")
    return 0


def cmd_verify(args) -> int:
    checks = verify.run_checks(perturb_gradient=args.perturb_gradient)
    print(verify.format_report(checks))
    return 0 if all(c["passed"] for c in checks) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="flamkit",
        description="Frame-wise language-audio event detection toolkit")
    p.add_argument("--version", action="version", version=f"flamkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic soundscape dataset")
    s.add_argument("--catalog", default="",
                   help="catalog JSON (the built-in catalog when omitted)")
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--partition", default="train", choices=("train", "heldout"))
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train the dual encoders")
    t.add_argument("--config", required=True, help="RunConfig JSON path")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", default=None)
    t.add_argument("--devices", type=int, default=None)
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--ablate-per-text-bias", action="store_true",
                   help="replace the bias head with one trained scalar")
    t.add_argument("--ablate-per-text-scale", action="store_true",
                   help="replace the scale head with one trained scalar")
    t.add_argument("--no-global-loss", action="store_true",
                   help="drop the clip-level contrastive term")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", default="", help="write the report JSON here")
    e.add_argument("--policy", default="gt", choices=("gt", "all"))
    e.add_argument("--config", default="",
                   help="config snapshot; its hash must match the checkpoint")
    e.add_argument("--dataset-name", default="eval")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="detect one prompt in one clip")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--wav", required=True)
    i.add_argument("--prompt", required=True)
    i.add_argument("--threshold", type=float, default=0.5)
    i.add_argument("--out", default="", help="write the timeline JSON here")
    i.set_defaults(func=cmd_infer)

    v = sub.add_parser("verify", help="run the oracle and property checks")
    v.add_argument("--perturb-gradient", action="store_true",
                   help="negative control: corrupt one analytic gradient")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except training.TrainAbort as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
