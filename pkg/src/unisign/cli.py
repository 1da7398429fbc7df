"""Command-line entry point: curate | pretrain | finetune | evaluate | ablate | stats.

Exit codes: 0 success, 1 runtime failure, 2 configuration/usage error.
Every artifact a subcommand writes embeds the hash of the config that
produced it. The output root defaults to $UNISIGN_OUTPUT_ROOT when set.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .errors import ConfigError, MalformedFileError, UniSignError

logger = logging.getLogger("unisign")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unisign",
        description="Unified sign-language understanding: curation, training, evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"unisign {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    cur = sub.add_parser("curate", help="segment transcripts into a clip manifest")
    cur.add_argument("--transcripts", required=True, help="transcript file or directory of *.jsonl")
    cur.add_argument("--out", required=True, help="output manifest path (.jsonl)")
    cur.add_argument("--media-root", default="", help="prefix for media references")
    cur.add_argument("--keypoint-root", default="keypoints", help="prefix for keypoint files")
    cur.add_argument("--frame-rate", type=float, default=25.0)
    cur.add_argument("--split", default="train", choices=["train", "dev", "test"])
    cur.add_argument("--geometry", default=None, help="crop geometry JSON keyed by program id")
    cur.add_argument("--marks", default=None, help="sentence-final marks, e.g. '。？！'")
    cur.add_argument("--no-length-filter", action="store_true")
    cur.add_argument("--stats-out", default=None, help="directory for corpus statistics")
    cur.add_argument("--text-unit", default="char", choices=["char", "word"])

    st = sub.add_parser("stats", help="corpus statistics for an existing manifest")
    st.add_argument("--manifest", required=True)
    st.add_argument("--out", default=None, help="output directory (default: manifest dir)")
    st.add_argument("--text-unit", default="char", choices=["char", "word"])

    pre = sub.add_parser("pretrain", help="stage 1 (pose-only) or stage 2 (RGB-pose)")
    pre.add_argument("--stage", type=int, required=True, choices=[1, 2])
    pre.add_argument("--config", required=True)
    pre.add_argument("--init", default=None, help="checkpoint to start from (required for stage 2)")
    pre.add_argument("--out", default=None, help="output directory (default from config)")
    pre.add_argument("--p-samp", type=float, default=None, help="override sampling fraction")
    pre.add_argument("--seed", type=int, default=None, help="override run seed")
    pre.add_argument("--fusion", default=None, choices=["deformable", "cross_attention"])
    pre.add_argument("--max-steps", type=int, default=None)

    fin = sub.add_parser("finetune", help="stage 3 per-task fine-tuning")
    fin.add_argument("--task", required=True, choices=["islr", "cslr", "slt"])
    fin.add_argument("--config", required=True)
    fin.add_argument("--init", required=True, help="stage-1 or stage-2 checkpoint")
    fin.add_argument("--out", default=None)
    fin.add_argument("--p-samp", type=float, default=None)
    fin.add_argument("--seed", type=int, default=None)
    fin.add_argument("--fusion", default=None, choices=["deformable", "cross_attention"])
    fin.add_argument("--max-steps", type=int, default=None)

    ev = sub.add_parser("evaluate", help="decode a checkpoint and score it")
    ev.add_argument("--task", required=True, choices=["islr", "cslr", "slt"])
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--manifest", required=True)
    ev.add_argument("--config", default=None,
                    help="run config; defaults to the one stored in the checkpoint")
    ev.add_argument("--out", default=None)
    ev.add_argument("--split", default="test")
    ev.add_argument("--decode", default=None, choices=["greedy", "beam"])
    ev.add_argument("--beam-width", type=int, default=None)
    ev.add_argument("--max-len", type=int, default=None)
    ev.add_argument("--p-samp", type=float, default=None)
    ev.add_argument("--fusion", default=None, choices=["deformable", "cross_attention"])

    ab = sub.add_parser("ablate", help="unified vs. task-specific fine-tuning comparison")
    ab.add_argument("--paradigm", required=True, choices=["unified", "task_specific"])
    ab.add_argument("--task", required=True, choices=["islr", "cslr"])
    ab.add_argument("--features", default="sign", choices=["sign", "lm_enc"])
    ab.add_argument("--config", default=None,
                    help="run config; defaults to the one stored in the checkpoint")
    ab.add_argument("--init", required=True)
    ab.add_argument("--out", default=None)
    ab.add_argument("--steps", type=int, default=300)
    ab.add_argument("--seed", type=int, default=None)
    return parser


def _output_dir(args, cfg) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    root = os.environ.get("UNISIGN_OUTPUT_ROOT")
    base = Path(root) if root else Path(".")
    return base / cfg.output_dir


def _load_config(args, checkpoint=None):
    from .config import from_dict, load_config

    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif checkpoint is not None and checkpoint.get("extra", {}).get("run_config"):
        cfg = from_dict(checkpoint["extra"]["run_config"])
    else:
        raise ConfigError(
            "--config is required (this checkpoint does not embed a run config)"
        )
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "p_samp", None) is not None:
        cfg.sampler.p_samp = args.p_samp
    if getattr(args, "fusion", None):
        cfg.fusion.mode = args.fusion
    if getattr(args, "decode", None):
        cfg.decode.strategy = args.decode
    if getattr(args, "beam_width", None) is not None:
        cfg.decode.beam_width = args.beam_width
    if getattr(args, "max_len", None) is not None:
        cfg.decode.max_len = args.max_len
    return cfg


def _tokenizer_for(cfg, records, out_dir, checkpoint=None):
    from .lm import Tokenizer
    from .trainer import build_target

    if checkpoint is not None and checkpoint.get("extra", {}).get("tokens"):
        # the vocabulary a checkpoint was trained with always wins; anything
        # else could silently misalign the embedding table
        return Tokenizer(checkpoint["extra"]["tokens"])
    if cfg.lm.vocab_file:
        return Tokenizer.load(cfg.lm.vocab_file)
    texts = []
    for task in ("pslt", "islr", "cslr", "slt"):
        for rec in records:
            try:
                texts.append(build_target(rec, task).text)
            except UniSignError:
                pass
    tok = Tokenizer.from_corpus(texts)
    vocab_path = Path(out_dir) / "vocab.txt"
    vocab_path.parent.mkdir(parents=True, exist_ok=True)
    tok.save(vocab_path)
    logger.info("built vocabulary of %d tokens -> %s", tok.vocab_size, vocab_path)
    return tok


def _build_model_from_cfg(cfg, tokenizer, with_vision):
    from .lm import LMConfig
    from .model import build_model
    from .pose import canonical_group_specs
    from .sampler import SamplerConfig

    node_counts = {g: s.node_count for g, s in canonical_group_specs().items()}
    lm_cfg = LMConfig(
        d_model=cfg.lm.d_model,
        nhead=cfg.lm.nhead,
        encoder_layers=cfg.lm.encoder_layers,
        decoder_layers=cfg.lm.decoder_layers,
        ffn_dim=cfg.lm.ffn_dim,
        dropout=cfg.lm.dropout,
        max_len=cfg.lm.max_len,
    )
    return build_model(
        node_counts=node_counts,
        encoder_cfg=cfg.encoder,
        tokenizer=tokenizer,
        lm_cfg=lm_cfg,
        fusion_cfg=cfg.fusion,
        with_vision=with_vision,
        sampler_cfg=SamplerConfig(p_samp=cfg.sampler.p_samp, seed=cfg.seed, dedupe=cfg.sampler.dedupe),
    )


def cmd_curate(args) -> int:
    from .curation import (
        apply_filters,
        corpus_stats,
        load_crop_geometry,
        read_transcript,
        records_from_segments,
        segment,
        write_manifest,
    )
    from .report import write_corpus_stats

    src = Path(args.transcripts)
    files = sorted(src.glob("*.jsonl")) if src.is_dir() else [src]
    if not files:
        raise ConfigError(f"no transcript files under {src}")
    geometry = load_crop_geometry(args.geometry) if args.geometry else {}
    marks = tuple(args.marks) if args.marks else None
    records = []
    for f in files:
        inp = read_transcript(f)
        if marks:
            inp = type(inp)(program_id=inp.program_id, utterances=inp.utterances, marks=marks)
        segments = segment(inp)
        media = str(Path(args.media_root) / f"{inp.program_id}.mp4") if args.media_root else f"{inp.program_id}.mp4"
        records.extend(
            records_from_segments(
                inp.program_id,
                segments,
                media=media,
                keypoint_dir=args.keypoint_root,
                frame_rate=args.frame_rate,
                split=args.split,
                crop_box=geometry.get(inp.program_id),
            )
        )
    if not args.no_length_filter:
        records = apply_filters(records)
    params = {
        "frame_rate": args.frame_rate, "split": args.split, "marks": args.marks,
        "geometry": args.geometry, "length_filter": not args.no_length_filter,
        "text_unit": args.text_unit,
    }
    cfg_hash = hashlib.sha256(json.dumps(params, sort_keys=True).encode()).hexdigest()[:12]
    write_manifest(args.out, records, config_hash=cfg_hash)
    logger.info("wrote %d clip records -> %s", len(records), args.out)
    stats_dir = args.stats_out or str(Path(args.out).parent)
    stats = corpus_stats(records, text_unit=args.text_unit)
    paths = write_corpus_stats(stats, stats_dir, config_hash=cfg_hash)
    logger.info("corpus stats -> %s", paths["jsonl"])
    return EXIT_OK


def cmd_stats(args) -> int:
    from .curation import corpus_stats, manifest_meta, read_manifest
    from .report import write_corpus_stats

    records = read_manifest(args.manifest)
    stats = corpus_stats(records, text_unit=args.text_unit)
    out = args.out or str(Path(args.manifest).parent)
    paths = write_corpus_stats(
        stats, out, config_hash=manifest_meta(args.manifest).get("config_hash", "")
    )
    logger.info("corpus stats -> %s", paths["jsonl"])
    return EXIT_OK


def _train_common(args, stage: int, task):
    from .curation import read_manifest
    from .data import prepare_clips
    from .report import write_history_figure
    from .trainer import ensure_prerequisite, load_checkpoint, run_stage

    cfg = _load_config(args)
    out_dir = _output_dir(args, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not cfg.data.train_manifest:
        raise ConfigError("config key data.train_manifest is required for training")
    records = read_manifest(cfg.data.train_manifest)
    records = [r for r in records if r.split == "train"] or records

    init_state = load_checkpoint(args.init) if getattr(args, "init", None) else None
    ensure_prerequisite(stage, init_state)
    tokenizer = _tokenizer_for(cfg, records, out_dir, checkpoint=init_state)

    init_has_vision = bool(
        init_state is not None
        and (init_state.get("extra", {}).get("with_vision") or init_state.get("stage") == 2)
    )
    with_vision = stage == 2 or init_has_vision or cfg.data.use_rgb
    model = _build_model_from_cfg(cfg, tokenizer, with_vision=with_vision)
    if init_state is not None:
        missing = model.load_state_dict(init_state["model"], strict=False)
        if missing.unexpected_keys:
            raise ConfigError(f"init checkpoint has unexpected keys: {missing.unexpected_keys[:3]}")

    load_rgb = with_vision and cfg.sampler.p_samp > 0
    train_task = task or "pslt"
    clips = prepare_clips(
        records,
        train_task,
        keypoint_root=cfg.data.keypoint_root,
        media_root=cfg.data.media_root,
        coord_scale=cfg.data.coord_scale,
        with_frames=load_rgb,
    )
    stage_cfg = cfg.stage_config(stage, task=task)
    history, ckpt = run_stage(
        model,
        tokenizer,
        clips,
        stage_cfg,
        seed=cfg.seed,
        out_dir=str(out_dir),
        config_hash=cfg.config_hash(),
        resume=None,
        max_steps=getattr(args, "max_steps", None),
        checkpoint_extra={
            "tokens": tokenizer.tokens,
            "task": train_task,
            "with_vision": with_vision,
            "run_config": cfg.to_dict(),
        },
    )
    if history.losses:
        logger.info(
            "stage %d finished: %d steps, loss/token %.4f -> %.4f",
            stage, len(history.losses), history.losses[0], history.losses[-1],
        )
    write_history_figure(history, out_dir, stem=f"stage{stage}")
    if ckpt:
        logger.info("final checkpoint: %s", ckpt)
    return EXIT_OK


def cmd_pretrain(args) -> int:
    if args.stage == 2 and not args.init:
        raise ConfigError("stage 2 requires --init with a stage-1 checkpoint")
    return _train_common(args, stage=args.stage, task=None)


def cmd_finetune(args) -> int:
    return _train_common(args, stage=3, task=args.task)


def cmd_evaluate(args) -> int:
    from .curation import read_manifest
    from .data import prepare_clips
    from .report import write_eval_report
    from .trainer import evaluate_task, load_checkpoint

    state = load_checkpoint(args.ckpt)
    cfg = _load_config(args, checkpoint=state)
    out_dir = _output_dir(args, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = [r for r in read_manifest(args.manifest) if r.split == args.split] or read_manifest(args.manifest)
    tokenizer = _tokenizer_for(cfg, records, out_dir, checkpoint=state)
    with_vision = bool(
        state.get("extra", {}).get("with_vision")
        or state.get("stage") == 2
        or cfg.data.use_rgb
    )
    model = _build_model_from_cfg(cfg, tokenizer, with_vision=with_vision)
    model.load_state_dict(state["model"], strict=False)
    clips = prepare_clips(
        records,
        args.task,
        keypoint_root=cfg.data.keypoint_root,
        media_root=cfg.data.media_root,
        coord_scale=cfg.data.coord_scale,
        with_frames=with_vision and cfg.sampler.p_samp > 0,
    )
    report, predictions = evaluate_task(
        model,
        tokenizer,
        clips,
        args.task,
        cfg.decode,
        split=args.split,
        text_tokenization=cfg.data.text_tokenization,
        config_hash=cfg.config_hash(),
    )
    paths = write_eval_report(report, out_dir, predictions)
    for name, value in report.metric_items():
        logger.info("%s = %.4f", name, value)
    logger.info("report -> %s", paths["jsonl"])
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .curation import read_manifest
    from .data import prepare_clips
    from .report import write_eval_report
    from .trainer import evaluate_task, load_checkpoint, run_ablation_head, run_stage

    state = load_checkpoint(args.init)
    cfg = _load_config(args, checkpoint=state)
    out_dir = _output_dir(args, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not cfg.data.train_manifest:
        raise ConfigError("config key data.train_manifest is required for ablation")
    records = read_manifest(cfg.data.train_manifest)
    tokenizer = _tokenizer_for(cfg, records, out_dir, checkpoint=state)
    with_vision = bool(
        state.get("extra", {}).get("with_vision") or state.get("stage") == 2
    )
    model = _build_model_from_cfg(cfg, tokenizer, with_vision=with_vision)
    model.load_state_dict(state["model"], strict=False)
    clips = prepare_clips(
        records,
        args.task,
        keypoint_root=cfg.data.keypoint_root,
        media_root=cfg.data.media_root,
        coord_scale=cfg.data.coord_scale,
    )
    if args.paradigm == "task_specific":
        report = run_ablation_head(
            model,
            clips,
            clips,
            args.task,
            feature_source=args.features,
            steps=args.steps,
            seed=cfg.seed,
            config_hash=cfg.config_hash(),
        )
        predictions = None
    else:
        stage_cfg = cfg.stage_config(3, task=args.task)
        run_stage(model, tokenizer, clips, stage_cfg, seed=cfg.seed, max_steps=args.steps)
        report, predictions = evaluate_task(
            model,
            tokenizer,
            clips,
            args.task,
            cfg.decode,
            split="train",
            text_tokenization=cfg.data.text_tokenization,
            config_hash=cfg.config_hash(),
        )
        report.notes["paradigm"] = "unified"
    paths = write_eval_report(report, out_dir, predictions, stem=f"ablation_{args.paradigm}_{args.task}")
    logger.info("ablation report -> %s", paths["jsonl"])
    return EXIT_OK


COMMANDS = {
    "curate": cmd_curate,
    "stats": cmd_stats,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MalformedFileError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except UniSignError as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME
    except OSError as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
