"""Command-line entry point.

Subcommands cover the whole pipeline: synth, validate, train, eval, dnr,
analyze, report. Settings resolve as flags over config-file section over
built-in defaults; unknown config keys are rejected. Exit codes: 0 success,
1 runtime failure (one-line diagnostic on stderr), 2 usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .encoders import EncoderConfig
from .evalkit import (
    compute_dnr,
    dnr_recall_analysis,
    enrollment_analysis,
    evaluate,
    length_analysis,
    load_shape_stats,
)
from .reporting import write_report_bundle
from .seqdata import CropPadPolicy, load_manifest, validate_manifest
from .synthgen import SynthConfig, generate_corpus, inject_leakage
from .trainer import TrainConfig, train_joint_focal, train_stage1, train_stage2

CONFIG_SECTIONS = ("synth", "encoder", "train")


class UsageError(Exception):
    """Bad invocation (missing files, malformed flags); exits 2."""


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    _require_file(path, "config file")
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    unknown = set(cfg) - set(CONFIG_SECTIONS)
    if unknown:
        raise UsageError(
            f"config file {path} has unknown sections {sorted(unknown)}; "
            f"expected a subset of {list(CONFIG_SECTIONS)}"
        )
    return cfg


def _merge(cls, section: dict, overrides: dict, label: str):
    merged = dict(section)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return cls.from_json(merged)
    except ValueError as exc:
        raise UsageError(f"invalid {label} config: {exc}") from exc


def _parse_int_list(text: str, flag: str) -> tuple:
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError as exc:
        raise UsageError(f"{flag} expects comma-separated integers, got {text!r}") from exc


def _parse_float_list(text: str, flag: str) -> list:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise UsageError(f"{flag} expects comma-separated numbers, got {text!r}") from exc


def _emit(payload: dict, out: str = None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n")
        print(out)
    else:
        print(text)


# ---------------------------------------------------------------------------
# Subcommand implementations


def _cmd_synth(args) -> int:
    sections = _load_config_file(args.config)
    overrides = {
        "num_speakers": args.speakers,
        "utterances_per_speaker": args.utterances,
        "sessions_per_speaker": args.sessions,
        "signature_dim": args.signature_dim,
        "noise_std": args.noise_std,
        "shape_drift_scale": args.shape_drift,
        "leakage_strength": args.leakage,
        "seed": args.seed,
    }
    if args.frames_min is not None or args.frames_max is not None:
        if args.frames_min is None or args.frames_max is None:
            raise UsageError("--frames-min and --frames-max must be given together")
        overrides["frames_per_utterance"] = (args.frames_min, args.frames_max)
    cfg = _merge(SynthConfig, sections.get("synth", {}), overrides, "synth")

    paths = generate_corpus(cfg, args.out)
    summary = {
        "out": str(paths.root),
        "manifest": str(paths.manifest),
        "shape_stats": str(paths.shape_stats),
        "num_records": cfg.num_speakers * cfg.utterances_per_speaker,
        "num_speakers": cfg.num_speakers,
        "config_hash": cfg.config_hash(),
    }
    if args.stratify_leakage:
        strengths = _parse_float_list(args.stratify_leakage, "--stratify-leakage")
        strata_path = inject_leakage(paths.root, strengths)
        summary["leakage_strata"] = str(strata_path)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_validate(args) -> int:
    manifest = _require_file(args.manifest, "manifest")
    records = load_manifest(manifest)
    report = validate_manifest(records, check_files=not args.skip_files)
    _emit(report.to_json(), args.out)
    return 0 if report.ok else 1


def _cmd_train(args) -> int:
    manifest = _require_file(args.manifest, "manifest")
    sections = _load_config_file(args.config)

    stage = {"supcon": "supcon", "classifier": "classifier", "joint": "joint_focal"}[
        args.stage
    ]
    balanced = {"auto": None, "on": True, "off": False}[args.balanced]
    train_overrides = {
        "stage": stage,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "lr": args.lr,
        "weight_decay": args.weight_decay,
        "seed": args.seed,
        "max_length": args.max_length,
        "patience": args.patience,
        "balanced": balanced,
        "samples_per_speaker": args.samples_per_speaker,
        "temperature": args.temperature,
        "queue_capacity": args.queue_capacity,
        "proj_hidden_dim": args.proj_hidden_dim,
        "proj_dim": args.proj_dim,
        "aux_ce_weight": args.aux_ce_weight,
        "label_smoothing": args.label_smoothing,
        "focal_gamma": args.focal_gamma,
        "cosine_scale": args.cosine_scale,
        "val_batch_size": args.val_batch_size,
    }
    section = dict(sections.get("train", {}))
    section["stage"] = stage
    train_cfg = _merge(TrainConfig, section, train_overrides, "train")

    if stage == "classifier":
        if not args.from_checkpoint:
            raise UsageError("--stage classifier requires --from-checkpoint")
        ckpt = _require_file(args.from_checkpoint, "checkpoint")
        artifacts = train_stage2(manifest, ckpt, train_cfg, args.out)
    else:
        enc_overrides = {
            "arch": args.arch,
            "embed_dim": args.embed_dim,
            "hidden_dim": args.hidden_dim,
            "num_blocks": args.num_blocks,
            "num_heads": args.num_heads,
            "conv_kernel": args.conv_kernel,
            "dropout": args.dropout,
        }
        if args.kernel_sizes is not None:
            enc_overrides["kernel_sizes"] = _parse_int_list(
                args.kernel_sizes, "--kernel-sizes"
            )
        enc_section = dict(sections.get("encoder", {}))
        if "arch" not in enc_section and args.arch is None:
            enc_overrides["arch"] = "conformer"
        encoder_cfg = _merge(EncoderConfig, enc_section, enc_overrides, "encoder")
        if stage == "supcon":
            artifacts = train_stage1(manifest, encoder_cfg, train_cfg, args.out)
        else:
            artifacts = train_joint_focal(manifest, encoder_cfg, train_cfg, args.out)

    last = artifacts.history[-1] if artifacts.history else {}
    print(
        json.dumps(
            {
                "checkpoint": str(artifacts.checkpoint_path),
                "metrics_log": str(artifacts.metrics_path),
                "config_echo": str(artifacts.config_path),
                "label_map": str(artifacts.label_map_path),
                "best_epoch": artifacts.best_epoch,
                "best_metric": None
                if artifacts.best_metric != artifacts.best_metric
                else artifacts.best_metric,
                "epochs_run": len(artifacts.history),
                "param_count": artifacts.param_count,
                "last_epoch": last,
            },
            indent=2,
            sort_keys=True,
        )
    )
    return 0


def _split_records(records, split: str):
    if split == "all":
        return records
    subset = [r for r in records if r.split == split]
    if not subset:
        raise UsageError(f"manifest has no records with split={split!r}")
    return subset


def _cmd_eval(args) -> int:
    manifest = _require_file(args.manifest, "manifest")
    ckpt = _require_file(args.checkpoint, "checkpoint")
    records = _split_records(load_manifest(manifest), args.split)
    policy = CropPadPolicy(args.max_length) if args.max_length else None
    report = evaluate(records, ckpt, policy=policy, batch_size=args.batch_size)
    _emit(report.to_json(), args.out)
    return 0


def _cmd_dnr(args) -> int:
    stats_path = _require_file(args.shape_stats, "shape stats")
    rows = load_shape_stats(stats_path)
    report = compute_dnr(rows, eps=args.eps)
    _emit(report.to_json(), args.out)
    return 0


def _cmd_analyze(args) -> int:
    manifest = _require_file(args.manifest, "manifest")
    ckpt = _require_file(args.checkpoint, "checkpoint")
    records = load_manifest(manifest)
    policy = CropPadPolicy(args.max_length) if args.max_length else None

    if args.kind == "dnr-recall":
        if not args.shape_stats:
            raise UsageError("--kind dnr-recall requires --shape-stats")
        stats = load_shape_stats(_require_file(args.shape_stats, "shape stats"))
        dnr = compute_dnr(stats)
        test_records = _split_records(records, "test")
        report = evaluate(test_records, ckpt, policy=policy, batch_size=args.batch_size)
        result = dnr_recall_analysis(
            dnr.per_speaker,
            report.per_speaker_recall,
            num_bins=args.bins,
            bootstrap_iters=args.bootstrap_iters,
            seed=args.seed,
        )
        _emit(result.to_json(), args.out)
    elif args.kind == "length":
        lengths = _parse_int_list(args.lengths, "--lengths")
        if not lengths:
            raise UsageError("--lengths must name at least one length")
        test_records = _split_records(records, "test")
        rows = length_analysis(test_records, ckpt, lengths, batch_size=args.batch_size)
        _emit({"rows": rows}, args.out)
    else:
        rows = enrollment_analysis(records, ckpt, policy=policy, batch_size=args.batch_size)
        _emit({"rows": rows}, args.out)
    return 0


def _cmd_report(args) -> int:
    manifest = _require_file(args.manifest, "manifest")
    ckpt = _require_file(args.checkpoint, "checkpoint")
    stats = None
    if args.shape_stats:
        stats = _require_file(args.shape_stats, "shape stats")
    records = load_manifest(manifest)
    written = write_report_bundle(
        args.out,
        records,
        ckpt,
        shape_stats_path=stats,
        lengths=_parse_int_list(args.lengths, "--lengths"),
        num_bins=args.bins,
        bootstrap_iters=args.bootstrap_iters,
        seed=args.seed,
        max_length=args.max_length,
        batch_size=args.batch_size,
    )
    print(json.dumps({k: str(v) for k, v in written.items()}, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynid",
        description="Person identification from facial-dynamics sequences.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, help="corpus output directory")
    p.add_argument("--config", help="JSON config file (section: synth)")
    p.add_argument("--speakers", type=int, help="number of speakers")
    p.add_argument("--utterances", type=int, help="utterances per speaker")
    p.add_argument("--sessions", type=int, help="sessions per speaker")
    p.add_argument("--frames-min", type=int, help="shortest utterance, frames")
    p.add_argument("--frames-max", type=int, help="longest utterance, frames")
    p.add_argument("--signature-dim", type=int, help="oscillators per speaker")
    p.add_argument("--noise-std", type=float, help="frame noise level")
    p.add_argument("--shape-drift", type=float, help="session shape-drift scale")
    p.add_argument("--leakage", type=float, help="global leakage strength in [0, 1]")
    p.add_argument("--seed", type=int, help="generator seed")
    p.add_argument(
        "--stratify-leakage",
        help="comma-separated strengths applied to contiguous speaker strata",
    )
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("validate", help="check a manifest for consistency")
    p.add_argument("--manifest", required=True)
    p.add_argument("--skip-files", action="store_true", help="skip file-existence checks")
    p.add_argument("--out", help="write the report JSON here instead of stdout")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("train", help="train an encoder or classifier stage")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument(
        "--stage", required=True, choices=("supcon", "classifier", "joint")
    )
    p.add_argument("--from-checkpoint", help="stage-1 checkpoint (classifier stage)")
    p.add_argument("--config", help="JSON config file (sections: encoder, train)")
    p.add_argument("--arch", choices=("gru", "ms_gru", "tcn", "ms_tcn", "transformer", "conformer"))
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--num-blocks", type=int)
    p.add_argument("--num-heads", type=int)
    p.add_argument("--kernel-sizes", help="comma-separated odd kernel sizes")
    p.add_argument("--conv-kernel", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-length", type=int, help="pad/crop length in frames")
    p.add_argument("--patience", type=int)
    p.add_argument("--balanced", choices=("auto", "on", "off"), default="auto")
    p.add_argument("--samples-per-speaker", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--queue-capacity", type=int)
    p.add_argument("--proj-hidden-dim", type=int)
    p.add_argument("--proj-dim", type=int)
    p.add_argument("--aux-ce-weight", type=float)
    p.add_argument("--label-smoothing", type=float)
    p.add_argument("--focal-gamma", type=float)
    p.add_argument("--cosine-scale", type=float)
    p.add_argument("--val-batch-size", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="closed-set evaluation of a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--max-length", type=int)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--out", help="write the metrics JSON here instead of stdout")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("dnr", help="drift-to-noise ratios from shape statistics")
    p.add_argument("--shape-stats", required=True)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_dnr)

    p = sub.add_parser("analyze", help="binned DNR-recall, length, or enrollment analysis")
    p.add_argument("--kind", required=True, choices=("dnr-recall", "length", "enrollment"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--shape-stats")
    p.add_argument("--lengths", default="75,150,300")
    p.add_argument("--bins", type=int, default=5)
    p.add_argument("--bootstrap-iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-length", type=int)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("report", help="full table and plot bundle")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--shape-stats")
    p.add_argument("--lengths", default="75,150,300")
    p.add_argument("--bins", type=int, default=5)
    p.add_argument("--bootstrap-iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-length", type=int)
    p.add_argument("--batch-size", type=int, default=256)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
