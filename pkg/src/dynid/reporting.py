"""Rendering: aligned text tables, JSON dumps, and report plots.

Plot files mirror the analysis panels: recall vs DNR bins as a line with a
confidence band over count bars, accuracy vs evaluation length, and mean
per-person accuracy vs enrollment count. All report files carry the encoder
config hash in their names so bundles from different models never collide.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence

from .checkpoint import load_checkpoint
from .evalkit import (
    MetricsReport,
    compute_dnr,
    dnr_recall_analysis,
    enrollment_analysis,
    evaluate,
    length_analysis,
    load_shape_stats,
)
from .seqdata import CropPadPolicy, UtteranceRecord


def format_table(rows: Sequence[dict], columns: Sequence[tuple]) -> str:
    """Align rows into a plain-text table. columns: (key, header, format)."""
    headers = [h for _, h, _ in columns]
    rendered = []
    for row in rows:
        line = []
        for key, _, fmt in columns:
            value = row.get(key)
            line.append("-" if value is None else format(value, fmt))
        rendered.append(line)
    widths = [
        max(len(headers[i]), *(len(r[i]) for r in rendered)) if rendered else len(headers[i])
        for i in range(len(columns))
    ]
    out = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
    out.append("  ".join("-" * w for w in widths))
    for line in rendered:
        out.append("  ".join(c.ljust(w) for c, w in zip(line, widths)))
    return "\n".join(out) + "\n"


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_dnr_recall(result_rows: Sequence[dict], path) -> None:
    """Mean recall per DNR bin: line plus CI band, bars for bin population."""
    plt = _pyplot()
    x = [row["dnr_mean"] for row in result_rows]
    y = [row["recall_mean"] for row in result_rows]
    lo = [row["ci_lo"] for row in result_rows]
    hi = [row["ci_hi"] for row in result_rows]
    counts = [row["count"] for row in result_rows]

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.fill_between(x, lo, hi, alpha=0.25, label="95% bootstrap CI")
    ax.plot(x, y, marker="o", label="mean recall")
    ax.set_xlabel("mean drift-to-noise ratio (bin)")
    ax.set_ylabel("mean per-person recall")
    ax2 = ax.twinx()
    ax2.bar(x, counts, width=0.06 * max(max(x) - min(x), 1e-9) + 1e-9, alpha=0.2, color="gray")
    ax2.set_ylabel("persons per bin")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_length_curve(rows: Sequence[dict], path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    x = [row["max_length"] for row in rows]
    ax.plot(x, [row["accuracy"] for row in rows], marker="o", label="accuracy")
    ax.plot(x, [row["macro_f1"] for row in rows], marker="s", label="macro F1")
    ax.set_xlabel("evaluation max length (frames)")
    ax.set_ylabel("score")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_enrollment(rows: Sequence[dict], path) -> None:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 4))
    x = [str(row["enrollment"]) for row in rows]
    ax.bar(x, [row["mean_per_person_accuracy"] for row in rows], color="tab:blue")
    ax.set_xlabel("training utterances per speaker")
    ax.set_ylabel("mean per-person accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


METRIC_COLUMNS = (
    ("max_length", "max_len", "d"),
    ("accuracy", "accuracy", ".4f"),
    ("macro_f1", "macro_f1", ".4f"),
)

DNR_COLUMNS = (
    ("bin", "bin", "d"),
    ("count", "count", "d"),
    ("dnr_min", "dnr_min", ".3f"),
    ("dnr_max", "dnr_max", ".3f"),
    ("dnr_mean", "dnr_mean", ".3f"),
    ("recall_mean", "recall", ".4f"),
    ("ci_lo", "ci_lo", ".4f"),
    ("ci_hi", "ci_hi", ".4f"),
)

ENROLL_COLUMNS = (
    ("enrollment", "enrollment", "d"),
    ("num_speakers", "speakers", "d"),
    ("mean_per_person_accuracy", "mean_acc", ".4f"),
)


def write_report_bundle(
    out_dir,
    records: Sequence[UtteranceRecord],
    checkpoint_path,
    shape_stats_path=None,
    lengths: Sequence[int] = (75, 150, 300),
    num_bins: int = 5,
    bootstrap_iters: int = 1000,
    seed: int = 0,
    max_length: Optional[int] = None,
    batch_size: int = 256,
) -> dict:
    """Evaluate and write the full table/plot bundle; returns written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = load_checkpoint(checkpoint_path)
    tag = ckpt.encoder_config.config_hash()

    policy = CropPadPolicy(max_length) if max_length else None
    test_records = [r for r in records if r.split == "test"]
    report: MetricsReport = evaluate(
        test_records, ckpt, policy=policy, batch_size=batch_size
    )
    written = {}

    metrics_json = out_dir / f"metrics.{tag}.json"
    write_json(metrics_json, report.to_json())
    written["metrics"] = metrics_json

    length_rows = length_analysis(test_records, ckpt, lengths, batch_size=batch_size)
    length_json = out_dir / f"length_analysis.{tag}.json"
    write_json(length_json, length_rows)
    (out_dir / f"length_analysis.{tag}.txt").write_text(
        format_table(length_rows, METRIC_COLUMNS)
    )
    length_png = out_dir / f"length_analysis.{tag}.png"
    plot_length_curve(length_rows, length_png)
    written["length"] = length_json

    enroll_rows = enrollment_analysis(records, ckpt, policy=policy, batch_size=batch_size)
    enroll_json = out_dir / f"enrollment.{tag}.json"
    write_json(enroll_json, enroll_rows)
    (out_dir / f"enrollment.{tag}.txt").write_text(
        format_table(enroll_rows, ENROLL_COLUMNS)
    )
    plot_enrollment(enroll_rows, out_dir / f"enrollment.{tag}.png")
    written["enrollment"] = enroll_json

    if shape_stats_path is not None:
        stats = load_shape_stats(shape_stats_path)
        dnr = compute_dnr(stats)
        dnr_json = out_dir / f"dnr.{tag}.json"
        write_json(dnr_json, dnr.to_json())
        written["dnr"] = dnr_json
        result = dnr_recall_analysis(
            dnr.per_speaker,
            report.per_speaker_recall,
            num_bins=num_bins,
            bootstrap_iters=bootstrap_iters,
            seed=seed,
        )
        rec_json = out_dir / f"dnr_recall.{tag}.json"
        write_json(rec_json, result.to_json())
        (out_dir / f"dnr_recall.{tag}.txt").write_text(
            format_table(result.rows, DNR_COLUMNS)
        )
        plot_dnr_recall(result.rows, out_dir / f"dnr_recall.{tag}.png")
        written["dnr_recall"] = rec_json

    summary = {
        "accuracy": report.accuracy,
        "macro_f1": report.macro_f1,
        "num_utterances": report.num_utterances,
        "num_speakers": report.num_speakers,
        "files": {k: str(v) for k, v in written.items()},
    }
    write_json(out_dir / f"summary.{tag}.json", summary)
    written["summary"] = out_dir / f"summary.{tag}.json"
    return written
