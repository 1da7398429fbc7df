"""Report rendering: line-delimited records, a plain-text table, and
matplotlib figures written next to them.

Scores are stored as fractions everywhere; the percent scaling applied in
tables and figures is declared in the report meta line.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import EvalReport

PERCENT_METRICS = {"wer", "bleu1", "bleu2", "bleu3", "bleu4", "rouge_l", "p_i_top1", "p_c_top1"}


def write_eval_report(
    report: EvalReport,
    out_dir,
    predictions: Optional[List[dict]] = None,
    stem: str = "eval_report",
) -> Dict[str, str]:
    """Write <stem>.jsonl, <stem>.txt and <stem>.png under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    jsonl = out / f"{stem}.jsonl"
    with jsonl.open("w", encoding="utf-8") as fh:
        meta = {
            "record": "meta",
            "task": report.task,
            "split": report.split,
            "n_samples": report.n_samples,
            "config_hash": report.config_hash,
            "scale": "fraction",
            "notes": report.notes,
        }
        fh.write(json.dumps(meta, ensure_ascii=False) + "\n")
        for name, value in report.metric_items():
            fh.write(json.dumps({"record": "metric", "name": name, "value": value}) + "\n")
    paths["jsonl"] = str(jsonl)

    txt = out / f"{stem}.txt"
    lines = [
        f"task: {report.task}   split: {report.split}   samples: {report.n_samples}",
        f"config: {report.config_hash or '-'}",
        "-" * 44,
    ]
    for name, value in report.metric_items():
        shown = value * 100 if name in PERCENT_METRICS else value
        lines.append(f"{name:<12} {shown:8.2f}")
    for key, note in report.notes.items():
        lines.append(f"note: {key}: {note}")
    txt.write_text("\n".join(lines) + "\n", encoding="utf-8")
    paths["txt"] = str(txt)

    items = report.metric_items()
    if items:
        fig, ax = plt.subplots(figsize=(6, 3.5))
        names = [n for n, _ in items]
        values = [v * 100 if n in PERCENT_METRICS else v for n, v in items]
        ax.bar(names, values, color="#4878d0")
        ax.set_ylabel("score (%)")
        ax.set_title(f"{report.task} / {report.split} (n={report.n_samples})")
        ax.tick_params(axis="x", rotation=30)
        fig.tight_layout()
        png = out / f"{stem}.png"
        fig.savefig(png, dpi=120)
        plt.close(fig)
        paths["png"] = str(png)

    if predictions is not None:
        pred_path = out / "predictions.jsonl"
        with pred_path.open("w", encoding="utf-8") as fh:
            for rec in predictions:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        paths["predictions"] = str(pred_path)
    return paths


def write_corpus_stats(stats: dict, out_dir, config_hash: str = "") -> Dict[str, str]:
    """Write stats.jsonl, stats.txt and the two histogram figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    jsonl = out / "stats.jsonl"
    with jsonl.open("w", encoding="utf-8") as fh:
        fh.write(
            json.dumps({"record": "meta", "config_hash": config_hash}, ensure_ascii=False) + "\n"
        )
        for key, value in stats.items():
            fh.write(json.dumps({"record": "stat", "name": key, "value": value}) + "\n")
    paths["jsonl"] = str(jsonl)

    txt = out / "stats.txt"
    lines = [
        f"clips:            {stats['clip_count']}",
        f"mean duration:    {stats['mean_duration_s']:.2f} s",
        f"mean text length: {stats['mean_text_length']:.2f} ({stats['text_unit']}s)",
        f"vocabulary size:  {stats['vocab_size']}",
    ]
    txt.write_text("\n".join(lines) + "\n", encoding="utf-8")
    paths["txt"] = str(txt)

    for key, xlabel, fname in (
        ("duration_histogram", "clip duration (s)", "duration_hist.png"),
        ("text_length_histogram", f"text length ({stats['text_unit']}s)", "text_length_hist.png"),
    ):
        hist = stats[key]
        edges, counts = hist["edges"], hist["counts"]
        fig, ax = plt.subplots(figsize=(5, 3))
        widths = [edges[i + 1] - edges[i] for i in range(len(counts))] or [1.0]
        ax.bar(edges[:-1], counts, width=widths, align="edge", color="#4878d0", edgecolor="white")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("clips")
        fig.tight_layout()
        png = out / fname
        fig.savefig(png, dpi=120)
        plt.close(fig)
        paths[fname] = str(png)
    return paths


def write_history_figure(history, out_dir, stem: str = "training") -> str:
    """Loss/learning-rate curves for a finished stage."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.plot(history.steps, history.losses, color="#d65f5f")
    ax1.set_xlabel("optimizer step")
    ax1.set_ylabel("loss / token")
    ax2.plot(history.steps, history.lrs, color="#4878d0")
    ax2.set_xlabel("optimizer step")
    ax2.set_ylabel("learning rate")
    fig.tight_layout()
    path = out / f"{stem}_curves.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)
