"""Report emission: caption dumps, BLEU summaries, experiment tables, figures.

Everything is written atomically, and reruns with identical inputs produce
identical bytes. Figures are rendered with the Agg backend next to the
delimited outputs they visualize.
"""

from __future__ import annotations

import csv
import io
import json

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .evaluation import ERROR_CATEGORIES, BleuReport
from .ioutil import atomic_write_bytes, atomic_write_text

BLEU_LABELS = ("BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4")


def save_caption_report(rows, path, annotations_by_image=None) -> None:
    """CSV dump: image_id, candidate, ref1..refK (+ per-category 0/1 columns).

    ``annotations_by_image`` maps image_id -> iterable of category names; when
    given, one column per category is appended.
    """
    rows = list(rows)
    max_refs = max((len(r.references) for r in rows), default=0)
    header = ["image_id", "candidate"] + [f"ref{i}" for i in range(1, max_refs + 1)]
    if annotations_by_image is not None:
        header += list(ERROR_CATEGORIES)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        refs = list(row.references) + [""] * (max_refs - len(row.references))
        record = [row.image_id, row.candidate] + refs
        if annotations_by_image is not None:
            cats = set(annotations_by_image.get(row.image_id, ()))
            record += [int(c in cats) for c in ERROR_CATEGORIES]
        writer.writerow(record)
    atomic_write_text(path, buf.getvalue())


def save_bleu_summary(report: BleuReport, path, extra: dict | None = None) -> None:
    payload = report.as_dict()
    if extra:
        payload.update(extra)
    atomic_write_text(path, json.dumps(payload, ensure_ascii=False, indent=2) + "\n")


def save_experiment_csv(rows, path) -> None:
    """rows: dicts with backend, variant, epochs, bleu1..bleu4, status."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["backend", "variant", "epochs", "bleu1", "bleu2", "bleu3", "bleu4", "status"])
    for row in rows:
        writer.writerow([
            row["backend"], row["variant"], row["epochs"],
            *(_fmt(row.get(f"bleu{k}")) for k in range(1, 5)),
            row["status"],
        ])
    atomic_write_text(path, buf.getvalue())


def _fmt(value):
    return "" if value is None else f"{value:.4f}"


def render_experiment_table(rows) -> str:
    """Aligned plain-text table mirroring the CSV."""
    header = ["backend", "variant", "epochs", "bleu1", "bleu2", "bleu3", "bleu4", "status"]
    cells = [header]
    for row in rows:
        cells.append([
            str(row["backend"]), str(row["variant"]), str(row["epochs"]),
            *(_fmt(row.get(f"bleu{k}")) for k in range(1, 5)),
            str(row["status"]),
        ])
    widths = [max(len(c[i]) for c in cells) for i in range(len(header))]
    lines = []
    for k, row_cells in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row_cells, widths)).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _save_figure(fig, path) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=110)
    plt.close(fig)
    atomic_write_bytes(path, buf.getvalue())


def plot_loss_curves(histories: dict, path) -> None:
    """Line plot of per-epoch training loss; one line per labelled run."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, history in histories.items():
        ax.plot(range(1, len(history) + 1), history, marker="o", markersize=3, label=str(label))
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean cross-entropy loss")
    ax.set_title("Training loss")
    if len(histories) > 1:
        ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save_figure(fig, path)


def plot_bleu_scores(report: BleuReport, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(BLEU_LABELS, report.bleu, color="tab:blue")
    ax.set_ylim(0, 1)
    ax.set_ylabel("score")
    ax.set_title("Corpus BLEU")
    for i, score in enumerate(report.bleu):
        ax.text(i, score + 0.02, f"{score:.3f}", ha="center", fontsize=8)
    fig.tight_layout()
    _save_figure(fig, path)


def plot_experiment(rows, path) -> None:
    """Grouped bars, one group per (backend, variant) cell, four BLEU bars each."""
    done = [r for r in rows if r["status"] == "ok"]
    fig, ax = plt.subplots(figsize=(max(6, 2 + 1.2 * len(done)), 4))
    if done:
        import numpy as np

        x = np.arange(len(done))
        width = 0.2
        for k in range(4):
            scores = [r[f"bleu{k + 1}"] for r in done]
            ax.bar(x + (k - 1.5) * width, scores, width, label=BLEU_LABELS[k])
        ax.set_xticks(x)
        ax.set_xticklabels([f"{r['backend']}\n{r['variant']}" for r in done], fontsize=8)
        ax.legend(fontsize=8)
    ax.set_ylim(0, 1)
    ax.set_ylabel("score")
    ax.set_title("Experiment grid")
    fig.tight_layout()
    _save_figure(fig, path)
