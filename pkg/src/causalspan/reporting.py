"""Report emission: delimited tables, JSON summaries, and matplotlib figures
rendered to files alongside the tabular output.

All writes are atomic (temp file + rename) and byte-deterministic for
identical inputs; PNG metadata that would vary across runs is suppressed.
"""

from __future__ import annotations

import io
import json
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .fileio import write_bytes_atomic, write_text_atomic  # noqa: E402,F401

_PNG_META = {"Software": None}  # drop the version stamp for stable bytes


def write_json_atomic(path, payload):
    write_text_atomic(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _save_figure(fig, path):
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=120, metadata=_PNG_META)
    plt.close(fig)
    write_bytes_atomic(path, buf.getvalue())


def tsv(rows: Sequence[Sequence]) -> str:
    return "".join("\t".join(str(cell) for cell in row) + "\n" for row in rows)


def fmt(value) -> str:
    return f"{value:.6f}"


# ---------------------------------------------------------------------------
# Training history.

def history_table(history: Sequence[dict]) -> str:
    rows = [("epoch", "loss", "grad_norm")]
    rows += [(h["epoch"], fmt(h["loss"]), fmt(h["grad_norm"])) for h in history]
    return tsv(rows)


def smoothed(values: Sequence[float], window: int = 5) -> list:
    out = []
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        chunk = values[lo: i + 1]
        out.append(sum(chunk) / len(chunk))
    return out


def save_history_figure(history: Sequence[dict], path):
    epochs = [h["epoch"] for h in history]
    losses = [h["loss"] for h in history]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(epochs, losses, lw=1.0, color="#7396c8", label="loss")
    if len(losses) >= 2:
        ax.plot(epochs, smoothed(losses), lw=2.0, color="#1f4e9c", label="smoothed (w=5)")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save_figure(fig, path)


# ---------------------------------------------------------------------------
# Single evaluation report.

def eval_table(report) -> str:
    rows = [("class", "precision", "recall", "f1", "support")]
    for name, score in report.token_classes.items():
        rows.append((name, fmt(score.precision), fmt(score.recall), fmt(score.f1), score.support))
    rows.append(("token_weighted", "", "", fmt(report.token_f1_weighted), int(report.token_confusion.sum())))
    rows.append(("exact_match", fmt(report.em_precision), fmt(report.em_recall), fmt(report.em_f1), report.gold_tuples))
    return tsv(rows)


def save_eval_figure(report, path):
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    names = list(report.token_classes) + ["EM"]
    precision = [s.precision for s in report.token_classes.values()] + [report.em_precision]
    recall = [s.recall for s in report.token_classes.values()] + [report.em_recall]
    f1 = [s.f1 for s in report.token_classes.values()] + [report.em_f1]
    x = range(len(names))
    width = 0.27
    ax1.bar([i - width for i in x], precision, width, label="precision", color="#9ac7e8")
    ax1.bar(list(x), recall, width, label="recall", color="#5b9bd5")
    ax1.bar([i + width for i in x], f1, width, label="F1", color="#1f4e79")
    ax1.set_xticks(list(x))
    ax1.set_xticklabels(names)
    ax1.set_ylim(0, 1.05)
    ax1.legend(frameon=False, fontsize=8)
    ax1.set_title("span scores")

    confusion = report.token_confusion
    image = ax2.imshow(confusion, cmap="Blues")
    classes = list(report.token_classes)
    ax2.set_xticks(range(len(classes)))
    ax2.set_xticklabels(classes)
    ax2.set_yticks(range(len(classes)))
    ax2.set_yticklabels(classes)
    ax2.set_xlabel("predicted")
    ax2.set_ylabel("gold")
    ax2.set_title("token confusion")
    for i in range(confusion.shape[0]):
        for j in range(confusion.shape[1]):
            ax2.text(j, i, int(confusion[i, j]), ha="center", va="center", fontsize=8,
                     color="white" if confusion[i, j] > confusion.max() / 2 else "black")
    fig.colorbar(image, ax=ax2, fraction=0.045)
    fig.tight_layout()
    _save_figure(fig, path)


# ---------------------------------------------------------------------------
# Cross-validation report.

_CV_COLUMNS = (
    "ordering", "fold", "n_train", "n_test",
    "token_f1_weighted", "token_f1_C", "token_f1_E", "token_f1_O",
    "em_precision", "em_recall", "em_f1", "t_stat", "p_value",
)


def crossval_table(results: Sequence, significance=None, degenerate: Optional[str] = None) -> str:
    """Fold rows plus mean/std rows per ordering, then the significance row."""
    rows = [_CV_COLUMNS]
    for result in results:
        for fr in result.folds:
            report = fr.report
            rows.append((
                result.ordering, fr.fold, fr.n_train, fr.n_test,
                fmt(report.token_f1_weighted),
                fmt(report.token_classes["C"].f1),
                fmt(report.token_classes["E"].f1),
                fmt(report.token_classes["O"].f1),
                fmt(report.em_precision), fmt(report.em_recall), fmt(report.em_f1),
                "", "",
            ))
        for label, stats_map in (("mean", result.mean), ("std", result.std)):
            rows.append((
                result.ordering, label, "", "",
                fmt(stats_map["token_f1_weighted"]), "", "", "",
                fmt(stats_map["em_precision"]), fmt(stats_map["em_recall"]),
                fmt(stats_map["em_f1"]), "", "",
            ))
    if significance is not None:
        rows.append((
            "CF_vs_EF", "paired_t_token_f1", "", "", "", "", "", "", "", "", "",
            fmt(significance.t_statistic), fmt(significance.p_value),
        ))
    elif degenerate is not None:
        rows.append((
            "CF_vs_EF", "paired_t_token_f1", "", "", "", "", "", "", "", "", "",
            "degenerate", degenerate,
        ))
    return tsv(rows)


def crossval_json(results: Sequence, significance=None, degenerate: Optional[str] = None) -> dict:
    payload = {"orderings": {}}
    for result in results:
        payload["orderings"][result.ordering] = {
            "folds": [
                {
                    "fold": fr.fold,
                    "n_train": fr.n_train,
                    "n_test": fr.n_test,
                    "checksum": fr.checksum,
                    **fr.report.to_dict(),
                }
                for fr in result.folds
            ],
            "mean": result.mean,
            "std": result.std,
        }
    if significance is not None:
        payload["significance"] = {
            "comparison": "CF_vs_EF",
            "metric": "token_f1_weighted",
            "t_statistic": significance.t_statistic,
            "p_value": significance.p_value,
            "df": significance.df,
            "mean_difference": significance.mean_difference,
        }
    elif degenerate is not None:
        payload["significance"] = {
            "comparison": "CF_vs_EF",
            "metric": "token_f1_weighted",
            "degenerate": degenerate,
        }
    return payload


def save_fold_scores_figure(results: Sequence, path):
    fig, axes = plt.subplots(1, max(len(results), 1), figsize=(5.2 * max(len(results), 1), 4), squeeze=False)
    for ax, result in zip(axes[0], results):
        folds = [fr.fold for fr in result.folds]
        token = [fr.report.token_f1_weighted for fr in result.folds]
        em = [fr.report.em_f1 for fr in result.folds]
        width = 0.38
        ax.bar([f - width / 2 for f in folds], token, width, label="token F1", color="#5b9bd5")
        ax.bar([f + width / 2 for f in folds], em, width, label="EM F1", color="#ed7d31")
        ax.axhline(result.mean["token_f1_weighted"], color="#2e5b8f", ls="--", lw=1)
        ax.axhline(result.mean["em_f1"], color="#b65708", ls="--", lw=1)
        ax.set_xticks(folds)
        ax.set_xlabel("fold")
        ax.set_ylim(0, 1.05)
        ax.set_title(f"{result.ordering}: mean token F1 "
                     f"{result.mean['token_f1_weighted']:.3f}, EM {result.mean['em_f1']:.3f}")
        ax.legend(frameon=False, fontsize=8)
        ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    _save_figure(fig, path)
