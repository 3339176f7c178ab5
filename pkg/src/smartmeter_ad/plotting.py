"""Static figures for the report path: loss curves, ROC panels, score scatter.

Every figure is written as SVG next to a CSV holding exactly the plotted
points. SVG output is made reproducible by fixing the hash salt and dropping
the date metadata.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import CHANNELS  # noqa: E402
from .datagen import format_time  # noqa: E402
from .formats import _write_csv, fmt  # noqa: E402

RC_PARAMS = {
    "axes.spines.right": False,
    "axes.spines.top": False,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "axes.linewidth": 0.6,
    "figure.dpi": 100,
    "font.family": "sans-serif",
    "font.size": 8,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "lines.linewidth": 1.2,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "svg.hashsalt": "smartmeter-ad",
    "svg.fonttype": "path",
}

MODEL_COLORS = {"bilstm": "tab:blue", "lstm": "tab:orange"}
NORMAL_COLOR = "#1f3b73"
OUTLIER_COLOR = "tab:orange"
THRESHOLD_COLOR = "tab:red"


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_loss_curve(report, out_dir, name="loss_curve"):
    """Training and validation MSE per epoch."""
    out_dir = Path(out_dir)
    epochs = np.arange(1, report.epochs + 1)
    with plt.rc_context(RC_PARAMS):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        ax.plot(epochs, report.train_loss, label="training loss")
        ax.plot(epochs, report.val_loss, label="validation loss", linestyle="--")
        ax.set_xlabel("epoch")
        ax.set_ylabel("MSE")
        ax.set_yscale("log")
        ax.legend()
        svg = _save(fig, out_dir / f"{name}.svg")
    csv = _write_csv(out_dir / f"{name}.csv", ["epoch", "train_loss", "val_loss"],
                     ([e, fmt(a), fmt(b)] for e, a, b in report.rows()))
    return svg, csv


def plot_roc(curves, out_dir, name="roc"):
    """One panel per channel plus a joint panel, one line per model.

    ``curves`` maps ``(model, scope) -> (thresholds, fpr, tpr)``, as returned
    by :func:`formats.read_roc_csv`; scope is a channel name or ``"joint"``.
    """
    out_dir = Path(out_dir)
    scopes = [s for s in (*CHANNELS, "joint") if any(k[1] == s for k in curves)]
    models = sorted({k[0] for k in curves})
    rows = []
    with plt.rc_context(RC_PARAMS):
        ncols = 3 if len(scopes) > 4 else max(1, min(2, len(scopes)))
        nrows = int(np.ceil(len(scopes) / ncols))
        fig, axes = plt.subplots(nrows, ncols, figsize=(3.0 * ncols, 2.8 * nrows), squeeze=False)
        for ax, scope in zip(axes.flat, scopes):
            for model in models:
                if (model, scope) not in curves:
                    continue
                th, fpr, tpr = curves[(model, scope)]
                auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
                ax.plot(fpr, tpr, color=MODEL_COLORS.get(model), label=f"{model.upper()} (AUC {auc:.4f})")
                rows.extend([model, scope, fmt(t), fmt(f), fmt(p)] for t, f, p in zip(th, fpr, tpr))
            ax.plot([0, 1], [0, 1], color="0.7", linewidth=0.6, linestyle=":")
            ax.set_title(scope.replace("_", " "))
            ax.set_xlabel("false positive rate")
            ax.set_ylabel("true positive rate")
            ax.set_xlim(0, 1)
            ax.set_ylim(0, 1.02)
            ax.legend(loc="lower right")
        for ax in list(axes.flat)[len(scopes):]:
            ax.axis("off")
        fig.tight_layout()
        svg = _save(fig, out_dir / f"{name}.svg")
    csv = _write_csv(out_dir / f"{name}.csv", ["model", "scope", "threshold", "fpr", "tpr"], rows)
    return svg, csv


def plot_scores(report, out_dir, household=None, name="anomaly_scores"):
    """Joint score per data point with the threshold line, plus per-channel panels.

    One household is drawn (the first in the report unless ``household`` is
    given) so the vector output stays small. Orange marks steps labelled
    abnormal.
    """
    out_dir = Path(out_dir)
    hh = np.asarray(report.household_ids)
    if household is None:
        household = hh[0] if len(hh) else ""
    sel = np.nonzero(hh == household)[0]
    if sel.size == 0:
        raise ValueError(f"household {household!r} is not in the report")
    idx = np.arange(sel.size)
    e_t = report.e_t[sel]
    ch = report.channel_errors[sel]
    abnormal = report.labels[sel] == 0
    with plt.rc_context(RC_PARAMS):
        fig, axes = plt.subplots(3, 2, figsize=(7.5, 7.0))
        panels = [("joint", e_t)] + [(c, ch[:, k]) for k, c in enumerate(CHANNELS)]
        for ax, (scope, score) in zip(axes.flat, panels):
            ax.scatter(idx[~abnormal], score[~abnormal], s=2, color=NORMAL_COLOR, label="normal")
            ax.scatter(idx[abnormal], score[abnormal], s=4, color=OUTLIER_COLOR, label="outlier")
            if scope == "joint":
                # a threshold far above every score would only flatten the panel
                if np.isfinite(report.theta) and report.theta <= 100 * max(score.max(), 1e-12):
                    ax.axhline(report.theta, color=THRESHOLD_COLOR, linewidth=0.8, label="threshold")
                handles, labels = ax.get_legend_handles_labels()
            ax.set_yscale("symlog", linthresh=1e-2)
            ax.set_ylim(bottom=0)
            ax.set_title(scope.replace("_", " "))
            ax.set_xlabel("data point")
            ax.set_ylabel("anomaly score")
        axes.flat[-1].axis("off")
        axes.flat[-1].legend(handles, labels, loc="center", markerscale=3)
        fig.suptitle(str(household))
        fig.tight_layout()
        svg = _save(fig, out_dir / f"{name}.svg")
    csv = _write_csv(
        out_dir / f"{name}.csv",
        ["index", "timestamp", "household_id", "e_t", "label", "theta"] + [f"err_{c}" for c in CHANNELS],
        ([int(i), format_time(report.timestamps[j]), household, fmt(report.e_t[j]), int(report.labels[j]),
          fmt(report.theta)] + [fmt(v) for v in report.channel_errors[j]] for i, j in zip(idx, sel)),
    )
    return svg, csv
