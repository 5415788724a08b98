"""Matplotlib figures written next to the CSV / text reports.

Only imported when a command is given ``--figure``; uses the Agg backend so
it runs headless.
"""

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 11,
    "legend.fontsize": 8,
    "lines.linewidth": 1.5,
    "lines.markersize": 4,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "fast0tag",
}


def _figure(ncols=1, width=4.0):
    golden = (math.sqrt(5) - 1.0) / 2.0
    return plt.subplots(1, ncols, figsize=(width * ncols, width * golden + 0.4))


def _save(fig, path):
    fig.tight_layout()
    # Drop the timestamp metadata so reruns give identical files.
    fig.savefig(path, dpi=150, metadata={"Date": None} if str(path).endswith((".svg", ".pdf")) else None)
    plt.close(fig)


def plot_rankability(report, path):
    """MiAP against lambda: seen tags on the left, unseen tags on the right."""
    with plt.rc_context(RC):
        fig, (left, right) = _figure(ncols=2)
        labels = list(dict.fromkeys(r.embedding_label for r in report.rows))
        for label in labels:
            rows = sorted((r for r in report.rows if r.embedding_label == label), key=lambda r: r.lam)
            lams = [r.lam for r in rows]
            left.plot(lams, [r.mean_miap_seen for r in rows], marker="o", label=label)
            right.plot(lams, [r.mean_miap_unseen for r in rows], marker="o", label=label)
        if not math.isnan(report.random_miap_unseen):
            right.axhline(report.random_miap_unseen, color="k", linestyle="--", label="random")
        for ax, title in ((left, "seen tags"), (right, "unseen tags")):
            ax.set_xscale("log")
            ax.set_xlabel(r"$\lambda$")
            ax.set_ylabel("MiAP")
            ax.set_ylim(0.0, 1.02)
            ax.set_title(title)
            ax.legend(frameon=False)
        _save(fig, path)


def plot_training_log(log, path):
    with plt.rc_context(RC):
        fig, ax = _figure()
        epochs = [r[0] for r in log.rows]
        ax.plot(epochs, [r[1] for r in log.rows], color="C0")
        ax.set_xlabel("epoch")
        ax.set_ylabel("training loss", color="C0")
        ax2 = ax.twinx()
        ax2.plot(epochs, [r[2] for r in log.rows], color="C1")
        ax2.set_ylabel("validation MiAP", color="C1")
        if log.best_epoch:
            ax2.axvline(log.best_epoch, color="0.5", linestyle=":")
        _save(fig, path)


def plot_eval(report, path):
    with plt.rc_context(RC):
        fig, ax = _figure()
        ks = sorted(report.per_k)
        width = 0.8 / 3
        for j, name in enumerate(("precision", "recall", "F1")):
            ax.bar([i + (j - 1) * width for i in range(len(ks))],
                   [report.per_k[k][j] for k in ks], width, label=name)
        ax.axhline(report.miap, color="k", linestyle="--", label=f"MiAP = {report.miap:.3f}")
        ax.set_xticks(range(len(ks)))
        ax.set_xticklabels([f"K={k}" for k in ks])
        ax.set_ylim(0.0, 1.0)
        ax.legend(frameon=False)
        _save(fig, path)


def plot_pca(coords, path, title="offsets"):
    with plt.rc_context(RC):
        fig, ax = _figure()
        y = coords[:, 1] if coords.shape[1] > 1 else [0.0] * len(coords)
        ax.scatter(coords[:, 0], y, s=8, alpha=0.7)
        ax.axhline(0.0, color="0.8", linewidth=0.8)
        ax.axvline(0.0, color="0.8", linewidth=0.8)
        ax.set_xlabel("PC 1")
        ax.set_ylabel("PC 2" if coords.shape[1] > 1 else "")
        ax.set_title(title)
        _save(fig, path)
