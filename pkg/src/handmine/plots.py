"""Report figures written next to the line-delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 120,
    # keep PNG output byte-stable between runs
    "svg.hashsalt": "handmine",
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def training_curves(metrics, path, window: int = 50):
    """Loss and positive/negative cosine similarity per step."""
    steps = np.array([m["step"] for m in metrics])
    loss = np.array([m["loss"] for m in metrics])
    pos = np.array([m["mean_pos_sim"] for m in metrics])
    neg = np.array([m["mean_neg_sim"] for m in metrics])
    with plt.rc_context(RC):
        fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(8, 3))
        ax0.plot(steps, loss, lw=0.6, color="0.6", label="step")
        if len(loss) >= window:
            nb = len(loss) // window
            blocks = loss[:nb * window].reshape(nb, window).mean(axis=1)
            centers = steps[:nb * window].reshape(nb, window).mean(axis=1)
            ax0.plot(centers, blocks, "o-", color="C0", label=f"{window}-step mean")
        ax0.set_xlabel("step")
        ax0.set_ylabel("loss")
        ax0.legend(frameon=False)
        ax1.plot(steps, pos, color="C2", lw=0.8, label="positive")
        ax1.plot(steps, neg, color="C3", lw=0.8, label="negative")
        ax1.set_xlabel("step")
        ax1.set_ylabel("mean cosine similarity")
        ax1.legend(frameon=False)
        _save(fig, path)


def pck_curve(thresholds, pck, path, auc: float | None = None):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.plot(thresholds, pck, "-", color="C0")
        ax.set_xlabel("threshold (mm)")
        ax.set_ylabel("PCK")
        ax.set_ylim(0, 1.02)
        if auc is not None:
            ax.set_title(f"AUC {auc:.3f}")
        _save(fig, path)


def rank_profile(profile: dict[int, float], path, baseline: float | None = None):
    """Mean keypoint distance of the rank-K neighbour against K."""
    ks = sorted(profile)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.plot(ks, [profile[k] for k in ks], "o-", color="C0", label="rank-K neighbour")
        if baseline is not None:
            ax.axhline(baseline, color="C3", ls="--", label="random cross-video")
        ax.set_xscale("log")
        ax.set_xlabel("rank K")
        ax.set_ylabel("mean keypoint distance")
        ax.legend(frameon=False)
        _save(fig, path)
