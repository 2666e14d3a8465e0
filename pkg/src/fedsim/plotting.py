"""Figure rendering for partition heatmaps and training curves.

Uses the Agg backend so runs work headless. PNGs are written without the
default Software metadata so repeated runs produce byte-identical files.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

_SAVE_OPTS = {"dpi": 150, "metadata": {"Software": None}}


def save_distribution_heatmap(matrix, path) -> None:
    """Client-by-class sample counts as a heatmap, annotated when small."""
    counts = matrix.counts
    k, c = counts.shape
    fig, ax = plt.subplots(figsize=(max(4.0, 0.5 * c + 2), max(3.0, 0.4 * k + 1.5)))
    im = ax.imshow(counts, cmap="viridis", aspect="auto")
    ax.set_xlabel("class")
    ax.set_ylabel("client")
    ax.set_xticks(np.arange(c))
    ax.set_yticks(np.arange(k))
    if k * c <= 400:
        threshold = counts.max() / 2 if counts.max() else 0
        for i in range(k):
            for j in range(c):
                color = "white" if counts[i, j] < threshold else "black"
                ax.text(j, i, str(int(counts[i, j])), ha="center", va="center",
                        color=color, fontsize=8)
    fig.colorbar(im, ax=ax, label="samples")
    ax.set_title("Samples per client and class")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)


def save_training_curves(metrics, path) -> None:
    """Test accuracy and loss curves over communication rounds."""
    rounds = [m.round for m in metrics]
    fig, (ax_acc, ax_loss) = plt.subplots(1, 2, figsize=(10, 4))
    ax_acc.plot(rounds, [m.test_acc for m in metrics], marker=".")
    ax_acc.set_xlabel("round")
    ax_acc.set_ylabel("test accuracy")
    ax_acc.set_ylim(0.0, 1.0)
    ax_acc.grid(True, alpha=0.3)
    ax_loss.plot(rounds, [m.test_loss for m in metrics], marker=".", label="test")
    ax_loss.plot(rounds, [m.train_loss for m in metrics], marker=".", label="train")
    ax_loss.set_xlabel("round")
    ax_loss.set_ylabel("loss")
    ax_loss.grid(True, alpha=0.3)
    ax_loss.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_OPTS)
    plt.close(fig)
