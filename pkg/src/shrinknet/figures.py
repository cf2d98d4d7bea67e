"""Report figures.

Everything renders through the Agg backend straight to files; nothing here
opens a window.  Each function takes data already computed elsewhere and
returns the path it wrote.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(str(path), dpi=120)
    plt.close(fig)
    return str(path)


def training_curves(epoch_rows: list, path) -> str:
    """Loss and accuracy (when present) against epoch."""
    epochs = [r["epoch"] for r in epoch_rows]
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))

    axes[0].plot(epochs, [r["train_loss"] for r in epoch_rows], label="train")
    if epoch_rows and epoch_rows[0].get("test_loss") is not None:
        axes[0].plot(epochs, [r["test_loss"] for r in epoch_rows], label="test")
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("loss")
    axes[0].legend()

    if epoch_rows and epoch_rows[0].get("train_acc") is not None:
        axes[1].plot(epochs, [r["train_acc"] for r in epoch_rows], label="train")
        if epoch_rows[0].get("test_acc") is not None:
            axes[1].plot(epochs, [r["test_acc"] for r in epoch_rows], label="test")
        axes[1].set_ylabel("accuracy")
        axes[1].legend()
    else:
        axes[1].plot(epochs, [r["sparsity_at_threshold"] for r in epoch_rows])
        axes[1].set_ylabel("sparsity")
    axes[1].set_xlabel("epoch")
    return _finish(fig, path)


def lambda_magnitude_scatter(lam: np.ndarray, magnitudes: np.ndarray, path,
                             sample: int = 5000, seed: int = 0) -> str:
    lam = np.asarray(lam).ravel()
    magnitudes = np.asarray(magnitudes).ravel()
    if lam.size > sample:
        idx = np.random.default_rng(seed).choice(lam.size, sample, replace=False)
        lam, magnitudes = lam[idx], magnitudes[idx]
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.scatter(magnitudes, lam, s=4, alpha=0.35, linewidths=0)
    ax.set_xlabel("|weight|")
    ax.set_ylabel("coefficient")
    return _finish(fig, path)


def layer_profile_bars(layer_indices, fractions, path) -> str:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.bar([str(i) for i in layer_indices], fractions)
    ax.set_xlabel("layer")
    ax.set_ylabel("fraction pruned")
    ax.set_ylim(0, 1)
    return _finish(fig, path)


def energy_curve(profiles: dict, path, level: float = 0.95) -> str:
    """``profiles`` maps a label to a cumulative-energy array."""
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    for label, fr in profiles.items():
        ax.plot(np.arange(1, len(fr) + 1), fr, label=label)
    ax.axhline(level, color="gray", linestyle=":")
    ax.set_xlabel("components")
    ax.set_ylabel("cumulative energy")
    ax.legend()
    return _finish(fig, path)


def sparsity_timeline(epochs, fractions, path) -> str:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.plot(epochs, fractions, marker="o")
    ax.set_xlabel("epoch")
    ax.set_ylabel("fraction below reference threshold")
    ax.set_ylim(0, 1)
    return _finish(fig, path)


def sweep_heatmap(xi_values, targets, medians, path, label="test accuracy") -> str:
    """``medians[i, j]`` is the median score at xi_values[i], targets[j]."""
    med = np.asarray(medians, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(med, aspect="auto", origin="lower")
    ax.set_xticks(range(len(targets)), [format(t, "g") for t in targets])
    ax.set_yticks(range(len(xi_values)), [format(x, "g") for x in xi_values])
    ax.set_xlabel("sparsity target")
    ax.set_ylabel("penalty strength")
    fig.colorbar(im, ax=ax, label=label)
    for i in range(med.shape[0]):
        for j in range(med.shape[1]):
            if np.isfinite(med[i, j]):
                ax.text(j, i, format(med[i, j], ".3g"),
                        ha="center", va="center", fontsize=7)
    return _finish(fig, path)
