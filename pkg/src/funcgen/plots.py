"""Figure rendering for CLI reports.

Every function writes a PNG next to the delimited output it illustrates and
returns the path.  Rendering uses the non-interactive matplotlib backend, so
these are safe in headless runs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_function_samples(path, samples, title: str | None = None, max_lines: int = 64,
                          context: object | None = None):
    """Overlay line plot of 1-D function samples; optional context points."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    shown = list(samples)[:max_lines]
    for s in shown:
        if s.mesh.shape[1] != 1:
            plt.close(fig)
            raise ValueError("function overlay plots need 1-D meshes")
        ax.plot(s.mesh[:, 0], s.values, lw=0.8, alpha=0.7)
    if context is not None:
        ax.plot(context.mesh[:, 0], context.values, "ko", ms=4, label="context")
        ax.legend(loc="best")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_history(path, history):
    """Training curves: surrogate loss plus phase energies per epoch."""
    epochs = [h.epoch for h in history]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.4, 6.0), sharex=True)
    ax1.plot(epochs, [h.surrogate_loss for h in history], label="surrogate loss")
    ax1.set_ylabel("loss")
    ax1.legend(loc="best")
    ax2.plot(epochs, [h.mean_pos_energy for h in history], label="data energy")
    ax2.plot(epochs, [h.mean_neg_energy for h in history], label="model energy")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("energy")
    ax2.legend(loc="best")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_embedding(path, coords, sources, title: str | None = None):
    """Scatter of 2-D embeddings, one color per source label."""
    coords = np.asarray(coords, dtype=float)
    sources = list(sources)
    fig, ax = plt.subplots(figsize=(5.2, 5.2))
    for label in dict.fromkeys(sources):
        rows = [i for i, s in enumerate(sources) if s == label]
        ax.scatter(coords[rows, 0], coords[rows, 1], s=14, alpha=0.7, label=label)
    ax.set_xlabel("e1")
    ax.set_ylabel("e2")
    ax.legend(loc="best")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_mse_bars(path, rows):
    """Bar chart of predictive MSE per (strategy, p) row."""
    labels = [f"{strategy}\np={p:g}" for _, strategy, p, _ in rows]
    values = [mse for _, _, _, mse in rows]
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(rows), 4.0))
    ax.bar(np.arange(len(rows)), values, width=0.6)
    ax.set_xticks(np.arange(len(rows)))
    ax.set_xticklabels(labels)
    ax.set_ylabel("predictive MSE")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_image_grid(path, images, n_cols: int = 8, title: str | None = None):
    """Grayscale grid of rasters with intensities in [0, 1]."""
    arr = np.asarray(images, dtype=float)
    if arr.ndim == 2:
        arr = arr[None]
    n = arr.shape[0]
    n_cols = max(1, min(n_cols, n))
    n_rows = (n + n_cols - 1) // n_cols
    fig, axes = plt.subplots(n_rows, n_cols, figsize=(1.4 * n_cols, 1.4 * n_rows), squeeze=False)
    for i in range(n_rows * n_cols):
        ax = axes[i // n_cols][i % n_cols]
        ax.axis("off")
        if i < n:
            ax.imshow(arr[i], cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_eigensystem(spectrum_path, functions_path, eigsys, queries, n_functions: int = 6):
    """Eigenvalue decay plot plus the leading eigenfunctions on a fine mesh."""
    from .spectral import eigenfunction_matrix

    fig, ax = plt.subplots(figsize=(5.6, 4.0))
    vals = np.maximum(eigsys.eigenvalues, 1e-300)
    ax.semilogy(np.arange(1, vals.size + 1), vals, "o-", ms=3)
    ax.set_xlabel("index")
    ax.set_ylabel("eigenvalue")
    fig.tight_layout()
    fig.savefig(spectrum_path, dpi=120)
    plt.close(fig)

    queries = np.asarray(queries, dtype=float)
    mat = eigenfunction_matrix(eigsys, queries)
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for i in range(min(n_functions, mat.shape[1])):
        ax.plot(queries[:, 0], mat[:, i], lw=1.0, label=f"e{i + 1}")
    ax.set_xlabel("x")
    ax.set_ylabel("eigenfunction")
    ax.legend(loc="best", ncol=2, fontsize=8)
    fig.tight_layout()
    fig.savefig(functions_path, dpi=120)
    plt.close(fig)
    return spectrum_path, functions_path
