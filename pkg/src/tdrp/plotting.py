"""Static figures written next to the CSV outputs (no interactive display)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {"figure.figsize": (6.0, 3.8), "axes.spines.top": False, "axes.spines.right": False,
         "axes.grid": True, "grid.alpha": 0.3, "font.size": 10}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def learning_curves(curves: Mapping[str, Sequence[np.ndarray]], path, ylabel: str = "success rate") -> Path:
    """Mean and min/max band across seeds for each labelled group of runs."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, runs in curves.items():
            n = min(len(r) for r in runs)
            arr = np.array([np.asarray(r, dtype=float)[:n] for r in runs])
            x = np.arange(1, n + 1)
            ax.plot(x, arr.mean(axis=0), label=f"{label} (n={len(arr)})")
            ax.fill_between(x, arr.min(axis=0), arr.max(axis=0), alpha=0.2)
        ax.set_xlabel("iteration")
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False)
        return _save(fig, path)


def chain_distance(distances: Sequence[float], path, pre: float, post: float) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(np.arange(1, len(distances) + 1), distances, marker=".")
        ax.set_xlabel("fine-tune iteration")
        ax.set_ylabel("terminal-to-center distance")
        ax.set_title(f"chained success {pre:.2f} -> {post:.2f}")
        return _save(fig, path)


def ablation(steps: Sequence[int], rhos: Sequence[float], raw_rho: float, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar([str(s) for s in steps], rhos, color="tab:blue", label="encoder")
        ax.axhline(raw_rho, color="tab:red", linestyle="--", label="raw state")
        ax.set_xlabel("step")
        ax.set_ylabel("Spearman rho")
        ax.set_ylim(min(0.0, raw_rho) - 0.05, 1.0)
        ax.legend(frameon=False)
        return _save(fig, path)


def embedding_scatter(embeddings: np.ndarray, timesteps: np.ndarray, path) -> Path:
    """First two principal components of the embeddings, coloured by timestep."""
    emb = np.asarray(embeddings, dtype=float)
    centred = emb - emb.mean(axis=0)
    if emb.shape[1] >= 2:
        _, _, vt = np.linalg.svd(centred, full_matrices=False)
        xy = centred @ vt[:2].T
    else:
        xy = np.column_stack([centred[:, 0], np.zeros(len(centred))])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        sc = ax.scatter(xy[:, 0], xy[:, 1], c=timesteps, s=6, cmap="viridis")
        fig.colorbar(sc, ax=ax, label="timestep")
        ax.set_xlabel("PC 1")
        ax.set_ylabel("PC 2")
        return _save(fig, path)
