"""Stick-figure rendering of 2D joint sequences (a visual aid, not a renderer)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .skeleton import DEFAULT_TOPOLOGY, SkeletonTopology

_COLORS = ("tab:gray", "tab:blue", "tab:orange", "tab:green", "tab:red")


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_overlay(path, sequences: dict[str, np.ndarray], n_frames: int = 6, title: str = "",
                 topology: SkeletonTopology = DEFAULT_TOPOLOGY) -> Path:
    """Image strip of ``n_frames`` evenly spaced frames with all sequences overlaid."""
    plt = _figure()
    first = next(iter(sequences.values()))
    T = first.shape[0]
    frames = np.linspace(0, T - 1, num=min(n_frames, T)).round().astype(int)
    fig, axes = plt.subplots(1, len(frames), figsize=(2.0 * len(frames), 3.2), squeeze=False)
    lo = np.min([s[..., :2].min(axis=(0, 1)) for s in sequences.values()], axis=0)
    hi = np.max([s[..., :2].max(axis=(0, 1)) for s in sequences.values()], axis=0)
    pad = 0.05 * float(np.max(hi - lo) + 1e-9)
    for ax, t in zip(axes[0], frames):
        for (label, seq), color in zip(sequences.items(), _COLORS):
            for p, c in topology.limbs:
                ax.plot(seq[t, [p, c], 0], seq[t, [p, c], 1], color=color, lw=1.5,
                        label=label if (p, c) == topology.limbs[0] else None)
        ax.set_xlim(lo[0] - pad, hi[0] + pad)
        ax.set_ylim(lo[1] - pad, hi[1] + pad)
        ax.set_aspect("equal")
        ax.set_title(f"frame {t}", fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
    axes[0][0].legend(fontsize=6, loc="upper left")
    if title:
        fig.suptitle(title, fontsize=9)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=80, metadata={"Software": None})
    plt.close(fig)
    return path
