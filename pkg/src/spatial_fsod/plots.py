"""Static SVG plots of ablation CSV rows (matplotlib, Agg backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# Fixed hash salt and no date metadata keep the SVG bytes reproducible.
matplotlib.rcParams["svg.hashsalt"] = "spatial-fsod"


def _means(rows: Sequence[dict[str, str]]) -> dict[tuple[str, int], float]:
    """nAP50 per (variant, k): the mean row when present, else the single seed row."""
    out: dict[tuple[str, int], float] = {}
    for r in rows:
        key = (r["variant"], int(r["k"]))
        if r["seed"] == "mean" or key not in out:
            out[key] = float(r["nAP50"])
    return out


def plot_ablation(rows: Sequence[dict[str, str]], path: str | Path, line: bool = False) -> None:
    means = _means(rows)
    variants = list(dict.fromkeys(v for v, _ in means))
    ks = sorted({k for _, k in means})
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    if line:
        xs = list(range(len(variants)))
        for k in ks:
            ax.plot(xs, [means[(v, k)] for v in variants], marker="o", label=f"k={k}")
        ax.set_xticks(xs, variants)
    else:
        width = 0.8 / max(len(ks), 1)
        for j, k in enumerate(ks):
            xs = [i + (j - (len(ks) - 1) / 2) * width for i in range(len(variants))]
            ax.bar(xs, [means[(v, k)] for v in variants], width=width, label=f"k={k}")
        ax.set_xticks(range(len(variants)), variants, rotation=20, ha="right")
    ax.set_ylabel("nAP50")
    ax.set_title(str(rows[0]["ablation"]) if rows else "")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
