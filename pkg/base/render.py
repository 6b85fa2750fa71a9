"""
SVG rendering of relevance panels and experiment curves
"""
import logging
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from matplotlib.colors import LinearSegmentedColormap  # noqa: E402

from base.lrp import RelevanceMap  # noqa: E402
from base.signal_core import CHANNEL_NAMES, SignalWindow, euclidean_norm  # noqa: E402
from base.wavelet import cwt_morlet  # noqa: E402

logger = logging.getLogger(__name__)

# blue for negative, black near zero, red for positive relevance
RELEVANCE_CMAP = LinearSegmentedColormap.from_list("relevance", ["#1f5fff", "#000000", "#ff2020"])

# fixed salt and no date so reruns write identical files
plt.rcParams["svg.hashsalt"] = "har"
SVG_METADATA = {"Date": None}


def _save(fig, out_path: str | Path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)
    logger.info(f"Wrote {out_path}")
    return out_path


def render_relevance_panel(
    window: SignalWindow,
    relevance: RelevanceMap,
    out_path: str | Path,
    n_scales: int = 48,
    title: Optional[str] = None,
) -> Path:
    """
    Three stacked panels: acceleration trace, norm scalogram, per-timestep relevance strip.

    Args:
        window: The explained window
        relevance: Relevance map of that window
        out_path: Destination SVG path
        n_scales: Scalogram rows
        title: Optional figure title

    Returns:
        The written path
    """
    samples = window.samples
    T = samples.shape[1]
    t = np.arange(T) / window.rate
    scalogram = cwt_morlet(euclidean_norm(window), window.rate, n_scales=n_scales)
    strip = relevance.timestep_relevance()
    bound = float(np.max(np.abs(strip))) or 1.0

    fig, axes = plt.subplots(3, 1, figsize=(10, 6), sharex=True, gridspec_kw={"height_ratios": [3, 3, 1]})
    for channel, name in enumerate(CHANNEL_NAMES):
        axes[0].plot(t, samples[channel], linewidth=0.8, label=name)
    axes[0].set_ylabel("acceleration (g)")
    axes[0].legend(loc="upper right", fontsize="small")

    axes[1].imshow(
        scalogram.magnitudes,
        aspect="auto",
        origin="upper",
        extent=(t[0], t[-1], scalogram.frequencies[-1], scalogram.frequencies[0]),
        cmap="viridis",
    )
    axes[1].set_yscale("log")
    axes[1].set_ylabel("frequency (Hz)")

    axes[2].imshow(strip[None, :], aspect="auto", cmap=RELEVANCE_CMAP, vmin=-bound, vmax=bound, extent=(t[0], t[-1], 0, 1))
    axes[2].set_yticks([])
    axes[2].set_xlabel("time (s)")
    axes[2].set_ylabel(relevance.method, rotation=0, ha="right")

    fig.suptitle(title or f"{relevance.head} / class {relevance.target}")
    fig.tight_layout()
    return _save(fig, out_path)


def render_curves(
    frame: pd.DataFrame,
    x: str,
    y: str,
    group_by: Sequence[str],
    out_path: str | Path,
    title: str = "",
) -> Path:
    """One line per group, e.g. history accuracy per (task, split) or masking accuracy per order"""
    fig, ax = plt.subplots(figsize=(7, 4))
    group_by = list(group_by)
    groups = frame.groupby(group_by, sort=True) if group_by else [((), frame)]
    for key, rows in groups:
        rows = rows.sort_values(x)
        label = " / ".join(str(k) for k in (key if isinstance(key, tuple) else (key,)))
        ax.plot(rows[x].to_numpy(), rows[y].to_numpy(), marker="o", markersize=3, label=label or y)
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    if title:
        ax.set_title(title)
    ax.legend(fontsize="small")
    fig.tight_layout()
    return _save(fig, out_path)
