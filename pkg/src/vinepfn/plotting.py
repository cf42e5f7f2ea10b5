"""Figure output for benchmark reports and probability maps.

Figures are written with a fixed hash salt, no date metadata and text kept
as text, so reruns produce byte-identical SVG files.
"""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.colors import LinearSegmentedColormap  # noqa: E402

from .fileio import atomic_write  # noqa: E402

_RC = {"svg.fonttype": "none", "svg.hashsalt": "vinepfn", "font.size": 9}

HEATMAP_CMAP = LinearSegmentedColormap.from_list("green_yellow", [(0, 128 / 255, 0), (1, 1, 0)])


def _svg_bytes(fig):
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def roc_svg(curves, title):
    """``curves``: list of ``(label, auc, fpr, tpr)``; AUCs appear in the legend."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 5))
        ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls="--")
        for label, auc, fpr, tpr in curves:
            ax.plot(fpr, tpr, lw=1.4, label=f"{label} (AUC = {auc:.3f})", gid=f"roc-{label}")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.01)
        ax.set_xlabel("False positive rate")
        ax.set_ylabel("True positive rate")
        ax.set_title(title)
        ax.legend(loc="lower right", frameon=False)
        fig.tight_layout()
        return _svg_bytes(fig)


def roc_csv(thresholds, fpr, tpr):
    lines = ["threshold,fpr,tpr"]
    lines += [f"{t:.6g},{f:.6g},{p:.6g}" for t, f, p in zip(thresholds, fpr, tpr)]
    return "\n".join(lines) + "\n"


def write_roc_figures(report, directory):
    """One SVG per target mode plus one CSV per (model, mode). Returns written paths."""
    import os

    os.makedirs(directory, exist_ok=True)
    written = []
    modes = []
    for (_, mode) in report.roc:
        if mode not in modes:
            modes.append(mode)
    for mode in modes:
        curves = []
        for (model, m), (auc, (thr, fpr, tpr)) in report.roc.items():
            if m != mode:
                continue
            curves.append((model, auc, fpr, tpr))
            path = os.path.join(directory, f"roc_{model}_{mode}.csv")
            atomic_write(path, roc_csv(thr, fpr, tpr))
            written.append(path)
        path = os.path.join(directory, f"roc_{mode}.svg")
        atomic_write(path, roc_svg(curves, f"ROC, {mode} target (seed {report.roc_seed})"))
        written.append(path)
    return written


def map_figure_svg(raster, title="Disease probability"):
    """Annotated map panel with a probability colour bar."""
    import numpy as np

    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(6, 6 * raster.height / max(raster.width, 1) + 0.8))
        shown = np.ma.masked_array(raster.probs, mask=raster.nodata)
        im = ax.imshow(shown, cmap=HEATMAP_CMAP, vmin=0, vmax=1, interpolation="nearest")
        ax.set_title(title)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04, label="p(disease)")
        fig.tight_layout()
        return _svg_bytes(fig)
