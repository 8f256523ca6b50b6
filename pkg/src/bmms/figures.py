"""Static SVG rendering of a multiscale decomposition."""
from __future__ import annotations

import matplotlib
from matplotlib.figure import Figure

import numpy as np

# fixed ids so reruns are byte-identical; labels kept as text, not glyph paths
SVG_RC = {"svg.hashsalt": "bmms", "svg.fonttype": "none"}


def decomposition_figure(scale_mean, scale_lower, scale_upper, total_mean, total_lower,
                         total_upper, path, beta_true=None, alpha=0.05):
    """One panel per scale contribution plus a panel for the accumulated total.

    Means are drawn as lines over the finest-grid index, credible bands shaded.
    """
    with matplotlib.rc_context(SVG_RC):
        _draw(scale_mean, scale_lower, scale_upper, total_mean, total_lower, total_upper,
              path, beta_true, alpha)


def _draw(scale_mean, scale_lower, scale_upper, total_mean, total_lower, total_upper,
          path, beta_true, alpha):
    K, p = np.shape(scale_mean)
    idx = np.arange(1, p + 1)
    fig = Figure(figsize=(3.2 * (K + 1), 3.0))
    axes = fig.subplots(1, K + 1, sharey=True)
    pct = int(round(100 * (1 - alpha)))
    panels = [(scale_mean[j], scale_lower[j], scale_upper[j], f"scale {j + 1}") for j in range(K)]
    panels.append((total_mean, total_lower, total_upper, "total"))
    for ax, (m, lo, hi, title) in zip(axes, panels):
        ax.fill_between(idx, lo, hi, color="0.8", lw=0, label=f"{pct}% band")
        ax.axhline(0, color="0.5", lw=0.5)
        ax.plot(idx, m, color="C0", lw=1.2, label="posterior mean")
        if beta_true is not None and title == "total":
            ax.plot(idx, beta_true, color="C3", lw=0.8, ls="--", label="true")
        ax.set_title(title)
        ax.set_xlabel("index")
    axes[0].set_ylabel("coefficient")
    axes[-1].legend(fontsize="small", frameon=False)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
