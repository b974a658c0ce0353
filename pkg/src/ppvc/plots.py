"""Vector-image rendering of runs and ensembles.

All figures are SVG with deterministic bytes: fixed hash salt, no
embedded timestamps, text kept as text.  Three-dimensional data is
shown as the three axis-pair projections instead of a perspective view,
which keeps the output exact and the files small.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Ellipse  # noqa: E402

from . import analysis, geometry  # noqa: E402
from .errors import DomainError  # noqa: E402

__all__ = ["plot_finals", "plot_initials", "plot_mahalanobis"]

matplotlib.rcParams["svg.hashsalt"] = "ppvc"
matplotlib.rcParams["svg.fonttype"] = "none"

_META = {"Date": None}
_PAIRS3 = ((0, 1), (0, 2), (1, 2))
_AXIS_NAMES = "xyz"


def _outline(points2: np.ndarray):
    """Closed boundary ring of a 2D point set (None for a single point)."""
    hull = geometry.convex_hull(points2)
    v = hull.vertices
    if hull.rank == 0:
        return None
    return np.vstack([v, v[:1]])


def _draw_cloud(ax, pts2, hulls2, labels, colors):
    ax.scatter(pts2[:, 0], pts2[:, 1], s=6, c="#3465a4", alpha=0.6,
               linewidths=0, zorder=2)
    for ring, label, color in zip(hulls2, labels, colors):
        if ring is None:
            continue
        ax.plot(ring[:, 0], ring[:, 1], color=color, lw=1.4, label=label,
                zorder=3)
    ax.set_aspect("equal", adjustable="datalim")
    ax.grid(True, lw=0.3, alpha=0.4)


def _save(fig, path):
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def _panels(pts, hull_polys, labels, colors, title, path):
    d = pts.shape[1]
    if d == 2:
        fig, ax = plt.subplots(figsize=(5.2, 5.2))
        rings = [_outline(h.vertices) for h in hull_polys]
        _draw_cloud(ax, pts, rings, labels, colors)
        if labels:
            ax.legend(loc="upper right", fontsize=8)
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_title(title)
        fig.tight_layout()
        _save(fig, path)
        return
    fig, axes = plt.subplots(1, 3, figsize=(13.0, 4.4))
    for ax, (a, b) in zip(axes, _PAIRS3):
        rings = [_outline(h.vertices[:, (a, b)]) for h in hull_polys]
        _draw_cloud(ax, pts[:, (a, b)], rings, labels, colors)
        ax.set_xlabel(_AXIS_NAMES[a])
        ax.set_ylabel(_AXIS_NAMES[b])
    if labels:
        axes[0].legend(loc="upper right", fontsize=8)
    fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def plot_initials(initials, path, title: str = "initial states") -> None:
    """Initial normal states with their convex hull."""
    pts = np.asarray(initials, dtype=float)
    if pts.ndim != 2 or pts.shape[1] not in (2, 3):
        raise DomainError("initials must be (n, 2) or (n, 3)")
    hull = geometry.convex_hull(pts)
    _panels(pts, [hull], ["initial hull"], ["#cc0000"], title, path)


def plot_finals(finals, hulls, path, title: str = "final values") -> None:
    """Ensemble finals with hull overlays.

    `hulls` is a sequence of (label, Polytope) pairs, e.g. the initial
    hull and the widened hull from a membership report.
    """
    pts = np.asarray(finals, dtype=float)
    if pts.ndim != 2 or pts.shape[1] not in (2, 3):
        raise DomainError("finals must be (R, 2) or (R, 3)")
    if pts.shape[0] < 1:
        raise DomainError("empty ensemble")
    labels = [lab for lab, _ in hulls]
    polys = [h for _, h in hulls]
    palette = ["#cc0000", "#e8a000", "#4e9a06", "#75507b"]
    colors = [palette[i % len(palette)] for i in range(len(polys))]
    _panels(pts, polys, labels, colors, title, path)


def plot_mahalanobis(finals, chis, path,
                     title: str = "final value spread") -> None:
    """2D ensemble scatter with concentric coverage ellipses.

    Each ellipse is the level set D_M^2 = chi of the sample mean and
    covariance; needs a full-rank 2D covariance.
    """
    pts = np.asarray(finals, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DomainError("ellipse overlay needs 2D finals")
    if pts.shape[0] < 4:
        raise DomainError("too few runs for a covariance ellipse")
    ens = analysis.Ensemble(finals=pts)
    mean, cov = analysis.ensemble_stats(ens)
    vals, vecs = np.linalg.eigh(cov)
    if vals[0] <= 1e-10 * max(vals[-1], 1e-300):
        raise DomainError("covariance is singular; no ellipse level sets")
    angle = float(np.degrees(np.arctan2(vecs[1, 1], vecs[0, 1])))
    fig, ax = plt.subplots(figsize=(5.6, 5.6))
    ax.scatter(pts[:, 0], pts[:, 1], s=6, c="#3465a4", alpha=0.6,
               linewidths=0, zorder=2)
    for chi in sorted(float(c) for c in chis):
        w = 2.0 * np.sqrt(chi * vals[1])
        h = 2.0 * np.sqrt(chi * vals[0])
        ax.add_patch(Ellipse(mean, w, h, angle=angle, fill=False,
                             color="#cc0000", lw=1.2, zorder=3))
        ax.annotate("chi=%g" % chi,
                    (mean[0], mean[1] + 0.5 * h), fontsize=7,
                    ha="center", color="#cc0000", zorder=4)
    ax.plot([mean[0]], [mean[1]], marker="+", ms=10, c="#cc0000", zorder=4)
    ax.set_aspect("equal", adjustable="datalim")
    ax.grid(True, lw=0.3, alpha=0.4)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)
