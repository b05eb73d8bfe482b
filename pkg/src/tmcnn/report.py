"""Figure rendering for evaluation output.

Companion plots for the delimited files the CLI writes: a step-series
chart with one standard deviation shaded around each mean line, and a
threshold-sweep chart marking the best F1. Headless backend, files only.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .eval import StepSeries, SweepResult

_OVERLAY_COLORS = {
    "junction": (60, 190, 60),
    "terminal": (70, 120, 245),
    "false": (225, 70, 70),
}


def render_overlay(img: np.ndarray, detections, box_side: int = 21) -> np.ndarray:
    """RGB uint8 copy of a grayscale image with a box outline per detection.

    Green for junctions, blue for terminals, red for rejected candidates.
    Boxes reaching past the border are clipped.
    """
    base = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    rgb = np.repeat((base * 255).astype(np.uint8)[:, :, None], 3, axis=2)
    h, w = base.shape
    lo = box_side // 2
    for d in detections:
        color = _OVERLAY_COLORS.get(d.final_label, (255, 255, 0))
        x0, y0 = d.x - lo, d.y - lo
        x1, y1 = x0 + box_side - 1, y0 + box_side - 1
        cx0, cx1 = max(x0, 0), min(x1, w - 1)
        cy0, cy1 = max(y0, 0), min(y1, h - 1)
        if cx0 > cx1 or cy0 > cy1:
            continue
        if 0 <= y0 < h:
            rgb[y0, cx0:cx1 + 1] = color
        if 0 <= y1 < h:
            rgb[y1, cx0:cx1 + 1] = color
        if 0 <= x0 < w:
            rgb[cy0:cy1 + 1, x0] = color
        if 0 <= x1 < w:
            rgb[cy0:cy1 + 1, x1] = color
    return rgb


def plot_step_series(series: StepSeries, path) -> None:
    """Mean defect counts per step with a +-1 std band per class."""
    steps = [s.step for s in series.steps]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, color in (("junction", "tab:green"), ("terminal", "tab:blue")):
        mean = [getattr(s, f"{label}_mean") for s in series.steps]
        std = [getattr(s, f"{label}_std") for s in series.steps]
        lo = [m - s for m, s in zip(mean, std)]
        hi = [m + s for m, s in zip(mean, std)]
        ax.plot(steps, mean, color=color, marker="o", markersize=3, label=label)
        ax.fill_between(steps, lo, hi, color=color, alpha=0.2, linewidth=0)
    ax.set_xlabel("step")
    ax.set_ylabel("count")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_sweep(result: SweepResult, path) -> None:
    """Precision, recall and F1 against the detection threshold."""
    ts = [r.threshold for r in result.rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, color in (("precision", "tab:orange"), ("recall", "tab:blue"),
                        ("f1", "tab:green")):
        ax.plot(ts, [getattr(r.metrics, name) for r in result.rows],
                color=color, marker="o", markersize=3, label=name)
    ax.axvline(result.best_threshold, color="gray", linestyle="--", linewidth=1,
               label=f"best t = {result.best_threshold:g}")
    ax.set_xlabel("threshold")
    ax.set_ylabel("score")
    ax.set_ylim(-0.02, 1.02)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
