"""Deterministic raster output: 8-bit map previews and NEX curve plots."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError


def to_uint8(image, vmin: float | None = None, vmax: float | None = None) -> np.ndarray:
    """Linear window ``[vmin, vmax]`` (default: image min/max) onto 0..255."""
    a = np.abs(image) if np.iscomplexobj(image) else np.asarray(image, dtype=np.float64)
    lo = float(a.min()) if vmin is None else vmin
    hi = float(a.max()) if vmax is None else vmax
    if hi <= lo:
        return np.zeros(a.shape, np.uint8)
    return np.round(np.clip((a - lo) / (hi - lo), 0, 1) * 255).astype(np.uint8)


def save_preview(image, path, vmin=None, vmax=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image, vmin, vmax), mode="L").save(path, format="PNG")
    return path


def read_curve_csv(path):
    try:
        with Path(path).open() as fh:
            rows = list(csv.DictReader(fh))
        nex = [int(r["nex"]) for r in rows]
        val = [float(r["value"]) for r in rows]
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise DataError(f"malformed curve CSV {path}: {exc}") from exc
    if not rows:
        raise DataError(f"curve CSV {path} is empty")
    return np.array(nex), np.array(val)


def export_plot(curve_paths, out_path, denoised: dict | None = None, ylabel: str = "PSNR [dB]",
                title: str | None = None) -> Path:
    """Line plot of NEX curves with horizontal lines for denoised values.

    ``curve_paths`` maps legend labels to curve CSVs (or is a list of
    paths); ``denoised`` maps labels to NEX=1 values.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not isinstance(curve_paths, dict):
        curve_paths = {Path(p).stem: p for p in curve_paths}
    if not curve_paths:
        raise DataError("no curves to plot")
    data = {label: read_curve_csv(p) for label, p in curve_paths.items()}
    plt.rcParams["svg.hashsalt"] = "epidenoise"
    fig, ax = plt.subplots(figsize=(6, 4), dpi=100)
    for label, (nex, val) in data.items():
        ax.plot(nex, val, marker="o", markersize=3, label=label)
    for label, v in (denoised or {}).items():
        ax.axhline(v, linestyle="--", linewidth=1, label=label)
    ax.set_xlabel("NEX")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=7)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, format="png", metadata={"Software": None})
    plt.close(fig)
    return out_path
