"""Static figures (PNG, non-interactive backend)."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = [
    "plot_heatmap",
    "plot_escape_curves",
    "plot_escape_bars",
    "plot_scan",
    "plot_spectra",
    "plot_mitigation",
]


def _save(fig, path, prov) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"Description": " ".join(f"{k}={v}" for k, v in sorted(prov.items()))}
    fig.savefig(path, dpi=120, metadata=meta)
    plt.close(fig)
    return path


def plot_heatmap(path, prov, time_grid, occupancies, title="") -> Path:
    """Site-resolved normalized occupancies, site versus time."""
    fig, ax = plt.subplots(figsize=(7, 4))
    t = np.asarray(time_grid)
    im = ax.imshow(np.asarray(occupancies).T, aspect="auto", origin="lower", cmap="viridis",
                   extent=(t[0], t[-1], -0.5, occupancies.shape[1] - 0.5))
    ax.set_xlabel("t")
    ax.set_ylabel("site")
    ax.set_title(title)
    fig.colorbar(im, ax=ax, label="occupancy")
    return _save(fig, path, prov)


def plot_escape_curves(path, prov, profile, reference=None, title="") -> Path:
    fig, ax = plt.subplots(figsize=(7, 4))
    colors = plt.cm.viridis(np.linspace(0, 1, profile.final_Px.size))
    for x in range(profile.final_Px.size):
        ax.plot(profile.time_grid, profile.P_x_of_t[:, x], color=colors[x], lw=1.2,
                label=f"x={x + 1}" if profile.final_Px.size <= 16 else None)
        if reference is not None:
            ax.plot(reference.time_grid, reference.P_x_of_t[:, x], color=colors[x], lw=0.8,
                    ls="--")
    ax.set_xlabel("t")
    ax.set_ylabel("P_x(t)")
    ax.set_title(title + (" (dashed: exact)" if reference is not None else ""))
    if profile.final_Px.size <= 16:
        ax.legend(fontsize=6, ncol=2)
    return _save(fig, path, prov)


def plot_escape_bars(path, prov, profiles: Mapping[str, object], title="") -> Path:
    """Side-by-side bars of the final escape probabilities."""
    fig, ax = plt.subplots(figsize=(7, 4))
    names = list(profiles)
    width = 0.8 / len(names)
    for i, name in enumerate(names):
        prof = profiles[name]
        ax.bar(prof.cells + (i - (len(names) - 1) / 2) * width, prof.final_Px, width, label=name)
    ax.set_xlabel("cell x")
    ax.set_ylabel("escape probability")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path, prov)


def plot_scan(path, prov, scan: Mapping[str, np.ndarray], gamma: float) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    r = scan["ratio"]
    ax.plot(r, scan["oracle_max_im"] / gamma, "k-", label="max Im E (exact)")
    ax.plot(r, scan["oracle_min_im"] / gamma, "k--", label="min Im E (exact)")
    ax.plot(r, scan["engine_max_im"] / gamma, "o", label="max Im E (circuit)")
    ax.set_xlabel("v1 / v2")
    ax.set_ylabel("Im E / gamma")
    ax.legend()
    return _save(fig, path, prov)


def plot_spectra(path, prov, spectra: Mapping[float, np.ndarray]) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for ratio in sorted(spectra):
        ev = np.asarray(spectra[ratio])
        ax.plot(ev.real, ev.imag, ".", ms=4, label=f"v1/v2={ratio:g}")
    ax.set_xlabel("Re E")
    ax.set_ylabel("Im E")
    ax.legend(fontsize=6)
    return _save(fig, path, prov)


def plot_mitigation(path, prov, profiles: Mapping[str, object], errors: Mapping[str, float]) -> Path:
    labels = {k: f"{k} (MAE {errors[k]:.3f})" if k in errors else k for k in profiles}
    return plot_escape_bars(path, prov, {labels[k]: v for k, v in profiles.items()},
                            "escape probabilities with and without mitigation")
