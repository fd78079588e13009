"""Post-processing of normalized occupancies into physical observables.

Measured occupancies refer to the normalized state. The norm ``A_t`` of the
unnormalized state is recovered either by integrating the loss rate or from
the ancilla success probability, and cell-resolved escape probabilities
follow by integrating the weighted loss-site occupancies.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "EscapeProfile",
    "cumulative_trapezoid",
    "recover_norm_integral",
    "recover_norm_success",
    "escape_from_occupancies",
    "escape_from_run",
    "is_terminated",
    "SpectralPoint",
    "assemble_scan",
]


@dataclass(frozen=True)
class EscapeProfile:
    """Cell-resolved escape probabilities.

    Attributes
    ----------
    time_grid : ndarray, shape (T,)
    P_x_of_t : ndarray, shape (T, N)
        Escape probability through cell ``x`` (column ``x - 1``) up to ``t``.
    P_of_t : ndarray, shape (T,)
        Total escape probability.
    final_Px : ndarray, shape (N,)
        Values at the last time.
    residual : float
        ``1 - P(t_max)``, the probability not yet escaped.
    """

    time_grid: np.ndarray
    P_x_of_t: np.ndarray
    P_of_t: np.ndarray
    final_Px: np.ndarray
    residual: float

    @property
    def cells(self) -> np.ndarray:
        return np.arange(1, self.final_Px.size + 1)

    def argmax_cell(self, cells: Sequence[int] | None = None) -> int:
        """Cell (1-based) with the largest final escape probability."""
        cand = np.asarray(self.cells if cells is None else cells)
        return int(cand[np.argmax(self.final_Px[cand - 1])])


def cumulative_trapezoid(y: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid integral along axis 0, starting at zero."""
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    dt = np.diff(t).reshape((-1,) + (1,) * (y.ndim - 1))
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * dt * (y[1:] + y[:-1]), axis=0)
    return out


def _check_grid(t: np.ndarray) -> None:
    if t.ndim != 1 or t.size == 0 or t[0] != 0 or np.any(np.diff(t) <= 0):
        raise ValueError("time grid must start at 0 and increase strictly")


def recover_norm_integral(time_grid, b_occupancy_sum, gamma: float) -> np.ndarray:
    """``A_t = exp(-gamma * int_0^t sum_x <n_xb>_rho)`` by the trapezoid rule.

    Raises
    ------
    ValueError
        If an occupancy is below ``-1e-6``, which signals unprojected
        mitigated data.
    """
    t = np.asarray(time_grid, dtype=float)
    _check_grid(t)
    s = np.asarray(b_occupancy_sum, dtype=float)
    if s.shape != t.shape:
        raise ValueError("occupancy series and time grid differ in length")
    if np.any(s < -1e-6):
        raise ValueError("negative occupancy in norm recovery input")
    return np.exp(-gamma * cumulative_trapezoid(s, t))


def recover_norm_success(success_probability) -> np.ndarray:
    """``A_t ~ sqrt(S_t)``; approximate under Trotter, LCU and noise errors."""
    s = np.asarray(success_probability, dtype=float)
    if np.any(s <= 0):
        raise ValueError("success probability vanished (all shots failed)")
    if np.any(s > 1 + 1e-12):
        raise ValueError("success probability above one")
    return np.sqrt(s)


def escape_from_occupancies(time_grid, b_occupancies_rho, norm, gamma: float) -> EscapeProfile:
    """``P_x(t) = 2 gamma int_0^t A^2 <n_xb>_rho`` per cell.

    Parameters
    ----------
    time_grid : array, shape (T,)
    b_occupancies_rho : array, shape (T, N)
        Normalized-state occupancies of the ``b`` site of each cell.
    norm : array, shape (T,)
        ``A_t``.
    gamma : float
    """
    t = np.asarray(time_grid, dtype=float)
    _check_grid(t)
    nb = np.asarray(b_occupancies_rho, dtype=float)
    a = np.asarray(norm, dtype=float)
    if nb.shape[0] != t.size or a.shape != t.shape:
        raise ValueError("inconsistent grids")
    px = 2.0 * gamma * cumulative_trapezoid(nb * (a * a)[:, None], t)
    ptot = px.sum(axis=1)
    return EscapeProfile(t, px, ptot, px[-1].copy(), float(1.0 - ptot[-1]))


def escape_from_run(result, gamma: float, method: str = "integral") -> EscapeProfile:
    """Escape profile of a :class:`~edgeburst.engine.RunResult`.

    ``method`` selects the norm recovery: ``'integral'`` (default) or
    ``'success'``.
    """
    nb = result.occupancies[:, 1::2]
    if method == "integral":
        a = recover_norm_integral(result.time_grid, nb.sum(axis=1), gamma)
    elif method == "success":
        a = recover_norm_success(result.success_probability)
    else:
        raise ValueError(f"unknown norm-recovery method {method!r}")
    return escape_from_occupancies(result.time_grid, nb, a, gamma)


def is_terminated(P_of_t, threshold: float = 0.995) -> bool:
    """True when the last total escape probability reaches ``threshold``."""
    p = np.asarray(P_of_t, dtype=float)
    return bool(p.size and p[-1] >= threshold)


@dataclass(frozen=True)
class SpectralPoint:
    """One point of a hopping-ratio scan."""

    ratio: float
    engine_max_im: float
    oracle_max_im: float
    oracle_min_im: float
    oracle_gap: float
    converged: bool


def assemble_scan(points: Sequence[SpectralPoint]) -> dict[str, np.ndarray]:
    """Column arrays of a scan, sorted by hopping ratio."""
    pts = sorted(points, key=lambda p: p.ratio)
    return {
        "ratio": np.array([p.ratio for p in pts]),
        "engine_max_im": np.array([p.engine_max_im for p in pts]),
        "oracle_max_im": np.array([p.oracle_max_im for p in pts]),
        "oracle_min_im": np.array([p.oracle_min_im for p in pts]),
        "oracle_gap": np.array([p.oracle_gap for p in pts]),
        "converged": np.array([p.converged for p in pts]),
    }
