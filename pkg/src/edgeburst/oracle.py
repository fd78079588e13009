"""Exact reference dynamics and spectra by dense linear algebra.

Everything here works directly with the sector Hamiltonian (no circuits):
the unnormalized state ``omega_t = exp(-i H t) psi0`` is propagated with a
fixed-step matrix exponential, and escape probabilities are integrated from
its loss-site occupancies.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.integrate import cumulative_trapezoid

from .analysis import EscapeProfile

__all__ = [
    "SpectrumResult",
    "OracleEvolution",
    "propagator",
    "propagator_residual",
    "evolve_exact",
    "escape_profile",
    "spectrum",
]

UNDERFLOW = 1e-12


def propagator(H: np.ndarray, t: float) -> np.ndarray:
    """``exp(-i H t)`` by Pade scaling and squaring."""
    H = np.asarray(H, dtype=complex)
    if not np.all(np.isfinite(H)):
        raise ValueError("Hamiltonian has non-finite entries")
    U = sla.expm(-1j * t * H)
    if not np.all(np.isfinite(U)):
        raise FloatingPointError("propagator is not finite")
    return U


def propagator_residual(H: np.ndarray, t: float, h: float = 1e-4) -> float:
    """Relative residual of ``dU/dt + i H U`` with a central difference."""
    U = propagator(H, t)
    dU = (propagator(H, t + h) - propagator(H, t - h)) / (2 * h)
    return float(np.linalg.norm(dU + 1j * H @ U) / max(np.linalg.norm(H @ U), 1e-300))


@dataclass(frozen=True)
class OracleEvolution:
    """Exact time series on a grid.

    Attributes
    ----------
    time_grid : ndarray, shape (T,)
    omega_occupancies : ndarray, shape (T, n_sites)
        Occupancies of the unnormalized state.
    rho_occupancies : ndarray, shape (T, n_sites)
        Occupancies of the normalized state.
    norm : ndarray, shape (T,)
        ``A_t``, the norm of the unnormalized state.
    truncated : bool
        True if the grid was cut where ``A_t`` underflowed.
    """

    time_grid: np.ndarray
    omega_occupancies: np.ndarray
    rho_occupancies: np.ndarray
    norm: np.ndarray
    truncated: bool = False


def evolve_exact(H: np.ndarray, psi0: np.ndarray, time_grid, occupations: np.ndarray) -> OracleEvolution:
    """Propagate ``psi0`` on a uniform grid starting at 0.

    Parameters
    ----------
    H : ndarray, shape (D, D)
    psi0 : ndarray, shape (D,)
        Normalized initial state.
    time_grid : array
        Uniformly spaced times starting at 0.
    occupations : ndarray, shape (D, n_sites)
        Site occupation of every basis state.
    """
    t = np.asarray(time_grid, dtype=float)
    if t.size == 0 or t[0] != 0:
        raise ValueError("time grid must start at 0")
    psi = np.asarray(psi0, dtype=complex).copy()
    if not np.isclose(np.linalg.norm(psi), 1.0, atol=1e-10):
        raise ValueError("initial state must be normalized")
    steps = np.diff(t)
    if steps.size and not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
        raise ValueError("time grid must be uniform")
    U = propagator(H, steps[0]) if steps.size else None
    occ = np.asarray(occupations, dtype=float)
    omega = np.zeros((t.size, occ.shape[1]))
    norm = np.zeros(t.size)
    truncated = False
    last = t.size
    for j in range(t.size):
        if j:
            psi = U @ psi
        prob = np.abs(psi) ** 2
        a2 = prob.sum()
        if np.sqrt(a2) < UNDERFLOW:
            warnings.warn(f"norm underflow at t={t[j]:.4g}; grid truncated", RuntimeWarning,
                          stacklevel=2)
            truncated = True
            last = j
            break
        omega[j] = prob @ occ
        norm[j] = np.sqrt(a2)
    omega, norm = omega[:last], norm[:last]
    rho = omega / (norm ** 2)[:, None]
    return OracleEvolution(t[:last], omega, rho, norm, truncated)


def escape_profile(H: np.ndarray, psi0: np.ndarray, gamma: float, t_max: float,
                   occupations: np.ndarray, n_steps: int = 2000,
                   converge_warn: float = 0.99) -> EscapeProfile:
    """Escape probabilities ``P_x(t) = 2 gamma int <n_xb>_omega`` from exact dynamics."""
    grid = np.linspace(0.0, t_max, n_steps + 1)
    ev = evolve_exact(H, psi0, grid, occupations)
    nb = ev.omega_occupancies[:, 1::2]
    px = 2.0 * gamma * cumulative_trapezoid(nb, ev.time_grid, axis=0, initial=0.0)
    ptot = px.sum(axis=1)
    if ptot[-1] < converge_warn:
        warnings.warn(f"P(t_max) = {ptot[-1]:.4f}; escape probabilities not converged",
                      RuntimeWarning, stacklevel=2)
    return EscapeProfile(ev.time_grid, px, ptot, px[-1].copy(), float(1.0 - ptot[-1]))


@dataclass(frozen=True)
class SpectrumResult:
    """Complex spectrum with its extremal imaginary parts."""

    eigenvalues: np.ndarray
    max_im: float
    min_im: float
    gap: float


def spectrum(H: np.ndarray) -> SpectrumResult:
    """Dense nonsymmetric eigensolve."""
    try:
        ev = np.linalg.eigvals(np.asarray(H, dtype=complex))
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise RuntimeError(f"eigensolver failed: {exc}") from exc
    mx, mn = float(ev.imag.max()), float(ev.imag.min())
    return SpectrumResult(ev, mx, mn, max(-mx, 0.0))
