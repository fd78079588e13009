"""Linear-combination-of-unitaries expansions of the loss propagator.

The non-unitary factor ``exp(-H_A dt)`` of a time step is realized as a
weighted mixture of forward and backward real-time evolutions,

    A0 + sum_b A_b (exp(+i R dtau_b) + exp(-i R dtau_b)),   R @ R = H_A,

or, for the ladder model, exactly as ``cos(H_aux) / eta`` with a diagonal
auxiliary generator whose entries are ``arccos(exp(-dt * lambda_j))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .encoding import SectorEncoding

__all__ = [
    "LcuSolution",
    "AuxGenerator",
    "ExpansionInfeasible",
    "solve_expansion",
    "hermitian_root",
    "exact_onsite",
    "realized_operator",
]


class ExpansionInfeasible(RuntimeError):
    """No real, positive-weight solution of the moment system was found."""


@dataclass(frozen=True)
class LcuSolution:
    """Coefficients of a forward/backward evolution mixture.

    Attributes
    ----------
    A0 : float
        Weight of the identity.
    pairs : tuple of (float, float)
        ``(A_b, dtau_b)``; each pair contributes ``A_b`` to both directions.
    order : int
        Number of matched Taylor orders ``kappa``.
    dt : float
        Time step the expansion was solved for.
    exact : bool
        True when the mixture equals the target propagator exactly.
    """

    A0: float
    pairs: tuple[tuple[float, float], ...]
    order: int
    dt: float
    exact: bool = False

    def __post_init__(self):
        if not self.A0 + 2 * sum(a for a, _ in self.pairs) > 0:
            raise ValueError("LCU weights must have a positive total")

    @property
    def weights(self) -> np.ndarray:
        """Normalized ancilla weights ``[A0, A_1, A_1, A_2, A_2, ...]``."""
        w = [self.A0] + [a for a, _ in self.pairs for _ in range(2)]
        w = np.asarray(w, dtype=float)
        return w / w.sum()

    def scalar(self, lam) -> np.ndarray:
        """Mixture evaluated on an eigenvalue ``lam >= 0`` of ``H_A``."""
        r = np.sqrt(np.maximum(np.asarray(lam, dtype=float), 0.0))
        out = np.full_like(r, self.A0, dtype=float)
        for a, tau in self.pairs:
            out = out + 2.0 * a * np.cos(r * tau)
        return out

    def operator(self, H_A: np.ndarray) -> np.ndarray:
        """Realized mixture for a Hermitian PSD generator ``H_A``."""
        lam, vec = np.linalg.eigh(0.5 * (H_A + H_A.conj().T))
        return (vec * self.scalar(np.clip(lam, 0.0, None))) @ vec.conj().T


@dataclass(frozen=True)
class AuxGenerator:
    """Hermitian generator used inside the LCU unitaries.

    ``kind`` is ``'root'`` (``matrix @ matrix == H_A``) or ``'exact_onsite'``
    (``cos(matrix) / eta == exp(-H_A dt)``).
    """

    matrix: np.ndarray
    kind: str
    eta: float = 1.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in ("root", "exact_onsite"):
            raise ValueError(f"unknown generator kind {self.kind!r}")
        m = np.asarray(self.matrix)
        if np.max(np.abs(m - m.conj().T), initial=0.0) > 1e-12:
            raise ValueError("auxiliary generator must be Hermitian")


def _moment_residual(A0, A, s, order):
    # equations scaled so that dtau_b^2 = s_b * dt removes the dt dependence
    res = [A0 + 2 * A.sum() - 1.0]
    for j in range(1, order):
        res.append(np.sum(2 * A * (-1) ** j * s ** j) / math.factorial(2 * j)
                   - (-1) ** j / math.factorial(j))
    return np.array(res)


def solve_expansion(order: int, n_pairs: int, dt: float, pin_a0: bool = True,
                    max_iter: int = 200, tol: float = 1e-12, seed: int = 0) -> LcuSolution:
    """Match the mixture to ``exp(-lambda dt)`` through ``lambda^(order-1)``.

    Parameters
    ----------
    order : int
        ``kappa >= 2``.
    n_pairs : int
        Number of forward/backward pairs ``B``.
    dt : float
        Time step, positive.
    pin_a0 : bool
        Fix ``A0 = 0`` (single-pair circuits need no identity branch).

    Raises
    ------
    ExpansionInfeasible
        If damped Newton iterations from several starts fail to reach a
        solution with positive weights and real ``dtau``.
    """
    if order < 2:
        raise ValueError("order must be at least 2")
    if n_pairs < 1:
        raise ValueError("at least one pair is required")
    if not dt > 0:
        raise ValueError("dt must be positive")
    n_unknown = 2 * n_pairs + (0 if pin_a0 else 1)
    if n_unknown < order:
        raise ValueError(f"{n_unknown} free parameters cannot match order {order}")
    if order == 2 and n_pairs == 1 and pin_a0:
        return LcuSolution(0.0, ((0.5, math.sqrt(2.0 * dt)),), 2, dt)

    rng = np.random.default_rng(seed)
    B = n_pairs
    for attempt in range(20):
        # geometric spread of s_b = dtau_b^2 / dt around the cosine solution
        if attempt == 0:
            s = 2.0 * np.geomspace(0.5, 2.0 * B, B)
        else:
            s = np.sort(np.exp(rng.uniform(np.log(0.2), np.log(10.0 * order), B)))
        A = np.full(B, 0.5 / B)
        A0 = 0.0
        x = np.concatenate([A, s] if pin_a0 else [[A0], A, s])

        def unpack(v):
            if pin_a0:
                return 0.0, v[:B], v[B:]
            return v[0], v[1:B + 1], v[B + 1:]

        for _ in range(max_iter):
            a0, a, ss = unpack(x)
            r = _moment_residual(a0, a, ss, order)
            if np.max(np.abs(r)) < tol:
                break
            J = np.empty((order, x.size))
            h = 1e-7
            for k in range(x.size):
                xp = x.copy()
                xp[k] += h * max(1.0, abs(x[k]))
                J[:, k] = (_moment_residual(*unpack(xp), order) - r) / (xp[k] - x[k])
            step = np.linalg.lstsq(J, -r, rcond=None)[0]
            lam = 1.0
            base = np.linalg.norm(r)
            while lam > 1e-4:
                trial = x + lam * step
                if np.linalg.norm(_moment_residual(*unpack(trial), order)) < base:
                    break
                lam *= 0.5
            x = x + lam * step
        a0, a, ss = unpack(x)
        if (np.max(np.abs(_moment_residual(a0, a, ss, order))) < 1e-10
                and np.all(a > 0) and np.all(ss > 0) and a0 >= -1e-14):
            pairs = tuple(sorted((float(ai), float(math.sqrt(si * dt))) for ai, si in zip(a, ss)))
            return LcuSolution(max(float(a0), 0.0), pairs, order, dt)
    raise ExpansionInfeasible(f"no solution for order={order}, pairs={n_pairs}")


def hermitian_root(H_A: np.ndarray, tol: float = 1e-10) -> AuxGenerator:
    """Positive square root ``R`` of a Hermitian PSD matrix."""
    H = 0.5 * (np.asarray(H_A) + np.asarray(H_A).conj().T)
    lam, vec = np.linalg.eigh(H)
    if lam.size and lam.min() < -tol:
        raise ValueError(f"generator has a negative eigenvalue {lam.min():.3e}")
    R = (vec * np.sqrt(np.clip(lam, 0.0, None))) @ vec.conj().T
    R = 0.5 * (R + R.conj().T)
    if np.allclose(H, np.diag(np.diag(H)), atol=0):
        R = np.diag(np.sqrt(np.clip(np.diag(H).real, 0.0, None))).astype(H.dtype)
    return AuxGenerator(R, "root")


def exact_onsite(gamma: float, dt: float, sector: SectorEncoding | int,
                 literal: bool = False) -> tuple[AuxGenerator, float]:
    """Exact auxiliary generator for the on-site loss of the ladder.

    Parameters
    ----------
    gamma : float
        Loss rate.
    dt : float
        Time step (negative values select the time-reversed branch).
    sector : SectorEncoding or int
        Sector encoding, or the number of cells for the single-particle case.
    literal : bool
        Use one scalar angle on every lossy-site projector instead of the
        per-configuration angle. Identical for one particle; inexact when two
        particles sit on lossy sites.

    Returns
    -------
    generator : AuxGenerator
        Diagonal ``H_aux`` over the sector basis.
    eta : float
        ``min(1, exp(gamma dt))`` (for ``dt < 0`` and several particles the
        exponent uses the largest loss eigenvalue); ``cos(H_aux) / eta``
        equals ``exp(-H_A dt)``.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if not math.isfinite(dt):
        raise ValueError("dt must be finite")
    if isinstance(sector, SectorEncoding):
        occ = sector.occupations()
    else:
        n_cells = int(sector)
        occ = np.eye(2 * n_cells, dtype=np.int8)
    counts_b = occ[:, 1::2].sum(axis=1)
    counts_a = occ[:, 0::2].sum(axis=1)
    eta = min(1.0, math.exp(gamma * dt))
    if dt >= 0:
        k = counts_b
        lam = gamma * counts_b
    else:
        k = counts_a
        lam = gamma * counts_b
    if literal:
        angle = math.acos(math.exp(-gamma * abs(dt)))
        diag = angle * k
    elif dt >= 0:
        diag = np.arccos(np.exp(-dt * lam))
    else:
        # rescale the growing propagator so every entry is at most one
        eta = math.exp(dt * float(lam.max()))
        target = np.exp(-dt * lam) * eta
        diag = np.arccos(np.clip(target, -1.0, 1.0))
    if not np.all(np.isfinite(diag)):
        raise ValueError("auxiliary angle is not finite")
    gen = AuxGenerator(np.diag(diag.astype(float)).astype(complex), "exact_onsite", eta,
                       meta={"gamma": gamma, "dt": dt, "literal": literal})
    return gen, eta


def realized_operator(aux: AuxGenerator, solution: LcuSolution | None = None) -> np.ndarray:
    """Operator obtained after post-selecting the LCU ancilla.

    For ``exact_onsite`` generators this is ``cos(H_aux) / eta``; for roots
    it is the mixture of ``solution``.
    """
    M = aux.matrix
    if aux.kind == "exact_onsite":
        return (0.5 / aux.eta) * (sla.expm(1j * M) + sla.expm(-1j * M))
    if solution is None:
        raise ValueError("a root generator needs an LcuSolution")
    d = M.shape[0]
    out = solution.A0 * np.eye(d, dtype=complex)
    for a, tau in solution.pairs:
        out = out + a * (sla.expm(1j * M * tau) + sla.expm(-1j * M * tau))
    return out
