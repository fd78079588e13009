"""Readout-error mitigation and constrained zero-noise extrapolation.

Readout errors are characterized per sub-register by column-stochastic
confusion matrices (``M[i, j] = P(read i | prepared j)``) and inverted layer
by layer, each measurement layer using the tensored marginal of the
calibration on its qubits. Negative quasi-probabilities are removed by the
Euclidean projection onto the probability simplex.

Zero-noise extrapolation fits one line per observable through the data
measured at the noise scales ``lambda``, jointly under linear physicality
constraints, by a primal active-set quadratic program.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from .circuit import Circuit
from .engine import NoiseModel, run

__all__ = [
    "CalibrationSet",
    "calibrate",
    "calibration_circuits",
    "marginalize",
    "mitigate_counts",
    "postselected_distribution",
    "project_simplex",
    "Bounds",
    "SumEquals",
    "occupancy_bounds",
    "number_sum",
    "imag_energy_bounds",
    "ZneInput",
    "ZneResult",
    "zne",
    "solve_qp",
    "ols_lines",
]


# -- calibration ---------------------------------------------------------------

@dataclass
class CalibrationSet:
    """Tensored readout calibration.

    Attributes
    ----------
    sub_registers : list of list of int
        Disjoint qubit groups (at most 5 qubits each). Within a group the
        first qubit is the most significant bit of the matrix index.
    matrices : list of ndarray
        Column-stochastic confusion matrix of each group.
    """

    sub_registers: list
    matrices: list

    def __post_init__(self):
        self.sub_registers = [list(map(int, g)) for g in self.sub_registers]
        self.matrices = [np.asarray(m, dtype=float) for m in self.matrices]
        seen: set[int] = set()
        for g, m in zip(self.sub_registers, self.matrices):
            if len(g) > 5:
                raise ValueError("sub-registers hold at most 5 qubits")
            if seen & set(g):
                raise ValueError("sub-registers overlap")
            seen |= set(g)
            if m.shape != (1 << len(g),) * 2:
                raise ValueError("confusion matrix shape does not match its sub-register")
            if np.any(m < -1e-12) or not np.allclose(m.sum(axis=0), 1.0, atol=1e-9):
                raise ValueError("confusion matrices must be column stochastic")
        if len(self.matrices) != len(self.sub_registers):
            raise ValueError("one matrix per sub-register is required")

    @property
    def qubits(self) -> list[int]:
        return sorted(q for g in self.sub_registers for q in g)

    def marginal(self, qubits: Sequence[int]) -> np.ndarray:
        """Confusion matrix on ``qubits`` (in that bit order) from the tensored model."""
        qubits = [int(q) for q in qubits]
        missing = set(qubits) - set(self.qubits)
        if missing:
            raise ValueError(f"qubits {sorted(missing)} are not calibrated")
        mats, order = [], []
        for g, m in zip(self.sub_registers, self.matrices):
            keep = [q for q in g if q in qubits]
            if keep:
                mats.append(marginalize(m, [g.index(q) for q in keep]))
                order += keep
        full = np.ones((1, 1))
        for m in mats:
            full = np.kron(full, m)
        return _permute_bits(full, order, qubits)

    def to_dict(self) -> dict:
        return {"sub_registers": self.sub_registers,
                "matrices": [m.tolist() for m in self.matrices]}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationSet":
        return cls(d["sub_registers"], d["matrices"])


def _permute_bits(M: np.ndarray, have: list[int], want: list[int]) -> np.ndarray:
    """Reorder the qubit axes of a square matrix from order ``have`` to ``want``."""
    if have == want:
        return M
    k = len(have)
    perm = [have.index(q) for q in want]
    t = M.reshape((2,) * (2 * k))
    t = t.transpose(perm + [k + p for p in perm])
    return t.reshape(1 << k, 1 << k)


def marginalize(M: np.ndarray, keep: Sequence[int]) -> np.ndarray:
    """Marginal confusion matrix on the bit positions ``keep``.

    Outcomes of dropped bits are summed and their preparations averaged
    uniformly, which preserves column stochasticity.
    """
    n = int(round(math.log2(M.shape[0])))
    keep = [int(b) for b in keep]
    drop = tuple(b for b in range(n) if b not in keep)
    t = np.asarray(M, dtype=float).reshape((2,) * (2 * n))
    if drop:
        t = t.mean(axis=tuple(n + b for b in drop)).sum(axis=drop)
    # remaining axes follow ascending bit position; reorder to the order of keep
    k = len(keep)
    rank = [sorted(keep).index(b) for b in keep]
    t = t.transpose(rank + [k + r for r in rank])
    return t.reshape(1 << k, 1 << k)


def calibration_circuits(n_qubits: int, sub_registers: Sequence[Sequence[int]]) -> list[Circuit]:
    """Merged preparation circuits: ``2**max(n_g)`` in total.

    Circuit ``k`` prepares basis state ``k mod 2**n_g`` on each sub-register
    and measures every calibrated qubit into the clbit of the same index.
    """
    size = max(len(g) for g in sub_registers)
    out = []
    for k in range(1 << size):
        c = Circuit(n_qubits, n_qubits)
        for g in sub_registers:
            state = k % (1 << len(g))
            for pos, q in enumerate(g):
                if (state >> (len(g) - 1 - pos)) & 1:
                    c.x(q)
        for g in sub_registers:
            for q in g:
                c.measure(q, q)
        out.append(c)
    return out


def calibrate(noise: NoiseModel | None, sub_registers: Sequence[Sequence[int]], shots: int,
              n_qubits: int | None = None, rng: np.random.Generator | int | None = None,
              executor: Callable = run, max_condition: float = 1e6) -> CalibrationSet:
    """Estimate confusion matrices by running the merged calibration circuits.

    Parameters
    ----------
    noise : NoiseModel or None
        Noise applied by the executor.
    sub_registers : list of list of int
    shots : int
        Shots per calibration circuit (at least 1000).
    executor : callable
        ``executor(circuit, mode='shots', shots=..., noise=..., rng=...)``
        returning counts keyed by classical-register strings.
    """
    if shots < 1000:
        raise ValueError("at least 1000 shots per basis state are required")
    rng = np.random.default_rng(rng)
    groups = [list(map(int, g)) for g in sub_registers]
    n = n_qubits if n_qubits is not None else max(q for g in groups for q in g) + 1
    tallies = [np.zeros((1 << len(g), 1 << len(g))) for g in groups]
    for k, circ in enumerate(calibration_circuits(n, groups)):
        counts = executor(circ, mode="shots", shots=shots, noise=noise, rng=rng)
        for gi, g in enumerate(groups):
            prepared = k % (1 << len(g))
            for key, c in counts.items():
                read = int("".join(key[q] for q in g), 2)
                tallies[gi][read, prepared] += c
    mats = []
    for t, g in zip(tallies, groups):
        m = t / t.sum(axis=0, keepdims=True)
        cond = np.linalg.cond(m)
        if not np.isfinite(cond) or cond > max_condition:
            raise np.linalg.LinAlgError(f"confusion matrix of {g} is ill conditioned ({cond:.3g})")
        mats.append(m)
    return CalibrationSet(groups, mats)


# -- inversion -------------------------------------------------------------------

def project_simplex(v: np.ndarray, total: float = 1.0) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{x >= 0, sum(x) = total}``.

    Sort-based threshold algorithm.
    """
    v = np.asarray(v, dtype=float)
    if total <= 0:
        raise ValueError("total must be positive")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    ks = np.arange(1, v.size + 1)
    cond = u - css / ks > 0
    rho = ks[cond][-1]
    theta = css[cond][-1] / rho
    return np.maximum(v - theta, 0.0)


def _apply_layer_inverses(vec: np.ndarray, inverses: Sequence[np.ndarray]) -> np.ndarray:
    """Apply ``kron(inverses)`` to ``vec`` without forming the Kronecker product."""
    dims = [m.shape[0] for m in inverses]
    t = vec.reshape(dims)
    for axis, m in enumerate(inverses):
        t = np.moveaxis(np.tensordot(m, t, axes=([1], [axis])), 0, axis)
    return t.reshape(-1)


def mitigate_counts(counts: Mapping[str, float], layers: Sequence[Sequence[int]],
                    cal: CalibrationSet, project: bool = True) -> dict[str, float]:
    """Layered readout inversion of a histogram.

    Parameters
    ----------
    counts : mapping
        Histogram keyed by bitstrings formed by concatenating the outcomes of
        each layer (layer order, then qubit order within the layer).
    layers : list of list of int
        Physical qubits measured in each layer.
    cal : CalibrationSet
    project : bool
        Project onto the nearest nonnegative histogram with the same total.

    Returns
    -------
    dict
        Mitigated (quasi-)counts for every bitstring of the register.
    """
    widths = [len(l) for l in layers]
    n_bits = sum(widths)
    if n_bits > 24:
        raise ValueError("dense layered inversion is limited to 24 bits")
    vec = np.zeros(1 << n_bits)
    total = 0.0
    for key, c in counts.items():
        if len(key) != n_bits:
            raise ValueError(f"bitstring {key!r} does not match the layer structure")
        vec[int(key, 2)] += c
        total += c
    invs = [np.linalg.inv(cal.marginal(l)) for l in layers]
    out = _apply_layer_inverses(vec, invs)
    if project and total > 0:
        out = project_simplex(out, total)
    return {format(i, f"0{n_bits}b"): float(v) for i, v in enumerate(out)}


def postselected_distribution(counts: Mapping[str, float], n_select: int,
                              select_qubits: Sequence[int], target_qubits: Sequence[int],
                              cal: CalibrationSet, project: bool = True,
                              select_value: int = 0) -> tuple[np.ndarray, float]:
    """Mitigated target-layer distribution conditioned on the selection layers.

    Keys consist of ``n_select`` layers measured on ``select_qubits`` followed
    by one layer on ``target_qubits``. The layered inverse is contracted with
    the all-``select_value`` outcome on every selection layer, so the full
    ``2**(bits)`` vector is never formed.

    Returns
    -------
    dist : ndarray
        Conditional target distribution (projected onto the simplex when
        ``project``; otherwise the normalized quasi-distribution).
    kept : float
        Mitigated number of shots passing the selection.
    """
    ws, wt = len(select_qubits), len(target_qubits)
    inv_s = np.linalg.inv(cal.marginal(select_qubits))
    inv_t = np.linalg.inv(cal.marginal(target_qubits))
    row = inv_s[select_value]
    q = np.zeros(1 << wt)
    for key, c in counts.items():
        if len(key) != n_select * ws + wt:
            raise ValueError(f"bitstring {key!r} does not match the layer structure")
        w = float(c)
        for layer in range(n_select):
            w *= row[int(key[layer * ws:(layer + 1) * ws], 2)]
        q[int(key[n_select * ws:], 2)] += w
    q = inv_t @ q
    kept = float(q.sum())
    if kept <= 0:
        raise ValueError("no mitigated shots pass the selection")
    dist = project_simplex(q / kept) if project else q / kept
    return dist, kept


# -- zero-noise extrapolation ------------------------------------------------------

@dataclass(frozen=True)
class Bounds:
    """``lo <= value <= hi`` for the listed observables at every noise scale."""

    indices: tuple
    lo: float
    hi: float


@dataclass(frozen=True)
class SumEquals:
    """The listed observables sum to ``total`` at every noise scale."""

    indices: tuple
    total: float


def occupancy_bounds(indices: Sequence[int]) -> Bounds:
    return Bounds(tuple(indices), 0.0, 1.0)


def number_sum(indices: Sequence[int], p: float) -> SumEquals:
    return SumEquals(tuple(indices), float(p))


def imag_energy_bounds(index: int, p: int, gamma: float) -> Bounds:
    """``-p gamma <= Im E <= 0`` for an imaginary-energy observable."""
    return Bounds((int(index),), -p * gamma, 0.0)


@dataclass
class ZneInput:
    """Observables measured at increasing noise scales.

    Attributes
    ----------
    lambdas : array, shape (L,)
        Strictly increasing, starting at 1.
    values : array, shape (K, L)
        ``values[k, i]`` is observable ``k`` at ``lambdas[i]``.
    constraints : list of Bounds or SumEquals
    """

    lambdas: np.ndarray
    values: np.ndarray
    constraints: list = field(default_factory=list)

    def __post_init__(self):
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.lambdas.ndim != 1 or self.lambdas.size < 2:
            raise ValueError("at least two noise scales are required")
        if self.lambdas[0] != 1 or np.any(np.diff(self.lambdas) <= 0):
            raise ValueError("noise scales must increase strictly from 1")
        if self.values.shape[1] != self.lambdas.size:
            raise ValueError("values must have one column per noise scale")


@dataclass(frozen=True)
class ZneResult:
    """Extrapolated intercepts and slopes with solver diagnostics."""

    intercepts: np.ndarray
    gradients: np.ndarray
    kkt_residual: float
    iterations: int
    active: tuple


def ols_lines(lambdas: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form least-squares intercepts and slopes, one line per row."""
    lam = np.asarray(lambdas, dtype=float)
    y = np.atleast_2d(values)
    lm, ym = lam.mean(), y.mean(axis=1)
    slope = ((y - ym[:, None]) @ (lam - lm)) / np.sum((lam - lm) ** 2)
    return ym - slope * lm, slope


def _constraint_rows(constraints, K: int, lam_max: float):
    """Linear constraints on ``z = [c_1..c_K, m_1..m_K]``."""
    eq_a, eq_b, in_a, in_b = [], [], [], []
    for con in constraints:
        if isinstance(con, SumEquals):
            for slot, target in ((0, con.total), (K, 0.0)):
                a = np.zeros(2 * K)
                a[[slot + i for i in con.indices]] = 1.0
                eq_a.append(a)
                eq_b.append(target)
        elif isinstance(con, Bounds):
            for i in con.indices:
                for lam in (0.0, lam_max):
                    a = np.zeros(2 * K)
                    a[i], a[K + i] = 1.0, lam
                    in_a.append(a.copy())
                    in_b.append(con.lo)
                    in_a.append(-a)
                    in_b.append(-con.hi)
        else:
            raise TypeError(f"unknown constraint {con!r}")
    return (np.array(eq_a).reshape(-1, 2 * K), np.array(eq_b),
            np.array(in_a).reshape(-1, 2 * K), np.array(in_b))


def solve_qp(G: np.ndarray, g: np.ndarray, A_eq: np.ndarray, b_eq: np.ndarray,
             A_in: np.ndarray, b_in: np.ndarray, x0: np.ndarray | None = None,
             tol: float = 1e-10, max_iter: int = 500):
    """Minimize ``x'Gx/2 + g'x`` s.t. ``A_eq x = b_eq``, ``A_in x >= b_in``.

    Primal active-set method for a positive definite ``G``. A feasible start
    is found with a linear program when ``x0`` is not given.

    Returns
    -------
    x : ndarray
    multipliers : (ndarray, ndarray)
        Equality and inequality multipliers (zero for inactive rows).
    kkt : float
        Maximum of the stationarity, feasibility and complementarity residuals.
    iterations : int
    """
    n = G.shape[0]
    m_eq, m_in = A_eq.shape[0], A_in.shape[0]
    if x0 is None:
        if m_eq + m_in == 0:
            x0 = np.zeros(n)
        else:
            lp = linprog(np.zeros(n), A_ub=-A_in if m_in else None, b_ub=-b_in if m_in else None,
                         A_eq=A_eq if m_eq else None, b_eq=b_eq if m_eq else None,
                         bounds=[(None, None)] * n, method="highs")
            if not lp.success:
                raise ValueError("constraint set is infeasible")
            x0 = lp.x
    x = np.asarray(x0, dtype=float).copy()
    slack = A_in @ x - b_in if m_in else np.zeros(0)
    work: list[int] = []
    for i in np.flatnonzero(np.abs(slack) <= 1e-12):
        cand = np.vstack([A_eq] + [A_in[j] for j in work + [i]])
        if np.linalg.matrix_rank(cand) == cand.shape[0]:
            work.append(int(i))
    it = 0
    lam_in = np.zeros(m_in)
    lam_eq = np.zeros(m_eq)
    for it in range(1, max_iter + 1):
        A_w = np.vstack([A_eq, A_in[work]]) if work else A_eq
        k = A_w.shape[0]
        kkt = np.block([[G, -A_w.T], [A_w, np.zeros((k, k))]])
        rhs = np.concatenate([-(G @ x + g), np.zeros(k)])
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        p, mult = sol[:n], sol[n:]
        if np.max(np.abs(p), initial=0.0) <= tol * max(1.0, np.max(np.abs(x))):
            mult_in = mult[m_eq:]
            if mult_in.size == 0 or mult_in.min() >= -tol:
                lam_eq = mult[:m_eq]
                lam_in = np.zeros(m_in)
                lam_in[work] = mult_in
                break
            work.pop(int(np.argmin(mult_in)))
            continue
        alpha, block = 1.0, None
        if m_in:
            ap = A_in @ p
            for i in range(m_in):
                if i in work or ap[i] >= -1e-15:
                    continue
                step = (b_in[i] - A_in[i] @ x) / ap[i]
                if step < alpha:
                    alpha, block = max(step, 0.0), i
        x = x + alpha * p
        if block is not None:
            work.append(block)
    else:
        raise RuntimeError("active-set iteration did not converge")
    stat = G @ x + g - A_eq.T @ lam_eq - A_in.T @ lam_in
    res = [np.max(np.abs(stat), initial=0.0)]
    if m_eq:
        res.append(np.max(np.abs(A_eq @ x - b_eq)))
    if m_in:
        s = A_in @ x - b_in
        res += [max(0.0, -s.min()), max(0.0, -lam_in.min()), np.max(np.abs(s * lam_in))]
    return x, (lam_eq, lam_in), float(max(res)), it


def zne(inp: ZneInput, constrained: bool = True) -> ZneResult:
    """Jointly constrained linear extrapolation to zero noise.

    Bounds are imposed on every fitted line at ``lambda = 0`` and
    ``lambda = max(lambdas)``, which covers the whole interval because the
    lines are affine.
    """
    lam = inp.lambdas
    y = inp.values
    K, L = y.shape
    if not constrained or not inp.constraints:
        c, m = ols_lines(lam, y)
        return ZneResult(c, m, 0.0, 0, ())
    # objective sum_k sum_i (c_k + m_k lam_i - y_ki)^2
    blk = np.array([[L, lam.sum()], [lam.sum(), (lam ** 2).sum()]])
    G = 2.0 * np.kron(blk, np.eye(K))
    g = -2.0 * np.concatenate([y.sum(axis=1), y @ lam])
    A_eq, b_eq, A_in, b_in = _constraint_rows(inp.constraints, K, float(lam.max()))
    x, (_, lam_in), kkt, it = solve_qp(G, g, A_eq, b_eq, A_in, b_in)
    active = tuple(int(i) for i in np.flatnonzero(lam_in > 0))
    return ZneResult(x[:K], x[K:], kkt, it, active)
