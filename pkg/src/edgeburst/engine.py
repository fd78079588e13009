"""Statevector execution of circuits and the non-Hermitian time-stepping driver.

States are stored as a batch of rows, one statevector per trajectory, and
advanced with the kernels selected in :mod:`edgeburst.kernels`. Mid-circuit
measurements either sample an outcome per row or, for post-selection,
project onto a fixed outcome while accumulating the branch weight.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import kernels
from .circuit import Circuit, fold, lcu_step, trotter_step, twirl
from .encoding import SectorEncoding, build_encoding, int_to_bits
from .lcu import AuxGenerator, LcuSolution, exact_onsite, hermitian_root
from .model import (
    EncodedHamiltonian,
    LadderParams,
    PauliTerm,
    build_many_body,
    build_single_particle,
    encode_hamiltonian,
    hermitian_terms,
    popcount,
)

__all__ = [
    "StateVector",
    "NoiseModel",
    "RunResult",
    "LadderProblem",
    "EvolutionError",
    "build_problem",
    "compile_circuit",
    "run",
    "circuit_unitary",
    "postselected_operator",
    "build_step_circuit",
    "evolve",
    "prepare_maximally_mixed",
    "measure_imaginary_energy",
]

log = logging.getLogger(__name__)

DEFAULT_QUBIT_CAP = 24


class EvolutionError(RuntimeError):
    """Raised when every shot has failed post-selection."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


@dataclass
class StateVector:
    """Final state of an exact-mode run.

    Attributes
    ----------
    amplitudes : ndarray
        Normalized amplitudes over ``2**(n_system + n_ancilla)`` basis states.
    n_system, n_ancilla : int
    clbits : tuple of int
        Classical register after the run (clbit 0 first).
    weight : float
        Probability of the measurement record (1 without measurements).
    """

    amplitudes: np.ndarray
    n_system: int
    n_ancilla: int = 0
    clbits: tuple = ()
    weight: float = 1.0

    @property
    def n_qubits(self) -> int:
        return self.n_system + self.n_ancilla

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True)
class NoiseModel:
    """Stochastic Pauli noise and readout errors.

    Parameters
    ----------
    p1, p2 : float
        Probability of a uniformly random non-identity Pauli after each
        one- and two-qubit gate.
    readout : tuple or sequence of tuples
        ``(p(1|0), p(0|1))`` for every qubit, or one pair per qubit.
    seed : int
    virtual_rz : bool
        Treat RZ as an error-free frame change.
    """

    p1: float = 0.0
    p2: float = 0.0
    readout: tuple = (0.0, 0.0)
    seed: int = 0
    virtual_rz: bool = False

    def __post_init__(self):
        for p in (self.p1, self.p2, *np.ravel(self.readout)):
            if not 0.0 <= p < 1.0:
                raise ValueError("noise probabilities must lie in [0, 1)")

    def readout_pair(self, qubit: int) -> tuple[float, float]:
        r = np.asarray(self.readout, dtype=float)
        if r.ndim == 1:
            return float(r[0]), float(r[1])
        return float(r[qubit, 0]), float(r[qubit, 1])

    @property
    def is_noiseless(self) -> bool:
        return self.p1 == 0 and self.p2 == 0 and not np.any(np.asarray(self.readout))


# -- compilation -------------------------------------------------------------

@dataclass
class _GateBlock:
    ops: np.ndarray
    mask0: np.ndarray
    mask1: np.ndarray
    angles: np.ndarray
    arity: np.ndarray
    is_rz: np.ndarray


@dataclass
class _RotBlock:
    xmask: np.ndarray
    zmask: np.ndarray
    cmask: np.ndarray
    theta: np.ndarray


@dataclass
class Program:
    """Circuit lowered to kernel calls."""

    n_qubits: int
    n_clbits: int
    global_phase: float
    segments: list


def compile_circuit(circuit: Circuit, use_hints: bool = True) -> Program:
    """Lower a circuit into gate blocks, fused rotations and measurements."""
    n = circuit.n_qubits
    bit = [1 << (n - 1 - q) for q in range(n)]
    hints = {h.start: h for h in circuit.hints} if use_hints else {}
    segments: list = []
    gates: list[tuple] = []
    rots: list[tuple] = []

    def flush_gates():
        if gates:
            g = np.array(gates, dtype=object)
            segments.append(_GateBlock(
                ops=np.ascontiguousarray(g[:, 0].astype(np.int32)),
                mask0=np.ascontiguousarray(g[:, 1].astype(np.int64)),
                mask1=np.ascontiguousarray(g[:, 2].astype(np.int64)),
                angles=np.ascontiguousarray(g[:, 3].astype(np.float64)),
                arity=g[:, 4].astype(np.int8),
                is_rz=g[:, 5].astype(bool)))
            gates.clear()

    def flush_rots():
        if rots:
            r = np.array(rots, dtype=object)
            segments.append(_RotBlock(
                np.ascontiguousarray(r[:, 0].astype(np.int64)),
                np.ascontiguousarray(r[:, 1].astype(np.int64)),
                np.ascontiguousarray(r[:, 2].astype(np.int64)),
                np.ascontiguousarray(r[:, 3].astype(np.float64))))
            rots.clear()

    insts = circuit.instructions
    pos = 0
    while pos < len(insts):
        hint = hints.get(pos)
        if hint is not None and hint.stop > pos:
            flush_gates()
            rots.extend(hint.rotations)
            pos = hint.stop
            continue
        inst = insts[pos]
        pos += 1
        if inst.kind == "barrier":
            continue
        if inst.kind == "gate":
            flush_rots()
            m0 = bit[inst.qubits[0]]
            m1 = bit[inst.qubits[1]] if len(inst.qubits) == 2 else 0
            gates.append((kernels.OPCODES[inst.name], m0, m1, inst.angle or 0.0,
                          len(inst.qubits), inst.name == "RZ"))
            continue
        flush_gates()
        flush_rots()
        if inst.kind == "measure":
            segments.append(("measure", bit[inst.qubits[0]], inst.qubits[0], inst.clbit))
        elif inst.kind == "reset_conditional":
            segments.append(("creset", bit[inst.qubits[0]], inst.condition[0], inst.condition[1]))
        else:
            raise ValueError(f"unknown instruction kind {inst.kind!r}")
    flush_gates()
    flush_rots()
    return Program(n, circuit.n_clbits, circuit.global_phase, segments)


# -- noise sampling ------------------------------------------------------------

def _bernoulli_positions(rng: np.random.Generator, p: float, total: int) -> np.ndarray:
    """Sorted indices of successes among ``total`` Bernoulli(p) trials."""
    if p <= 0 or total <= 0:
        return np.empty(0, dtype=np.int64)
    chunks = []
    last = -1
    while True:
        n = int(total * p * 1.2 + 10 * math.sqrt(total * p + 1) + 16)
        pos = last + np.cumsum(rng.geometric(p, size=n))
        chunks.append(pos[pos < total])
        if pos[-1] >= total:
            break
        last = int(pos[-1])
    return np.concatenate(chunks)


_PAULI_XZ = ((0, 0), (1, 0), (1, 1), (0, 1))  # I, X, Y, Z


def _sample_gate_events(block: _GateBlock, rows: int, noise: NoiseModel,
                        rng: np.random.Generator):
    """Sample Pauli error events for a gate block, in CSR layout."""
    n_gates = len(block.ops)
    prob = np.where(block.arity == 2, noise.p2, noise.p1)
    if noise.virtual_rz:
        prob = np.where(block.is_rz, 0.0, prob)
    ev_gate, ev_row = [], []
    for p in np.unique(prob):
        if p <= 0:
            continue
        gidx = np.flatnonzero(prob == p)
        flat = _bernoulli_positions(rng, float(p), len(gidx) * rows)
        ev_gate.append(gidx[flat // rows])
        ev_row.append(flat % rows)
    if not ev_gate:
        return None
    g = np.concatenate(ev_gate)
    r = np.concatenate(ev_row)
    order = np.lexsort((r, g))
    g, r = g[order], r[order]
    two = block.arity[g] == 2
    code = np.where(two, rng.integers(1, 16, size=g.size), rng.integers(1, 4, size=g.size))
    c0 = np.where(two, code // 4, code)
    c1 = np.where(two, code % 4, 0)
    xz = np.array(_PAULI_XZ)
    m0, m1 = block.mask0[g], block.mask1[g]
    xm = xz[c0, 0] * m0 + xz[c1, 0] * m1
    zm = xz[c0, 1] * m0 + xz[c1, 1] * m1
    ptr = np.zeros(n_gates + 1, dtype=np.int64)
    np.cumsum(np.bincount(g, minlength=n_gates), out=ptr[1:])
    return (ptr, np.ascontiguousarray(r.astype(np.int32)),
            np.ascontiguousarray(xm.astype(np.int64)), np.ascontiguousarray(zm.astype(np.int64)))


# -- execution -----------------------------------------------------------------

def _bit_view(psi: np.ndarray, mask: int) -> np.ndarray:
    rows, dim = psi.shape
    return psi.reshape(rows, dim // (2 * mask), 2, mask)


def _execute(psi: np.ndarray, program: Program, clbits: np.ndarray, rng: np.random.Generator,
             noise: NoiseModel | None = None, postselect: int | None = None,
             log_weight: np.ndarray | None = None, renormalize: bool = True,
             backend=None) -> None:
    """Run ``program`` in place on every row of ``psi``.

    With ``postselect`` set, each measurement projects onto that outcome and
    ``log_weight`` accumulates the log-probability of the branch.
    """
    kb = backend or kernels.backend
    rows = psi.shape[0]
    noisy = noise is not None and not noise.is_noiseless
    for seg in program.segments:
        if isinstance(seg, _GateBlock):
            events = _sample_gate_events(seg, rows, noise, rng) if noisy else None
            if events is None:
                kb.apply_program(psi, seg.ops, seg.mask0, seg.mask1, seg.angles)
            else:
                kb.apply_program(psi, seg.ops, seg.mask0, seg.mask1, seg.angles, *events)
        elif isinstance(seg, _RotBlock):
            kb.pauli_rotations(psi, seg.xmask, seg.zmask, seg.cmask, seg.theta)
        elif seg[0] == "measure":
            _, mask, qubit, cb = seg
            view = _bit_view(psi, mask)
            p_one = np.einsum("rhl,rhl->r", view[:, :, 1, :], view[:, :, 1, :].conj()).real
            total = np.einsum("rd,rd->r", psi, psi.conj()).real
            if postselect is None:
                outcome = (rng.random(rows) * total < p_one).astype(np.int8)
            else:
                outcome = np.full(rows, postselect, dtype=np.int8)
            keep = np.where(outcome == 1, p_one, total - p_one)
            view[outcome == 1, :, 0, :] = 0.0
            view[outcome == 0, :, 1, :] = 0.0
            if log_weight is not None:
                with np.errstate(divide="ignore"):
                    log_weight += np.log(keep) - np.log(total)
            if renormalize:
                scale = np.zeros(rows)
                ok = keep > 0
                scale[ok] = 1.0 / np.sqrt(keep[ok])
                psi *= scale[:, None]
            recorded = outcome.copy()
            if noise is not None:
                p10, p01 = noise.readout_pair(qubit)
                if p10 or p01:
                    flip_p = np.where(outcome == 1, p01, p10)
                    recorded ^= (rng.random(rows) < flip_p).astype(np.int8)
            clbits[:, cb] = recorded
        elif seg[0] == "creset":
            _, mask, cb, value = seg
            hit = np.flatnonzero(clbits[:, cb] == value).astype(np.int32)
            if hit.size:
                kb.apply_row_paulis(psi, hit, np.full(hit.size, mask, dtype=np.int64),
                                    np.zeros(hit.size, dtype=np.int64))
                if noisy and noise.p1 > 0:
                    err = hit[rng.random(hit.size) < noise.p1]
                    if err.size:
                        code = rng.integers(1, 4, size=err.size)
                        xz = np.array(_PAULI_XZ)
                        kb.apply_row_paulis(psi, err, (xz[code, 0] * mask).astype(np.int64),
                                            (xz[code, 1] * mask).astype(np.int64))
        else:  # pragma: no cover - compile_circuit emits nothing else
            raise ValueError(f"unknown segment {seg!r}")


def _check_cap(n_qubits: int, max_qubits: int) -> None:
    if n_qubits > max_qubits:
        raise MemoryError(f"{n_qubits} qubits exceed the cap of {max_qubits}")


def run(circuit: Circuit, mode: str = "exact", shots: int | None = None,
        noise: NoiseModel | None = None, rng: np.random.Generator | int | None = None,
        initial: np.ndarray | int | None = None, postselect: int | None = None,
        use_hints: bool = True, max_qubits: int = DEFAULT_QUBIT_CAP, backend=None):
    """Execute a circuit.

    Parameters
    ----------
    circuit : Circuit
    mode : {'exact', 'shots'}
        ``exact`` evolves one statevector, drawing measurement outcomes from
        the Born rule (or projecting onto ``postselect``); ``shots`` samples
        ``shots`` independent trajectories and returns outcome counts.
    noise : NoiseModel, optional
    rng : Generator or int, optional
    initial : ndarray or int, optional
        Initial statevector or basis-state index (default ``|0...0>``).

    Returns
    -------
    StateVector or collections.Counter
        Final state in exact mode; counts of classical-register strings
        (clbit 0 first) in shots mode.
    """
    _check_cap(circuit.n_qubits, max_qubits)
    rng = np.random.default_rng(rng)
    circuit.validate()
    hints_ok = use_hints and (noise is None or noise.p1 == 0 and noise.p2 == 0)
    program = compile_circuit(circuit, use_hints=hints_ok)
    dim = 1 << circuit.n_qubits
    if mode == "exact":
        rows = 1
    elif mode == "shots":
        if not shots or shots < 1:
            raise ValueError("shots mode needs a positive shot count")
        rows = int(shots)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    psi = np.zeros((rows, dim), dtype=complex)
    if initial is None:
        psi[:, 0] = 1.0
    elif np.ndim(initial) == 0:
        psi[:, int(initial)] = 1.0
    else:
        vec = np.asarray(initial, dtype=complex)
        psi[:] = vec / np.linalg.norm(vec)
    clbits = np.zeros((rows, max(circuit.n_clbits, 0)), dtype=np.int8)
    logw = np.zeros(rows)
    _execute(psi, program, clbits, rng, noise, postselect, logw, backend=backend)
    if mode == "exact":
        amps = psi[0] * np.exp(1j * program.global_phase)
        return StateVector(amps, circuit.n_qubits, 0, tuple(int(b) for b in clbits[0]),
                           float(np.exp(logw[0])))
    keys = ["".join("01"[b] for b in row) for row in clbits]
    return Counter(keys)


def circuit_unitary(circuit: Circuit, use_hints: bool = True, backend=None) -> np.ndarray:
    """Dense unitary of a measurement-free circuit, global phase included."""
    if not circuit.is_unitary():
        raise ValueError("circuit contains non-unitary instructions")
    program = compile_circuit(circuit, use_hints=use_hints)
    dim = 1 << circuit.n_qubits
    psi = np.eye(dim, dtype=complex)
    _execute(psi, program, np.zeros((dim, 0), dtype=np.int8), np.random.default_rng(0),
             backend=backend)
    return psi.T * np.exp(1j * program.global_phase)


def postselected_operator(circuit: Circuit, n_system: int, outcome: int = 0,
                          use_hints: bool = True, backend=None) -> np.ndarray:
    """Operator on the system register after projecting all measurements.

    Qubits ``n_system..n_qubits-1`` are ancillas prepared in ``|0>``; every
    measurement is projected onto ``outcome``. The ancillas must return to
    ``|0>`` (conditional resets included) for the result to be well defined.
    """
    n_anc = circuit.n_qubits - n_system
    program = compile_circuit(circuit, use_hints=use_hints)
    d_sys = 1 << n_system
    psi = np.zeros((d_sys, d_sys << n_anc), dtype=complex)
    psi[np.arange(d_sys), np.arange(d_sys) << n_anc] = 1.0
    clbits = np.zeros((d_sys, circuit.n_clbits), dtype=np.int8)
    _execute(psi, program, clbits, np.random.default_rng(0), postselect=outcome,
             renormalize=False, backend=backend)
    out = psi.reshape(d_sys, d_sys, 1 << n_anc)
    leak = np.max(np.abs(out[:, :, 1:]), initial=0.0)
    if leak > 1e-9:
        raise ValueError(f"ancilla not returned to |0> (leak {leak:.2e})")
    return out[:, :, 0].T * np.exp(1j * program.global_phase)


# -- problem setup -------------------------------------------------------------

@dataclass
class LadderProblem:
    """A ladder model restricted to a particle sector and encoded on qubits."""

    params: LadderParams
    p: int
    encoding: SectorEncoding
    hamiltonian: EncodedHamiltonian

    @property
    def n_system(self) -> int:
        return self.encoding.n_qubits

    @property
    def n_sites(self) -> int:
        return 2 * self.params.N

    @property
    def b_sites(self) -> np.ndarray:
        return np.arange(1, self.n_sites, 2)


def build_problem(params: LadderParams, p: int = 1, tol: float = 1e-12) -> LadderProblem:
    """Build the sector Hamiltonian and its Pauli expansions."""
    enc = build_encoding(params.N, p)
    H = build_single_particle(params) if p == 1 else build_many_body(params, p, enc)
    return LadderProblem(params, p, enc, encode_hamiltonian(H, enc.n_qubits, tol))


def _aux_terms(matrix: np.ndarray, n_qubits: int) -> list[PauliTerm]:
    return hermitian_terms(matrix, n_qubits)


def build_step_circuit(problem: LadderProblem, dt: float,
                       lcu: str | LcuSolution = "exact_onsite") -> Circuit:
    """One time step: Trotterized Hermitian part, then the LCU loss step.

    ``lcu`` is ``'exact_onsite'``, ``'exact_onsite_literal'`` or a
    single-pair :class:`LcuSolution` with ``A0 = 0``. The ancilla is qubit
    ``n_system`` and its outcome goes to classical bit 0.
    """
    n = problem.n_system
    step = Circuit(n + 1, 1)
    step.compose(trotter_step(problem.hamiltonian.hermitian, dt, n_qubits=n),
                 qubits=list(range(n)))
    if isinstance(lcu, str):
        if lcu not in ("exact_onsite", "exact_onsite_literal"):
            raise ValueError(f"unknown LCU mode {lcu!r}")
        aux, eta = exact_onsite(problem.params.gamma, dt, problem.encoding,
                                literal=lcu.endswith("literal"))
        if eta != 1.0:
            raise ValueError("only forward time steps are supported")
        terms = _aux_terms(aux.matrix, n)
        tau, weights = 1.0, (0.5, 0.5)
    else:
        if lcu.A0 != 0 or len(lcu.pairs) != 1:
            raise ValueError("circuits support a single pair without identity branch")
        aux = hermitian_root(problem.hamiltonian.split.antihermitian_generator)
        terms = _aux_terms(aux.matrix, n)
        tau = lcu.pairs[0][1]
        weights = (0.5, 0.5)
    plus = trotter_step(terms, -tau, n_qubits=n)
    minus = trotter_step(terms, tau, n_qubits=n)
    step.compose(lcu_step(plus, minus, weights, ancilla=n, clbit=0))
    return step


# -- initial states ------------------------------------------------------------

def prepare_maximally_mixed(sector: SectorEncoding | int, mode: str = "exact",
                            shots: int | None = None,
                            rng: np.random.Generator | int | None = None) -> np.ndarray:
    """Basis-state trajectories representing the maximally mixed state.

    In exact mode returns every physical basis index (equal weights). In
    shots mode draws ``shots`` indices uniformly; drawing over the full
    register and discarding unphysical outcomes gives the same ensemble, as
    unphysical states never evolve into physical ones.
    """
    if isinstance(sector, SectorEncoding):
        D = sector.D
    else:
        D = 1 << int(sector)
    if mode == "exact":
        return np.arange(D)
    if not shots:
        raise ValueError("shots mode needs a shot count")
    return np.random.default_rng(rng).integers(0, D, size=shots)


def measure_imaginary_energy(data, loss_terms: Sequence[PauliTerm],
                             groups: Sequence[Sequence[PauliTerm]] | None = None,
                             weights: np.ndarray | None = None) -> float:
    """Imaginary energy ``-<H_A>`` from a state, an ensemble or counts.

    Parameters
    ----------
    data : StateVector, ndarray or mapping
        A statevector, a ``(rows, dim)`` ensemble of statevectors (mixed with
        ``weights``), or measured counts. Counts are either one histogram of
        big-endian system bitstrings (valid when every term is Z-type) or a
        mapping from group index to the histogram measured after rotating
        that group into the computational basis.
    loss_terms : sequence of PauliTerm
    groups : list of term lists, optional
        Commuting groups; required for counts of non-diagonal terms.
    """
    terms = list(loss_terms)
    if isinstance(data, Mapping):
        if groups is None:
            if any(ch not in "IZ" for t in terms for ch in t.string):
                raise ValueError("non-diagonal terms need per-group rotated counts")
            groups, per_group = [terms], {0: data}
        else:
            per_group = data
            if set(per_group) != set(range(len(groups))):
                raise ValueError("counts do not cover every measurement group")
        total = 0.0
        for gi, group in enumerate(groups):
            counts = per_group[gi]
            shots = sum(counts.values())
            if shots == 0:
                raise ValueError("empty counts")
            for t in group:
                parity = sum(c * (-1) ** sum(int(k[q]) for q in t.support)
                             for k, c in counts.items())
                total += float(np.real(t.coefficient)) * parity / shots
        return -total
    if isinstance(data, StateVector):
        psi = data.amplitudes[None, :]
        w = np.ones(1)
    else:
        psi = np.atleast_2d(np.asarray(data, dtype=complex))
        w = np.ones(psi.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    n = terms[0].n_qubits if terms else int(np.log2(psi.shape[1]))
    if psi.shape[1] != 1 << n:
        # system register embedded in a larger one: marginalize trailing qubits
        extra = int(np.log2(psi.shape[1])) - n
        probs_only = True
    else:
        extra = 0
        probs_only = False
    idx = np.arange(1 << n)
    norms = np.einsum("rd,rd->r", psi, psi.conj()).real
    total = 0.0
    for t in terms:
        xm, zm = t.masks()
        if probs_only and xm:
            raise ValueError("non-diagonal term on an ancilla-extended state")
        if extra:
            prob = (np.abs(psi) ** 2).reshape(psi.shape[0], 1 << n, 1 << extra).sum(axis=2)
            sign = 1 - 2 * (popcount(idx & zm) & 1)
            ev = prob @ sign
        else:
            ny = bin(xm & zm).count("1")
            sign = 1 - 2 * (popcount((idx ^ xm) & zm) & 1)
            ppsi = (1j) ** ny * sign[None, :] * psi[:, idx ^ xm]
            ev = np.einsum("rd,rd->r", psi.conj(), ppsi).real
        total += float(np.real(t.coefficient)) * float(w @ ev)
    return -total / float(w @ norms)


# -- time stepping -------------------------------------------------------------

@dataclass
class RunResult:
    """Time series produced by :func:`evolve`.

    Attributes
    ----------
    time_grid : ndarray, shape (T,)
    occupancies : ndarray, shape (T, 2N)
        Site occupations of the normalized (post-selected) state.
    success_probability : ndarray, shape (T,)
        Cumulative ancilla success probability ``S_t``.
    log_success : ndarray, shape (T,)
        ``log S_t`` (finite even where ``S_t`` underflows).
    imag_energy : ndarray, shape (T,)
        ``-<H_A>`` of the normalized state.
    counts : list of dict or None
        Shots mode: per recorded time, histogram of strings made of the
        recorded ancilla bits of steps ``1..j`` followed by the system bits.
    discarded_shots : ndarray, shape (T,)
        Post-selected shots with an unphysical system outcome.
    kept_shots : ndarray, shape (T,)
        Post-selected shots entering the occupancy tallies.
    meta : dict
    """

    time_grid: np.ndarray
    occupancies: np.ndarray
    success_probability: np.ndarray
    log_success: np.ndarray
    imag_energy: np.ndarray
    counts: list | None
    discarded_shots: np.ndarray
    kept_shots: np.ndarray
    meta: dict = field(default_factory=dict)

    def b_occupancies(self) -> np.ndarray:
        return self.occupancies[:, 1::2]


def _record_steps(steps: int, record_every: int) -> np.ndarray:
    marks = list(range(0, steps + 1, record_every))
    if marks[-1] != steps:
        marks.append(steps)
    return np.array(marks)


def _initial_indices(problem: LadderProblem, initial) -> tuple[np.ndarray, bool]:
    if isinstance(initial, str):
        if initial != "gibbs":
            raise ValueError(f"unknown initial state {initial!r}")
        return np.arange(problem.encoding.D), True
    sites = [int(s) for s in np.atleast_1d(initial)]
    if len(sites) != problem.p or len(set(sites)) != len(sites):
        raise ValueError(f"initial state needs {problem.p} distinct sites")
    if any(not 0 <= s < problem.n_sites for s in sites):
        raise ValueError("initial site out of range")
    return np.array([problem.encoding.rank(sites)]), False


def _config_hash(meta: dict) -> str:
    blob = json.dumps(meta, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def evolve(problem: LadderProblem, initial, t_max: float, steps: int, *,
           lcu: str | LcuSolution = "exact_onsite", mode: str = "exact",
           shots: int = 1000, noise: NoiseModel | None = None, seed: int = 0,
           record_every: int = 1, step_transform: Callable | None = None,
           keep_counts: bool = True, use_hints: bool = True,
           max_qubits: int = DEFAULT_QUBIT_CAP, unphysical_warn: float = 0.05,
           backend=None) -> RunResult:
    """Repeat (Trotter step, LCU loss step) ``steps`` times.

    Parameters
    ----------
    problem : LadderProblem
    initial : sequence of int or 'gibbs'
        Occupied sites of the initial product state, or the maximally mixed
        state of the sector.
    t_max : float
    steps : int
        Number of time steps ``m``; ``dt = t_max / m``.
    lcu : str or LcuSolution
        See :func:`build_step_circuit`.
    mode : {'exact', 'shots'}
        Exact mode projects the ancilla onto success deterministically and
        reuses the post-selected step operator; shots mode runs ``shots``
        sampled trajectories with mid-circuit measurement.
    noise : NoiseModel, optional
        Shots mode only.
    record_every : int
        Record occupancies every this many steps (and at the last step).
    step_transform : callable, optional
        ``f(circuit, rng) -> circuit`` applied to every step circuit in
        shots mode (gate folding, twirling), with a fresh draw per step.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    n = problem.n_system
    _check_cap(n + 1, max_qubits)
    dt = t_max / steps
    marks = _record_steps(steps, record_every)
    times = marks * dt
    idx0, ensemble = _initial_indices(problem, initial)
    step_circ = build_step_circuit(problem, dt, lcu)
    occ_table = problem.encoding.occupations().astype(float)
    D = problem.encoding.D
    loss_terms = problem.hamiltonian.loss
    meta = {
        "N": problem.params.N, "v1": problem.params.v1, "v2": problem.params.v2,
        "gamma": problem.params.gamma, "interactions": problem.params.interactions,
        "boundary": problem.params.boundary, "p": problem.p,
        "initial": "gibbs" if ensemble else [int(s) for s in np.atleast_1d(initial)],
        "t_max": t_max, "steps": steps, "lcu": lcu if isinstance(lcu, str) else repr(lcu),
        "mode": mode, "shots": shots if mode == "shots" else None, "seed": seed,
        "record_every": record_every,
        "noise": None if noise is None else repr(noise),
        "backend": kernels.BACKEND if backend is None else backend.__name__,
    }
    meta["config_hash"] = _config_hash(meta)
    T = len(marks)
    occ = np.zeros((T, problem.n_sites))
    log_s = np.zeros(T)
    imag = np.zeros(T)
    discarded = np.zeros(T, dtype=np.int64)
    kept = np.zeros(T, dtype=np.int64)

    if mode == "exact":
        if noise is not None and not noise.is_noiseless:
            raise ValueError("noise requires shots mode")
        K = postselected_operator(step_circ, n, 0, use_hints=use_hints, backend=backend)
        d = 1 << n
        states = np.zeros((d, len(idx0)), dtype=complex)
        states[idx0, np.arange(len(idx0))] = 1.0
        logw = np.zeros(len(idx0))
        prev = 0
        powers: dict[int, np.ndarray] = {}
        for j, mark in enumerate(marks):
            gap = int(mark - prev)
            if gap:
                if gap not in powers:
                    powers[gap] = np.linalg.matrix_power(K, gap)
                states = powers[gap] @ states
                norms = np.einsum("dk,dk->k", states, states.conj()).real
                if np.any(norms <= 0):
                    raise EvolutionError("state annihilated by post-selection", int(mark))
                logw += np.log(norms)
                states /= np.sqrt(norms)[None, :]
            prev = int(mark)
            # ensemble weights are surviving probabilities of each trajectory
            wts = np.exp(logw - logw.max())
            probs = (np.abs(states) ** 2) * wts[None, :]
            phys = probs[:D].sum(axis=1)
            total = phys.sum()
            occ[j] = phys @ occ_table / total
            log_s[j] = logw.max() + math.log(wts.sum() / len(idx0))
            imag[j] = measure_imaginary_energy(states.T, loss_terms, weights=wts)
        result_counts = None
    elif mode == "shots":
        rng = np.random.default_rng(seed)
        rows = int(shots)
        if ensemble:
            starts = prepare_maximally_mixed(problem.encoding, "shots", rows, rng)
        else:
            starts = np.full(rows, idx0[0])
        dim = 1 << (n + 1)
        psi = np.zeros((rows, dim), dtype=complex)
        psi[np.arange(rows), starts << 1] = 1.0
        hints_ok = use_hints and (noise is None or (noise.p1 == 0 and noise.p2 == 0))
        base_program = compile_circuit(step_circ, use_hints=hints_ok)
        record = np.zeros((rows, steps), dtype=np.int8)
        alive = np.ones(rows, dtype=bool)
        clb = np.zeros((rows, 1), dtype=np.int8)
        result_counts = [] if keep_counts else None
        sys_chars = np.array([[ord(ch) for ch in int_to_bits(v, n)] for v in range(1 << n)],
                             dtype=np.uint8)
        mark_set = {int(m): j for j, m in enumerate(marks)}
        for s in range(steps + 1):
            if s > 0:
                if step_transform is not None:
                    prog = compile_circuit(step_transform(step_circ, rng), use_hints=False)
                else:
                    prog = base_program
                _execute(psi, prog, clb, rng, noise, backend=backend)
                record[:, s - 1] = clb[:, 0]
                alive &= clb[:, 0] == 0
                if not alive.any():
                    raise EvolutionError(f"all shots failed post-selection by step {s}", s)
            if s not in mark_set:
                continue
            j = mark_set[s]
            # snapshot readout of the system register, ancilla marginalized
            probs = (np.abs(psi) ** 2).reshape(rows, 1 << n, 2).sum(axis=2)
            cdf = np.cumsum(probs, axis=1)
            u = rng.random(rows) * cdf[:, -1]
            outcome = np.minimum((cdf < u[:, None]).sum(axis=1), (1 << n) - 1)
            if noise is not None:
                for q in range(n):
                    p10, p01 = noise.readout_pair(q)
                    if p10 or p01:
                        m = 1 << (n - 1 - q)
                        bitval = (outcome & m) != 0
                        flip = rng.random(rows) < np.where(bitval, p01, p10)
                        outcome = np.where(flip, outcome ^ m, outcome)
            ok = alive & (outcome < D)
            discarded[j] = int(np.sum(alive & (outcome >= D)))
            kept[j] = int(ok.sum())
            log_s[j] = math.log(alive.mean())
            if kept[j]:
                tally = np.bincount(outcome[ok], minlength=D)[:D]
                occ[j] = tally @ occ_table / kept[j]
                imag[j] = -float(tally @ np.diag(problem.hamiltonian.split.antihermitian_generator).real) / kept[j]
            else:
                occ[j] = np.nan
                imag[j] = np.nan
            if alive.any() and discarded[j] > unphysical_warn * max(int(alive.sum()), 1):
                warnings.warn(f"unphysical outcome fraction {discarded[j] / alive.sum():.3f} "
                              f"at step {s}", RuntimeWarning, stacklevel=2)
            if result_counts is not None:
                chars = np.empty((rows, s + n), dtype=np.uint8)
                chars[:, :s] = record[:, :s] + ord("0")
                chars[:, s:] = sys_chars[outcome]
                keys, cnt = np.unique(chars.view(f"S{s + n}").ravel(), return_counts=True)
                result_counts.append({k.decode(): int(c) for k, c in zip(keys, cnt)})
    else:
        raise ValueError(f"unknown mode {mode!r}")

    return RunResult(
        time_grid=times, occupancies=occ, success_probability=np.exp(log_s),
        log_success=log_s, imag_energy=imag, counts=result_counts,
        discarded_shots=discarded, kept_shots=kept, meta=meta)
