"""Interacting non-Hermitian ladder Hamiltonians and their Pauli decompositions.

Each unit cell ``x`` hosts an ``a`` site and a lossy ``b`` site. Hopping
amplitudes are ``v1`` inside a cell and ``v2/2`` (with the chiral phases
below) between neighbouring cells; the ``b`` sites carry the on-site loss
``-i*gamma``. Particles are hardcore bosons with optional range-``r``
density-density interactions ``U_r`` along the flattened site order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .encoding import SectorEncoding

__all__ = [
    "LadderParams",
    "PauliTerm",
    "HamiltonianSplit",
    "EncodedHamiltonian",
    "GapResult",
    "build_single_particle",
    "build_many_body",
    "bloch",
    "split",
    "embed",
    "pauli_decompose",
    "hermitian_terms",
    "pauli_matrix",
    "terms_to_matrix",
    "dissipative_gap",
    "encode_hamiltonian",
]

_PAULI_CHARS = "IXZY"  # index = xbit + 2*zbit


def popcount(values) -> np.ndarray:
    """Elementwise number of set bits of a nonnegative integer array."""
    v = np.asarray(values, dtype=np.uint64).copy()
    v = v - ((v >> np.uint64(1)) & np.uint64(0x5555555555555555))
    v = (v & np.uint64(0x3333333333333333)) + ((v >> np.uint64(2)) & np.uint64(0x3333333333333333))
    v = (v + (v >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return ((v * np.uint64(0x0101010101010101)) >> np.uint64(56)).astype(np.int64)


@dataclass(frozen=True)
class LadderParams:
    """Physical parameters of the ladder.

    Parameters
    ----------
    N : int
        Number of unit cells.
    v1, v2 : float
        Intra- and inter-cell hopping amplitudes.
    gamma : float
        Loss rate on the ``b`` sublattice.
    interactions : mapping of int to float, optional
        Range ``r >= 1`` to strength ``U_r``; missing ranges are zero.
    boundary : {'open', 'periodic'}
    """

    N: int
    v1: float
    v2: float
    gamma: float
    interactions: Mapping[int, float] = field(default_factory=dict)
    boundary: str = "open"
    hardcore: bool = True

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.v1 < 0 or self.v2 < 0:
            raise ValueError("hopping amplitudes must be nonnegative")
        if self.boundary not in ("open", "periodic"):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if not self.hardcore:
            raise ValueError("only hardcore bosons are supported")
        inter = {}
        for r, u in dict(self.interactions).items():
            if int(r) != r or r < 1:
                raise ValueError(f"interaction range must be an integer >= 1, got {r}")
            if not np.isfinite(u):
                raise ValueError(f"interaction U_{r} is not finite")
            if u != 0:
                inter[int(r)] = float(u)
        object.__setattr__(self, "interactions", dict(sorted(inter.items())))

    def with_(self, **changes) -> "LadderParams":
        """Copy with some fields replaced."""
        kw = dict(N=self.N, v1=self.v1, v2=self.v2, gamma=self.gamma,
                  interactions=self.interactions, boundary=self.boundary)
        kw.update(changes)
        return LadderParams(**kw)


def _hopping_list(params: LadderParams) -> list[tuple[int, int, complex]]:
    """Off-diagonal single-particle amplitudes as ``(dest, src, value)``."""
    N, v1, v2 = params.N, params.v1, params.v2
    hops = []
    for x in range(N):
        a, b = 2 * x, 2 * x + 1
        if v1:
            hops += [(a, b, v1), (b, a, v1)]
        if x + 1 < N or params.boundary == "periodic":
            if N == 1 or not v2:
                continue
            a2, b2 = (2 * (x + 1)) % (2 * N), (2 * (x + 1) + 1) % (2 * N)
            h = 0.5 * v2
            hops += [
                (a2, b, h), (b, a2, h),
                (b2, a, h), (a, b2, h),
                (a2, a, 1j * h), (a, a2, -1j * h),
                (b2, b, -1j * h), (b, b2, 1j * h),
            ]
    return hops


def build_single_particle(params: LadderParams) -> np.ndarray:
    """Real-space single-particle Hamiltonian, shape ``(2N, 2N)``.

    Entry ``(z', z)`` is the amplitude of the transition ``z -> z'``.

    Examples
    --------
    >>> build_single_particle(LadderParams(1, 1.0, 0.0, 2.0))
    array([[0.+0.j, 1.+0.j],
           [1.+0.j, 0.-2.j]])
    """
    n = 2 * params.N
    H = np.zeros((n, n), dtype=complex)
    for dst, src, amp in _hopping_list(params):
        H[dst, src] += amp
    H[np.arange(1, n, 2), np.arange(1, n, 2)] = -1j * params.gamma
    return H


def _pair_distance(i: int, j: int, n_sites: int, periodic: bool) -> int:
    d = abs(i - j)
    return min(d, n_sites - d) if periodic else d


def build_many_body(params: LadderParams, p: int, enc: SectorEncoding) -> np.ndarray:
    """Hardcore-boson Hamiltonian in the ``p``-particle sector, shape ``(D, D)``.

    Hops move one particle along a ladder bond with the single-particle
    amplitudes and are blocked by occupied destinations. The diagonal holds
    ``sum_r U_r * (pairs at flattened distance r) - i*gamma * (b occupancy)``.
    """
    if not 1 <= p <= 2 * params.N:
        raise ValueError(f"particle number {p} outside [1, {2 * params.N}]")
    if enc.N != params.N or enc.p != p:
        raise ValueError("encoding does not match (N, p)")
    n_sites = 2 * params.N
    periodic = params.boundary == "periodic"
    hops = _hopping_list(params)
    H = np.zeros((enc.D, enc.D), dtype=complex)
    for col, conf in enumerate(enc.configs):
        occ = set(int(s) for s in conf)
        diag = -1j * params.gamma * sum(1 for s in occ if s % 2 == 1)
        for u_i in range(p):
            for u_j in range(u_i + 1, p):
                r = _pair_distance(int(conf[u_i]), int(conf[u_j]), n_sites, periodic)
                diag += params.interactions.get(r, 0.0)
        H[col, col] = diag
        for dst, src, amp in hops:
            if src in occ and dst not in occ:
                new = (occ - {src}) | {dst}
                H[enc.rank(new), col] += amp
    return H


def bloch(params: LadderParams, k: float) -> tuple[np.ndarray, np.ndarray]:
    """Two-band Bloch Hamiltonian at momentum ``k`` and its eigenvalues.

    Returns
    -------
    h : ndarray, shape (2, 2)
        ``(v1 + v2 cos k) sx + (v2 sin k + i gamma/2) sz - i gamma/2``.
    energies : ndarray, shape (2,)
        ``-i gamma/2 -+ sqrt(hx^2 + hz^2)``, lower-imaginary band first.
    """
    hx = params.v1 + params.v2 * np.cos(k)
    hz = params.v2 * np.sin(k) + 0.5j * params.gamma
    shift = -0.5j * params.gamma
    h = np.array([[hz + shift, hx], [hx, -hz + shift]], dtype=complex)
    root = np.sqrt(complex(hx * hx + hz * hz))
    e = np.array([shift - root, shift + root])
    order = np.argsort(e.imag, kind="stable")
    return h, e[order]


@dataclass(frozen=True)
class HamiltonianSplit:
    """``H = hermitian_part - 1j * antihermitian_generator``."""

    hermitian_part: np.ndarray
    antihermitian_generator: np.ndarray

    @property
    def dimension(self) -> int:
        return self.hermitian_part.shape[0]

    def reconstruct(self) -> np.ndarray:
        return self.hermitian_part - 1j * self.antihermitian_generator


def split(H: np.ndarray) -> HamiltonianSplit:
    """Split ``H`` into its Hermitian part and Hermitian loss generator."""
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("H must be square")
    Hd = H.conj().T
    return HamiltonianSplit(0.5 * (H + Hd), 0.5j * (H - Hd))


@dataclass(frozen=True)
class PauliTerm:
    """A weighted Pauli word; ``string[q]`` acts on qubit ``q``."""

    coefficient: complex
    string: str

    def __post_init__(self):
        if any(c not in "IXYZ" for c in self.string):
            raise ValueError(f"invalid Pauli word {self.string!r}")

    @property
    def n_qubits(self) -> int:
        return len(self.string)

    def masks(self) -> tuple[int, int]:
        """Bit masks ``(x, z)`` with qubit ``q`` at bit ``n - 1 - q``."""
        n = len(self.string)
        xm = zm = 0
        for q, c in enumerate(self.string):
            bit = 1 << (n - 1 - q)
            if c in "XY":
                xm |= bit
            if c in "ZY":
                zm |= bit
        return xm, zm

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(q for q, c in enumerate(self.string) if c != "I")

    def is_identity(self) -> bool:
        return set(self.string) <= {"I"}


def _masks_to_word(xm: int, zm: int, n: int) -> str:
    return "".join(
        _PAULI_CHARS[((xm >> (n - 1 - q)) & 1) + 2 * ((zm >> (n - 1 - q)) & 1)]
        for q in range(n)
    )


def embed(M: np.ndarray, n_qubits: int) -> np.ndarray:
    """Place ``M`` in the top-left block of a zero ``2^n x 2^n`` matrix."""
    M = np.asarray(M, dtype=complex)
    d = 1 << n_qubits
    if M.shape[0] > d:
        raise ValueError(f"matrix of size {M.shape[0]} does not fit {n_qubits} qubits")
    out = np.zeros((d, d), dtype=complex)
    out[: M.shape[0], : M.shape[1]] = M
    return out


def _walsh_hadamard(a: np.ndarray) -> np.ndarray:
    """Unnormalized Walsh-Hadamard transform along the last axis."""
    a = a.copy()
    d = a.shape[-1]
    h = 1
    while h < d:
        v = a.reshape(a.shape[:-1] + (d // (2 * h), 2, h))
        x, y = v[..., 0, :].copy(), v[..., 1, :]
        v[..., 0, :] += y
        v[..., 1, :] = x - y
        h *= 2
    return a


def pauli_decompose(M: np.ndarray, n_qubits: int | None = None,
                    tol: float = 1e-12) -> list[PauliTerm]:
    """Expand ``M`` in the Hermitian Pauli basis.

    ``M`` is zero-padded to ``2^n`` first. The coefficient of word ``P`` is
    ``trace(P M) / 2^n``; terms with modulus at most ``tol`` are dropped.
    Coefficients are complex in general and real for Hermitian ``M``.
    """
    M = np.asarray(M, dtype=complex)
    if n_qubits is None:
        d0 = M.shape[0]
        if d0 & (d0 - 1):
            raise ValueError("matrix dimension is not a power of two; pass n_qubits")
        n_qubits = d0.bit_length() - 1
    d = 1 << n_qubits
    if M.shape[0] != d:
        M = embed(M, n_qubits)
    idx = np.arange(d)
    # row x holds M[j ^ x, j]; a transform over j yields the z dependence
    gathered = M[idx[None, :] ^ idx[:, None], idx[None, :]]
    coeff = _walsh_hadamard(gathered) / d  # coeff[x, z] of X^x Z^z
    ny = popcount(idx[:, None] & idx[None, :]) % 4
    coeff = coeff * np.array([1, -1j, -1, 1j])[ny]
    xs, zs = np.nonzero(np.abs(coeff) > tol)
    return [
        PauliTerm(complex(coeff[x, z]), _masks_to_word(int(x), int(z), n_qubits))
        for x, z in zip(xs, zs)
    ]


def hermitian_terms(M: np.ndarray, n_qubits: int | None = None,
                    tol: float = 1e-12) -> list[PauliTerm]:
    """Real-coefficient Pauli terms of a Hermitian matrix."""
    terms = pauli_decompose(M, n_qubits, tol)
    worst = max((abs(t.coefficient.imag) for t in terms), default=0.0)
    if worst > 1e-9:
        raise ValueError(f"matrix is not Hermitian (imaginary coefficient {worst:.2e})")
    return [PauliTerm(float(t.coefficient.real), t.string) for t in terms
            if abs(t.coefficient.real) > tol]


def pauli_matrix(word: str) -> np.ndarray:
    """Dense matrix of a Pauli word."""
    mats = {
        "I": np.eye(2, dtype=complex),
        "X": np.array([[0, 1], [1, 0]], dtype=complex),
        "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
        "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    }
    out = np.ones((1, 1), dtype=complex)
    for c in word:
        out = np.kron(out, mats[c])
    return out


def terms_to_matrix(terms: Sequence[PauliTerm], n_qubits: int | None = None) -> np.ndarray:
    """Resum Pauli terms into a dense matrix."""
    if n_qubits is None:
        if not terms:
            raise ValueError("cannot infer the register size from no terms")
        n_qubits = terms[0].n_qubits
    d = 1 << n_qubits
    idx = np.arange(d)
    out = np.zeros((d, d), dtype=complex)
    for t in terms:
        xm, zm = t.masks()
        ny = bin(xm & zm).count("1")
        sign = 1 - 2 * (popcount(idx & zm) & 1)
        # P[i ^ x, i] = i^ny * (-1)^{|i & z|}
        out[idx ^ xm, idx] += t.coefficient * (1j) ** ny * sign
    return out


@dataclass(frozen=True)
class GapResult:
    """Extremal imaginary parts of the Bloch spectrum."""

    gap: float
    max_im: float
    min_im: float
    k_at_max: float


def _im_bands(params: LadderParams, k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hx = params.v1 + params.v2 * np.cos(k)
    hz = params.v2 * np.sin(k) + 0.5j * params.gamma
    root = np.sqrt((hx * hx + hz * hz).astype(complex))
    im_hi = -0.5 * params.gamma + np.abs(root.imag)
    im_lo = -0.5 * params.gamma - np.abs(root.imag)
    return im_hi, im_lo


def dissipative_gap(params: LadderParams, k_samples: int = 1024,
                    refine: bool = True) -> GapResult:
    """Dissipative gap ``-max Im E`` of the two Bloch bands.

    The maximum over a uniform ``k`` grid is polished with a bounded scalar
    search between the neighbouring grid points.
    """
    if k_samples < 64:
        raise ValueError("k_samples must be at least 64")
    ks = 2 * np.pi * np.arange(k_samples) / k_samples
    hi, lo = _im_bands(params, ks)
    j = int(np.argmax(hi))
    k_best, best = ks[j], hi[j]
    lo_best = float(lo.min())
    if refine:
        step = 2 * np.pi / k_samples

        def neg_hi(k):
            return -_im_bands(params, np.array([k]))[0][0]

        def pos_lo(k):
            return _im_bands(params, np.array([k]))[1][0]

        res = minimize_scalar(neg_hi, bounds=(k_best - step, k_best + step),
                              method="bounded", options={"xatol": 1e-13})
        if -res.fun > best:
            k_best, best = float(res.x), float(-res.fun)
        jl = int(np.argmin(lo))
        res = minimize_scalar(pos_lo, bounds=(ks[jl] - step, ks[jl] + step),
                              method="bounded", options={"xatol": 1e-13})
        lo_best = min(lo_best, float(res.fun))
    best = min(float(best), 0.0)
    return GapResult(gap=abs(best), max_im=best, min_im=lo_best, k_at_max=float(k_best % (2 * np.pi)))


@dataclass(frozen=True)
class EncodedHamiltonian:
    """A sector Hamiltonian prepared for circuit simulation.

    Attributes
    ----------
    matrix : ndarray
        Sector Hamiltonian of dimension ``D``.
    split : HamiltonianSplit
        Its Hermitian part and loss generator.
    n_qubits : int
        System register size.
    hermitian : list of PauliTerm
        Pauli expansion of the embedded Hermitian part (identity included).
    loss : list of PauliTerm
        Pauli expansion of the embedded loss generator.
    """

    matrix: np.ndarray
    split: HamiltonianSplit
    n_qubits: int
    hermitian: list
    loss: list

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def max_coefficient(self) -> float:
        return max((abs(t.coefficient) for t in self.hermitian if not t.is_identity()),
                   default=0.0)


def encode_hamiltonian(H: np.ndarray, n_qubits: int, tol: float = 1e-12) -> EncodedHamiltonian:
    """Split ``H``, embed both parts in ``n_qubits`` and expand them in Paulis."""
    parts = split(H)
    return EncodedHamiltonian(
        matrix=np.asarray(H, dtype=complex),
        split=parts,
        n_qubits=n_qubits,
        hermitian=hermitian_terms(parts.hermitian_part, n_qubits, tol),
        loss=hermitian_terms(parts.antihermitian_generator, n_qubits, tol),
    )


def interaction_list(pairs: Iterable[Sequence[float]]) -> dict[int, float]:
    """Convert ``[[r, U_r], ...]`` pairs into an interaction mapping."""
    out: dict[int, float] = {}
    for item in pairs:
        r, u = item
        if r in out:
            raise ValueError(f"interaction range {r} listed twice")
        out[int(r)] = float(u)
    return out
