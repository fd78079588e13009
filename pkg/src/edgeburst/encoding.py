"""Qubit encoding of hardcore-boson configurations on the flattened ladder.

Site ``(x, a)`` of unit cell ``x`` (1-based) maps to the zero-based index
``2x - 2`` and ``(x, b)`` to ``2x - 1``. A ``p``-particle configuration is a
sorted set of ``p`` distinct sites; configurations are ranked in ascending
lexicographic order with the combinatorial number system, and the rank is
stored big-endian in the qubit register (qubit 0 most significant).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np

__all__ = [
    "SectorEncoding",
    "build_encoding",
    "encode_site",
    "site_cell",
    "is_physical",
    "occupancy_from_index",
    "bits_to_int",
    "int_to_bits",
]


def encode_site(x: int, sublattice: str, N: int | None = None) -> int:
    """Zero-based flattened index of site ``sublattice`` in unit cell ``x``.

    Parameters
    ----------
    x : int
        Unit cell, 1-based.
    sublattice : {'a', 'b'}
    N : int, optional
        Number of cells; if given, ``x`` is range-checked against it.

    Examples
    --------
    >>> encode_site(1, "a"), encode_site(1, "b"), encode_site(6, "a")
    (0, 1, 10)
    """
    if sublattice not in ("a", "b"):
        raise ValueError(f"sublattice must be 'a' or 'b', got {sublattice!r}")
    if x < 1 or (N is not None and x > N):
        raise ValueError(f"unit cell {x} out of range")
    return 2 * x - (1 if sublattice == "a" else 0) - 1


def site_cell(z: int) -> tuple[int, str]:
    """Inverse of :func:`encode_site`: ``(x, sublattice)`` of site ``z``."""
    if z < 0:
        raise ValueError("site index must be nonnegative")
    return z // 2 + 1, "ab"[z % 2]


def bits_to_int(bits: str) -> int:
    """Big-endian bitstring to integer (qubit 0 is the leading character)."""
    return int(bits, 2) if bits else 0


def int_to_bits(value: int, n: int) -> str:
    """Integer to a big-endian bitstring of length ``n``."""
    return format(value, f"0{n}b") if n else ""


@dataclass(frozen=True)
class SectorEncoding:
    """Bijection between ``p``-particle configurations and basis indices.

    Attributes
    ----------
    N : int
        Number of unit cells (``2N`` sites).
    p : int
        Particle number.
    D : int
        Sector dimension ``C(2N, p)``.
    n_qubits : int
        Register size ``ceil(log2 D)`` (at least 1).
    configs : ndarray of int, shape (D, p)
        Row ``i`` holds the sorted sites of the configuration with rank ``i``.
    """

    N: int
    p: int
    D: int
    n_qubits: int
    configs: np.ndarray = field(repr=False)

    @property
    def n_sites(self) -> int:
        return 2 * self.N

    def rank(self, sites) -> int:
        """Lexicographic rank of a set of ``p`` distinct sites."""
        s = sorted(int(v) for v in sites)
        n, p = self.n_sites, self.p
        if len(s) != p or len(set(s)) != p or (p and (s[0] < 0 or s[-1] >= n)):
            raise ValueError(f"invalid configuration {sites!r}")
        # count of p-subsets lexicographically after s, subtracted from the top
        return comb(n, p) - 1 - sum(comb(n - 1 - v, p - i) for i, v in enumerate(s))

    def unrank(self, index: int) -> tuple[int, ...]:
        """Sorted sites of the configuration with the given rank."""
        if not 0 <= index < self.D:
            raise ValueError(f"index {index} outside the sector (D={self.D})")
        n, p = self.n_sites, self.p
        rem = comb(n, p) - 1 - index
        out = []
        # greedy decoding of the combinatorial number system
        for i in range(p):
            k = p - i
            v = out[-1] + 1 if out else 0
            while comb(n - 1 - v, k) > rem:
                v += 1
            rem -= comb(n - 1 - v, k)
            out.append(v)
        return tuple(out)

    def occupations(self) -> np.ndarray:
        """0/1 matrix of shape ``(D, 2N)``: row ``i`` is the occupation of rank ``i``."""
        occ = np.zeros((self.D, self.n_sites), dtype=np.int8)
        rows = np.repeat(np.arange(self.D), self.p)
        occ[rows, self.configs.ravel()] = 1
        return occ


def build_encoding(N: int, p: int) -> SectorEncoding:
    """Encoding of the ``p``-particle sector of a ladder with ``N`` cells."""
    if N < 1:
        raise ValueError("N must be at least 1")
    if not 1 <= p <= 2 * N:
        raise ValueError(f"particle number {p} outside [1, {2 * N}]")
    D = comb(2 * N, p)
    n_qubits = max(1, (D - 1).bit_length())
    configs = np.array(list(combinations(range(2 * N), p)), dtype=np.int64)
    return SectorEncoding(N=N, p=p, D=D, n_qubits=n_qubits, configs=configs)


def is_physical(bitstring, enc: SectorEncoding) -> bool:
    """True when a measured system outcome encodes a configuration.

    ``bitstring`` is a big-endian string of length ``enc.n_qubits`` or an int.
    """
    if isinstance(bitstring, str):
        if len(bitstring) != enc.n_qubits:
            raise ValueError("bitstring length does not match the register")
        value = bits_to_int(bitstring)
    else:
        value = int(bitstring)
    return 0 <= value < enc.D


def occupancy_from_index(index: int, enc: SectorEncoding) -> np.ndarray:
    """Occupation vector over the ``2N`` sites for basis index ``index``."""
    if not 0 <= index < enc.D:
        raise ValueError(f"unphysical index {index} (D={enc.D})")
    occ = np.zeros(enc.n_sites, dtype=np.int8)
    occ[list(enc.configs[index])] = 1
    return occ
