"""Gate-level circuit IR and compilation passes.

The gate set is ``{X, H, S, Sdg, RZ(t), RX(t), CX}`` plus mid-circuit
measurement into classical bits and classically conditioned X resets.
Circuits optionally carry *rotation hints*: instruction ranges known to
implement a product of Pauli rotations. Simulators may execute a hinted
range as one fused rotation; passes that rewrite gates drop the hints.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Iterable, Sequence

import numpy as np

from .model import PauliTerm, pauli_matrix

__all__ = [
    "Instruction",
    "RotationHint",
    "Circuit",
    "TwirlTable",
    "GATE_ARITY",
    "pauli_rotation",
    "trotter_step",
    "canonical_order",
    "commutes",
    "group_commuting",
    "lcu_step",
    "fold",
    "twirl",
    "build_twirl_table",
]

GATE_ARITY = {"X": 1, "H": 1, "S": 1, "Sdg": 1, "RZ": 1, "RX": 1, "CX": 2}
_PARAMETRIC = ("RZ", "RX")
_INVERSE_NAME = {"X": "X", "H": "H", "S": "Sdg", "Sdg": "S", "CX": "CX", "RZ": "RZ", "RX": "RX"}


@dataclass(frozen=True, slots=True)
class Instruction:
    """One circuit instruction.

    ``kind`` is one of ``gate``, ``measure``, ``reset_conditional`` or
    ``barrier``. A conditional reset applies X to its qubit when classical
    bit ``condition[0]`` equals ``condition[1]``.
    """

    kind: str
    qubits: tuple[int, ...]
    name: str | None = None
    angle: float | None = None
    clbit: int | None = None
    condition: tuple[int, int] | None = None

    def inverse(self) -> "Instruction":
        if self.kind != "gate":
            raise ValueError(f"{self.kind} has no inverse")
        angle = -self.angle if self.angle is not None else None
        return replace(self, name=_INVERSE_NAME[self.name], angle=angle)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "qubits": list(self.qubits)}
        if self.name is not None:
            out["name"] = self.name
        if self.angle is not None:
            out["angle"] = self.angle
        if self.clbit is not None:
            out["clbit"] = self.clbit
        if self.condition is not None:
            out["condition"] = list(self.condition)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Instruction":
        cond = d.get("condition")
        return cls(kind=d["kind"], qubits=tuple(d["qubits"]), name=d.get("name"),
                   angle=d.get("angle"), clbit=d.get("clbit"),
                   condition=tuple(cond) if cond is not None else None)


@dataclass(frozen=True)
class RotationHint:
    """Instructions ``start:stop`` equal the listed Pauli rotations in order.

    Each rotation is ``(xmask, zmask, control_mask, theta)`` and denotes
    ``exp(-i theta/2 P)``, applied only where the control bit is set when the
    control mask is nonzero.
    """

    start: int
    stop: int
    rotations: tuple[tuple[int, int, int, float], ...]


class Circuit:
    """Ordered instruction list on ``n_qubits`` qubits and ``n_clbits`` bits.

    Parameters
    ----------
    n_qubits, n_clbits : int
    global_phase : float
        The circuit implements ``exp(1j * global_phase)`` times its gates.
    """

    def __init__(self, n_qubits: int, n_clbits: int = 0, global_phase: float = 0.0):
        if n_qubits < 1:
            raise ValueError("a circuit needs at least one qubit")
        self.n_qubits = int(n_qubits)
        self.n_clbits = int(n_clbits)
        self.global_phase = float(global_phase)
        self.instructions: list[Instruction] = []
        self.hints: list[RotationHint] = []

    # construction -------------------------------------------------------
    def _gate(self, name: str, qubits: Sequence[int], angle: float | None = None) -> "Circuit":
        if angle is not None and not math.isfinite(angle):
            raise ValueError(f"{name} angle must be finite")
        self.instructions.append(Instruction("gate", tuple(int(q) for q in qubits), name,
                                             None if angle is None else float(angle)))
        return self

    def x(self, q):
        return self._gate("X", (q,))

    def h(self, q):
        return self._gate("H", (q,))

    def s(self, q):
        return self._gate("S", (q,))

    def sdg(self, q):
        return self._gate("Sdg", (q,))

    def rz(self, theta, q):
        return self._gate("RZ", (q,), theta)

    def rx(self, theta, q):
        return self._gate("RX", (q,), theta)

    def cx(self, control, target):
        return self._gate("CX", (control, target))

    def measure(self, q: int, clbit: int) -> "Circuit":
        self.instructions.append(Instruction("measure", (int(q),), clbit=int(clbit)))
        return self

    def reset_conditional(self, q: int, clbit: int, value: int = 1) -> "Circuit":
        self.instructions.append(Instruction("reset_conditional", (int(q),), name="X",
                                             condition=(int(clbit), int(value))))
        return self

    def barrier(self, *qubits: int) -> "Circuit":
        qs = tuple(qubits) if qubits else tuple(range(self.n_qubits))
        self.instructions.append(Instruction("barrier", qs))
        return self

    def append(self, inst: Instruction) -> "Circuit":
        self.instructions.append(inst)
        return self

    def compose(self, other: "Circuit", qubits: Sequence[int] | None = None,
                clbit_offset: int = 0, keep_hints: bool = True) -> "Circuit":
        """Append ``other`` with its qubit ``i`` mapped to ``qubits[i]``."""
        qmap = list(range(other.n_qubits)) if qubits is None else [int(q) for q in qubits]
        if len(qmap) != other.n_qubits:
            raise ValueError("qubit map length does not match the composed circuit")
        offset = len(self.instructions)
        for inst in other.instructions:
            clbit = None if inst.clbit is None else inst.clbit + clbit_offset
            cond = None if inst.condition is None else (inst.condition[0] + clbit_offset,
                                                         inst.condition[1])
            self.instructions.append(replace(inst, qubits=tuple(qmap[q] for q in inst.qubits),
                                             clbit=clbit, condition=cond))
        self.global_phase += other.global_phase
        if keep_hints:
            remap = _mask_remap(qmap, other.n_qubits, self.n_qubits)
            for hint in other.hints:
                self.hints.append(RotationHint(
                    hint.start + offset, hint.stop + offset,
                    tuple((remap(xm), remap(zm), remap(cm), th)
                          for xm, zm, cm, th in hint.rotations)))
        return self

    def copy(self, keep_hints: bool = True) -> "Circuit":
        out = Circuit(self.n_qubits, self.n_clbits, self.global_phase)
        out.instructions = list(self.instructions)
        out.hints = list(self.hints) if keep_hints else []
        return out

    # inspection ---------------------------------------------------------
    def __len__(self) -> int:
        return len(self.instructions)

    def __repr__(self) -> str:
        return (f"Circuit(n_qubits={self.n_qubits}, n_clbits={self.n_clbits}, "
                f"instructions={len(self.instructions)})")

    def gate_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for inst in self.instructions:
            if inst.kind == "gate":
                out[inst.name] = out.get(inst.name, 0) + 1
        return out

    def count_by_arity(self) -> tuple[int, int]:
        """Numbers of one- and two-qubit gates."""
        one = two = 0
        for inst in self.instructions:
            if inst.kind == "gate":
                if len(inst.qubits) == 2:
                    two += 1
                else:
                    one += 1
        return one, two

    def is_unitary(self) -> bool:
        return all(i.kind in ("gate", "barrier") for i in self.instructions)

    def validate(self) -> None:
        """Raise ``ValueError`` if any structural invariant is violated."""
        written: set[int] = set()
        for pos, inst in enumerate(self.instructions):
            where = f"instruction {pos}"
            if any(not 0 <= q < self.n_qubits for q in inst.qubits):
                raise ValueError(f"{where}: qubit index out of range")
            if inst.kind == "gate":
                if inst.name not in GATE_ARITY:
                    raise ValueError(f"{where}: unknown gate {inst.name!r}")
                if len(inst.qubits) != GATE_ARITY[inst.name]:
                    raise ValueError(f"{where}: {inst.name} arity mismatch")
                if len(set(inst.qubits)) != len(inst.qubits):
                    raise ValueError(f"{where}: repeated qubit")
                if (inst.name in _PARAMETRIC) != (inst.angle is not None):
                    raise ValueError(f"{where}: angle presence mismatch for {inst.name}")
                if inst.angle is not None and not math.isfinite(inst.angle):
                    raise ValueError(f"{where}: non-finite angle")
                if inst.condition is not None:
                    raise ValueError(f"{where}: only resets may be conditional")
            elif inst.kind == "measure":
                if len(inst.qubits) != 1 or inst.clbit is None:
                    raise ValueError(f"{where}: measure needs one qubit and a clbit")
                if not 0 <= inst.clbit < self.n_clbits:
                    raise ValueError(f"{where}: clbit out of range")
                written.add(inst.clbit)
            elif inst.kind == "reset_conditional":
                if len(inst.qubits) != 1 or inst.condition is None:
                    raise ValueError(f"{where}: conditional reset needs a qubit and condition")
                if inst.condition[0] not in written:
                    raise ValueError(f"{where}: condition reads an unwritten clbit")
                if inst.condition[1] not in (0, 1):
                    raise ValueError(f"{where}: condition value must be 0 or 1")
            elif inst.kind != "barrier":
                raise ValueError(f"{where}: unknown kind {inst.kind!r}")
        for hint in self.hints:
            if not 0 <= hint.start <= hint.stop <= len(self.instructions):
                raise ValueError("rotation hint outside the instruction list")

    # serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "n_clbits": self.n_clbits,
            "global_phase": self.global_phase,
            "instructions": [i.to_dict() for i in self.instructions],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "Circuit":
        out = cls(d["n_qubits"], d.get("n_clbits", 0), d.get("global_phase", 0.0))
        out.instructions = [Instruction.from_dict(i) for i in d["instructions"]]
        return out

    @classmethod
    def from_json(cls, text: str) -> "Circuit":
        return cls.from_dict(json.loads(text))


def _mask_remap(qmap: list[int], n_from: int, n_to: int):
    table = [(1 << (n_from - 1 - q), 1 << (n_to - 1 - qmap[q])) for q in range(n_from)]

    def remap(mask: int) -> int:
        out = 0
        for src, dst in table:
            if mask & src:
                out |= dst
        return out

    return remap


def _word_masks(word: str, n: int, offset: int = 0) -> tuple[int, int]:
    xm = zm = 0
    for q, c in enumerate(word):
        bit = 1 << (n - 1 - (q + offset))
        if c in "XY":
            xm |= bit
        if c in "YZ":
            zm |= bit
    return xm, zm


def pauli_rotation(word: str, theta: float, control: int | None = None,
                   n_qubits: int | None = None) -> Circuit:
    """Circuit for ``exp(-i theta/2 P)`` with ``P`` the Pauli word.

    Qubit ``q`` of the word is circuit qubit ``q``. With ``control`` set, the
    rotation acts only when that qubit is ``|1>``; only the central RZ is
    controlled.
    """
    if not math.isfinite(theta):
        raise ValueError("rotation angle must be finite")
    support = [q for q, c in enumerate(word) if c != "I"]
    if not support:
        raise ValueError("identity word is a global phase; handle it in the caller")
    n = n_qubits if n_qubits is not None else len(word)
    if control is not None:
        if control < len(word) and word[control] != "I":
            raise ValueError("control qubit overlaps the rotation support")
        n = max(n, control + 1)
    circ = Circuit(n)
    for q in support:
        if word[q] == "X":
            circ.h(q)
        elif word[q] == "Y":
            circ.sdg(q)
            circ.h(q)
    for a, b in zip(support[:-1], support[1:]):
        circ.cx(a, b)
    target = support[-1]
    if control is None:
        circ.rz(theta, target)
    else:
        circ.rz(0.5 * theta, target)
        circ.cx(control, target)
        circ.rz(-0.5 * theta, target)
        circ.cx(control, target)
    for a, b in reversed(list(zip(support[:-1], support[1:]))):
        circ.cx(a, b)
    for q in support:
        if word[q] == "X":
            circ.h(q)
        elif word[q] == "Y":
            circ.h(q)
            circ.s(q)
    xm, zm = _word_masks(word, n)
    cm = 0 if control is None else 1 << (n - 1 - control)
    circ.hints.append(RotationHint(0, len(circ), ((xm, zm, cm, float(theta)),)))
    return circ


def canonical_order(terms: Iterable[PauliTerm]) -> list[PauliTerm]:
    """Sort terms by support, then by word."""
    return sorted(terms, key=lambda t: (t.support, t.string))


def trotter_step(terms: Sequence[PauliTerm], dt: float, control: int | None = None,
                 n_qubits: int | None = None, order: str = "canonical") -> Circuit:
    """First-order product of ``exp(-i alpha_k P_k dt)`` over the terms.

    Identity terms contribute a global phase, or a phase on the control
    qubit when ``control`` is given.
    """
    if not terms:
        if n_qubits is None:
            raise ValueError("n_qubits is required for an empty term list")
        return Circuit(n_qubits if control is None else max(n_qubits, control + 1))
    width = terms[0].n_qubits
    n = max(n_qubits or width, width)
    if control is not None:
        n = max(n, control + 1)
    seq = canonical_order(terms) if order == "canonical" else list(terms)
    circ = Circuit(n)
    for t in seq:
        coef = float(np.real(t.coefficient))
        if t.is_identity():
            phase = -coef * dt
            if control is None:
                circ.global_phase += phase
            else:
                # diag(1, e^{i phase}) on the control qubit
                circ.rz(phase, control)
                circ.global_phase += 0.5 * phase
            continue
        circ.compose(pauli_rotation(t.string.ljust(n, "I"), 2.0 * coef * dt, control, n))
    return circ


def commutes(a: PauliTerm | str, b: PauliTerm | str) -> bool:
    """Symplectic commutation test of two Pauli words."""
    wa = a.string if isinstance(a, PauliTerm) else a
    wb = b.string if isinstance(b, PauliTerm) else b
    anti = sum(1 for p, q in zip(wa, wb) if p != "I" and q != "I" and p != q)
    return anti % 2 == 0


def group_commuting(terms: Sequence[PauliTerm]) -> list[list[PauliTerm]]:
    """Partition terms into mutually commuting groups.

    Greedy colouring of the anticommutation graph in largest-degree-first
    order; each colour class is a commuting clique.
    """
    n = len(terms)
    adj = [[j for j in range(n) if j != i and not commutes(terms[i], terms[j])]
           for i in range(n)]
    order = sorted(range(n), key=lambda i: -len(adj[i]))
    colour: dict[int, int] = {}
    for i in order:
        used = {colour[j] for j in adj[i] if j in colour}
        c = 0
        while c in used:
            c += 1
        colour[i] = c
    groups: dict[int, list[PauliTerm]] = {}
    for i in range(n):
        groups.setdefault(colour[i], []).append(terms[i])
    return [groups[c] for c in sorted(groups)]


def _ry(circ: Circuit, theta: float, q: int) -> None:
    # RY = S RX S^dagger
    circ.sdg(q)
    circ.rx(theta, q)
    circ.s(q)


def lcu_step(plus: Circuit, minus: Circuit, weights: Sequence[float] = (0.5, 0.5),
             ancilla: int | None = None, clbit: int = 0) -> Circuit:
    """Two-branch LCU block with mid-circuit measurement and reset.

    The ancilla is prepared by ``V``, ``plus`` runs on ancilla ``|0>`` and
    ``minus`` on ``|1>``, ``V^dagger`` is applied, the ancilla is measured
    into ``clbit`` and flipped back to ``|0>`` when the outcome is 1. The
    branch circuits must share their gate skeleton and may differ only in
    RZ angles, as produced by :func:`trotter_step` with opposite times.
    Projecting the ancilla onto 0 yields ``w0*plus + w1*minus`` (weights
    normalized to sum to one).
    """
    w0, w1 = (float(w) for w in weights)
    if w0 < 0 or w1 < 0 or not w0 + w1 > 0:
        raise ValueError("LCU weights must be nonnegative with a positive sum")
    if len(plus.instructions) != len(minus.instructions):
        raise ValueError("branch circuits do not share a gate skeleton")
    n_sys = max(plus.n_qubits, minus.n_qubits)
    anc = n_sys if ancilla is None else int(ancilla)
    n = max(n_sys, anc + 1)
    circ = Circuit(n, clbit + 1)
    abit = 1 << (n - 1 - anc)
    prep_angle = 2.0 * math.acos(math.sqrt(w0 / (w0 + w1)))
    equal = math.isclose(w0, w1)
    if equal:
        circ.h(anc)
    else:
        _ry(circ, prep_angle, anc)

    remap = _mask_remap(list(range(n_sys)), n_sys, n)
    hint_of = {h.start: h for h in plus.hints}
    minus_hint_of = {h.start: h for h in minus.hints}
    pos = 0
    while pos < len(plus.instructions):
        hp, hm = hint_of.get(pos), minus_hint_of.get(pos)
        stop = hp.stop if hp is not None and hm is not None and hp.stop == hm.stop else pos + 1
        start_len = len(circ.instructions)
        rots: list[tuple[int, int, int, float]] = []
        for k in range(pos, stop):
            a, b = plus.instructions[k], minus.instructions[k]
            if a == b:
                circ.append(a)
                continue
            same_shape = (a.kind == b.kind == "gate" and a.name == b.name
                          and a.qubits == b.qubits)
            if not same_shape or a.name != "RZ":
                raise ValueError(f"branch circuits differ at instruction {k} beyond an RZ angle")
            t = a.qubits[0]
            circ.rz(a.angle, t)
            delta = b.angle - a.angle
            circ.rz(0.5 * delta, t)
            circ.cx(anc, t)
            circ.rz(-0.5 * delta, t)
            circ.cx(anc, t)
        if stop > pos or hp is not None:
            if hp is not None and hm is not None and hp.stop == hm.stop:
                for (xm, zm, cm, ta), (_, _, _, tb) in zip(hp.rotations, hm.rotations):
                    if cm:
                        break
                    rots.append((remap(xm), remap(zm), 0, ta))
                    if tb != ta:
                        rots.append((remap(xm), remap(zm), abit, tb - ta))
                else:
                    circ.hints.append(RotationHint(start_len, len(circ.instructions),
                                                   tuple(rots)))
        pos = stop

    delta_phase = minus.global_phase - plus.global_phase
    if delta_phase != 0.0:
        # diag(1, e^{i delta}) on the ancilla
        circ.rz(delta_phase, anc)
    circ.global_phase = plus.global_phase + 0.5 * delta_phase
    if equal:
        circ.h(anc)
    else:
        _ry(circ, -prep_angle, anc)
    circ.measure(anc, clbit)
    circ.reset_conditional(anc, clbit, 1)
    return circ


# folding ------------------------------------------------------------------

def fold(circuit: Circuit, scale: float, rng: np.random.Generator) -> Circuit:
    """Randomized local gate folding ``G -> G G^dagger G``.

    ``scale = 1 + 2k + 2r`` with integer ``k`` and ``0 <= r < 1``: every gate
    is folded ``k`` times and once more with probability ``r``, so expected
    gate counts grow by ``scale``. Measurements, conditional resets and
    barriers are left untouched. Rotation hints are dropped.
    """
    if scale < 1:
        raise ValueError("noise scale factor must be at least 1")
    half = 0.5 * (scale - 1.0)
    k = int(math.floor(half + 1e-12))
    r = max(0.0, half - k)
    gates = [i for i, inst in enumerate(circuit.instructions) if inst.kind == "gate"]
    extra = rng.random(len(gates)) < r if r > 0 else np.zeros(len(gates), dtype=bool)
    n_folds = dict(zip(gates, k + extra.astype(int)))
    out = Circuit(circuit.n_qubits, circuit.n_clbits, circuit.global_phase)
    for i, inst in enumerate(circuit.instructions):
        out.append(inst)
        f = n_folds.get(i, 0)
        if f:
            inv = inst.inverse()
            for _ in range(f):
                out.append(inv)
                out.append(inst)
    return out


# twirling -----------------------------------------------------------------

_CX_MATRIX = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)


def _equal_up_to_phase(a: np.ndarray, b: np.ndarray, atol: float = 1e-12) -> bool:
    idx = np.unravel_index(np.argmax(np.abs(b)), b.shape)
    if abs(b[idx]) < atol:
        return bool(np.allclose(a, b, atol=atol))
    phase = a[idx] / b[idx]
    if not math.isclose(abs(phase), 1.0, abs_tol=atol):
        return False
    return bool(np.max(np.abs(a - phase * b)) <= atol)


@dataclass(frozen=True)
class TwirlTable:
    """Map from a pre-CX Pauli pair to the post-CX pair that undoes it.

    For each entry ``(c, d) -> (a, b)`` with control-qubit Pauli first,
    ``(a x b) . CX . (c x d) = CX`` up to a global phase.
    """

    entries: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def verify(self, atol: float = 1e-12) -> bool:
        if len(self.entries) != 16:
            return False
        for (c, d), (a, b) in self.entries.items():
            lhs = np.kron(pauli_matrix(a), pauli_matrix(b)) @ _CX_MATRIX @ np.kron(
                pauli_matrix(c), pauli_matrix(d))
            if not _equal_up_to_phase(lhs, _CX_MATRIX, atol):
                return False
        return True


def build_twirl_table() -> TwirlTable:
    """Derive the 16-entry CX twirl table by brute force."""
    labels = "IXYZ"
    mats = {(a, b): np.kron(pauli_matrix(a), pauli_matrix(b)) for a, b in product(labels, labels)}
    entries = {}
    for pre in product(labels, labels):
        conj = _CX_MATRIX @ mats[pre] @ _CX_MATRIX
        post = next(k for k, m in mats.items() if _equal_up_to_phase(conj, m))
        entries[pre] = post
    return TwirlTable(entries)


def _emit_pauli(circ: Circuit, label: str, q: int) -> None:
    # Paulis up to global phase in the native gate set
    if label == "X":
        circ.x(q)
    elif label == "Z":
        circ.rz(math.pi, q)
    elif label == "Y":
        circ.rz(math.pi, q)
        circ.x(q)


def twirl(circuit: Circuit, rng: np.random.Generator, table: TwirlTable | None = None) -> Circuit:
    """Conjugate every CX by a uniformly drawn twirl-table entry.

    The returned circuit equals the input up to a global phase. Rotation
    hints are dropped.
    """
    table = table or _DEFAULT_TABLE
    keys = list(table.entries)
    cx_count = sum(1 for i in circuit.instructions if i.kind == "gate" and i.name == "CX")
    draws = iter(rng.integers(0, len(keys), size=cx_count))
    out = Circuit(circuit.n_qubits, circuit.n_clbits, circuit.global_phase)
    for inst in circuit.instructions:
        if inst.kind == "gate" and inst.name == "CX":
            c, d = keys[int(next(draws))]
            a, b = table.entries[(c, d)]
            ctrl, tgt = inst.qubits
            _emit_pauli(out, c, ctrl)
            _emit_pauli(out, d, tgt)
            out.append(inst)
            _emit_pauli(out, a, ctrl)
            _emit_pauli(out, b, tgt)
        else:
            out.append(inst)
    return out


_DEFAULT_TABLE = build_twirl_table()
