"""Independent dense reference for circuit unitaries (Kronecker products)."""
import numpy as np

_ONE = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "H": np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2),
    "S": np.diag([1, 1j]),
    "Sdg": np.diag([1, -1j]),
}


def one_qubit(name, angle):
    if name == "RZ":
        return np.diag([np.exp(-0.5j * angle), np.exp(0.5j * angle)])
    if name == "RX":
        c, s = np.cos(angle / 2), np.sin(angle / 2)
        return np.array([[c, -1j * s], [-1j * s, c]])
    return _ONE[name]


def gate_matrix(inst, n):
    """Full 2^n matrix of one gate; qubit 0 is the leftmost Kronecker factor."""
    if inst.name == "CX":
        c, t = inst.qubits
        P0, P1 = np.diag([1, 0]).astype(complex), np.diag([0, 1]).astype(complex)
        a = [np.eye(2, dtype=complex)] * n
        b = [np.eye(2, dtype=complex)] * n
        a = a[:c] + [P0] + a[c + 1:]
        b = b[:c] + [P1] + b[c + 1:]
        b = b[:t] + [_ONE["X"]] + b[t + 1:]
        return kron_all(a) + kron_all(b)
    (q,) = inst.qubits
    mats = [np.eye(2, dtype=complex)] * n
    mats = mats[:q] + [one_qubit(inst.name, inst.angle)] + mats[q + 1:]
    return kron_all(mats)


def kron_all(mats):
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


def reference_unitary(circuit):
    U = np.eye(1 << circuit.n_qubits, dtype=complex)
    for inst in circuit.instructions:
        if inst.kind == "gate":
            U = gate_matrix(inst, circuit.n_qubits) @ U
    return U * np.exp(1j * circuit.global_phase)


def random_circuit(rng, n, n_gates):
    from edgeburst.circuit import Circuit
    c = Circuit(n)
    for _ in range(n_gates):
        kind = rng.integers(0, 7 if n > 1 else 6)
        q = int(rng.integers(0, n))
        if kind == 0:
            c.x(q)
        elif kind == 1:
            c.h(q)
        elif kind == 2:
            c.s(q)
        elif kind == 3:
            c.sdg(q)
        elif kind == 4:
            c.rz(float(rng.uniform(-np.pi, np.pi)), q)
        elif kind == 5:
            c.rx(float(rng.uniform(-np.pi, np.pi)), q)
        else:
            t = int((q + 1 + rng.integers(0, n - 1)) % n)
            c.cx(q, t)
    return c


def equal_up_to_phase(a, b):
    k = np.unravel_index(np.argmax(np.abs(b)), b.shape)
    phase = a[k] / b[k]
    return np.max(np.abs(a - phase * b)), abs(abs(phase) - 1)


# acceptance outcomes, filled by tests/test_acceptance.py: {number: (title, passed, detail)}
ACCEPTANCE: dict = {}
