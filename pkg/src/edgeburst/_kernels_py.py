"""Pure-numpy statevector kernels.

Drop-in replacement for the compiled ``_kernels`` extension with the same
signatures and in-place semantics. Each gate is vectorized over all rows.
"""
import numpy as np

OP_X, OP_H, OP_S, OP_SDG, OP_RZ, OP_RX, OP_CX = range(7)

_R2 = 1.0 / np.sqrt(2.0)


def _parity(values):
    # popcount parity for int64 arrays
    v = values.copy()
    v ^= v >> 32
    v ^= v >> 16
    v ^= v >> 8
    v ^= v >> 4
    v ^= v >> 2
    v ^= v >> 1
    return v & 1


def _pauli_row(row, idx, xm, zm):
    if zm:
        row[_parity(idx & zm) == 1] *= -1.0
    if xm:
        row[:] = row[idx ^ xm]


def _gate(psi, op, m0, m1, angle, idx):
    rows, dim = psi.shape
    if op == OP_CX:
        src = idx[((idx & m0) != 0) & ((idx & m1) == 0)]
        dst = src | m1
        tmp = psi[:, src].copy()
        psi[:, src] = psi[:, dst]
        psi[:, dst] = tmp
        return
    v = psi.reshape(rows, dim // (2 * m0), 2, m0)
    a = v[:, :, 0, :]
    b = v[:, :, 1, :]
    if op == OP_X:
        tmp = a.copy()
        a[...] = b
        b[...] = tmp
    elif op == OP_H:
        tmp = a.copy()
        a += b
        a *= _R2
        b -= tmp
        b *= -_R2
    elif op == OP_S:
        b *= 1j
    elif op == OP_SDG:
        b *= -1j
    elif op == OP_RZ:
        a *= np.exp(-0.5j * angle)
        b *= np.exp(0.5j * angle)
    elif op == OP_RX:
        c, s = np.cos(0.5 * angle), np.sin(0.5 * angle)
        tmp = a.copy()
        a *= c
        a += -1j * s * b
        b *= c
        b += -1j * s * tmp
    else:
        raise ValueError(f"unknown opcode {op}")


def apply_program(psi, ops, mask0, mask1, angles, ev_ptr=None, ev_row=None,
                  ev_x=None, ev_z=None):
    """Apply a gate program to every row, with optional Pauli error events."""
    idx = np.arange(psi.shape[1], dtype=np.int64)
    for g in range(len(ops)):
        _gate(psi, int(ops[g]), int(mask0[g]), int(mask1[g]), float(angles[g]), idx)
        if ev_ptr is not None:
            for e in range(ev_ptr[g], ev_ptr[g + 1]):
                _pauli_row(psi[ev_row[e]], idx, int(ev_x[e]), int(ev_z[e]))


def pauli_rotations(psi, xmask, zmask, cmask, theta):
    """Apply a sequence of exp(-i theta/2 P) rotations to every row."""
    idx = np.arange(psi.shape[1], dtype=np.int64)
    for xm, zm, cm, th in zip(xmask, zmask, cmask, theta):
        xm, zm, cm = int(xm), int(zm), int(cm)
        c, s = np.cos(0.5 * th), np.sin(0.5 * th)
        sign = 1.0 - 2.0 * _parity(idx & zm)
        ph = (1j) ** (bin(xm & zm).count("1") % 4)
        # (P psi)[i] = ph * sign[i ^ x] * psi[i ^ x]
        perm = idx ^ xm
        ppsi = (ph * sign[perm]) * psi[:, perm]
        new = c * psi - 1j * s * ppsi
        if cm:
            on = (idx & cm) != 0
            psi[:, on] = new[:, on]
        else:
            psi[...] = new


def apply_row_paulis(psi, rows, xmask, zmask):
    """Apply X^x Z^z (global phase dropped) to selected rows."""
    idx = np.arange(psi.shape[1], dtype=np.int64)
    for r, xm, zm in zip(rows, xmask, zmask):
        _pauli_row(psi[r], idx, int(xm), int(zm))
