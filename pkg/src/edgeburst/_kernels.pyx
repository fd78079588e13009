# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled statevector kernels.

All routines act in place on a C-contiguous ``complex128`` array of shape
``(rows, dim)`` holding one statevector per row. Qubits are addressed by
their bit mask within the basis-state integer.
"""

from libc.math cimport cos, sin, sqrt


cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


cdef enum:
    OP_X = 0
    OP_H = 1
    OP_S = 2
    OP_SDG = 3
    OP_RZ = 4
    OP_RX = 5
    OP_CX = 6


cdef inline int _parity(long long v) nogil:
    return __builtin_popcountll(<unsigned long long>v) & 1


cdef void _apply_pauli_row(double complex* row, Py_ssize_t dim,
                           long long xm, long long zm) noexcept nogil:
    """Apply X^x Z^z to a single row, ignoring the global phase."""
    cdef Py_ssize_t i, j
    cdef double complex tmp
    if zm:
        for i in range(dim):
            if _parity(i & zm):
                row[i] = -row[i]
    if xm:
        for i in range(dim):
            j = i ^ xm
            if j > i:
                tmp = row[i]
                row[i] = row[j]
                row[j] = tmp


cdef void _gate_flat(double complex* v, Py_ssize_t n, int op,
                     long long m0, long long m1, double angle) noexcept nogil:
    """Apply one gate to ``n`` contiguous amplitudes (any number of whole rows).

    Masks address bits below the row length, so pairs never cross rows.
    """
    cdef Py_ssize_t hi, lo, i, j, step = 2 * m0
    cdef double complex a, b, e0, e1, mi
    cdef double c, s
    cdef double r2 = 1.0 / sqrt(2.0)
    if op == OP_CX:
        for i in range(n):
            if (i & m0) and not (i & m1):
                j = i | m1
                a = v[i]
                v[i] = v[j]
                v[j] = a
        return
    hi = 0
    if op == OP_X:
        while hi < n:
            for lo in range(hi, hi + m0):
                a = v[lo]
                v[lo] = v[lo + m0]
                v[lo + m0] = a
            hi += step
    elif op == OP_H:
        while hi < n:
            for lo in range(hi, hi + m0):
                a = v[lo]
                b = v[lo + m0]
                v[lo] = (a + b) * r2
                v[lo + m0] = (a - b) * r2
            hi += step
    elif op == OP_S or op == OP_SDG:
        e1 = 1j if op == OP_S else -1j
        while hi < n:
            for lo in range(hi + m0, hi + step):
                v[lo] = e1 * v[lo]
            hi += step
    elif op == OP_RZ:
        e0 = cos(0.5 * angle) - 1j * sin(0.5 * angle)
        e1 = cos(0.5 * angle) + 1j * sin(0.5 * angle)
        while hi < n:
            for lo in range(hi, hi + m0):
                v[lo] = e0 * v[lo]
                v[lo + m0] = e1 * v[lo + m0]
            hi += step
    elif op == OP_RX:
        c = cos(0.5 * angle)
        s = sin(0.5 * angle)
        mi = -1j * s
        while hi < n:
            for lo in range(hi, hi + m0):
                a = v[lo]
                b = v[lo + m0]
                v[lo] = c * a + mi * b
                v[lo + m0] = mi * a + c * b
            hi += step


def apply_program(double complex[:, ::1] psi, int[::1] ops,
                  long long[::1] mask0, long long[::1] mask1,
                  double[::1] angles, long long[::1] ev_ptr=None,
                  int[::1] ev_row=None, long long[::1] ev_x=None,
                  long long[::1] ev_z=None):
    """Apply a gate program to every row, with optional Pauli error events.

    Parameters
    ----------
    psi : ndarray, shape (rows, dim)
        Statevectors, modified in place.
    ops, mask0, mask1, angles : ndarray
        Opcode, first/second qubit masks and rotation angle per gate.
    ev_ptr : ndarray, optional
        CSR offsets (length ``len(ops) + 1``) into the event arrays; events
        ``ev_ptr[g]:ev_ptr[g+1]`` are applied right after gate ``g``.
    ev_row, ev_x, ev_z : ndarray, optional
        Row index and Pauli masks of each event.
    """
    cdef Py_ssize_t rows = psi.shape[0]
    cdef Py_ssize_t dim = psi.shape[1]
    cdef Py_ssize_t ng = ops.shape[0]
    cdef Py_ssize_t g, e
    cdef bint events = ev_ptr is not None
    if rows == 0:
        return
    with nogil:
        for g in range(ng):
            _gate_flat(&psi[0, 0], rows * dim, ops[g], mask0[g], mask1[g], angles[g])
            if events:
                for e in range(ev_ptr[g], ev_ptr[g + 1]):
                    _apply_pauli_row(&psi[ev_row[e], 0], dim, ev_x[e], ev_z[e])


def pauli_rotations(double complex[:, ::1] psi, long long[::1] xmask,
                    long long[::1] zmask, long long[::1] cmask,
                    double[::1] theta):
    """Apply a sequence of exp(-i theta/2 P) rotations to every row.

    ``P = i^{|x & z|} X^x Z^z`` is Hermitian. A nonzero ``cmask`` restricts
    the rotation to basis states with that control bit set.
    """
    cdef Py_ssize_t n = psi.shape[0] * psi.shape[1]
    cdef Py_ssize_t nt = xmask.shape[0]
    cdef Py_ssize_t k, i, j
    cdef long long xm, zm, cm
    cdef double c, s
    cdef double complex ph, em, ep, a, b, ci, cj
    cdef double complex* v
    cdef int ny
    if n == 0:
        return
    v = &psi[0, 0]
    with nogil:
        for k in range(nt):
            xm = xmask[k]
            zm = zmask[k]
            cm = cmask[k]
            c = cos(0.5 * theta[k])
            s = sin(0.5 * theta[k])
            if xm == 0:
                em = c - 1j * s
                ep = c + 1j * s
                for i in range(n):
                    if cm and not (i & cm):
                        continue
                    if _parity(i & zm):
                        v[i] = v[i] * ep
                    else:
                        v[i] = v[i] * em
                continue
            ny = __builtin_popcountll(<unsigned long long>(xm & zm)) & 3
            if ny == 0:
                ph = 1.0
            elif ny == 1:
                ph = 1j
            elif ny == 2:
                ph = -1.0
            else:
                ph = -1j
            # new = c*psi - i*s*P psi
            ph = -1j * s * ph
            for i in range(n):
                j = i ^ xm
                if j < i:
                    continue
                if cm and not (i & cm):
                    continue
                a = v[i]
                b = v[j]
                ci = ph
                cj = ph
                if _parity(j & zm):
                    ci = -ci
                if _parity(i & zm):
                    cj = -cj
                v[i] = c * a + ci * b
                v[j] = c * b + cj * a


def apply_row_paulis(double complex[:, ::1] psi, int[::1] rows,
                     long long[::1] xmask, long long[::1] zmask):
    """Apply X^x Z^z (global phase dropped) to selected rows."""
    cdef Py_ssize_t dim = psi.shape[1]
    cdef Py_ssize_t e
    with nogil:
        for e in range(rows.shape[0]):
            _apply_pauli_row(&psi[rows[e], 0], dim, xmask[e], zmask[e])
