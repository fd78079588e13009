"""Compare the compiled and pure-numpy statevector kernels.

Runs three workloads with each available backend and checks that both give
the same result:

* ``program``: a random gate program applied to a batch of statevectors;
* ``rotations``: a sequence of Pauli rotations (the fused Trotter path);
* ``shots``: a full noisy shot-mode evolution of the 8-cell ladder.

Usage::

    python3 benchmarks/bench_kernels.py [--rows 1000] [--qubits 5] [--repeat 3]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from edgeburst import kernels
from edgeburst.engine import NoiseModel, build_problem, evolve
from edgeburst.model import LadderParams


def _program(n_qubits, n_gates, rng):
    ops = rng.integers(0, 7, n_gates).astype(np.int32)
    q0 = rng.integers(0, n_qubits, n_gates)
    q1 = (q0 + 1 + rng.integers(0, n_qubits - 1, n_gates)) % n_qubits
    m0 = (1 << (n_qubits - 1 - q0)).astype(np.int64)
    m1 = np.where(ops == 6, 1 << (n_qubits - 1 - q1), 0).astype(np.int64)
    ang = rng.uniform(-np.pi, np.pi, n_gates)
    return ops, m0, m1, ang


def _psi(rows, dim, rng):
    psi = rng.normal(size=(rows, dim)) + 1j * rng.normal(size=(rows, dim))
    return psi / np.linalg.norm(psi, axis=1, keepdims=True)


def _best(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_program(kb, rows, n_qubits, repeat, seed=0):
    rng = np.random.default_rng(seed)
    prog = _program(n_qubits, 400, rng)
    psi0 = _psi(rows, 1 << n_qubits, rng)

    def run():
        psi = psi0.copy()
        kb.apply_program(psi, *prog)
        return psi
    return _best(run, repeat)


def bench_rotations(kb, rows, n_qubits, repeat, seed=1):
    rng = np.random.default_rng(seed)
    k = 200
    dim = 1 << n_qubits
    x = rng.integers(0, dim, k).astype(np.int64)
    z = rng.integers(0, dim, k).astype(np.int64)
    c = np.zeros(k, dtype=np.int64)
    th = rng.uniform(-1, 1, k)
    psi0 = _psi(rows, dim, rng)

    def run():
        psi = psi0.copy()
        kb.pauli_rotations(psi, x, z, c, th)
        return psi
    return _best(run, repeat)


def bench_shots(kb, shots, repeat):
    problem = build_problem(LadderParams(8, 0.7, 1.0, 0.6), 1)
    noise = NoiseModel(1e-5, 1e-4, (0.03, 0.04), 0)

    def run():
        return evolve(problem, [10], 10.0, 100, mode="shots", shots=shots, noise=noise,
                      seed=7, keep_counts=False, backend=kb).occupancies
    return _best(run, repeat)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=1000)
    ap.add_argument("--qubits", type=int, default=5)
    ap.add_argument("--shots", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    names = kernels.available_backends()
    cases = {
        "program": lambda kb: bench_program(kb, args.rows, args.qubits, args.repeat),
        "rotations": lambda kb: bench_rotations(kb, args.rows, args.qubits, args.repeat),
        "shots": lambda kb: bench_shots(kb, args.shots, args.repeat),
    }
    print(f"{'workload':<10} " + " ".join(f"{n:>10}" for n in names) + "   speedup  max|diff|")
    for case, fn in cases.items():
        res = {n: fn(kernels.get_backend(n)) for n in names}
        line = f"{case:<10} " + " ".join(f"{res[n][0]:>9.4f}s" for n in names)
        if len(names) == 2:
            speed = res["python"][0] / res["compiled"][0]
            diff = float(np.max(np.abs(res["python"][1] - res["compiled"][1])))
            line += f"   {speed:7.1f}x  {diff:.1e}"
        print(line)
    if len(names) == 1:
        print("compiled kernels are not built; only the numpy backend was timed")


if __name__ == "__main__":
    main()
