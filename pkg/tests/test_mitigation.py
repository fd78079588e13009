from itertools import combinations

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from edgeburst.engine import NoiseModel
from edgeburst.mitigation import (
    Bounds,
    CalibrationSet,
    SumEquals,
    ZneInput,
    calibrate,
    calibration_circuits,
    imag_energy_bounds,
    marginalize,
    mitigate_counts,
    number_sum,
    occupancy_bounds,
    ols_lines,
    postselected_distribution,
    project_simplex,
    solve_qp,
    zne,
)

from helpers import kron_all


def qubit_matrix(p10, p01):
    return np.array([[1 - p10, p01], [p10, 1 - p01]])


def random_stochastic(rng, d, strength=0.1):
    M = np.eye(d) + strength * rng.random((d, d))
    return M / M.sum(axis=0, keepdims=True)


def brute_force_simplex(v, total=1.0):
    # enumerate supports; the projection is v_S - theta on its support
    best, best_d = None, np.inf
    n = v.size
    for k in range(1, n + 1):
        for S in combinations(range(n), k):
            S = list(S)
            theta = (v[S].sum() - total) / k
            x = np.zeros(n)
            x[S] = v[S] - theta
            if x.min() < -1e-12:
                continue
            d = np.sum((x - v) ** 2)
            if d < best_d:
                best, best_d = x, d
    return best


class TestConfusion:
    def test_marginal_of_product_is_factor(self):
        A, B, C = qubit_matrix(0.1, 0.2), qubit_matrix(0.05, 0.0), qubit_matrix(0.3, 0.1)
        M = kron_all([A, B, C]).real
        np.testing.assert_allclose(marginalize(M, [1]), B, atol=1e-14)
        np.testing.assert_allclose(marginalize(M, [2, 0]), np.kron(C, A), atol=1e-14)

    def test_marginal_stays_stochastic(self, rng):
        M = random_stochastic(rng, 16, 0.5)
        m = marginalize(M, [3, 1])
        np.testing.assert_allclose(m.sum(axis=0), 1.0)
        assert m.min() >= 0

    def test_calibration_set_marginal(self):
        A, B = qubit_matrix(0.1, 0.2), qubit_matrix(0.05, 0.02)
        cal = CalibrationSet([[0, 1], [2]], [np.kron(A, B), qubit_matrix(0.0, 0.3)])
        np.testing.assert_allclose(cal.marginal([2, 0]), np.kron(qubit_matrix(0.0, 0.3), A),
                                   atol=1e-14)
        with pytest.raises(ValueError):
            cal.marginal([5])
        back = CalibrationSet.from_dict(cal.to_dict())
        np.testing.assert_allclose(back.matrices[0], cal.matrices[0])

    @pytest.mark.parametrize("bad", [
        ([[0, 1, 2, 3, 4, 5]], [np.eye(64)]),
        ([[0], [0]], [np.eye(2), np.eye(2)]),
        ([[0]], [np.array([[0.5, 0.5], [0.4, 0.5]])]),
    ])
    def test_calibration_set_validation(self, bad):
        with pytest.raises(ValueError):
            CalibrationSet(*bad)

    def test_merged_circuit_count(self):
        circs = calibration_circuits(7, [[0, 1, 2], [3, 4], [5, 6]])
        assert len(circs) == 8

    def test_calibrate_recovers_readout_model(self):
        noise = NoiseModel(readout=((0.05, 0.1), (0.02, 0.03), (0.08, 0.01)))
        cal = calibrate(noise, [[0, 1], [2]], 20000, rng=0)
        ref = np.kron(qubit_matrix(0.05, 0.1), qubit_matrix(0.02, 0.03))
        np.testing.assert_allclose(cal.matrices[0], ref, atol=0.01)
        np.testing.assert_allclose(cal.matrices[1], qubit_matrix(0.08, 0.01), atol=0.01)

    def test_calibrate_shot_floor(self):
        with pytest.raises(ValueError):
            calibrate(None, [[0]], 100)

    def test_ill_conditioned(self):
        # condition number of the true matrix is 1 / (1 - 0.9) = 10
        noise = NoiseModel(readout=(0.45, 0.45))
        with pytest.raises(np.linalg.LinAlgError):
            calibrate(noise, [[0]], 4000, rng=0, max_condition=5)


class TestInversion:
    def test_exact_recovery_without_projection(self, rng):
        A, B = random_stochastic(rng, 4), random_stochastic(rng, 2)
        cal = CalibrationSet([[0, 1], [2]], [A, B])
        true = rng.dirichlet(np.ones(8)) * 1000
        measured = np.kron(A, B) @ true
        counts = {format(i, "03b"): c for i, c in enumerate(measured)}
        out = mitigate_counts(counts, [[0, 1, 2]], cal, project=False)
        np.testing.assert_allclose([out[format(i, "03b")] for i in range(8)], true, atol=1e-9)

    def test_layered_keys(self):
        cal = CalibrationSet([[0], [1]], [qubit_matrix(0.1, 0.1), qubit_matrix(0.2, 0.0)])
        M = kron_all([qubit_matrix(0.2, 0.0), qubit_matrix(0.1, 0.1),
                      qubit_matrix(0.2, 0.0)]).real
        true = np.array([300, 0, 100, 50, 0, 200, 150, 200.0])
        counts = {format(i, "03b"): c for i, c in enumerate(M @ true)}
        # layers: qubit 1, then qubits 0 and 1
        out = mitigate_counts(counts, [[1], [0, 1]], cal, project=False)
        np.testing.assert_allclose([out[format(i, "03b")] for i in range(8)], true, atol=1e-9)

    def test_projection_keeps_total(self):
        cal = CalibrationSet([[0]], [qubit_matrix(0.2, 0.2)])
        out = mitigate_counts({"0": 100, "1": 0}, [[0]], cal)
        assert sum(out.values()) == pytest.approx(100)
        assert min(out.values()) >= 0

    def test_postselected_matches_dense(self, rng):
        A, B = random_stochastic(rng, 2), random_stochastic(rng, 4)
        cal = CalibrationSet([[2], [0, 1]], [A, B])
        keys = [format(i, "05b") for i in range(32)]
        counts = {k: int(c) for k, c in zip(keys, rng.integers(0, 50, 32))}
        dist, kept = postselected_distribution(counts, 3, [2], [0, 1], cal, project=False)
        dense = mitigate_counts(counts, [[2], [2], [2], [0, 1]], cal, project=False)
        sel = np.array([dense["000" + format(i, "02b")] for i in range(4)])
        assert kept == pytest.approx(sel.sum())
        np.testing.assert_allclose(dist, sel / sel.sum(), atol=1e-12)

    def test_layer_mismatch(self):
        cal = CalibrationSet([[0]], [np.eye(2)])
        with pytest.raises(ValueError):
            mitigate_counts({"00": 1}, [[0]], cal)


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=7), st.floats(0.1, 3.0))
def test_simplex_projection_matches_brute_force(v, total):
    v = np.array(v)
    x = project_simplex(v, total)
    ref = brute_force_simplex(v, total)
    np.testing.assert_allclose(x, ref, atol=1e-9)
    assert x.min() >= 0 and x.sum() == pytest.approx(total)


def test_simplex_fixed_point():
    p = np.array([0.2, 0.3, 0.5])
    np.testing.assert_allclose(project_simplex(p), p)


class TestZne:
    lambdas = np.array([1.0, 1.25, 1.5, 1.75, 2.0])

    def test_ols_closed_form(self):
        y = np.array([[0.4, 0.38, 0.35, 0.33, 0.31]])
        c, m = ols_lines(self.lambdas, y)
        ref = np.polyfit(self.lambdas, y[0], 1)
        assert m[0] == pytest.approx(ref[0]) and c[0] == pytest.approx(ref[1])

    def test_constraints_inactive(self):
        y = np.array([[0.4, 0.38, 0.35, 0.33, 0.31], [0.6, 0.62, 0.65, 0.67, 0.69]])
        res = zne(ZneInput(self.lambdas, y, [occupancy_bounds([0, 1]), number_sum([0, 1], 1)]))
        c, m = ols_lines(self.lambdas, y)
        np.testing.assert_allclose(res.intercepts, c, atol=1e-10)
        assert res.kkt_residual < 1e-8

    def test_bound_active(self):
        # data trend drives the intercept below zero
        y = np.array([[0.05, 0.1, 0.15, 0.2, 0.25]])
        res = zne(ZneInput(self.lambdas, y, [occupancy_bounds([0])]))
        assert res.intercepts[0] == pytest.approx(0.0, abs=1e-10)
        assert res.active
        assert res.kkt_residual < 1e-8

    def test_imag_energy_bounds(self):
        b = imag_energy_bounds(3, 2, 0.5)
        assert b == Bounds((3,), -1.0, 0.0)

    def test_input_validation(self):
        with pytest.raises(ValueError):
            ZneInput([1.0], [[0.1]])
        with pytest.raises(ValueError):
            ZneInput([1.5, 2.0], [[0.1, 0.2]])
        with pytest.raises(ValueError):
            ZneInput([1.0, 2.0], [[0.1, 0.2, 0.3]])

    def test_unknown_constraint(self):
        with pytest.raises(TypeError):
            zne(ZneInput(self.lambdas, np.ones((1, 5)), ["bogus"]))


@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 6))
def test_unconstrained_zne_equals_least_squares(seed, K):
    r = np.random.default_rng(seed)
    lam = np.array([1.0, 1.25, 1.5, 1.75, 2.0])
    y = r.normal(size=(K, lam.size))
    res = zne(ZneInput(lam, y, [occupancy_bounds(range(K))]), constrained=False)
    for k in range(K):
        slope, icpt = np.polyfit(lam, y[k], 1)
        assert abs(res.intercepts[k] - icpt) < 1e-10
        assert abs(res.gradients[k] - slope) < 1e-10


@settings(max_examples=40)
@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 8), st.integers(1, 3))
def test_constrained_zne_kkt_and_cvxpy(seed, K, p):
    cp = pytest.importorskip("cvxpy")
    assume(p < K)
    r = np.random.default_rng(seed)
    lam = np.array([1.0, 1.25, 1.5, 1.75, 2.0])
    # noisy decaying occupancies that often violate the bounds at zero noise
    base = r.dirichlet(np.ones(K)) * p
    y = np.clip(base[:, None] * (1 - 0.2 * (lam - 1))[None, :] + 0.1 * r.normal(size=(K, 5)),
                -0.2, 1.2)
    cons = [occupancy_bounds(range(K)), number_sum(range(K), p)]
    res = zne(ZneInput(lam, y, cons))
    assert res.kkt_residual <= 1e-8
    c, m = cp.Variable(K), cp.Variable(K)
    resid = cp.hstack([c + m * l - y[:, i] for i, l in enumerate(lam)])
    lm = lam.max()
    prob = cp.Problem(cp.Minimize(cp.sum_squares(resid)),
                      [c >= 0, c <= 1, c + lm * m >= 0, c + lm * m <= 1,
                       cp.sum(c) == p, cp.sum(m) == 0])
    prob.solve()
    ours = np.sum((res.intercepts[:, None] + res.gradients[:, None] * lam[None, :] - y) ** 2)
    assert ours <= prob.value + 1e-6
    np.testing.assert_allclose(res.intercepts, c.value, atol=1e-4)


def test_solve_qp_small_problem():
    # min (x-2)^2 + (y-2)^2 s.t. x + y = 1, x >= 0.8
    G = 2 * np.eye(2)
    g = np.array([-4.0, -4.0])
    x, (leq, lin), kkt, _ = solve_qp(G, g, np.array([[1.0, 1.0]]), np.array([1.0]),
                                     np.array([[1.0, 0.0]]), np.array([0.8]))
    np.testing.assert_allclose(x, [0.8, 0.2], atol=1e-12)
    assert lin[0] > 0 and kkt < 1e-12


def test_solve_qp_infeasible():
    with pytest.raises(ValueError):
        solve_qp(np.eye(1), np.zeros(1), np.zeros((0, 1)), np.zeros(0),
                 np.array([[1.0], [-1.0]]), np.array([1.0, 0.0]))


def test_sum_constraint_type():
    assert number_sum([0, 1], 2) == SumEquals((0, 1), 2.0)
