import numpy as np
import pytest
import scipy.linalg as sla

from edgeburst import kernels
from edgeburst.circuit import Circuit, canonical_order, group_commuting, pauli_rotation
from edgeburst.engine import (
    EvolutionError,
    NoiseModel,
    StateVector,
    build_problem,
    build_step_circuit,
    evolve,
    measure_imaginary_energy,
    postselected_operator,
    prepare_maximally_mixed,
    run,
)
from edgeburst.experiments import initial_vector
from edgeburst.model import LadderParams, PauliTerm, pauli_matrix
from edgeburst.oracle import evolve_exact


@pytest.fixture(scope="module")
def ladder():
    return build_problem(LadderParams(4, 0.7, 1.0, 0.6), 1)


class TestRun:
    def test_bell_state(self):
        c = Circuit(2)
        c.h(0).cx(0, 1)
        sv = run(c)
        np.testing.assert_allclose(sv.amplitudes, [2 ** -0.5, 0, 0, 2 ** -0.5], atol=1e-14)

    def test_bell_counts(self):
        c = Circuit(2, 2)
        c.h(0).cx(0, 1).measure(0, 0).measure(1, 1)
        counts = run(c, mode="shots", shots=4000, rng=3)
        assert set(counts) == {"00", "11"}
        assert abs(counts["00"] - 2000) < 4 * np.sqrt(1000)

    def test_mid_circuit_reset(self):
        c = Circuit(1, 1)
        c.h(0).measure(0, 0).reset_conditional(0, 0)
        for seed in range(5):
            sv = run(c, rng=seed)
            assert abs(sv.amplitudes[0]) == pytest.approx(1.0)
            assert sv.weight == pytest.approx(0.5)

    def test_postselect(self):
        c = Circuit(2, 1)
        c.h(1).cx(1, 0).measure(1, 0)
        sv = run(c, postselect=1)
        assert sv.clbits == (1,)
        assert abs(sv.amplitudes[0b11]) == pytest.approx(1.0)
        assert sv.weight == pytest.approx(0.5)

    def test_readout_noise_rate(self):
        c = Circuit(1, 1)
        c.measure(0, 0)
        counts = run(c, mode="shots", shots=20000, noise=NoiseModel(readout=(0.1, 0.2)), rng=0)
        assert counts["1"] / 20000 == pytest.approx(0.1, abs=4 * np.sqrt(0.09 / 20000))

    def test_depolarizing_flips(self):
        # X errors flip the measured bit with probability 2/3 of p1
        c = Circuit(1, 1)
        c.x(0).x(0).measure(0, 0)
        counts = run(c, mode="shots", shots=50000, noise=NoiseModel(p1=0.3), rng=1)
        # two noisy gates; one-bit flip channel with q = 2/3 p per gate
        q = 2 / 3 * 0.3
        expected = 2 * q * (1 - q)
        assert counts["1"] / 50000 == pytest.approx(expected, abs=4 * np.sqrt(expected / 50000))

    def test_qubit_cap(self):
        with pytest.raises(MemoryError):
            run(Circuit(5), max_qubits=4)

    def test_noise_validation(self):
        with pytest.raises(ValueError):
            NoiseModel(p1=1.0)


class TestStepOperator:
    def test_step_matches_reference_product(self, ladder):
        dt = 0.07
        n = ladder.n_system
        K = postselected_operator(build_step_circuit(ladder, dt), n)
        U = np.eye(1 << n, dtype=complex)
        for t in canonical_order(ladder.hamiltonian.hermitian):
            U = sla.expm(-1j * dt * float(t.coefficient.real) * pauli_matrix(t.string)) @ U
        H_A = ladder.hamiltonian.split.antihermitian_generator
        loss = np.eye(1 << n, dtype=complex)
        loss[:8, :8] = sla.expm(-dt * H_A)
        np.testing.assert_allclose(K[:8, :8], (loss @ U)[:8, :8], atol=1e-12)

    def test_hints_do_not_change_operator(self, ladder):
        c = build_step_circuit(ladder, 0.05)
        np.testing.assert_allclose(postselected_operator(c, ladder.n_system, use_hints=True),
                                   postselected_operator(c, ladder.n_system, use_hints=False),
                                   atol=1e-12)

    def test_backward_step_rejected(self, ladder):
        with pytest.raises(ValueError):
            build_step_circuit(ladder, -0.1)


class TestEvolve:
    def test_exact_mode_tracks_oracle(self, ladder):
        res = evolve(ladder, [4], 3.0, 300)
        ref = evolve_exact(ladder.hamiltonian.matrix, initial_vector(ladder, [4]),
                           res.time_grid, ladder.encoding.occupations())
        assert np.max(np.abs(res.occupancies - ref.rho_occupancies)) < 0.02
        np.testing.assert_allclose(res.occupancies.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(np.diff(res.success_probability) <= 1e-12)

    def test_shots_mode_agrees_statistically(self, ladder):
        ex = evolve(ladder, [4], 2.0, 40, record_every=10)
        sh = evolve(ladder, [4], 2.0, 40, mode="shots", shots=4000, seed=5, record_every=10)
        sigma = np.sqrt(0.25 / sh.kept_shots.min())
        assert np.max(np.abs(sh.occupancies - ex.occupancies)) < 5 * sigma
        # survival ~ |K^m psi|^2 in exact mode
        assert np.max(np.abs(sh.success_probability - ex.success_probability)) < 0.05

    def test_counts_layout(self, ladder):
        res = evolve(ladder, [4], 1.0, 4, mode="shots", shots=500, seed=2, record_every=2)
        n = ladder.n_system
        for j, s in enumerate([0, 2, 4]):
            hist = res.counts[j]
            assert all(len(k) == s + n for k in hist)
            assert sum(hist.values()) == 500
            alive = sum(c for k, c in hist.items() if "1" not in k[:s])
            assert alive == res.kept_shots[j] + res.discarded_shots[j]

    def test_seeded_determinism(self, ladder):
        noise = NoiseModel(1e-3, 1e-2, (0.02, 0.03))
        a = evolve(ladder, [4], 1.0, 10, mode="shots", shots=300, noise=noise, seed=11)
        b = evolve(ladder, [4], 1.0, 10, mode="shots", shots=300, noise=noise, seed=11)
        np.testing.assert_array_equal(a.occupancies, b.occupancies)
        assert a.counts == b.counts
        assert a.meta["config_hash"] == b.meta["config_hash"]

    @pytest.mark.skipif("compiled" not in kernels.available_backends(),
                        reason="compiled kernels not built")
    def test_backends_agree(self, ladder):
        noise = NoiseModel(1e-3, 1e-2, (0.02, 0.03))
        kw = dict(mode="shots", shots=300, noise=noise, seed=4)
        a = evolve(ladder, [4], 1.0, 10, backend=kernels.get_backend("compiled"), **kw)
        b = evolve(ladder, [4], 1.0, 10, backend=kernels.get_backend("python"), **kw)
        np.testing.assert_array_equal(a.occupancies, b.occupancies)

    def test_all_shots_fail(self):
        problem = build_problem(LadderParams(1, 0.5, 0.0, 40.0), 2)
        with pytest.raises(EvolutionError):
            evolve(problem, [0, 1], 2.0, 2, mode="shots", shots=50, seed=0)

    def test_noise_needs_shots(self, ladder):
        with pytest.raises(ValueError):
            evolve(ladder, [4], 1.0, 2, noise=NoiseModel(p1=0.01))

    @pytest.mark.parametrize("bad", [[0, 1], [99], "thermal"])
    def test_bad_initial(self, ladder, bad):
        with pytest.raises(ValueError):
            evolve(ladder, bad, 1.0, 2)

    def test_record_every(self, ladder):
        res = evolve(ladder, [4], 1.0, 10, record_every=4)
        np.testing.assert_allclose(res.time_grid, [0, 0.4, 0.8, 1.0])


class TestImaginaryEnergy:
    def test_state_and_counts(self, ladder):
        rng = np.random.default_rng(0)
        terms = ladder.hamiltonian.loss
        psi = rng.normal(size=8) + 1j * rng.normal(size=8)
        psi /= np.linalg.norm(psi)
        full = np.zeros(8, dtype=complex)
        full[:] = psi
        exact = measure_imaginary_energy(StateVector(full, 3), terms)
        H_A = ladder.hamiltonian.split.antihermitian_generator
        assert exact == pytest.approx(-np.real(psi.conj() @ H_A @ psi))
        probs = np.abs(psi) ** 2
        counts = {format(i, "03b"): int(round(p * 1e6)) for i, p in enumerate(probs)}
        assert measure_imaginary_energy(counts, terms) == pytest.approx(exact, abs=1e-5)

    def test_grouped_counts(self):
        # state |00>; the XX group is measured after H on both qubits (uniform outcomes)
        terms = [PauliTerm(0.5, "XX"), PauliTerm(0.25, "ZZ"), PauliTerm(0.3, "ZI")]
        groups = [[terms[0]], [terms[1], terms[2]]]
        per_group = {0: {"00": 250, "01": 250, "10": 250, "11": 250}, 1: {"00": 1000}}
        assert measure_imaginary_energy(per_group, terms, groups) == pytest.approx(-0.55)

    def test_non_diagonal_counts_need_groups(self):
        with pytest.raises(ValueError):
            measure_imaginary_energy({"0": 1}, [PauliTerm(1.0, "X")])

    def test_missing_group(self):
        terms = [PauliTerm(1.0, "X"), PauliTerm(1.0, "Z")]
        with pytest.raises(ValueError):
            measure_imaginary_energy({0: {"0": 1}}, terms, [[terms[0]], [terms[1]]])

    def test_maximally_mixed(self, ladder):
        assert list(prepare_maximally_mixed(ladder.encoding)) == list(range(8))
        draws = prepare_maximally_mixed(ladder.encoding, "shots", 8000, 0)
        assert draws.max() < 8
        assert np.bincount(draws).min() > 850
