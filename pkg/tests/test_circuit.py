import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st

from edgeburst.circuit import (
    Circuit,
    build_twirl_table,
    commutes,
    fold,
    group_commuting,
    lcu_step,
    pauli_rotation,
    trotter_step,
    twirl,
)
from edgeburst.engine import circuit_unitary, postselected_operator
from edgeburst.model import PauliTerm, pauli_matrix, terms_to_matrix

from helpers import equal_up_to_phase, random_circuit, reference_unitary

words = st.text(alphabet="IXYZ", min_size=1, max_size=4).filter(lambda w: set(w) != {"I"})


class TestConstruction:
    def test_validate_rejects_bad_qubit(self):
        c = Circuit(2)
        c.cx(0, 2)
        with pytest.raises(ValueError):
            c.validate()

    def test_validate_rejects_unwritten_condition(self):
        c = Circuit(1, 1)
        c.reset_conditional(0, 0)
        with pytest.raises(ValueError):
            c.validate()

    def test_non_finite_angle(self):
        with pytest.raises(ValueError):
            Circuit(1).rz(float("nan"), 0)

    def test_json_round_trip(self):
        c = Circuit(2, 1, global_phase=0.3)
        c.h(0).cx(0, 1).rz(0.25, 1).measure(1, 0).reset_conditional(1, 0)
        back = Circuit.from_json(c.to_json())
        assert back.to_dict() == c.to_dict()

    def test_counts(self):
        c = Circuit(2)
        c.h(0).cx(0, 1).rz(0.1, 1).cx(0, 1)
        assert c.count_by_arity() == (2, 2)
        assert c.gate_counts() == {"H": 1, "CX": 2, "RZ": 1}

    def test_compose_remaps_qubits(self):
        inner = Circuit(1)
        inner.x(0)
        outer = Circuit(3)
        outer.compose(inner, qubits=[2])
        assert outer.instructions[0].qubits == (2,)


class TestSimulatorAgainstKronecker:
    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_random_circuits(self, n, rng):
        for _ in range(5):
            c = random_circuit(rng, n, 30)
            np.testing.assert_allclose(circuit_unitary(c), reference_unitary(c), atol=1e-12)

    def test_big_endian_convention(self):
        c = Circuit(2)
        c.x(0)
        U = circuit_unitary(c)
        assert abs(U[0b10, 0b00]) == pytest.approx(1.0)


class TestPauliRotation:
    @given(words, st.floats(-3.0, 3.0))
    def test_matches_matrix_exponential(self, word, theta):
        c = pauli_rotation(word, theta)
        ref = sla.expm(-0.5j * theta * pauli_matrix(word))
        np.testing.assert_allclose(circuit_unitary(c, use_hints=False), ref, atol=1e-10)
        np.testing.assert_allclose(circuit_unitary(c, use_hints=True), ref, atol=1e-10)

    @given(words, st.floats(-3.0, 3.0))
    def test_controlled(self, word, theta):
        n = len(word)
        c = pauli_rotation(word, theta, control=n)
        R = sla.expm(-0.5j * theta * pauli_matrix(word))
        ref = np.kron(np.eye(1 << n), np.diag([1, 0])) + np.kron(R, np.diag([0, 1]))
        np.testing.assert_allclose(circuit_unitary(c, use_hints=False), ref, atol=1e-10)
        np.testing.assert_allclose(circuit_unitary(c), ref, atol=1e-10)

    def test_identity_rejected(self):
        with pytest.raises(ValueError):
            pauli_rotation("II", 0.1)


class TestTrotter:
    def test_commuting_terms_exact(self):
        terms = [PauliTerm(0.7, "ZI"), PauliTerm(-0.3, "IZ"), PauliTerm(0.2, "ZZ"),
                 PauliTerm(0.5, "II")]
        H = terms_to_matrix(terms, 2)
        np.testing.assert_allclose(circuit_unitary(trotter_step(terms, 0.4)),
                                   sla.expm(-0.4j * H), atol=1e-12)

    def test_first_order_error(self):
        terms = [PauliTerm(1.0, "X"), PauliTerm(1.0, "Z")]
        H = terms_to_matrix(terms, 1)
        errs = []
        for dt in (0.1, 0.05):
            U = circuit_unitary(trotter_step(terms, dt))
            errs.append(np.linalg.norm(U - sla.expm(-1j * dt * H), 2))
        assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.1)

    def test_commutation(self):
        assert commutes("XX", "ZZ")
        assert not commutes("XI", "ZI")
        terms = [PauliTerm(1, w) for w in ("XX", "ZZ", "XI", "ZI", "YY")]
        groups = group_commuting(terms)
        for g in groups:
            for a in g:
                for b in g:
                    assert commutes(a, b)
        assert sum(len(g) for g in groups) == len(terms)


class TestLcuStep:
    @pytest.mark.parametrize("w", [(0.5, 0.5), (0.3, 0.7)])
    def test_postselected_mixture(self, w):
        terms = [PauliTerm(0.8, "ZI"), PauliTerm(0.3, "XZ"), PauliTerm(0.1, "II")]
        plus, minus = trotter_step(terms, 0.3), trotter_step(terms, -0.3)
        step = lcu_step(plus, minus, w, ancilla=2)
        K = postselected_operator(step, 2)
        ref = w[0] / sum(w) * reference_unitary(plus) + w[1] / sum(w) * reference_unitary(minus)
        np.testing.assert_allclose(K, ref, atol=1e-12)
        np.testing.assert_allclose(postselected_operator(step, 2, use_hints=False), ref,
                                   atol=1e-12)

    def test_skeleton_mismatch(self):
        a, b = Circuit(1), Circuit(1)
        a.x(0)
        with pytest.raises(ValueError):
            lcu_step(a, b)


class TestTwirlFold:
    def test_table(self):
        table = build_twirl_table()
        assert len(table) == 16 and table.verify()

    @pytest.mark.parametrize("scale", [1.0, 1.5, 2.0, 3.0])
    def test_expected_gate_growth(self, scale):
        r = np.random.default_rng(0)
        c = random_circuit(r, 3, 400)
        sizes = [sum(fold(c, scale, r).count_by_arity()) for _ in range(20)]
        assert np.mean(sizes) / sum(c.count_by_arity()) == pytest.approx(scale, rel=0.03)

    def test_fold_keeps_measurements(self):
        c = Circuit(1, 1)
        c.h(0).measure(0, 0).reset_conditional(0, 0)
        f = fold(c, 3.0, np.random.default_rng(0))
        assert [i.kind for i in f.instructions] == ["gate"] * 3 + ["measure", "reset_conditional"]

    def test_scale_below_one(self):
        with pytest.raises(ValueError):
            fold(Circuit(1), 0.5, np.random.default_rng(0))


@given(st.integers(0, 2 ** 31 - 1), st.integers(2, 4))
def test_twirl_preserves_unitary(seed, n):
    r = np.random.default_rng(seed)
    c = random_circuit(r, n, 25)
    t = twirl(c, r)
    err, ph = equal_up_to_phase(reference_unitary(t), reference_unitary(c))
    assert err < 1e-10 and ph < 1e-10


@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([1.0, 1.25, 1.5, 1.75, 2.0, 3.0, 4.2]))
def test_fold_preserves_unitary(seed, scale):
    r = np.random.default_rng(seed)
    c = random_circuit(r, 3, 25)
    f = fold(c, scale, r)
    np.testing.assert_allclose(reference_unitary(f), reference_unitary(c), atol=1e-10)


@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([1.25, 2.0, 3.0]))
def test_twirl_then_fold(seed, scale):
    r = np.random.default_rng(seed)
    c = random_circuit(r, 3, 20)
    out = fold(twirl(c, r), scale, r)
    err, ph = equal_up_to_phase(reference_unitary(out), reference_unitary(c))
    assert err < 1e-10 and ph < 1e-10


