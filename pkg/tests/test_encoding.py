from itertools import combinations
from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from edgeburst.encoding import (
    bits_to_int,
    build_encoding,
    encode_site,
    int_to_bits,
    is_physical,
    occupancy_from_index,
    site_cell,
)


class TestSites:
    @pytest.mark.parametrize("x,sub,z", [(1, "a", 0), (1, "b", 1), (6, "a", 10), (6, "b", 11),
                                         (51, "a", 100)])
    def test_site_index(self, x, sub, z):
        assert encode_site(x, sub) == z
        assert site_cell(z) == (x, sub)

    @pytest.mark.parametrize("args", [(0, "a"), (3, "c"), (9, "a", 8)])
    def test_rejects(self, args):
        with pytest.raises(ValueError):
            encode_site(*args)


class TestSector:
    @pytest.mark.parametrize("N,p,D,nq", [(1, 1, 2, 1), (8, 1, 16, 4), (64, 1, 128, 7),
                                          (12, 2, 276, 9), (14, 2, 378, 9), (2, 4, 1, 1)])
    def test_dimensions(self, N, p, D, nq):
        enc = build_encoding(N, p)
        assert enc.D == D == comb(2 * N, p)
        assert enc.n_qubits == nq

    def test_lexicographic_order(self):
        enc = build_encoding(3, 2)
        expected = list(combinations(range(6), 2))
        assert [enc.unrank(i) for i in range(enc.D)] == expected
        assert [tuple(c) for c in enc.configs] == expected

    def test_single_particle_identity(self):
        enc = build_encoding(8, 1)
        assert [enc.rank([z]) for z in range(16)] == list(range(16))

    def test_occupations(self):
        enc = build_encoding(2, 2)
        occ = enc.occupations()
        assert occ.shape == (6, 4)
        np.testing.assert_array_equal(occ.sum(axis=1), 2)
        np.testing.assert_array_equal(occ[0], [1, 1, 0, 0])
        np.testing.assert_array_equal(occupancy_from_index(5, enc), [0, 0, 1, 1])

    def test_physical_strings(self):
        enc = build_encoding(3, 2)  # D = 15 on 4 qubits
        assert is_physical("1110", enc)
        assert not is_physical("1111", enc)

    @pytest.mark.parametrize("bad", [[0, 0], [0], [-1, 2], [0, 6]])
    def test_invalid_configuration(self, bad):
        with pytest.raises(ValueError):
            build_encoding(3, 2).rank(bad)

    def test_unrank_range(self):
        with pytest.raises(ValueError):
            build_encoding(3, 2).unrank(15)


@given(st.integers(1, 9).flatmap(lambda N: st.tuples(st.just(N), st.integers(1, min(4, 2 * N)))),
       st.data())
def test_rank_bijection(Np, data):
    N, p = Np
    enc = build_encoding(N, p)
    i = data.draw(st.integers(0, enc.D - 1))
    sites = enc.unrank(i)
    assert list(sites) == sorted(set(sites)) and len(sites) == p
    assert enc.rank(sites) == i
    assert enc.rank(list(reversed(sites))) == i


@given(st.integers(0, 2 ** 20 - 1), st.integers(20, 24))
def test_bits_round_trip(v, n):
    s = int_to_bits(v, n)
    assert len(s) == n and bits_to_int(s) == v
