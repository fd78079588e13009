import gzip

import numpy as np

from edgeburst.analysis import escape_from_occupancies
from edgeburst.outputs import (
    Provenance,
    read_counts,
    read_csv,
    write_counts,
    write_escape,
    write_escape_curves,
    write_json,
    write_scan,
    write_spectrum,
    write_timeseries,
)


def prov():
    return Provenance("abc123", 7)


def profile():
    t = np.linspace(0, 1, 3)
    return escape_from_occupancies(t, np.array([[0.1, 0.2]] * 3), np.ones(3), 0.5)


class TestCsv:
    def test_provenance_header(self, tmp_path):
        p = write_timeseries(tmp_path / "ts.csv", prov(), [0.0, 0.5], np.eye(2), [1.0, 0.9])
        text = p.read_text().splitlines()
        assert text[0] == "# config_hash=abc123"
        assert text[1] == "# seed=7"
        assert text[2].startswith("# version=")
        assert text[3] == "t,site,value,S_t"
        meta, rows = read_csv(p)
        assert meta["seed"] == "7" and len(rows) == 4
        assert rows[1] == {"t": "0.0", "site": "1", "value": "0.0", "S_t": "1.0"}

    def test_float_round_trip(self, tmp_path):
        x = 0.1 + 0.2
        write_timeseries(tmp_path / "a.csv", prov(), [0.0], np.array([[x]]))
        _, rows = read_csv(tmp_path / "a.csv")
        assert float(rows[0]["value"]) == x

    def test_escape_files(self, tmp_path):
        prof = profile()
        meta, rows = read_csv(write_escape(tmp_path / "e.csv", prov(), prof))
        assert [r["x"] for r in rows] == ["1", "2"]
        assert float(meta["residual"]) == prof.residual
        _, rows = read_csv(write_escape_curves(tmp_path / "c.csv", prov(), prof))
        assert len(rows) == 6 and set(rows[0]) == {"t", "x", "P_x_t"}

    def test_spectrum_sorted(self, tmp_path):
        _, rows = read_csv(write_spectrum(tmp_path / "s.csv", prov(),
                                          {1.0: np.array([1 - 1j, -1 + 0j, 0.5 - 1j])}))
        assert [float(r["im"]) for r in rows] == [-1.0, -1.0, 0.0]
        assert [float(r["re"]) for r in rows] == [0.5, 1.0, -1.0]

    def test_scan(self, tmp_path):
        cols = {"ratio": [0.5], "engine_max_im": [-0.01], "oracle_max_im": [0.0],
                "oracle_min_im": [-0.6], "oracle_gap": [0.0], "converged": [True]}
        _, rows = read_csv(write_scan(tmp_path / "s.csv", prov(), cols))
        assert rows[0]["converged"] == "1"

    def test_json(self, tmp_path):
        import json
        p = write_json(tmp_path / "x.json", prov(), {"arr": np.arange(2), "v": np.float64(1.5)})
        d = json.loads(p.read_text())
        assert d["arr"] == [0, 1] and d["config_hash"] == "abc123"


class _Run:
    def __init__(self, counts):
        self.time_grid = np.array([0.0, 0.5, 1.0])
        self.meta = {"steps": 2}
        self.counts = counts


def test_counts_round_trip_and_determinism(tmp_path):
    runs = {(0, 0): _Run([{"01": 3}, {"001": 2, "101": 1}, {"0010": 3}]),
            (1, 0): _Run([{"00": 3}, {"000": 3}, {"0000": 2, "1100": 1}])}
    a = write_counts(tmp_path / "a.csv.gz", prov(), runs, [1.0, 2.0])
    b = write_counts(tmp_path / "b.csv.gz", prov(), runs, [1.0, 2.0])
    assert a.read_bytes() == b.read_bytes()
    with gzip.open(a, "rt") as fh:
        assert "lambda,twirl,step,bitstring,count" in fh.read()
    meta, table = read_counts(a)
    assert meta["config_hash"] == "abc123"
    assert table[(2.0, 0)][2] == {"0000": 2, "1100": 1}
    assert table[(1.0, 0)][1] == {"001": 2, "101": 1}
