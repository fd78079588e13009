"""CSV and JSON writers for run artifacts.

Every file starts with provenance: CSV files carry ``# key=value`` comment
lines (config hash, seed, package version) before the header row; JSON files
carry the same keys at the top level. Floats are written with ``repr`` so
identical inputs give byte-identical files.
"""
from __future__ import annotations

import csv
import gzip
import io
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import __version__

__all__ = [
    "Provenance",
    "write_csv",
    "read_csv",
    "write_json",
    "write_timeseries",
    "write_escape",
    "write_escape_curves",
    "write_spectrum",
    "write_scan",
    "write_counts",
    "read_counts",
]


class Provenance(dict):
    """Header fields written into every artifact."""

    def __init__(self, config_hash: str, seed: int, **extra):
        super().__init__(config_hash=config_hash, seed=int(seed), version=__version__, **extra)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _render(prov: Mapping, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    for k in sorted(prov):
        buf.write(f"# {k}={prov[k]}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_csv(path: str | Path, prov: Mapping, header: Sequence[str],
              rows: Iterable[Sequence]) -> Path:
    """Write a CSV file (gzip-compressed when the name ends in ``.gz``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = _render(prov, header, rows)
    if path.suffix == ".gz":
        with open(path, "wb") as fh:
            # fixed mtime keeps compressed output deterministic
            with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0, filename="") as gz:
                gz.write(text.encode())
    else:
        path.write_text(text)
    return path


def read_csv(path: str | Path) -> tuple[dict, list[dict]]:
    """Return ``(provenance, rows)`` of a file written by :func:`write_csv`."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt") as fh:
        lines = fh.read().splitlines()
    prov = {}
    body = []
    for line in lines:
        if line.startswith("# "):
            k, _, v = line[2:].partition("=")
            prov[k] = v
        else:
            body.append(line)
    return prov, list(csv.DictReader(body))


def write_json(path: str | Path, prov: Mapping, payload: Mapping) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = {**prov, **payload}
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (set, tuple)):
        return list(o)
    return str(o)


def write_timeseries(path, prov, time_grid, occupancies, success=None) -> Path:
    """Long-format series: ``t, site, value, S_t``."""
    t = np.asarray(time_grid)
    occ = np.asarray(occupancies)
    s = np.full(t.size, np.nan) if success is None else np.asarray(success)
    rows = ((t[j], z, occ[j, z], s[j]) for j in range(t.size) for z in range(occ.shape[1]))
    return write_csv(path, prov, ["t", "site", "value", "S_t"], rows)


def write_escape(path, prov, profile) -> Path:
    """Final escape probabilities: ``x, P_x`` plus the unescaped residual."""
    rows = [(x, p) for x, p in zip(profile.cells, profile.final_Px)]
    return write_csv(path, {**prov, "residual": repr(float(profile.residual))}, ["x", "P_x"], rows)


def write_escape_curves(path, prov, profile) -> Path:
    """Escape probability curves: ``t, x, P_x_t``."""
    t = profile.time_grid
    px = profile.P_x_of_t
    rows = ((t[j], x + 1, px[j, x]) for j in range(t.size) for x in range(px.shape[1]))
    return write_csv(path, prov, ["t", "x", "P_x_t"], rows)


def write_spectrum(path, prov, spectra: Mapping[float, np.ndarray]) -> Path:
    """Eigenvalues per scan point: ``ratio, index, re, im`` sorted by (Im, Re)."""
    rows = []
    for ratio in sorted(spectra):
        ev = np.asarray(spectra[ratio])
        order = np.lexsort((ev.real, ev.imag))
        rows += [(ratio, i, ev[k].real, ev[k].imag) for i, k in enumerate(order)]
    return write_csv(path, prov, ["ratio", "index", "re", "im"], rows)


def write_scan(path, prov, columns: Mapping[str, np.ndarray]) -> Path:
    keys = ["ratio", "engine_max_im", "oracle_max_im", "oracle_min_im", "oracle_gap", "converged"]
    rows = zip(*(columns[k] for k in keys))
    return write_csv(path, prov, keys, rows)


def write_counts(path, prov, runs: Mapping[tuple, object], lambdas: Sequence[float]) -> Path:
    """Layered counts of shot-mode runs: ``lambda, twirl, step, bitstring, count``.

    ``bitstring`` holds the ancilla record of steps ``1..step`` followed by
    the system register.
    """
    def rows():
        for (li, k), res in sorted(runs.items()):
            steps = np.rint(res.time_grid / (res.time_grid[-1] / res.meta["steps"])).astype(int)
            for j, hist in enumerate(res.counts):
                for key in sorted(hist):
                    yield (lambdas[li], k, steps[j], key, hist[key])
    return write_csv(path, prov, ["lambda", "twirl", "step", "bitstring", "count"], rows())


def read_counts(path) -> tuple[dict, dict]:
    """Inverse of :func:`write_counts`: ``{(lambda, twirl): {step: {key: count}}}``."""
    prov, rows = read_csv(path)
    out: dict = {}
    for r in rows:
        key = (float(r["lambda"]), int(r["twirl"]))
        out.setdefault(key, {}).setdefault(int(r["step"]), {})[r["bitstring"]] = int(r["count"])
    return prov, out
