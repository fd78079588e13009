"""TOML experiment configuration with validation and shipped presets.

Validation errors carry the line of the offending key, located in the raw
text, so messages read ``file:line: message``.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .engine import NoiseModel
from .lcu import LcuSolution, solve_expansion
from .model import LadderParams

__all__ = [
    "ConfigError",
    "ModelConfig",
    "MitigationConfig",
    "ScanConfig",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "list_presets",
    "load_preset",
]


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based or None when unknown."""

    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.message = message
        self.line = line
        self.source = source
        where = f"{source}:{line}" if line else source
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class ModelConfig:
    N: int
    v1: float
    v2: float
    gamma: float
    interactions: dict = field(default_factory=dict)
    boundary: str = "open"

    def params(self) -> LadderParams:
        return LadderParams(self.N, self.v1, self.v2, self.gamma, dict(self.interactions),
                            self.boundary)


@dataclass(frozen=True)
class MitigationConfig:
    lambdas: tuple = (1.0, 1.25, 1.5, 1.75, 2.0)
    twirls: int = 16
    shots: int = 1000
    sub_registers: tuple | None = None
    calibration_shots: int = 20000


@dataclass(frozen=True)
class ScanConfig:
    ratios: tuple
    t_max: float
    steps: int
    drift_tol: float = 0.005


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment description.

    ``steps`` of None selects the automatic step rule.
    """

    name: str
    seed: int
    model: ModelConfig
    p: int
    initial_sites: tuple
    t_max: float
    steps: int | None
    lcu: Any
    record_every: int
    method: str
    mode: str
    shots: int
    noise: dict | None
    mitigation: MitigationConfig | None
    scan: ScanConfig | None
    vicinity: int
    termination: float
    oracle_steps: int
    directory: str
    plots: bool
    description: str = ""

    def params(self) -> LadderParams:
        return self.model.params()

    def noise_model(self) -> NoiseModel | None:
        if self.noise is None:
            return None
        n = dict(self.noise)
        ro = n.get("readout", (0.0, 0.0))
        return NoiseModel(n.get("p1", 0.0), n.get("p2", 0.0),
                          tuple(map(tuple, ro)) if ro and isinstance(ro[0], (list, tuple))
                          else tuple(ro), n.get("seed", self.seed),
                          n.get("virtual_rz", False))

    def lcu_spec(self, dt: float) -> str | LcuSolution:
        if isinstance(self.lcu, str):
            return self.lcu
        return solve_expansion(self.lcu["kappa"], self.lcu["pairs"], dt)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self), default=list))

    def config_hash(self) -> str:
        # output location and plotting do not change results
        d = {k: v for k, v in self.to_dict().items() if k not in ("directory", "plots")}
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# -- parsing -------------------------------------------------------------------

def _locate(text: str, table: str | None, key: str | None) -> int | None:
    """Line of ``key`` inside ``[table]`` (or of the table header)."""
    current = None
    header_line = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        m = re.match(r"^\[\s*([A-Za-z0-9_.\-]+)\s*\]$", line)
        if m:
            current = m.group(1)
            if current == table:
                header_line = no
            continue
        if current == table and key is not None and re.match(rf"^{re.escape(key)}\s*=", line):
            return no
    return header_line


class _Reader:
    def __init__(self, data: dict, text: str, source: str):
        self.data, self.text, self.source = data, text, source

    def fail(self, table, key, msg):
        raise ConfigError(msg, _locate(self.text, table, key), self.source)

    def table(self, name, required=True) -> dict | None:
        t = self.data.get(name)
        if t is None:
            if required:
                raise ConfigError(f"missing table [{name}]", None, self.source)
            return None
        if not isinstance(t, dict):
            self.fail(None, name, f"{name} must be a table")
        return t

    def get(self, table, key, kind, default=..., check=None, what=""):
        src = self.data if table is None else self.data.get(table, {})
        if key not in src:
            if default is ...:
                self.fail(table, None, f"missing key {key!r}" + (f" in [{table}]" if table else ""))
            return default
        val = src[key]
        if kind is float and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        if not isinstance(val, kind) or (kind in (int, float) and isinstance(val, bool)):
            self.fail(table, key, f"{key} must be of type {getattr(kind, '__name__', kind)}")
        if check is not None and not check(val):
            self.fail(table, key, f"{key} = {val!r} is invalid{': ' + what if what else ''}")
        return val


_KNOWN = {
    None: {"name", "seed", "description", "model", "particles", "evolution", "execution",
           "noise", "mitigation", "scan", "analysis", "outputs"},
    "model": {"N", "v1", "v2", "gamma", "interactions", "boundary"},
    "particles": {"p", "initial_sites"},
    "evolution": {"t_max", "steps", "lcu", "record_every", "method"},
    "execution": {"mode", "shots"},
    "noise": {"p1", "p2", "readout", "seed", "virtual_rz"},
    "mitigation": {"lambdas", "twirls", "shots", "sub_registers", "calibration_shots"},
    "scan": {"ratios", "t_max", "steps", "drift_tol"},
    "analysis": {"vicinity", "termination", "oracle_steps"},
    "outputs": {"directory", "plots"},
}


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    """Parse and validate TOML text."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"TOML syntax error: {exc}", int(m.group(1)) if m else None,
                          source) from None
    r = _Reader(data, text, source)
    for key in data:
        if key not in _KNOWN[None]:
            r.fail(None, key, f"unknown key {key!r}")
    for tname, keys in _KNOWN.items():
        if tname is None or not isinstance(data.get(tname), dict):
            continue
        for key in data[tname]:
            if key not in keys:
                r.fail(tname, key, f"unknown key {key!r} in [{tname}]")

    name = r.get(None, "name", str, "experiment")
    seed = r.get(None, "seed", int, 0, lambda v: v >= 0, "seed must be nonnegative")
    description = r.get(None, "description", str, "")

    r.table("model")
    N = r.get("model", "N", int, check=lambda v: v >= 1, what="N must be at least 1")
    v1 = r.get("model", "v1", float, check=lambda v: v >= 0)
    v2 = r.get("model", "v2", float, check=lambda v: v >= 0)
    gamma = r.get("model", "gamma", float, check=lambda v: v > 0, what="gamma must be positive")
    boundary = r.get("model", "boundary", str, "open", lambda v: v in ("open", "periodic"),
                     "expected 'open' or 'periodic'")
    raw_int = r.get("model", "interactions", dict, {})
    inter = {}
    for k, u in raw_int.items():
        if not re.fullmatch(r"[1-9][0-9]*", k) or isinstance(u, bool) \
                or not isinstance(u, (int, float)):
            r.fail("model", "interactions", f"interaction entry {k!r} = {u!r} is invalid")
        inter[int(k)] = float(u)
    model = ModelConfig(N, v1, v2, gamma, dict(sorted(inter.items())), boundary)

    scan = None
    if r.table("scan", required=False) is not None:
        ratios = r.get("scan", "ratios", list, check=lambda v: len(v) > 0 and all(
            isinstance(x, (int, float)) and x > 0 for x in v), what="positive ratios required")
        scan = ScanConfig(tuple(float(x) for x in ratios),
                          r.get("scan", "t_max", float, check=lambda v: v > 0),
                          r.get("scan", "steps", int, check=lambda v: v >= 1),
                          r.get("scan", "drift_tol", float, 0.005, lambda v: v > 0))

    parts = r.table("particles", required=scan is None) or {}
    p = r.get("particles", "p", int, 1, lambda v: 1 <= v <= 2 * N, "need 1 <= p <= 2N") \
        if parts else 1
    sites = r.get("particles", "initial_sites", list, []) if parts else []
    if parts:
        if len(sites) != p or any(not isinstance(s, int) or isinstance(s, bool) for s in sites):
            r.fail("particles", "initial_sites", f"initial_sites must list {p} integer sites")
        if len(set(sites)) != len(sites):
            r.fail("particles", "initial_sites", "initial sites must be distinct")
        if any(not 0 <= s < 2 * N for s in sites):
            r.fail("particles", "initial_sites", f"initial sites must lie in [0, {2 * N})")

    ev = r.table("evolution", required=scan is None) or {}
    t_max = r.get("evolution", "t_max", float, 1.0, lambda v: v > 0, "t_max must be positive")
    steps_raw = r.get("evolution", "steps", (int, str), "auto") if ev else "auto"
    if isinstance(steps_raw, str):
        if steps_raw != "auto":
            r.fail("evolution", "steps", "steps must be a positive integer or 'auto'")
        steps = None
    else:
        if steps_raw < 1:
            r.fail("evolution", "steps", "steps must be a positive integer or 'auto'")
        steps = steps_raw
    lcu = r.get("evolution", "lcu", (str, dict), "exact_onsite")
    if isinstance(lcu, str) and lcu not in ("exact_onsite", "exact_onsite_literal"):
        r.fail("evolution", "lcu", "lcu must be 'exact_onsite', 'exact_onsite_literal' "
                                   "or {kappa, pairs}")
    if isinstance(lcu, dict):
        if set(lcu) != {"kappa", "pairs"} or lcu["kappa"] != 2 or lcu["pairs"] != 1:
            r.fail("evolution", "lcu", "circuits support the solved expansion kappa=2, pairs=1")
        lcu = {"kappa": 2, "pairs": 1}
    record_every = r.get("evolution", "record_every", int, 1, lambda v: v >= 1)
    method = r.get("evolution", "method", str, "integral", lambda v: v in ("integral", "success"))

    r.table("execution", required=False)
    mode = r.get("execution", "mode", str, "exact", lambda v: v in ("exact", "shots"))
    shots = r.get("execution", "shots", int, 1000, lambda v: v >= 1)

    noise = None
    if r.table("noise", required=False) is not None:
        def prob(v):
            return 0 <= v < 1
        noise = {"p1": r.get("noise", "p1", float, 0.0, prob),
                 "p2": r.get("noise", "p2", float, 0.0, prob),
                 "seed": r.get("noise", "seed", int, seed),
                 "virtual_rz": r.get("noise", "virtual_rz", bool, False)}
        ro = r.get("noise", "readout", list, [0.0, 0.0])
        flat = [x for item in ro for x in (item if isinstance(item, list) else [item])]
        if not flat or any(isinstance(x, bool) or not isinstance(x, (int, float)) or not prob(x)
                           for x in flat):
            r.fail("noise", "readout", "readout probabilities must lie in [0, 1)")
        noise["readout"] = [list(map(float, i)) for i in ro] if isinstance(ro[0], list) \
            else list(map(float, ro))
        if isinstance(ro[0], list):
            n_qubits = max(1, math.ceil(math.log2(math.comb(2 * N, p)))) + 1
            if any(not isinstance(i, list) or len(i) != 2 for i in ro) or len(ro) != n_qubits:
                r.fail("noise", "readout", f"per-qubit readout needs {n_qubits} pairs "
                                           "(system register, then the ancilla)")

    mitigation = None
    if r.table("mitigation", required=False) is not None:
        lam = r.get("mitigation", "lambdas", list, [1, 1.25, 1.5, 1.75, 2])
        ok = len(lam) >= 2 and lam[0] == 1 and all(b > a for a, b in zip(lam, lam[1:]))
        if not ok:
            r.fail("mitigation", "lambdas", "lambdas must increase strictly from 1")
        subs = r.get("mitigation", "sub_registers", list, None)
        if subs is not None and any(not isinstance(g, list) or len(g) > 5 for g in subs):
            r.fail("mitigation", "sub_registers", "sub-registers are lists of at most 5 qubits")
        mitigation = MitigationConfig(
            tuple(float(x) for x in lam),
            r.get("mitigation", "twirls", int, 16, lambda v: v >= 1),
            r.get("mitigation", "shots", int, 1000, lambda v: v >= 1),
            None if subs is None else tuple(tuple(g) for g in subs),
            r.get("mitigation", "calibration_shots", int, 20000, lambda v: v >= 1000))
        if noise is None:
            r.fail("mitigation", None, "mitigation needs a [noise] table")

    vicinity = r.get("analysis", "vicinity", int, 1, lambda v: v >= 0)
    termination = r.get("analysis", "termination", float, 0.995, lambda v: 0 <= v <= 1,
                        "termination must lie in [0, 1]")
    oracle_steps = r.get("analysis", "oracle_steps", int, 2000, lambda v: v >= 10)
    directory = r.get("outputs", "directory", str, f"runs/{name}")
    plots = r.get("outputs", "plots", bool, True)
    return ExperimentConfig(name, seed, model, p, tuple(sites), t_max, steps, lcu, record_every,
                            method, mode, shots, noise, mitigation, scan, vicinity, termination,
                            oracle_steps, directory, plots, description)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return parse_config(text, str(path))


def list_presets() -> list[str]:
    root = resources.files("edgeburst") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def load_preset(name: str) -> ExperimentConfig:
    root = resources.files("edgeburst") / "presets"
    f = root / f"{name}.toml"
    if not f.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return parse_config(f.read_text(), f"preset:{name}")
