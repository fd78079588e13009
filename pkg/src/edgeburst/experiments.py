"""Experiment pipelines shared by the command line and the test-suite.

Each pipeline couples the circuit engine with the dense reference solver so
that every quantity is available from both routes.
"""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .analysis import (
    EscapeProfile,
    SpectralPoint,
    escape_from_occupancies,
    escape_from_run,
    recover_norm_integral,
)
from .circuit import Circuit, fold, twirl
from .engine import LadderProblem, NoiseModel, RunResult, build_problem, evolve
from .mitigation import (
    CalibrationSet,
    ZneInput,
    calibrate,
    number_sum,
    occupancy_bounds,
    postselected_distribution,
    zne,
)
from .model import LadderParams, build_single_particle, dissipative_gap
from .oracle import escape_profile, evolve_exact, spectrum

__all__ = [
    "initial_vector",
    "oracle_escape",
    "oracle_occupancies",
    "engine_escape",
    "base_steps",
    "AutoStepResult",
    "auto_steps",
    "spectral_point",
    "spectral_scan",
    "pbc_spectrum",
    "vicinity_cells",
    "MitigationReport",
    "noisy_runs",
    "mitigated_escape",
    "runs_from_counts",
]

log = logging.getLogger(__name__)


def initial_vector(problem: LadderProblem, sites: Sequence[int]) -> np.ndarray:
    """Sector-basis vector of the product state occupying ``sites``."""
    psi = np.zeros(problem.encoding.D, dtype=complex)
    psi[problem.encoding.rank(sorted(int(s) for s in sites))] = 1.0
    return psi


def oracle_escape(problem: LadderProblem, sites: Sequence[int], t_max: float,
                  n_steps: int = 2000) -> EscapeProfile:
    """Reference escape profile from the dense propagator."""
    return escape_profile(problem.hamiltonian.matrix, initial_vector(problem, sites),
                          problem.params.gamma, t_max, problem.encoding.occupations(), n_steps)


def oracle_occupancies(problem: LadderProblem, sites: Sequence[int], time_grid) -> np.ndarray:
    """Normalized-state occupancies from the dense propagator on ``time_grid``."""
    ev = evolve_exact(problem.hamiltonian.matrix, initial_vector(problem, sites), time_grid,
                      problem.encoding.occupations())
    return ev.rho_occupancies


def engine_escape(problem: LadderProblem, sites, t_max: float, steps: int,
                  method: str = "integral", **kw) -> tuple[RunResult, EscapeProfile]:
    """Run the circuit engine and convert its occupancies into escape probabilities."""
    res = evolve(problem, sites, t_max, steps, **kw)
    return res, escape_from_run(res, problem.params.gamma, method)


def base_steps(problem: LadderProblem, t_max: float, bound: float = 0.05) -> int:
    """Smallest ``m`` with ``gamma dt`` and ``max|coefficient| dt`` both at most ``bound``."""
    rate = max(problem.params.gamma, problem.hamiltonian.max_coefficient())
    return max(1, math.ceil(t_max * rate / bound - 1e-9))


@dataclass(frozen=True)
class AutoStepResult:
    """Outcome of the step-doubling rule."""

    steps: int
    result: RunResult
    profile: EscapeProfile
    history: tuple
    converged: bool


def auto_steps(problem: LadderProblem, sites, t_max: float, tol: float = 0.005,
               max_doublings: int = 6, bound: float = 0.05, **kw) -> AutoStepResult:
    """Double ``m`` from :func:`base_steps` until ``max|dP_x| < tol``."""
    m = base_steps(problem, t_max, bound)
    res, prof = engine_escape(problem, sites, t_max, m, **kw)
    history = [(m, float("nan"))]
    for _ in range(max_doublings):
        res2, prof2 = engine_escape(problem, sites, t_max, 2 * m, **kw)
        change = float(np.max(np.abs(prof2.final_Px - prof.final_Px)))
        m, res, prof = 2 * m, res2, prof2
        history.append((m, change))
        if change < tol:
            return AutoStepResult(m, res, prof, tuple(history), True)
    return AutoStepResult(m, res, prof, tuple(history), False)


def vicinity_cells(sites: Sequence[int], width: int = 1) -> set[int]:
    """Cells within ``width`` of any initially occupied cell (1-based)."""
    out: set[int] = set()
    for s in sites:
        x = int(s) // 2 + 1
        out.update(range(x - width, x + width + 1))
    return out


# -- spectra -------------------------------------------------------------------

def pbc_spectrum(params: LadderParams):
    """Dense spectrum of the single-particle ring."""
    return spectrum(build_single_particle(params.with_(boundary="periodic")))


def spectral_point(params: LadderParams, t_max: float, steps: int, drift_tol: float = 0.005,
                   **kw) -> tuple[SpectralPoint, RunResult]:
    """Gibbs-ensemble purification estimate of ``max Im E`` for one parameter point.

    The engine estimate is the imaginary energy of the surviving ensemble at
    ``t_max``; the point is flagged when the last two recorded values differ by
    more than ``drift_tol * gamma``.
    """
    ring = params.with_(boundary="periodic")
    problem = build_problem(ring, 1)
    res = evolve(problem, "gibbs", t_max, steps, **kw)
    est = float(res.imag_energy[-1])
    drift = abs(res.imag_energy[-1] - res.imag_energy[-2]) if res.imag_energy.size > 1 else 0.0
    eig = spectrum(problem.hamiltonian.matrix)
    gap = dissipative_gap(ring).gap
    ratio = params.v1 / params.v2
    point = SpectralPoint(ratio, est, eig.max_im, eig.min_im, gap,
                          bool(drift <= drift_tol * params.gamma))
    return point, res


def _spectral_job(args):
    params, t_max, steps, drift_tol, kw = args
    return spectral_point(params, t_max, steps, drift_tol, **kw)[0]


def spectral_scan(base: LadderParams, ratios: Sequence[float], t_max: float, steps: int,
                  drift_tol: float = 0.005, threads: int = 1, **kw) -> list[SpectralPoint]:
    """Scan ``v1 / v2`` at fixed ``v2``; results are sorted by ratio."""
    jobs = [(base.with_(v1=r * base.v2), t_max, steps, drift_tol, kw) for r in sorted(ratios)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(_spectral_job, jobs))
    return [_spectral_job(j) for j in jobs]


# -- mitigation pipeline -------------------------------------------------------

@dataclass
class MitigationReport:
    """Escape profiles with and without mitigation, compared with the oracle.

    Attributes
    ----------
    lambdas : ndarray
    time_grid : ndarray
    raw : ndarray, shape (L, T, n_sites)
        Twirl-averaged raw occupancies at each noise scale.
    readout : ndarray, shape (L, T, n_sites)
        Same after readout inversion.
    extrapolated : ndarray, shape (T, n_sites)
        Zero-noise estimates from the readout-corrected data.
    profiles : dict
        ``'raw'``, ``'readout'``, ``'full'`` and ``'oracle'`` escape profiles.
    errors : dict
        Mean absolute error of the final escape probabilities vs the oracle.
    kkt : float
        Largest KKT residual over all regressions.
    calibration : CalibrationSet
    """

    lambdas: np.ndarray
    time_grid: np.ndarray
    raw: np.ndarray
    readout: np.ndarray
    extrapolated: np.ndarray
    profiles: dict
    errors: dict
    kkt: float
    calibration: CalibrationSet
    meta: dict = field(default_factory=dict)


def _folded_twirl(scale: float) -> Callable[[Circuit, np.random.Generator], Circuit]:
    def transform(circ: Circuit, rng: np.random.Generator) -> Circuit:
        return fold(twirl(circ, rng), scale, rng)
    return transform


def _instance(args):
    problem, sites, t_max, steps, scale, shots, noise, seed, record_every = args
    return evolve(problem, sites, t_max, steps, mode="shots", shots=shots, noise=noise,
                  seed=seed, record_every=record_every, step_transform=_folded_twirl(scale))


def noisy_runs(problem: LadderProblem, sites, t_max: float, steps: int,
               lambdas: Sequence[float], twirls: int, shots: int, noise: NoiseModel,
               seed: int = 0, record_every: int = 1, threads: int = 1) -> dict:
    """Shot-mode runs for every ``(lambda, twirl)`` pair.

    Seeds are spawned from ``seed`` per pair, so results do not depend on the
    number of workers. Returns ``{(i_lambda, i_twirl): RunResult}``.
    """
    children = np.random.SeedSequence(seed).spawn(len(lambdas) * twirls)
    keys, jobs = [], []
    for li, lam in enumerate(lambdas):
        for k in range(twirls):
            child = int(children[li * twirls + k].generate_state(1)[0])
            keys.append((li, k))
            jobs.append((problem, sites, t_max, steps, float(lam), shots, noise, child,
                         record_every))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(_instance, jobs))
    else:
        out = [_instance(j) for j in jobs]
    return dict(sorted(zip(keys, out)))


def _readout_occupancies(run: RunResult, problem: LadderProblem, cal: CalibrationSet,
                         marks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Readout-corrected occupancies and mitigated kept-shot weights per mark."""
    n = problem.n_system
    D = problem.encoding.D
    occ_table = problem.encoding.occupations().astype(float)
    occ = np.zeros((len(marks), problem.n_sites))
    kept = np.zeros(len(marks))
    for j, s in enumerate(marks):
        try:
            dist, k = postselected_distribution(run.counts[j], int(s), [n], list(range(n)), cal)
        except ValueError:
            occ[j], kept[j] = np.nan, 0.0
            continue
        phys = dist[:D]
        if phys.sum() <= 0:
            occ[j], kept[j] = np.nan, 0.0
            continue
        occ[j] = phys @ occ_table / phys.sum()
        kept[j] = k * phys.sum()
    return occ, kept


def _pool(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Weighted mean over axis 0 ignoring empty entries."""
    w = np.where(np.isnan(values).any(axis=-1), 0.0, weights)
    v = np.nan_to_num(values)
    tot = w.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.einsum("kt,kts->ts", w, v) / tot[:, None]
    return out


def _fill_gaps(occ: np.ndarray) -> np.ndarray:
    """Carry the last finite row forward over times without surviving shots."""
    out = occ.copy()
    for j in range(1, out.shape[0]):
        if not np.all(np.isfinite(out[j])):
            out[j] = out[j - 1]
    return out


def mitigated_escape(problem: LadderProblem, sites, t_max: float, steps: int,
                     noise: NoiseModel, lambdas: Sequence[float] = (1, 1.25, 1.5, 1.75, 2),
                     twirls: int = 16, shots: int = 1000, sub_registers=None,
                     calibration_shots: int = 20000, seed: int = 0, record_every: int = 1,
                     threads: int = 1, runs: dict | None = None,
                     calibration: CalibrationSet | None = None) -> MitigationReport:
    """Raw, readout-corrected and fully mitigated escape profiles.

    Readout inversion contracts every ancilla layer with the success outcome
    and inverts the system layer; twirl instances are pooled with their
    (mitigated) surviving-shot weights; zero-noise extrapolation is done per
    recorded time over all site occupancies under the occupancy and
    particle-number constraints.
    """
    n = problem.n_system
    lambdas = np.asarray(lambdas, dtype=float)
    if sub_registers is None:
        qubits = list(range(n + 1))
        sub_registers = [qubits[i:i + 5] for i in range(0, n + 1, 5)]
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    cal = calibration or calibrate(noise, sub_registers, calibration_shots, n_qubits=n + 1,
                                   rng=rng)
    if runs is None:
        runs = noisy_runs(problem, sites, t_max, steps, lambdas, twirls, shots, noise, seed,
                          record_every, threads)
    first = next(iter(runs.values()))
    t = first.time_grid
    marks = np.rint(t / (t_max / steps)).astype(int)
    L, T, S = len(lambdas), len(t), problem.n_sites
    raw = np.zeros((L, T, S))
    ro = np.zeros((L, T, S))
    for li in range(L):
        inst = [runs[(li, k)] for k in range(twirls)]
        raw[li] = _fill_gaps(_pool(np.array([r.occupancies for r in inst]),
                                   np.array([r.kept_shots for r in inst], dtype=float)))
        pairs = [_readout_occupancies(r, problem, cal, marks) for r in inst]
        ro[li] = _fill_gaps(_pool(np.array([p[0] for p in pairs]),
                                  np.array([p[1] for p in pairs])))
    constraints = [occupancy_bounds(range(S)), number_sum(range(S), problem.p)]
    ext = np.zeros((T, S))
    kkt = 0.0
    for j in range(T):
        fit = zne(ZneInput(lambdas, ro[:, j, :].T, constraints))
        ext[j] = fit.intercepts
        kkt = max(kkt, fit.kkt_residual)
    gamma = problem.params.gamma

    def profile(occ):
        nb = np.clip(occ[:, 1::2], 0.0, None)
        a = recover_norm_integral(t, nb.sum(axis=1), gamma)
        return escape_from_occupancies(t, nb, a, gamma)

    oracle = oracle_escape(problem, sites, t_max)
    profiles = {"raw": profile(raw[0]), "readout": profile(ro[0]), "full": profile(ext),
                "oracle": oracle}
    errors = {k: float(np.mean(np.abs(v.final_Px - oracle.final_Px)))
              for k, v in profiles.items() if k != "oracle"}
    if not all(np.isfinite(list(errors.values()))):
        warnings.warn("mitigation produced non-finite escape probabilities", RuntimeWarning,
                      stacklevel=2)
    return MitigationReport(lambdas, t, raw, ro, ext, profiles, errors, kkt, cal,
                            {"seed": seed, "shots": shots, "twirls": twirls, "steps": steps})


def runs_from_counts(table: dict, problem: LadderProblem, t_max: float, steps: int,
                     lambdas: Sequence[float]) -> dict:
    """Rebuild shot-mode run records from a counts table.

    ``table`` maps ``(lambda, twirl)`` to ``{step: {bitstring: count}}`` as
    returned by :func:`edgeburst.outputs.read_counts`. Raw occupancies are
    re-tallied from shots whose ancilla record is all zeros.
    """
    n = problem.n_system
    D = problem.encoding.D
    occ_table = problem.encoding.occupations().astype(float)
    dt = t_max / steps
    index = {float(l): i for i, l in enumerate(lambdas)}
    out = {}
    for (lam, k), per_step in table.items():
        if float(lam) not in index:
            raise ValueError(f"counts contain an unexpected noise scale {lam}")
        marks = sorted(per_step)
        T = len(marks)
        occ = np.full((T, problem.n_sites), np.nan)
        kept = np.zeros(T, dtype=np.int64)
        disc = np.zeros(T, dtype=np.int64)
        surv = np.zeros(T)
        counts = []
        for j, s in enumerate(marks):
            hist = per_step[s]
            counts.append(hist)
            tally = np.zeros(D)
            total = alive = 0
            for key, c in hist.items():
                total += c
                if "1" in key[:s]:
                    continue
                alive += c
                v = int(key[s:], 2)
                if v < D:
                    tally[v] += c
                else:
                    disc[j] += c
            kept[j] = int(tally.sum())
            surv[j] = alive / total
            if kept[j]:
                occ[j] = tally @ occ_table / kept[j]
        with np.errstate(divide="ignore"):
            logs = np.log(surv)
        out[(index[float(lam)], k)] = RunResult(
            np.array(marks) * dt, occ, surv, logs, np.full(T, np.nan), counts, disc, kept,
            {"steps": steps, "n_system": n})
    missing = {(i, k) for i in range(len(lambdas)) for k in {kk for _, kk in out}} - set(out)
    if missing:
        raise ValueError(f"counts are missing noise scale / twirl pairs {sorted(missing)}")
    return dict(sorted(out.items()))
