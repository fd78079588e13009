"""Command-line driver.

Verbs: ``evolve``, ``spectral``, ``oracle``, ``mitigate``, ``calibrate``.
Exit codes: 0 success, 2 configuration error, 3 non-convergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import assemble_scan, is_terminated
from .config import ConfigError, ExperimentConfig, list_presets, load_config, load_preset
from .engine import EvolutionError, build_problem
from .experiments import (
    auto_steps,
    engine_escape,
    mitigated_escape,
    noisy_runs,
    oracle_escape,
    oracle_occupancies,
    pbc_spectrum,
    runs_from_counts,
    spectral_scan,
    vicinity_cells,
)
from .mitigation import CalibrationSet, calibrate
from .outputs import (
    Provenance,
    read_counts,
    write_counts,
    write_escape,
    write_escape_curves,
    write_json,
    write_scan,
    write_spectrum,
    write_timeseries,
)

__all__ = ["main", "build_parser"]

log = logging.getLogger("edgeburst")

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED = 0, 2, 3


class NotConverged(RuntimeError):
    """A run finished but failed its convergence or termination check."""


def _load(args) -> ExperimentConfig:
    if bool(args.config) == bool(args.preset):
        raise ConfigError("give exactly one of --config or --preset")
    cfg = load_config(args.config) if args.config else load_preset(args.preset)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["directory"] = str(args.out)
    return replace(cfg, **changes) if changes else cfg


def _prov(cfg: ExperimentConfig) -> Provenance:
    return Provenance(cfg.config_hash(), cfg.seed)


def _plots(cfg):
    if not cfg.plots:
        return None
    from . import plotting
    return plotting


def _summary(profile, sites, width):
    near = vicinity_cells(sites, width)
    outside = [x for x in profile.cells if x not in near]
    order = [int(x) for x in sorted(outside, key=lambda x: -profile.final_Px[x - 1])]
    return {
        "P_x": profile.final_Px.tolist(),
        "P_total": float(profile.P_of_t[-1]),
        "residual": float(profile.residual),
        "argmax_cell": profile.argmax_cell(),
        "vicinity": sorted(near),
        "ranked_outside_vicinity": order[:4],
    }


# -- verbs ---------------------------------------------------------------------

def cmd_oracle(cfg: ExperimentConfig, threads: int = 1) -> dict:
    """Reference outputs only; no circuits are built."""
    out = Path(cfg.directory)
    prov = _prov(cfg)
    plt = _plots(cfg)
    if cfg.scan is not None:
        spectra = {r: pbc_spectrum(cfg.params().with_(v1=r * cfg.model.v2)).eigenvalues
                   for r in cfg.scan.ratios}
        write_spectrum(out / "spectra.csv", prov, spectra)
        if plt:
            plt.plot_spectra(out / "spectra.png", prov, spectra)
        return {"spectra": len(spectra)}
    problem = build_problem(cfg.params(), cfg.p)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        prof = oracle_escape(problem, cfg.initial_sites, cfg.t_max, cfg.oracle_steps)
    stride = max(1, cfg.oracle_steps // 400)
    grid = prof.time_grid[::stride]
    occ = oracle_occupancies(problem, cfg.initial_sites, grid)
    write_timeseries(out / "oracle_timeseries.csv", prov, grid[:len(occ)], occ)
    write_escape(out / "escape_oracle.csv", prov, prof)
    write_escape_curves(out / "escape_curves_oracle.csv", prov, prof)
    summary = _summary(prof, cfg.initial_sites, cfg.vicinity)
    write_json(out / "summary_oracle.json", prov, summary)
    if plt:
        plt.plot_heatmap(out / "oracle_heatmap.png", prov, grid[:len(occ)], occ, "exact")
        plt.plot_escape_bars(out / "escape_oracle.png", prov, {"exact": prof})
    if cfg.termination and not is_terminated(prof.P_of_t, cfg.termination):
        raise NotConverged(f"exact P(t_max) = {prof.P_of_t[-1]:.4f} < {cfg.termination}")
    return summary


def cmd_evolve(cfg: ExperimentConfig, threads: int = 1) -> dict:
    """Circuit run, analysis, optional mitigation, with the exact overlay."""
    if cfg.scan is not None:
        raise ConfigError("scan configurations run with the 'spectral' verb")
    if cfg.mitigation is not None:
        return _evolve_mitigated(cfg, threads)
    out = Path(cfg.directory)
    prov = _prov(cfg)
    problem = build_problem(cfg.params(), cfg.p)
    kw = dict(mode=cfg.mode, shots=cfg.shots, noise=cfg.noise_model(), seed=cfg.seed,
              record_every=cfg.record_every, method=cfg.method, keep_counts=False)
    history = None
    if cfg.steps is None:
        if not isinstance(cfg.lcu, str):
            raise ConfigError("steps = \"auto\" needs a closed-form step circuit")
        auto = auto_steps(problem, cfg.initial_sites, cfg.t_max, lcu=cfg.lcu, **kw)
        steps, res, prof, history = auto.steps, auto.result, auto.profile, auto.history
        if not auto.converged:
            raise NotConverged(f"step doubling did not converge: {history}")
    else:
        steps = cfg.steps
        res, prof = engine_escape(problem, cfg.initial_sites, cfg.t_max, steps,
                                  lcu=cfg.lcu_spec(cfg.t_max / steps), **kw)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ref = oracle_escape(problem, cfg.initial_sites, cfg.t_max, cfg.oracle_steps)
    prov = Provenance(cfg.config_hash(), cfg.seed, run_hash=res.meta["config_hash"])
    write_timeseries(out / "timeseries.csv", prov, res.time_grid, res.occupancies,
                     res.success_probability)
    write_escape(out / "escape_engine.csv", prov, prof)
    write_escape(out / "escape_oracle.csv", prov, ref)
    write_escape_curves(out / "escape_curves.csv", prov, prof)
    summary = _summary(prof, cfg.initial_sites, cfg.vicinity)
    summary.update(steps=steps, step_history=history,
                   max_abs_error_vs_exact=float(np.max(np.abs(prof.final_Px - ref.final_Px))),
                   discarded_shots=int(res.discarded_shots.sum()))
    write_json(out / "run.json", prov, {"config": cfg.to_dict(), "run_meta": res.meta,
                                        "summary": summary})
    plt = _plots(cfg)
    if plt:
        plt.plot_heatmap(out / "heatmap.png", prov, res.time_grid, res.occupancies, cfg.name)
        plt.plot_escape_curves(out / "escape_curves.png", prov, prof, ref, cfg.name)
        plt.plot_escape_bars(out / "escape.png", prov, {"circuit": prof, "exact": ref}, cfg.name)
    if cfg.termination and not is_terminated(prof.P_of_t, cfg.termination):
        raise NotConverged(f"P(t_max) = {prof.P_of_t[-1]:.4f} < {cfg.termination}")
    return summary


def _calibration_for(cfg: ExperimentConfig, problem) -> CalibrationSet:
    n = problem.n_system + 1
    subs = cfg.mitigation.sub_registers
    if subs is None:
        qubits = list(range(n))
        subs = [qubits[i:i + 5] for i in range(0, n, 5)]
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    return calibrate(cfg.noise_model(), subs, cfg.mitigation.calibration_shots, n_qubits=n,
                     rng=rng)


def _evolve_mitigated(cfg: ExperimentConfig, threads: int) -> dict:
    out = Path(cfg.directory)
    prov = _prov(cfg)
    mit = cfg.mitigation
    if cfg.steps is None:
        raise ConfigError("mitigated runs need an explicit step count")
    problem = build_problem(cfg.params(), cfg.p)
    cal = _calibration_for(cfg, problem)
    write_json(out / "calibration.json", prov, cal.to_dict())
    runs = noisy_runs(problem, cfg.initial_sites, cfg.t_max, cfg.steps, mit.lambdas, mit.twirls,
                      mit.shots, cfg.noise_model(), cfg.seed, cfg.record_every, threads)
    write_counts(out / "counts.csv.gz", prov, runs, mit.lambdas)
    write_json(out / "run.json", prov, {"config": cfg.to_dict()})
    return _mitigate(cfg, problem, runs, cal, out)


def _mitigate(cfg, problem, runs, cal, out) -> dict:
    prov = _prov(cfg)
    mit = cfg.mitigation
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rep = mitigated_escape(problem, cfg.initial_sites, cfg.t_max, cfg.steps,
                               cfg.noise_model(), mit.lambdas, mit.twirls, mit.shots,
                               seed=cfg.seed, runs=runs, calibration=cal)
    for name, prof in rep.profiles.items():
        write_escape(out / f"escape_{name}.csv", prov, prof)
    write_timeseries(out / "timeseries_mitigated.csv", prov, rep.time_grid, rep.extrapolated)
    summary = {"errors": rep.errors, "kkt_residual": rep.kkt,
               "P_x": {k: v.final_Px.tolist() for k, v in rep.profiles.items()}}
    write_json(out / "mitigation.json", prov, summary)
    plt = _plots(cfg)
    if plt:
        plt.plot_mitigation(out / "mitigation.png", prov, rep.profiles, rep.errors)
    return summary


def cmd_mitigate(cfg: ExperimentConfig, run_dir: Path, calibration: Path | None) -> dict:
    """Apply readout inversion and extrapolation to stored counts."""
    if cfg.mitigation is None:
        raise ConfigError("configuration has no [mitigation] table")
    counts_file = Path(run_dir) / "counts.csv.gz"
    if not counts_file.exists():
        raise ConfigError(f"no per-lambda counts found in {run_dir}")
    problem = build_problem(cfg.params(), cfg.p)
    _, table = read_counts(counts_file)
    found = sorted({lam for lam, _ in table})
    missing = [l for l in cfg.mitigation.lambdas if l not in found]
    if missing:
        raise ConfigError(f"counts lack noise scales {missing}")
    runs = runs_from_counts(table, problem, cfg.t_max, cfg.steps, cfg.mitigation.lambdas)
    cal_path = Path(calibration) if calibration else Path(run_dir) / "calibration.json"
    data = json.loads(cal_path.read_text())
    cal = CalibrationSet.from_dict(data)
    return _mitigate(cfg, problem, runs, cal, Path(cfg.directory))


def cmd_calibrate(cfg: ExperimentConfig) -> dict:
    if cfg.mitigation is None or cfg.noise is None:
        raise ConfigError("calibration needs [noise] and [mitigation] tables")
    problem = build_problem(cfg.params(), cfg.p)
    cal = _calibration_for(cfg, problem)
    write_json(Path(cfg.directory) / "calibration.json", _prov(cfg), cal.to_dict())
    return {"sub_registers": cal.sub_registers}


def cmd_spectral(cfg: ExperimentConfig, threads: int = 1) -> dict:
    """Gibbs-purification scan of ``max Im E`` with the exact spectra alongside."""
    if cfg.scan is None:
        raise ConfigError("the spectral verb needs a [scan] table")
    out = Path(cfg.directory)
    prov = _prov(cfg)
    sc = cfg.scan
    points = spectral_scan(cfg.params(), sc.ratios, sc.t_max, sc.steps, sc.drift_tol,
                           threads=threads, record_every=cfg.record_every)
    cols = assemble_scan(points)
    write_scan(out / "scan.csv", prov, cols)
    spectra = {r: pbc_spectrum(cfg.params().with_(v1=r * cfg.model.v2)).eigenvalues
               for r in sc.ratios}
    write_spectrum(out / "spectra.csv", prov, spectra)
    plt = _plots(cfg)
    if plt:
        plt.plot_scan(out / "scan.png", prov, cols, cfg.model.gamma)
        plt.plot_spectra(out / "spectra.png", prov, spectra)
    flagged = [float(r) for r, ok in zip(cols["ratio"], cols["converged"]) if not ok]
    summary = {"flagged": flagged, "points": len(points)}
    write_json(out / "scan.json", prov, summary)
    if flagged:
        raise NotConverged(f"purification did not converge at v1/v2 = {flagged}")
    return summary


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="edgeburst", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"edgeburst {__version__}")
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in ("evolve", "spectral", "oracle", "mitigate", "calibrate"):
        p = sub.add_parser(verb)
        p.add_argument("--config", type=Path, help="TOML configuration file")
        p.add_argument("--preset", help=f"shipped preset: {', '.join(list_presets())}")
        p.add_argument("--out", type=Path, help="output directory (overrides the config)")
        p.add_argument("--seed", type=int, help="seed (overrides the config)")
        p.add_argument("--threads", type=int, default=1, help="worker processes")
        p.add_argument("-v", "--verbose", action="store_true")
        if verb == "mitigate":
            p.add_argument("--run", type=Path, required=True, help="run directory with counts")
            p.add_argument("--calibration", type=Path, help="calibration JSON")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = _load(args)
        if args.verb == "evolve":
            summary = cmd_evolve(cfg, args.threads)
        elif args.verb == "oracle":
            summary = cmd_oracle(cfg, args.threads)
        elif args.verb == "spectral":
            summary = cmd_spectral(cfg, args.threads)
        elif args.verb == "mitigate":
            summary = cmd_mitigate(cfg, args.run, args.calibration)
        else:
            summary = cmd_calibrate(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NotConverged, EvolutionError) as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    print(json.dumps(summary, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
