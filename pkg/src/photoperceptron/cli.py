"""Command-line experiment runner.

    photoperceptron <experiment> [--config FILE] [--seed N] [--out-dir D] [--workers N]

Each run writes its CSV series, ``summary.json`` and ``manifest.json`` (the
resolved config, per-file sha256 digests, wall time and version) into the
output directory.  Exit codes: 0 success, 2 config error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.stats import linregress

from . import __version__
from . import classical_perceptron as cp
from . import langevin_thermo as lt
from . import quantum_perceptron as qp
from .config import (EXPERIMENTS, OUT_DIR_ENV, ConfigError, Document, load_file, located_error,
                     resolve, template_text)
from .raman_device import DetectorModel, RamanDeviceSpec, ReadField, absorption_probability
from .temporal_modes import default_grid, write_mode_csv

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
MODELS = {"ideal": DetectorModel.IDEAL_PROJECTIVE, "raman": DetectorModel.DYNAMICAL_RAMAN}
OBJECTIVES = {"min_absorption": qp.Objective.MIN_ABSORPTION,
              "max_absorption": qp.Objective.MAX_ABSORPTION}


class Artifacts:
    """Tracks every file a run writes so the manifest can digest them."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out_dir / name

    def csv(self, name: str, header, rows) -> None:
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    def json(self, name: str, payload) -> None:
        self.path(name).write_text(_dumps(payload))


def _num(v) -> str:
    """CSV cell for a float: repr round-trips exactly, nan becomes empty."""
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (complex, np.complexfloating)):
        return [_jsonable(v.real), _jsonable(v.imag)]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return v


def _dumps(payload) -> str:
    return json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------- experiments

def run_classical(cfg: dict, art: Artifacts, workers: int, user) -> dict:
    b = cfg["classical-train"]
    with _stage(user, "classical-train"):
        config = cp.TrainingConfig(beta=b["beta"], sigma_init=b["sigma_init"], epochs=b["epochs"],
                                   trials_per_epoch=b["trials_per_epoch"], seed=cfg["seed"],
                                   task=cp.Task(b["task"]), gain=b["gain"], w_init=b["w_init"])
        lv = cp.LangevinSwitch(**b["langevin"])
    backend = cp.Backend(b["backend"])
    traces = cp.train_restarts(config, b["restarts"], backend, lv, workers)
    rows = []
    for i, tr in enumerate(traces):
        cp.write_trace_csv(tr, art.path(f"trace_{i:03d}.csv"))
        hit = cp.first_epoch_below(tr, b["error_threshold"], sampled=False)
        rows.append([i, _num(tr.w_initial), _num(tr.final_weight),
                     _num(tr.epochs[-1].eps_exact), "" if hit is None else hit,
                     _num(tr.ledger.total_heat)])
    art.csv("restarts.csv", ["restart", "w_initial", "w_final", "eps_exact_final",
                             "first_epoch_below_threshold", "total_heat"], rows)
    final_eps = np.array([tr.epochs[-1].eps_exact for tr in traces])
    eps_cols = [tr.column("eps_exact") for tr in traces]
    summary = {
        "final_error": float(final_eps.mean()),
        "final_errors": final_eps.tolist(),
        "final_weights": [tr.final_weight for tr in traces],
        "success_fraction": float(np.mean(final_eps < b["error_threshold"])),
        "eps_exact_monotone": bool(all(np.all(np.diff(c) <= 1e-15) for c in eps_cols)),
        "energy": {
            "total_heat": float(sum(tr.ledger.total_heat for tr in traces)),
            "total_trials": int(sum(sum(tr.ledger.trials) for tr in traces)),
            "final_epoch_heat_per_trial_kT": [float(tr.ledger.in_kT(config.beta)[-1])
                                              for tr in traces],
        },
    }
    if len(traces) >= 2:
        summary["cooling"] = cp.cooling_summary(traces)
    return summary


def _device(omega_a):
    return None if omega_a is None else RamanDeviceSpec(omega_a, 0.0)


def run_quantum_not(cfg: dict, art: Artifacts, workers: int, user) -> dict:
    b = cfg["quantum-not"]
    with _stage(user, "quantum-not"):
        config = qp.QuantumTrainingConfig(
            model=MODELS[b["model"]], trials_per_epoch=b["trials_per_epoch"], epochs=b["epochs"],
            learning_rate=b["learning_rate"], fd_delta=b["fd_delta"], seed=cfg["seed"],
            sigma=b["sigma"], g=b["g"], sigma_init=b["sigma_init"],
            objective=OBJECTIVES[b["objective"]], w_init=b["w_init"], w_bound=b["w_bound"],
            wrap_weight=b["wrap_weight"], exact_gradient=b["exact_gradient"])
    runs = qp.train_not_restarts(config, b["restarts"], workers)
    grid = default_grid(b["sigma"])
    rows = []
    for i, run in enumerate(runs):
        qp.write_records_csv(run.records, art.path(f"records_{i:03d}.csv"))
        rows.append([i, _num(run.initial_params[0]), _num(run.final_params[0]), run.status,
                     len(run.records), _num(run.records[-1].eps_exact)])
    art.csv("restarts.csv", ["restart", "w_initial", "w_final", "status", "epochs",
                             "eps_exact_final"], rows)
    w0 = runs[0].final_params[0]
    for x in (-1, 1):
        write_mode_csv(qp.read_field_for(w0, x, grid, b["sigma"], b["g"]).shape,
                       art.path(f"read_field_x{x:+d}.csv"))
    weights = np.array([r.final_params[0] for r in runs])
    device = _device(b["omega_a"])
    return {
        "final_weights": weights.tolist(),
        "final_error": float(np.mean([r.records[-1].eps_exact for r in runs])),
        "statuses": [r.status for r in runs],
        "success_fraction": float(np.mean(np.abs(weights + 1) <= b["success_tolerance"])),
        "inference_fidelity": {f"{x:+d}": qp.not_inference_fidelity(w0, x, b["sigma"], grid)
                               for x in (-1, 1)},
        "energy": [qp.energy_report(r.records, device).as_dict() for r in runs],
    }


def run_mode_learn(cfg: dict, art: Artifacts, workers: int, user) -> dict:
    b = cfg["mode-learn"]
    k = b["n_modes"]
    for key in ("target", "initial"):
        if b[key] is not None and len(b[key]) != k:
            raise located_error(f"needs {k} coefficients (n_modes), got {len(b[key])}",
                                ("mode-learn", key), user, "mode-learn")
    with _stage(user, "mode-learn"):
        config = qp.QuantumTrainingConfig(
            model=MODELS[b["model"]], trials_per_epoch=b["trials_per_epoch"], epochs=b["epochs"],
            learning_rate=b["learning_rate"], fd_delta=b["fd_delta"], seed=cfg["seed"],
            sigma=b["sigma"], g=b["g"], n_modes=k, objective=qp.Objective.MAX_ABSORPTION,
            stall_patience=b["stall_patience"], stall_factor=b["stall_factor"])
    runs = qp.train_matched_restarts(config, b["restarts"], b["target"], workers,
                                     c_init=b["initial"])
    grid = default_grid(b["sigma"])
    targets = [qp.restart_target(config, i, "mode-learn", b["target"])[0]
               for i in range(b["restarts"])]
    rows, fids, reports = [], [], []
    device = _device(b["omega_a"])
    for i, (run, target) in enumerate(zip(runs, targets)):
        qp.write_records_csv(run.records, art.path(f"records_{i:03d}.csv"))
        fid = qp.mode_fidelity(run.final_params, target, b["sigma"])
        rep = qp.energy_report(run.records, device)
        fids.append(fid)
        reports.append(rep.as_dict())
        rows.append([i, run.status, len(run.records), _num(fid), _num(run.records[0].eps_sampled),
                     _num(run.records[-1].eps_sampled), rep.cumulative_quanta])
    art.csv("restarts.csv", ["restart", "status", "epochs", "fidelity", "eps_first", "eps_final",
                             "photons_lost"], rows)
    write_mode_csv(qp.mode_from_coefficients(runs[0].final_params, grid, b["sigma"]),
                   art.path("learned_mode.csv"))
    write_mode_csv(targets[0], art.path("target_mode.csv"))
    first = float(np.mean([r.records[0].energy_per_trial for r in runs]))
    last = float(np.mean([r.records[-1].energy_per_trial for r in runs]))
    return {
        "fidelities": fids,
        "min_fidelity": float(min(fids)),
        "success_fraction": float(np.mean(np.array(fids) >= b["fidelity_threshold"])),
        "final_error": float(np.mean([r.records[-1].eps_exact for r in runs])),
        "final_params": [list(r.final_params) for r in runs],
        "statuses": [r.status for r in runs],
        "energy": {
            "per_run": reports,
            "mean_first_epoch_quanta_per_trial": first,
            "mean_final_epoch_quanta_per_trial": last,
            "ensemble_dissipation_ratio": first / last if last > 0 else math.inf,
            "cumulative_quanta": int(sum(r["cumulative_quanta"] for r in reports)),
        },
    }


def _protocol(p: dict, dt: float) -> lt.BiasProtocol:
    if p["kind"] == "cyclic":
        return lt.BiasProtocol.cyclic(p["start"], p["stop"], p["duration"], dt)
    if p["kind"] == "ramp":
        return lt.BiasProtocol.ramp(p["start"], p["stop"], p["duration"], dt)
    return lt.BiasProtocol.constant(p["start"], p["duration"], dt)


ENSEMBLE_COLUMNS = ["traj_id", "W", "Q", "dE", "final_side", "first_passage_time"]


def run_jarzynski(cfg: dict, art: Artifacts, workers: int, user) -> dict:
    b = cfg["jarzynski"]
    names = [p["name"] for p in b["protocols"]]
    for i, name in enumerate(names):
        if names.index(name) != i:
            raise located_error(f"duplicate protocol name {name!r}",
                                ("jarzynski", "protocols", i, "name"), user, "jarzynski")
    with _stage(user, "jarzynski"):
        spec = lt.DoubleWellSpec(**b["well"])
        dt = spec.default_dt if b["dt"] is None else b["dt"]
        lt.check_dt(spec, dt)
        protocols = [(p, _protocol(p, dt)) for p in b["protocols"]]
    out = {}
    for p, proto in protocols:
        lam = proto.schedule()
        ens = lt.run_ensemble(cfg["seed"], spec, proto, b["n_trajectories"], workers=workers,
                              path=("jarzynski", p["name"]))
        art.csv(f"ensemble_{p['name']}.csv", ENSEMBLE_COLUMNS,
                ([i, _num(w), _num(q), _num(e), int(s), _num(f)] for i, (w, q, e, s, f) in
                 enumerate(zip(ens.work, ens.heat, ens.delta_e, ens.final_side,
                               ens.first_passage_time))))
        delta_f = lt.free_energy_difference(spec, lam[0], lam[-1], b["quadrature_points"])
        est, se = lt.jarzynski_estimate(ens, spec.beta)
        oracle = math.exp(-spec.beta * delta_f)
        out[p["name"]] = {
            "jarzynski_estimate": est, "jarzynski_se": se, "oracle": oracle,
            "delta_f": delta_f, "z_score": (est - oracle) / se if se > 0 else 0.0,
            "mean_work": float(ens.work.mean()),
            "mean_work_minus_delta_f": float(ens.work.mean() - delta_f),
            "max_first_law_residual": float(lt.first_law_residual(ens).max()),
            "n_trajectories": len(ens), "dt": dt,
        }
    return {"protocols": out}


def run_kramers(cfg: dict, art: Artifacts, workers: int, user) -> dict:
    b = cfg["kramers"]
    with _stage(user, "kramers"):
        specs = [lt.DoubleWellSpec(beta=beta, **b["well"]) for beta in b["betas"]]
        for s in specs:
            lt.check_dt(s, s.default_dt if b["dt"] is None else b["dt"])
    results = [lt.first_passage_rate(cfg["seed"], s, b["n_trajectories"], b["dt"], b["max_steps"],
                                     workers) for s in specs]
    x = np.array([s.beta * s.barrier for s in specs])
    rates = np.array([r.rate for r in results])
    art.csv("kramers.csv", ["beta", "beta_barrier", "rate", "rate_se", "mean_time", "n_censored"],
            ([_num(s.beta), _num(xb), _num(r.rate), _num(r.rate_se), _num(r.mean_time),
              r.n_censored] for s, xb, r in zip(specs, x, results)))
    order = np.argsort(x)
    fit = linregress(x, np.log(rates))
    return {
        "beta_barrier": x.tolist(), "rates": rates.tolist(),
        "strictly_decreasing": bool(np.all(np.diff(rates[order]) < 0)),
        "log_rate_slope": float(fit.slope), "log_rate_intercept": float(fit.intercept),
        "r_squared": float(fit.rvalue ** 2),
        "n_censored": [r.n_censored for r in results],
    }


def matched_absorption(g: float, photon) -> float:
    return absorption_probability(ReadField(photon, g), photon)


def matched_closed_form(g: float) -> float:
    if g == 0:
        return 0.0
    return 4.0 / g ** 2 * (1.0 - math.exp(-g * g / 2.0)) ** 2


def run_absorption_scan(cfg: dict, art: Artifacts, workers: int, user) -> dict:
    b = cfg["absorption-scan"]
    if not b["g_max"] > b["g_min"]:
        raise located_error("must exceed g_min", ("absorption-scan", "g_max"), user,
                            "absorption-scan")
    grid = default_grid(b["sigma"])
    with _stage(user, "absorption-scan"):
        photon = qp.mode_from_coefficients(b["photon"], grid, b["sigma"])
    gs = np.linspace(b["g_min"], b["g_max"], b["n_points"])
    ps = np.array([matched_absorption(g, photon) for g in gs])
    art.csv("absorption_scan.csv", ["g", "p_matched"],
            ([_num(g), _num(p)] for g, p in zip(gs, ps)))
    j = int(np.argmax(ps))
    g_best, p_best = float(gs[j]), float(ps[j])
    if b["refine"] and 0 < j < len(gs) - 1:
        res = minimize_scalar(lambda g: -matched_absorption(g, photon), bounds=(gs[j - 1], gs[j + 1]),
                              method="bounded", options={"xatol": 1e-8})
        g_best, p_best = float(res.x), float(-res.fun)
    closed = np.array([matched_closed_form(g) for g in gs])
    summary = {
        "g_at_max": g_best, "g2_at_max": g_best ** 2, "p_max": p_best,
        "max_abs_deviation_from_closed_form": float(np.max(np.abs(ps - closed))),
    }
    if b["g_min"] <= 1.0 <= b["g_max"]:
        summary["p_at_g1"] = matched_absorption(1.0, photon)
    return summary


RUNNERS = {
    "classical-train": run_classical, "quantum-not": run_quantum_not,
    "mode-learn": run_mode_learn, "jarzynski": run_jarzynski, "kramers": run_kramers,
    "absorption-scan": run_absorption_scan,
}


class _stage:
    """Turn module-level ValueErrors raised while building objects into config errors."""

    def __init__(self, user: Document | None, experiment: str):
        self.user, self.experiment = user, experiment

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None and issubclass(exc_type, ValueError):
            raise located_error(str(exc), (self.experiment,), self.user, self.experiment) from exc
        return False


# ---------------------------------------------------------------- driver

def out_dir_for(cfg: dict, override: str | None) -> Path:
    """--out-dir beats the environment variable, which beats the config."""
    return Path(override or os.environ.get(OUT_DIR_ENV) or cfg["out_dir"])


def run(experiment: str, config_path=None, seed=None, out_dir=None, workers=None) -> dict:
    """Run one experiment and return its manifest; raises ConfigError on bad input."""
    user = None if config_path is None else load_file(config_path)
    cfg = resolve(experiment, user, {"seed": seed, "workers": workers})
    target = out_dir_for(cfg, out_dir)
    target.mkdir(parents=True, exist_ok=True)
    art = Artifacts(target)
    echo = dict(cfg, out_dir=str(target))
    manifest = {"experiment": experiment, "config": echo, "config_source": str(config_path),
                "version": __version__, "python": platform.python_version(),
                "numpy": np.__version__}
    t0 = time.perf_counter()
    try:
        summary = RUNNERS[experiment](cfg, art, cfg["workers"], user)
        summary = {"experiment": experiment, "seed": cfg["seed"], **summary}
        art.json("summary.json", summary)
        manifest.update(status="completed", error=None, partial=False)
    except ConfigError:
        raise
    except Exception as exc:  # noqa: BLE001 - any runtime failure is reported in the manifest
        manifest.update(status="failed", error=f"{type(exc).__name__}: {exc}", partial=True)
    manifest["wall_time_s"] = time.perf_counter() - t0
    manifest["artifacts"] = [{"path": f, "sha256": _sha256(target / f),
                              "bytes": (target / f).stat().st_size}
                             for f in sorted(set(art.files)) if (target / f).exists()]
    (target / "manifest.json").write_text(_dumps(manifest))
    return manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="photoperceptron",
                                     description="Run a physical-perceptron experiment.")
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", help="YAML file layered over the shipped template")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--out-dir", help=f"output directory (beats ${OUT_DIR_ENV} and config)")
    parser.add_argument("--workers", type=int, help="worker processes; results do not depend on it")
    parser.add_argument("--print-template", action="store_true",
                        help="print the shipped template config and exit")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.print_template:
        sys.stdout.write(template_text(args.experiment))
        return EXIT_OK
    try:
        manifest = run(args.experiment, args.config, args.seed, args.out_dir, args.workers)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    out = manifest["config"]["out_dir"]
    if manifest["status"] != "completed":
        print(f"{args.experiment} failed: {manifest['error']} (partial artifacts in {out})",
              file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{args.experiment}: {len(manifest['artifacts'])} artifacts in {out} "
          f"({manifest['wall_time_s']:.1f} s)")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
