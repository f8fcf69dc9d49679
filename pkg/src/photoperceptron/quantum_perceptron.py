"""Raman perceptron: NOT-gate training, temporal-mode learning, photon-loss ledger.

Both learners use central finite-difference stochastic gradient descent on
sampled detection outcomes.  Every trial whose outcome counts as an error
loses one photon of energy hbar*omega_a, so the energy per trial (in quanta)
coincides with the sampled error rate by construction.
"""
from __future__ import annotations

import csv
import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .raman_device import (DetectorModel, RamanDeviceSpec, ReadField, detection_probability,
                           swap_to_source)
from .streams import stream
from .temporal_modes import (QUAD_TOL, TemporalGrid, TemporalMode, default_grid, gram_matrix,
                             hermite_gaussian_basis, inner_product, superpose)

WEIGHT_PERIOD = 4.0
WEIGHT_WRAP_LOW = -3.0


class Objective(enum.Enum):
    MIN_ABSORPTION = "min_absorption"
    MAX_ABSORPTION = "max_absorption"


@dataclass(frozen=True)
class QuantumTrainingConfig:
    model: DetectorModel = DetectorModel.IDEAL_PROJECTIVE
    trials_per_epoch: int = 10_000
    epochs: int = 200
    learning_rate: float = 0.5
    fd_delta: float = 0.1
    seed: int = 0
    sigma: float = 1.0
    g: float = 1.0
    n_modes: int = 2
    sigma_init: float = 1.0
    objective: Objective = Objective.MIN_ABSORPTION
    w_init: float | None = None
    w_bound: float = 1e3
    wrap_weight: bool = True
    exact_gradient: bool = False
    stall_patience: int | None = 10
    stall_factor: float = 2.0

    def __post_init__(self):
        if not (self.learning_rate > 0 and self.fd_delta > 0):
            raise ValueError("learning_rate and fd_delta must be positive")
        if self.n_modes < 2:
            raise ValueError(f"n_modes must be >= 2, got {self.n_modes}")
        if self.trials_per_epoch < 1 or self.epochs < 1:
            raise ValueError("trials_per_epoch and epochs must be >= 1")
        if not self.sigma > 0 or not self.g >= 0:
            raise ValueError("sigma must be positive and g non-negative")


@dataclass(frozen=True)
class QuantumEpochRecord:
    epoch: int
    params: tuple
    eps_sampled: float
    eps_exact: float
    photons_lost: int
    trials: int

    @property
    def energy_per_trial(self) -> float:
        """Photon quanta lost per trial."""
        return self.photons_lost / self.trials

    @property
    def param_summary(self) -> str:
        if len(self.params) == 1:
            return repr(float(self.params[0]))
        c = np.asarray(self.params)
        return ";".join(f"{float(z.real)!r}:{float(z.imag)!r}" for z in c.astype(complex))


@dataclass
class QuantumRun:
    records: list[QuantumEpochRecord]
    status: str
    final_params: tuple
    initial_params: tuple


@lru_cache(maxsize=32)
def _basis(grid: TemporalGrid, sigma: float, k: int) -> tuple[TemporalMode, ...]:
    return tuple(hermite_gaussian_basis(k, grid, sigma))


@lru_cache(maxsize=32)
def _basis_matrix(grid: TemporalGrid, sigma: float, k: int) -> np.ndarray:
    basis = _basis(grid, sigma, k)
    if np.max(np.abs(gram_matrix(basis) - np.eye(k))) > QUAD_TOL:
        raise ValueError(f"{k}-mode basis is not orthonormal on {grid}")
    m = np.array([u.amplitude for u in basis])
    m.flags.writeable = False
    return m


def _combine(grid: TemporalGrid, sigma: float, c) -> TemporalMode:
    """Unit-norm combination of the cached orthonormal basis (checked once per basis)."""
    c = np.asarray(c, dtype=complex)
    c = c / np.linalg.norm(c)
    return TemporalMode(grid, c @ _basis_matrix(grid, sigma, len(c)), normalized=True)


def _grid_for(sigma: float, grid: TemporalGrid | None) -> TemporalGrid:
    return default_grid(sigma) if grid is None else grid


def wrap_weight(w: float) -> float:
    """Map w into [-3, 1); the read field depends on w only modulo 4."""
    return (w - WEIGHT_WRAP_LOW) % WEIGHT_PERIOD + WEIGHT_WRAP_LOW


def read_field_for(w: float, x: int, grid: TemporalGrid | None = None, sigma: float = 1.0,
                   g: float = 1.0) -> ReadField:
    """Detector read field (u0 + exp(i pi A/2) u1)/sqrt(2) with A = x w - 1."""
    grid = _grid_for(sigma, grid)
    a = x * w - 1.0
    return ReadField(_combine(grid, sigma, [1.0, np.exp(0.5j * math.pi * a)]), g)


def input_photon(x: int, grid: TemporalGrid | None = None, sigma: float = 1.0) -> TemporalMode:
    """Pulse-code photon (u0 + x u1)/sqrt(2) for encoded input x = +-1."""
    if x not in (-1, 1):
        raise ValueError(f"x must be +-1, got {x}")
    return _photon(_grid_for(sigma, grid), sigma, x)


@lru_cache(maxsize=64)
def _photon(grid: TemporalGrid, sigma: float, x: int) -> TemporalMode:
    return _combine(grid, sigma, [1.0, float(x)])


def absorption_for(w: float, x: int, model: DetectorModel, sigma: float = 1.0, g: float = 1.0,
                   grid: TemporalGrid | None = None) -> float:
    grid = _grid_for(sigma, grid)
    return detection_probability(read_field_for(w, x, grid, sigma, g), input_photon(x, grid, sigma),
                                 model)


def not_gate_error(w: float, model: DetectorModel = DetectorModel.IDEAL_PROJECTIVE,
                   sigma: float = 1.0, g: float = 1.0, grid: TemporalGrid | None = None,
                   objective: Objective = Objective.MIN_ABSORPTION) -> float:
    """Error probability averaged over both inputs."""
    p = [absorption_for(w, x, model, sigma, g, grid) for x in (-1, 1)]
    if objective is Objective.MAX_ABSORPTION:
        p = [1.0 - q for q in p]
    return 0.5 * (p[0] + p[1])


def _not_errors(rng, w, config, grid, n) -> int:
    p = {x: absorption_for(w, x, config.model, config.sigma, config.g, grid) for x in (-1, 1)}
    if config.objective is Objective.MAX_ABSORPTION:
        p = {x: 1.0 - q for x, q in p.items()}
    plus = rng.random(n) < 0.5
    u = rng.random(n)
    err = np.where(plus, u < p[1], u < p[-1])
    return int(np.count_nonzero(err))


def train_not_gate(rng: np.random.Generator, config: QuantumTrainingConfig,
                   grid: TemporalGrid | None = None) -> QuantumRun:
    """Finite-difference descent on the NOT error over the read-field weight w.

    Each epoch probes w + delta and w - delta with trials_per_epoch detections
    each; inputs are drawn uniformly per trial.
    """
    grid = _grid_for(config.sigma, grid)
    w = float(rng.normal(0.0, config.sigma_init)) if config.w_init is None else float(config.w_init)
    if config.wrap_weight:
        w = wrap_weight(w)
    w_start = w
    d, n = config.fd_delta, config.trials_per_epoch
    records = []
    status = "completed"
    for k in range(config.epochs):
        e_plus = _not_errors(rng, w + d, config, grid, n)
        e_minus = _not_errors(rng, w - d, config, grid, n)
        lost = e_plus + e_minus
        eps_exact = not_gate_error(w, config.model, config.sigma, config.g, grid, config.objective)
        records.append(QuantumEpochRecord(k, (w,), lost / (2 * n), eps_exact, lost, 2 * n))
        if config.exact_gradient:
            grad = (not_gate_error(w + d, config.model, config.sigma, config.g, grid, config.objective)
                    - not_gate_error(w - d, config.model, config.sigma, config.g, grid,
                                     config.objective)) / (2 * d)
        else:
            grad = (e_plus / n - e_minus / n) / (2 * d)
        w = w - config.learning_rate * grad
        if not abs(w) <= config.w_bound:
            status = "diverged"
            break
        if config.wrap_weight:
            w = wrap_weight(w)
    return QuantumRun(records, status, (w,), (w_start,))


def infer_not(w: float, x: int, sigma: float = 1.0, g: float = 1.0,
              grid: TemporalGrid | None = None) -> TemporalMode:
    """Photon re-emitted after swapping the trained detector into a source."""
    return swap_to_source(read_field_for(w, x, grid, sigma, g))


def not_inference_fidelity(w: float, x: int, sigma: float = 1.0,
                           grid: TemporalGrid | None = None) -> float:
    grid = _grid_for(sigma, grid)
    out = infer_not(w, x, sigma, 1.0, grid)
    return abs(inner_product(input_photon(-x, grid, sigma), out)) ** 2


# ---------------------------------------------------------------- mode learning

def coefficients_from_chart(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Hyperspherical amplitudes with relative phases; c[0] is real and >= 0 for theta[0] <= pi/2."""
    k = len(theta) + 1
    c = np.empty(k, dtype=complex)
    sin_prod = 1.0
    for j in range(k - 1):
        c[j] = sin_prod * math.cos(theta[j])
        sin_prod *= math.sin(theta[j])
    c[k - 1] = sin_prod
    c[1:] *= np.exp(1j * np.asarray(phi))
    return c / np.linalg.norm(c)


def chart_from_coefficients(c) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(c, dtype=complex)
    c = c / np.linalg.norm(c)
    if abs(c[0]) > 0:
        c = c * np.exp(-1j * np.angle(c[0]))
    r = np.abs(c)
    k = len(c)
    tail = np.sqrt(np.cumsum((r ** 2)[::-1])[::-1])
    theta = np.array([math.atan2(tail[j + 1], r[j]) for j in range(k - 1)])
    phi = np.angle(c[1:])
    return theta, phi


def canonical_phase(c) -> np.ndarray:
    c = np.asarray(c, dtype=complex)
    nz = np.nonzero(np.abs(c) > 1e-12)[0]
    if nz.size:
        c = c * np.exp(-1j * np.angle(c[nz[0]]))
        c[nz[0]] = abs(c[nz[0]])
    return c / np.linalg.norm(c)


def random_unit_vector(rng: np.random.Generator, k: int) -> np.ndarray:
    c = rng.standard_normal(k) + 1j * rng.standard_normal(k)
    return c / np.linalg.norm(c)


def mode_from_coefficients(c, grid: TemporalGrid | None = None, sigma: float = 1.0) -> TemporalMode:
    return _combine(_grid_for(sigma, grid), sigma, c)


def random_target(rng: np.random.Generator, n_modes: int, grid: TemporalGrid | None = None,
                  sigma: float = 1.0) -> TemporalMode:
    return mode_from_coefficients(random_unit_vector(rng, n_modes), grid, sigma)


def _check_in_span(target: TemporalMode, basis) -> None:
    proj = superpose(list(basis), [inner_product(u, target) for u in basis])
    resid = TemporalMode(target.grid, target.amplitude - proj.amplitude).norm_squared()
    if resid > 1e-6:
        raise ValueError(f"hidden target leaves the {len(basis)}-mode span (residual {resid:.2e})")


def absorption_of_shape(c, target: TemporalMode, model: DetectorModel, sigma: float,
                        g: float) -> float:
    mode = mode_from_coefficients(c, target.grid, sigma)
    return detection_probability(ReadField(mode, g), target, model)


def train_matched_filter(rng: np.random.Generator, hidden_target: TemporalMode,
                         config: QuantumTrainingConfig, c_init=None) -> QuantumRun:
    """Learn the read-field shape that best absorbs an unknown photon.

    An error is a reflected photon.  Each epoch probes the 2K-2 real
    directions tangent to the unit sphere and orthogonal to the global
    phase at the current coefficients, c -> normalize(c +- delta v_j), with
    trials_per_epoch detections per probe.  Working in this moving frame
    avoids the poles of the angular chart, where the phase derivatives
    vanish.  Training stops early ("stalled") once the gradient estimate
    has stayed within stall_factor noise standard errors for
    stall_patience epochs in a row.
    """
    k = config.n_modes
    basis = _basis(hidden_target.grid, config.sigma, k)
    _check_in_span(hidden_target, basis)
    c = canonical_phase(random_unit_vector(rng, k) if c_init is None else c_init)
    c_start = tuple(c)
    d, n, eta = config.fd_delta, config.trials_per_epoch, config.learning_rate

    def p_abs(coeffs):
        return absorption_of_shape(coeffs, hidden_target, config.model, config.sigma, config.g)

    records = []
    quiet = 0
    status = "completed"
    for epoch in range(config.epochs):
        frame = tangent_frame(c)
        grad = np.empty(len(frame))
        se = np.empty(len(frame))
        lost = 0
        for j, v in enumerate(frame):
            p_plus, p_minus = p_abs(_retract(c, d * v)), p_abs(_retract(c, -d * v))
            r_plus = n - int(np.count_nonzero(rng.random(n) < p_plus))
            r_minus = n - int(np.count_nonzero(rng.random(n) < p_minus))
            lost += r_plus + r_minus
            e_plus, e_minus = r_plus / n, r_minus / n
            grad[j] = (e_plus - e_minus) / (2 * d)
            se[j] = math.sqrt(e_plus * (1 - e_plus) / n + e_minus * (1 - e_minus) / n) / (2 * d)
        trials = 2 * len(frame) * n
        records.append(QuantumEpochRecord(epoch, tuple(c), lost / trials, 1.0 - p_abs(c), lost,
                                          trials))
        if config.stall_patience is not None:
            quiet = quiet + 1 if np.linalg.norm(grad) <= config.stall_factor * np.linalg.norm(se) else 0
            if quiet >= config.stall_patience:
                status = "stalled"
                break
        c = canonical_phase(_retract(c, -eta * (grad @ frame)))
    return QuantumRun(records, status, tuple(c), c_start)


def tangent_frame(c) -> np.ndarray:
    """Orthonormal complex directions v_j, Re<v_j, v_l> = delta_jl, tangent to the
    unit sphere at c and orthogonal to the global phase direction i c."""
    c = np.asarray(c, dtype=complex)
    k = c.size
    r = np.concatenate([c.real, c.imag])
    ir = np.concatenate([-c.imag, c.real])
    q, _ = np.linalg.qr(np.column_stack([r, ir, np.eye(2 * k)]))
    real = q[:, 2:2 * k]
    return (real[:k] + 1j * real[k:]).T


def _retract(c: np.ndarray, v: np.ndarray) -> np.ndarray:
    u = c + v
    return u / np.linalg.norm(u)


def mode_fidelity(c, target: TemporalMode, sigma: float = 1.0) -> float:
    return abs(inner_product(mode_from_coefficients(c, target.grid, sigma), target)) ** 2


def learned_field(run: QuantumRun, grid: TemporalGrid | None = None, sigma: float = 1.0,
                  g: float = 1.0) -> ReadField:
    return ReadField(mode_from_coefficients(run.final_params, grid, sigma), g)


# ---------------------------------------------------------------- restarts

def _not_task(args):
    config, i, tag = args
    return train_not_gate(stream(config.seed, tag, i), config)


def train_not_restarts(config: QuantumTrainingConfig, n_restarts: int, workers: int = 1,
                       tag: str = "quantum-not") -> list[QuantumRun]:
    tasks = [(config, i, tag) for i in range(n_restarts)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_not_task, tasks))
    return [_not_task(t) for t in tasks]


def restart_target(config: QuantumTrainingConfig, index: int, tag: str = "mode-learn",
                   target_coeffs=None) -> tuple[TemporalMode, np.random.Generator]:
    """Hidden target of restart `index` and the stream positioned after drawing it."""
    rng = stream(config.seed, tag, index)
    grid = default_grid(config.sigma)
    if target_coeffs is None:
        return random_target(rng, config.n_modes, grid, config.sigma), rng
    return mode_from_coefficients(target_coeffs, grid, config.sigma), rng


def _mode_task(args):
    config, i, tag, target_coeffs, c_init = args
    target, rng = restart_target(config, i, tag, target_coeffs)
    return train_matched_filter(rng, target, config, c_init=c_init)


def train_matched_restarts(config: QuantumTrainingConfig, n_restarts: int, target_coeffs=None,
                           workers: int = 1, tag: str = "mode-learn",
                           c_init=None) -> list[QuantumRun]:
    """Restarts on the default grid; a random hidden target per restart unless given."""
    target = None if target_coeffs is None else tuple(complex(c) for c in target_coeffs)
    start = None if c_init is None else tuple(complex(c) for c in c_init)
    tasks = [(config, i, tag, target, start) for i in range(n_restarts)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_mode_task, tasks))
    return [_mode_task(t) for t in tasks]


# ---------------------------------------------------------------- energy ledger

@dataclass
class EnergyReport:
    energy_per_trial: np.ndarray
    cumulative_quanta: int
    total_trials: int
    dissipation_ratio: float
    photon_energy: float | None = None

    @property
    def joules_per_trial(self) -> np.ndarray | None:
        return None if self.photon_energy is None else self.energy_per_trial * self.photon_energy

    @property
    def cumulative_joules(self) -> float | None:
        return None if self.photon_energy is None else self.cumulative_quanta * self.photon_energy

    def as_dict(self) -> dict:
        return {
            "cumulative_quanta": self.cumulative_quanta,
            "total_trials": self.total_trials,
            "first_epoch_quanta_per_trial": float(self.energy_per_trial[0]),
            "final_epoch_quanta_per_trial": float(self.energy_per_trial[-1]),
            "dissipation_ratio": self.dissipation_ratio,
            "cumulative_joules": self.cumulative_joules,
        }


def energy_report(records: list[QuantumEpochRecord],
                  device: RamanDeviceSpec | None = None) -> EnergyReport:
    """Photon-loss accounting: quanta per trial, cumulative loss, first/final ratio."""
    if not records:
        raise ValueError("no epoch records")
    per_trial = np.array([r.energy_per_trial for r in records])
    lost = int(sum(r.photons_lost for r in records))
    total = int(sum(r.trials for r in records))
    first, last = per_trial[0], per_trial[-1]
    if last > 0:
        ratio = float(first / last)
    else:
        ratio = math.inf if first > 0 else 1.0
    return EnergyReport(per_trial, lost, total, ratio,
                        None if device is None else device.photon_energy)


RECORD_COLUMNS = ["epoch", "param_summary", "eps_sampled", "eps_exact", "photons_lost",
                  "energy_per_trial_quanta"]


def write_records_csv(records: list[QuantumEpochRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow([r.epoch, r.param_summary, repr(r.eps_sampled), repr(float(r.eps_exact)),
                        r.photons_lost, repr(r.energy_per_trial)])
