"""Thermally activated perceptron coarse-grained to a two-state switch.

The switch reads n = +1 (right well) with probability p = sigmoid(beta * A),
A = x * w.  Training repeats epochs of many trials at a fixed datum and
applies the feedback rule dw = beta n_T x (1 - nbar^2) / 4.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import langevin_thermo as lt
from .streams import stream


class Task(enum.Enum):
    NOT = "NOT"
    COPY = "COPY"


class Backend(enum.Enum):
    EXACT = "exact"
    SAMPLED = "sampled"
    LANGEVIN = "langevin"


@dataclass(frozen=True)
class Datum:
    x: int
    n_target: int

    def __post_init__(self):
        if self.x not in (-1, 1) or self.n_target not in (-1, 1):
            raise ValueError(f"x and n_target must be +-1, got {self.x}, {self.n_target}")


@dataclass(frozen=True)
class LangevinSwitch:
    """Settings for the double-well backend; its beta is taken from the training config."""
    barrier: float = 1.0
    x0: float = 1.0
    gamma: float = 1.0
    window: float = 5.0
    ramp_time: float = 1.0

    def spec(self, beta: float) -> lt.DoubleWellSpec:
        return lt.DoubleWellSpec(self.barrier, self.x0, self.gamma, beta)


@dataclass(frozen=True)
class TrainingConfig:
    beta: float = 2.0
    sigma_init: float = 1.0
    epochs: int = 200
    trials_per_epoch: int = 10_000
    seed: int = 0
    task: Task = Task.NOT
    gain: float = 1.0
    w_init: float | None = None

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be positive and finite, got {self.beta}")
        if not self.sigma_init > 0:
            raise ValueError(f"sigma_init must be positive, got {self.sigma_init}")
        if self.epochs < 1 or self.trials_per_epoch < 1:
            raise ValueError("epochs and trials_per_epoch must be >= 1")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    w: float
    x: int
    n_target: int
    eps_sampled: float
    eps_exact: float
    n_sampled: float
    n_exact: float
    delta_w: float
    trials: int
    heat: float


@dataclass
class ThermoLedger:
    """Heat released per epoch, in the energy units of the bias A."""
    heat: list[float] = field(default_factory=list)
    trials: list[int] = field(default_factory=list)

    def record(self, heat: float, trials: int) -> None:
        self.heat.append(float(heat))
        self.trials.append(int(trials))

    @property
    def total_heat(self) -> float:
        return float(sum(self.heat))

    def heat_per_trial(self) -> np.ndarray:
        return np.asarray(self.heat) / np.asarray(self.trials)

    def in_kT(self, beta: float) -> np.ndarray:
        return beta * self.heat_per_trial()


@dataclass
class TrainingTrace:
    epochs: list[EpochStats]
    ledger: ThermoLedger
    w_initial: float

    @property
    def final_weight(self) -> float:
        last = self.epochs[-1]
        return last.w + last.delta_w

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(e, name) for e in self.epochs])


def activation(w: float, x: int) -> float:
    return x * w


def switch_probability(beta: float, a) -> float:
    if not np.all(np.isfinite([beta, a])):
        raise ValueError(f"non-finite input: beta={beta}, A={a}")
    return float(expit(beta * a))


def sample_switch(rng: np.random.Generator, p: float) -> int:
    return 1 if rng.random() < p else -1


def sample_switches(rng: np.random.Generator, p: float, n: int) -> np.ndarray:
    return np.where(rng.random(n) < p, 1, -1)


def mean_output(p: float) -> float:
    return 2.0 * p - 1.0


def mean_error(n_target: int, nbar: float) -> float:
    return 0.5 * (1.0 - n_target * nbar)


def weight_update(beta: float, x: int, n_target: int, nbar: float) -> float:
    return beta * n_target * x * (1.0 - nbar * nbar) / 4.0


def predicted_error_change(beta: float, nbar: float) -> float:
    return -beta ** 2 * (1.0 - nbar * nbar) ** 2 / 16.0


def exact_error(beta: float, w: float, datum: Datum) -> float:
    return mean_error(datum.n_target,
                      mean_output(switch_probability(beta, activation(w, datum.x))))


def target_for(task: Task, x: int) -> int:
    return -x if task is Task.NOT else x


def boolean_dataset(task: Task, n: int, rng: np.random.Generator) -> list[Datum]:
    if n < 1:
        raise ValueError("dataset size must be >= 1")
    xs = np.where(rng.random(n) < 0.5, -1, 1)
    return [Datum(int(x), target_for(task, int(x))) for x in xs]


def two_state_heat(outputs: np.ndarray, a: float) -> float:
    """|A| for every trial that settles into the well favoured by the bias."""
    if a == 0:
        return 0.0
    return abs(a) * float(np.count_nonzero(outputs == np.sign(a)))


def epoch(rng: np.random.Generator, w: float, datum: Datum, trials: int, beta: float,
          backend: Backend = Backend.SAMPLED, langevin: LangevinSwitch | None = None,
          index: int = 0, gain: float = 1.0) -> EpochStats:
    """Run `trials` switch events at fixed w and compute the feedback step."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    a = activation(w, datum.x)
    p = switch_probability(beta, a)
    n_exact = mean_output(p)
    if backend is Backend.LANGEVIN:
        sw = langevin or LangevinSwitch()
        ens = lt.switch_trials(rng, sw.spec(beta), a, sw.window, trials, ramp_time=sw.ramp_time)
        outputs = ens.final_side
        heat = float(ens.heat.sum())
    else:
        outputs = sample_switches(rng, p, trials)
        heat = two_state_heat(outputs, a)
    n_sampled = float(outputs.mean())
    eps_sampled = float(np.mean((outputs - datum.n_target) ** 2) / 4.0)
    nbar = n_exact if backend is Backend.EXACT else n_sampled
    dw = gain * weight_update(beta, datum.x, datum.n_target, nbar)
    return EpochStats(index, w, datum.x, datum.n_target, eps_sampled,
                      mean_error(datum.n_target, n_exact), n_sampled, n_exact, dw, trials, heat)


def train(config: TrainingConfig, backend: Backend = Backend.SAMPLED,
          langevin: LangevinSwitch | None = None,
          rng: np.random.Generator | None = None) -> TrainingTrace:
    rng = stream(config.seed, "classical-train") if rng is None else rng
    w = float(rng.normal(0.0, config.sigma_init)) if config.w_init is None else float(config.w_init)
    w_initial = w
    ledger = ThermoLedger()
    stats = []
    for k in range(config.epochs):
        x = -1 if rng.random() < 0.5 else 1
        datum = Datum(x, target_for(config.task, x))
        s = epoch(rng, w, datum, config.trials_per_epoch, config.beta, backend, langevin, k,
                  config.gain)
        stats.append(s)
        ledger.record(s.heat, s.trials)
        w += s.delta_w
    return TrainingTrace(stats, ledger, w_initial)


def _restart_task(args):
    config, backend, langevin, i = args
    return train(config, backend, langevin, rng=stream(config.seed, "classical-train", i))


def train_restarts(config: TrainingConfig, n_restarts: int, backend: Backend = Backend.SAMPLED,
                   langevin: LangevinSwitch | None = None, workers: int = 1) -> list[TrainingTrace]:
    """Independent restarts, restart i drawing from stream (seed, "classical-train", i)."""
    tasks = [(config, backend, langevin, i) for i in range(n_restarts)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_restart_task, tasks))
    return [_restart_task(t) for t in tasks]


def first_epoch_below(trace: TrainingTrace, threshold: float, sampled: bool = True) -> int | None:
    col = trace.column("eps_sampled" if sampled else "eps_exact")
    hits = np.nonzero(col < threshold)[0]
    return int(hits[0]) if hits.size else None


def cooling_summary(traces: list[TrainingTrace]) -> dict:
    """Spread of the weight distribution before and after training."""
    w0 = np.array([t.w_initial for t in traces])
    wf = np.array([t.final_weight for t in traces])
    return {
        "initial_mean": float(w0.mean()), "initial_var": float(w0.var(ddof=1)),
        "final_mean": float(wf.mean()), "final_var": float(wf.var(ddof=1)),
    }


TRACE_COLUMNS = ["epoch", "w", "eps_exact", "eps_sampled", "n_exact", "n_sampled", "delta_w", "heat"]


def write_trace_csv(trace: TrainingTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for e in trace.epochs:
            w.writerow([e.epoch] + [repr(float(getattr(e, c))) for c in TRACE_COLUMNS[1:]])
