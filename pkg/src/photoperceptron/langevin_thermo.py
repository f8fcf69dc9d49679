"""Overdamped Langevin dynamics of a biased double-well switch.

Potential V(x, lam) = dV ((x/x0)^2 - 1)^2 + lam x, integrated with
Euler-Maruyama.  Work is accumulated as x * dlam at every schedule update
and heat as the energy released during each relaxation step, so the first
law W = dE + Q holds per trajectory up to floating-point rounding.

Ensembles are simulated in fixed-size blocks of trajectories, each block
drawing from its own counter-based stream; results therefore do not depend
on how blocks are spread over worker processes.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .streams import stream

BLOCK_SIZE = 2048
DEFAULT_DT_FRACTION = 1e-3
MAX_DT_FRACTION = 1e-2


@dataclass(frozen=True)
class DoubleWellSpec:
    barrier: float = 1.0
    x0: float = 1.0
    gamma: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        for name in ("barrier", "x0", "gamma", "beta"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v}")

    @property
    def time_scale(self) -> float:
        """gamma x0^2 / dV: the relaxation time unit of the well."""
        return self.gamma * self.x0 ** 2 / self.barrier

    @property
    def default_dt(self) -> float:
        return DEFAULT_DT_FRACTION * self.time_scale


def potential(spec: DoubleWellSpec, lam, x):
    s = x / spec.x0
    return spec.barrier * (s * s - 1.0) ** 2 + lam * x


def potential_gradient(spec: DoubleWellSpec, lam, x):
    s = x / spec.x0
    return 4.0 * spec.barrier * s * (s * s - 1.0) / spec.x0 + lam


def check_dt(spec: DoubleWellSpec, dt: float, max_fraction: float = MAX_DT_FRACTION) -> None:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if dt > max_fraction * spec.time_scale:
        raise ValueError(
            f"dt={dt} exceeds stability limit {max_fraction} * gamma x0^2/dV = "
            f"{max_fraction * spec.time_scale}"
        )


def step(rng: np.random.Generator | None, x, spec: DoubleWellSpec, lam: float, dt: float,
         noise=None):
    """One Euler-Maruyama step; pass `noise` to override the standard-normal draw."""
    check_dt(spec, dt)
    x = np.asarray(x, dtype=float)
    if noise is None:
        noise = rng.standard_normal(x.shape)
    return (x - potential_gradient(spec, lam, x) * dt / spec.gamma
            + math.sqrt(2.0 * dt / (spec.beta * spec.gamma)) * noise)


@dataclass(frozen=True)
class BiasProtocol:
    """Piecewise-linear bias schedule through (times[i], values[i]), sampled every dt."""
    times: tuple
    values: tuple
    dt: float

    def __post_init__(self):
        if len(self.times) != len(self.values) or len(self.times) < 2:
            raise ValueError("protocol needs >= 2 matching knots")
        if not all(b > a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("protocol knot times must increase")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("protocol values must be finite")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @classmethod
    def constant(cls, value: float, duration: float, dt: float) -> "BiasProtocol":
        return cls((0.0, duration), (value, value), dt)

    @classmethod
    def ramp(cls, start: float, stop: float, duration: float, dt: float) -> "BiasProtocol":
        return cls((0.0, duration), (start, stop), dt)

    @classmethod
    def cyclic(cls, base: float, peak: float, duration: float, dt: float) -> "BiasProtocol":
        return cls((0.0, duration / 2, duration), (base, peak, base), dt)

    @property
    def t_start(self) -> float:
        return self.times[0]

    @property
    def t_end(self) -> float:
        return self.times[-1]

    @property
    def n_steps(self) -> int:
        return max(1, int(round((self.t_end - self.t_start) / self.dt)))

    def schedule(self) -> np.ndarray:
        t = self.t_start + self.dt * np.arange(self.n_steps + 1)
        t[-1] = min(t[-1], self.t_end)
        return np.interp(t, self.times, self.values)


@dataclass(frozen=True)
class TrajectoryRecord:
    work: float
    heat: float
    delta_e: float
    final_side: int
    first_passage_time: float | None


@dataclass
class Ensemble:
    work: np.ndarray
    heat: np.ndarray
    delta_e: np.ndarray
    final_side: np.ndarray
    first_passage_time: np.ndarray  # nan where the barrier was never crossed
    final_x: np.ndarray

    def __len__(self):
        return len(self.work)

    def records(self) -> list[TrajectoryRecord]:
        return [
            TrajectoryRecord(float(w), float(q), float(e), int(s),
                             None if math.isnan(f) else float(f))
            for w, q, e, s, f in zip(self.work, self.heat, self.delta_e, self.final_side,
                                     self.first_passage_time)
        ]

    @classmethod
    def concat(cls, parts: list["Ensemble"]) -> "Ensemble":
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("work", "heat", "delta_e", "final_side", "first_passage_time",
                               "final_x")))


def integrate(rng: np.random.Generator, spec: DoubleWellSpec, lambdas: np.ndarray, dt: float,
              x: np.ndarray) -> Ensemble:
    """Vectorized kernel: evolve every entry of x through the sampled schedule."""
    check_dt(spec, dt)
    x = np.array(x, dtype=float)
    n = x.shape[0]
    diff = math.sqrt(2.0 * dt / (spec.beta * spec.gamma))
    drift = dt / spec.gamma
    start_side = np.where(x < 0, -1.0, 1.0)
    e_start = potential(spec, lambdas[0], x)
    e_cur = e_start.copy()
    work = np.zeros(n)
    heat = np.zeros(n)
    fpt = np.full(n, np.nan)
    waiting = np.ones(n, dtype=bool)
    lam = lambdas[0]
    for k in range(1, len(lambdas)):
        lam_new = lambdas[k]
        if lam_new != lam:
            dw = x * (lam_new - lam)
            work += dw
            e_cur += dw
            lam = lam_new
        x = x - potential_gradient(spec, lam, x) * drift + diff * rng.standard_normal(n)
        e_new = potential(spec, lam, x)
        heat += e_cur - e_new
        e_cur = e_new
        crossed = waiting & (x * start_side < 0)
        if crossed.any():
            fpt[crossed] = k * dt
            waiting &= ~crossed
    delta_e = potential(spec, lambdas[-1], x) - e_start
    return Ensemble(work, heat, delta_e, np.where(x < 0, -1, 1), fpt, x)


def run_protocol(rng: np.random.Generator, spec: DoubleWellSpec, protocol: BiasProtocol,
                 x_init: float) -> TrajectoryRecord:
    ens = integrate(rng, spec, protocol.schedule(), protocol.dt, np.array([x_init]))
    return ens.records()[0]


def _grid_bounds(spec: DoubleWellSpec, lam: float, cutoff: float = 60.0) -> tuple[float, float]:
    """Interval outside which beta (V - V_min) exceeds `cutoff`."""
    half = spec.x0
    while True:
        xs = np.linspace(-half, half, 4001)
        bv = spec.beta * potential(spec, lam, xs)
        bmin = bv.min()
        if bv[0] - bmin > cutoff and bv[-1] - bmin > cutoff:
            return -half, half
        half *= 1.5


def log_partition(spec: DoubleWellSpec, lam: float, n_points: int = 20001) -> float:
    """ln Z(lam) with Z = int exp(-beta V(x, lam)) dx, trapezoidal on a wide grid."""
    lo, hi = _grid_bounds(spec, lam)
    xs = np.linspace(lo, hi, n_points)
    bv = -spec.beta * potential(spec, lam, xs)
    m = bv.max()
    w = np.exp(bv - m)
    dx = xs[1] - xs[0]
    return m + math.log(dx * (w.sum() - 0.5 * (w[0] + w[-1])))


def free_energy_difference(spec: DoubleWellSpec, lam0: float, lam1: float,
                           n_points: int = 20001) -> float:
    """Delta F = -(1/beta) ln(Z(lam1)/Z(lam0)) by quadrature over x."""
    if lam0 == lam1:
        return 0.0
    return -(log_partition(spec, lam1, n_points) - log_partition(spec, lam0, n_points)) / spec.beta


def boltzmann_density(spec: DoubleWellSpec, lam: float, x):
    return np.exp(-spec.beta * potential(spec, lam, np.asarray(x)) - log_partition(spec, lam))


def sample_boltzmann(rng: np.random.Generator, spec: DoubleWellSpec, lam: float, n: int,
                     side: int | None = None) -> np.ndarray:
    """Rejection-sample the equilibrium density at fixed lam (optionally one well only).

    Proposals are uniform over the region where the density is non-negligible;
    the envelope is the density maximum found on a fine quadrature grid.
    """
    lo, hi = _grid_bounds(spec, lam, cutoff=40.0)
    if side == -1:
        hi = 0.0
    elif side == 1:
        lo = 0.0
    xs = np.linspace(lo, hi, 20001)
    dens = np.exp(-spec.beta * (potential(spec, lam, xs)))
    ceiling = 1.001 * dens.max()
    out = np.empty(0)
    while out.size < n:
        m = max(2 * (n - out.size), 256)
        cand = rng.uniform(lo, hi, m)
        keep = rng.uniform(0, ceiling, m) < np.exp(-spec.beta * potential(spec, lam, cand))
        out = np.concatenate([out, cand[keep]])
    return out[:n]


def _block_task(args) -> Ensemble:
    seed, path, block, size, spec, lambdas, dt, x_init = args
    rng = stream(seed, *path, block)
    if isinstance(x_init, str):
        x = sample_boltzmann(rng, spec, lambdas[0], size)
    else:
        x = np.full(size, float(x_init))
    return integrate(rng, spec, lambdas, dt, x)


def run_ensemble(seed: int, spec: DoubleWellSpec, protocol: BiasProtocol, n_trajectories: int,
                 x_init: float | str = "equilibrium", workers: int = 1,
                 path: tuple = ("ensemble",)) -> Ensemble:
    """Simulate n_trajectories of one protocol.

    x_init is either a fixed starting coordinate or "equilibrium", which draws
    each start from the Boltzmann density at the first schedule value.
    """
    if n_trajectories < 1:
        raise ValueError("need at least one trajectory")
    lambdas = protocol.schedule()
    n_blocks = -(-n_trajectories // BLOCK_SIZE)
    tasks = [(seed, path, b, min(BLOCK_SIZE, n_trajectories - b * BLOCK_SIZE), spec, lambdas,
              protocol.dt, x_init) for b in range(n_blocks)]
    if workers > 1 and n_blocks > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_block_task, tasks))
    else:
        parts = [_block_task(t) for t in tasks]
    return Ensemble.concat(parts)


def jarzynski_estimate(works, beta: float) -> tuple[float, float]:
    """Sample mean of exp(-beta W) and its standard error."""
    if isinstance(works, Ensemble):
        w = works.work
    else:
        w = np.array([r.work if isinstance(r, TrajectoryRecord) else r for r in works], dtype=float)
    if w.size < 2:
        raise ValueError("need at least two work values")
    y = np.exp(-beta * w)
    return float(y.mean()), float(y.std(ddof=1) / math.sqrt(y.size))


def first_law_residual(ens: Ensemble) -> np.ndarray:
    """|W - dE - Q| relative to the largest of the three magnitudes (floored at 1)."""
    scale = np.maximum.reduce([np.abs(ens.work), np.abs(ens.delta_e), np.abs(ens.heat),
                               np.ones(len(ens))])
    return np.abs(ens.work - ens.delta_e - ens.heat) / scale


@dataclass(frozen=True)
class PassageResult:
    rate: float
    rate_se: float
    mean_time: float
    n_censored: int


def _passage_block(args) -> np.ndarray:
    seed, path, block, size, spec, dt, max_steps = args
    rng = stream(seed, *path, block)
    x = np.full(size, -spec.x0)
    times = np.full(size, np.nan)
    idx = np.arange(size)
    diff = math.sqrt(2.0 * dt / (spec.beta * spec.gamma))
    drift = dt / spec.gamma
    for k in range(1, max_steps + 1):
        x = x - potential_gradient(spec, 0.0, x) * drift + diff * rng.standard_normal(x.size)
        done = x >= 0
        if done.any():
            times[idx[done]] = k * dt
            keep = ~done
            x, idx = x[keep], idx[keep]
            if x.size == 0:
                break
    return times


def first_passage_times(seed: int, spec: DoubleWellSpec, n_trajectories: int,
                        dt: float | None = None, max_steps: int = 2_000_000, workers: int = 1,
                        path: tuple = ("passage",)) -> np.ndarray:
    """Times for walkers started at the left minimum (lam = 0) to first reach x = 0.

    Censored walkers (not crossed within max_steps) are reported as nan.
    """
    dt = spec.default_dt if dt is None else dt
    check_dt(spec, dt)
    n_blocks = -(-n_trajectories // BLOCK_SIZE)
    tasks = [(seed, path, b, min(BLOCK_SIZE, n_trajectories - b * BLOCK_SIZE), spec, dt, max_steps)
             for b in range(n_blocks)]
    if workers > 1 and n_blocks > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_passage_block, tasks))
    else:
        parts = [_passage_block(t) for t in tasks]
    return np.concatenate(parts)


def first_passage_rate(seed: int, spec: DoubleWellSpec, n_trajectories: int,
                       dt: float | None = None, max_steps: int = 2_000_000,
                       workers: int = 1) -> PassageResult:
    """Inverse mean first-passage time over the barrier top; SE by the delta method."""
    times = first_passage_times(seed, spec, n_trajectories, dt, max_steps, workers,
                                path=("passage", repr(spec.beta), repr(spec.barrier)))
    done = times[~np.isnan(times)]
    if done.size < 2:
        raise RuntimeError("fewer than two walkers crossed the barrier; raise max_steps")
    mean = float(done.mean())
    se_mean = float(done.std(ddof=1) / math.sqrt(done.size))
    return PassageResult(1.0 / mean, se_mean / mean ** 2, mean, int(times.size - done.size))


def switch_trials(rng: np.random.Generator, spec: DoubleWellSpec, bias: float, window: float,
                  n: int, ramp_time: float | None = None, dt: float | None = None) -> Ensemble:
    """n independent activation-switch trials at one bias A.

    Each particle is equilibrated at lam = 0 inside the well opposing the bias
    (the left well when bias = 0), the tilt is ramped to lam = -A/(2 x0), so
    the right well sits lower by A, and then held for `window`.
    """
    if not window > 0:
        raise ValueError(f"window must be positive, got {window}")
    dt = spec.default_dt if dt is None else dt
    ramp_time = spec.time_scale if ramp_time is None else ramp_time
    target = -bias / (2.0 * spec.x0)
    side = 1 if bias < 0 else -1
    x = sample_boltzmann(rng, spec, 0.0, n, side=side)
    proto = BiasProtocol((0.0, ramp_time, ramp_time + window), (0.0, target, target), dt)
    return integrate(rng, spec, proto.schedule(), dt, x)


def switch_trial(rng: np.random.Generator, spec: DoubleWellSpec, bias: float, window: float,
                 ramp_time: float | None = None, dt: float | None = None
                 ) -> tuple[int, float, float]:
    ens = switch_trials(rng, spec, bias, window, 1, ramp_time, dt)
    return int(ens.final_side[0]), float(ens.work[0]), float(ens.heat[0])
