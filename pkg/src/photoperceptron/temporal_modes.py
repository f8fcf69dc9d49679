"""Complex temporal mode functions on a uniform time grid.

A single photon is represented only by its temporal amplitude nu(t), in
units of s^(-1/2) so that |nu(t)|^2 integrates to one.  All integrals use
the composite trapezoidal rule.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

QUAD_TOL = 1e-8
# a Hermite-Gaussian mode is rejected if its quadrature norm misses 1 by more
RESOLUTION_TOL = 1e-6
DEFAULT_HALF_WIDTH = 8.0
DEFAULT_POINTS = 4096


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class TemporalGrid:
    t_min: float
    t_max: float
    n_points: int

    def __post_init__(self):
        if not (math.isfinite(self.t_min) and math.isfinite(self.t_max)):
            raise ValueError("grid bounds must be finite")
        if not self.t_min < self.t_max:
            raise ValueError(f"need t_min < t_max, got {self.t_min} >= {self.t_max}")
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise ValueError(f"n_points must be an integer >= 2, got {self.n_points}")

    @property
    def dt(self) -> float:
        return (self.t_max - self.t_min) / (self.n_points - 1)

    @cached_property
    def times(self) -> np.ndarray:
        t = np.linspace(self.t_min, self.t_max, int(self.n_points))
        t.flags.writeable = False
        return t

    def contains(self, t: float) -> bool:
        return self.t_min <= t <= self.t_max

    def integrate(self, values: np.ndarray):
        v = np.asarray(values)
        return self.dt * (v.sum() - 0.5 * (v[0] + v[-1]))

    def cumulative(self, values: np.ndarray) -> np.ndarray:
        """Running trapezoidal integral from t_min, starting at 0."""
        out = np.zeros(len(values), dtype=np.result_type(values, float))
        out[1:] = np.cumsum(0.5 * self.dt * (values[1:] + values[:-1]))
        return out


def make_grid(t_min: float, t_max: float, n_points: int) -> TemporalGrid:
    return TemporalGrid(float(t_min), float(t_max), int(n_points))


def default_grid(sigma: float = 1.0, center: float = 0.0) -> TemporalGrid:
    """The [-8 sigma, 8 sigma], 4096-point grid used by all experiments."""
    return make_grid(center - DEFAULT_HALF_WIDTH * sigma, center + DEFAULT_HALF_WIDTH * sigma,
                     DEFAULT_POINTS)


@dataclass(frozen=True, eq=False)
class TemporalMode:
    grid: TemporalGrid
    amplitude: np.ndarray
    normalized: bool = field(default=False)

    def __post_init__(self):
        amp = np.array(self.amplitude, dtype=complex)
        if amp.shape != (self.grid.n_points,):
            raise ValueError(f"amplitude has shape {amp.shape}, grid has {self.grid.n_points} points")
        amp.flags.writeable = False
        object.__setattr__(self, "amplitude", amp)

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.amplitude) ** 2

    def norm_squared(self) -> float:
        return float(self.grid.integrate(self.intensity))

    def peak_time(self) -> float:
        return float(self.grid.times[np.argmax(self.intensity)])

    def scaled(self, factor: complex) -> "TemporalMode":
        return TemporalMode(self.grid, factor * self.amplitude)


@dataclass(frozen=True)
class HermiteGaussianSpec:
    order: int
    width: float
    center: float = 0.0

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 0:
            raise ValueError(f"order must be a non-negative integer, got {self.order}")
        if not self.width > 0:
            raise ValueError(f"width must be positive, got {self.width}")


def _check_same_grid(modes: Sequence[TemporalMode]) -> TemporalGrid:
    grid = modes[0].grid
    for m in modes[1:]:
        if m.grid != grid:
            raise GridMismatchError(f"grid mismatch: {m.grid} vs {grid}")
    return grid


def hermite_functions(max_order: int, s: np.ndarray) -> np.ndarray:
    """Orthonormal Hermite functions psi_0..psi_max_order of s, shape (N+1, len(s)).

    Uses the three-term recurrence on the normalized functions, so no
    factorials or raw polynomial values ever overflow.
    """
    out = np.empty((max_order + 1, len(s)))
    out[0] = np.pi ** -0.25 * np.exp(-0.5 * s * s)
    if max_order >= 1:
        out[1] = math.sqrt(2.0) * s * out[0]
    for n in range(2, max_order + 1):
        out[n] = math.sqrt(2.0 / n) * s * out[n - 1] - math.sqrt((n - 1) / n) * out[n - 2]
    return out


def hermite_gaussian(spec: HermiteGaussianSpec, grid: TemporalGrid) -> TemporalMode:
    """u_n(t) = (2^n n! sigma sqrt(pi))^(-1/2) H_n(s) exp(-s^2/2), s = (t - t0)/sigma."""
    s = (grid.times - spec.center) / spec.width
    u = hermite_functions(spec.order, s)[spec.order] / math.sqrt(spec.width)
    mode = TemporalMode(grid, u)
    err = abs(mode.norm_squared() - 1.0)
    if err > RESOLUTION_TOL:
        raise ValueError(
            f"Hermite-Gaussian order {spec.order} (width {spec.width}) is not resolved on "
            f"{grid}: norm error {err:.2e}"
        )
    return TemporalMode(grid, u, normalized=True)


def hermite_gaussian_basis(n_modes: int, grid: TemporalGrid, sigma: float = 1.0,
                           center: float = 0.0) -> list[TemporalMode]:
    return [hermite_gaussian(HermiteGaussianSpec(n, sigma, center), grid) for n in range(n_modes)]


def inner_product(mu: TemporalMode, nu: TemporalMode) -> complex:
    """Trapezoidal approximation of the overlap integral of conj(mu) * nu."""
    grid = _check_same_grid([mu, nu])
    return complex(grid.integrate(np.conj(mu.amplitude) * nu.amplitude))


def gram_matrix(modes: Sequence[TemporalMode]) -> np.ndarray:
    grid = _check_same_grid(modes)
    amps = np.array([m.amplitude for m in modes])
    w = np.full(grid.n_points, grid.dt)
    w[0] = w[-1] = 0.5 * grid.dt
    return (np.conj(amps) * w) @ amps.T


def superpose(modes: Sequence[TemporalMode], coeffs: Sequence[complex]) -> TemporalMode:
    if len(modes) != len(coeffs):
        raise ValueError(f"{len(modes)} modes but {len(coeffs)} coefficients")
    if not modes:
        raise ValueError("need at least one mode")
    grid = _check_same_grid(modes)
    c = np.asarray(coeffs, dtype=complex)
    amp = c @ np.array([m.amplitude for m in modes])
    unit = abs(np.linalg.norm(c) - 1.0) <= 1e-12
    orthonormal = False
    if unit and all(m.normalized for m in modes):
        g = gram_matrix(modes)
        orthonormal = bool(np.max(np.abs(g - np.eye(len(modes)))) <= QUAD_TOL)
    return TemporalMode(grid, amp, normalized=unit and orthonormal)


def normalize(mode: TemporalMode) -> TemporalMode:
    n2 = mode.norm_squared()
    if n2 <= 0:
        raise ValueError("cannot normalize a zero mode")
    return TemporalMode(mode.grid, mode.amplitude / math.sqrt(n2), normalized=True)


def is_normalized(mode: TemporalMode, tol: float = RESOLUTION_TOL) -> bool:
    return abs(mode.norm_squared() - 1.0) <= tol


def pulse_code_mode(y: int, grid: TemporalGrid, sigma: float = 1.0) -> TemporalMode:
    """Pulse-code photon nu_y = (u0 + x u1)/sqrt(2) with x = 2y - 1.

    y = 0 puts the intensity maximum before t = 0, y = 1 after it.
    """
    if y not in (0, 1):
        raise ValueError(f"y must be 0 or 1, got {y}")
    x = 2 * y - 1
    u0, u1 = hermite_gaussian_basis(2, grid, sigma)
    return superpose([u0, u1], [1 / math.sqrt(2), x / math.sqrt(2)])


def grid_header(grid: TemporalGrid) -> str:
    return f"# grid t_min={grid.t_min!r} t_max={grid.t_max!r} n_points={grid.n_points}"


def write_mode_csv(mode: TemporalMode, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(grid_header(mode.grid) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "re", "im"])
        for t, a in zip(mode.grid.times, mode.amplitude):
            w.writerow([repr(float(t)), repr(float(a.real)), repr(float(a.imag))])


def read_mode_csv(path) -> TemporalMode:
    with open(path) as fh:
        header = fh.readline().split()
        params = dict(item.split("=") for item in header[2:])
        grid = make_grid(float(params["t_min"]), float(params["t_max"]), int(params["n_points"]))
        rows = list(csv.DictReader(fh))
    amp = np.array([float(r["re"]) + 1j * float(r["im"]) for r in rows])
    mode = TemporalMode(grid, amp)
    return TemporalMode(grid, amp, normalized=is_normalized(mode))


def mode_to_json(mode: TemporalMode) -> dict:
    g = mode.grid
    return {
        "grid": {"t_min": g.t_min, "t_max": g.t_max, "n_points": g.n_points},
        "re": mode.amplitude.real.tolist(),
        "im": mode.amplitude.imag.tolist(),
    }
