"""Raman single-photon source and detector.

Control fields are stored as a normalized temporal shape times a scale g
(units s^(-1/2)), so |E(t)|^2 = g^2 |shape(t)|^2 is a rate and the
dimensionless clock tau runs from 0 to g^2 over the grid.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.constants import hbar

from .temporal_modes import (GridMismatchError, TemporalMode, inner_product, is_normalized,
                             normalize)

# tau increment per vectorized block of the absorption recursion; keeps exp(tau/2) <= e^20
_TAU_BLOCK = 40.0


class DetectorModel(enum.Enum):
    IDEAL_PROJECTIVE = "ideal"
    DYNAMICAL_RAMAN = "raman"


@dataclass(frozen=True)
class RamanDeviceSpec:
    omega_a: float
    omega_b: float

    def __post_init__(self):
        if not self.omega_a > 0:
            raise ValueError(f"cavity frequency must be positive, got {self.omega_a}")

    @property
    def omega_c(self) -> float:
        """Control carrier at Raman resonance."""
        return self.omega_a - self.omega_b

    @property
    def photon_energy(self) -> float:
        """Energy of one lost quantum, hbar * omega_a, in joules."""
        return hbar * self.omega_a


@dataclass(frozen=True)
class ReadField:
    shape: TemporalMode
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale >= 0 or not math.isfinite(self.scale):
            raise ValueError(f"field scale must be finite and >= 0, got {self.scale}")
        if not is_normalized(self.shape):
            raise ValueError("read-field shape must be normalized")

    @property
    def grid(self):
        return self.shape.grid

    @property
    def amplitude(self) -> np.ndarray:
        return self.scale * self.shape.amplitude

    def flux(self) -> np.ndarray:
        return self.scale ** 2 * self.shape.intensity


@dataclass(frozen=True)
class AbsorptionOutcome:
    absorbed: bool
    p_used: float


def _at(grid, values: np.ndarray, t: float) -> float:
    if not grid.contains(t):
        raise ValueError(f"t={t} outside grid [{grid.t_min}, {grid.t_max}]")
    return float(np.interp(t, grid.times, values))


def emission_flux(write_field: ReadField, t: float) -> float:
    """Mean photon emission rate |E_w(t)|^2 of the source."""
    return _at(write_field.grid, write_field.flux(), t)


def emitted_mode(write_field: ReadField) -> TemporalMode:
    """Photon produced by an ideal source: the normalized write-field shape."""
    if write_field.scale == 0:
        raise ValueError("a zero write field emits no photon")
    return normalize(write_field.shape)


def tau_profile(read_field: ReadField) -> np.ndarray:
    return read_field.grid.cumulative(read_field.flux())


def tau_transform(read_field: ReadField, t: float) -> float:
    return _at(read_field.grid, tau_profile(read_field), t)


def absorption_amplitude_profile(read_field: ReadField, photon: TemporalMode) -> np.ndarray:
    """Running absorption amplitude I(t_k) on every grid point.

    I(t) = int_{t_min}^t conj(E(t')) nu(t') exp(-(tau(t) - tau(t'))/2) dt'.
    Trapezoid steps obey I_{k+1} = e^{-dtau/2} (I_k + h f_k) + h f_{k+1}
    with h = dt/2; inside a block this telescopes to a cumulative sum of
    f exp(tau/2), and the carry between blocks keeps the exponent bounded.
    """
    if photon.grid != read_field.grid:
        raise GridMismatchError("photon and read field live on different grids")
    if not is_normalized(photon):
        raise ValueError("photon mode must be normalized")
    grid = photon.grid
    f = np.conj(read_field.amplitude) * photon.amplitude
    tau = tau_profile(read_field)
    out = np.empty(grid.n_points, dtype=complex)
    out[0] = 0.0
    start = 0
    h = 0.5 * grid.dt
    while start < grid.n_points - 1:
        stop = int(np.searchsorted(tau, tau[start] + _TAU_BLOCK, side="right"))
        stop = min(max(stop, start + 2), grid.n_points)
        rel = tau[start:stop] - tau[start]
        weighted = f[start:stop] * np.exp(0.5 * rel)
        running = np.zeros(stop - start, dtype=complex)
        running[1:] = np.cumsum(h * (weighted[1:] + weighted[:-1]))
        out[start:stop] = np.exp(-0.5 * rel) * (out[start] + running)
        start = stop - 1
    return out


def absorption_profile(read_field: ReadField, photon: TemporalMode) -> np.ndarray:
    return np.abs(absorption_amplitude_profile(read_field, photon)) ** 2


def absorption_probability(read_field: ReadField, photon: TemporalMode,
                           t: float | None = None) -> float:
    """Probability the detector atom has absorbed the photon by time t (default: t_max)."""
    prof = absorption_profile(read_field, photon)
    p = float(prof[-1]) if t is None else _at(photon.grid, prof, t)
    return min(max(p, 0.0), 1.0)


def ideal_projection_probability(mu: TemporalMode, nu: TemporalMode) -> float:
    if not (is_normalized(mu) and is_normalized(nu)):
        raise ValueError("projection needs normalized modes")
    return min(abs(inner_product(mu, nu)) ** 2, 1.0)


def detection_probability(read_field: ReadField, photon: TemporalMode,
                          model: DetectorModel) -> float:
    if model is DetectorModel.IDEAL_PROJECTIVE:
        return ideal_projection_probability(read_field.shape, photon)
    return absorption_probability(read_field, photon)


def detect(rng: np.random.Generator, read_field: ReadField, photon: TemporalMode,
           model: DetectorModel) -> AbsorptionOutcome:
    p = detection_probability(read_field, photon, model)
    return AbsorptionOutcome(absorbed=bool(rng.random() < p), p_used=p)


def count_absorptions(rng: np.random.Generator, p: float, trials: int) -> int:
    """Number of absorbed photons in `trials` independent detections at probability p."""
    return int(np.count_nonzero(rng.random(trials) < p))


def swap_to_source(learned_field: ReadField) -> TemporalMode:
    """Re-emit from the detector run as a source: the learned shape, normalized."""
    if learned_field.scale == 0:
        raise ValueError("zero learned field cannot drive re-emission")
    return normalize(learned_field.shape)
