import math

import numpy as np
import pytest
from scipy.integrate import quad, trapezoid

from photoperceptron.langevin_thermo import (BiasProtocol, DoubleWellSpec,
                                             boltzmann_density, first_law_residual,
                                             first_passage_rate, free_energy_difference,
                                             integrate, jarzynski_estimate, potential,
                                             potential_gradient, run_ensemble, run_protocol,
                                             sample_boltzmann, step, switch_trial, switch_trials)
from photoperceptron.streams import stream

SPEC = DoubleWellSpec(barrier=2.0, x0=1.0, gamma=1.0, beta=1.0)


def quad_free_energy(spec, lam0, lam1):
    def z(lam):
        return quad(lambda x: math.exp(-spec.beta * potential(spec, lam, x)), -6, 6,
                    points=[-1, 0, 1], limit=200)[0]
    return -math.log(z(lam1) / z(lam0)) / spec.beta


def test_potential_shape():
    for x0, dv in ((1.0, 2.0), (1.5, 0.7)):
        spec = DoubleWellSpec(barrier=dv, x0=x0)
        assert potential(spec, 0.0, x0) == 0 and potential(spec, 0.0, -x0) == 0
        assert potential(spec, 0.0, 0.0) == dv
        xs = np.linspace(-3, 3, 101)
        np.testing.assert_allclose(potential(spec, 0.0, xs), potential(spec, 0.0, -xs))
        # dV/dlam = x exactly
        np.testing.assert_allclose(potential(spec, 0.7, xs) - potential(spec, 0.2, xs), 0.5 * xs,
                                   atol=1e-12)


def test_gradient_matches_finite_difference():
    xs = np.linspace(-2, 2, 41)
    h = 1e-6
    fd = (potential(SPEC, 0.3, xs + h) - potential(SPEC, 0.3, xs - h)) / (2 * h)
    np.testing.assert_allclose(potential_gradient(SPEC, 0.3, xs), fd, atol=1e-6)


def test_spec_validation():
    with pytest.raises(ValueError):
        DoubleWellSpec(barrier=-1.0)
    with pytest.raises(ValueError):
        DoubleWellSpec(beta=0.0)


def test_step_fixed_point_without_noise():
    assert step(None, 1.0, SPEC, 0.0, SPEC.default_dt, noise=0.0) == 1.0
    assert step(None, -1.0, SPEC, 0.0, SPEC.default_dt, noise=0.0) == -1.0


def test_step_rejects_large_dt():
    with pytest.raises(ValueError, match="stability"):
        step(np.random.default_rng(0), 0.0, SPEC, 0.0, 0.1)


def test_step_drift_and_diffusion():
    rng = np.random.default_rng(0)
    n, x, dt = 10 ** 5, 0.4, SPEC.default_dt
    dx = step(rng, np.full(n, x), SPEC, 0.3, dt) - x
    drift = -potential_gradient(SPEC, 0.3, x) * dt / SPEC.gamma
    var = 2 * dt / (SPEC.beta * SPEC.gamma)
    assert abs(dx.mean() - drift) < 3 * math.sqrt(var / n)
    # SE of a sample variance of Gaussian data is var * sqrt(2/(n-1))
    assert abs(dx.var() - var) < 3 * var * math.sqrt(2 / (n - 1))


def test_constant_protocol_does_no_work():
    rec = run_protocol(np.random.default_rng(1), SPEC, BiasProtocol.constant(0.4, 1.0, 5e-4), -1.0)
    assert rec.work == 0.0
    assert rec.heat == pytest.approx(-rec.delta_e, abs=1e-12)


def test_protocol_schedule():
    p = BiasProtocol.cyclic(0.0, 1.0, 2.0, 0.5)
    np.testing.assert_allclose(p.schedule(), [0, 0.5, 1.0, 0.5, 0.0])
    with pytest.raises(ValueError):
        BiasProtocol((0.0, 0.0), (1.0, 1.0), 0.1)


def test_free_energy_identities():
    assert free_energy_difference(SPEC, 0.3, 0.3) == 0
    assert free_energy_difference(SPEC, 0.6, -0.6) == pytest.approx(0, abs=1e-12)


def test_free_energy_golden_value():
    # dV = 2/beta, lam 0 -> 0.5 dV/x0
    lam1 = 0.5 * SPEC.barrier / SPEC.x0
    dF = free_energy_difference(SPEC, 0.0, lam1)
    assert dF == pytest.approx(free_energy_difference(SPEC, 0.0, lam1, n_points=160001), abs=1e-12)
    assert dF == pytest.approx(quad_free_energy(SPEC, 0.0, lam1), abs=1e-9)
    assert dF == pytest.approx(-0.3843308055, abs=1e-9)


def test_boltzmann_density_normalized():
    xs = np.linspace(-4, 4, 40001)
    for lam in (0.0, 0.8):
        d = boltzmann_density(SPEC, lam, xs)
        assert trapezoid(d, xs) == pytest.approx(1, abs=1e-9)


def test_rejection_sampler_matches_density():
    rng = np.random.default_rng(9)
    xs = sample_boltzmann(rng, SPEC, 0.5, 200_000)
    hist, edges = np.histogram(xs, bins=40, range=(-2, 2), density=True)
    mid = 0.5 * (edges[1:] + edges[:-1])
    d = boltzmann_density(SPEC, 0.5, mid)
    mask = d > 0.1 * d.max()
    assert np.max(np.abs(hist[mask] / d[mask] - 1)) < 0.05
    left = sample_boltzmann(rng, SPEC, 0.0, 1000, side=-1)
    assert np.all(left <= 0)


def test_equilibrium_histogram_from_dynamics():
    # 10^6 samples: 2000 walkers, 500 snapshots each after burn-in
    spec = DoubleWellSpec(barrier=1.0, beta=1.0)
    rng = np.random.default_rng(17)
    lam, dt = 0.3, 1e-3
    x = rng.choice([-1.0, 1.0], size=2000)
    x = integrate(rng, spec, np.full(15_000, lam), dt, x).final_x
    samples = []
    for _ in range(500):
        x = integrate(rng, spec, np.full(51, lam), dt, x).final_x
        samples.append(x)
    samples = np.concatenate(samples)
    assert samples.size == 10 ** 6
    hist, edges = np.histogram(samples, bins=30, range=(-2, 2), density=True)
    # bin-averaged density from quadrature
    fine = np.linspace(-2, 2, 30 * 200 + 1)
    d = boltzmann_density(spec, lam, fine)
    bin_avg = np.array([d[i * 200:(i + 1) * 200 + 1].mean() for i in range(30)])
    mask = bin_avg > 0.1 * bin_avg.max()
    assert np.max(np.abs(hist[mask] / bin_avg[mask] - 1)) <= 0.05


def test_first_law_exact_with_moving_bias():
    ens = run_ensemble(3, SPEC, BiasProtocol.ramp(0.0, 1.5, 1.0, SPEC.default_dt), 500)
    assert np.max(first_law_residual(ens)) <= 1e-10
    assert np.any(ens.work != 0)


def test_jarzynski_degenerate_sample():
    est, se = jarzynski_estimate([0.7] * 5, beta=2.0)
    assert est == pytest.approx(math.exp(-1.4)) and se == 0
    with pytest.raises(ValueError):
        jarzynski_estimate([0.1], beta=1.0)


def test_jarzynski_cyclic_quick():
    ens = run_ensemble(5, SPEC, BiasProtocol.cyclic(0.0, 1.0, 1.0, SPEC.default_dt), 4000)
    est, se = jarzynski_estimate(ens, SPEC.beta)
    assert abs(est - 1) <= 3 * se
    assert ens.work.mean() >= -3 * ens.work.std() / math.sqrt(len(ens))


def test_ensemble_records_and_partition_invariance():
    proto = BiasProtocol.ramp(0.0, 1.0, 0.2, SPEC.default_dt)
    a = run_ensemble(11, SPEC, proto, 2500, workers=1)
    b = run_ensemble(11, SPEC, proto, 2500, workers=2)
    np.testing.assert_array_equal(a.work, b.work)
    np.testing.assert_array_equal(a.heat, b.heat)
    recs = a.records()
    assert len(recs) == 2500
    assert recs[0].final_side in (-1, 1)


def test_quasistatic_trend():
    dF = free_energy_difference(SPEC, 0.0, 1.0)
    gaps = []
    for duration in (0.05, 0.5, 5.0):
        ens = run_ensemble(21, SPEC, BiasProtocol.ramp(0.0, 1.0, duration, SPEC.default_dt), 2000)
        gaps.append(ens.work.mean() - dF)
    assert gaps[0] > gaps[1] > gaps[2] > -0.02


def test_first_passage():
    spec = DoubleWellSpec(barrier=1.0, beta=1.0)
    res = first_passage_rate(2, spec, 400)
    assert res.n_censored == 0 and res.rate > 0 and res.rate_se > 0
    # nearly vanishing barrier: faster than the dV = 1 case
    flat = first_passage_rate(2, DoubleWellSpec(barrier=1.0, beta=0.05), 400)
    assert flat.rate > res.rate


def mfpt_exact(spec):
    """Mean time from -x0 to 0 with reflection at -inf, by nested quadrature."""
    b = spec.beta
    V = lambda x: potential(spec, 0.0, x)
    inner = lambda y: quad(lambda z: math.exp(-b * V(z)), -6, y)[0]
    return b * spec.gamma * quad(lambda y: math.exp(b * V(y)) * inner(y), -spec.x0, 0)[0]


def test_first_passage_against_exact_mfpt():
    spec = DoubleWellSpec(barrier=1.0, beta=2.0)
    res = first_passage_rate(4, spec, 2000)
    # allow 3 SE plus a few percent of time-discretization bias
    assert res.mean_time == pytest.approx(mfpt_exact(spec), rel=0.06)


def test_switch_trial_strong_bias():
    spec = DoubleWellSpec(barrier=1.0, beta=1.0)
    rng = np.random.default_rng(0)
    ens = switch_trials(rng, spec, 10.0, 2.0, 500)
    assert np.mean(ens.final_side == 1) > 0.99
    ens = switch_trials(rng, spec, -10.0, 2.0, 500)
    assert np.mean(ens.final_side == -1) > 0.99
    n, w, q = switch_trial(rng, spec, 10.0, 2.0)
    assert n == 1


def test_switch_trial_zero_bias_long_window():
    spec = DoubleWellSpec(barrier=1.0, beta=1.0)
    ens = switch_trials(np.random.default_rng(1), spec, 0.0, 30.0, 2000)
    frac = np.mean(ens.final_side == 1)
    assert abs(frac - 0.5) < 3 * math.sqrt(0.25 / 2000)
    assert np.all(ens.work == 0)


def test_switch_frequency_monotone_in_bias():
    spec = DoubleWellSpec(barrier=1.0, beta=1.0)
    rng = stream(5, "switch-scan")
    fr = [np.mean(switch_trials(rng, spec, a, 3.0, 4000).final_side == 1)
          for a in (-2.0, -1.0, 0.0, 1.0, 2.0)]
    assert all(b > a for a, b in zip(fr, fr[1:]))
