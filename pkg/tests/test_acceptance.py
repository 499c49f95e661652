"""Acceptance criteria.

Each test records one PASS/FAIL line, printed in the terminal summary,
before asserting.  Criteria that the model cannot reach are kept at their
stated tolerance and fail honestly.
"""

import math
import time
import warnings

import numpy as np
import pytest
from scipy import constants

from conftest import ACCEPTANCE_LINES
from ramanspin.cli import main
from ramanspin.engine import ControlSchedule, IntegratorConfig, Segment, apply_map, free_evolution_map, integrate
from ramanspin.fitting import FitModel, FitParams, fit, synthesize
from ramanspin.linalg import matrix_exp
from ramanspin.model import (
    EnergyLinearDephasing,
    LambdaSystem,
    PulseSpec,
    RabiCalibration,
    RelaxationParams,
    build_hamiltonian_3,
    effective_two_level,
    energy_for_rotation,
    envelope,
    populations_density,
    rabi_pairs,
    relaxation_coefficients,
    thermal_ratio,
)
from ramanspin.sequences import (
    Prepare,
    Pulse,
    Readout,
    FreeEvolve,
    Setup,
    double_pulse_sweep,
    in_phase_delay,
    pulse_train,
    run_sequence,
    single_pulse_sweep,
    visibility,
)

TEMPLATE = PulseSpec(0.0)


def record(crit, label, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  [{crit}] {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pi_energy(setup, theta):
    return energy_for_rotation(theta, TEMPLATE, setup.system, setup.calibration)


def single_fidelity(setup, energy):
    return float(single_pulse_sweep([energy], setup, TEMPLATE).fidelity[0])


# ------------------------------------------------------------ criterion 1


def test_c1_single_pulse_pi_fidelity(constant_setup):
    f = single_fidelity(constant_setup, pi_energy(constant_setup, math.pi))
    ok = record(1, "single-pulse pi fidelity, constant 10 GHz", abs(f - 0.97) <= 0.02, f"F = {f:.4f} (want 0.97 +/- 0.02)")
    assert ok


def test_c1_single_pulse_half_pi_fidelity(constant_setup):
    f = single_fidelity(constant_setup, pi_energy(constant_setup, math.pi / 2))
    ok = record(1, "single-pulse pi/2 fidelity, constant 10 GHz", f >= 0.98, f"F = {f:.4f} (want >= 0.98)")
    assert ok


# ------------------------------------------------------------ criterion 2


def test_c2_fitted_model_single(linear_setup):
    f = single_fidelity(linear_setup, 10.0)
    ok = record(2, "0.9 rad single pulse, energy-linear model", abs(f - 0.85) <= 0.03, f"F = {f:.4f} (want 0.85 +/- 0.03)")
    assert ok


def test_c2_fitted_model_double(linear_setup):
    tau = in_phase_delay(linear_setup.system, 10 * TEMPLATE.fwhm)
    f = float(double_pulse_sweep(10.0, [tau], linear_setup, TEMPLATE).fidelity[0])
    ok = record(
        2, "1.8 rad in-phase double pulse, energy-linear model", abs(f - 0.78) <= 0.03,
        f"F = {f:.4f} at tau_d = {tau:.3f} ps (want 0.78 +/- 0.03)",
    )
    assert ok


# ------------------------------------------------------------ criterion 3


def test_c3_saturation_plateau(linear_setup):
    energies = [30.0, 35.0, 40.0, 45.0, 50.0]
    rho22 = single_pulse_sweep(energies, linear_setup, TEMPLATE, with_fidelity=False).rho22
    ok = bool(np.all(np.abs(rho22 - 0.5) <= 0.05))
    record(3, "saturation plateau >= 30 uJ/cm2", ok, f"rho22 = {np.round(rho22, 3).tolist()} (want 0.50 +/- 0.05)")
    assert ok


# ------------------------------------------------------------ criterion 4


def test_c4_larmor_oscillation(linear_setup):
    taus = np.arange(20.0, 121.0, 1.0)
    curve = double_pulse_sweep(10.0, taus, linear_setup, TEMPLATE, with_fidelity=False)
    vis = visibility(curve, 0.06)
    ok = abs(vis.frequency_ghz - 42.0) <= 0.5 and abs(vis.period_ps - 23.8) <= 0.3
    record(4, "two-pulse Larmor fringe", ok, f"f = {vis.frequency_ghz:.3f} GHz, period = {vis.period_ps:.3f} ps")
    assert ok


# ------------------------------------------------------------ criterion 5


def test_c5_train_interior_maximum(linear_setup):
    counts = [1, 2, 4, 6, 8, 12, 16, 24, 32, 48, 64]
    f = pulse_train(counts, linear_setup, TEMPLATE).fidelity
    peak = int(np.argmax(f))
    ok = 0 < peak < len(counts) - 1 and f[-1] < f[peak]
    record(
        5, "train fidelity has an interior maximum in N", ok,
        f"peak F = {f[peak]:.4f} at N = {counts[peak]}, F(1) = {f[0]:.4f}, F(64) = {f[-1]:.4f}",
    )
    assert ok


def test_c5_train_eight_pulses_at_five(linear_setup):
    res = pulse_train([8], linear_setup, TEMPLATE, per_pulse_energy=5.0)
    f = float(res.fidelity[0])
    angle = 8 * float(res.extra["rotation_angle_rad"][0])
    ref = float(pulse_train([8], linear_setup, TEMPLATE).fidelity[0])
    ok = record(
        5, "8 pulses at 5 uJ/cm2", abs(f - 0.80) <= 0.05,
        f"F = {f:.4f}, total angle {angle:.3f} rad (want 0.80 +/- 0.05); pi/8 pulses give F = {ref:.4f}",
    )
    assert ok


# ------------------------------------------------------------ criterion 6


def _pulse_schedule(setup, energy, pulse=TEMPLATE, scale=1.0):
    p = pulse.at(pulse.arrival_time, energy)
    pair = [scale * w for w in rabi_pairs(setup.system, p, setup.calibration)[0]]
    return Segment(*p.window, lambda ts: build_hamiltonian_3(setup.system, pair, envelope(p, ts)))


def test_c6_integrator_properties(constant_setup, coherent_setup):
    results = {}
    # trace, hermiticity and positivity over a two-pulse run lasting 1 ns
    steps = [Prepare((0.94, 0.06, 0.0)), Pulse(TEMPLATE.at(0.0, 20.0)), Pulse(TEMPLATE.at(1000.0, 20.0)), Readout(2)]
    traj = run_sequence(steps, constant_setup).trajectory
    span_ns = (traj.times[-1] - traj.times[0]) * 1e-3
    drift = float(np.max(np.abs(np.einsum("tii->t", traj.states).real - 1.0))) / span_ns
    herm = float(np.max(np.abs(traj.states - np.conj(np.swapaxes(traj.states, 1, 2)))))
    lam = float(min(np.linalg.eigvalsh(s)[0] for s in traj.states))
    results["trace drift/ns"] = (drift, drift <= 1e-9)
    results["hermiticity"] = (herm, herm <= 1e-12)
    results["min eigenvalue"] = (lam, lam >= -1e-8)

    # purity with relaxation off
    pi = pi_energy(coherent_setup, math.pi)
    sched = ControlSchedule((_pulse_schedule(coherent_setup, pi),))
    states = integrate(populations_density((1.0, 0.0, 0.0)), sched).states
    purity = float(np.max(np.abs(np.einsum("tij,tji->t", states, states).real - 1.0)))
    results["purity drift"] = (purity, purity <= 1e-7)

    # piecewise-constant schedule against the matrix exponential
    rng = np.random.default_rng(11)
    rho = populations_density((0.5, 0.3, 0.2)).astype(complex)
    hs, segs, t = [], [], 0.0
    for _ in range(4):
        a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        h = 0.5 * (a + a.conj().T)
        segs.append(Segment(t, t + 2.0, lambda ts, h=h: np.broadcast_to(h, (len(ts), 3, 3))))
        hs.append(h)
        t += 2.0
    rk4 = integrate(rho, ControlSchedule(tuple(segs)), IntegratorConfig(dt_pulse_fs=1.0)).final
    exact = rho
    for h in hs:
        u = matrix_exp(-2j * h)
        exact = u @ exact @ u.conj().T
    oracle = float(np.max(np.abs(rk4 - exact)))
    results["RK4 vs expm"] = (oracle, oracle <= 1e-8)

    # observed order from step halving
    sched = ControlSchedule((_pulse_schedule(coherent_setup, pi, scale=math.sqrt(3.0)),))
    rho = populations_density((0.6, 0.3, 0.1))
    ref = integrate(rho, sched, IntegratorConfig(dt_pulse_fs=0.25)).final
    e1 = np.max(np.abs(integrate(rho, sched, IntegratorConfig(dt_pulse_fs=8.0)).final - ref))
    e2 = np.max(np.abs(integrate(rho, sched, IntegratorConfig(dt_pulse_fs=4.0)).final - ref))
    order = float(math.log2(e1 / e2))
    results["convergence order"] = (order, order >= 3.5)

    ok = all(v[1] for v in results.values())
    detail = ", ".join(f"{k} {v[0]:.3g}" for k, v in results.items())
    record(6, "integrator property suite", ok, detail)
    assert ok, results


# ------------------------------------------------------------ criterion 7


def _three_vs_two(system, energy, cal, dt_fs):
    pulse = TEMPLATE.at(0.0, energy)
    pair = rabi_pairs(system, pulse, cal)
    three = Segment(*pulse.window, lambda ts: build_hamiltonian_3(system, pair[0], envelope(pulse, ts)))
    two = Segment(*pulse.window, lambda ts: effective_two_level(system, pair, envelope(pulse, ts)))
    cfg = IntegratorConfig(dt_pulse_fs=dt_fs)
    r3 = integrate(populations_density((1.0, 0.0, 0.0)), ControlSchedule((three,)), cfg).final
    r2 = integrate(populations_density((1.0, 0.0)), ControlSchedule((two,)), cfg).final
    ratio = max(abs(p) for p in pair[0]) / abs(system.detunings[0])
    return float(r3[1, 1].real), float(r2[1, 1].real), ratio


def test_c7_adiabatic_elimination_oracle():
    cal = RabiCalibration(1.1162493)
    system = LambdaSystem(detunings_thz=(50.0,))
    rows = []
    for theta in (math.pi / 2, math.pi):
        u = energy_for_rotation(theta, TEMPLATE, system, cal)
        rows.append(_three_vs_two(system, u, cal, 0.5))
    ok = all(r <= 0.1 and abs(a - b) <= 0.02 for a, b, r in rows)
    detail = "; ".join(f"Omega/Delta {r:.3f}: |d rho22| {abs(a - b):.2e}" for a, b, r in rows)
    record(7, "adiabatic elimination at Omega/Delta <= 0.1", ok, detail)
    assert ok


def test_c7_pi_regime_is_flagged_non_adiabatic():
    cal = RabiCalibration(1.1162493)
    system = LambdaSystem()
    u = energy_for_rotation(math.pi, TEMPLATE, system, cal)
    with pytest.warns(UserWarning, match="Rabi/detuning ratio"):
        effective_two_level(system, rabi_pairs(system, TEMPLATE.at(0.0, u), cal), 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a, b, ratio = _three_vs_two(system, u, cal, 2.0)
    ok = 0.6 <= ratio <= 0.72
    record(7, "pi regime documented as non-adiabatic", ok, f"Omega/Delta {ratio:.3f}, |d rho22| {abs(a - b):.3f}")
    assert ok


# ------------------------------------------------------------ criterion 8


def test_c8_excited_state_decay():
    system = LambdaSystem()
    params = RelaxationParams(gamma_3=0.5)
    h = np.diag([0.0, system.omega_l, system.detunings[0]])
    sched = ControlSchedule.constant(h, 2000.0, params, kind="free")
    traj = integrate(np.diag([0.0, 0.0, 1.0]), sched)
    err = float(np.max(np.abs(traj.population(3) - np.exp(-2 * 0.5e-3 * traj.times))))
    ok = record(8, "excited-state decay exp(-2 Gamma3 t)", err <= 1e-6, f"max error {err:.2e}")
    assert ok


def test_c8_detailed_balance():
    ratio = thermal_ratio(42.0, 4.2)
    expected = math.exp(-constants.h * 42e9 / (constants.k * 4.2))
    params = RelaxationParams(gamma_12=1e3, gamma_3=1e3, gamma_2=0.0, zeeman_thermal_ratio=ratio)
    m = free_evolution_map(1e5, LambdaSystem().level_energies(), relaxation_coefficients(params))
    rho = apply_map(m, np.diag([0.2, 0.3, 0.5]))
    got = rho[1, 1].real / rho[0, 0].real
    ok = record(8, "ground-state detailed balance", abs(got - expected) <= 1e-6, f"rho22/rho11 = {got:.8f}, Boltzmann {expected:.8f}")
    assert ok


def test_c8_steady_state_from_sequence_free_evolution():
    setup = Setup(relaxation=RelaxationParams(gamma_12=1e2, gamma_3=1e3, gamma_2=0.0))
    steps = [Prepare((0.1, 0.9, 0.0)), FreeEvolve(1e6), Readout(2)]
    out = run_sequence(steps, setup, record=False)
    rho = out.final
    expected = 1 / setup.relaxation.zeeman_thermal_ratio
    assert rho[1, 1].real / rho[0, 0].real == pytest.approx(expected, abs=1e-6)


# ------------------------------------------------------------ criterion 9

SMALL_ENERGIES = [2.0, 5.0, 8.0, 10.0, 15.0, 20.0, 30.0, 40.0]
SMALL_TAUS = np.arange(20.0, 71.0, 2.5)
# dense enough that 5% on the slope is about 3.5 standard errors at 1% noise
FIT_ENERGIES = np.arange(0.5, 40.01, 0.5)
FIT_TAUS = np.arange(20.0, 121.0, 1.0)


@pytest.fixture(scope="module")
def fit_model(coarse_linear_setup):
    return FitModel(coarse_linear_setup)


def _round_trip(model, sigma, seed, energies, taus):
    truth = model.base_values()
    data = synthesize(truth, model, energies=energies, tau_ds=taus, double_energy=10.0, sigma=sigma, seed=seed)
    spec = FitParams(("kappa", "gamma3_slope"), initial={"kappa": 1.0, "gamma3_slope": 0.1})
    rep = fit(data, spec, model, restarts=5, seed=seed)
    err = {k: rep.values[k] / truth[k] - 1 for k in spec.free}
    return rep, err


@pytest.mark.slow
def test_c9_fit_round_trip_noiseless(fit_model):
    rep, err = _round_trip(fit_model, 0.0, 0, SMALL_ENERGIES, SMALL_TAUS)
    ok = rep.converged and all(abs(e) <= 1e-3 for e in err.values())
    record(9, "noiseless fit round trip", ok, ", ".join(f"{k} {e:+.2e}" for k, e in err.items()) + " (want within 0.1%)")
    assert ok


@pytest.mark.slow
def test_c9_fit_round_trip_noisy(fit_model):
    rep, err = _round_trip(fit_model, 0.01, 0, FIT_ENERGIES, FIT_TAUS)
    ok = rep.converged and all(abs(e) <= 0.05 for e in err.values())
    record(9, "1% noise fit round trip", ok, ", ".join(f"{k} {e:+.2%}" for k, e in err.items()) + " (want within 5%)")
    assert ok


# ------------------------------------------------------------ criterion 10


def test_c10_cli_determinism(tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(
        "seed: 12345\n"
        "single: {energies: {start: 0, stop: 40, step: 5}}\n"
        "double: {tau_d_ps: {start: 20, stop: 60, step: 1}, visibility_energies: [5, 10]}\n"
        "train: {pulse_counts: [1, 2, 4, 8], staircase_pulses: 4}\n"
        "synthesize: {energies: [2, 10, 20], tau_d_ps: [20, 30, 40]}\n"
    )
    for out in ("a", "b"):
        for cmd in ("single", "double", "train", "synthesize"):
            assert main([cmd, "--config", str(cfg), "--out", str(tmp_path / out)]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    same = [(tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names]
    ok = record(10, "byte-identical CLI outputs", all(same), f"{sum(same)}/{len(names)} files identical")
    assert ok


# ------------------------------------------------------------ runtime


def test_scenario_runtime(constant_setup, linear_setup):
    scenarios = {
        "single pi": lambda: single_pulse_sweep([pi_energy(constant_setup, math.pi)], constant_setup, TEMPLATE),
        "saturation sweep": lambda: single_pulse_sweep([30.0, 40.0, 50.0], linear_setup, TEMPLATE),
        "Larmor sweep": lambda: double_pulse_sweep(10.0, np.arange(20.0, 121.0, 1.0), linear_setup, TEMPLATE),
        "8-pulse train": lambda: pulse_train([8], linear_setup, TEMPLATE, per_pulse_energy=5.0),
    }
    times = {}
    for name, run in scenarios.items():
        run()  # compile and cache
        t0 = time.perf_counter()
        run()
        times[name] = time.perf_counter() - t0
    ok = record("all", "warm scenario runtime < 5 s", max(times.values()) < 5.0, ", ".join(f"{k} {v:.2f}s" for k, v in times.items()))
    assert ok
