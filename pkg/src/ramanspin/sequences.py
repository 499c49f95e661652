"""Pulse sequences and the experiment protocols built from them.

A sequence is a list of steps: one leading :class:`Prepare`, then pulses,
free evolution and readouts in time order.  Pulses are integrated over
``arrival +/- 5 FWHM``; gaps between steps are propagated exactly with the
field off.  Level indices in the public API are 1-based (|1>, |2>, |3>).
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from .engine import (
    ControlSchedule,
    IntegratorConfig,
    Segment,
    Trajectory,
    apply_map,
    evolve_batch,
    free_evolution_map,
    integrate,
    transfer_map,
)
from .linalg import check_density_matrix, fidelity
from .model import (
    DEFAULT_PUMPED_POPULATIONS,
    ConstantDephasing,
    LambdaSystem,
    PulseSpec,
    RabiCalibration,
    RelaxationParams,
    build_hamiltonian_n,
    default_calibration,
    energy_for_rotation,
    envelope,
    gamma3_of_pulse,
    populations_density,
    rabi_pairs,
    relaxation_coefficients,
    rotation_angle,
)

TIME_TOL = 1e-9


class SequenceError(ValueError):
    """Malformed sequence: bad ordering, overlapping pulses, bad preparation."""


@dataclass(frozen=True)
class Prepare:
    populations: tuple[float, ...] = DEFAULT_PUMPED_POPULATIONS

    def __post_init__(self):
        p = tuple(float(x) for x in self.populations)
        object.__setattr__(self, "populations", p)
        if any(x < 0 for x in p) or abs(sum(p) - 1.0) > 1e-12:
            raise SequenceError(f"prepared populations must be >= 0 and sum to 1: {p}")


@dataclass(frozen=True)
class Pulse:
    pulse: PulseSpec


@dataclass(frozen=True)
class FreeEvolve:
    duration: float
    relaxation_on: bool = True

    def __post_init__(self):
        if self.duration < 0:
            raise SequenceError("free evolution duration must be non-negative")


@dataclass(frozen=True)
class Readout:
    level: int = 2


Step = Union[Prepare, Pulse, FreeEvolve, Readout]


@dataclass(frozen=True)
class Setup:
    """Everything a sequence run needs besides the steps themselves."""

    system: LambdaSystem = field(default_factory=LambdaSystem)
    relaxation: RelaxationParams = field(default_factory=RelaxationParams)
    calibration: RabiCalibration = field(default_factory=default_calibration)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)

    def __post_init__(self):
        if self.system.n != 3:
            raise ValueError("simulations are restricted to three levels")


@dataclass
class ReadoutValue:
    time: float
    level: int
    value: float


@dataclass
class SequenceOutcome:
    final: np.ndarray
    trajectory: Optional[Trajectory]
    readouts: list[ReadoutValue]
    end_time: float


# ------------------------------------------------------------ compilation


@dataclass(frozen=True)
class _PulseStage:
    pulse: PulseSpec


@dataclass(frozen=True)
class _FreeStage:
    start: float
    duration: float
    relaxation_on: bool


@dataclass(frozen=True)
class _ReadStage:
    time: float
    level: int


def _free_gamma3(setup: Setup) -> float:
    # energy-linear dephasing follows the pulse intensity and is truncated
    # at the window edge, where sech^2 is below 1e-7
    d = setup.relaxation.dephasing
    return gamma3_of_pulse(d, None, 0.0) if isinstance(d, ConstantDephasing) else 0.0


def compile_sequence(steps: Sequence[Step], setup: Setup):
    """Check ordering and lay the steps out on the time axis.

    Returns ``(initial_rho, stages, pulses)``.
    """
    steps = list(steps)
    if not steps or not isinstance(steps[0], Prepare):
        raise SequenceError("a sequence must start with exactly one Prepare step")
    if any(isinstance(s, Prepare) for s in steps[1:]):
        raise SequenceError("only one leading Prepare step is allowed")
    prep = steps[0]
    if len(prep.populations) != setup.system.n:
        raise SequenceError(f"Prepare needs {setup.system.n} populations")
    rho0 = populations_density(prep.populations)

    stages = []
    pulses = []
    clock: Optional[float] = None
    last_pulse_end: Optional[float] = None
    for step in steps[1:]:
        if isinstance(step, Pulse):
            start, end = step.pulse.window
            if clock is None:
                clock = start
            if last_pulse_end is not None and start < last_pulse_end - TIME_TOL:
                raise SequenceError(
                    f"pulse window starting at {start:g} ps overlaps the previous pulse ending at {last_pulse_end:g} ps"
                )
            if start < clock - TIME_TOL:
                raise SequenceError(f"pulse at {step.pulse.arrival_time:g} ps is out of time order (clock {clock:g} ps)")
            if start > clock + TIME_TOL:
                stages.append(_FreeStage(clock, start - clock, True))
            stages.append(_PulseStage(step.pulse))
            pulses.append(step.pulse)
            clock = end
            last_pulse_end = end
        elif isinstance(step, FreeEvolve):
            if clock is None:
                clock = 0.0
            if step.duration > 0:
                stages.append(_FreeStage(clock, step.duration, step.relaxation_on))
            clock += step.duration
        elif isinstance(step, Readout):
            if not 1 <= step.level <= setup.system.n:
                raise SequenceError(f"readout level {step.level} out of range")
            stages.append(_ReadStage(0.0 if clock is None else clock, step.level))
        else:
            raise SequenceError(f"unknown step {step!r}")
    return rho0, stages, pulses


def pulse_segment(pulse: PulseSpec, setup: Setup) -> Segment:
    sys = setup.system
    pairs = rabi_pairs(sys, pulse, setup.calibration)
    dephasing = setup.relaxation.dephasing
    start, end = pulse.window
    return Segment(
        start,
        end,
        lambda ts: build_hamiltonian_n(sys, pairs, envelope(pulse, ts)),
        lambda ts: gamma3_of_pulse(dephasing, pulse, ts),
        "pulse",
    )


def pulse_schedule(pulse: PulseSpec, setup: Setup) -> ControlSchedule:
    return ControlSchedule((pulse_segment(pulse, setup),), setup.relaxation)


def pulse_map(pulse: PulseSpec, setup: Setup) -> np.ndarray:
    """Propagator of one pulse window.

    The rotating-frame drive depends only on ``t - arrival``, so the map is
    computed once per pulse shape and reused for every arrival time.
    """
    return _centred_pulse_map(pulse.at(0.0), setup)


@functools.lru_cache(maxsize=256)
def _centred_pulse_map(pulse: PulseSpec, setup: Setup) -> np.ndarray:
    return transfer_map(pulse_schedule(pulse, setup), setup.system.n, setup.integrator)


def _free_map(stage: _FreeStage, setup: Setup) -> np.ndarray:
    coeffs = relaxation_coefficients(setup.relaxation if stage.relaxation_on else None, setup.system.n)
    g3 = _free_gamma3(setup) if stage.relaxation_on else 0.0
    return free_evolution_map(stage.duration, setup.system.level_energies(), coeffs, g3)


def _free_trajectory(rho, stage: _FreeStage, setup: Setup) -> Trajectory:
    dt = setup.integrator.dt_free_ps
    count = max(1, int(math.ceil(stage.duration / dt - 1e-9)))
    times = stage.start + np.linspace(0.0, stage.duration, count + 1)
    coeffs = relaxation_coefficients(setup.relaxation if stage.relaxation_on else None, setup.system.n)
    g3 = _free_gamma3(setup) if stage.relaxation_on else 0.0
    energies = setup.system.level_energies()
    states = np.array(
        [apply_map(free_evolution_map(t - stage.start, energies, coeffs, g3), rho) for t in times]
    )
    return Trajectory(times, states)


def run_sequence(steps: Sequence[Step], setup: Setup, *, record: bool = True) -> SequenceOutcome:
    """Run a sequence with full invariant checking on every pulse window."""
    rho, stages, _ = compile_sequence(steps, setup)
    parts: list[Trajectory] = []
    readouts: list[ReadoutValue] = []
    clock = 0.0
    for stage in stages:
        if isinstance(stage, _PulseStage):
            traj = integrate(rho, pulse_schedule(stage.pulse, setup), setup.integrator)
            rho = traj.final
            clock = stage.pulse.window[1]
            if record:
                parts.append(traj)
        elif isinstance(stage, _FreeStage):
            if record:
                traj = _free_trajectory(rho, stage, setup)
                parts.append(traj)
                rho = traj.final
            else:
                rho = apply_map(_free_map(stage, setup), rho)
            clock = stage.start + stage.duration
        else:
            readouts.append(ReadoutValue(stage.time, stage.level, _readout(rho, stage.level)))
    rho = check_density_matrix(rho)
    trajectory = Trajectory.concatenate(parts) if record else None
    return SequenceOutcome(rho, trajectory, readouts, clock)


def evolve_sequence(steps: Sequence[Step], setup: Setup, initial_states, *, use_maps: bool = False):
    """Propagate several initial states through the same sequence.

    Returns ``(finals, readouts)`` where ``readouts`` has one row per state.
    No trajectory is recorded; finals are validated as density matrices.
    """
    _, stages, _ = compile_sequence(steps, setup)
    states = np.array([np.asarray(s, dtype=np.complex128) for s in initial_states])
    reads: list[list[float]] = [[] for _ in states]
    for stage in stages:
        if isinstance(stage, _PulseStage):
            if use_maps:
                s = pulse_map(stage.pulse, setup)
                states = np.array([apply_map(s, r) for r in states])
            else:
                states = evolve_batch(states, pulse_schedule(stage.pulse, setup), setup.integrator)
        elif isinstance(stage, _FreeStage):
            s = _free_map(stage, setup)
            states = np.array([apply_map(s, r) for r in states])
        else:
            for i, r in enumerate(states):
                reads[i].append(_readout(r, stage.level))
    for r in states:
        check_density_matrix(r)
    return states, np.array(reads)


def _readout(rho, level: int) -> float:
    value = float(rho[level - 1, level - 1].real)
    if not -1e-8 <= value <= 1 + 1e-8:
        raise SequenceError(f"population {value:.6g} of level {level} out of range")
    return value


# --------------------------------------------------------------- fidelity


def _rx(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, 1j * s], [1j * s, c]])


def ideal_target_state(
    system: LambdaSystem,
    angles: Sequence[float],
    arrivals: Sequence[float],
    readout_time: float,
    initial_level: int = 1,
) -> np.ndarray:
    """Ideal state after instantaneous rotations at each pulse centre.

    Between pulses the spin precesses freely at the Larmor frequency, which
    is what fixes the relative rotation axes of successive pulses.
    """
    psi = np.zeros(2, dtype=np.complex128)
    psi[initial_level - 1] = 1.0
    t = arrivals[0] if len(arrivals) else readout_time
    for theta, t_k in zip(angles, arrivals):
        psi = np.diag([1.0, np.exp(-1j * system.omega_l * (t_k - t))]) @ psi
        psi = _rx(theta) @ psi
        t = t_k
    psi = np.diag([1.0, np.exp(-1j * system.omega_l * (readout_time - t))]) @ psi
    out = np.zeros(system.n, dtype=np.complex128)
    out[:2] = psi
    return out


def rotation_fidelity(final, theta: float, larmor_phase: float = 0.0, initial_level: int = 1) -> float:
    """Overlap of ``final`` with the spin state rotated by ``theta``.

    The rotation axis lies in the equatorial plane; ``larmor_phase`` is the
    free precession accumulated between the rotation and the readout.
    Population outside the ground doublet counts as infidelity.
    """
    rho = np.asarray(final, dtype=np.complex128)
    psi2 = _rx(theta)[:, initial_level - 1]
    psi2 = np.array([psi2[0], psi2[1] * np.exp(-1j * larmor_phase)])
    psi = np.zeros(rho.shape[0], dtype=np.complex128)
    psi[:2] = psi2
    return fidelity(psi, rho)


# ------------------------------------------------------------ experiments


@dataclass
class ExperimentResult:
    variable: str
    values: np.ndarray
    rho22: np.ndarray
    fidelity: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)
    trajectories: Optional[list] = None

    def __post_init__(self):
        order = np.argsort(self.values, kind="stable")
        self.values = np.asarray(self.values, dtype=float)[order]
        self.rho22 = np.asarray(self.rho22, dtype=float)[order]
        if self.fidelity is not None:
            self.fidelity = np.asarray(self.fidelity, dtype=float)[order]
        self.extra = {k: np.asarray(v)[order] for k, v in self.extra.items()}
        if np.any(self.rho22 < -1e-8) or np.any(self.rho22 > 1 + 1e-8):
            raise SequenceError("readout outside [0, 1]")


def _pure(level: int, n: int = 3) -> np.ndarray:
    p = [0.0] * n
    p[level - 1] = 1.0
    return populations_density(p)


def single_pulse_sweep(
    energies: Sequence[float],
    setup: Setup,
    template: PulseSpec = PulseSpec(0.0),
    prepared: Sequence[float] = DEFAULT_PUMPED_POPULATIONS,
    *,
    with_fidelity: bool = True,
) -> ExperimentResult:
    """Prepare -> Pulse -> Readout(2) for each energy density.

    Fidelity is evaluated on a second run starting from pure |1> against the
    ideal rotation by the pulse's nominal area.
    """
    energies = [float(u) for u in energies]
    if not energies or any(u < 0 for u in energies):
        raise ValueError("energies must be a non-empty list of non-negative values")
    rho22, fids, angles = [], [], []
    for u in energies:
        pulse = template.at(template.arrival_time, u)
        steps = [Prepare(tuple(prepared)), Pulse(pulse), Readout(2)]
        inits = [populations_density(prepared)] + ([_pure(1)] if with_fidelity else [])
        finals, reads = evolve_sequence(steps, setup, inits)
        rho22.append(reads[0, 0])
        theta = rotation_angle(pulse, setup.system, setup.calibration)
        angles.append(theta)
        if with_fidelity:
            target = ideal_target_state(setup.system, [theta], [pulse.arrival_time], pulse.window[1])
            fids.append(fidelity(target, finals[1]))
    return ExperimentResult(
        "energy_ujcm2",
        np.array(energies),
        np.array(rho22),
        np.array(fids) if with_fidelity else None,
        {"rotation_angle_rad": np.array(angles)},
    )


def double_pulse_sequence(energy: float, tau_d: float, template: PulseSpec, prepared) -> list:
    first = template.at(0.0, energy)
    second = template.at(tau_d, energy)
    return [Prepare(tuple(prepared)), Pulse(first), Pulse(second), Readout(2)]


def double_pulse_sweep(
    energy: float,
    tau_d_values: Sequence[float],
    setup: Setup,
    template: PulseSpec = PulseSpec(0.0),
    prepared: Sequence[float] = DEFAULT_PUMPED_POPULATIONS,
    *,
    with_fidelity: bool = True,
) -> ExperimentResult:
    """Two identical pulses separated by each delay; ρ22 read after the second."""
    taus = [float(t) for t in tau_d_values]
    if not taus:
        raise ValueError("tau_d_values must be non-empty")
    min_gap = 2 * 5.0 * template.fwhm
    bad = [t for t in taus if t < min_gap - TIME_TOL]
    if bad:
        raise SequenceError(f"delays {bad} are shorter than the pulse window ({min_gap:g} ps)")
    rho22, fids = [], []
    theta = rotation_angle(template.at(0.0, energy), setup.system, setup.calibration)
    for tau in taus:
        steps = double_pulse_sequence(energy, tau, template, prepared)
        inits = [populations_density(prepared)] + ([_pure(1)] if with_fidelity else [])
        finals, reads = evolve_sequence(steps, setup, inits, use_maps=True)
        rho22.append(reads[0, 0])
        if with_fidelity:
            readout_time = tau + 5.0 * template.fwhm
            target = ideal_target_state(setup.system, [theta, theta], [0.0, tau], readout_time)
            fids.append(fidelity(target, finals[1]))
    return ExperimentResult(
        "tau_d_ps",
        np.array(taus),
        np.array(rho22),
        np.array(fids) if with_fidelity else None,
    )


def in_phase_delay(system: LambdaSystem, min_delay: float) -> float:
    """Smallest whole number of Larmor periods not shorter than ``min_delay``."""
    return system.larmor_period * max(1, math.ceil(min_delay / system.larmor_period - 1e-12))


def train_sequence(count: int, energy: float, spacing: float, template: PulseSpec, prepared=(1.0, 0.0, 0.0)):
    steps: list[Step] = [Prepare(tuple(prepared))]
    for k in range(count):
        steps.append(Pulse(template.at(k * spacing, energy)))
    steps.append(Readout(2))
    return steps


def pulse_train(
    pulse_counts: Sequence[int],
    setup: Setup,
    template: PulseSpec = PulseSpec(0.0),
    *,
    per_pulse_energy: Optional[float] = None,
    spacing: Optional[float] = None,
    target_angle: float = math.pi,
) -> ExperimentResult:
    """Fidelity of a ``target_angle`` rotation built from N in-phase pulses.

    Without an explicit ``per_pulse_energy`` each pulse carries the energy
    for a ``target_angle / N`` rotation.  ``spacing`` defaults to the
    shortest whole number of Larmor periods clearing the pulse window.
    """
    counts = [int(c) for c in pulse_counts]
    if not counts or any(c < 1 for c in counts):
        raise ValueError("pulse counts must be positive integers")
    sys = setup.system
    if spacing is None:
        spacing = in_phase_delay(sys, 10.0 * template.fwhm)
    ratio = spacing / sys.larmor_period
    if ratio < 1 - 1e-6 or abs(ratio - round(ratio)) > 1e-6:
        raise SequenceError(f"spacing {spacing:g} ps is not a whole number of Larmor periods ({ratio:.6g})")
    if spacing < 10.0 * template.fwhm - TIME_TOL:
        raise SequenceError("pulse spacing shorter than the pulse window")
    fids, rho22, energies, angles = [], [], [], []
    for n_pulses in counts:
        if per_pulse_energy is None:
            u = energy_for_rotation(target_angle / n_pulses, template, sys, setup.calibration)
        else:
            u = float(per_pulse_energy)
        steps = train_sequence(n_pulses, u, spacing, template)
        finals, reads = evolve_sequence(steps, setup, [_pure(1)], use_maps=True)
        angles.append(rotation_angle(template.at(0.0, u), sys, setup.calibration))
        readout_time = (n_pulses - 1) * spacing + 5.0 * template.fwhm
        target = ideal_target_state(
            sys, [target_angle / n_pulses] * n_pulses, [k * spacing for k in range(n_pulses)], readout_time
        )
        fids.append(fidelity(target, finals[0]))
        rho22.append(reads[0, 0])
        energies.append(u)
    return ExperimentResult(
        "n_pulses",
        np.array(counts, dtype=float),
        np.array(rho22),
        np.array(fids),
        {"energy_ujcm2": np.array(energies), "rotation_angle_rad": np.array(angles), "spacing_ps": np.full(len(counts), spacing)},
    )


def train_staircase(count: int, setup: Setup, template: PulseSpec = PulseSpec(0.0), *, per_pulse_energy=None, spacing=None, target_angle=math.pi) -> Trajectory:
    """ρ22 versus time while a train of in-phase pulses is applied."""
    sys = setup.system
    if spacing is None:
        spacing = in_phase_delay(sys, 10.0 * template.fwhm)
    u = per_pulse_energy
    if u is None:
        u = energy_for_rotation(target_angle / count, template, sys, setup.calibration)
    return run_sequence(train_sequence(count, u, spacing, template), setup).trajectory


# ------------------------------------------------------------- visibility


@dataclass
class VisibilityResult:
    visibility: float
    frequency_ghz: float
    amplitude: float
    phase: float
    offset: float
    i_max: float
    i_min: float

    @property
    def period_ps(self) -> float:
        return 1e3 / self.frequency_ghz


def _sinusoid(t, a, f, phi, c):
    return a * np.cos(2 * np.pi * f * t + phi) + c


def fit_sinusoid(t, y, f_min: float = 1e-3, f_max: Optional[float] = None):
    """Least-squares ``A cos(2 pi f t + phi) + C``; ``f`` in 1/ps.

    The frequency is seeded by a linear least-squares scan over a grid and
    then refined jointly with the other parameters.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 4:
        raise ValueError("need at least four points to fit a sinusoid")
    span = t.max() - t.min()
    if f_max is None:
        f_max = 0.5 / np.min(np.diff(np.sort(t)))
    grid = np.linspace(max(f_min, 0.5 / span), f_max, 4000)
    best = (np.inf, None)
    for f in grid:
        basis = np.column_stack([np.cos(2 * np.pi * f * t), np.sin(2 * np.pi * f * t), np.ones_like(t)])
        coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
        rss = float(np.sum((basis @ coef - y) ** 2))
        if rss < best[0]:
            best = (rss, (f, coef))
    f0, (ca, cb, cc) = best[1]
    a0 = math.hypot(ca, cb)
    phi0 = math.atan2(-cb, ca)
    with warnings.catch_warnings():
        # exact data leaves the covariance undefined; it is not used
        warnings.simplefilter("ignore", OptimizeWarning)
        popt, _ = curve_fit(_sinusoid, t, y, p0=[a0, f0, phi0, cc], maxfev=20000)
    a, f, phi, c = popt
    if a < 0:
        a, phi = -a, phi + np.pi
    return float(a), float(f), float(math.remainder(phi, 2 * np.pi)), float(c)


def visibility(curve: ExperimentResult, baseline: float) -> VisibilityResult:
    """Two-pulse visibility ``(max - min)/(max + min)`` above the pumped baseline."""
    y = np.asarray(curve.rho22, dtype=float) - baseline
    i_max, i_min = float(np.max(y)), float(np.min(y))
    if i_max + i_min <= 0:
        raise ValueError("degenerate curve: max + min <= 0 after baseline subtraction")
    vis = (i_max - i_min) / (i_max + i_min)
    a, f, phi, c = fit_sinusoid(curve.values, y)
    return VisibilityResult(vis, f * 1e3, a, phi, c, i_max, i_min)


def visibility_vs_energy(
    energies: Sequence[float],
    tau_d_values: Sequence[float],
    setup: Setup,
    template: PulseSpec = PulseSpec(0.0),
    prepared: Sequence[float] = DEFAULT_PUMPED_POPULATIONS,
) -> tuple[np.ndarray, np.ndarray]:
    """Visibility of the two-pulse fringe at each energy, sorted by energy."""
    energies = np.sort(np.asarray(energies, dtype=float))
    vis = [
        visibility(double_pulse_sweep(u, tau_d_values, setup, template, prepared, with_fidelity=False), prepared[1]).visibility
        for u in energies
    ]
    return energies, np.array(vis)
