"""Fixed-step RK4 integration of the master equation with a time-dependent drive.

The equation of motion is ``drho/dt = -i[H(t), rho] + L(rho)`` where ``L`` is
the coefficient-form relaxation operator from :mod:`ramanspin.model`.
Hamiltonians are in rad/ps and times in ps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numba
import numpy as np

from .linalg import (
    POSITIVITY_TOL,
    TRACE_TOL,
    as_square,
    check_density_matrix,
    hermitize,
    matrix_exp,
)
from .model import RelaxationCoefficients, RelaxationParams, relaxation_coefficients

HERMITIAN_STEP_TOL = 1e-10

HamiltonianFn = Callable[[np.ndarray], np.ndarray]
RateFn = Callable[[np.ndarray], np.ndarray]


class IntegrationError(RuntimeError):
    """An invariant of the density matrix failed during integration."""

    def __init__(self, time: float, invariant: str, detail: str = ""):
        self.time = time
        self.invariant = invariant
        msg = f"{invariant} violated at t = {time:.6g} ps"
        super().__init__(f"{msg}: {detail}" if detail else msg)


@dataclass(frozen=True)
class IntegratorConfig:
    dt_pulse_fs: float = 2.0
    dt_free_ps: float = 0.1
    record_stride: int = 50

    def __post_init__(self):
        if not 0 < self.dt_pulse_fs <= 10.0:
            raise ValueError("dt_pulse_fs must lie in (0, 10] fs")
        if not 0 < self.dt_free_ps <= 1.0:
            raise ValueError("dt_free_ps must lie in (0, 1] ps")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")

    @property
    def dt_pulse(self) -> float:
        return self.dt_pulse_fs * 1e-3


@dataclass(frozen=True)
class Segment:
    """One stretch of a control schedule.

    ``hamiltonian`` and ``gamma3`` take an array of times and return the
    stacked Hamiltonians ``(m, n, n)`` and the dephasing rates ``(m,)``.
    """

    t_start: float
    t_end: float
    hamiltonian: HamiltonianFn
    gamma3: Optional[RateFn] = None
    kind: str = "pulse"

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError(f"segment end {self.t_end} must exceed start {self.t_start}")
        if self.kind not in ("pulse", "free"):
            raise ValueError(f"unknown segment kind {self.kind!r}")


@dataclass(frozen=True)
class ControlSchedule:
    segments: tuple[Segment, ...]
    relaxation: Optional[RelaxationParams] = None

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ValueError("schedule needs at least one segment")
        for a, b in zip(self.segments, self.segments[1:]):
            if abs(b.t_start - a.t_end) > 1e-9:
                raise ValueError(f"segments not contiguous at t = {a.t_end}")

    @classmethod
    def constant(cls, h, duration: float, relaxation=None, gamma3: float = 0.0, kind="pulse", t0=0.0):
        h = as_square(h)
        seg = Segment(
            t0,
            t0 + duration,
            lambda ts: np.broadcast_to(h, (len(ts),) + h.shape),
            (lambda ts: np.full(len(ts), gamma3)),
            kind,
        )
        return cls((seg,), relaxation)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray

    def population(self, level: int) -> np.ndarray:
        """Population of 1-based ``level`` at every recorded time."""
        return self.states[:, level - 1, level - 1].real.copy()

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @staticmethod
    def concatenate(parts: Sequence["Trajectory"]) -> "Trajectory":
        parts = [p for p in parts if len(p.times)]
        if not parts:
            return Trajectory(np.zeros(0), np.zeros((0, 0, 0), complex))
        times = [parts[0].times]
        states = [parts[0].states]
        for p in parts[1:]:
            # drop the duplicated boundary sample
            skip = 1 if abs(p.times[0] - times[-1][-1]) < 1e-12 else 0
            times.append(p.times[skip:])
            states.append(p.states[skip:])
        return Trajectory(np.concatenate(times), np.concatenate(states))


# ------------------------------------------------------------------ kernel


@numba.njit(cache=True, nogil=True)
def _deriv(r, h, g3, flow, decay, mask, out):
    n = r.shape[0]
    for i in range(n):
        for j in range(n):
            acc = 0j
            for k in range(n):
                acc += h[i, k] * r[k, j] - r[i, k] * h[k, j]
            out[i, j] = -1j * acc
            if i != j:
                out[i, j] -= (decay[i, j] + g3 * mask[i, j]) * r[i, j]
    for i in range(n):
        acc = 0j
        for k in range(n):
            acc += flow[i, k] * r[k, k]
        out[i, i] += acc


@numba.njit(cache=True, nogil=True)
def _rk4_kernel(states, h_stack, g3, flow, decay, mask, dt, stride, hermitian):
    nb, n, _ = states.shape
    m = (h_stack.shape[0] - 1) // 2
    nrec = m // stride + 1
    if m % stride != 0:
        nrec += 1
    rec = np.empty((nrec, nb, n, n), dtype=np.complex128)
    r = states.copy()
    k1 = np.empty((n, n), dtype=np.complex128)
    k2 = np.empty_like(k1)
    k3 = np.empty_like(k1)
    k4 = np.empty_like(k1)
    tmp = np.empty_like(k1)
    max_herm = 0.0
    max_trace = 0.0
    tr0 = np.empty(nb, dtype=np.complex128)
    for b in range(nb):
        tr0[b] = 0j
        for i in range(n):
            tr0[b] += r[b, i, i]
        rec[0, b] = r[b]
    irec = 1
    for s in range(m):
        h0 = h_stack[2 * s]
        h1 = h_stack[2 * s + 1]
        h2 = h_stack[2 * s + 2]
        for b in range(nb):
            rb = r[b]
            _deriv(rb, h0, g3[2 * s], flow, decay, mask, k1)
            for i in range(n):
                for j in range(n):
                    tmp[i, j] = rb[i, j] + 0.5 * dt * k1[i, j]
            _deriv(tmp, h1, g3[2 * s + 1], flow, decay, mask, k2)
            for i in range(n):
                for j in range(n):
                    tmp[i, j] = rb[i, j] + 0.5 * dt * k2[i, j]
            _deriv(tmp, h1, g3[2 * s + 1], flow, decay, mask, k3)
            for i in range(n):
                for j in range(n):
                    tmp[i, j] = rb[i, j] + dt * k3[i, j]
            _deriv(tmp, h2, g3[2 * s + 2], flow, decay, mask, k4)
            for i in range(n):
                for j in range(n):
                    rb[i, j] += dt / 6.0 * (k1[i, j] + 2.0 * k2[i, j] + 2.0 * k3[i, j] + k4[i, j])
            if hermitian:
                for i in range(n):
                    for j in range(i, n):
                        d = abs(rb[i, j] - np.conj(rb[j, i]))
                        if d > max_herm:
                            max_herm = d
                        avg = 0.5 * (rb[i, j] + np.conj(rb[j, i]))
                        rb[i, j] = avg
                        rb[j, i] = np.conj(avg)
            tr = 0j
            for i in range(n):
                tr += rb[i, i]
            dev = abs(tr - tr0[b])
            if dev > max_trace:
                max_trace = dev
        if (s + 1) % stride == 0 or s == m - 1:
            for b in range(nb):
                rec[irec, b] = r[b]
            irec += 1
    return r, rec, max_herm, max_trace


def _segment_steps(seg: Segment, cfg: IntegratorConfig) -> tuple[int, float]:
    span = seg.t_end - seg.t_start
    dt_target = cfg.dt_pulse if seg.kind == "pulse" else cfg.dt_free_ps
    steps = max(1, int(math.ceil(span / dt_target - 1e-9)))
    return steps, span / steps


def _segment_inputs(seg: Segment, steps: int, n: int):
    half = np.linspace(seg.t_start, seg.t_end, 2 * steps + 1)
    h = np.ascontiguousarray(seg.hamiltonian(half), dtype=np.complex128)
    if h.shape != (2 * steps + 1, n, n):
        raise ValueError(f"hamiltonian generator returned shape {h.shape}")
    if seg.gamma3 is None:
        g3 = np.zeros(2 * steps + 1)
    else:
        g3 = np.ascontiguousarray(np.broadcast_to(seg.gamma3(half), (2 * steps + 1,)), dtype=float)
    return half, h, g3


def _coefficients(schedule: ControlSchedule, n: int) -> RelaxationCoefficients:
    return relaxation_coefficients(schedule.relaxation, n)


def evolve_batch(states, schedule: ControlSchedule, cfg: IntegratorConfig, *, hermitian=True):
    """Propagate a stack of matrices through ``schedule`` without invariant checks.

    Returns the final stack.  Used for propagator construction and by the
    sweep drivers, which validate their results separately.
    """
    r = np.ascontiguousarray(states, dtype=np.complex128)
    n = r.shape[-1]
    c = _coefficients(schedule, n)
    for seg in schedule.segments:
        steps, dt = _segment_steps(seg, cfg)
        _, h, g3 = _segment_inputs(seg, steps, n)
        r, _, _, _ = _rk4_kernel(r, h, g3, c.flow, c.decay, c.dephasing_mask, dt, steps, hermitian)
    return r


def rhs(h, lrho, rho) -> np.ndarray:
    """Right-hand side ``-i[H, rho] + L(rho)``."""
    h, lrho, rho = as_square(h), as_square(lrho), as_square(rho)
    if not h.shape == lrho.shape == rho.shape:
        raise ValueError(f"dimension mismatch: {h.shape}, {lrho.shape}, {rho.shape}")
    return -1j * (h @ rho - rho @ h) + lrho


def integrate(rho0, schedule: ControlSchedule, cfg: IntegratorConfig | None = None) -> Trajectory:
    """Integrate the master equation over every segment of ``schedule``.

    The state is made Hermitian after each step; trace is monitored but never
    renormalised.  Raises :class:`IntegrationError` on invariant failure.
    """
    cfg = cfg or IntegratorConfig()
    rho = check_density_matrix(rho0).copy()
    n = rho.shape[0]
    c = _coefficients(schedule, n)
    t_origin = schedule.segments[0].t_start
    parts = []
    state = rho[None, :, :]
    for seg in schedule.segments:
        steps, dt = _segment_steps(seg, cfg)
        half, h, g3 = _segment_inputs(seg, steps, n)
        if np.max(np.abs(h - np.conj(np.swapaxes(h, -1, -2)))) > 1e-12:
            raise ValueError(f"non-Hermitian Hamiltonian in segment starting at {seg.t_start}")
        stride = min(cfg.record_stride, steps)
        state, rec, herm, trace = _rk4_kernel(
            state, h, g3, c.flow, c.decay, c.dephasing_mask, dt, stride, True
        )
        grid = half[::2]
        idx = list(range(0, steps + 1, stride))
        if idx[-1] != steps:
            idx.append(steps)
        times = grid[idx]
        states = rec[:, 0]
        if herm > HERMITIAN_STEP_TOL:
            raise IntegrationError(seg.t_end, "hermiticity", f"per-step drift {herm:.3g}")
        elapsed_ns = (seg.t_end - t_origin) * 1e-3
        for t, s in zip(times, states):
            tr = np.trace(s).real
            if abs(tr - 1.0) > TRACE_TOL * max(1.0, elapsed_ns):
                raise IntegrationError(float(t), "unit trace", f"trace {tr:.15g}")
            lam = float(np.linalg.eigvalsh(s)[0])
            if lam < POSITIVITY_TOL:
                raise IntegrationError(float(t), "positivity", f"min eigenvalue {lam:.3g}")
        parts.append(Trajectory(times, states))
    return Trajectory.concatenate(parts)


def propagate_exact(rho0, h, dt: float) -> np.ndarray:
    """Closed-system propagation ``U rho U^dagger`` with ``U = exp(-i H dt)``."""
    rho = as_square(rho0)
    u = matrix_exp(-1j * as_square(h) * dt)
    return hermitize(u @ rho @ u.conj().T)


def transfer_map(schedule: ControlSchedule, n: int, cfg: IntegratorConfig | None = None) -> np.ndarray:
    """Superoperator ``S`` with ``vec(rho_out) = S @ vec(rho_in)`` (row-major vec)."""
    cfg = cfg or IntegratorConfig()
    basis = np.eye(n * n, dtype=np.complex128).reshape(n * n, n, n)
    out = evolve_batch(basis, schedule, cfg, hermitian=False)
    return out.reshape(n * n, n * n).T.copy()


def apply_map(superop: np.ndarray, rho) -> np.ndarray:
    r = as_square(rho)
    return hermitize((superop @ r.reshape(-1)).reshape(r.shape))


# --------------------------------------------------------- free evolution


def free_generator(energies, coeffs: RelaxationCoefficients, gamma3: float = 0.0) -> np.ndarray:
    """Superoperator generator of the field-free master equation."""
    e = np.asarray(energies, dtype=float)
    n = e.size
    rates = coeffs.decay + gamma3 * coeffs.dephasing_mask
    gen = np.zeros((n * n, n * n), dtype=np.complex128)
    for i in range(n):
        for j in range(n):
            if i != j:
                gen[i * n + j, i * n + j] = -1j * (e[i] - e[j]) - rates[i, j]
    for i in range(n):
        for k in range(n):
            gen[i * n + i, k * n + k] = coeffs.flow[i, k]
    return gen


def free_evolution_map(duration: float, energies, coeffs: RelaxationCoefficients, gamma3: float = 0.0) -> np.ndarray:
    """Exact field-free propagator over ``duration`` ps.

    With no drive every coherence evolves independently and the
    populations obey a linear rate equation, so the map is block diagonal.
    """
    e = np.asarray(energies, dtype=float)
    n = e.size
    rates = coeffs.decay + gamma3 * coeffs.dephasing_mask
    out = np.zeros((n * n, n * n), dtype=np.complex128)
    for i in range(n):
        for j in range(n):
            if i != j:
                out[i * n + j, i * n + j] = np.exp((-1j * (e[i] - e[j]) - rates[i, j]) * duration)
    pop = matrix_exp(coeffs.flow * duration).real
    for i in range(n):
        for k in range(n):
            out[i * n + i, k * n + k] = pop[i, k]
    return out


def free_evolve(rho, duration: float, energies, coeffs: RelaxationCoefficients, gamma3: float = 0.0) -> np.ndarray:
    if duration < 0:
        raise ValueError("duration must be non-negative")
    return apply_map(free_evolution_map(duration, energies, coeffs, gamma3), rho)
