"""Physical model of a Lambda system driven by a far-detuned optical pulse.

Unit conventions used everywhere in the package:

* time in ps;
* configured frequencies (Zeeman splitting, detunings) are ordinary
  frequencies in GHz/THz and are converted to angular units (rad/ps) in
  this module only;
* relaxation and dephasing rates are decay rates.  Longitudinal/radiative/
  transverse rates are configured in 1/ns, the excited-state dephasing in
  GHz meaning 1e9 s^-1; both are converted to 1/ps without a 2*pi factor;
* pulse energy densities in uJ/cm^2.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy import constants

from .linalg import as_square

TWO_PI = 2.0 * math.pi
PER_NS = 1e-3  # 1/ns -> 1/ps
PER_GHZ = 1e-3  # GHz -> 1/ps (rate)
SECH_FWHM_RATIO = 2.0 * math.acosh(math.sqrt(2.0))  # intensity FWHM / tau for sech^2
SECH_FIELD_FWHM_RATIO = 2.0 * math.acosh(2.0)  # field FWHM / tau for sech

DEFAULT_OMEGA_L_GHZ = 42.0
DEFAULT_DETUNING_THZ = 1.0
DEFAULT_FWHM_PS = 2.0
DEFAULT_POLARIZATION = math.pi / 4
DEFAULT_PUMPED_POPULATIONS = (0.94, 0.06, 0.0)


def thermal_ratio(splitting_ghz: float, temperature_k: float) -> float:
    """Boltzmann factor ``exp(h f / k T)`` for a Zeeman splitting."""
    if temperature_k <= 0:
        raise ValueError("temperature must be positive")
    return math.exp(constants.h * splitting_ghz * 1e9 / (constants.k * temperature_k))


DEFAULT_THERMAL_RATIO = thermal_ratio(DEFAULT_OMEGA_L_GHZ, 4.2)


@dataclass(frozen=True)
class LambdaSystem:
    """Two ground spin states coupled to ``n - 2`` excited states.

    ``detunings_thz[k]`` is the carrier offset from the |1>-|k+3>
    transition; positive means the pulse is red-detuned.
    ``coupling_weights[k]`` holds the relative dipole weights of the
    |1>-|k+3> and |2>-|k+3> transitions.
    """

    omega_l_ghz: float = DEFAULT_OMEGA_L_GHZ
    detunings_thz: tuple[float, ...] = (DEFAULT_DETUNING_THZ,)
    coupling_weights: tuple[tuple[float, float], ...] = ((1.0, 1.0),)

    def __post_init__(self):
        object.__setattr__(self, "detunings_thz", tuple(float(d) for d in self.detunings_thz))
        object.__setattr__(
            self,
            "coupling_weights",
            tuple((float(a), float(b)) for a, b in self.coupling_weights),
        )
        if len(self.detunings_thz) < 1:
            raise ValueError("at least one excited level is required")
        if len(self.coupling_weights) != len(self.detunings_thz):
            raise ValueError("need exactly one coupling-weight pair per excited level")
        if any(d == 0 for d in self.detunings_thz):
            raise ValueError("detunings must be non-zero")
        if not math.isfinite(self.omega_l_ghz):
            raise ValueError("omega_l_ghz must be finite")

    @property
    def n(self) -> int:
        return 2 + len(self.detunings_thz)

    @property
    def omega_l(self) -> float:
        """Zeeman splitting in rad/ps."""
        return TWO_PI * self.omega_l_ghz * 1e-3

    @property
    def detunings(self) -> np.ndarray:
        """Detunings in rad/ps."""
        return TWO_PI * np.asarray(self.detunings_thz)

    @property
    def larmor_period(self) -> float:
        """Larmor period in ps."""
        return 1e3 / self.omega_l_ghz

    def level_energies(self) -> np.ndarray:
        """Rotating-frame diagonal of the Hamiltonian in rad/ps."""
        return np.concatenate(([0.0, self.omega_l], self.detunings))


@dataclass(frozen=True)
class PulseSpec:
    energy_density: float
    fwhm: float = DEFAULT_FWHM_PS
    polarization_angle: float = DEFAULT_POLARIZATION
    arrival_time: float = 0.0
    shape: str = "sech"
    fwhm_convention: str = "intensity"

    def __post_init__(self):
        if self.shape != "sech":
            raise ValueError(f"unsupported pulse shape {self.shape!r}")
        if self.fwhm_convention not in ("intensity", "field"):
            raise ValueError(f"fwhm_convention must be 'intensity' or 'field', got {self.fwhm_convention!r}")
        if not self.fwhm > 0:
            raise ValueError("fwhm must be positive")
        if not self.energy_density >= 0:
            raise ValueError("energy_density must be non-negative")
        if not 0.0 <= self.polarization_angle <= math.pi / 2 + 1e-15:
            raise ValueError("polarization_angle must lie in [0, pi/2]")

    @property
    def tau(self) -> float:
        """sech time constant such that the intensity (or field) FWHM equals ``fwhm``."""
        ratio = SECH_FWHM_RATIO if self.fwhm_convention == "intensity" else SECH_FIELD_FWHM_RATIO
        return self.fwhm / ratio

    @property
    def window(self) -> tuple[float, float]:
        """Integration window, five FWHM either side of the peak."""
        half = 5.0 * self.fwhm
        return self.arrival_time - half, self.arrival_time + half

    def at(self, arrival_time: float, energy_density: float | None = None) -> "PulseSpec":
        return PulseSpec(
            energy_density=self.energy_density if energy_density is None else energy_density,
            fwhm=self.fwhm,
            polarization_angle=self.polarization_angle,
            arrival_time=arrival_time,
            shape=self.shape,
            fwhm_convention=self.fwhm_convention,
        )


@dataclass(frozen=True)
class RabiCalibration:
    """``kappa`` is the peak total Rabi frequency in rad/ps per sqrt(uJ/cm^2)."""

    kappa: float
    energy_scale_factor: float = 0.8

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not 0 < self.energy_scale_factor <= 2:
            raise ValueError("energy_scale_factor must lie in (0, 2]")


@dataclass(frozen=True)
class ConstantDephasing:
    gamma3_ghz: float = 10.0

    def __post_init__(self):
        if self.gamma3_ghz < 0:
            raise ValueError("dephasing rate must be non-negative")


@dataclass(frozen=True)
class EnergyLinearDephasing:
    """Peak dephasing ``offset + slope * U`` following the pulse intensity."""

    slope_thz: float = 0.16
    offset_ghz: float = 10.0

    def __post_init__(self):
        if self.slope_thz < 0 or self.offset_ghz < 0:
            raise ValueError("dephasing parameters must be non-negative")

    def peak_ghz(self, energy_density: float) -> float:
        return self.offset_ghz + 1e3 * self.slope_thz * energy_density


DephasingModel = Union[ConstantDephasing, EnergyLinearDephasing]


@dataclass(frozen=True)
class RelaxationParams:
    """Rates of the three-level relaxation operator.

    ``gamma_3`` is half the total radiative rate of |3>; ``gamma_21`` follows
    from detailed balance and is never set directly.
    """

    gamma_12: float = 1e-5
    gamma_3: float = 0.5
    gamma_2: float = 1.0
    dephasing: DephasingModel = field(default_factory=ConstantDephasing)
    zeeman_thermal_ratio: float = DEFAULT_THERMAL_RATIO

    def __post_init__(self):
        for name in ("gamma_12", "gamma_3", "gamma_2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not self.zeeman_thermal_ratio > 0:
            raise ValueError("zeeman_thermal_ratio must be positive")

    @property
    def gamma_21(self) -> float:
        return self.gamma_12 * self.zeeman_thermal_ratio

    @classmethod
    def zero(cls) -> "RelaxationParams":
        return cls(0.0, 0.0, 0.0, ConstantDephasing(0.0), 1.0)


# ---------------------------------------------------------------- pulses


def envelope(pulse: PulseSpec, t):
    """Field envelope ``sech((t - t0) / tau)``; accepts scalars or arrays."""
    x = (np.asarray(t, dtype=float) - pulse.arrival_time) / pulse.tau
    # cosh overflows past ~710; the envelope is zero to double precision there
    with np.errstate(over="ignore"):
        out = 1.0 / np.cosh(x)
    return float(out) if np.ndim(out) == 0 else out


def rabi_pair_from_pulse(pulse: PulseSpec, cal: RabiCalibration) -> tuple[float, float]:
    """Peak Rabi frequencies (rad/ps) of the |1>-|3> and |2>-|3> transitions."""
    total = cal.kappa * math.sqrt(cal.energy_scale_factor * pulse.energy_density)
    return total * math.cos(pulse.polarization_angle), total * math.sin(pulse.polarization_angle)


def rabi_pairs(sys: LambdaSystem, pulse: PulseSpec, cal: RabiCalibration) -> list[tuple[float, float]]:
    """Per-excited-level peak Rabi pairs, scaled by the coupling weights."""
    o1, o2 = rabi_pair_from_pulse(pulse, cal)
    return [(w1 * o1, w2 * o2) for w1, w2 in sys.coupling_weights]


def _pairs_array(sys: LambdaSystem, pairs) -> np.ndarray:
    arr = np.asarray(pairs, dtype=np.complex128).reshape(-1, 2)
    if arr.shape[0] != sys.n - 2:
        raise ValueError(f"expected {sys.n - 2} Rabi pairs, got {arr.shape[0]}")
    return arr


def build_hamiltonian_n(sys: LambdaSystem, pairs, env) -> np.ndarray:
    """Rotating-frame n-level Hamiltonian in rad/ps.

    ``env`` may be a scalar envelope value or an array, in which case a
    stack of shape ``(len(env), n, n)`` is returned.
    """
    p = _pairs_array(sys, pairs)
    e = np.asarray(env, dtype=float)
    n = sys.n
    h = np.zeros(e.shape + (n, n), dtype=np.complex128)
    diag = sys.level_energies()
    h[..., np.arange(n), np.arange(n)] = diag
    for k in range(n - 2):
        for g in range(2):
            coupling = -0.5 * p[k, g] * e
            h[..., g, k + 2] = coupling
            h[..., k + 2, g] = np.conj(coupling)
    return h


def build_hamiltonian_3(sys: LambdaSystem, pair, env) -> np.ndarray:
    if sys.n != 3:
        raise ValueError("build_hamiltonian_3 requires a single excited level")
    return build_hamiltonian_n(sys, [pair], env)


# ------------------------------------------------- adiabatic elimination


def light_shifts(sys: LambdaSystem, pairs, env: float = 1.0) -> tuple[float, float]:
    """The two ground-state light-shift frequencies (rad/ps)."""
    p = _pairs_array(sys, pairs) * env
    d = sys.detunings
    s1 = 0.5 * float(np.sum(np.abs(p[:, 0]) ** 2 / d))
    s2 = 0.5 * float(np.sum(np.abs(p[:, 1]) ** 2 / d))
    return s1, s2


def effective_rabi(sys: LambdaSystem, pairs, env: float = 1.0) -> complex:
    """Raman coupling between the ground states (rad/ps)."""
    p = _pairs_array(sys, pairs) * env
    return complex(0.5 * np.sum(p[:, 0] * np.conj(p[:, 1]) / sys.detunings))


def effective_two_level(sys: LambdaSystem, pairs, env) -> np.ndarray:
    """Ground-state Hamiltonian after eliminating the excited levels.

    Accepts a scalar or array envelope like :func:`build_hamiltonian_n`.
    """
    p = _pairs_array(sys, pairs)
    ratio = float(np.max(np.abs(p) * np.max(np.abs(env)) / np.abs(sys.detunings)[:, None]))
    if ratio > 0.5:
        warnings.warn(
            f"Rabi/detuning ratio {ratio:.2f} exceeds 0.5; adiabatic elimination is inaccurate",
            stacklevel=2,
        )
    e2 = np.asarray(env, dtype=float) ** 2
    s1, s2 = light_shifts(sys, p)
    eff = effective_rabi(sys, p)
    h = np.zeros(e2.shape + (2, 2), dtype=np.complex128)
    h[..., 0, 0] = -0.5 * s1 * e2
    h[..., 1, 1] = -(0.5 * s2 * e2 - sys.omega_l)
    h[..., 0, 1] = -0.5 * eff * e2
    h[..., 1, 0] = -0.5 * np.conj(eff) * e2
    return h


def rotation_angle(pulse: PulseSpec, sys: LambdaSystem, cal: RabiCalibration) -> float:
    """Pulse area of the effective Raman coupling.

    The coupling follows the intensity envelope sech^2, whose integral is
    ``2 tau``.
    """
    peak = abs(effective_rabi(sys, rabi_pairs(sys, pulse, cal)))
    return 2.0 * pulse.tau * peak


def calibrate_kappa(
    theta: float,
    pulse: PulseSpec,
    sys: LambdaSystem,
    energy_scale_factor: float = 0.8,
) -> float:
    """Solve ``rotation_angle(pulse) == theta`` for the Rabi scale kappa."""
    if pulse.energy_density <= 0 or theta <= 0:
        raise ValueError("calibration needs a positive energy and angle")
    unit = rotation_angle(pulse, sys, RabiCalibration(1.0, energy_scale_factor))
    if unit == 0:
        raise ValueError("pulse produces no Raman coupling at this polarization")
    # area is quadratic in kappa
    return math.sqrt(theta / unit)


def energy_for_rotation(theta: float, pulse: PulseSpec, sys: LambdaSystem, cal: RabiCalibration) -> float:
    """Energy density giving rotation ``theta``; area is linear in energy."""
    unit = rotation_angle(pulse.at(pulse.arrival_time, 1.0), sys, cal)
    if unit == 0:
        raise ValueError("pulse produces no Raman coupling at this polarization")
    return theta / unit


# ------------------------------------------------------------ relaxation


def gamma3_of_pulse(model: DephasingModel, pulse: PulseSpec | None, t) -> float:
    """Excited-state dephasing rate in 1/ps at time ``t``."""
    if isinstance(model, ConstantDephasing):
        value = model.gamma3_ghz * PER_GHZ
        return value if np.ndim(t) == 0 else np.full(np.shape(t), value)
    if isinstance(model, EnergyLinearDephasing):
        if pulse is None:
            return 0.0 if np.ndim(t) == 0 else np.zeros(np.shape(t))
        return model.peak_ghz(pulse.energy_density) * PER_GHZ * envelope(pulse, t) ** 2
    raise TypeError(f"unknown dephasing model {model!r}")


def relaxation_superop(params: RelaxationParams, gamma3: float, rho) -> np.ndarray:
    """Three-level relaxation operator applied to ``rho`` (rates in 1/ps)."""
    r = as_square(rho)
    if r.shape[0] != 3:
        raise ValueError("relaxation operator is defined for three levels")
    g12 = params.gamma_12 * PER_NS
    g21 = params.gamma_21 * PER_NS
    g3 = params.gamma_3 * PER_NS
    g2 = params.gamma_2 * PER_NS
    d12 = (g12 + g21) / 2 + g2
    d13 = (g12 + 2 * g3) / 2 + gamma3
    d23 = (g21 + 2 * g3) / 2 + gamma3
    return np.array(
        [
            [-g12 * r[0, 0] + g21 * r[1, 1] + g3 * r[2, 2], -d12 * r[0, 1], -d13 * r[0, 2]],
            [-d12 * r[1, 0], g12 * r[0, 0] - g21 * r[1, 1] + g3 * r[2, 2], -d23 * r[1, 2]],
            [-d13 * r[2, 0], -d23 * r[2, 1], -2 * g3 * r[2, 2]],
        ],
        dtype=np.complex128,
    )


@dataclass(frozen=True)
class RelaxationCoefficients:
    """Relaxation operator in coefficient form, as consumed by the integrator.

    ``L(rho)`` has diagonal ``flow @ diag(rho)`` and off-diagonal entries
    ``-(decay + gamma3(t) * dephasing_mask) * rho``.
    """

    flow: np.ndarray
    decay: np.ndarray
    dephasing_mask: np.ndarray

    def apply(self, gamma3: float, rho) -> np.ndarray:
        r = as_square(rho)
        out = -(self.decay + gamma3 * self.dephasing_mask) * r
        np.fill_diagonal(out, self.flow @ np.diag(r))
        return out


def relaxation_coefficients(params: RelaxationParams | None, n: int = 3) -> RelaxationCoefficients:
    if params is None:
        z = np.zeros((n, n))
        return RelaxationCoefficients(z, z.copy(), z.copy())
    if n != 3:
        raise ValueError("relaxation is only defined for three-level simulations")
    g12 = params.gamma_12 * PER_NS
    g21 = params.gamma_21 * PER_NS
    g3 = params.gamma_3 * PER_NS
    g2 = params.gamma_2 * PER_NS
    flow = np.array(
        [[-g12, g21, g3], [g12, -g21, g3], [0.0, 0.0, -2 * g3]],
    )
    decay = np.zeros((3, 3))
    decay[0, 1] = decay[1, 0] = (g12 + g21) / 2 + g2
    decay[0, 2] = decay[2, 0] = (g12 + 2 * g3) / 2
    decay[1, 2] = decay[2, 1] = (g21 + 2 * g3) / 2
    mask = np.zeros((3, 3))
    mask[0, 2] = mask[2, 0] = mask[1, 2] = mask[2, 1] = 1.0
    return RelaxationCoefficients(flow, decay, mask)


def default_system() -> LambdaSystem:
    return LambdaSystem()


def default_calibration(
    sys: LambdaSystem | None = None,
    *,
    theta: float = 0.9,
    energy_density: float = 10.0,
    fwhm: float = DEFAULT_FWHM_PS,
    polarization_angle: float = DEFAULT_POLARIZATION,
    energy_scale_factor: float = 0.8,
) -> RabiCalibration:
    """Calibration reproducing a ``theta`` rotation at ``energy_density``."""
    sys = sys or default_system()
    ref = PulseSpec(energy_density, fwhm=fwhm, polarization_angle=polarization_angle)
    return RabiCalibration(calibrate_kappa(theta, ref, sys, energy_scale_factor), energy_scale_factor)


def populations_density(populations: Sequence[float]) -> np.ndarray:
    p = np.asarray(populations, dtype=float)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError(f"populations must be non-negative and sum to 1, got {tuple(p)}")
    return np.diag(p).astype(np.complex128)
