"""Run configuration: a YAML document validated against a strict schema.

Unknown keys are rejected.  Validation errors are reported with the line
of the offending key in the source document.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import model as m
from .engine import IntegratorConfig
from .fitting import FitModel, FitParams
from .sequences import Setup


class ConfigError(ValueError):
    """Invalid configuration document."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemConfig(_Strict):
    omega_l_ghz: float = m.DEFAULT_OMEGA_L_GHZ
    detunings_thz: list[float] = [m.DEFAULT_DETUNING_THZ]
    coupling_weights: list[tuple[float, float]] = [(1.0, 1.0)]

    @model_validator(mode="after")
    def _three_levels(self):
        if len(self.detunings_thz) != 1:
            raise ValueError("simulations support exactly one excited level")
        if len(self.coupling_weights) != len(self.detunings_thz):
            raise ValueError("one coupling-weight pair per detuning is required")
        if any(d == 0 for d in self.detunings_thz):
            raise ValueError("detunings must be non-zero")
        return self


class PulseConfig(_Strict):
    fwhm_ps: float = Field(m.DEFAULT_FWHM_PS, gt=0)
    polarization_deg: float = Field(45.0, ge=0, le=90)
    fwhm_convention: Literal["intensity", "field"] = "intensity"


class CalibrationConfig(_Strict):
    kappa: Optional[float] = Field(None, gt=0)
    reference_rotation_rad: float = Field(0.9, gt=0)
    reference_energy: float = Field(10.0, gt=0)
    energy_scale_factor: float = Field(0.8, gt=0, le=2)


class ConstantDephasingConfig(_Strict):
    model: Literal["constant"] = "constant"
    gamma3_ghz: float = Field(10.0, ge=0)


class EnergyLinearDephasingConfig(_Strict):
    model: Literal["energy_linear"] = "energy_linear"
    slope_thz_per_ujcm2: float = Field(0.16, ge=0)
    offset_ghz: float = Field(10.0, ge=0)


DephasingConfig = Annotated[
    Union[ConstantDephasingConfig, EnergyLinearDephasingConfig], Field(discriminator="model")
]


class RelaxationConfig(_Strict):
    gamma_12_per_ns: float = Field(1e-5, ge=0)
    gamma_3_per_ns: float = Field(0.5, ge=0)
    gamma_2_per_ns: float = Field(1.0, ge=0)
    temperature_k: float = Field(4.2, gt=0)
    zeeman_thermal_ratio: Optional[float] = Field(None, gt=0)


class IntegratorSection(_Strict):
    dt_pulse_fs: float = Field(2.0, gt=0, le=10)
    dt_free_ps: float = Field(0.1, gt=0, le=1)
    record_stride: int = Field(50, ge=1)


class RangeConfig(_Strict):
    start: float
    stop: float
    step: float = Field(gt=0)

    def values(self) -> list[float]:
        count = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return [self.start + i * self.step for i in range(max(count, 0))]


def expand_values(v) -> list[float]:
    return v.values() if isinstance(v, RangeConfig) else list(v)


class SingleConfig(_Strict):
    energies: Union[list[float], RangeConfig] = RangeConfig(start=0.0, stop=50.0, step=2.5)

    @field_validator("energies")
    @classmethod
    def _check(cls, v):
        vals = expand_values(v)
        if not vals or any(u < 0 for u in vals):
            raise ValueError("energies must be non-empty and non-negative")
        return v


class DoubleConfig(_Strict):
    energy: float = Field(10.0, ge=0)
    tau_d_ps: Union[list[float], RangeConfig] = RangeConfig(start=20.0, stop=120.0, step=1.0)
    visibility_energies: list[float] = []

    @field_validator("tau_d_ps")
    @classmethod
    def _check(cls, v):
        if not expand_values(v):
            raise ValueError("tau_d_ps must be non-empty")
        return v


class TrainConfig(_Strict):
    pulse_counts: list[int] = [1, 2, 4, 6, 8, 12, 16, 24, 32, 48, 64]
    per_pulse_energy: Optional[float] = Field(None, ge=0)
    spacing_periods: Optional[int] = Field(None, ge=1)
    target_angle_rad: float = Field(math.pi, gt=0)
    staircase_pulses: Optional[int] = Field(8, ge=1)

    @field_validator("pulse_counts")
    @classmethod
    def _check(cls, v):
        if not v or any(c < 1 for c in v):
            raise ValueError("pulse_counts must be non-empty positive integers")
        return v


class FitConfig(_Strict):
    free: list[Literal["kappa", "gamma3_slope", "gamma3_offset"]] = ["kappa", "gamma3_slope"]
    bounds: dict[Literal["kappa", "gamma3_slope", "gamma3_offset"], tuple[float, float]] = {}
    initial: dict[Literal["kappa", "gamma3_slope", "gamma3_offset"], float] = {}
    restarts: int = Field(5, ge=1)
    max_evals: int = Field(2000, ge=1)
    rss_spread: float = Field(1e-10, gt=0)
    dt_pulse_fs: float = Field(10.0, gt=0, le=10)


class SynthesizeConfig(_Strict):
    energies: list[float] = [2.0, 5.0, 8.0, 10.0, 15.0, 20.0, 30.0, 40.0]
    tau_d_ps: Union[list[float], RangeConfig] = RangeConfig(start=20.0, stop=70.0, step=2.5)
    double_energy: float = Field(10.0, ge=0)
    noise_sigma: float = Field(0.01, ge=0)


class RunConfig(_Strict):
    system: SystemConfig = SystemConfig()
    pulse: PulseConfig = PulseConfig()
    calibration: CalibrationConfig = CalibrationConfig()
    relaxation: RelaxationConfig = RelaxationConfig()
    dephasing: DephasingConfig = EnergyLinearDephasingConfig()
    integrator: IntegratorSection = IntegratorSection()
    preparation: tuple[float, float, float] = m.DEFAULT_PUMPED_POPULATIONS
    single: SingleConfig = SingleConfig()
    double: DoubleConfig = DoubleConfig()
    train: TrainConfig = TrainConfig()
    fit: FitConfig = FitConfig()
    synthesize: SynthesizeConfig = SynthesizeConfig()
    seed: int = Field(0, ge=0, lt=2**64)
    output: str = "out"

    @field_validator("preparation")
    @classmethod
    def _populations(cls, v):
        if any(p < 0 for p in v) or abs(sum(v) - 1.0) > 1e-12:
            raise ValueError("preparation populations must be non-negative and sum to 1")
        return v

    # -------------------------------------------------------- builders

    def system_obj(self) -> m.LambdaSystem:
        s = self.system
        return m.LambdaSystem(s.omega_l_ghz, tuple(s.detunings_thz), tuple(tuple(w) for w in s.coupling_weights))

    def template(self) -> m.PulseSpec:
        p = self.pulse
        return m.PulseSpec(
            0.0, fwhm=p.fwhm_ps, polarization_angle=math.radians(p.polarization_deg), fwhm_convention=p.fwhm_convention
        )

    def dephasing_obj(self) -> m.DephasingModel:
        d = self.dephasing
        if isinstance(d, ConstantDephasingConfig):
            return m.ConstantDephasing(d.gamma3_ghz)
        return m.EnergyLinearDephasing(d.slope_thz_per_ujcm2, d.offset_ghz)

    def thermal_ratio(self) -> float:
        r = self.relaxation
        if r.zeeman_thermal_ratio is not None:
            return r.zeeman_thermal_ratio
        return m.thermal_ratio(self.system.omega_l_ghz, r.temperature_k)

    def kappa(self) -> float:
        c = self.calibration
        if c.kappa is not None:
            return c.kappa
        ref = self.template().at(0.0, c.reference_energy)
        return m.calibrate_kappa(c.reference_rotation_rad, ref, self.system_obj(), c.energy_scale_factor)

    def setup(self, dt_pulse_fs: Optional[float] = None) -> Setup:
        r = self.relaxation
        relax = m.RelaxationParams(
            gamma_12=r.gamma_12_per_ns,
            gamma_3=r.gamma_3_per_ns,
            gamma_2=r.gamma_2_per_ns,
            dephasing=self.dephasing_obj(),
            zeeman_thermal_ratio=self.thermal_ratio(),
        )
        i = self.integrator
        integ = IntegratorConfig(dt_pulse_fs if dt_pulse_fs is not None else i.dt_pulse_fs, i.dt_free_ps, i.record_stride)
        cal = m.RabiCalibration(self.kappa(), self.calibration.energy_scale_factor)
        return Setup(self.system_obj(), relax, cal, integ)

    def fit_model(self) -> FitModel:
        return FitModel(self.setup(self.fit.dt_pulse_fs), self.template(), tuple(self.preparation))

    def fit_params(self) -> FitParams:
        return FitParams(tuple(self.fit.free), dict(self.fit.bounds), dict(self.fit.initial))

    def resolved(self) -> "RunConfig":
        """Copy with every derived default written out explicitly."""
        cal = self.calibration.model_copy(update={"kappa": self.kappa()})
        rel = self.relaxation.model_copy(update={"zeeman_thermal_ratio": self.thermal_ratio()})
        return self.model_copy(update={"calibration": cal, "relaxation": rel})

    def to_document(self) -> dict:
        return self.model_dump(mode="json")


# ------------------------------------------------------------------ loading


def _line_of(node, loc) -> Optional[int]:
    """1-based line of the YAML node at ``loc``, or of its nearest ancestor."""
    line = node.start_mark.line + 1 if node is not None else None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == str(key):
                    nxt, line = v, k.start_mark.line + 1
                    break
            if nxt is None:
                break
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            continue
    return line


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        node = yaml.compose(text)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark is not None else source
        raise ConfigError(f"{where}: {getattr(exc, 'problem', None) or exc}") from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}:1: top level must be a mapping")
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = [p for p in err["loc"] if p not in ("constant", "energy_linear", "list[float]", "RangeConfig")]
            line = _line_of(node, loc)
            path = ".".join(str(p) for p in loc) or "<root>"
            lines.append(f"{source}:{line or 1}: {path}: {err['msg']}")
        raise ConfigError("\n".join(lines)) from exc


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
    return parse_config(text, str(path))
