"""Simultaneous fit of single- and double-pulse curves to the dephasing model.

The free parameters are any subset of the Rabi scale ``kappa`` and the
energy-linear dephasing ``gamma3_slope`` (THz per uJ/cm^2) and
``gamma3_offset`` (GHz).  The objective is the weighted residual sum of
squares over both curves; it is minimised by a bounded Nelder-Mead simplex
with deterministic restarts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .model import DEFAULT_PUMPED_POPULATIONS, EnergyLinearDephasing, PulseSpec, RabiCalibration
from .model import populations_density
from .sequences import Prepare, Pulse, Readout, Setup, double_pulse_sequence, evolve_sequence

PARAMETERS = ("kappa", "gamma3_slope", "gamma3_offset")
DEFAULT_BOUNDS = {
    "kappa": (0.2, 5.0),
    "gamma3_slope": (0.0, 1.0),
    "gamma3_offset": (0.0, 100.0),
}


class DataError(ValueError):
    """A data set is malformed or violates its invariants."""


@dataclass
class DataSet:
    """Measured curves as ``(abscissa, rho22, sigma)`` rows.

    ``metadata`` must carry ``double_pulse_energy`` when double-pulse rows are
    present; it may also carry the ``prepared`` populations.
    """

    single_pulse: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    double_pulse: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.single_pulse = _rows(self.single_pulse, "single_pulse")
        self.double_pulse = _rows(self.double_pulse, "double_pulse")
        if len(self.single_pulse) == 0 and len(self.double_pulse) == 0:
            raise DataError("data set contains no points")
        for name, rows in (("single_pulse", self.single_pulse), ("double_pulse", self.double_pulse)):
            if 0 < len(rows) < 3:
                raise DataError(f"{name} needs at least 3 points, got {len(rows)}")
            if len(rows) and np.any(rows[:, 2] <= 0):
                raise DataError(f"{name} sigma values must be positive")
            if len(rows) and not np.all(np.isfinite(rows)):
                raise DataError(f"{name} contains non-finite values")
        if len(self.single_pulse) and np.any(self.single_pulse[:, 0] < 0):
            raise DataError("energy densities must be non-negative")
        if len(self.double_pulse) and "double_pulse_energy" not in self.metadata:
            raise DataError("metadata.double_pulse_energy is required with double-pulse data")

    @property
    def size(self) -> int:
        return len(self.single_pulse) + len(self.double_pulse)

    def to_dict(self) -> dict:
        return {
            "single_pulse": self.single_pulse.tolist(),
            "double_pulse": self.double_pulse.tolist(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, doc) -> "DataSet":
        if not isinstance(doc, dict):
            raise DataError("data document must be a JSON object")
        unknown = set(doc) - {"single_pulse", "double_pulse", "metadata"}
        if unknown:
            raise DataError(f"unknown keys in data document: {sorted(unknown)}")
        return cls(doc.get("single_pulse", []), doc.get("double_pulse", []), dict(doc.get("metadata", {})))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "DataSet":
        text = Path(path).read_text()
        if not text.strip():
            raise DataError(f"{path}: empty data file")
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(doc)


def _rows(rows, name) -> np.ndarray:
    arr = np.asarray(rows, dtype=float)
    if arr.size == 0:
        return np.zeros((0, 3))
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DataError(f"{name} rows must be (x, rho22, sigma) triples")
    return arr


@dataclass(frozen=True)
class FitParams:
    free: tuple[str, ...] = ("kappa", "gamma3_slope")
    bounds: dict = field(default_factory=dict)
    initial: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "free", tuple(self.free))
        if not self.free:
            raise ValueError("at least one free parameter is required")
        for name in self.free:
            if name not in PARAMETERS:
                raise ValueError(f"unknown fit parameter {name!r}")
        if len(set(self.free)) != len(self.free):
            raise ValueError("duplicate free parameters")
        for name in self.free:
            lo, hi = self.bound(name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"bounds for {name} must be finite and ordered")
            if name in self.initial and not lo <= self.initial[name] <= hi:
                raise ValueError(f"initial guess for {name} lies outside its bounds")

    def bound(self, name: str) -> tuple[float, float]:
        lo, hi = self.bounds.get(name, DEFAULT_BOUNDS[name])
        return float(lo), float(hi)

    def __hash__(self):
        return hash((self.free, tuple(sorted(self.bounds.items())), tuple(sorted(self.initial.items()))))


@dataclass
class FitReport:
    values: dict
    rss: float
    residuals_single: list
    residuals_double: list
    converged: bool
    evaluations: int
    restarts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "values": self.values,
            "rss": self.rss,
            "residuals": {"single_pulse": self.residuals_single, "double_pulse": self.residuals_double},
            "converged": self.converged,
            "evaluations": self.evaluations,
            "restarts": self.restarts,
        }


@dataclass(frozen=True)
class FitModel:
    """Forward model shared by fitting and synthetic-data generation."""

    setup: Setup = field(default_factory=Setup)
    template: PulseSpec = PulseSpec(0.0)
    prepared: tuple[float, ...] = DEFAULT_PUMPED_POPULATIONS

    def base_values(self) -> dict:
        d = self.setup.relaxation.dephasing
        if isinstance(d, EnergyLinearDephasing):
            slope, offset = d.slope_thz, d.offset_ghz
        else:
            slope, offset = EnergyLinearDephasing().slope_thz, EnergyLinearDephasing().offset_ghz
        return {"kappa": self.setup.calibration.kappa, "gamma3_slope": slope, "gamma3_offset": offset}

    def with_values(self, values: dict) -> Setup:
        v = {**self.base_values(), **values}
        cal = RabiCalibration(v["kappa"], self.setup.calibration.energy_scale_factor)
        relax = replace(self.setup.relaxation, dephasing=EnergyLinearDephasing(v["gamma3_slope"], v["gamma3_offset"]))
        return replace(self.setup, calibration=cal, relaxation=relax)

    def predict_single(self, values: dict, energies) -> np.ndarray:
        setup = self.with_values(values)
        out = []
        rho0 = populations_density(self.prepared)
        for u in energies:
            pulse = self.template.at(self.template.arrival_time, float(u))
            steps = [Prepare(self.prepared), Pulse(pulse), Readout(2)]
            _, reads = evolve_sequence(steps, setup, [rho0])
            out.append(reads[0, 0])
        return np.array(out)

    def predict_double(self, values: dict, energy: float, tau_ds) -> np.ndarray:
        setup = self.with_values(values)
        rho0 = populations_density(self.prepared)
        out = []
        for tau in tau_ds:
            steps = double_pulse_sequence(float(energy), float(tau), self.template, self.prepared)
            _, reads = evolve_sequence(steps, setup, [rho0], use_maps=True)
            out.append(reads[0, 0])
        return np.array(out)


def _model_for(data: DataSet, model: FitModel) -> FitModel:
    prepared = data.metadata.get("prepared")
    if prepared is not None:
        return replace(model, prepared=tuple(float(p) for p in prepared))
    return model


def residuals(values: dict, data: DataSet, model: FitModel) -> np.ndarray:
    """Weighted residuals ``(model - data)/sigma``, single-pulse rows first."""
    model = _model_for(data, model)
    parts = []
    try:
        if len(data.single_pulse):
            pred = model.predict_single(values, data.single_pulse[:, 0])
            parts.append((pred - data.single_pulse[:, 1]) / data.single_pulse[:, 2])
        if len(data.double_pulse):
            pred = model.predict_double(values, data.metadata["double_pulse_energy"], data.double_pulse[:, 0])
            parts.append((pred - data.double_pulse[:, 1]) / data.double_pulse[:, 2])
    except (ValueError, RuntimeError) as exc:
        raise RuntimeError(f"simulation failed for parameters {values}: {exc}") from exc
    return np.concatenate(parts)


def rss(values: dict, data: DataSet, model: FitModel) -> float:
    r = residuals(values, data, model)
    return float(r @ r)


def fit(
    data: DataSet,
    spec: FitParams,
    model: FitModel,
    *,
    restarts: int = 5,
    seed: int = 0,
    max_evals: int = 2000,
    rss_spread: float = 1e-10,
    jitter: float = 0.2,
) -> FitReport:
    """Bounded Nelder-Mead with ``restarts`` jittered starting points.

    The first start is the initial guess itself; later starts are drawn
    uniformly within ``jitter`` of the bounded range around it.  The
    lowest-RSS result wins.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    model = _model_for(data, model)
    base = model.base_values()
    lo = np.array([spec.bound(n)[0] for n in spec.free])
    hi = np.array([spec.bound(n)[1] for n in spec.free])
    width = hi - lo
    x_init = np.array([spec.initial.get(n, base[n]) for n in spec.free], dtype=float)
    x_init = np.clip(x_init, lo, hi)
    z_init = (x_init - lo) / width

    cache: dict[tuple, float] = {}
    count = [0]

    def objective(z):
        z = np.clip(z, 0.0, 1.0)
        key = tuple(np.round(z, 15))
        if key not in cache:
            count[0] += 1
            cache[key] = rss(dict(zip(spec.free, (lo + z * width).tolist())), data, model)
        return cache[key]

    rng = np.random.default_rng(seed)
    starts = [z_init]
    for _ in range(restarts - 1):
        starts.append(np.clip(z_init + rng.uniform(-jitter, jitter, size=z_init.size), 0.0, 1.0))

    best = None
    runs = []
    for z0 in starts:
        # step of 5 % of the bounded range, pointing into the box
        simplex = [z0]
        for i in range(z0.size):
            z = z0.copy()
            z[i] = z[i] + 0.05 if z[i] + 0.05 <= 1.0 else z[i] - 0.05
            simplex.append(z)
        res = minimize(
            objective,
            z0,
            method="Nelder-Mead",
            bounds=[(0.0, 1.0)] * z0.size,
            options={
                "initial_simplex": np.array(simplex),
                "maxfev": max_evals,
                "fatol": rss_spread,
                "xatol": math.inf,
                "adaptive": False,
            },
        )
        f_start = objective(z0)
        z_best = np.clip(res.x, 0.0, 1.0)
        f_best = objective(z_best)
        if f_start < f_best:
            z_best, f_best = z0, f_start
        spread_ok = _simplex_spread(res) <= rss_spread
        run = {
            "start": dict(zip(spec.free, (lo + z0 * width).tolist())),
            "values": dict(zip(spec.free, (lo + z_best * width).tolist())),
            "rss_start": f_start,
            "rss": f_best,
            "converged": bool(res.status == 0 or spread_ok),
            "evaluations": int(res.nfev),
        }
        runs.append(run)
        if best is None or f_best < best[1]:
            best = (z_best, f_best, run)

    z_best, f_best, run = best
    values = {**{k: base[k] for k in PARAMETERS}, **dict(zip(spec.free, (lo + z_best * width).tolist()))}
    r = residuals(values, data, model)
    ns = len(data.single_pulse)
    return FitReport(
        values=values,
        rss=float(r @ r),
        residuals_single=r[:ns].tolist(),
        residuals_double=r[ns:].tolist(),
        converged=any(x["converged"] for x in runs),
        evaluations=count[0],
        restarts=runs,
    )


def _simplex_spread(res) -> float:
    sim = getattr(res, "final_simplex", None)
    if sim is None:
        return math.inf
    f = np.asarray(sim[1])
    return float(f.max() - f.min())


def synthesize(
    values: dict,
    model: FitModel,
    *,
    energies: Sequence[float] = (),
    tau_ds: Sequence[float] = (),
    double_energy: float = 10.0,
    sigma: float = 0.0,
    seed: int = 0,
    report_sigma: Optional[float] = None,
) -> DataSet:
    """Forward-model curves plus seeded Gaussian noise of width ``sigma``.

    ``report_sigma`` is the per-point uncertainty written into the data set;
    it defaults to ``sigma``, or 0.01 for noiseless data.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    weight = report_sigma if report_sigma is not None else (sigma if sigma > 0 else 0.01)
    single = np.zeros((0, 3))
    double = np.zeros((0, 3))
    if len(energies):
        y = model.predict_single(values, energies)
        noise = rng.normal(0.0, sigma, size=y.size) if sigma > 0 else np.zeros(y.size)
        single = np.column_stack([np.asarray(energies, float), y + noise, np.full(y.size, weight)])
    if len(tau_ds):
        y = model.predict_double(values, double_energy, tau_ds)
        noise = rng.normal(0.0, sigma, size=y.size) if sigma > 0 else np.zeros(y.size)
        double = np.column_stack([np.asarray(tau_ds, float), y + noise, np.full(y.size, weight)])
    meta = {
        "double_pulse_energy": float(double_energy),
        "prepared": list(model.prepared),
        "generating_values": {k: float(v) for k, v in values.items()},
        "noise_sigma": float(sigma),
        "seed": int(seed),
    }
    return DataSet(single, double, meta)
