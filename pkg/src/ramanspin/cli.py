"""Command-line front end.

Subcommands ``single``, ``double``, ``train`` and ``fit`` read a YAML run
configuration, run the matching experiment and write CSV tables plus a JSON
summary into ``--out``.  ``synthesize`` writes a fit data set generated
from the configured model.

Exit codes: 0 ok, 2 config or data error, 3 simulation failure,
4 fit did not converge.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, expand_values, load_config
from .fitting import DataError, DataSet, fit, synthesize
from .sequences import (
    double_pulse_sweep,
    pulse_train,
    single_pulse_sweep,
    train_staircase,
    visibility,
    visibility_vs_energy,
)

log = logging.getLogger("ramanspin")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SIMULATION = 3
EXIT_NOT_CONVERGED = 4

SIMULATION_ERRORS = (RuntimeError, ValueError, ArithmeticError)


class _InputError(Exception):
    pass


def fmt(x) -> str:
    """Shortest round-trip decimal text for a finite number."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    v = float(x)
    if not math.isfinite(v):
        raise ArithmeticError(f"non-finite value {v!r} in output")
    return repr(v)


def write_csv(path: Path, header: list[str], columns) -> None:
    rows = list(zip(*columns))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _floats(a) -> list:
    return [float(v) for v in a]


# ----------------------------------------------------------------- commands


def cmd_single(cfg: RunConfig, out: Path) -> int:
    setup, template = cfg.setup(), cfg.template()
    res = single_pulse_sweep(expand_values(cfg.single.energies), setup, template, cfg.preparation)
    write_csv(
        out / "single.csv",
        ["energy_ujcm2", "rho22", "rotation_angle_rad", "fidelity"],
        [res.values, res.rho22, res.extra["rotation_angle_rad"], res.fidelity],
    )
    plateau = res.values >= 3 * cfg.calibration.reference_energy
    summary = {
        "model_variant": cfg.dephasing.model,
        "saturation_rho22": float(res.rho22[-1]),
        "plateau_energy_min_ujcm2": 3 * cfg.calibration.reference_energy,
        "plateau_mean_rho22": float(np.mean(res.rho22[plateau])) if plateau.any() else None,
        "points": len(res.values),
        "config": cfg.to_document(),
    }
    write_json(out / "single_summary.json", summary)
    return EXIT_OK


def cmd_double(cfg: RunConfig, out: Path) -> int:
    setup, template = cfg.setup(), cfg.template()
    taus = expand_values(cfg.double.tau_d_ps)
    curve = double_pulse_sweep(cfg.double.energy, taus, setup, template, cfg.preparation, with_fidelity=False)
    write_csv(out / "double.csv", ["tau_d_ps", "rho22"], [curve.values, curve.rho22])
    baseline = cfg.preparation[1]
    summary = {"baseline": baseline, "energy_ujcm2": cfg.double.energy, "config": cfg.to_document()}
    if len(taus) >= 4:
        vis = visibility(curve, baseline)
        summary.update(
            frequency_ghz=vis.frequency_ghz,
            period_ps=vis.period_ps,
            visibility=vis.visibility,
            amplitude=vis.amplitude,
            offset=vis.offset,
        )
    else:
        log.warning("fewer than four delays: no sinusoid fit")
        summary.update(frequency_ghz=None, period_ps=None, visibility=None, amplitude=None, offset=None)
    if cfg.double.visibility_energies:
        energies, vis_e = visibility_vs_energy(cfg.double.visibility_energies, taus, setup, template, cfg.preparation)
        write_csv(out / "visibility.csv", ["energy_ujcm2", "visibility"], [energies, vis_e])
        summary["visibility_vs_energy"] = {"energy_ujcm2": _floats(energies), "visibility": _floats(vis_e)}
    write_json(out / "double_summary.json", summary)
    return EXIT_OK


def cmd_train(cfg: RunConfig, out: Path) -> int:
    setup, template = cfg.setup(), cfg.template()
    t = cfg.train
    spacing = None if t.spacing_periods is None else t.spacing_periods * setup.system.larmor_period
    kw = dict(per_pulse_energy=t.per_pulse_energy, spacing=spacing, target_angle=t.target_angle_rad)
    res = pulse_train(t.pulse_counts, setup, template, **kw)
    counts = [int(n) for n in res.values]
    write_csv(out / "train.csv", ["n_pulses", "fidelity"], [counts, res.fidelity])
    summary = {
        "model_variant": cfg.dephasing.model,
        "energy_ujcm2": _floats(res.extra["energy_ujcm2"]),
        "spacing_ps": float(res.extra["spacing_ps"][0]),
        "best_n_pulses": counts[int(np.argmax(res.fidelity))],
        "best_fidelity": float(np.max(res.fidelity)),
        "config": cfg.to_document(),
    }
    if t.staircase_pulses is not None:
        traj = train_staircase(t.staircase_pulses, setup, template, **kw)
        write_csv(out / "train_staircase.csv", ["time_ps", "rho22"], [traj.times, traj.population(2)])
        summary["staircase_pulses"] = t.staircase_pulses
    write_json(out / "train_summary.json", summary)
    return EXIT_OK


def _load_data(path) -> DataSet:
    if path is None:
        raise _InputError("fit requires --data <path>")
    try:
        return DataSet.load(path)
    except OSError as exc:
        raise _InputError(f"{path}: cannot read data ({exc.strerror})") from exc


def cmd_fit(cfg: RunConfig, out: Path, data_path) -> int:
    data = _load_data(data_path)
    model, spec = cfg.fit_model(), cfg.fit_params()
    report = fit(
        data,
        spec,
        model,
        restarts=cfg.fit.restarts,
        seed=cfg.seed,
        max_evals=cfg.fit.max_evals,
        rss_spread=cfg.fit.rss_spread,
    )
    doc = report.to_dict()
    doc["free"] = list(spec.free)
    doc["points"] = data.size
    doc["config"] = cfg.to_document()
    write_json(out / "fit_report.json", doc)
    if not report.converged:
        log.error("fit did not converge after %d evaluations", report.evaluations)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_synthesize(cfg: RunConfig, out: Path) -> int:
    s = cfg.synthesize
    model = cfg.fit_model()
    data = synthesize(
        model.base_values(),
        model,
        energies=s.energies,
        tau_ds=expand_values(s.tau_d_ps),
        double_energy=s.double_energy,
        sigma=s.noise_sigma,
        seed=cfg.seed,
    )
    data.save(out / "data.json")
    return EXIT_OK


COMMANDS = {
    "single": cmd_single,
    "double": cmd_double,
    "train": cmd_train,
    "fit": cmd_fit,
    "synthesize": cmd_synthesize,
}


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ramanspin", description="Raman spin-rotation simulations.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("single", "single-pulse energy sweep"),
        ("double", "two-pulse delay sweep"),
        ("train", "multi-pulse pi-rotation fidelity"),
        ("fit", "fit the dephasing model to measured curves"),
        ("synthesize", "write a synthetic fit data set"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, help="YAML run configuration (defaults if omitted)")
        p.add_argument("--out", type=Path, help="output directory (overrides config 'output')")
        p.add_argument("--seed", type=int, help="RNG seed (overrides config 'seed')")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "fit":
            p.add_argument("--data", type=Path, help="JSON data set")
    return parser


def _prepare(args) -> tuple[RunConfig, Path]:
    cfg = load_config(args.config) if args.config is not None else RunConfig()
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise _InputError("--seed must be an unsigned 64-bit integer")
        cfg = cfg.model_copy(update={"seed": args.seed})
    out = args.out if args.out is not None else Path(cfg.output)
    try:
        cfg = cfg.resolved()
        cfg.setup()
        cfg.template()
        if args.command == "fit":
            cfg.fit_params()
    except ValueError as exc:
        raise _InputError(f"{args.config or '<defaults>'}: {exc}") from exc
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg, out = _prepare(args)
    except (ConfigError, _InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    command = COMMANDS[args.command]
    try:
        if args.command == "fit":
            return command(cfg, out, args.data)
        return command(cfg, out)
    except (DataError, _InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SIMULATION_ERRORS as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_SIMULATION


if __name__ == "__main__":
    sys.exit(main())
