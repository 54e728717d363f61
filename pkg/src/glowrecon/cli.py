"""Command line entry point.

``glowrecon simulate|preprocess|invert|postprocess|report --config <path> [--jobs K] [--seed S]``

Exit codes: 0 success, 1 runtime failure, 2 configuration or precondition failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pipeline
from .config import ConfigError, RunConfig, load_config
from .forward import CFLError, SourcePulse, TimeSteppingPlan, solve_forward
from .globconv import InversionData, Reconstruction, homogeneous_laplace, prepare_data
from .grid import FormatError, GridError, read_field, read_traces, write_field, write_traces
from .laplace import laplace_planes, write_pseudo
from .phantom import PhantomError
from .postprocess import stage_two, write_vtk
from .preprocess import calibration_factor
from .stopping import Selection

log = logging.getLogger("glowrecon")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class PreconditionError(RuntimeError):
    """A required artifact from an earlier command is missing."""


_CONFIG_ERRORS = (ConfigError, CFLError, GridError, PhantomError, PreconditionError, FormatError)


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _need(path: Path) -> Path:
    if not path.exists():
        raise PreconditionError(f"missing artifact {path}; run the earlier command first")
    return path


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "omega", None) is not None:
        cfg = replace(cfg, pulse=SourcePulse(args.omega))
    tau = getattr(args, "tau", None)
    T = getattr(args, "T", None)
    if tau is not None or T is not None:
        cfg = replace(cfg, plan=TimeSteppingPlan(tau or cfg.plan.tau, T or cfg.plan.T))
    pp = cfg.preprocess
    for flag, name in (("gate_start", "gate_start"), ("gate_len", "gate_len"), ("propagate_dist", "distance")):
        v = getattr(args, flag, None)
        if v is not None:
            pp = replace(pp, **{name: v})
    cfg = replace(cfg, preprocess=pp)
    cfg.validate()
    return cfg


# -- commands ----------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, args) -> dict:
    out = cfg.output
    out.mkdir(parents=True, exist_ok=True)
    sim = pipeline.simulate(cfg)
    for name, tr in sim.traces().items():
        write_traces(out / f"{name}.glwt", tr)
    write_field(out / "eps_true.glwr", sim.eps, {"label": cfg.label})
    for z in getattr(args, "record_plane", None) or []:
        tr = solve_forward(sim.eps, cfg.pulse, cfg.plan, (z,), lateral="full").traces[0]
        write_traces(out / f"plane_z{z:+.4f}.glwt", tr)
    scat = sim.total_gamma.values - sim.reference_gamma.values
    summary = {"label": cfg.label, "max_abs_scattered_gamma": float(np.abs(scat).max()),
               "data_h": cfg.data_grid().spacing[0], "steps": cfg.plan.steps}
    _dump_json(out / "simulate.json", summary)
    return summary


def _load_simulation(cfg: RunConfig):
    out = cfg.output
    names = ["total_meas", "reference_meas", "total_gamma", "reference_gamma"]
    tr = {n: read_traces(_need(out / f"{n}.glwt")) for n in names}
    cal = out / "calib_total_meas.glwt"
    eps = read_field(_need(out / "eps_true.glwr"))
    return pipeline.Simulation(eps.grid, eps, tr["total_meas"], tr["reference_meas"], tr["total_gamma"],
                               tr["reference_gamma"], read_traces(cal) if cal.exists() else None)


def cmd_preprocess(cfg: RunConfig, args) -> dict:
    out = cfg.output
    sim = _load_simulation(cfg)
    cm, cs = getattr(args, "calib_measured", None), getattr(args, "calib_sim", None)
    if (cm is None) != (cs is None):
        raise ConfigError("--calib-measured and --calib-sim go together")
    prep = pipeline.preprocess(cfg, sim)
    if cm is not None:
        factor = calibration_factor(read_traces(_need(Path(cm))), read_traces(_need(Path(cs))))
        scattered = prep.scattered.with_values(factor * prep.scattered.values)
        incident = prep.g.values - prep.scattered.values
        prep = pipeline.Prepared(prep.g.with_values(incident + scattered.values), scattered,
                                 {**prep.log, "factor": factor, "calibration": "files"})
    write_traces(out / "g_gamma.glwt", prep.g)
    write_traces(out / "scattered_gamma.glwt", prep.scattered)
    s = cfg.ladder.values
    write_pseudo(out / "laplace_gamma.glws", laplace_planes(prep.g, s), s, prep.g)
    _dump_json(out / "preprocess.json", prep.log)
    return prep.log


def _reconstruction(cfg: RunConfig) -> Reconstruction:
    g = read_traces(_need(cfg.output / "g_gamma.glwt"))
    grid = cfg.inversion_grid()
    inv = cfg.inversion()
    data: InversionData = prepare_data(grid, g, inv, homogeneous_laplace(grid, inv))
    return Reconstruction(data, inv)


def _write_eps(cfg: RunConfig, recon: Reconstruction, eps_omega, stem: str, meta: dict) -> None:
    grid = recon.grid
    write_field(cfg.output / f"{stem}.glwr", recon.embed(eps_omega), meta)
    write_vtk(cfg.output / f"{stem}.vtk", eps_omega, grid.omega_origin, grid.spacing, "eps")


def cmd_invert(cfg: RunConfig, args) -> dict:
    out = cfg.output
    recon = _reconstruction(cfg)
    try:
        res = recon.run()
    except Exception as exc:
        dump = out / "invert_failure.json"
        _dump_json(dump, {"error": repr(exc), "traceback": traceback.format_exc()})
        raise RuntimeError(f"inversion failed ({exc}); state dump at {dump}") from exc
    report = {
        "run": {"label": cfg.label, "preset": cfg.preset, "true_eps": cfg.true_eps, "seed": cfg.seed,
                "data_h": cfg.data_h, "h": cfg.grid.h, "tail_at": cfg.tail_at},
        **res.report(),
    }
    _dump_json(out / "report.json", report)
    res.history.to_csv(out / "norms.csv")
    _write_eps(cfg, recon, res.eps, "eps_stage1", {"eps_comp": res.eps_comp})
    _dump_json(out / "timings.json", {"seconds": [r.seconds for r in res.records]})
    return {"eps_comp": res.eps_comp, "n_comp": res.n_comp, "class": res.selection.cls}


class _StageOne:
    """What stage two needs from a finished first stage."""

    def __init__(self, eps, schedule, selection):
        self.eps, self.schedule, self.selection = eps, schedule, selection


def cmd_postprocess(cfg: RunConfig, args) -> dict:
    out = cfg.output
    report = json.loads(_need(out / "report.json").read_text())
    recon = _reconstruction(cfg)
    eps1 = read_field(_need(out / "eps_stage1.glwr")).omega_values
    sel = report["selection"]
    selection = Selection(sel["index"], sel["eps_value"], sel["cls"], sel["rule"])
    res = stage_two(recon, _StageOne(eps1, report["schedule"], selection), cfg.stage_two)
    _write_eps(cfg, recon, res.eps, "eps_stage2", {})
    write_vtk(out / "image.vtk", res.image, recon.grid.omega_origin, recon.grid.spacing, "image")
    summary = res.report(recon.grid)
    _dump_json(out / "stage2.json", summary)
    return summary


COMMANDS = {
    "simulate": cmd_simulate,
    "preprocess": cmd_preprocess,
    "invert": cmd_invert,
    "postprocess": cmd_postprocess,
}


# -- report ------------------------------------------------------------------


def summarize(run_dirs) -> dict:
    """Per-target rows (true n, n_comp per preset, relative error, class) plus the average error."""
    by_label: dict = {}
    for d in run_dirs:
        path = Path(d) / "report.json"
        if not path.exists():
            raise PreconditionError(f"run directory {d} has no report.json")
        rep = json.loads(path.read_text())
        run = rep.get("run", {})
        label = run.get("label", Path(d).name)
        row = by_label.setdefault(label, {"target": label, "true_eps": run.get("true_eps"), "n_comp": {},
                                          "class": {}})
        key = run.get("preset", "custom")
        if run.get("data_h"):
            key = f"{key}@data_h={run['data_h']:g}"
        row["n_comp"][key] = rep["n_comp"]
        row["class"][key] = rep["class"]
    rows = []
    errs = []
    for label in sorted(by_label):
        row = by_label[label]
        te = row.pop("true_eps")
        row["true_n"] = math.sqrt(te) if te else None
        if row["true_n"]:
            row["rel_error"] = {k: abs(v - row["true_n"]) / row["true_n"] for k, v in row["n_comp"].items()}
            errs.extend(row["rel_error"].values())
        else:
            row["rel_error"] = {}
        rows.append(row)
    return {"rows": rows, "average_error": float(np.mean(errs)) if errs else None}


def format_table(summary: dict) -> str:
    rows = summary["rows"]
    presets = sorted({k for r in rows for k in r["n_comp"]})
    head = ["target", "true n"] + [f"n_comp {p}" for p in presets] + ["rel error", "class"]
    lines = [" | ".join(head)]
    for r in rows:
        errs = list(r["rel_error"].values())
        cells = [r["target"], f"{r['true_n']:.3f}" if r["true_n"] else "-"]
        cells += [f"{r['n_comp'][p]:.3f}" if p in r["n_comp"] else "-" for p in presets]
        cells.append(f"{100 * np.mean(errs):.1f}%" if errs else "-")
        cells.append("/".join(sorted(set(r["class"].values()))))
        lines.append(" | ".join(cells))
    avg = summary["average_error"]
    lines.append("average error | " + (f"{100 * avg:.1f}%" if avg is not None else "-"))
    return "\n".join(lines)


def cmd_report(args) -> int:
    dirs = list(args.runs or [])
    out = None
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(str(exc)) from exc
        dirs += [str(path.parent / r) for r in d.get("runs", [])]
        if d.get("output"):
            out = path.parent / d["output"]
    summary = summarize(dirs)
    text = format_table(summary)
    print(text)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _dump_json(out / "summary.json", summary)
        (out / "summary.txt").write_text(text + "\n")
        with (out / "summary.csv").open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["target", "preset", "true_n", "n_comp", "rel_error", "class"])
            for r in summary["rows"]:
                for p, v in sorted(r["n_comp"].items()):
                    wr.writerow([r["target"], p, r["true_n"], v, r["rel_error"].get(p), r["class"][p]])
    return EXIT_OK


# -- driver ------------------------------------------------------------------


def _run_one(command: str, config_path: str, args) -> dict:
    cfg = _apply_overrides(load_config(config_path), args)
    return COMMANDS[command](cfg, args)


def _batch(path: Path) -> list[str] | None:
    try:
        d = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError):
        return None
    if isinstance(d, dict) and "batch" in d:
        return [str(path.parent / p) for p in d["batch"]]
    return None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glowrecon", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--seed", type=int)
    s = sub.add_parser("simulate", parents=[common])
    s.add_argument("--omega", type=float)
    s.add_argument("--tau", type=float)
    s.add_argument("--T", type=float)
    s.add_argument("--record-plane", type=float, action="append")
    s = sub.add_parser("preprocess", parents=[common])
    s.add_argument("--gate-start", type=float)
    s.add_argument("--gate-len", type=float)
    s.add_argument("--propagate-dist", type=float)
    s.add_argument("--calib-measured")
    s.add_argument("--calib-sim")
    sub.add_parser("invert", parents=[common])
    sub.add_parser("postprocess", parents=[common])
    r = sub.add_parser("report")
    r.add_argument("runs", nargs="*")
    r.add_argument("--config")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--seed", type=int)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args)
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        members = _batch(path)
        if members is None:
            result = _run_one(args.command, str(path), args)
            print(json.dumps(result, sort_keys=True))
            return EXIT_OK
        if args.jobs == 1:
            results = [_run_one(args.command, m, args) for m in members]
        else:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                futures = [pool.submit(_run_one, args.command, m, args) for m in members]
                results = [f.result() for f in futures]
        for m, r in zip(members, results):
            print(json.dumps({"config": m, **r}, sort_keys=True))
        return EXIT_OK
    except _CONFIG_ERRORS as exc:
        print(f"glowrecon: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"glowrecon: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
