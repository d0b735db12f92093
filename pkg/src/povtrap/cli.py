"""``povtrap`` command-line entry point.

Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from . import export
from .basins import basin_fractions, map_basins
from .config import COMMANDS, RunConfig, parse_config
from .equilibria import AttractorSet, find_equilibria
from .errors import ConfigurationError, DomainError, NoBracketError, SolverFailure, UnresolvedBasinsError
from .integrator import FAILURE, integrate
from .interventions import enumerate_plans, run_plan
from .render import render_state_space

log = logging.getLogger("povtrap")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get("POVTRAP_THREADS")
    return int(env) if env else 1


def _simulate(cfg: RunConfig, out: Path, threads: int) -> dict:
    traj = integrate(cfg.scenario, cfg.initial_state, cfg.solver)
    export.write_trajectory(traj, out / "trajectory.csv")
    summary = {"status": traj.status, "message": traj.message, "t_end": float(traj.times[-1]),
               "final_state": dict(zip(traj.active, traj.final_state.tolist())), "samples": len(traj)}
    export.write_json(summary, out / "summary.json")
    if traj.status == FAILURE:
        raise SolverFailure(traj.message)
    return summary


def _equilibria(cfg: RunConfig, out: Path, threads: int) -> dict:
    report = {}
    eqs = find_equilibria(cfg.scenario, cfg.box, cfg.seeds_per_axis, cfg.solver, report=report)
    doc = export.equilibria_doc(eqs, cfg.scenario)
    export.write_json(doc, out / "equilibria.json")
    attractors = AttractorSet(eqs)
    export.write_json([a.to_dict(cfg.scenario.active_coords) for a in attractors], out / "attractors.json")
    return {"equilibria": len(eqs), "attractors": len(attractors), **report}


def _basins(cfg: RunConfig, out: Path, threads: int) -> dict:
    eqs = find_equilibria(cfg.scenario, cfg.box, cfg.seeds_per_axis, cfg.solver)
    attractors = AttractorSet(eqs)
    grid = map_basins(cfg.scenario, attractors, cfg.box, cfg.resolution, cfg.solver, cfg.match_radius,
                      workers=threads)
    export.write_grid_csv(grid, out / "basins.csv")
    export.write_grid_rle(grid, out / "basins.rle")
    fr = {str(k): v for k, v in basin_fractions(grid).items()}
    export.write_json({"fractions": fr, "boundary_fraction": grid.boundary_fraction(),
                       "unresolved": grid.n_unresolved}, out / "fractions.json")
    style = cfg.render
    (out / "basins.svg").write_text(render_state_space(grid, style.slice_axis, style.slice_count, style.cell_px))
    return {"attractors": len(attractors), "fractions": fr}


def _plan(cfg: RunConfig, out: Path, threads: int) -> dict:
    report = run_plan(cfg.plan, cfg.solver, cfg.escape_margin)
    export.write_json(report.to_dict(), out / "report.json")
    for i, seg in enumerate(report.segments):
        export.write_trajectory(seg, out / f"segment_{i:02d}.csv")
    return {"escaped": report.escaped}


def _enumerate(cfg: RunConfig, out: Path, threads: int) -> dict:
    ranked = enumerate_plans(cfg.scenario, cfg.initial_state, cfg.menu, cfg.max_events, cfg.horizon,
                             cfg.spacing, cfg.solver, cfg.escape_margin, workers=threads)
    doc = [{"rank": i, "plan": r.plan.to_dict() if r.plan else None,
            "report": r.report.to_dict() if r.report else None, "error": r.error}
           for i, r in enumerate(ranked)]
    export.write_json(doc, out / "plans.json")
    return {"plans": len(ranked), "escaping": sum(1 for r in ranked if r.report and r.report.escaped)}


def _render(cfg: RunConfig, out: Path, threads: int) -> dict:
    grid = export.read_grid_rle(cfg.grid_file)
    style = cfg.render
    svg = render_state_space(grid, style.slice_axis, style.slice_count, style.cell_px)
    (out / "basins.svg").write_text(svg)
    return {"svg_bytes": len(svg.encode())}


_HANDLERS = {"simulate": _simulate, "equilibria": _equilibria, "basins": _basins, "plan": _plan,
             "enumerate": _enumerate, "render": _render}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="povtrap", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON config path, or - for stdin")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p.add_argument("--threads", type=int, default=None, help="worker processes (env POVTRAP_THREADS)")
    p.add_argument("--seed", type=int, default=0, help="recorded in the manifest; no stochastic features yet")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    start = time.perf_counter()
    try:
        cfg = parse_config(args.config, args.command)
    except (ConfigurationError, DomainError) as exc:
        print(f"povtrap: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"povtrap: cannot read config {args.config}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO

    out = Path(args.out)
    threads = _threads(args.threads)
    code, summary = EXIT_OK, {}
    try:
        out.mkdir(parents=True, exist_ok=True)
        summary = _HANDLERS[cfg.command](cfg, out, threads)
    except (ConfigurationError, DomainError, NoBracketError) as exc:
        print(f"povtrap: {exc}", file=sys.stderr)
        code = EXIT_VALIDATION
    except (SolverFailure, UnresolvedBasinsError, RuntimeError) as exc:
        print(f"povtrap: numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERICAL
    except OSError as exc:
        print(f"povtrap: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        export.write_manifest(out, cfg.to_dict(), time.perf_counter() - start,
                              {"threads": threads, "seed": args.seed, "exit_code": code, "summary": summary})
    except OSError as exc:
        print(f"povtrap: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    log.info("%s done: %s", cfg.command, summary)
    return code


if __name__ == "__main__":
    sys.exit(main())
