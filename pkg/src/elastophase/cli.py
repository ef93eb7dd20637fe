"""Command-line front end.

Exit status: 0 success, 1 validation error (config, input files,
infeasible initial state), 2 numerical failure (non-finite energies,
inverted cells, failed invariant checks).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from contextlib import contextmanager

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    DEFAULTS,
    build_boundary,
    build_grid,
    build_minimize,
    build_phase_system,
    build_scenario,
    build_stored_energy,
    load_config,
    resolve_config,
)
from .energy import diffuse_report, sharp_report
from .fields import DeformationField, det_cof, gradient, initial_deformation
from .io import ContainerError, content_hash, dump_json, read_field, write_field, write_rows_csv
from .mm1d import SWEEP_COLUMNS, gamma_sweep, optimal_profile, sharp_projection
from .optimize import HISTORY_COLUMNS, InfeasibleStateError, initial_phase, minimize_eps
from .phases import check_triangle, phase_distance_matrix

log = logging.getLogger("elastophase")

THREADS_ENV = "ELASTOPHASE_THREADS"
OUTPUT_VERSION = 1


class NumericalFailure(RuntimeError):
    def __init__(self, stage, detail):
        super().__init__(f"numerical failure in {stage}: {detail}")
        self.stage = stage


class ValidationError(ValueError):
    pass


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON experiment config (defaults if omitted)")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides output.directory)")
    common.add_argument("--seed", type=int, default=0, help="seed for initialization noise")
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: ${THREADS_ENV} or 1)")
    common.add_argument("--quiet", action="store_true", help="only report errors")

    p = argparse.ArgumentParser(prog="elastophase", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("distance", parents=[common], help="well distance matrix and triangle report")
    sub.add_parser("profile", parents=[common], help="1-D optimal profiles over sweep.epsilons")
    e = sub.add_parser("energy", parents=[common], help="evaluate F_eps or F_0 for state files")
    e.add_argument("--deformation", metavar="FILE", help="node deformation container (2 components)")
    e.add_argument("--phase", metavar="FILE", help="node phase-field container (h components)")
    mode = e.add_mutually_exclusive_group()
    mode.add_argument("--epsilon", type=float, help="diffuse energy at this epsilon")
    mode.add_argument("--sharp", action="store_true", help="sharp energy of the projected partition")
    sub.add_parser("minimize", parents=[common], help="one minimization run")
    sub.add_parser("gamma-sweep", parents=[common], help="epsilon sweep with recovery sequences")
    sub.add_parser("verify", parents=[common], help="run every invariant suite")
    return p


def _threads(args):
    if args.threads is not None:
        if args.threads < 1:
            raise ValidationError("--threads must be positive")
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValidationError(f"${THREADS_ENV} must be an integer, got {env!r}") from None
        if n < 1:
            raise ValidationError(f"${THREADS_ENV} must be positive")
        return n
    return 1


class Run:
    """Resolved config plus provenance shared by every output file."""

    def __init__(self, args):
        self.args = args
        if args.config:
            self.cfg = load_config(args.config)
        else:
            self.cfg = resolve_config(json.loads(json.dumps(DEFAULTS)), "<defaults>")
        self.seed = args.seed
        self.threads = _threads(args)
        self.out = args.out or self.cfg["output"]["directory"]
        self.formats = set(self.cfg["output"]["formats"])
        self.input_files = []

    def hash(self):
        chunks = [self.cfg, {"seed": self.seed, "command": self.args.command}]
        for path in self.input_files:
            with open(path, "rb") as fh:
                chunks.append(fh.read())
        return content_hash(*chunks)

    def provenance(self):
        return {"format_version": OUTPUT_VERSION, "package_version": __version__,
                "command": self.args.command, "seed": self.seed,
                "config": self.cfg, "input_hash": self.hash()}

    def header_lines(self):
        prov = self.provenance()
        return [f"format_version={OUTPUT_VERSION}", f"command={prov['command']}",
                f"seed={self.seed}", f"input_hash={prov['input_hash']}",
                "config=" + json.dumps(self.cfg, sort_keys=True, separators=(",", ":"))]

    def path(self, name):
        os.makedirs(self.out, exist_ok=True)
        return os.path.join(self.out, name)

    def write_json(self, name, payload):
        if "json" in self.formats:
            dump_json(self.path(name), {**self.provenance(), **payload})

    def write_csv(self, name, columns, rows):
        if "csv" in self.formats:
            write_rows_csv(self.path(name), columns, rows, self.header_lines())


def _finite(stage, *values):
    for v in values:
        arr = np.asarray(v, dtype=float)
        if np.any(np.isnan(arr)):
            raise NumericalFailure(stage, "NaN in assembled quantity")


def cmd_distance(run: Run):
    sys_ = build_phase_system(run.cfg)
    d = phase_distance_matrix(sys_, workers=run.threads)
    _finite("distance matrix", d)
    bad = check_triangle(d, 1e-6)
    if "csv" in run.formats:
        from .phases import write_distance_csv

        write_distance_csv(run.path("distance.csv"), d, run.header_lines())
    run.write_json("distance.json", {"distance_matrix": d.tolist(),
                                     "triangle_violations": [list(t) for t in bad]})
    log.info("distance matrix:\n%s", np.array2string(d, precision=9))
    log.info("triangle violations: %s", bad or "none")
    return 0 if not bad else 2


def cmd_profile(run: Run):
    sys_ = build_phase_system(run.cfg)
    d = sys_.distance_matrix
    L = run.cfg["sweep"].get("profile_half_width")
    rows = []
    for a in range(sys_.m):
        for b in range(a + 1, sys_.m):
            for eps in run.cfg["sweep"]["epsilons"]:
                p = optimal_profile(sys_, a, b, eps, None if L is None else max(L, 10 * eps))
                _finite("profile", p.energy)
                rows.append({"alpha": a + 1, "beta": b + 1, "epsilon": eps, "L": p.L,
                             "energy": p.energy, "gradient_part": p.gradient_energy,
                             "potential_part": p.potential_energy,
                             "equipartition_ratio": p.equipartition_ratio, "d_ab": d[a, b]})
                log.info("pair (%d,%d) eps=%g energy=%.9g d=%.9g", a + 1, b + 1, eps, p.energy, d[a, b])
    cols = ["alpha", "beta", "epsilon", "L", "energy", "gradient_part", "potential_part",
            "equipartition_ratio", "d_ab"]
    run.write_csv("profiles.csv", cols, rows)
    run.write_json("profiles.json", {"profiles": rows})
    return 0


def _load_state(run: Run, args, grid, sys_):
    if args.deformation:
        run.input_files.append(args.deformation)
        g, y = read_field(args.deformation)
        if g != grid or y.shape[-1] != 2:
            raise ValidationError(f"{args.deformation}: grid or component count does not match config")
        defo = DeformationField(grid, y, np.zeros(grid.node_shape, bool), y.copy())
    else:
        defo = initial_deformation(grid, build_boundary(run.cfg))
    if args.phase:
        run.input_files.append(args.phase)
        g, z = read_field(args.phase)
        if g != grid or z.shape[-1] != sys_.h:
            raise ValidationError(f"{args.phase}: grid or component count does not match config")
    else:
        z = np.broadcast_to(sys_.wells[0], grid.node_shape + (sys_.h,)).copy()
    return defo, z


def cmd_energy(run: Run):
    args = run.args
    sys_ = build_phase_system(run.cfg)
    spec = build_stored_energy(run.cfg)
    grid = build_grid(run.cfg)
    defo, z = _load_state(run, args, grid, sys_)
    det = det_cof(gradient(defo))[0]
    if np.any(det <= 0):
        bad = [list(map(int, i)) for i in np.argwhere(det <= 0)]
        run.write_json("energy.json", {"total": "+infinity", "branch": "+infinity (det <= 0)",
                                       "inverted_cells": bad})
        raise NumericalFailure("energy", f"cell {tuple(bad[0])} has det <= 0: "
                                         "energy takes the +infinity branch")
    if args.sharp:
        part = sharp_projection(sys_, grid, z)
        rep = sharp_report(defo, part, spec, sys_)
    else:
        eps = args.epsilon if args.epsilon is not None else run.cfg["minimize"]["epsilon"]
        rep = diffuse_report(defo, z, eps, spec, sys_)
    _finite("energy", rep.bulk, rep.interface, rep.total)
    run.write_json("energy.json", rep.to_dict())
    log.info("bulk=%.12g interface=%.12g total=%.12g", rep.bulk, rep.interface, rep.total)
    return 0


def _check_radius(sys_):
    r0 = sys_.excursion_radius()
    if sys_.R <= r0:
        log.warning("R=%g does not exceed the geodesic excursion radius %.6g; "
                    "the box constraint may cut the optimal transitions", sys_.R, r0)


def cmd_minimize(run: Run):
    cfg = run.cfg
    sys_ = build_phase_system(cfg)
    _check_radius(sys_)
    spec = build_stored_energy(cfg)
    grid = build_grid(cfg)
    mcfg = build_minimize(cfg, run.seed)
    init = initial_deformation(grid, build_boundary(cfg))
    m = cfg["minimize"]
    values = None
    if m.get("init_pattern") == "file":
        if "init_file" not in m:
            raise ValidationError("minimize/init_file is required for init_pattern 'file'")
        run.input_files.append(m["init_file"])
        _, values = read_field(m["init_file"])
    z0 = initial_phase(grid, sys_, m.get("init_pattern", "stripes"), run.seed,
                       m.get("noise", 0.05), values=values)
    ckpt = run.path("checkpoints") if mcfg.checkpoint_every else None
    with _timed() as timer:
        st = minimize_eps(mcfg, sys_, spec, init, z0, checkpoint_dir=ckpt)
    _finite("minimize", [r["objective"] for r in st.history])
    run.write_csv("history.csv", HISTORY_COLUMNS, st.history)
    write_field(run.path("deformation.bin"), grid, st.defo.values)
    write_field(run.path("phase.bin"), grid, st.z)
    rep = diffuse_report(st.defo, st.z, mcfg.epsilon, spec, sys_)
    run.write_json("minimize.json", {"termination": st.termination, "iterations": len(st.history) - 1,
                                     "final": rep.to_dict(),
                                     "state_files": ["deformation.bin", "phase.bin"]})
    dump_json(run.path("timing.json"), {"wall_time_s": timer.elapsed})
    log.info("termination=%s iterations=%d total=%.12g", st.termination, len(st.history) - 1, rep.total)
    return 0


def cmd_gamma_sweep(run: Run):
    cfg = run.cfg
    scenario = build_scenario(cfg)
    _check_radius(scenario.sys)
    mcfg = build_minimize(cfg, run.seed)
    sw = cfg["sweep"]
    eps_list = sorted(sw["epsilons"], reverse=True)
    rows = gamma_sweep(scenario, eps_list, mcfg, sw["restarts"], sw.get("track_liminf", False), run.seed)
    timings = [{"epsilon": r["epsilon"], "wall_time_s": r.pop("wall_time_s")} for r in rows]
    cols = [c for c in SWEEP_COLUMNS if c != "wall_time_s"]
    run.write_csv("sweep.csv", cols, rows)
    run.write_json("sweep.json", {"rows": rows})
    dump_json(run.path("timing.json"), {"rows": timings})
    failed = [r for r in rows if r["status"] != "ok"]
    for r in rows:
        log.info("eps=%g F_eps_min=%.9g F_eps_recovery=%.9g F0=%.9g %s", r["epsilon"],
                 r["F_eps_min"], r["F_eps_recovery"], r["F0_sharp"], r["status"])
    _finite("gamma sweep", [r["F_eps_recovery"] for r in rows if r["status"] == "ok"])
    return 2 if failed else 0


def cmd_verify(run: Run):
    from .verify import run_all

    sys_ = build_phase_system(run.cfg)
    spec = build_stored_energy(run.cfg)
    checks = run_all(sys_, spec, run.seed)
    run.write_json("verify.json", {"checks": [c.to_dict() for c in checks]})
    run.write_csv("verify.csv", ["module", "name", "value", "tol", "passed"],
                  [c.to_dict() for c in checks])
    for c in checks:
        log.info("%s %-14s %-45s value=%.3e tol=%.3e", "PASS" if c.passed else "FAIL",
                 c.module, c.name, c.value, c.tol)
    return 0 if all(c.passed for c in checks) else 2


COMMANDS = {
    "distance": cmd_distance,
    "profile": cmd_profile,
    "energy": cmd_energy,
    "minimize": cmd_minimize,
    "gamma-sweep": cmd_gamma_sweep,
    "verify": cmd_verify,
}


@contextmanager
def _timed():
    class T:
        elapsed = 0.0

    t0 = time.perf_counter()
    yield T
    T.elapsed = time.perf_counter() - t0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        run = Run(args)
        with np.errstate(invalid="ignore"):
            return COMMANDS[args.command](run)
    except (ConfigError, ContainerError, ValidationError, InfeasibleStateError) as exc:
        log.error("error: %s", exc)
        return 1
    except NumericalFailure as exc:
        log.error("error: %s", exc)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
