"""Command-line entry point: run simulations, audit energies, export presets.

Subcommands
-----------
run          execute a load program (preset or config file), writing
             load_disp.csv, energy.csv, run.json and per-step VTK snapshots
check-energy recompute the energy audit from the snapshots of a finished
             (or partial) run and compare against energy.csv
export       print a preset as a forkable INI config

Configs are flat INI sections ([run], [material], [program], [solver],
[backtrack], [reaction], [output]); any value can be overridden on the
command line with ``--set section.key=value``.  Moduli are given in kN/mm^2
in configs and converted once on load.  Exit codes: 0 ok, 1 audit mismatch,
2 bad config/missing inputs, 3 solver failure (partial outputs retained).
"""

from __future__ import annotations

import argparse
import configparser
import io
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import presets
from .driver import BacktrackConfig, DirichletSpec, LoadProgram, RunHistory, lifting_for_step, run
from .energetics import check_two_sided, dis, erg, grad_term
from .fem import build_kernels
from .material import MaterialParams
from .mesh import parse_gmsh
from .solver import SolverConfig
from .vtkio import read_field_snapshot, write_field_snapshot

__all__ = ["main", "cmd_run", "cmd_check_energy", "config_from_setup", "setup_from_config"]

_COMP = {"x": 0, "y": 1, "z": 2, "0": 0, "1": 1, "2": 2}
_COMP_NAME = "xyz"


def _fmt(x: float) -> str:
    return "%.17g" % x


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------

def config_from_setup(setup: presets.RunSetup) -> dict:
    """Serialize a run setup to the INI-shaped nested dict."""
    p = setup.params
    mat = {
        "lam_kn": _fmt(p.lam / 1e3),
        "mu_kn": _fmt(p.mu / 1e3),
        "gc": _fmt(p.gc),
        "ell": _fmt(p.ell),
        "k": _fmt(p.k),
        "dissipation": p.dissipation,
        "eps_pen": _fmt(p.eps_pen),
    }
    if p.kappa is not None:
        mat["kappa"] = _fmt(p.kappa)
    bc_str = "; ".join(
        f"{bc.node_set}:{_COMP_NAME[bc.component]}:{_fmt(bc.scale)}" for bc in setup.program.bcs
    )
    return {
        "run": {"preset": setup.name, "scale": _fmt(setup.scale)},
        "material": mat,
        "program": {
            "n_steps": str(setup.program.n_steps),
            "dw": _fmt(setup.program.dw),
            "bc": bc_str,
        },
        "solver": {
            "tol_u": _fmt(setup.solver.tol_u),
            "tol_a": _fmt(setup.solver.tol_a),
            "max_newton": str(setup.solver.max_newton),
            "max_alt": str(setup.solver.max_alt),
            "clamp_damage": str(setup.solver.clamp_damage).lower(),
        },
        "backtrack": {
            "k_back": str(setup.backtrack.k_max),
            "eta": _fmt(setup.backtrack.eta),
        },
        "reaction": {
            "set": setup.reaction_set,
            "direction": " ".join(_fmt(c) for c in setup.reaction_dir),
        },
        "output": {"snapshot_every": "1", "save_intermediates": "false"},
    }


def _parse_bcs(spec: str):
    bcs = []
    for chunk in spec.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) != 3 or parts[1].strip().lower() not in _COMP:
            raise ValueError(f"bad bc spec {chunk!r} (want set:comp:scale)")
        bcs.append(
            DirichletSpec(parts[0].strip(), _COMP[parts[1].strip().lower()], float(parts[2]))
        )
    return tuple(bcs)


def setup_from_config(cfg: dict) -> presets.RunSetup:
    """Materialize mesh, material and schedules from a config dict."""
    run_sec = cfg.get("run", {})
    preset = run_sec.get("preset", "").strip()
    mesh_path = run_sec.get("mesh", "").strip()
    if bool(preset) == bool(mesh_path):
        raise ValueError("config needs exactly one of run.preset / run.mesh")

    scale = float(run_sec.get("scale", "1.0"))
    if preset:
        setup = presets.load_preset(preset, scale)
        mesh = setup.mesh
    else:
        mesh = parse_gmsh(Path(mesh_path).read_text())
        setup = None

    mat_sec = cfg.get("material", {})
    if setup is not None and not mat_sec:
        params = setup.params
    else:
        kw = {
            "gc": float(mat_sec["gc"]),
            "ell": float(mat_sec["ell"]),
            "k": float(mat_sec.get("k", "1e-4")),
            "dissipation": mat_sec.get("dissipation", "AT2").strip(),
            "eps_pen": float(mat_sec.get("eps_pen", "1e-6")),
        }
        if mat_sec.get("kappa", "").strip():
            kw["kappa"] = float(mat_sec["kappa"])
        if "e_kn" in mat_sec:
            params = MaterialParams.from_young_poisson_kn(
                float(mat_sec["e_kn"]), float(mat_sec["nu"]), **kw
            )
        else:
            params = MaterialParams.from_lame_kn(
                float(mat_sec["lam_kn"]), float(mat_sec["mu_kn"]), **kw
            )

    prog_sec = cfg.get("program", {})
    if setup is not None and not prog_sec:
        program = setup.program
    else:
        base_bcs = setup.program.bcs if setup is not None else ()
        program = LoadProgram(
            n_steps=int(prog_sec.get("n_steps", setup.program.n_steps if setup else 0)),
            dw=float(prog_sec.get("dw", setup.program.dw if setup else 0.0)),
            bcs=_parse_bcs(prog_sec["bc"]) if "bc" in prog_sec else base_bcs,
        )

    sol_sec = cfg.get("solver", {})
    solver = SolverConfig(
        tol_u=float(sol_sec.get("tol_u", "1e-5")),
        tol_a=float(sol_sec.get("tol_a", "1e-5")),
        max_newton=int(sol_sec.get("max_newton", "100")),
        max_alt=int(sol_sec.get("max_alt", "1000")),
        clamp_damage=sol_sec.get("clamp_damage", "true").strip().lower() != "false",
    )
    bt_sec = cfg.get("backtrack", {})
    backtrack = BacktrackConfig(
        k_max=int(bt_sec.get("k_back", "50")), eta=float(bt_sec.get("eta", "1e-5"))
    )

    rx_sec = cfg.get("reaction", {})
    rx_set = rx_sec.get("set", setup.reaction_set if setup else "")
    if "direction" in rx_sec:
        rx_dir = np.array([float(v) for v in rx_sec["direction"].replace(",", " ").split()])
    elif setup is not None:
        rx_dir = setup.reaction_dir
    else:
        rx_dir = np.zeros(mesh.dim)

    return presets.RunSetup(
        name=preset or Path(mesh_path).stem,
        scale=scale,
        mesh=mesh,
        params=params,
        program=program,
        solver=solver,
        backtrack=backtrack,
        reaction_set=rx_set,
        reaction_dir=rx_dir,
    )


def _read_config_file(path) -> dict:
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ValueError(f"cannot parse config {path}: {exc}") from exc
    return {s: dict(parser.items(s)) for s in parser.sections()}


def _apply_overrides(cfg: dict, overrides) -> dict:
    for item in overrides or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ValueError(f"bad --set {item!r} (want section.key=value)")
        key, value = item.split("=", 1)
        section, name = key.split(".", 1)
        cfg.setdefault(section.strip(), {})[name.strip()] = value.strip()
    return cfg


def _config_to_ini(cfg: dict) -> str:
    parser = configparser.ConfigParser()
    for section, values in cfg.items():
        parser[section] = {k: str(v) for k, v in values.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Output writers
# ---------------------------------------------------------------------------

class _RunWriter:
    """Rewrites the CSV outputs and snapshots after every accepted step
    (backtracking replaces already-accepted rows, so files are regenerated
    from the authoritative history each time)."""

    def __init__(self, out_dir: Path, mesh, program, snapshot_every: int):
        self.out = out_dir
        self.mesh = mesh
        self.program = program
        self.every = max(1, snapshot_every)
        (out_dir / "snapshots").mkdir(parents=True, exist_ok=True)

    def snapshot_path(self, step: int) -> Path:
        return self.out / "snapshots" / f"step_{step:06d}.vtk"

    def __call__(self, history: RunHistory) -> None:
        self.write_csvs(history)
        rec = history.steps[-1]
        if rec.step % self.every == 0 or rec.step == self.program.n_steps:
            u_d = lifting_for_step(self.program, rec.step, self.mesh)
            write_field_snapshot(rec.u + u_d, rec.a, self.mesh, self.snapshot_path(rec.step))

    def write_csvs(self, history: RunHistory) -> None:
        with open(self.out / "load_disp.csv", "w") as fh:
            fh.write("step,w,reaction\n")
            for rec in history.steps:
                fh.write(f"{rec.step},{_fmt(rec.w)},{_fmt(rec.reaction)}\n")
        with open(self.out / "energy.csv", "w") as fh:
            fh.write("step,E,sum_D,delta,LB,UB,passed\n")
            sum_d = 0.0
            for rec in history.steps:
                if rec.report is None:
                    fh.write(f"{rec.step},{_fmt(0.0)},{_fmt(0.0)},{_fmt(0.0)},{_fmt(0.0)},{_fmt(0.0)},1\n")
                    continue
                r = rec.report
                sum_d += r.d_inc
                fh.write(
                    f"{rec.step},{_fmt(r.e_next)},{_fmt(sum_d)},{_fmt(r.delta)},"
                    f"{_fmt(r.lb)},{_fmt(r.ub)},{int(r.passed)}\n"
                )

    def write_intermediates(self, history: RunHistory) -> None:
        with open(self.out / "intermediates.csv", "w") as fh:
            fh.write("target_step,w,b,passed,delta,LB,UB,reaction\n")
            for rec in history.intermediates:
                fh.write(
                    f"{rec.target_step},{_fmt(rec.w)},{rec.b},{int(rec.passed)},"
                    f"{_fmt(rec.delta)},{_fmt(rec.lb)},{_fmt(rec.ub)},{_fmt(rec.reaction)}\n"
                )


def _write_run_json(out_dir: Path, cfg: dict, history: RunHistory, elapsed: float) -> None:
    payload = {
        "config": cfg,
        "accepted_steps": history.n_accepted,
        "aborted": history.aborted,
        "abort_reason": history.abort_reason,
        "backtrack_events": [
            {"failed_step": e.failed_step, "resolved_step": e.resolved_step, "b": e.b}
            for e in history.backtracks
        ],
        "k_exhausted_steps": history.k_exhausted_steps,
        "irreversibility_steps": history.irreversibility_steps,
        "max_clamp": max((r.clamp_max for r in history.steps), default=0.0),
        "solver_counters": {
            "alternations": sum(r.alt_iters for r in history.steps),
            "newton_u": sum(r.newton_iters_u for r in history.steps),
            "newton_beta": sum(r.newton_iters_beta for r in history.steps),
        },
        "elapsed_s": elapsed,
    }
    with open(out_dir / "run.json", "w") as fh:
        json.dump(payload, fh, indent=2)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def run_to_dir(cfg: dict, out_dir) -> RunHistory:
    """Execute a config into an output directory, writing all run artifacts;
    returns the in-memory history (also used by the acceptance suite)."""
    setup = setup_from_config(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_sec = cfg.get("output", {})
    writer = _RunWriter(
        out_dir, setup.mesh, setup.program, int(out_sec.get("snapshot_every", "1"))
    )
    write_field_snapshot(
        np.zeros(setup.mesh.dim * setup.mesh.n_nodes),
        np.zeros(setup.mesh.n_nodes),
        setup.mesh,
        writer.snapshot_path(0),
    )

    t0 = time.perf_counter()
    history = run(
        setup.program,
        setup.backtrack,
        setup.solver,
        setup.params,
        setup.mesh,
        reaction=(setup.reaction_set, setup.reaction_dir) if setup.reaction_set else None,
        compat_box1=out_sec.get("compat_box1_lb", "false").lower() == "true",
        store_intermediate_fields=False,
        on_accept=writer,
    )
    elapsed = time.perf_counter() - t0

    writer.write_csvs(history)
    if out_sec.get("save_intermediates", "false").lower() == "true":
        writer.write_intermediates(history)
    _write_run_json(out_dir, cfg, history, elapsed)
    return history


def cmd_run(args) -> int:
    try:
        if args.config:
            cfg = _read_config_file(args.config)
        elif args.preset:
            cfg = config_from_setup(presets.load_preset(args.preset, args.scale))
            cfg["run"]["scale"] = _fmt(args.scale)
        else:
            raise ValueError("need --preset or --config")
        if args.k_back is not None:
            cfg.setdefault("backtrack", {})["k_back"] = str(args.k_back)
        if args.eta is not None:
            cfg.setdefault("backtrack", {})["eta"] = _fmt(args.eta)
        if args.steps is not None:
            cfg.setdefault("program", {})["n_steps"] = str(args.steps)
        if args.save_intermediates:
            cfg.setdefault("output", {})["save_intermediates"] = "true"
        if args.compat_box1_lb:
            cfg.setdefault("output", {})["compat_box1_lb"] = "true"
        _apply_overrides(cfg, args.set)
        history = run_to_dir(cfg, args.out)
    except (ValueError, KeyError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    if history.aborted:
        print(f"solver failure after {history.n_accepted} steps: {history.abort_reason}", file=sys.stderr)
        return 3
    print(
        f"{history.n_accepted} steps, "
        f"{len(history.backtracks)} back steps, "
        f"{len(history.k_exhausted_steps)} steps with failed energy bounds "
        f"-> {args.out}"
    )
    return 0


def _rel_close(a: float, b: float, rtol: float = 1e-10) -> bool:
    return abs(a - b) <= rtol * (1.0 + max(abs(a), abs(b)))


def cmd_check_energy(args) -> int:
    out_dir = Path(args.dir)
    try:
        with open(out_dir / "run.json") as fh:
            cfg = json.load(fh)["config"]
        setup = setup_from_config(cfg)
        rows = (out_dir / "energy.csv").read_text().strip().splitlines()[1:]
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"cannot load run outputs: {exc}", file=sys.stderr)
        return 2

    mesh = setup.mesh
    kernels = build_kernels(mesh)
    p = setup.params
    compat = cfg.get("output", {}).get("compat_box1_lb", "false") == "true"
    eta = setup.backtrack.eta

    failing = []
    mismatches = []
    prev = None  # (u, a) of the previous step
    sum_d = 0.0
    for row in rows:
        parts = row.split(",")
        step = int(parts[0])
        e_csv, sumd_csv, delta_csv, lb_csv, ub_csv = (float(v) for v in parts[1:6])
        passed_csv = parts[6].strip() == "1"

        snap = out_dir / "snapshots" / f"step_{step:06d}.vtk"
        if not snap.exists():
            print(f"missing snapshot {snap}", file=sys.stderr)
            return 2
        disp, a = read_field_snapshot(snap, mesh.dim)
        u_d = lifting_for_step(setup.program, step, mesh)
        u = disp - u_d

        if step == 0:
            prev = (u, a)
            continue
        if prev is None:
            print("energy.csv does not start at step 0", file=sys.stderr)
            return 2

        u_d_prev = lifting_for_step(setup.program, step - 1, mesh)
        report = check_two_sided(
            step - 1, prev[0], u_d_prev, prev[1], u, u_d, a, kernels, p, eta, compat_box1=compat
        )
        sum_d += report.d_inc
        checks = [
            ("E", e_csv, report.e_next),
            ("sum_D", sumd_csv, sum_d),
            ("delta", delta_csv, report.delta),
            ("LB", lb_csv, report.lb),
            ("UB", ub_csv, report.ub),
        ]
        for name, got, want in checks:
            if not _rel_close(got, want):
                mismatches.append(f"step {step}: {name} csv={got!r} recomputed={want!r}")
        if passed_csv != report.passed:
            mismatches.append(f"step {step}: passed flag csv={passed_csv} recomputed={report.passed}")
        if not report.passed:
            failing.append(step)
        prev = (u, a)

    if mismatches:
        for line in mismatches:
            print(line, file=sys.stderr)
        return 1
    if failing:
        print("two-sided inequality fails at steps: " + ", ".join(map(str, failing)), file=sys.stderr)
        return 1
    print(f"energy audit ok ({len(rows) - 1} steps)")
    return 0


def cmd_export(args) -> int:
    try:
        cfg = config_from_setup(presets.load_preset(args.preset, args.scale))
    except (KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(_config_to_ini(cfg))
    return 0


def _limit_threads() -> None:
    n = os.environ.get("PF_THREADS")
    if not n:
        return
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(int(n))
    except (ImportError, ValueError):
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pffrac", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a load program")
    p_run.add_argument("--preset", choices=presets.PRESET_NAMES)
    p_run.add_argument("--scale", type=float, default=1.0)
    p_run.add_argument("--config", help="INI config file (alternative to --preset)")
    p_run.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p_run.add_argument("--k-back", type=int, default=None, help="back-step budget K")
    p_run.add_argument("--eta", type=float, default=None, help="energy tolerance")
    p_run.add_argument("--steps", type=int, default=None, help="override n_steps")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--save-intermediates", action="store_true")
    p_run.add_argument("--compat-box1-lb", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_chk = sub.add_parser("check-energy", help="audit a run directory")
    p_chk.add_argument("dir")
    p_chk.set_defaults(func=cmd_check_energy)

    p_exp = sub.add_parser("export", help="print a preset as INI")
    p_exp.add_argument("--preset", required=True, choices=presets.PRESET_NAMES)
    p_exp.add_argument("--scale", type=float, default=1.0)
    p_exp.set_defaults(func=cmd_export)

    args = parser.parse_args(argv)
    _limit_threads()
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
