"""Command-line entry point.

Exit status: 0 when every check passes, 1 on a failed certificate or
verification, 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import carleman as cm
from . import frequency as fq
from . import heat
from . import interpolation as ip
from . import io
from . import observation as ob
from .config import ConfigError, ExperimentConfig, load_config
from .mesh import build_mesh
from .morse import MorseError, build_weight_family, make_region, verify_weight_bounds

log = logging.getLogger("heatobs")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
OUT_ENV = "HEATOBS_OUT"
REPORT_FILES = ("report.json", "report.txt")


class UsageError(Exception):
    pass


class Context:
    """Resolved configuration, output directory and flags of one invocation."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = int(args.seed)
            cfg.rehashed()
        self.cfg: ExperimentConfig = cfg
        override = args.out or os.environ.get(OUT_ENV)
        self.out = cfg.output_dir(override)
        self.workers = max(1, int(args.workers))

    def emit(self, files, command: str) -> None:
        io.update_manifest(self.out, files, self.cfg.config_hash, command)


# ---------------------------------------------------------------------------
# shared builders


def _family(cfg: ExperimentConfig, mesh):
    omega = cfg.build_omega(mesh)
    w = cfg.weights
    family = build_weight_family(mesh, omega, w["targets"], w["r"], w["collar_width"])
    return omega, family


def _simulate(cfg: ExperimentConfig, mesh=None) -> heat.HeatSolution:
    mesh = mesh or cfg.build_mesh()
    s = cfg.solver
    return heat.solve(mesh, cfg.build_potential(), cfg.initial_values(mesh), s["T"], s["dt"], s["scheme"])


def _subsample(sol: heat.HeatSolution, every: int) -> heat.HeatSolution:
    idx = list(range(0, sol.times.size, every))
    if idx[-1] != sol.times.size - 1:
        idx.append(sol.times.size - 1)
    return heat.HeatSolution(sol.mesh, sol.times[idx], sol.fields[idx], sol.potential, sol.dt, sol.method)


def _stored_solution(ctx: Context, path: str | None) -> heat.HeatSolution:
    d = Path(path) if path else ctx.out / "solution"
    if not (d / "solution.json").exists():
        raise UsageError(f"no stored solution in {d} (run 'heatobs simulate' first)")
    return io.read_solution(d)


def _carleman_config(ctx: Context, sol: heat.HeatSolution):
    _, family = _family(ctx.cfg, sol.mesh)
    s = cm.calibrate_s(family, ctx.cfg.weights["safety"])
    return cm.CarlemanConfig(s, ctx.cfg.pipeline["carleman_h"], sol.T, family)


def _certify_options(cfg: ExperimentConfig) -> ob.CertifyOptions:
    p, w, s = cfg.pipeline, cfg.weights, cfg.solver
    return ob.CertifyOptions(
        C0=p["C0"], safety=w["safety"], targets=w["targets"], r=w["r"], collar_width=w["collar_width"],
        ell=p["ell"], h=p["h"], dt=s["dt"], grading=p["grading"], oversample=p["oversample"],
        max_nodes=p["max_nodes"], tol=p["tolerance"], c_tol=p["c_tol"], method=s["scheme"], seed=cfg.seed,
    )


def _say(ok: bool, text: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'}: {text}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_mesh(ctx: Context) -> int:
    mesh = ctx.cfg.build_mesh()
    files = io.write_mesh(ctx.out / "mesh", mesh)
    ctx.emit(files, "mesh")
    print(f"mesh: dimension {mesh.dimension}, {mesh.size} nodes, spacing {io.fmt(mesh.spacing)}")
    return EXIT_OK


def _family_payload(family, report) -> dict:
    return {
        "mesh": io.mesh_header(family.mesh),
        "recipe": family.recipe,
        "omega": family.omega.describe(),
        "r": family.r,
        "collar_width": family.collar_width,
        "peaks": family.peaks,
        "members": [
            {"critical_points": p.critical_points, "critical_values": p.critical_values,
             "signatures": p.hessian_signatures, "max_value": p.max_value}
            for p in family.psi
        ],
        "constants": report.as_dict(),
    }


def _family_columns(family) -> dict:
    cols = {"node": np.arange(family.mesh.size)}
    for j in range(family.mesh.dimension):
        cols["xy"[j]] = family.mesh.coords[:, j]
    for i in range(family.d):
        cols[f"phi1_{i}"] = family.phi1[i]
        cols[f"phi2_{i}"] = family.phi2[i]
        cols[f"B_{i}"] = family.B[i]
        cols[f"C_{i}"] = family.C[i]
        cols[f"D_{i}"] = family.D[i]
    cols["collar"] = family.collar
    return cols


def cmd_weights(ctx: Context) -> int:
    d = ctx.out / "weights"
    if ctx.args.action == "verify":
        return _weights_verify(ctx, Path(ctx.args.path) if ctx.args.path else d)
    mesh = ctx.cfg.build_mesh()
    _, family = _family(ctx.cfg, mesh)
    report = verify_weight_bounds(family)
    files = [io.write_json(d / "weights.json", _family_payload(family, report)),
             io.write_columns(d / "fields.csv", _family_columns(family))]
    ctx.emit(files, "weights")
    _say(report.passed, f"weights: d = {family.d}, c1 = {io.fmt(report.c1)}, c2 = {io.fmt(report.c2)}, "
         f"mu = {io.fmt(report.mu)}")
    return EXIT_OK if report.passed else EXIT_FAIL


def _weights_verify(ctx: Context, d: Path) -> int:
    if not (d / "weights.json").exists():
        raise UsageError(f"no stored weight family in {d}")
    stored = io.read_json(d / "weights.json")
    cols = io.read_csv(d / "fields.csv")
    mesh = build_mesh(stored["mesh"]["dimension"], stored["mesh"]["resolution"])
    omega = make_region(mesh, stored["omega"])
    rec = stored["recipe"]
    family = build_weight_family(mesh, omega, rec["targets"], rec["r"], rec["collar_width"])
    diffs = {}
    for i in range(family.d):
        for name, arr in ((f"phi1_{i}", family.phi1[i]), (f"phi2_{i}", family.phi2[i])):
            if name not in cols:
                raise UsageError(f"{d / 'fields.csv'}: missing column {name}")
            diffs[name] = float(np.max(np.abs(cols[name] - arr)))
    report = verify_weight_bounds(family)
    reproduced = all(v <= 1e-12 for v in diffs.values())
    same_constants = all(
        abs(report.as_dict()[k] - stored["constants"][k]) <= 1e-12 * max(1.0, abs(report.as_dict()[k]))
        for k in ("c1", "c2", "c4", "c5", "c6", "mu")
    )
    ok = reproduced and same_constants and report.passed
    worst = max(diffs, key=diffs.get)
    _say(ok, f"weights verify: max field deviation {io.fmt(diffs[worst])} ({worst}), "
         f"constants {'match' if same_constants else 'differ'}, bounds {'hold' if report.passed else 'fail'}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_simulate(ctx: Context) -> int:
    sol = _simulate(ctx.cfg)
    stored = _subsample(sol, ctx.cfg.solver["store_every"])
    files = io.write_solution(ctx.out / "solution", stored)
    norms = stored.norms()
    files.append(io.write_columns(ctx.out / "solution" / "norms.csv", {"t": stored.times, "norm": norms}))
    ctx.emit(files, "simulate")
    print(f"simulate: {sol.times.size - 1} steps, {stored.times.size} snapshots stored, "
          f"|u(T)| = {io.fmt(norms[-1])}")
    return EXIT_OK


def cmd_commutator(ctx: Context) -> int:
    sol = _stored_solution(ctx, ctx.args.solution)
    conf = _carleman_config(ctx, sol)
    c_tol = ctx.cfg.pipeline["c_tol"]
    rows, snaps = [], []
    ok = True
    for t, u in zip(sol.times, sol.fields):
        rep = cm.commutator_identity(cm.stack(u, float(t), conf))
        checks = rep.checks(c_tol)
        passed = all(c["passed"] for c in checks.values())
        ok &= passed
        snaps.append({"t": float(t), "passed": passed, "checks": checks})
        rows.append([float(t)] + [checks[k]["residual"] for k in sorted(checks)] + [passed])
        log.info("t = %.6g: %s", t, "pass" if passed else "FAIL")
    names = sorted(snaps[0]["checks"])
    d = ctx.out / "commutator"
    files = [
        io.write_json(d / "commutator.json", {
            "passed": ok, "s": conf.s, "h": conf.h, "T": conf.T, "c_tol": c_tol,
            "spacing": sol.mesh.spacing, "snapshots": snaps,
        }),
        io.write_csv(d / "commutator.csv", ["t"] + names + ["passed"], rows),
    ]
    ctx.emit(files, "commutator-check")
    _say(ok, f"commutator-check: {sum(s['passed'] for s in snaps)}/{len(snaps)} snapshots within tolerance")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_frequency(ctx: Context) -> int:
    sol = _stored_solution(ctx, ctx.args.solution)
    conf = _carleman_config(ctx, sol)
    C0 = ctx.cfg.pipeline["C0"]
    trace = fq.build_trace(sol, conf, c_tol=ctx.cfg.pipeline["c_tol"])
    s5 = [cm.step5_bound(cm.stack(u, float(t), conf), C0) for t, u in zip(sol.times, sol.fields)]
    C = max(r.C for r in s5)
    ode = fq.check_ode_system(trace, C0, C)
    cols = trace.columns()
    slack1 = np.full(trace.times.size, np.nan)
    slack2 = np.full(trace.times.size, np.nan)
    mask = trace.interior()
    slack1[mask], slack2[mask] = ode.slack_energy, ode.slack_frequency
    cols["slack_energy"], cols["slack_frequency"] = slack1, slack2
    cols["commutator_C"] = np.array([r.C for r in s5])
    n = trace.times.size
    params = {"T": trace.T, "h": trace.h, "C0": C0, "F1": ode.F1, "F2": ode.F2, "a_norm": trace.a_norm,
              "t1": float(trace.times[n // 2]), "t2": float(trace.times[(3 * n) // 4]),
              "t3": float(trace.times[-1])}
    d = ctx.out / "frequency"
    files = [
        io.write_columns(d / "trace.csv", cols),
        io.write_json(d / "frequency.json", {"s": conf.s, "ode": ode.as_dict(),
                                             "min_N": float(trace.N.min())}),
        io.write_json(d / "params.json", params),
    ]
    ctx.emit(files, "frequency")
    _say(ode.passed, f"frequency: C = {io.fmt(C)}, F2 = {io.fmt(ode.F2)}, min N = {io.fmt(trace.N.min())}")
    return EXIT_OK if ode.passed else EXIT_FAIL


def _read_trace(path: Path, params: dict) -> fq.FrequencyTrace:
    cols = io.read_csv(path)
    for key in ("t", "y", "N"):
        if key not in cols:
            raise UsageError(f"{path}: missing column {key!r}")

    def opt(name):
        arr = cols.get(name)
        return None if arr is None or np.any(~np.isfinite(arr)) else arr

    return fq.FrequencyTrace(cols["t"], cols["y"], cols["N"], float(params["T"]), float(params["h"]),
                             float(params.get("a_norm", 0.0)), tol_energy=opt("tol_energy"),
                             tol_nprime=opt("tol_nprime"))


def cmd_interpolate(ctx: Context) -> int:
    params = io.read_json(ctx.args.params)
    missing = [k for k in ("T", "h", "C0", "F1", "F2", "t1", "t2", "t3") if k not in params]
    if missing:
        raise UsageError(f"{ctx.args.params}: missing parameters {', '.join(missing)}")
    trace = _read_trace(Path(ctx.args.trace), params)
    t1, t2, t3 = (float(params[k]) for k in ("t1", "t2", "t3"))
    ys = [float(np.exp(np.interp(t, trace.times, np.log(trace.y)))) for t in (t1, t2, t3)]
    F1, F2, C0 = float(params["F1"]), float(params["F2"]), float(params["C0"])
    hyp = ip.check_hypotheses(trace.window(t1, t3), F1, F2, C0)
    out = {"hypotheses": hyp.as_dict()}
    ok = hyp.passed
    if hyp.passed:
        res = ip.three_point_check(*ys, t1, t2, t3, trace.T, trace.h, C0, F1, F2)
        out["result"] = res.as_dict()
        ok = res.holds(1e-9)
    files = [io.write_json(ctx.out / "interpolate" / "three_point.json", {"passed": ok, **out})]
    ctx.emit(files, "interpolate")
    if not hyp.passed:
        _say(False, f"interpolate: hypotheses violated near t = {io.fmt(hyp.worst_time)}")
    else:
        _say(ok, f"interpolate: M = {io.fmt(res.M)}, margin = {io.fmt(res.margin)}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_certify(ctx: Context) -> int:
    cfg = ctx.cfg
    mesh = cfg.build_mesh()
    omega = cfg.build_omega(mesh)
    u0 = cfg.initial_function() if cfg.initial["kind"] != "values" else cfg.initial_values(mesh)
    try:
        cert = ob.certify(mesh, omega, cfg.build_potential(), u0, cfg.solver["T"], _certify_options(cfg))
    except fq.ZeroSolutionError as exc:
        print(f"FAIL: certify: {exc}", file=sys.stderr)
        return EXIT_FAIL
    body = cert.as_dict()
    body["provenance"] = {**body["provenance"], "experiment_config_hash": cfg.config_hash}
    files = [io.write_json(ctx.out / "certificate.json", body)]
    ctx.emit(files, "certify")
    if cert.passed:
        _say(True, f"certify: beta = {io.fmt(cert.beta)}, K = {io.fmt(cert.K)}")
    else:
        _say(False, f"certify: stage {cert.failed_stage or 'unknown'} failed")
    for st in cert.stages:
        log.info("%-20s %s margin=%s", st.name, "pass" if st.passed else "FAIL",
                 "-" if st.margin is None else io.fmt(st.margin))
    return EXIT_OK if cert.passed else EXIT_FAIL


def cmd_observe(ctx: Context) -> int:
    cfg = ctx.cfg
    sol = _subsample(_simulate(cfg), cfg.solver["store_every"])
    omega = cfg.build_omega(sol.mesh)
    ms = [ob.measure(sol, omega, float(t)) for t in sol.times]
    ok = all(m.norm_omega <= m.norm_domain for m in ms)
    pr = cfg.probe
    pmesh = build_mesh(1, pr["resolution"]) if cfg.mesh["dimension"] == 1 else None
    probes = []
    if pmesh is not None:
        pomega = cfg.build_omega(pmesh)
        op = heat.build_solution_operator(pmesh, cfg.build_potential(), pr["t"], pr["dt"],
                                          cfg.solver["scheme"], ctx.workers)
        for beta in pr["beta"]:
            res = ob.adversarial_search(op, pomega, beta, restarts=pr["restarts"], seed=cfg.seed,
                                        workers=ctx.workers)
            row = {"beta": beta, "log_required_K": res.log_required_K, "required_K": res.required_K}
            if pr["oracle"]:
                orc = ob.brute_force_oracle(op, pomega, beta, samples=pr["samples"], seed=cfg.seed)
                row["oracle_log_required_K"] = orc["log_required_K"]
                row["relative_gap"] = abs(res.log_required_K - orc["log_required_K"]) / max(
                    abs(orc["log_required_K"]), 1e-300)
            probes.append(row)
            log.info("beta = %g: log K' = %.6g", beta, res.log_required_K)
    d = ctx.out / "observe"
    files = [
        io.write_columns(d / "measurements.csv", {
            "t": [m.t for m in ms], "norm_omega": [m.norm_omega for m in ms],
            "norm_domain": [m.norm_domain for m in ms], "norm_initial": [m.norm_initial for m in ms]}),
        io.write_json(d / "observe.json", {"passed": ok, "final": ms[-1].as_dict(), "probe": {
            "resolution": pr["resolution"], "t": pr["t"], "results": probes}}),
    ]
    ctx.emit(files, "observe")
    _say(ok, f"observe: |u(T)|_omega = {io.fmt(ms[-1].norm_omega)}, |u(T)| = {io.fmt(ms[-1].norm_domain)}"
         + "".join(f", beta {b['beta']}: log K' = {io.fmt(b['log_required_K'])}" for b in probes))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_sweep(ctx: Context) -> int:
    sw = ctx.cfg.sweep
    omega = ctx.cfg.omega[0]
    if omega["type"] != "interval":
        raise UsageError("sweep runs on the interval; omega must be an interval")
    res = ob.scaling_sweep(sw["t"], sw["a_norm"], sw["beta"], sw["resolution"], tuple(omega["bounds"]),
                           restarts=sw["restarts"], seed=ctx.cfg.seed, workers=ctx.workers,
                           potential_kind=sw["potential"])
    rows = res["rows"]
    keys = ["t", "a_norm", "log_required_K", "fit", "share_k2_k3"]
    d = ctx.out / "sweep"
    files = [io.write_csv(d / "sweep.csv", keys, [[r[k] for k in keys] for r in rows]),
             io.write_json(d / "sweep.json", res)]
    ctx.emit(files, "sweep")
    c = res["coefficients"]
    print(f"sweep: {len(rows)} runs, k0 = {io.fmt(c['k0'])}, k1 = {io.fmt(c['k1'])}, k2 = {io.fmt(c['k2'])}, "
          f"k3 = {io.fmt(c['k3'])}, residual = {io.fmt(res['residual'])}")
    return EXIT_OK


SECTIONS = {
    "weights/weights.json": lambda b: (b["constants"]["passed"], {k: b["constants"][k] for k in ("c1", "c2", "mu")}),
    "commutator/commutator.json": lambda b: (b["passed"], {"snapshots": len(b["snapshots"])}),
    "frequency/frequency.json": lambda b: (b["ode"]["passed"], {"F1": b["ode"]["F1"], "F2": b["ode"]["F2"]}),
    "interpolate/three_point.json": lambda b: (b["passed"], {"margin": b.get("result", {}).get("margin")}),
    "certificate.json": lambda b: (b["passed"], {
        "beta": b["constants"].get("beta"), "K": b["constants"].get("K"),
        "stages": {s["name"]: {"passed": s["passed"], "margin": s["margin"]} for s in b["stages"]}}),
    "observe/observe.json": lambda b: (b["passed"], {"probe": b["probe"]["results"]}),
    "sweep/sweep.json": lambda b: (None, {"coefficients": b["coefficients"], "residual": b["residual"]}),
}


def cmd_report(ctx: Context) -> int:
    run = Path(ctx.args.run_dir) if ctx.args.run_dir else ctx.out
    if not (run / io.MANIFEST).exists():
        raise UsageError(f"no manifest in {run}")
    try:
        man = io.verify_manifest(run)
    except io.ChecksumError as exc:
        print(f"FAIL: report: checksum mismatch in {exc.path}", file=sys.stderr)
        return EXIT_FAIL
    files = {k: v["sha256"] for k, v in man["files"].items() if k not in REPORT_FILES}
    sections = {}
    ok = True
    for rel, summarize in SECTIONS.items():
        if rel in files:
            passed, info = summarize(io.read_json(run / rel))
            sections[rel] = {"passed": passed, **info}
            ok &= passed is not False
    body = {"passed": ok, "artifact_version": man["artifact_version"], "config_hash": man["config_hash"],
            "checksums_verified": True, "files": files, "sections": sections}
    lines = [f"heatobs report ({'PASS' if ok else 'FAIL'})", f"config {man['config_hash']}",
             f"{len(files)} files, checksums verified"]
    for rel, sec in sections.items():
        state = {True: "pass", False: "FAIL", None: "info"}[sec["passed"]]
        lines.append(f"{state:4s}  {rel}")
        for name, st in sec.get("stages", {}).items():
            margin = "-" if st["margin"] is None else io.fmt(st["margin"])
            lines.append(f"      {name:20s} {'pass' if st['passed'] else 'FAIL'}  margin {margin}")
    text = "\n".join(lines) + "\n"
    out = [io.write_json(run / "report.json", body), run / "report.txt"]
    (run / "report.txt").write_text(text, encoding="utf-8")
    io.update_manifest(run, out, man["config_hash"], "report")
    sys.stdout.write(text)
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {
    "mesh": cmd_mesh, "weights": cmd_weights, "simulate": cmd_simulate, "commutator-check": cmd_commutator,
    "frequency": cmd_frequency, "interpolate": cmd_interpolate, "certify": cmd_certify,
    "observe": cmd_observe, "sweep": cmd_sweep, "report": cmd_report,
}


# ---------------------------------------------------------------------------
# argument parsing


def _common(parser: argparse.ArgumentParser, suppress: bool) -> None:
    dflt = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", metavar="PATH", default=dflt(None), help="YAML config (default: bundled)")
    parser.add_argument("--out", metavar="DIR", default=dflt(None), help=f"output directory (overrides ${OUT_ENV})")
    parser.add_argument("--seed", metavar="N", type=int, default=dflt(None), help="override the config seed")
    parser.add_argument("--workers", metavar="N", type=int, default=dflt(1), help="worker threads")
    parser.add_argument("--verbose", action="store_true", default=dflt(False), help="log progress")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heatobs", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"heatobs {__version__}")
    _common(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _common(p, suppress=True)
        return p

    add("mesh", "write the mesh")
    p = add("weights", "build and verify the weight family, or re-check a stored one")
    p.add_argument("action", nargs="?", choices=("build", "verify"), default="build")
    p.add_argument("path", nargs="?", help="stored family directory for 'verify'")
    add("simulate", "solve the heat equation and store snapshots")
    p = add("commutator-check", "audit the commutator identity on a stored solution")
    p.add_argument("solution", nargs="?", help="solution directory (default: OUT/solution)")
    p = add("frequency", "frequency trace and differential inequalities of a stored solution")
    p.add_argument("solution", nargs="?", help="solution directory (default: OUT/solution)")
    p = add("interpolate", "three-point inequality from a trace CSV and a JSON parameter block")
    p.add_argument("trace", help="trace CSV with columns t, y, N")
    p.add_argument("params", help="JSON with T, h, C0, F1, F2, t1, t2, t3")
    add("certify", "run the full certificate pipeline")
    add("observe", "measure observation norms and probe the constants adversarially")
    add("sweep", "scaling sweep over t and the potential size")
    p = add("report", "verify checksums and summarize a run directory")
    p.add_argument("run_dir", nargs="?", help="run directory (default: OUT)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        parser.error("--workers must be at least 1")
    try:
        ctx = Context(args)
        return COMMANDS[args.command](ctx)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ob.CertificationError, MorseError, cm.CarlemanError, ip.InterpolationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
