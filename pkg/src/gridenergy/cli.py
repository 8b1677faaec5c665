"""Command-line interface.

Subcommands: solve, check, sweep, region, bounds, reactive. Results go to
stdout (or --out) as JSON, or as CSV with a single '#'-prefixed JSON header
line so the files stay self-describing and plot-ready. Outputs are
byte-deterministic for identical inputs and seed.

Exit codes: 0 success/solution, 3 certified no-solution-in-domain, 1 error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys

import numpy as np

from . import __version__
from . import convexity, network, reduced, solver
from .energy import PFState
from .errors import GridEnergyError, NoReactiveSolution
from .network import BUNDLED_CASES, load_case

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_SOLUTION = 3


def _case_text(name_or_path: str) -> str:
    if name_or_path in BUNDLED_CASES:
        from importlib import resources
        fname = {"twobus": "twobus.json", "threebus": "threebus.json",
                 "threebus-tree": "threebus_tree.json", "ieee14": "case14.m",
                 "ieee118": "case118.m"}[name_or_path]
        return resources.files("gridenergy.cases").joinpath(fname).read_text()
    with open(name_or_path) as fh:
        return fh.read()


def _header(args, case: str) -> dict:
    digest = hashlib.sha256(_case_text(case).encode()).hexdigest()[:16]
    return {"tool": f"gridenergy {__version__}", "case": case,
            "case_sha256": digest, "seed": args.seed, "tol": args.tol}


def _emit_json(args, payload: dict) -> None:
    if args.format == "csv":
        raise GridEnergyError("this command only produces JSON output")
    text = json.dumps(payload, indent=1, sort_keys=True)
    _write(args, text + "\n")


def _emit_table(args, header: dict, columns: list[str], rows: list[tuple]) -> None:
    if args.format == "json":
        payload = {"header": header,
                   "rows": [dict(zip(columns, row)) for row in rows]}
        _write(args, json.dumps(payload, indent=1, sort_keys=True) + "\n")
        return
    lines = ["#" + json.dumps(header, sort_keys=True), ",".join(columns)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row))
    _write(args, "\n".join(lines) + "\n")


def _write(args, text: str) -> None:
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _prepare(case: str, lossy_kappa: float | None):
    """Parse, normalize set-points, and null out (or impose) conductances."""
    n = load_case(case)
    n = network.absorb_setpoints(network.losslessify(n))
    if lossy_kappa is not None and lossy_kappa != 0.0:
        lines = [network.Line(ln.i, ln.j, ln.b, lossy_kappa * ln.b)
                 for ln in n.lines]
        n = network.Network(n.buses, lines)
    return n


def _state_payload(n, s: PFState) -> dict:
    return {
        "bus": [b.id for b in n.buses],
        "v": [float(v) for v in np.exp(s.rho)],
        "theta_rad": [float(t) for t in s.theta],
    }


def _certificate_payload(cert) -> dict:
    return {"in_c": cert.in_c, "phase_ok": cert.phase_ok,
            "lmi_min_eig": cert.lmi_min_eig, "tol_abs": cert.tol_abs,
            "in_d_sampled": cert.in_d_sampled}


def cmd_solve(args) -> int:
    n = _prepare(args.case, args.lossy_kappa)
    opts = solver.SolveOptions(grad_tol=args.tol)
    if args.method == "newton":
        out = solver.solve_newton(n, tol=args.tol)
    elif n.is_lossless:
        out = solver.solve_convex(n, opts=opts)
    else:
        out = solver.solve_convex_lossy(n, opts=opts)
    payload = {
        "header": _header(args, args.case),
        "method": args.method,
        "status": out.status.value,
        "grad_norm": out.grad_norm,
        "iterations": out.iterations,
        "boundary_active": out.boundary_active,
        "state": _state_payload(n, out.state),
        "certificate": _certificate_payload(out.certificate),
    }
    _emit_json(args, payload)
    if out.status is solver.SolveStatus.SOLUTION_FOUND:
        return EXIT_OK
    if out.status is solver.SolveStatus.NO_SOLUTION_IN_C:
        return EXIT_NO_SOLUTION
    return EXIT_ERROR


def _load_state(n, path: str) -> PFState:
    with open(path) as fh:
        doc = json.load(fh)
    s = PFState.flat(n)
    for key, arr in (("rho", s.rho), ("theta", s.theta)):
        if key not in doc:
            continue
        values = doc[key]
        if isinstance(values, dict):
            for bid, val in values.items():
                arr[n.index[int(bid)]] = float(val)
        else:
            if len(values) != n.n_bus:
                raise GridEnergyError(
                    f"state '{key}' has {len(values)} entries for {n.n_bus} buses")
            arr[:] = [float(v) for v in values]
    return s


def cmd_check(args) -> int:
    n = _prepare(args.case, None)
    s = _load_state(n, args.state) if args.state else PFState.flat(n)
    cert = convexity.in_domain_C(n, s, tol=args.tol)
    payload = {"header": _header(args, args.case),
               "certificate": _certificate_payload(cert)}
    if args.d_samples > 0:
        report = convexity.in_domain_D_sampled(n, s, samples=args.d_samples)
        payload["certificate"]["in_d_sampled"] = report.in_d
        payload["certificate"]["d_samples"] = report.samples
    _emit_json(args, payload)
    return EXIT_OK


def cmd_sweep(args) -> int:
    n = _prepare(args.case, None)
    kappas = np.arange(args.kappa_min, args.kappa_max + 0.5 * args.kappa_step,
                       args.kappa_step)
    opts = solver.SolveOptions(grad_tol=args.tol)
    records = solver.sweep_load(n, args.delta, kappas, opts)
    rows = [(r.kappa, r.delta, r.status.value, r.grad_norm, r.lmi_min_eig,
             r.boundary_active, r.iterations) for r in records]
    header = _header(args, args.case)
    header["delta"] = args.delta
    _emit_table(args, header,
                ["kappa", "delta", "status", "grad_norm", "lmi_min_eig",
                 "boundary_active", "iterations"], rows)
    return EXIT_OK


def cmd_region(args) -> int:
    n = _prepare(args.case, None)
    if args.scale != 1.0:
        n = network.scale_injections(n, args.scale, 1.0)
    if len(n.ns) != 2:
        print("error: region grid needs exactly two non-slack buses",
              file=sys.stderr)
        return EXIT_ERROR
    cells = reduced.region_grid(n, step_deg=args.grid_step)
    rows = [(c.theta_a, c.theta_b, c.solvable,
             "" if c.in_c is None else c.in_c,
             "" if c.reduced_min_eig is None else c.reduced_min_eig)
            for c in cells]
    header = _header(args, args.case)
    header["scale"] = args.scale
    header["grid_step_deg"] = args.grid_step
    _emit_table(args, header,
                ["theta2", "theta3", "solvable", "in_c", "reduced_min_eig"],
                rows)
    return EXIT_OK


def cmd_bounds(args) -> int:
    n = _prepare(args.case, None)
    bound = convexity.max_phase_bound(n, args.b_rho, seed=args.seed)
    payload = {"header": _header(args, args.case),
               "b_rho": args.b_rho,
               "b_theta_deg": bound.b_theta_deg,
               "b_theta_rad": bound.b_theta,
               "mode": bound.mode,
               "certified": bound.certified}
    _emit_json(args, payload)
    return EXIT_OK


def cmd_reactive(args) -> int:
    n = _prepare(args.case, None)
    theta = np.zeros(n.n_bus)
    if args.theta:
        with open(args.theta) as fh:
            doc = json.load(fh)
        if isinstance(doc, dict):
            for bid, val in doc.items():
                theta[n.index[int(bid)]] = float(val)
        else:
            theta[:] = [float(v) for v in doc]
    weights = None
    if args.weights:
        weights = np.array([float(v) for v in args.weights.split(",")])
    try:
        state = reduced.convex_reactive_solve(n, theta, weights)
    except NoReactiveSolution:
        _emit_json(args, {"header": _header(args, args.case),
                          "status": "NoReactiveSolution"})
        return EXIT_NO_SOLUTION
    f, t = n.edges[:, 0], n.edges[:, 1]
    prog = reduced._ZetaProgram(n, np.cos(theta[f] - theta[t]),
                                -n.q_inj[n.pq])
    slack = [float(v) for v in prog.constraints(state.zeta)]
    v_bar = reduced.voltage_upper_bound(n).v_bar
    payload = {"header": _header(args, args.case),
               "status": "Solved",
               "pq_bus": [n.buses[p].id for p in n.pq],
               "zeta": [float(z) for z in state.zeta],
               "v": [float(v) for v in state.voltages()],
               "constraint_slack": slack,
               "v_bar": [float(v) for v in v_bar]}
    _emit_json(args, payload)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridenergy",
                                 description="Energy-function power flow toolkit")

    def add_globals(parser, defaults: bool):
        # Defaults live on the root parser; the per-command copies use
        # SUPPRESS so flags are accepted on either side of the subcommand.
        miss = argparse.SUPPRESS
        parser.add_argument("--tol", type=float,
                            default=1e-8 if defaults else miss,
                            help="solver gradient tolerance (default 1e-8)")
        parser.add_argument("--seed", type=int, default=0 if defaults else miss,
                            help="RNG seed for sampling")
        parser.add_argument("--out", default=None if defaults else miss,
                            help="output file (default stdout)")
        parser.add_argument("--format", choices=("json", "csv"),
                            default=None if defaults else miss,
                            help="override the output format where supported")

    add_globals(ap, defaults=True)
    common = argparse.ArgumentParser(add_help=False)
    add_globals(common, defaults=False)
    sub = ap.add_subparsers(dest="command", required=True,
                            parser_class=lambda **kw: argparse.ArgumentParser(
                                parents=[common], **kw))

    p = sub.add_parser("solve", help="solve the power flow")
    p.add_argument("case")
    p.add_argument("--method", choices=("convex", "newton"), default="convex")
    p.add_argument("--lossy-kappa", type=float, default=None,
                   help="impose a uniform g/b ratio and use the lossy model")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("check", help="convexity-domain certificate for a state")
    p.add_argument("case")
    p.add_argument("--state", default=None, help="JSON state file (rho/theta)")
    p.add_argument("--d-samples", type=int, default=0,
                   help="also sample the segment Hessian condition")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("sweep", help="kappa-delta load scaling sweep")
    p.add_argument("case")
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--kappa-min", type=float, default=1.0)
    p.add_argument("--kappa-max", type=float, default=3.0)
    p.add_argument("--kappa-step", type=float, default=0.1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("region", help="two-phase region-of-convexity grid")
    p.add_argument("case")
    p.add_argument("--grid-step", type=float, default=2.0,
                   help="grid step in degrees")
    p.add_argument("--scale", type=float, default=1.0,
                   help="injection scaling factor")
    p.set_defaults(func=cmd_region)

    p = sub.add_parser("bounds", help="operating-box phase budget")
    p.add_argument("case")
    p.add_argument("--b-rho", type=float, default=1.5)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("reactive", help="convex reactive solve at fixed phases")
    p.add_argument("case")
    p.add_argument("--theta", default=None, help="JSON phase file (per bus)")
    p.add_argument("--weights", default=None,
                   help="comma-separated positive weights per PQ bus")
    p.set_defaults(func=cmd_reactive)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (GridEnergyError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
