"""Command-line entry point.

Exit status 0 means the command completed, including runs whose finding is
that the QSS model fails; 2 means the case file is missing, 3 that it does
not validate, 1 any other operational error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .diagnostics import compare_trajectories, diagnose_failure
from .errors import CaseError, QssLabError
from .manifold import classify_constraint_point, solve_transient_sep
from .simulators import config_for, run_long_term, run_qss, run_transient

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_ERROR, EXIT_MISSING, EXIT_SCHEMA = 0, 1, 2, 3


def merge(base, override):
    """Recursive dict merge; ``override`` wins and lists are replaced whole."""
    if not isinstance(base, dict) or not isinstance(override, dict):
        return override
    out = dict(base)
    for k, v in override.items():
        out[k] = merge(base[k], v) if k in base else v
    return out


def _load_override(text):
    if text is None:
        return None
    p = Path(text)
    try:
        raw = p.read_text(encoding="utf-8") if p.is_file() else text
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CaseError([("--config", f"invalid JSON: {exc.msg}")]) from None
    if not isinstance(doc, dict):
        raise CaseError([("--config", "override must be a JSON object")])
    return doc


def load_system(case, config=None):
    """Parse ``case`` with the ``--config`` override document merged over it."""
    path = io.resolve_case(case)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CaseError([(f"line {exc.lineno}", f"invalid JSON: {exc.msg}")]) from None
    override = _load_override(config)
    if override:
        doc = merge(doc, override)
    return io.parse_case_document(doc, source=str(path))


def _say(out, text):
    print(text, file=out)


def _artifact(out, path):
    _say(out, f"wrote {path}")


def _write_traj(out, traj, path):
    for p in io.write_trajectory(traj, path):
        _artifact(out, p)


def _termination_line(label, traj):
    t = traj.termination
    reason = f" ({t.reason})" if t.reason else ""
    return f"{label}: {t.status} at t = {t.time:.4f} s{reason}"


def cmd_powerflow(args, system, out):
    pf = getattr(system, "power_flow", None)
    if pf is None:
        raise QssLabError(f"case {system.name!r} has no network to solve")
    net = system.network
    gen = pf.generation(net)
    path = io.output_dir(args.out) / f"{system.name}.powerflow.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("bus,kind,vm,va_deg,p_gen,q_gen,p_load,q_load\n")
        for k, b in enumerate(net.buses):
            row = [pf.voltage_magnitudes[k], np.degrees(pf.voltage_angles[k]), gen[k].real, gen[k].imag,
                   b.load_p, b.load_q]
            fh.write(f"{b.id},{b.kind}," + ",".join(io._fmt(float(v)) for v in row) + "\n")
    _say(out, f"power flow converged in {pf.iteration_count} iterations "
              f"(max mismatch {pf.max_mismatch:.3e} p.u.)")
    for k, b in enumerate(net.buses):
        _say(out, f"  bus {b.id:>3}  V = {pf.voltage_magnitudes[k]:.6f}  "
                  f"angle = {np.degrees(pf.voltage_angles[k]):9.4f} deg")
    _artifact(out, path)
    return EXIT_OK


def _frozen_point(system, k):
    """State right after controller event ``k`` of a long-term run (``0``: initial state)."""
    if not k:
        return system.initial_state(), None
    lt = run_long_term(system)
    events = lt.structural_events()
    if k > len(events):
        raise QssLabError(f"the long-term run has {len(events)} controller event(s); cannot freeze at event {k}")
    ev = events[k - 1]
    return lt.state(lt.index_at(ev.time)), ev


def cmd_simulate(args, system, out):
    base = io.output_dir(args.out) / system.name
    if args.model == "full":
        traj = run_long_term(system, config=config_for(system, "long_term"))
    elif args.model == "qss":
        traj = run_qss(system, config=config_for(system, "qss"))
    else:
        point, ev = _frozen_point(system, args.freeze_at_event)
        sep = solve_transient_sep(system, point.zc, point.zd, point.x, point.y)
        traj = run_transient(system, point.zc, point.zd, point.x, point.y,
                             config=config_for(system, "transient"), target=sep.w(system),
                             t0=point.t)
        traj.metadata = dict(traj.metadata or {}, frozen_at_event=args.freeze_at_event or 0,
                             frozen_time=float(point.t), equilibrium_type=sep.type)
        where = f"controller event {args.freeze_at_event} ({ev.kind} at t = {ev.time:.4f} s)" if ev else \
            "the initial operating point"
        _say(out, f"transient model frozen at {where}; equilibrium type {sep.type}")
    _say(out, _termination_line(f"{args.model} run", traj))
    suffix = {"full": "long-term", "qss": "qss", "transient": "transient"}[args.model]
    _write_traj(out, traj, f"{base}.{suffix}.csv")
    return EXIT_OK


def _paired(args, system, out):
    lt = run_long_term(system)
    qss = run_qss(system)
    base = io.output_dir(args.out) / system.name
    _say(out, _termination_line("long-term run", lt))
    _say(out, _termination_line("QSS run", qss))
    _write_traj(out, lt, f"{base}.long-term.csv")
    _write_traj(out, qss, f"{base}.qss.csv")
    return lt, qss, base


def cmd_compare(args, system, out):
    lt, qss, base = _paired(args, system, out)
    rep = compare_trajectories(lt, qss)
    path = f"{base}.divergence.json"
    io.dump_json(rep.to_dict(), path)
    when = "" if rep.first_divergence_time is None else f", separating at t = {rep.first_divergence_time:.4f} s"
    _say(out, f"verdict: {rep.verdict}{when}")
    _artifact(out, path)
    return EXIT_OK


def cmd_diagnose(args, system, out):
    lt, qss, base = _paired(args, system, out)
    diag = diagnose_failure(system, lt, qss)
    path_d = f"{base}.divergence.json"
    path_f = f"{base}.diagnosis.json"
    io.dump_json(diag.divergence.to_dict(), path_d)
    io.dump_json(diag.to_dict(), path_f)
    _artifact(out, path_d)
    _artifact(out, path_f)
    _say(out, f"cause: {diag.cause}")
    _say(out, "")
    _say(out, diag.summary())
    return EXIT_OK


def cmd_classify(args, system, out):
    if args.time is None:
        state, label = system.initial_state(), "initial operating point"
    else:
        traj = run_qss(system) if args.run == "qss" else run_long_term(system)
        if args.time > traj.times[-1] + 1e-9:
            raise QssLabError(f"the {args.run} run ended at t = {traj.times[-1]:.4f} s, before t = {args.time:g} s")
        state = traj.state(traj.index_at(args.time))
        label = f"{args.run} run at t = {state.t:.4f} s"
    if args.solve:
        sep = solve_transient_sep(system, state.zc, state.zd, state.x, state.y)
        cls, extra = sep.classification, {"equilibrium_type": sep.type, "residual": sep.residual}
    else:
        from .dae import assemble_jacobian

        cls, extra = classify_constraint_point(assemble_jacobian(system, state)), {}
    doc = dict(cls.to_dict(), point=label, time=float(state.t), **extra)
    path = io.output_dir(args.out) / f"{system.name}.classification.json"
    io.dump_json(doc, path)
    _say(out, f"{label}: {cls.verdict} (k = {cls.k}, in Gamma_s: {cls.in_gamma_s})")
    _artifact(out, path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--case", required=True, help="case file or bundled case name (e.g. cases/ieee14_stable)")
    common.add_argument("--out", default=None, help="output directory (default: $QSSLAB_OUTPUT_DIR or ./qsslab-output)")
    common.add_argument("--config", default=None,
                        help="partial case document (file or inline JSON) merged over the case")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = argparse.ArgumentParser(prog="qsslab", description="Long-term, QSS and transient simulation with QSS "
                                                           "failure diagnosis.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub.add_parser("powerflow", parents=[common], help="solve the base-case power flow")
    s = sub.add_parser("simulate", parents=[common], help="run one model and write its trajectory")
    s.add_argument("--model", choices=("full", "qss", "transient"), default="full")
    s.add_argument("--freeze-at-event", type=int, default=None, metavar="K",
                   help="transient model: freeze slow states right after controller event K of the long-term run")
    sub.add_parser("compare", parents=[common], help="run the long-term and QSS models and compare them")
    sub.add_parser("diagnose", parents=[common], help="compare, check both conditions and attribute the cause")
    c = sub.add_parser("classify-point", parents=[common], help="classify a point of the constraint manifold")
    c.add_argument("--time", type=float, default=None, help="sample of a run at this time (default: initial point)")
    c.add_argument("--run", choices=("qss", "full"), default="qss", help="run sampled by --time")
    c.add_argument("--solve", action="store_true",
                   help="solve the transient equilibrium at the frozen slow states before classifying")
    return p


COMMANDS = {"powerflow": cmd_powerflow, "simulate": cmd_simulate, "compare": cmd_compare,
            "diagnose": cmd_diagnose, "classify-point": cmd_classify}


def run_cli(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=err, format="%(levelname)s %(name)s: %(message)s")
    if args.command != "simulate" or args.model != "transient":
        if getattr(args, "freeze_at_event", None) is not None:
            print("error: --freeze-at-event applies to --model transient only", file=err)
            return EXIT_ERROR
    try:
        system = load_system(args.case, args.config)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_MISSING
    except CaseError as exc:
        print(f"error: {exc}", file=err)
        return EXIT_SCHEMA
    except QssLabError as exc:
        print(f"error: cannot build the case: {exc}", file=err)
        return EXIT_ERROR
    try:
        return COMMANDS[args.command](args, system, out)
    except (QssLabError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
