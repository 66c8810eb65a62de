"""Command-line interface: run benchmark suites, list registries, export
built-in robot spec files.

Exit codes: 0 success, 2 when any episode failed to converge, 1 internal
error, 64 usage error, 65 validation error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .controllers import CONTROLLER_NAMES
from .robots import GainSet, ParseError, RobotSpecFile, ValidationError, builtin_registry

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_FAILED_CONVERGENCE = 2
EXIT_USAGE = 64
EXIT_VALIDATION = 65

SIM_KEYS = {"dt_physics": float, "control_decimation": int, "integrator": str}
GAIN_KEYS = {"kp": float, "eps": float, "w1": float, "w2": float, "w3": float,
             "w4": float, "rho": float, "d_null": float}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="clfqp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="run a benchmark suite or single episode")
    runp.add_argument("--robot", required=True, help="built-in robot name or spec file path")
    runp.add_argument("--controller", required=True,
                      help=f"one of {', '.join(CONTROLLER_NAMES)}")
    runp.add_argument("--experiment", required=True,
                      choices=("setpoint", "tracking", "single"))
    runp.add_argument("--theta", type=float, default=None,
                      help="set-point angle in units of pi (single experiment)")
    runp.add_argument("--omega", type=float, default=None,
                      help="tracking rate in units of pi rad/s (single experiment)")
    runp.add_argument("--out", default="out", help="output directory")
    runp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                      help="override sim.* or gains.* values, e.g. sim.dt_physics=5e-4")

    listp = sub.add_parser("list", help="list robots, controllers, or gains")
    listp.add_argument("what", choices=("robots", "controllers", "gains"))
    listp.add_argument("--robot", default=None)

    exp = sub.add_parser("export-spec", help="dump a built-in robot spec file")
    exp.add_argument("--robot", required=True)
    exp.add_argument("--out", default=None, help="output path (default <robot>.yaml)")
    return parser


def _parse_overrides(pairs) -> tuple[dict, dict]:
    sim_over, gain_over = {}, {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ValidationError(f"override {pair!r} is not KEY=VALUE")
        ns, _, name = key.partition(".")
        if ns == "sim" and name in SIM_KEYS:
            try:
                sim_over[name] = SIM_KEYS[name](value)
            except ValueError as exc:
                raise ValidationError(f"override {key}: {exc}") from exc
        elif ns == "gains" and name in GAIN_KEYS:
            try:
                gain_over[name] = GAIN_KEYS[name](value)
            except ValueError as exc:
                raise ValidationError(f"override {key}: {exc}") from exc
        else:
            raise ValidationError(f"unknown override key {key!r}")
    return sim_over, gain_over


def _resolve_spec(name: str) -> RobotSpecFile:
    registry = builtin_registry()
    if name in registry:
        return registry[name]
    path = Path(name)
    if path.exists():
        from .robots import _parse_document

        text = path.read_text(encoding="utf-8")
        return RobotSpecFile(name=path.stem, text=text,
                             data=_parse_document(text, source=str(path)))
    raise ValidationError(f"unknown robot {name!r}; built-ins: {sorted(registry)}")


def _apply_gain_overrides(spec: RobotSpecFile, controller: str, overrides: dict) -> RobotSpecFile:
    if not overrides:
        return spec
    data = dict(spec.data)
    gains = {k: dict(v) for k, v in (data.get("gains") or {}).items()}
    row = gains.setdefault(controller, {})
    row.update(overrides)
    data["gains"] = gains
    return RobotSpecFile(name=spec.name, text=spec.text, data=data)


def _param_tag(kind: str, value: float) -> str:
    return f"{kind}{value / np.pi:g}pi"


def cmd_run(args) -> int:
    sim_over, gain_over = _parse_overrides(args.set)
    if args.controller not in CONTROLLER_NAMES:
        raise ValidationError(
            f"unknown controller {args.controller!r}; choose from {CONTROLLER_NAMES}")
    spec = _resolve_spec(args.robot)
    spec = _apply_gain_overrides(spec, args.controller, gain_over)

    if args.experiment == "setpoint":
        thetas = experiments.THETA_GRID
        summary, trajs = experiments.setpoint_suite(spec, args.controller,
                                                    thetas=thetas, sim_overrides=sim_over)
        params = thetas
        kind = "theta"
    elif args.experiment == "tracking":
        omegas = experiments.OMEGA_GRID
        summary, trajs = experiments.tracking_suite(spec, args.controller,
                                                    omegas=omegas, sim_overrides=sim_over)
        params = omegas
        kind = "omega"
    else:
        if (args.theta is None) == (args.omega is None):
            raise ValidationError("single experiment needs exactly one of --theta/--omega")
        if args.theta is not None:
            params = (args.theta * np.pi,)
            kind = "theta"
            summary, trajs = experiments.setpoint_suite(spec, args.controller,
                                                        thetas=params, sim_overrides=sim_over)
        else:
            params = (args.omega * np.pi,)
            kind = "omega"
            summary, trajs = experiments.tracking_suite(spec, args.controller,
                                                        omegas=params, sim_overrides=sim_over)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_paths = []
    for value, traj in zip(params, trajs):
        traj.metadata.update({f"override_{k}": v for k, v in sim_over.items()})
        traj.metadata.update({f"override_gains_{k}": v for k, v in gain_over.items()})
        name = f"{summary.robot}_{args.controller}_{args.experiment}_{_param_tag(kind, value)}.csv"
        path = out / name
        experiments.export_trajectory_csv(traj, path)
        csv_paths.append(path)
    summary_path = out / f"{summary.robot}_{args.controller}_{args.experiment}_summary.txt"
    experiments.export_summary([summary], summary_path)
    experiments.write_gnuplot_script(
        csv_paths, out / f"{summary.robot}_{args.controller}_{args.experiment}_plot.gp",
        title=f"{summary.robot} / {args.controller} / {args.experiment}")

    print(_table([summary]))
    print(f"wrote {len(csv_paths)} trajectory files and {summary_path}")
    return EXIT_FAILED_CONVERGENCE if summary.any_failed else EXIT_OK


def _table(summaries) -> str:
    rows = [("Robot", "Controller", "Experiment", "Result")]
    for s in summaries:
        rows.append((s.robot, s.controller, s.experiment, s.cell_text()))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = []
    for i, r in enumerate(rows):
        lines.append("  ".join(c.ljust(widths[j]) for j, c in enumerate(r)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def cmd_list(args) -> int:
    if args.what == "robots":
        for name in sorted(builtin_registry()):
            print(name)
    elif args.what == "controllers":
        for name in CONTROLLER_NAMES:
            print(name)
    else:
        if not args.robot:
            raise ValidationError("list gains requires --robot")
        spec = _resolve_spec(args.robot)
        _, gains = spec.load()
        for ctrl in CONTROLLER_NAMES:
            g = gains[ctrl]
            print(f"{ctrl}: kp={g.kp:g} eps={g.eps:g} w1={g.w1:g} w2={g.w2:g} "
                  f"w3={g.w3:g} w4={g.w4:g} rho={g.rho:g} d_null={g.d_null:g}")
    return EXIT_OK


def cmd_export_spec(args) -> int:
    spec = _resolve_spec(args.robot)
    out = Path(args.out) if args.out else Path(f"{spec.name}.yaml")
    out.write_text(spec.text, encoding="utf-8")
    print(f"wrote {out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "list":
            return cmd_list(args)
        return cmd_export_spec(args)
    except (ParseError, ValidationError, KeyError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def entry() -> None:
    sys.exit(main())
