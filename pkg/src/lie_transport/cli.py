import os
import json
import time
import logging
import argparse
from typing import Any, Callable
from pathlib import Path
from dataclasses import replace

import numpy as np
from dotenv import load_dotenv

from lie_transport import __version__
from lie_transport.dumps import FieldDump, write_field_bin, write_field_csv
from lie_transport.errors import LieTransportError
from lie_transport.config import RunConfig, load_config
from lie_transport.moduli import ModuliChart, family_record
from lie_transport.experiment import Experiment
from lie_transport.utils.miscs import to_builtin
from lie_transport.utils.types import AuditStrategy
from lie_transport.utils.constants import EXIT_OK, DPHI_EPS, EXIT_CONFIG

logger = logging.getLogger(__name__)

Handler = Callable[[Experiment, argparse.Namespace, Path], dict[str, Any]]


def _write_json(path: Path, data: Any) -> Path:
    path.write_text(json.dumps(to_builtin(data), indent=2, sort_keys=True))
    return path


def _dump(out: Path, name: str, field: Any, fmt: str) -> list[str]:
    paths = []
    if fmt in ("csv", "both"):
        paths.append(str(write_field_csv(out / f"{name}.csv", field)))
    if fmt in ("bin", "both"):
        paths.append(str(write_field_bin(out / f"{name}.bin", field)))
    return paths


def _dump_chart(
    out: Path, prefix: str, chart: ModuliChart, fmt: str
) -> list[str]:
    state = chart.state
    fields = {
        "phi": chart.phi,
        "T": FieldDump.from_nodes(chart.grid, state.T),
        "w": FieldDump.symmetric(chart.grid, state.w),
        "theta": state.theta,
    }
    paths = []
    for name, field in fields.items():
        paths += _dump(out, f"{prefix}{name}", field, fmt)
    return paths


def cmd_verify(
    exp: Experiment, args: argparse.Namespace, out: Path
) -> dict[str, Any]:
    result = exp.verify()
    return {"metrics": result["checks"], "passed": result["passed"]}


def cmd_solve(
    exp: Experiment, args: argparse.Namespace, out: Path
) -> dict[str, Any]:
    chart = exp.solve()
    return {
        "metrics": exp.chart_metrics(chart),
        "artifacts": _dump_chart(out, "", chart, args.format),
        "passed": chart.converged,
    }


def cmd_deform(
    exp: Experiment, args: argparse.Namespace, out: Path
) -> dict[str, Any]:
    try:
        charts = exp.deform(args.direction, args.steps, args.step_size)
    except LieTransportError as e:
        if isinstance(e.partial, list):
            _write_json(out / "family.json", family_record(e.partial))
        raise
    artifacts = [str(_write_json(out / "family.json", family_record(charts)))]
    if args.dump_steps:
        for k, chart in enumerate(charts):
            artifacts += _dump_chart(out, f"step{k:03d}_", chart, args.format)
    return {
        "metrics": {"steps": len(charts) - 1, "direction": args.direction},
        "artifacts": artifacts,
        "passed": all(c.converged for c in charts),
    }


def cmd_audit(
    exp: Experiment, args: argparse.Namespace, out: Path
) -> dict[str, Any]:
    report = exp.audit(
        k_max=args.k_max,
        samples=args.samples,
        seed=args.seed,
        strategy=args.strategy,
    )
    data = report.to_dict()
    return {
        "metrics": data,
        "artifacts": [str(_write_json(out / "audit.json", data))],
        "passed": True,
    }


def cmd_lb_check(
    exp: Experiment, args: argparse.Namespace, out: Path
) -> dict[str, Any]:
    reports = exp.lb_check(args.sizes)
    ratios = [
        prev["l2"] / cur["l2"] if cur["l2"] > 0.0 else float("inf")
        for prev, cur in zip(reports, reports[1:])
    ]
    table = np.array(
        [[r["sizes"][0], r["l2"], r["linf"], r["lhs_l2"]] for r in reports]
    )
    path = out / "lb_refinement.csv"
    np.savetxt(
        path,
        table,
        delimiter=",",
        header="size,l2,linf,lhs_l2",
        comments="",
        fmt="%.17g",
    )
    return {
        "metrics": {"reports": reports, "ratios": ratios},
        "artifacts": [str(path)],
        "passed": True,
    }


def cmd_dphi_check(
    exp: Experiment, args: argparse.Namespace, out: Path
) -> dict[str, Any]:
    report = exp.dphi_check(eps_list=tuple(args.eps))
    return {
        "metrics": report,
        "artifacts": [str(_write_json(out / "dphi.json", report))],
        "passed": True,
    }


def cmd_hodge_info(
    exp: Experiment, args: argparse.Namespace, out: Path
) -> dict[str, Any]:
    basis = exp.hodge_info(args.metric)
    artifacts = []
    for k, form in enumerate(basis.forms):
        artifacts += _dump(out, f"harmonic{k + 1}", form, args.format)
    print(
        f"eigenvalues: {basis.eigenvalues}\ngap ratio: {basis.gap_ratio:.6e}"
    )
    return {"metrics": basis.info(), "artifacts": artifacts, "passed": True}


COMMANDS: dict[str, Handler] = {
    "verify": cmd_verify,
    "solve": cmd_solve,
    "deform": cmd_deform,
    "audit": cmd_audit,
    "lb-check": cmd_lb_check,
    "dphi-check": cmd_dphi_check,
    "hodge-info": cmd_hodge_info,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run config")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--log-level", default=None)
    common.add_argument(
        "--format", choices=("csv", "bin", "both"), default="both"
    )
    common.add_argument(
        "--tau", type=float, nargs="+", help="cohomology coordinates"
    )

    parser = argparse.ArgumentParser(
        prog="lie-transport",
        description="Construct, deform and audit Lie solutions on flat tori.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("verify", parents=[common], help="invariant suite")
    sub.add_parser("solve", parents=[common], help="solve theta = 0")

    p = sub.add_parser("deform", parents=[common], help="moduli family")
    p.add_argument("--direction", type=int, default=1)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--dump-steps", action="store_true")

    p = sub.add_parser("audit", parents=[common], help="cyclic monotonicity")
    p.add_argument("--k-max", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument(
        "--strategy", choices=[s.value for s in AuditStrategy], default=None
    )

    p = sub.add_parser("lb-check", parents=[common], help="LB identity")
    p.add_argument("--sizes", type=int, nargs="+", default=None)

    p = sub.add_parser("dphi-check", parents=[common], help="DPhi sweep")
    p.add_argument("--eps", type=float, nargs="+", default=list(DPHI_EPS))

    p = sub.add_parser("hodge-info", parents=[common], help="harmonic basis")
    p.add_argument("--metric", choices=("flat", "state"), default="state")
    return parser


def _configure_logging(level: str | None) -> None:
    load_dotenv(Path(".env.local"))
    name = (level or os.getenv("LT_LOG_LEVEL", "WARNING")).upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.log_level)

    start = time.perf_counter()
    summary: dict[str, Any] = {"command": args.command, "version": __version__}
    out: Path | None = None
    try:
        config = load_config(args.config) if args.config else RunConfig()
        if args.tau is not None:
            config = RunConfig.from_dict({**config.to_dict(), "tau": args.tau})
        if args.out is not None:
            config = replace(config, out=str(args.out))
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        summary["config_hash"] = config.digest
        summary["config"] = config.to_dict()

        result = COMMANDS[args.command](Experiment(config), args, out)
        summary.update(result)
        summary.setdefault("artifacts", [])
        code = EXIT_OK if result.get("passed", True) else EXIT_CONFIG
    except LieTransportError as e:
        logger.error(f"{args.command} failed: {e}")
        summary.update(
            {"passed": False, "error": type(e).__name__, "message": str(e)}
        )
        if e.report is not None:
            summary["report"] = e.report
        code = e.exit_code

    summary["exit_code"] = code
    summary["timings"] = {"wall_seconds": time.perf_counter() - start}
    if out is not None:
        summary.setdefault("artifacts", [])
        summary["artifacts"].append(str(out / "summary.json"))
        _write_json(out / "summary.json", summary)
    return code
