"""Command-line front end: solve, audit, benchmark, simulate, validate.

Exit codes: 0 success or clean audit, 1 audit violations, 2 input error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from importlib import metadata, resources
from pathlib import Path

import numpy as np

from .benchmark import gap_report, solve_myerson
from .calibrate import (
    StateMechanism,
    audit_ic_ir,
    calibrated_structure,
    outcome_distribution,
    two_stage_to_calibrated,
)
from .disclosure import TwoStageMechanism, optimal_two_stage, split_to_csv, upper_envelope_1d
from .dynamic_sim import expected_dynamic_occupation, simulate_dynamic
from .errors import CalmechError, ConfigError, InputError, SchemaError
from .model import ProblemSpec, default_grid, load_problem, simplex_grid
from .repeated_sim import SimConfig, expected_occupation, martingale_diagnostic, parse_policy, simulate, write_trace
from .stage_design import fmt

EXIT_OK, EXIT_VIOLATIONS, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def resolve_input(path: str) -> Path:
    """Use ``path`` if it exists, else fall back to a bundled file with the same name."""
    p = Path(path)
    if p.exists():
        return p
    name = p.name if p.suffix else p.name + ".json"
    bundled = resources.files("calmech") / "data" / name
    if bundled.is_file():
        return Path(str(bundled))
    raise InputError(f"no such file: {path}", "input")


def _read_json(path: Path, what: str) -> dict:
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON ({exc.msg} at line {exc.lineno})", what) from None


def _grid(problem: ProblemSpec, n: int | None) -> np.ndarray:
    if problem.n_states == 2:
        return default_grid(problem, n or 601)
    return simplex_grid(problem.n_states, n or 20)


def _load_mechanism_doc(path: Path, problem: ProblemSpec) -> StateMechanism | TwoStageMechanism:
    doc = _read_json(path, "mechanism")
    if "atoms" in doc:
        try:
            return TwoStageMechanism.from_dict(doc, problem)
        except KeyError as exc:
            raise SchemaError("missing field", f"mechanism.{exc.args[0]}") from None
    if "table" in doc:
        mech = StateMechanism.from_dict(doc)
        mech.check_against(problem)
        return mech
    raise SchemaError("expected a state mechanism (table) or a two-stage mechanism (atoms)", "mechanism")


class Run:
    """Output directory bookkeeping plus the append-only manifest."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.written: list[Path] = []
        self.start = time.perf_counter()

    def path(self, name: str) -> Path:
        p = self.out / name
        self.written.append(p)
        return p

    def write_text(self, name: str, text: str) -> None:
        self.path(name).write_text(text)

    def write_json(self, name: str, obj) -> None:
        self.path(name).write_text(json.dumps(obj, indent=1) + "\n")

    def discard(self) -> None:
        for p in self.written:
            p.unlink(missing_ok=True)

    def manifest(self, status: int) -> None:
        a = self.args
        inputs = [getattr(a, k) for k in ("problem", "mechanism", "reference") if getattr(a, k, None)]
        params = {k: getattr(a, k) for k in ("grid", "horizon", "policy", "mode") if getattr(a, k, None) is not None}
        rec = {
            "command": a.command,
            "inputs": inputs,
            "parameters": params,
            "seed": getattr(a, "seed", None),
            "out": str(self.out),
            "version": _version(),
            "seconds": round(time.perf_counter() - self.start, 6),
            "exit": status,
        }
        with open(self.out / "manifest.jsonl", "a") as fh:
            fh.write(json.dumps(rec) + "\n")


def _summary_solve(problem: ProblemSpec, ts: TwoStageMechanism) -> str:
    lines = [f"problem: {problem.name or '(unnamed)'}", f"cav W(prior) = {fmt(ts.value)}", f"split size: {len(ts.split.weights)}"]
    for i, (atom, wt, mech) in enumerate(zip(ts.split.atoms, ts.split.weights, ts.mechanisms)):
        belief = ", ".join(f"{s}={fmt(x)}" for s, x in zip(problem.states, atom))
        lines.append(f"atom {i}: weight {fmt(wt)} belief ({belief})")
        for k, t in enumerate(problem.types):
            lot = ", ".join(f"{problem.allocations[a]}:{fmt(p)}" for a, p in enumerate(mech.alloc[k]) if p > 0)
            lines.append(f"  type {t}: [{lot}] transfer {fmt(mech.transfer_vector()[k])}")
        if problem.has_transfers:
            price = mech.posted_price(problem)
            if price is not None:
                lines.append(f"  posted price {fmt(price)}")
    return "\n".join(lines) + "\n"


def cmd_solve(args: argparse.Namespace, run: Run) -> int:
    problem = load_problem(resolve_input(args.problem))
    ts = optimal_two_stage(problem, _grid(problem, args.grid))
    ts.curve.to_csv(run.path("value_curve.csv"), problem.states)
    if problem.n_states == 2:
        upper_envelope_1d(ts.curve).to_csv(run.path("envelope.csv"))
    split_to_csv(ts, run.path("split.csv"), problem.states)
    run.write_json("split.json", {"atoms": ts.split.atoms.tolist(), "weights": ts.split.weights.tolist(), "experiment": ts.experiment.rows.tolist()})
    run.write_json("mechanisms.json", ts.to_dict())
    summary = _summary_solve(problem, ts)
    run.write_text("summary.txt", summary)
    print(summary, end="")
    return EXIT_OK


def cmd_audit(args: argparse.Namespace, run: Run) -> int:
    problem = load_problem(resolve_input(args.problem))
    mech = _load_mechanism_doc(resolve_input(args.mechanism), problem)
    if isinstance(mech, TwoStageMechanism):
        mech = two_stage_to_calibrated(problem, mech)
    structure = calibrated_structure(problem, mech)
    report = audit_ic_ir(problem, mech, structure)
    run.write_json("structure.json", structure.to_dict(problem))
    text = report.render(problem, structure)
    run.write_text("audit.txt", text)
    print(text, end="")
    return EXIT_OK if report.clean else EXIT_VIOLATIONS


def cmd_benchmark(args: argparse.Namespace, run: Run) -> int:
    problem = load_problem(resolve_input(args.problem))
    rep = gap_report(problem, _grid(problem, args.grid))
    run.write_text("benchmark.txt", rep.render())
    with open(run.path("benchmark.csv"), "w") as fh:
        fh.write("w_my,w_cal,gap,state_by_state_monotone\n")
        fh.write(f"{fmt(rep.w_my)},{fmt(rep.w_cal)},{fmt(rep.gap)},{rep.state_by_state_monotone}\n")
    sol = solve_myerson(problem)
    doc = {"value": sol.value, "alloc": sol.alloc.tolist()}
    if sol.transfers is not None:
        doc["transfers"] = sol.transfers.tolist()
    run.write_json("myerson.json", doc)
    print(rep.render(), end="")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace, run: Run) -> int:
    problem = load_problem(resolve_input(args.problem))
    mech = _load_mechanism_doc(resolve_input(args.mechanism), problem)
    if args.horizon is None or args.horizon < 1:
        raise ConfigError("horizon must be a positive integer", "horizon")
    reference = None
    if args.reference:
        reference = TwoStageMechanism.from_dict(_read_json(resolve_input(args.reference), "reference"), problem)
    elif isinstance(mech, TwoStageMechanism):
        reference = mech
    lines = [f"mode: {args.mode}", f"horizon: {args.horizon}", f"seed: {args.seed}"]

    if args.mode == "repeated":
        if isinstance(mech, TwoStageMechanism):
            mech = two_stage_to_calibrated(problem, mech)
        policy = parse_policy(args.policy)
        cfg = SimConfig(args.horizon, args.seed, policy, record_beliefs=True)
        trace = simulate(problem, mech, cfg)
        write_trace(trace, run.path("trace.log"), problem)
        occ, traces = expected_occupation(problem, mech, cfg)
        lines.append(f"policy: {args.policy}")
        lines.append(f"sampled state: {problem.states[trace.state]}, device {mech.device[trace.device]}")
        lines.append(f"participation rate (sampled run): {fmt(trace.participated.mean())}")
        lines.append(f"agent payoff (mixture over hidden cells): {fmt(occ.agent_payoff(problem))}")
        mg = martingale_diagnostic(traces)
        lines.append(f"martingale: max deviation {fmt(mg.max_deviation)}, max z {fmt(mg.max_z)}, buckets {mg.buckets_used} used / {mg.buckets_skipped} skipped")
    else:
        if not isinstance(mech, TwoStageMechanism):
            raise SchemaError("dynamic mode needs a two-stage mechanism file", "mechanism")
        cfg = SimConfig(args.horizon, args.seed)
        res = simulate_dynamic(problem, mech, cfg)
        write_trace(res.trace, run.path("trace.log"), problem)
        occ, _, runs = expected_dynamic_occupation(problem, mech, cfg)
        lines.append(f"prefix length: {res.prefix_length}")
        lines += [f"flag: {f}" for f in res.flags]
        for r in runs:
            dev = float(np.max(np.abs(r.report_frequency() - problem.type_pmf[r.trace.state])))
            lines.append(f"state {problem.states[r.trace.state]} atom {r.trace.device}: report frequency deviation {fmt(dev)}, blocks {len(r.blocks)}")
        with open(run.path("blocks.csv"), "w") as fh:
            fh.write("n,L,N," + ",".join(f"freq1_{t}" for t in problem.types) + "," + ",".join(f"freq2_{t}" for t in problem.types) + "\n")
            for b in res.blocks:
                fh.write(f"{b.n},{b.L},{b.N}," + ",".join(fmt(x) for x in b.freq1) + "," + ",".join(fmt(x) for x in b.freq2) + "\n")

    occ.to_csv(run.path("occupation.csv"), problem)
    if reference is not None:
        lines.append(f"TV to analytic outcome distribution: {fmt(occ.tv(outcome_distribution(problem, reference)))}")
    text = "\n".join(lines) + "\n"
    run.write_text("diagnostics.txt", text)
    print(text, end="")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace, run: Run) -> int:
    problem = load_problem(resolve_input(args.problem))
    print(f"ok: {problem.n_states} states, {problem.n_types} types, {problem.n_alloc} allocations")
    if args.mechanism:
        _load_mechanism_doc(resolve_input(args.mechanism), problem)
        print("ok: mechanism matches the problem")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="calmech", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("problem", help="problem JSON file")
        p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("solve", help="optimal disclosure plus per-atom mechanisms")
    common(p)
    p.add_argument("--grid", type=int, help="belief grid size (two states) or steps per axis")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("audit", help="signal-by-signal IC/IR audit of a state mechanism")
    common(p)
    p.add_argument("mechanism")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("benchmark", help="Myersonian benchmark and gap report")
    common(p)
    p.add_argument("--grid", type=int)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("simulate", help="repeated or dynamic simulation")
    common(p)
    p.add_argument("mechanism", help="state mechanism or two-stage mechanism JSON")
    p.add_argument("--mode", choices=("repeated", "dynamic"), default="repeated")
    p.add_argument("--horizon", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", default="learning:100", help="truthful, myopic or learning:N")
    p.add_argument("--reference", help="two-stage mechanism JSON for the TV comparison")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="load and check input files")
    common(p)
    p.add_argument("mechanism", nargs="?")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    run = Run(args)
    try:
        status = args.func(args, run)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_INPUT
    except (CalmechError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        status = EXIT_NUMERIC
    if status >= EXIT_INPUT:
        run.discard()
    run.manifest(status)
    return status


if __name__ == "__main__":
    sys.exit(main())
