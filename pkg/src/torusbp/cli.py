"""Command-line entry point: ``torusbp <command> [flags]``.

Each invocation prints one result record (JSON line, or CSV preceded by a
``# `` metadata line).  Exit codes: 0 success, 1 usage error, 2 failed
check or invalid input file, 3 finished but some runs hit the round cap.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import configio, experiments
from .dynamics import RuleError, default_max_rounds, evolve, parse_rule, step
from .lattice import AmbiguousWrapError, Configuration, TorusShape
from .scaling import enumerate_arrangements, lemma5_experiment
from .structures import (IndeterminateError, InvariantViolation, NodeSet, WitnessConstructionError,
                         cluster_black_nodes, find_w_robust_witnesses, is_robust, max_extinction_time,
                         min_eternal_size, random_robust_set)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_FAILED, EXIT_TRUNCATED = 0, 1, 2, 3
OUTPUT_DIR_ENV = "TORUSBP_OUTPUT_DIR"
EVENTS = [e.value for e in experiments.Event]

log = logging.getLogger("torusbp")


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = _Parser(add_help=False)
    p.add_argument("--d", type=int)
    p.add_argument("--L", type=int)
    p.add_argument("--rule", default="two-way", help="bp | two-way | recovery | general:r,r' | modified | majority")
    p.add_argument("--r", type=int)
    p.add_argument("--p", type=float, nargs="+")
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int, default=400)
    p.add_argument("--max-rounds", type=int)
    p.add_argument("--out", choices=["json", "csv"], default="json")
    p.add_argument("--config", help="path to a configuration file, or inline JSON")
    p.add_argument("--ci", action="store_true", help="require an explicit --seed for randomized commands")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="torusbp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)
    sub.add_parser("step", parents=[common], help="one synchronous round")
    sub.add_parser("run", parents=[common], help="evolve to the limit cycle")
    sp = sub.add_parser("sweep", parents=[common], help="event frequency at each --p")
    sp.add_argument("--event", choices=EVENTS, default="BlackSurvives")
    sp = sub.add_parser("threshold", parents=[common], help="coupled bisection for p50")
    sp.add_argument("--event", choices=EVENTS, default="BlackSurvives")
    sp.add_argument("--tolerance", type=float, default=0.02)
    sp = sub.add_parser("scaling-fit", parents=[common], help="p50 over several L and the log-log slope")
    sp.add_argument("--sizes", type=int, nargs="+", required=True)
    sp.add_argument("--event", choices=EVENTS, default="BlackSurvives")
    sp.add_argument("--tolerance", type=float, default=0.02)
    sp = sub.add_parser("min-eternal", parents=[common], help="smallest black-eternal set")
    sp.add_argument("--bound", type=int, required=True)
    sp.add_argument("--window-radius", type=int)
    sp = sub.add_parser("extinction", parents=[common], help="worst-case extinction time of k blacks")
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--window-radius", type=int)
    sp.add_argument("--stop-at-survivor", action="store_true")
    sub.add_parser("cluster", parents=[common], help="merge black components into separated boxes")
    sp = sub.add_parser("witnesses", parents=[common], help="disjoint white-robust sets meeting a black-robust set")
    sp.add_argument("--boxes", type=int, default=2)
    sp = sub.add_parser("lemma5", parents=[common], help="rounds for a square to fill from r neighbors")
    sp.add_argument("--budget", type=int)
    return parser


# ---------------------------------------------------------------- helpers

def _need(args, *names):
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise UsageError(f"{args.command} needs " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _seed(args) -> int:
    if args.seed is None:
        if args.ci:
            raise UsageError(f"--ci: {args.command} is randomized and needs --seed")
        args.seed = int(np.random.SeedSequence().entropy % 2**64)
        log.info("no --seed given, using %d", args.seed)
    if not 0 <= args.seed < 2**64:
        raise UsageError(f"--seed {args.seed} is not a 64-bit unsigned integer")
    return args.seed


def _single_p(args) -> float:
    if args.p is None or len(args.p) != 1:
        raise UsageError(f"{args.command} needs exactly one --p value")
    p = args.p[0]
    if not 0 <= p <= 1:
        raise UsageError(f"--p {p} outside [0, 1]")
    return p


def _shape(args) -> TorusShape:
    _need(args, "d", "L")
    try:
        return TorusShape(args.d, args.L)
    except ValueError as e:
        raise UsageError(str(e)) from None


def _rule(args, shape: TorusShape):
    try:
        rule = parse_rule(args.rule, args.r)
        rule.validate(shape)
    except (RuleError, ValueError) as e:
        raise UsageError(f"--rule {args.rule}: {e}") from None
    return rule


def _input_config(args) -> Configuration:
    """Configuration from --config, or a random one from --p and --seed."""
    if args.config is not None:
        try:
            c = configio.load_config(args.config)
        except OSError as e:
            raise UsageError(f"--config {args.config}: {e.strerror}") from None
        for name, val in (("d", c.shape.d), ("L", c.shape.L)):
            given = getattr(args, name)
            if given is not None and given != val:
                raise UsageError(f"--{name} {given} disagrees with the configuration file ({val})")
            setattr(args, name, val)
        args.config = json.dumps(configio.encode_config(c), separators=(",", ":"))
        return c
    shape = _shape(args)
    p = _single_p(args)
    return experiments.random_config(shape, p, _seed(args))


def _max_rounds(args, shape):
    return default_max_rounds(shape) if args.max_rounds is None else args.max_rounds


def _row(pt: experiments.SweepPoint) -> dict:
    return {"p": pt.p, "frequency": pt.frequency, "ci_low": pt.ci_low, "ci_high": pt.ci_high,
            "hits": pt.hits, "valid": pt.valid, "truncated": pt.truncated}


# ---------------------------------------------------------------- commands

def cmd_step(args):
    c = _input_config(args)
    rule = _rule(args, c.shape)
    nxt = step(c, rule)
    return {"config": configio.encode_config(nxt), "black": nxt.popcount()}, 0


def cmd_run(args):
    c = _input_config(args)
    rule = _rule(args, c.shape)
    out = evolve(c, rule, _max_rounds(args, c.shape))
    payload = {
        "classification": None if out.classification is None else out.classification.value,
        "period": out.period, "consensus_time": out.consensus_time, "truncated": out.truncated,
        "rounds": out.rounds, "cycle": [configio.encode_config(x) for x in out.cycle],
    }
    return payload, int(out.truncated)


def _sweep_spec(args, probabilities):
    shape = _shape(args)
    rule = _rule(args, shape)
    if args.trials < 1:
        raise UsageError(f"--trials {args.trials} must be >= 1")
    try:
        return experiments.SweepSpec(shape, rule, probabilities, args.trials, _seed(args),
                                     args.max_rounds, experiments.Event(args.event))
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_sweep(args):
    _need(args, "p")
    rows = [_row(pt) for pt in experiments.run_sweep(_sweep_spec(args, args.p))]
    return {"event": args.event, "rows": rows}, sum(r["truncated"] for r in rows)


def cmd_threshold(args):
    if args.p is not None and len(args.p) != 2:
        raise UsageError("threshold takes --p LO HI as the bracket (or no --p for (L**-d, 1))")
    spec = _sweep_spec(args, args.p or ())
    try:
        est = experiments.estimate_threshold(spec, args.tolerance, tuple(args.p) if args.p else None)
    except (experiments.BracketError, experiments.MonotonicityError) as e:
        raise CheckFailed(str(e)) from None
    payload = {"event": args.event, "p50": est.p50, "lower": est.lower, "upper": est.upper,
               "trials": est.trials, "rows": [_row(pt) for pt in est.trace]}
    return payload, est.truncated


def cmd_scaling_fit(args):
    _need(args, "d", "r")
    if args.p is not None:
        raise UsageError("scaling-fit chooses its own brackets; drop --p")
    if len(set(args.sizes)) < 3 or min(args.sizes) < 2:
        raise UsageError("--sizes needs at least 3 distinct side lengths >= 2")
    rule = _rule(args, TorusShape(args.d, min(args.sizes)))
    try:
        run = experiments.measure_scaling(args.d, args.r, args.sizes, args.trials, _seed(args),
                                          experiments.Event(args.event), args.tolerance, rule)
    except ValueError as e:
        raise UsageError(str(e)) from None
    except (experiments.BracketError, experiments.MonotonicityError) as e:
        raise CheckFailed(str(e)) from None
    f = run.fit
    rows = [{"L": L, "p50": e.p50, "lower": e.lower, "upper": e.upper} for L, e in run.estimates.items()]
    payload = {"event": args.event, "slope": f.slope, "intercept": f.intercept, "residual": f.residual,
               "predicted": f.predicted, "deviation": f.deviation, "rows": rows}
    return payload, sum(e.truncated for e in run.estimates.values())


def cmd_min_eternal(args):
    shape = _shape(args)
    rule = _rule(args, shape)
    try:
        res = min_eternal_size(shape, rule, args.bound, args.window_radius, args.max_rounds)
    except IndeterminateError as e:
        return {"min_size": None, "witness": None, "subsets_checked": None, "error": str(e)}, 1
    except ValueError as e:
        raise UsageError(str(e)) from None
    witness = None if res.witness is None else [list(v) for v in res.witness]
    return {"min_size": res.min_size, "witness": witness, "subsets_checked": res.subsets_checked}, 0


def cmd_extinction(args):
    _need(args, "d", "r")
    cap = 1000 if args.max_rounds is None else args.max_rounds
    try:
        res = max_extinction_time(args.d, args.r, args.k, args.window_radius, cap, args.stop_at_survivor)
    except ValueError as e:
        raise UsageError(str(e)) from None
    ex = None if res.survivor_example is None else [list(v) for v in res.survivor_example]
    payload = {"max_time": res.max_time, "survivor": res.survivor, "survivor_example": ex,
               "placements": res.placements, "capped": res.capped, "exhaustive": res.exhaustive,
               "torus_side": res.torus_side}
    return payload, res.capped


def cmd_cluster(args):
    c = _input_config(args)
    _need(args, "r")
    try:
        rep = cluster_black_nodes(c, args.r)
    except AmbiguousWrapError as e:
        raise CheckFailed(f"bounding boxes are ambiguous on this torus: {e}") from None
    except InvariantViolation as e:
        raise CheckFailed(str(e)) from None
    rects = [{"start": list(rc.start), "lengths": list(rc.lengths), "black": n}
             for rc, n in zip(rep.rects, rep.black_counts)]
    return {"rects": rects, "min_pairwise_distance": rep.min_pairwise_distance,
            "phase1_certificate": rep.phase1_certificate, "merges": rep.merges}, 0


def cmd_witnesses(args):
    _need(args, "r")
    if args.config is not None:
        c = _input_config(args)
        s = NodeSet.black_of(c)
    else:
        shape = _shape(args)
        if not 1 <= args.r <= shape.d:
            raise UsageError(f"--r {args.r} must lie in [1, d={shape.d}]")
        s = random_robust_set(shape, args.r, experiments.philox(_seed(args)), args.boxes)
        args.config = json.dumps(configio.encode_config(s.configuration()), separators=(",", ":"))
    if len(s) == 0 or not is_robust(s, args.r, "black"):
        raise CheckFailed(f"input set is not ({args.r},b)-robust")
    try:
        fam = find_w_robust_witnesses(s, args.r)
    except WitnessConstructionError as e:
        raise CheckFailed(f"witness construction failed: {e}") from None
    return {"witnesses": [[list(v) for v in w.coords()] for w in fam.witnesses],
            "count": len(fam.witnesses), "branches": fam.branches}, 0


def cmd_lemma5(args):
    _need(args, "d", "r", "L")
    if not 1 <= args.r <= args.d:
        raise UsageError(f"--r {args.r} must lie in [1, d={args.d}]")
    if args.L % 2 or args.L < 8:
        raise UsageError(f"--L {args.L} must be even and >= 8")
    rows = []
    for arr in enumerate_arrangements(args.d, args.r):
        res = lemma5_experiment(args.d, args.r, args.L, arr, args.budget)
        rows.append({"arrangement": " ".join(f"{j}{'+' if s > 0 else '-'}" for j, s in arr),
                     "rounds": res.rounds, "first_round": res.first_round, "budget": res.budget})
    ok = all(r["rounds"] is not None for r in rows)
    if not ok:
        raise CheckFailed("center square not occupied within budget for: "
                          + ", ".join(r["arrangement"] for r in rows if r["rounds"] is None))
    return {"all_within_budget": ok, "rows": rows}, 0


COMMANDS = {
    "step": cmd_step, "run": cmd_run, "sweep": cmd_sweep, "threshold": cmd_threshold,
    "scaling-fit": cmd_scaling_fit, "min-eternal": cmd_min_eternal, "extinction": cmd_extinction,
    "cluster": cmd_cluster, "witnesses": cmd_witnesses, "lemma5": cmd_lemma5,
}


# ---------------------------------------------------------------- records

def _echo(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "ci"}


def echo_to_argv(echo: dict) -> list[str]:
    """Command line that reproduces a record from its parameter echo."""
    argv = [echo["command"]]
    for k, v in echo.items():
        if k == "command" or v is None or v is False:
            continue
        flag = "--" + k.replace("_", "-")
        if v is True:
            argv.append(flag)
        elif isinstance(v, list):
            argv += [flag] + [repr(x) if isinstance(x, float) else str(x) for x in v]
        else:
            argv += [flag, repr(v) if isinstance(v, float) else str(v)]
    return argv


def _flat(v):
    return v if v is None or isinstance(v, (bool, int, float, str)) else json.dumps(v, separators=(",", ":"))


def csv_rows(payload: dict) -> list[dict]:
    """Flatten a payload: one row per entry of ``rows`` (scalar fields repeated), else one row."""
    top = {k: _flat(v) for k, v in payload.items() if k != "rows"}
    if "rows" in payload:
        return [{**top, **{k: _flat(v) for k, v in row.items()}} for row in payload["rows"]] or [top]
    return [top]


def render(record: dict, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(record, separators=(",", ":")) + "\n"
    meta = {k: v for k, v in record.items() if k != "payload"}
    buf = io.StringIO()
    buf.write("# " + json.dumps(meta, separators=(",", ":")) + "\n")
    rows = csv_rows(record["payload"])
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: "" if v is None else (json.dumps(v) if isinstance(v, (bool, float)) else v)
                    for k, v in row.items()})
    return buf.getvalue()


def parse_csv_record(text: str) -> tuple[dict, list[dict]]:
    """Inverse of the CSV rendering: (metadata, rows with JSON-decoded cells)."""
    first, rest = text.split("\n", 1)
    meta = json.loads(first[2:])
    rows = []
    for raw in csv.DictReader(io.StringIO(rest)):
        row = {}
        for k, v in raw.items():
            if v == "":
                row[k] = None
                continue
            try:
                row[k] = json.loads(v)
            except json.JSONDecodeError:
                row[k] = v
        rows.append(row)
    return meta, rows


def execute(argv: list[str]) -> tuple[int, dict | None, str]:
    """Run one command.  Returns (exit code, record or None, diagnostic message)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        return EXIT_USAGE, None, f"usage error: {e}"
    t0 = time.perf_counter()
    try:
        payload, truncated = COMMANDS[args.command](args)
    except UsageError as e:
        return EXIT_USAGE, None, f"usage error: {e}"
    except configio.ConfigError as e:
        return EXIT_FAILED, None, f"invalid configuration ({type(e).__name__}): {e}"
    except CheckFailed as e:
        return EXIT_FAILED, None, f"check failed: {e}"
    record = {
        "schema_version": SCHEMA_VERSION,
        "command": args.command,
        "echo": _echo(args),
        "generator": experiments.GENERATOR,
        "payload": payload,
        "wall_time": round(time.perf_counter() - t0, 6),
        "truncated": int(truncated),
    }
    code = EXIT_TRUNCATED if truncated else EXIT_OK
    return code, record, ""


def _write_copy(record: dict, text: str, fmt: str):
    out_dir = os.environ.get(OUTPUT_DIR_ENV)
    if not out_dir:
        return
    key = hashlib.sha256(json.dumps(record["echo"], sort_keys=True).encode()).hexdigest()[:12]
    path = Path(out_dir) / f"{record['command']}-{key}.{fmt}"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    argv = sys.argv[1:] if argv is None else argv
    if any(a in ("-h", "--help") for a in argv):
        try:
            build_parser().parse_args(argv)
        except SystemExit as e:
            return int(e.code or 0)
    code, record, msg = execute(argv)
    if msg:
        print(msg, file=sys.stderr)
    if record is not None:
        fmt = record["echo"]["out"]
        text = render(record, fmt)
        sys.stdout.write(text)
        _write_copy(record, text, fmt)
        if record["truncated"]:
            print(f"{record['truncated']} runs hit the round cap", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
