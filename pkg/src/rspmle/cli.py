"""Command-line interface.

Every command that writes to a file also writes ``<out>.manifest.json``
recording its arguments; ``rspmle replay`` re-runs a manifest and produces
the same bytes.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import math
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .complete import mle_beta_complete
from .graph import (
    CostField,
    GraphError,
    build_grid,
    gaussian_landscape,
    load_edge_list,
    load_raster,
    make_rng,
    save_edge_list,
    save_raster,
)
from .incomplete import (
    BinomialObservationModel,
    InconsistentDataError,
    SeriesCapError,
    SeriesUnderflowError,
    log_likelihood_incomplete,
    mle_beta_incomplete,
    observation_log_likelihood,
)
from .rsp import BracketError, RspContext, RspError, expected_node_visits
from .sampler import (
    Observation,
    SamplingError,
    iter_observations,
    read_jsonl,
    sample_pairs,
    sample_path,
    write_jsonl,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
ORACLE_MAX_NODES = 12


class UsageError(ValueError):
    pass


# --- argument helpers ----------------------------------------------------


def _floats(text: str, n: int | None = None) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} numbers, got {text!r}")
    return vals


def _bracket(text: str) -> tuple[float, float]:
    lo, hi = _floats(text, 2)
    if not 0 < lo < hi:
        raise argparse.ArgumentTypeError("bracket needs 0 < lo < hi")
    return lo, hi


def _shape(text: str) -> tuple[int, int]:
    try:
        r, c = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected rows,cols, got {text!r}") from None
    return r, c


def _pairs(text: str) -> list[tuple[int, int]]:
    out = []
    for item in text.split(","):
        try:
            s, t = item.split(":")
            out.append((int(s), int(t)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"pairs look like 's:t,s:t', got {text!r}") from None
    return out


def _pmu(text: str) -> float:
    p = float(text)
    if not 0 < p < 1:
        raise argparse.ArgumentTypeError("--pmu must lie in (0, 1)")
    return p


# --- output --------------------------------------------------------------


class Output:
    """Collects a command's text output, then writes it to a file or stdout."""

    def __init__(self, path: str | None):
        self.path = path
        self.buf = io.StringIO()

    def write(self, text: str) -> None:
        self.buf.write(text)

    def close(self, stdout) -> None:
        if self.path:
            Path(self.path).write_text(self.buf.getvalue(), encoding="utf-8")
        else:
            stdout.write(self.buf.getvalue())


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_manifest(args: argparse.Namespace, argv: Sequence[str], outputs: list[str]) -> None:
    if not outputs:
        return
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "cwd": os.getcwd(),
        "parameters": {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)},
        "seed": getattr(args, "seed", None),
        "inputs": [p for p in (getattr(args, "graph", None), getattr(args, "trajectories", None), getattr(args, "raster", None)) if p],
        "outputs": outputs,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "version": __version__,
    }
    Path(outputs[0] + ".manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2, default=list) + "\n", encoding="utf-8")


# --- commands ------------------------------------------------------------


def cmd_gen(args, stdout) -> list[str]:
    if args.kind == "landscape":
        field = gaussian_landscape(
            args.rows, args.cols, n_low=args.n_low, n_high=args.n_high,
            base_cost=args.base_cost, amplitude=args.amplitude, width=args.width, seed=args.seed,
        )
    elif args.raster_in:
        field = CostField(load_raster(args.raster_in))
    else:
        field = CostField.uniform(args.rows, args.cols, args.cost)
    graph = build_grid(field.rows, field.cols, field, diagonals=not args.no_diagonals)
    out = Output(args.out)
    buf = io.StringIO()
    save_edge_list(graph, buf)
    out.write(buf.getvalue())
    out.close(stdout)
    written = [args.out] if args.out else []
    if args.raster:
        save_raster(field.values, args.raster)
        written.append(args.raster)
    return written


def _load_graph(args):
    return load_edge_list(args.graph, allow_sinks=args.allow_sinks)


def cmd_simulate(args, stdout) -> list[str]:
    graph = _load_graph(args)
    if args.n_paths < 1:
        raise UsageError("--n-paths must be >= 1")
    rng = make_rng(args.seed)
    ctx = RspContext(graph, args.beta)
    pairs = sample_pairs(graph, args.n_paths, rng, min_hops=args.min_hops)
    trajs = [sample_path(ctx, s, t, rng) for s, t in pairs]
    obs = list(iter_observations(trajs, args.mode, rng, args.cap))
    out = Output(args.out)
    write_jsonl(obs, out)
    out.close(stdout)
    return [args.out] if args.out else []


def _load_observations(args) -> list[Observation]:
    obs = list(read_jsonl(args.trajectories))
    if not obs:
        raise UsageError("no observations in input")
    if any(o.empty for o in obs):
        raise UsageError("input contains observations with no observed elements")
    return obs


def cmd_estimate(args, stdout) -> list[str]:
    graph = _load_graph(args)
    obs = _load_observations(args)
    mode = args.mode
    if mode == "auto":
        mode = "complete" if all(o.kind == "complete" for o in obs) and args.pmu is None else "incomplete"
    if mode == "complete":
        if any(o.kind != "complete" for o in obs):
            raise UsageError("complete mode needs complete observations only")
        res = mle_beta_complete(graph, obs, bracket=args.bracket or (1e-6, 1e3))
    else:
        model = BinomialObservationModel(args.pmu) if args.pmu is not None else None
        res = mle_beta_incomplete(graph, obs, bracket=args.bracket or (1e-3, 1e2), model=model, scan_cutoff=args.scan_cutoff)
    out = Output(args.out)
    d = res.to_dict()
    d["mode"] = mode
    out.write(_json(d))
    out.close(stdout)
    return [args.out] if args.out else []


def _beta_grid(args) -> list[float]:
    if args.betas is not None:
        betas = args.betas
    elif args.grid is not None:
        lo, hi, n = args.grid
        if not (0 < lo < hi and n >= 1 and float(n).is_integer()):
            raise UsageError("--grid needs lo,hi,n with 0 < lo < hi and integer n >= 1")
        betas = list(np.geomspace(lo, hi, int(n))) if n > 1 else [lo]
    else:
        raise UsageError("give --betas or --grid")
    if not betas:
        raise UsageError("empty beta grid")
    if any(not (b > 0 and math.isfinite(b)) for b in betas):
        raise UsageError("betas must be positive and finite")
    return [float(b) for b in betas]


def _oracle_log_likelihood(graph, beta, o: Observation, model) -> float:
    from .complete import log_likelihood_complete
    from .oracle import LengthSums

    ctx = RspContext(graph, beta)
    if o.kind == "complete":
        return log_likelihood_complete(graph, beta, [o], ctx=ctx)
    value, _ = LengthSums(ctx, o.t).observation_likelihood(o.s, o, model=model)
    return math.log(value) if value > 0 else -math.inf


def cmd_curve(args, stdout) -> list[str]:
    graph = _load_graph(args)
    obs = _load_observations(args)
    betas = _beta_grid(args)
    model = BinomialObservationModel(args.pmu) if args.pmu is not None else None
    if args.oracle and graph.n > ORACLE_MAX_NODES:
        raise UsageError(f"--oracle is limited to graphs with at most {ORACLE_MAX_NODES} nodes")
    out = Output(args.out)
    w = csv.writer(out, lineterminator="\n")
    if args.per_observation:
        w.writerow(["beta"] + [f"obs{k}" for k in range(len(obs))])
    else:
        w.writerow(["beta", "log_likelihood"])
    for b in betas:
        if args.oracle:
            vals = [_oracle_log_likelihood(graph, b, o, model) for o in obs]
        elif args.per_observation:
            ctx = RspContext(graph, b)
            vals = [observation_log_likelihood(ctx, o, model=model) for o in obs]
        else:
            vals = [log_likelihood_incomplete(graph, b, obs, model=model)]
        if args.per_observation:
            w.writerow([repr(b)] + [repr(float(v)) for v in vals])
        else:
            w.writerow([repr(b), repr(float(sum(vals)))])
    out.close(stdout)
    return [args.out] if args.out else []


def cmd_visits(args, stdout) -> list[str]:
    graph = _load_graph(args)
    if args.pairs:
        pairs = args.pairs
    elif args.trajectories:
        pairs = [(o.s, o.t) for o in read_jsonl(args.trajectories)]
    else:
        raise UsageError("give --pairs or --trajectories")
    for s, t in pairs:
        if not (0 <= s < graph.n and 0 <= t < graph.n) or s == t:
            raise UsageError(f"invalid pair {s}:{t}")
    ctx = RspContext(graph, args.beta)
    total = np.zeros(graph.n)
    for s, t in pairs:
        total += expected_node_visits(ctx, s, t)
    out = Output(args.out)
    if args.shape is not None:
        r, c = args.shape
        if r * c != graph.n:
            raise UsageError(f"--shape {r},{c} does not match {graph.n} nodes")
        buf = io.StringIO()
        save_raster(total.reshape(r, c), buf)
        out.write(buf.getvalue())
    else:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["node", "visits"])
        for i, v in enumerate(total):
            w.writerow([i, repr(float(v))])
    out.close(stdout)
    return [args.out] if args.out else []


def cmd_validate(args, stdout) -> list[str]:
    from . import validation

    graphs = args.graphs.split(",")
    for g in graphs:
        if g not in ("uniform", "landscape"):
            raise UsageError(f"unknown graph {g!r}")
    betas = args.betas if args.betas is not None else list(validation.TABLE_BETAS)
    progress = (lambda msg: print(msg, file=sys.stderr, flush=True)) if args.verbose else None
    cells = validation.run_table(args.suite, graphs, betas, reps=args.reps, seed=args.seed, progress=progress)
    out = Output(args.out)
    validation.write_results(cells, out)
    out.close(stdout)
    return [args.out] if args.out else []


def cmd_replay(args, stdout) -> list[str]:
    try:
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        argv = manifest["argv"]
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read manifest: {exc}") from None
    here = os.getcwd()
    try:
        os.chdir(manifest.get("cwd") or here)
        code = main(argv, stdout=stdout)
    finally:
        os.chdir(here)
    if code:
        raise _Exit(code)
    return []


class _Exit(Exception):
    def __init__(self, code):
        self.code = code


# --- parser --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rspmle", description="Estimate the RSP inverse temperature from trajectories.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a lattice graph as an edge-list CSV")
    g.add_argument("kind", choices=["grid", "landscape"])
    g.add_argument("--rows", type=int, default=20)
    g.add_argument("--cols", type=int, default=20)
    g.add_argument("--cost", type=float, default=1.0, help="uniform pixel cost (grid)")
    g.add_argument("--raster-in", help="pixel-cost raster to build the grid from")
    g.add_argument("--raster", help="also write the pixel-cost raster here")
    g.add_argument("--no-diagonals", action="store_true")
    g.add_argument("--n-low", type=int, default=5)
    g.add_argument("--n-high", type=int, default=5)
    g.add_argument("--base-cost", type=float, default=0.5)
    g.add_argument("--amplitude", type=float, default=0.4)
    g.add_argument("--width", type=float, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("simulate", help="sample paths and write observations as JSON Lines")
    s.add_argument("--graph", required=True)
    s.add_argument("--allow-sinks", action="store_true", help="accept nodes without out-edges")
    s.add_argument("--beta", type=float, required=True)
    s.add_argument("--n-paths", type=int, default=200)
    s.add_argument("--min-hops", type=int, default=3)
    s.add_argument("--mode", choices=["complete", "nodes", "edges"], default="complete")
    s.add_argument("--cap", type=int, default=300, help="largest number of observed elements")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="maximum-likelihood estimate of beta")
    e.add_argument("--graph", required=True)
    e.add_argument("--allow-sinks", action="store_true", help="accept nodes without out-edges")
    e.add_argument("--trajectories", required=True)
    e.add_argument("--mode", choices=["auto", "complete", "incomplete"], default="auto")
    e.add_argument("--bracket", type=_bracket)
    e.add_argument("--pmu", type=_pmu, help="binomial observation model for edge records")
    e.add_argument("--scan-cutoff", type=float, default=None)
    e.add_argument("--out")
    e.set_defaults(func=cmd_estimate)

    c = sub.add_parser("curve", help="log-likelihood over a beta grid, as CSV")
    c.add_argument("--graph", required=True)
    c.add_argument("--allow-sinks", action="store_true", help="accept nodes without out-edges")
    c.add_argument("--trajectories", required=True)
    grid = c.add_mutually_exclusive_group()
    grid.add_argument("--betas", type=_floats)
    grid.add_argument("--grid", type=lambda x: _floats(x, 3), help="lo,hi,n log-spaced")
    c.add_argument("--per-observation", action="store_true")
    c.add_argument("--pmu", type=_pmu)
    c.add_argument("--oracle", action="store_true", help="brute-force sums; tiny graphs only")
    c.add_argument("--out")
    c.set_defaults(func=cmd_curve)

    v = sub.add_parser("visits", help="expected node visits summed over pairs")
    v.add_argument("--graph", required=True)
    v.add_argument("--allow-sinks", action="store_true", help="accept nodes without out-edges")
    v.add_argument("--beta", type=float, required=True)
    v.add_argument("--pairs", type=_pairs)
    v.add_argument("--trajectories")
    v.add_argument("--shape", type=_shape, help="rows,cols to emit a raster instead of CSV")
    v.add_argument("--out")
    v.set_defaults(func=cmd_visits)

    r = sub.add_parser("validate", help="simulation study of the estimators")
    r.add_argument("--suite", choices=["table1", "table2"], required=True)
    r.add_argument("--graphs", default="uniform,landscape")
    r.add_argument("--betas", type=_floats)
    r.add_argument("--reps", type=int, default=10)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--verbose", action="store_true")
    r.add_argument("--out")
    r.set_defaults(func=cmd_validate)

    m = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    m.add_argument("manifest")
    m.set_defaults(func=cmd_replay)
    return p


def main(argv: Sequence[str] | None = None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        outputs = args.func(args, stdout)
        if args.command != "replay":
            write_manifest(args, argv, outputs)
    except _Exit as exc:
        return exc.code
    except (GraphError, UsageError, InconsistentDataError, OSError) as exc:
        print(f"rspmle {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SeriesCapError, SeriesUnderflowError, BracketError, SamplingError) as exc:
        print(f"rspmle {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except RspError as exc:
        print(f"rspmle {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
