"""Simulation study: sample paths at a known ``beta`` and re-estimate it.

Each cell of a results table is one graph and one true ``beta``. Every
repetition draws 200 endpoint pairs at least three grid steps apart, samples
a path per pair, optionally subsamples its intermediate nodes, and estimates
``beta`` from the resulting set. Cells use their own RNG stream, so any
subset of cells reproduces the same numbers.
"""

from __future__ import annotations

import csv
import math
import time
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, TextIO

import numpy as np

from .complete import MleResult, mle_beta_complete
from .graph import Graph, build_grid, gaussian_landscape, make_rng
from .incomplete import mle_beta_incomplete
from .rsp import RspContext
from .sampler import Observation, iter_observations, sample_pairs, sample_path

GRID_SHAPE = (20, 20)
LANDSCAPE_SEED = 7
N_PATHS = 200
NODE_CAP = 300
TABLE_BETAS = (0.01, 0.1, 1.0, 5.0)
COMPLETE_BRACKET = (1e-6, 1e3)
INCOMPLETE_BRACKET = (1e-3, 1e2)

# Published mean and standard deviation of the estimates over 10 repetitions.
REFERENCE = {
    "table1": {
        "uniform": {0.01: (0.00970, 0.00085), 0.1: (0.09785, 0.00497), 1.0: (1.01719, 0.03833), 5.0: (5.07901, 0.23531)},
        "landscape": {0.01: (0.01029, 0.00115), 0.1: (0.09956, 0.00392), 1.0: (0.99922, 0.02422), 5.0: (4.99453, 0.17301)},
    },
    "table2": {
        "uniform": {0.01: (0.00980, 0.00070), 0.1: (0.10117, 0.00704), 1.0: (1.01074, 0.07147), 5.0: (4.92557, 0.27878)},
        "landscape": {0.01: (0.00992, 0.00088), 0.1: (0.09433, 0.00807), 1.0: (0.98349, 0.03991), 5.0: (4.93601, 0.24915)},
    },
}


def table_graph(name: str) -> Graph:
    """The 20x20 diagonal grid with uniform or Gaussian-landscape pixel costs."""
    rows, cols = GRID_SHAPE
    if name == "uniform":
        return build_grid(rows, cols, 1.0)
    if name == "landscape":
        return build_grid(rows, cols, gaussian_landscape(rows, cols, seed=LANDSCAPE_SEED))
    raise ValueError(f"unknown table graph {name!r}")


def cell_stream(table: str, graph: str, beta: float, rep: int) -> int:
    """Stable RNG stream id for one repetition of one table cell."""
    return zlib.crc32(f"{table}/{graph}/{beta!r}/{rep}".encode())


def simulate(
    graph: Graph,
    beta: float,
    rng: np.random.Generator,
    n_paths: int = N_PATHS,
    mode: str = "complete",
    cap: int = NODE_CAP,
    ctx: RspContext | None = None,
) -> list[Observation]:
    """Sample ``n_paths`` paths between random pairs and observe them in ``mode``."""
    ctx = ctx or RspContext(graph, beta)
    pairs = sample_pairs(graph, n_paths, rng, min_hops=3)
    trajs = [sample_path(ctx, s, t, rng) for s, t in pairs]
    return list(iter_observations(trajs, mode, rng, cap))


def estimate(graph: Graph, observations: list[Observation], table: str, rtol: float = 1e-4) -> MleResult:
    if table == "table1":
        return mle_beta_complete(graph, observations, bracket=COMPLETE_BRACKET, tol=rtol * 1e-2)
    return mle_beta_incomplete(graph, observations, bracket=INCOMPLETE_BRACKET, rtol=rtol, scan_cutoff=50.0)


@dataclass
class CellResult:
    """Estimates for one graph and one true ``beta``."""

    table: str
    graph: str
    beta: float
    estimates: list[float]
    statuses: list[str]
    seconds: float
    ref_mean: float = math.nan
    ref_sd: float = math.nan
    extra: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(self.estimates))

    @property
    def sd(self) -> float:
        return float(np.std(self.estimates, ddof=1)) if len(self.estimates) > 1 else 0.0

    @property
    def window(self) -> tuple[float, float]:
        """Acceptance window: true ``beta`` plus or minus three reference sd."""
        return self.beta - 3 * self.ref_sd, self.beta + 3 * self.ref_sd

    @property
    def passed(self) -> bool:
        lo, hi = self.window
        return lo <= self.mean <= hi

    def row(self) -> dict:
        lo, hi = self.window
        return {
            "table": self.table,
            "graph": self.graph,
            "beta": self.beta,
            "reps": len(self.estimates),
            "mean": self.mean,
            "sd": self.sd,
            "ref_mean": self.ref_mean,
            "ref_sd": self.ref_sd,
            "accept_lo": lo,
            "accept_hi": hi,
            "passed": self.passed,
            "seconds": round(self.seconds, 3),
            "estimates": " ".join(repr(float(e)) for e in self.estimates),
        }


def run_cell(
    table: str,
    graph_name: str,
    beta: float,
    reps: int = 10,
    seed: int = 0,
    n_paths: int = N_PATHS,
    rtol: float = 1e-4,
    progress: Callable[[str], None] | None = None,
) -> CellResult:
    """Repeat simulate-then-estimate ``reps`` times for one table cell."""
    if table not in REFERENCE:
        raise ValueError(f"unknown table {table!r}")
    graph = table_graph(graph_name)
    mode = "complete" if table == "table1" else "nodes"
    ctx = RspContext(graph, beta)
    est, status = [], []
    t0 = time.perf_counter()
    for rep in range(reps):
        rng = make_rng(seed, cell_stream(table, graph_name, beta, rep))
        obs = simulate(graph, beta, rng, n_paths, mode, ctx=ctx)
        res = estimate(graph, obs, table, rtol)
        est.append(res.beta_hat)
        status.append(res.status)
        if progress:
            progress(f"{table} {graph_name} beta={beta} rep={rep} beta_hat={res.beta_hat:.6g} {res.status} evals={res.evaluations}")
    mean, sd = REFERENCE[table].get(graph_name, {}).get(beta, (math.nan, math.nan))
    return CellResult(table, graph_name, beta, est, status, time.perf_counter() - t0, mean, sd)


def run_table(
    table: str,
    graphs: Iterable[str] = ("uniform", "landscape"),
    betas: Iterable[float] = TABLE_BETAS,
    reps: int = 10,
    seed: int = 0,
    **kwargs,
) -> list[CellResult]:
    return [run_cell(table, g, b, reps, seed, **kwargs) for g in graphs for b in betas]


def write_results(cells: Iterable[CellResult], sink: str | Path | TextIO) -> None:
    cells = list(cells)
    close = isinstance(sink, (str, Path))
    fh = open(sink, "w", newline="", encoding="utf-8") if close else sink
    try:
        w = csv.DictWriter(fh, fieldnames=list(cells[0].row()) if cells else ["table"], lineterminator="\n")
        w.writeheader()
        for c in cells:
            w.writerow(c.row())
    finally:
        if close:
            fh.close()


def cell_to_dict(cell: CellResult) -> dict:
    d = asdict(cell)
    d.update(mean=cell.mean, sd=cell.sd, passed=cell.passed, window=list(cell.window))
    return d


# --- one-edge example on a small grid --------------------------------------

EDGE_EXAMPLE_SIDE = 5
# neighbours of the start node (labels as in the example), grouped by the
# angle between the step and the diagonal towards the target: 0, 45, 90,
# 135 and 180 degrees
EDGE_EXAMPLE_CLASSES = ((13,), (12, 8), (11, 3), (6, 2), (1,))
EDGE_EXAMPLE_START, EDGE_EXAMPLE_TARGET = 7, 25


def example_node(label: int, side: int = EDGE_EXAMPLE_SIDE) -> int:
    """Our row-major node id for a 1-based label counted from the bottom row."""
    r, c = divmod(label - 1, side)
    return (side - 1 - r) * side + c


def edge_example_mles(
    bracket: tuple[float, float] = (1e-2, 1e2),
    rtol: float = 1e-6,
) -> list[list[tuple[tuple[int, int], MleResult]]]:
    """One-edge MLEs for every edge leaving the start node, grouped as above."""
    graph = build_grid(EDGE_EXAMPLE_SIDE, EDGE_EXAMPLE_SIDE)
    s, t = example_node(EDGE_EXAMPLE_START), example_node(EDGE_EXAMPLE_TARGET)
    out = []
    for group in EDGE_EXAMPLE_CLASSES:
        row = []
        for label in group:
            e = (s, example_node(label))
            obs = [Observation(s, t, "edges", (e,))]
            row.append((e, mle_beta_incomplete(graph, obs, bracket=bracket, rtol=rtol, count_prior="given")))
        out.append(row)
    return out

