"""Trajectories, partial observations, and sampling from the RSP path law."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

from . import _kernels
from .graph import Graph, GraphError

KINDS = ("complete", "nodes", "edges")
MAX_STEPS = 10_000_000
_CHUNK = 256


class SamplingError(RuntimeError):
    """The walk did not reach its target within the step budget."""


@dataclass(frozen=True)
class Trajectory:
    """A hitting path ``nodes[0] -> ... -> nodes[-1]``."""

    nodes: tuple[int, ...]

    def __post_init__(self):
        nodes = tuple(int(v) for v in self.nodes)
        if len(nodes) < 2:
            raise GraphError("a trajectory needs at least one step")
        if nodes[-1] in nodes[:-1]:
            raise GraphError("target appears before the end of the trajectory")
        object.__setattr__(self, "nodes", nodes)

    @property
    def s(self) -> int:
        return self.nodes[0]

    @property
    def t(self) -> int:
        return self.nodes[-1]

    @property
    def length(self) -> int:
        return len(self.nodes) - 1

    def edges(self) -> list[tuple[int, int]]:
        return list(zip(self.nodes[:-1], self.nodes[1:]))

    def edge_indices(self, graph: Graph) -> np.ndarray:
        idx = np.array([graph.edge_index(i, j) for i, j in self.edges()], dtype=np.int64)
        if np.any(idx < 0):
            i, j = self.edges()[int(np.flatnonzero(idx < 0)[0])]
            raise GraphError(f"trajectory uses missing edge ({i},{j})")
        return idx

    def cost(self, graph: Graph) -> float:
        return float(graph.cost[self.edge_indices(graph)].sum())

    def edge_counts(self) -> Counter:
        return Counter(self.edges())


@dataclass(frozen=True)
class Observation:
    """Known endpoints plus an ordered record of what was seen in between.

    ``kind`` is ``"complete"`` (``obs`` is the full node sequence),
    ``"nodes"`` (observed intermediate nodes) or ``"edges"`` (observed
    edges as ``(i, j)`` pairs). Partial records may be empty only as the
    output of :func:`determine_endpoints`; see :attr:`empty`.
    """

    s: int
    t: int
    kind: str
    obs: tuple

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GraphError(f"unknown observation kind {self.kind!r}")
        s, t = int(self.s), int(self.t)
        if s == t:
            raise GraphError("s and t must differ")
        if self.kind == "edges":
            obs = tuple((int(i), int(j)) for i, j in self.obs)
            if any(i == t for i, _ in obs):
                raise GraphError("an observed edge leaves the target")
        else:
            obs = tuple(int(v) for v in self.obs)
        if self.kind == "nodes" and t in obs:
            raise GraphError("the target cannot be an observed intermediate node")
        if self.kind == "complete":
            traj = Trajectory(obs)
            if traj.s != s or traj.t != t:
                raise GraphError("complete observation endpoints do not match s, t")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "obs", obs)

    @property
    def M(self) -> int:
        return len(self.obs)

    @property
    def empty(self) -> bool:
        return self.kind != "complete" and not self.obs

    def trajectory(self) -> Trajectory:
        if self.kind != "complete":
            raise GraphError("only complete observations carry a trajectory")
        return Trajectory(self.obs)

    def to_json(self) -> str:
        obs = [list(e) for e in self.obs] if self.kind == "edges" else list(self.obs)
        return json.dumps({"s": self.s, "t": self.t, "kind": self.kind, "obs": obs}, separators=(",", ":"))

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> "Observation":
        return cls(traj.s, traj.t, "complete", traj.nodes)


class TrajectorySet(list):
    """A list of observations with per-pair counts."""

    def pair_counts(self) -> Counter:
        return Counter((o.s, o.t) for o in self)


def as_trajectories(items: Iterable) -> list[Trajectory]:
    """Coerce trajectories, complete observations or node sequences to trajectories."""
    out = []
    for it in items:
        if isinstance(it, Trajectory):
            out.append(it)
        elif isinstance(it, Observation):
            out.append(it.trajectory())
        else:
            out.append(Trajectory(tuple(it)))
    return out


# --- JSON Lines ----------------------------------------------------------


def read_jsonl(source: str | Path | TextIO) -> TrajectorySet:
    close = isinstance(source, (str, Path))
    fh = open(source, "r", encoding="utf-8") if close else source
    out = TrajectorySet()
    try:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                out.append(Observation(d["s"], d["t"], d["kind"], d["obs"]))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise GraphError(f"bad observation record: {exc}", lineno) from None
    finally:
        if close:
            fh.close()
    return out


def write_jsonl(observations: Iterable[Observation], sink: str | Path | TextIO) -> None:
    close = isinstance(sink, (str, Path))
    fh = open(sink, "w", encoding="utf-8") if close else sink
    try:
        for o in observations:
            fh.write(o.to_json() + "\n")
    finally:
        if close:
            fh.close()


# --- sampling ------------------------------------------------------------


def sample_path(ctx, s: int, t: int, rng: np.random.Generator, max_steps: int = MAX_STEPS) -> Trajectory:
    """Draw one hitting path from ``s`` to ``t`` with the target-conditioned walk.

    Uniforms are drawn from ``rng`` in fixed-size chunks, one per step, so
    the compiled and fallback kernels consume the stream identically.
    """
    system = ctx._pair(s, t)
    indptr, indices, cum = system.sampling_table()
    nodes = [int(s)]
    node = int(s)
    buf = np.empty(_CHUNK, dtype=np.int64)
    steps = 0
    while True:
        u = rng.random(_CHUNK)
        k, reached = _kernels.sample_walk(indptr, indices, cum, node, int(t), u, buf)
        nodes.extend(buf[:k].tolist())
        steps += k
        if reached:
            return Trajectory(tuple(nodes))
        if steps >= max_steps:
            raise SamplingError(f"no hit after {steps} steps")
        node = nodes[-1]


def sample_paths(ctx, pairs: Sequence[tuple[int, int]], rng: np.random.Generator) -> list[Trajectory]:
    return [sample_path(ctx, s, t, rng) for s, t in pairs]


def subsample_nodes(traj: Trajectory, rng: np.random.Generator, cap: int = 300) -> Observation | None:
    """Observe a random ordered subset of the intermediate nodes.

    The count is uniform on ``1 .. L-1`` (capped at ``cap``); positions are
    drawn without replacement from ``1 .. L-1``. Returns ``None`` for a
    one-step path, which has no intermediate node to observe.
    """
    L = traj.length
    if L < 2:
        return None
    m = min(cap, int(rng.integers(1, L)))
    pos = np.sort(rng.choice(L - 1, size=m, replace=False)) + 1
    return Observation(traj.s, traj.t, "nodes", tuple(traj.nodes[p] for p in pos))


def subsample_edges(traj: Trajectory, rng: np.random.Generator, cap: int = 300) -> Observation:
    """Observe a random ordered subset of the path's edges (count uniform on ``1 .. L``)."""
    L = traj.length
    m = min(cap, int(rng.integers(1, L + 1)))
    pos = np.sort(rng.choice(L, size=m, replace=False))
    edges = traj.edges()
    return Observation(traj.s, traj.t, "edges", tuple(edges[p] for p in pos))


def determine_endpoints(sequence: Sequence[int], target_set: Iterable[int]) -> Observation:
    """Cut a raw node sequence at its first visit to the target area.

    The first element becomes ``s``, the first element inside
    ``target_set`` becomes ``t``, and the elements strictly between are the
    observed nodes. The result may be :attr:`Observation.empty`.
    """
    seq = [int(v) for v in sequence]
    if not seq:
        raise GraphError("empty node sequence")
    targets = {int(v) for v in target_set}
    hit = next((k for k, v in enumerate(seq) if v in targets), None)
    if hit is None:
        raise GraphError("sequence never enters the target set")
    if hit == 0:
        raise GraphError("sequence starts inside the target set")
    t = seq[hit]
    return Observation(seq[0], t, "nodes", tuple(v for v in seq[1:hit] if v != t))


def sample_pairs(
    graph: Graph,
    count: int,
    rng: np.random.Generator,
    min_hops: int = 3,
) -> list[tuple[int, int]]:
    """Uniform random ``(s, t)`` pairs at least ``min_hops`` unweighted steps apart."""
    from .graph import hop_distances

    key = ("hops",)
    if key not in graph._cache:
        graph._cache[key] = hop_distances(graph)
    hops = graph._cache[key]
    ok = np.isfinite(hops) & (hops >= min_hops)
    if not ok.any():
        raise GraphError(f"no pair is {min_hops} or more steps apart")
    out = []
    n = graph.n
    while len(out) < count:
        s, t = (int(v) for v in rng.integers(0, n, size=2))
        if ok[s, t]:
            out.append((s, t))
    return out


def iter_observations(trajs: Iterable[Trajectory], mode: str, rng: np.random.Generator, cap: int = 300) -> Iterator[Observation]:
    """Turn trajectories into observations of the given kind, skipping unobservable ones."""
    for tr in trajs:
        if mode == "complete":
            yield Observation.from_trajectory(tr)
        elif mode == "nodes":
            o = subsample_nodes(tr, rng, cap)
            if o is not None:
                yield o
        elif mode == "edges":
            yield subsample_edges(tr, rng, cap)
        else:
            raise GraphError(f"unknown mode {mode!r}")


__all__ = [
    "Observation",
    "SamplingError",
    "Trajectory",
    "TrajectorySet",
    "as_trajectories",
    "determine_endpoints",
    "iter_observations",
    "read_jsonl",
    "sample_pairs",
    "sample_path",
    "sample_paths",
    "subsample_edges",
    "subsample_nodes",
    "write_jsonl",
]
