import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rspmle import Graph, RspContext

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

LN2 = math.log(2.0)


def triangle() -> Graph:
    """Nodes 0,1,2 with edges 0->1, 0->2, 1->2; unit affinity and cost; 2 is a sink."""
    return Graph.from_edges(3, [(0, 1, 1.0, 1.0), (0, 2, 1.0, 1.0), (1, 2, 1.0, 1.0)], allow_sinks=True)


def two_node(cost: float = 1.0) -> Graph:
    return Graph.from_edges(2, [(0, 1, 1.0, cost)], allow_sinks=True)


def line_graph(n: int) -> Graph:
    """0 -> 1 -> ... -> n-1, one path between the ends."""
    return Graph.from_edges(n, [(i, i + 1, 1.0, 1.0) for i in range(n - 1)], allow_sinks=True)


def random_graph(rng: np.random.Generator, n: int, p: float = 0.45) -> Graph:
    """Random strongly connected digraph: a directed ring plus random chords."""
    edges = {}
    for i in range(n):
        edges[(i, (i + 1) % n)] = None
    for i in range(n):
        for j in range(n):
            if i != j and rng.random() < p:
                edges[(i, j)] = None
    rows = [(i, j, float(rng.uniform(0.2, 3.0)), float(rng.uniform(0.2, 2.0))) for (i, j) in edges]
    return Graph.from_edges(n, rows)


@pytest.fixture
def tri():
    return triangle()


@pytest.fixture
def tri_ctx(tri):
    return RspContext(tri, LN2)


# --- acceptance summary: one line per criterion -------------------------------

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion a test belongs to")


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", m.args))


def pytest_runtest_logreport(report):
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    if report.when == "call" or not report.passed:
        entry = _CRITERIA.setdefault(crit[0], {"title": crit[1], "passed": 0, "failed": 0, "skipped": 0})
        entry[report.outcome] += 1


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        total = e["passed"] + e["failed"] + e["skipped"]
        verdict = "PASS" if e["failed"] == 0 and e["skipped"] == 0 and e["passed"] > 0 else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {verdict}  {e['title']} ({e['passed']}/{total} checks passed)")
