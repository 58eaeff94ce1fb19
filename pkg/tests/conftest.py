import os
from pathlib import Path

import numpy as np
import pytest

from duplex.graph import DiGraph

DATA_DIR = Path(os.environ.get("DUPLEX_DATA_DIR", "data"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_path_graph():
    """The 4-node chain 0 -> 1 -> 2 -> 3."""
    return DiGraph(4, [(0, 1), (1, 2), (2, 3)])


def random_digraph(n: int, m: int, seed: int = 0, bidirectional: float = 0.2) -> DiGraph:
    rng = np.random.default_rng(seed)
    edges = set()
    while len(edges) < m:
        u, v = (int(x) for x in rng.integers(0, n, 2))
        if u == v:
            continue
        edges.add((u, v))
        if rng.random() < bidirectional and len(edges) < m:
            edges.add((v, u))
    return DiGraph(n, sorted(edges))


@pytest.fixture
def medium_graph():
    return random_digraph(60, 200, seed=3)


# ------------------------------------------------------------ acceptance gate

CRITERIA = {
    1: "Citeseer link prediction (EP/DP/TP/FP floors)",
    2: "fusion=none variant on Citeseer",
    3: "transductive node classification (Cora-ml, Citeseer)",
    4: "inductive node classification on Cora-ml",
    5: "degree-stratified EP AUC at threshold 1",
    6: "gradient checks vs finite differences",
    7: "parameter-count identity",
    8: "HAM invariants",
    9: "phase sign / amplitude reversal invariance",
    10: "zero-row lemma oracle",
    11: "convergence smoke test on the 4-node chain",
    12: "determinism of logs, checkpoints and reports",
}
_outcomes: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    n = mark.args[0]
    ok = rep.passed
    prev = _outcomes.get(n, (True, []))
    notes = prev[1] + ([] if ok else [str(rep.longrepr.reprcrash.message if hasattr(rep.longrepr, "reprcrash")
                                          else rep.longrepr).splitlines()[0][:160]])
    _outcomes[n] = (prev[0] and ok, notes)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        ok, notes = _outcomes[n]
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {CRITERIA[n]}"
        if notes:
            line += f"  [{notes[0]}]"
        terminalreporter.write_line(line)
