import numpy as np

from wrcm import Graph, MarkedPointSet, ModelParams, Window


def make_graph(edges, n, positions=None, d=2, side=100.0, palm=None, marks=None):
    """Graph with the given edge list on hand-placed points."""
    if positions is None:
        positions = np.zeros((n, d))
        positions[:, 0] = np.linspace(-side / 4, side / 4, n) if n > 1 else 0.0
    positions = np.asarray(positions, dtype=float).reshape(n, -1)
    window = Window(side, positions.shape[1], "free")
    marks = np.full(n, 0.5) if marks is None else np.asarray(marks, dtype=float)
    pts = MarkedPointSet(positions, marks, window, palm)
    e = np.array(sorted({(min(i, j), max(i, j)) for i, j in edges}), dtype=np.int64).reshape(-1, 2)
    return Graph(pts, ModelParams(window=window), e, None, 0)


ACCEPTANCE = {}


def record(number, ok, detail):
    """Remember the outcome of an acceptance criterion for the summary block."""
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}: {detail}")
