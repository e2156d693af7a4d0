"""Text graph files.

Format::

    wrcm 1 d=2 beta=1.0 gamma=0.5 delta=3.0 kernel=min profile=polynomial side=100.0 geometry=torus seed=7
    v 0 -12.5 3.25 0.731
    e 0 5

Reals are written with ``repr`` so that reading gives back the same
floats.  An optional ``palm=<id>`` header entry marks the Palm vertex.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .model import ModelError, ModelParams, Window
from .sampler import Graph, MarkedPointSet

MAGIC = "wrcm"
VERSION = 1
_HEADER_KEYS = ("d", "beta", "gamma", "delta", "kernel", "profile", "side", "geometry", "seed")


class GraphParseError(ModelError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def format_graph(graph: Graph) -> str:
    p = graph.params
    w = p.window
    head = [MAGIC, str(VERSION), f"d={w.d}", f"beta={float(p.beta)!r}", f"gamma={float(p.gamma)!r}",
            f"delta={float(p.delta)!r}", f"kernel={p.kernel.value}", f"profile={p.profile.value}",
            f"side={float(w.side)!r}", f"geometry={w.geometry.value}", f"seed={int(graph.seed or 0)}"]
    if graph.palm is not None:
        head.append(f"palm={graph.palm}")
    lines = [" ".join(head)]
    pos, marks = graph.points.positions, graph.points.marks
    for i in range(graph.n):
        coords = " ".join(repr(float(c)) for c in pos[i])
        lines.append(f"v {i} {coords} {float(marks[i])!r}")
    e = graph.edges
    order = np.lexsort((e[:, 1], e[:, 0])) if len(e) else []
    lines.extend(f"e {int(e[k, 0])} {int(e[k, 1])}" for k in order)
    return "\n".join(lines) + "\n"


def write_graph(graph: Graph, path) -> None:
    Path(path).write_text(format_graph(graph))


def _parse_header(tokens, lineno):
    if len(tokens) < 2 or tokens[0] != MAGIC:
        raise GraphParseError(lineno, "missing 'wrcm' header")
    if tokens[1] != str(VERSION):
        raise GraphParseError(lineno, f"unsupported version {tokens[1]!r}")
    fields = {}
    for tok in tokens[2:]:
        key, sep, val = tok.partition("=")
        if not sep or key in fields:
            raise GraphParseError(lineno, f"bad header entry {tok!r}")
        fields[key] = val
    missing = [k for k in _HEADER_KEYS if k not in fields]
    extra = set(fields) - set(_HEADER_KEYS) - {"palm"}
    if missing or extra:
        raise GraphParseError(lineno, f"header missing {missing} / unknown {sorted(extra)}")
    try:
        window = Window(float(fields["side"]), int(fields["d"]), fields["geometry"])
        params = ModelParams(kernel=fields["kernel"], profile=fields["profile"], beta=float(fields["beta"]),
                             gamma=float(fields["gamma"]), delta=float(fields["delta"]), window=window)
        seed = int(fields["seed"])
        palm = int(fields["palm"]) if "palm" in fields else None
    except (ValueError, ModelError) as exc:
        raise GraphParseError(lineno, str(exc)) from None
    return params, seed, palm


def parse_graph(text: str) -> Graph:
    lines = text.splitlines()
    if not lines:
        raise GraphParseError(1, "empty file")
    params, seed, palm = _parse_header(lines[0].split(), 1)
    d = params.d
    pos, marks, edges = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        try:
            if tok[0] == "v":
                if edges:
                    raise GraphParseError(lineno, "vertex after edges")
                if len(tok) != d + 3:
                    raise GraphParseError(lineno, f"vertex line needs {d + 2} fields")
                if int(tok[1]) != len(marks):
                    raise GraphParseError(lineno, f"expected vertex id {len(marks)}")
                x = [float(t) for t in tok[2 : 2 + d]]
                m = float(tok[-1])
                if not 0 < m < 1:
                    raise GraphParseError(lineno, "mark outside (0, 1)")
                if not all(-params.window.side / 2 <= c < params.window.side / 2 for c in x):
                    raise GraphParseError(lineno, "position outside the window")
                pos.append(x)
                marks.append(m)
            elif tok[0] == "e":
                if len(tok) != 3:
                    raise GraphParseError(lineno, "edge line needs two ids")
                i, j = int(tok[1]), int(tok[2])
                if not i < j:
                    raise GraphParseError(lineno, f"edge ({i}, {j}) not written with i < j")
                if j >= len(marks):
                    raise GraphParseError(lineno, f"edge ({i}, {j}) refers to an unknown vertex")
                if edges and (i, j) <= edges[-1]:
                    raise GraphParseError(lineno, "edges not strictly sorted")
                edges.append((i, j))
            else:
                raise GraphParseError(lineno, f"unknown record {tok[0]!r}")
        except ValueError as exc:
            raise GraphParseError(lineno, str(exc)) from None
    if palm is not None and not 0 <= palm < len(marks):
        raise GraphParseError(1, f"palm vertex {palm} out of range")
    pts = MarkedPointSet(np.array(pos, dtype=float).reshape(-1, d), np.array(marks, dtype=float), params.window, palm)
    return Graph(pts, params, np.array(edges, dtype=np.int64).reshape(-1, 2), None, seed)


def read_graph(path) -> Graph:
    return parse_graph(Path(path).read_text())
