"""Command-line interface: ``wrcm <command> [options]``.

Every run prints (or writes with ``--report``) one JSON object holding the
resolved configuration, the seed, the computed metrics and timings.  Tables
go to ``--csv``.  Options can also come from an INI-style ``--config`` file
with a ``[common]`` section and one section per command; flags win.

Exit status: 0 on success, 1 on invalid input, 2 on runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .criteria import (cropping_check, gamma_condition, kappa_exponent, kappa_reference, pair_connection_prob,
                       phase_classify)
from .electrical import (ElectricalNetwork, annular_cutsets, conductance_tail, effective_conductance,
                         fit_cauchy_scale, lattice_bond_pool, nash_williams_bound, project_to_lattice)
from .graph_analysis import degree_tail_exponent
from .io import read_graph, write_graph
from .model import Geometry, Kernel, ModelError, ModelParams, Profile, Window
from .percolation import estimate_beta_c, estimate_theta, theta_curve
from .random_walk import return_probability
from .renorm import classify_boxes, coarse_grain, connector_bound, connector_frequency, stage_sequences
from .sampler import Method, sample

COMMANDS = ("sample", "degrees", "percolate", "walk", "conduct", "project", "renorm", "criteria", "phase")


class UsageError(ModelError):
    pass


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return v


# name -> (type, default, help)
MODEL_OPTIONS = {
    "d": (int, 2, "dimension"),
    "side": (float, 32.0, "window side length"),
    "geometry": (str, "torus", "torus or free"),
    "kernel": (str, "pa", "plain, sum, min, max, prod or pa"),
    "profile": (str, "polynomial", "indicator or polynomial"),
    "beta": (float, 1.0, "edge density"),
    "gamma": (float, 0.3, "mark exponent"),
    "delta": (float, 3.0, "profile decay exponent"),
    "seed": (_seed, 0, "64-bit seed"),
}

COMMAND_OPTIONS = {
    "sample": {
        "out": (str, None, "graph file to write"),
        "palm": (_bool, False, "add a vertex at the origin"),
        "method": (str, "cell", "cell or naive"),
    },
    "degrees": {
        "in": (str, None, "graph file (sampled from the model options if absent)"),
        "tail_fraction": (float, 0.05, "fraction of largest degrees used by the Hill estimator"),
        "bootstrap": (int, 200, "bootstrap resamples"),
    },
    "percolate": {
        "radius": (float, None, "target distance (default side/4)"),
        "replicas": (int, 100, "replica graphs"),
        "betas": (_floats, None, "comma-separated beta sweep"),
        "beta_c": (_bool, False, "bracket the critical beta instead"),
        "beta_lo": (float, 0.1, "lower end of the bracket"),
        "beta_hi": (float, 10.0, "upper end of the bracket"),
        "tol": (float, 0.05, "bracket width"),
    },
    "walk": {
        "in": (str, None, "graph file with a Palm vertex"),
        "start": (str, "palm", "start vertex id or 'palm'"),
        "horizon": (int, 1000, "steps"),
        "replicas": (int, 1000, "independent walks"),
    },
    "conduct": {
        "in": (str, None, "graph file"),
        "source": (str, "palm", "source vertex id or 'palm'"),
        "radius": (float, 8.0, "sinks are vertices at least this far from the source"),
    },
    "project": {
        "in": (str, None, "planar graph file"),
        "n_max": (int, 100, "largest multiple of c1 in the tail table"),
    },
    "renorm": {
        "task": (str, "stages", "stages, boxes, coarse or connector"),
        "n_star": (int, 10, "first-stage offset"),
        "epsilon": (float, None, "epsilon (stages) or epsilon_star (boxes)"),
        "terms": (int, 50, "number of stage terms"),
        "p_b": (float, None, "use this first-stage probability instead of estimating it"),
        "stage": (int, 1, "box stage l"),
        "M": (float, 8.0, "coarse-graining box side"),
        "lam": (float, 0.5, "coarse-graining exponent"),
        "s": (float, 0.01, "first mark (connector)"),
        "t": (float, 0.01, "second mark (connector)"),
        "r": (float, 10.0, "distance (connector)"),
        "replicas": (int, 10000, "replicas (stages, connector)"),
        "in": (str, None, "graph file (boxes, coarse)"),
    },
    "criteria": {
        "task": (str, "kappa", "pair, kappa, cropping or gamma"),
        "r": (_floats, [10.0, 100.0, 1000.0, 10000.0], "distances for the pair table"),
        "epsilon": (float, 0.1, "cropping exponent"),
        "L": (int, 40, "cropping scales"),
        "K": (int, 40, "cropping distances"),
    },
    "phase": {},
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["command", "version", "seed", "config", "metrics", "timings"],
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "version": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "config": {"type": "object", "required": list(MODEL_OPTIONS)},
        "metrics": {"type": "object"},
        "timings": {"type": "object", "additionalProperties": {"type": "number", "minimum": 0}},
        "outputs": {"type": "object", "additionalProperties": {"type": "string"}},
    },
    "additionalProperties": False,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _flag(name):
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wrcm", description="Weight-dependent random connection model toolkit.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for cmd in COMMANDS:
        p = sub.add_parser(cmd, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="INI file with [common] and [%s] sections" % cmd)
        p.add_argument("--report", help="write the JSON report here instead of stdout")
        p.add_argument("--csv", help="write the command's table here")
        for name, (typ, default, text) in {**MODEL_OPTIONS, **COMMAND_OPTIONS[cmd]}.items():
            flags = [_flag(name)]
            if name == "out":
                flags.insert(0, "-o")
            p.add_argument(*flags, dest=name, type=str, help=f"{text} (default {default})")
    return parser


def resolve_config(cmd: str, given: dict) -> dict:
    """Defaults, then the config file, then flags; every value converted and checked."""
    options = {**MODEL_OPTIONS, **COMMAND_OPTIONS[cmd]}
    raw = {k: v[1] for k, v in options.items()}
    path = given.get("config")
    if path:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        if not cp.read(path):
            raise UsageError(f"cannot read config file {path}")
        for section in ("common", cmd):
            if cp.has_section(section):
                for key, val in cp.items(section):
                    key = key.replace("-", "_")
                    if key not in options:
                        raise UsageError(f"unknown key {key!r} in [{section}] of {path}")
                    raw[key] = val
    raw.update({k: v for k, v in given.items() if k in options})
    out = {}
    for key, val in raw.items():
        if val is None:
            out[key] = None
            continue
        try:
            out[key] = options[key][0](val)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad value for {key}: {exc}") from None
    return out


def _params(cfg) -> ModelParams:
    window = Window(cfg["side"], cfg["d"], Geometry(cfg["geometry"]))
    return ModelParams(kernel=Kernel(cfg["kernel"]), profile=Profile(cfg["profile"]), beta=cfg["beta"],
                       gamma=cfg["gamma"], delta=cfg["delta"], window=window)


def _params_from_graph(cfg, graph):
    p = graph.params
    cfg.update(d=p.d, side=p.window.side, geometry=p.window.geometry.value, kernel=p.kernel.value,
               profile=p.profile.value, beta=p.beta, gamma=p.gamma, delta=p.delta, seed=int(graph.seed or 0))


def _graph(cfg, params, palm: bool):
    if cfg.get("in"):
        try:
            g = read_graph(cfg["in"])
        except OSError as exc:
            raise UsageError(f"cannot read graph file: {exc}") from None
        _params_from_graph(cfg, g)
        return g
    return sample(params, cfg["seed"], palm=palm)


def _vertex(graph, text):
    if text == "palm":
        if graph.palm is None:
            raise UsageError("graph has no Palm vertex")
        return graph.palm
    try:
        v = int(text)
    except ValueError:
        raise UsageError(f"bad vertex {text!r}") from None
    if not 0 <= v < graph.n:
        raise UsageError(f"vertex {v} out of range")
    return v


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


class _Clock:
    def __init__(self):
        self.timings = {}

    def __call__(self, name, fn, *args, **kw):
        t = time.perf_counter()
        out = fn(*args, **kw)
        self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t
        return out


# ---------------------------------------------------------------------------
# commands; each returns (metrics, csv header, csv rows)


def cmd_sample(cfg, params, clock):
    if cfg["method"] not in ("cell", "naive"):
        raise UsageError("method must be cell or naive")
    g = clock("sample", sample, params, cfg["seed"], cfg["palm"], Method(cfg["method"]))
    if cfg["out"]:
        clock("write", write_graph, g, cfg["out"])
    deg = g.degrees
    metrics = {"vertices": g.n, "edges": int(g.edges.shape[0]),
               "mean_degree": float(deg.mean()) if g.n else 0.0, "palm": g.palm}
    return metrics, ["vertex", "degree"], list(enumerate(deg.tolist()))


def cmd_degrees(cfg, params, clock):
    g = clock("sample", _graph, cfg, params, False)
    est = clock("hill", degree_tail_exponent, g, cfg["tail_fraction"], cfg["bootstrap"], cfg["seed"])
    deg = g.degrees
    counts = np.bincount(deg) if deg.size else np.zeros(0, dtype=int)
    metrics = {"vertices": g.n, "mean_degree": float(deg.mean()) if g.n else 0.0,
               "max_degree": int(deg.max()) if g.n else 0, "tau": est.tau, "tail_index": est.tail_index,
               "tau_ci": list(est.ci), "tail_size": est.k}
    return metrics, ["degree", "count"], [(k, int(c)) for k, c in enumerate(counts) if c]


def cmd_percolate(cfg, params, clock):
    radius = cfg["radius"] or params.window.side / 4
    if cfg["beta_c"]:
        res = clock("search", estimate_beta_c, params, radius, cfg["replicas"], cfg["beta_lo"], cfg["beta_hi"],
                    cfg["tol"], cfg["seed"])
        metrics = {"radius": radius, "beta_c_lo": res.lo, "beta_c_hi": res.hi, "theta_lo": res.theta_lo,
                   "theta_hi": res.theta_hi, "steps": res.steps}
        return metrics, None, None
    if cfg["betas"]:
        betas = sorted(cfg["betas"])
        if betas[0] <= 0:
            raise UsageError("betas must be positive")
        th = clock("sweep", theta_curve, params, radius, betas, cfg["replicas"], cfg["seed"])
        metrics = {"radius": radius, "betas": betas, "theta": th.tolist()}
        return metrics, ["beta", "theta"], list(zip(betas, th.tolist()))
    est = clock("theta", estimate_theta, params, radius, cfg["replicas"], cfg["seed"])
    return {"radius": radius, "theta": est.theta, "ci": list(est.ci), "hits": est.hits}, None, None


def cmd_walk(cfg, params, clock):
    g = clock("sample", _graph, cfg, params, True)
    start = _vertex(g, cfg["start"])
    est = clock("walk", return_probability, g, start, cfg["horizon"], cfg["replicas"], cfg["seed"])
    st = est.stats
    metrics = {"start": start, "return_probability": est.probability, "ci": list(est.ci), "returns": st.returns,
               "mean_max_displacement": st.mean_max_displacement, "max_displacement": st.max_displacement}
    rows = [(t, int(c)) for t, c in enumerate(st.first_return_counts.tolist()) if t > 0]
    return metrics, ["time", "first_returns"], rows


def cmd_conduct(cfg, params, clock):
    g = clock("sample", _graph, cfg, params, True)
    source = _vertex(g, cfg["source"])
    radius = cfg["radius"]
    if not radius > 0:
        raise UsageError("radius must be positive")
    w = g.params.window
    dist = w.distance(g.points.positions, g.points.positions[source])
    sinks = np.flatnonzero(dist >= radius)
    net = ElectricalNetwork.from_graph(g)
    ceff = clock("solve", effective_conductance, net, source, sinks)
    metrics = {"source": source, "radius": radius, "sinks": int(sinks.size), "c_eff": ceff}
    if radius <= w.side / 2 and sinks.size:
        # shells at radius, radius/2, radius/4, ... down to 1
        radii = sorted(radius / 2**k for k in range(64) if radius / 2**k >= 1) or [radius]
        rel = w.displacement(g.points.positions[source], g.points.positions)
        fam = annular_cutsets(ElectricalNetwork(net.n, net.edges, net.conductances, rel), source, radii)
        metrics["nash_williams"] = clock("cutsets", nash_williams_bound, fam.network, source, fam.sinks, fam.cutsets)
        metrics["cutset_radii"] = radii
    return metrics, None, None


def cmd_project(cfg, params, clock):
    g = clock("sample", _graph, cfg, params, False)
    if g.params.d != 2:
        raise UsageError("projection needs d = 2")
    proj = clock("project", project_to_lattice, g)
    half = int(math.floor(g.params.window.side / 2))
    pool = lattice_bond_pool(proj, -half, half)
    c1 = fit_cauchy_scale(pool, cfg["n_max"])
    if not c1 > 0:
        c1 = float(pool.max()) if pool.size and pool.max() > 0 else 1.0
    table = conductance_tail(pool, c1, cfg["n_max"])
    metrics = {"cells": int(proj.cells.shape[0]), "bonds": int(proj.network.edges.shape[0]), "pool": int(pool.size),
               "c1": c1, "violations": int(table.violations.sum())}
    rows = zip(table.n.tolist(), table.survival.tolist(), table.envelope.tolist())
    return metrics, ["n", "survival", "envelope"], list(rows)


def cmd_renorm(cfg, params, clock):
    task = cfg["task"]
    if task == "stages":
        eps = cfg["epsilon"]
        if eps is None:
            raise UsageError("stages need --epsilon")
        st = clock("stages", stage_sequences, params.kernel, params.gamma, params.delta, params.d, params.beta,
                   cfg["n_star"], eps, cfg["terms"], params.profile, None, cfg["p_b"], cfg["replicas"], cfg["seed"])
        metrics = {"p_b": st.p_b, "p_b_exact": st.p_b_exact, "sum_inverse_C": float(st.partial_sums[-1]),
                   "via_min_kernel": st.via_min_kernel}
        rows = zip(range(1, cfg["terms"] + 1), st.log_u.tolist(), st.C.tolist(), st.D.tolist(),
                   st.partial_sums.tolist())
        return metrics, ["n", "log_u", "C", "D", "partial_sum"], list(rows)
    if task == "boxes":
        g = clock("sample", _graph, cfg, params, False)
        lab = clock("classify", classify_boxes, g, cfg["stage"], cfg["epsilon"] or 0.05)
        return {"stage": lab.stage, "side": lab.side, "threshold": lab.threshold, **lab.fractions}, None, None
    if task == "coarse":
        g = clock("sample", _graph, cfg, params, False)
        cg = clock("coarse", coarse_grain, g, cfg["M"], cfg["lam"])
        rows = [(*site, int(occ)) for site, occ in zip(cg.sites.tolist(), cg.occupied.tolist())]
        metrics = {"sites": int(len(cg.sites)), "occupied": int(cg.occupied.sum()), "bonds": int(len(cg.bonds))}
        return metrics, [*(f"x{i}" for i in range(params.d)), "occupied"], rows
    if task == "connector":
        x = (np.zeros(params.d), cfg["s"])
        y = (np.eye(params.d)[0] * cfg["r"], cfg["t"])
        b = connector_bound(x, y, params)
        f = clock("simulate", connector_frequency, params, cfg["s"], cfg["t"], cfg["r"], cfg["replicas"], cfg["seed"])
        return {"q": b.q, "lower_bound": b.lower_bound, "frequency": f.frequency, "sigma": f.sigma}, None, None
    raise UsageError(f"unknown renorm task {task!r}")


def cmd_criteria(cfg, params, clock):
    task = cfg["task"]
    k, g, dl, d = params.kernel, params.gamma, params.delta, params.d
    if task == "pair":
        r = cfg["r"]
        pi = [clock("quadrature", pair_connection_prob, k, g, dl, params.beta, d, x, params.profile) for x in r]
        scaled = [x ** (2 * d) * p for x, p in zip(r, pi)]
        return {"r": r, "probability": pi, "scaled": scaled}, ["r", "probability", "r^2d*probability"], \
            list(zip(r, pi, scaled))
    if task == "kappa":
        res = clock("quadrature", kappa_exponent, k, g, dl, d, None, params.beta, params.profile)
        metrics = {"limit": res.limit, "reference": kappa_reference(k, g, dl)}
        return metrics, ["n", "log_integral", "ratio"], list(zip(res.n.tolist(), res.log_integral.tolist(),
                                                                  res.ratios.tolist()))
    if task == "cropping":
        rep = clock("quadrature", cropping_check, k, g, dl, d, cfg["epsilon"], cfg["L"], cfg["K"], params.beta,
                    params.profile)
        metrics = {"k_sup": rep.k_sup, "sums": list(rep.sums), "flags": rep.flags,
                   "accurately_cropping": rep.accurately_cropping}
        rows = zip(range(1, cfg["L"] + 1), rep.log_sum1_terms.tolist(), rep.log_sum2_terms.tolist())
        return metrics, ["l", "log_sum1_term", "log_sum2_term"], list(rows)
    if task == "gamma":
        gc = gamma_condition(k, g)
        return {"value": gc.value, "passes": gc.passes}, None, None
    raise UsageError(f"unknown criteria task {task!r}")


def cmd_phase(cfg, params, clock):
    return {"label": phase_classify(params.kernel, params.gamma, params.delta, params.d).value}, None, None


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def _threads():
    val = os.environ.get("WRCM_THREADS")
    if not val:
        return
    try:
        n = int(val)
    except ValueError:
        raise UsageError(f"WRCM_THREADS must be an integer, got {val!r}") from None
    if n < 1:
        raise UsageError("WRCM_THREADS must be positive")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def run(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        cmd = ns.command
        given = {k: v for k, v in vars(ns).items() if k != "command"}
        cfg = resolve_config(cmd, given)
        _threads()
        params = _params(cfg)
    except (UsageError, ModelError, ValueError) as exc:
        print(f"wrcm: error: {exc}", file=sys.stderr)
        return 1

    clock = _Clock()
    try:
        metrics, header, rows = HANDLERS[cmd](cfg, params, clock)
    except (UsageError, ModelError) as exc:
        print(f"wrcm: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report any failure with the runtime exit code
        print(f"wrcm: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2

    outputs = {}
    if given.get("csv") and header is not None:
        _write_csv(given["csv"], header, rows)
        outputs["csv"] = given["csv"]
    if cfg.get("out"):
        outputs["graph"] = cfg["out"]
    report = {"command": cmd, "version": __version__, "seed": cfg["seed"], "config": _jsonable(cfg),
              "metrics": _jsonable(metrics), "timings": clock.timings}
    if outputs:
        report["outputs"] = outputs
    text = json.dumps(report, indent=2, sort_keys=True)
    if given.get("report"):
        with open(given["report"], "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def main():
    sys.exit(run())
