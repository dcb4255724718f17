"""Command-line entry point ``ddelab``.

Every subcommand writes its artifact to ``-o PATH`` and the fully resolved
run configuration to ``PATH.config.json``.  Parameters come from built-in
defaults, then an optional ``--config`` JSON file, then explicit flags.

Exit codes: 0 success, 2 invalid configuration, 3 domain error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import output
from . import scalar_maps as sm
from .dde_solver import (
    NamedModel,
    Verdict,
    default_ensemble,
    estimate_hc,
    integrate,
    normalize_model,
    T_END_CAP,
    probe_global_stability,
)
from .errors import ConfigInvalid, DDELabError, DomainError
from .fundamental_solution import contour_value, decay_envelope, fundamental_exact, fundamental_numeric
from .quasipoly import QuasiPoly, roots_in_strips
from .stability_regions import (
    chart,
    classify,
    global_bound_delay,
    local_boundary_delay,
    to_mu_nu,
)
from .steps import History

VERSION = 1
MAX_CELLS = 10_000

# ---------------------------------------------------------------------------
# value parsers; each raises ConfigInvalid


def parse_grid(v):
    """'a:b:n' gives n+1 equispaced points; also 'x,y,z' or a JSON list."""
    if isinstance(v, (list, tuple)):
        pts = [float(x) for x in v]
    elif isinstance(v, str) and v.count(":") == 2:
        a, b, n = v.split(":")
        a, b, n = float(a), float(b), int(n)
        if n < 0 or (n == 0 and a != b):
            raise ConfigInvalid(f"grid {v!r}: need n >= 1, or n = 0 with a == b")
        pts = [a] if n == 0 else np.linspace(a, b, n + 1).tolist()
    elif isinstance(v, str) and v.strip():
        pts = [float(x) for x in v.split(",")]
    else:
        pts = []
    if not pts:
        raise ConfigInvalid(f"empty grid {v!r}")
    if not all(math.isfinite(p) for p in pts):
        raise ConfigInvalid(f"non-finite grid value in {v!r}")
    return pts


def parse_window(v):
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return [float(v[0]), float(v[1])]
    parts = str(v).split(":")
    if len(parts) != 2:
        raise ConfigInvalid(f"window {v!r} must look like lo:hi")
    return [float(parts[0]), float(parts[1])]


def parse_points(v):
    if v is None:
        return None
    try:
        pts = [[float(z), float(h)] for z, h in v]
    except (TypeError, ValueError) as e:
        raise ConfigInvalid(f"points must be a list of [zeta, h] pairs: {e}") from None
    if not pts:
        raise ConfigInvalid("empty point list")
    return pts


def parse_nonlinearity(spec: str):
    """Return (Nonlinearity, info dict) for strings like 'tanh' or 'nicholson:10,1'."""
    name, _, args = str(spec).partition(":")
    vals = [float(x) for x in args.split(",")] if args else []
    name = name.strip().lower()
    if name == "tanh" and not vals:
        return sm.tanh(), {}
    if name == "linear" and not vals:
        return sm.linear(), {}
    if name == "lasota-wazewska" and len(vals) <= 1:
        return sm.lasota_wazewska_shifted(vals[0] if vals else 1.0), {}
    models = {"mackey-glass": "MackeyGlass", "mackey-glass-hill": "MackeyGlassHill",
              "nicholson": "Nicholson", "lasota-wazewska-model": "LasotaWazewska"}
    if name in models and 1 <= len(vals) <= 3:
        m = NamedModel(models[name], *vals)
        nl, zeff = normalize_model(m)
        return nl, {"model": models[name], "equilibrium": m.equilibrium, "zeta_eff": zeff}
    raise ConfigInvalid(f"unknown nonlinearity {spec!r}")


def parse_history(spec: str) -> History:
    kind, _, args = str(spec).partition(":")
    vals = [float(x) for x in args.split(",")] if args else []
    kind = kind.strip().lower()
    if kind == "constant" and len(vals) == 1:
        return History.constant(vals[0])
    if kind == "linear" and len(vals) == 2:
        return History.linear(*vals)
    if kind == "sinusoid" and len(vals) == 2:
        return History.sinusoid(*vals)
    if kind == "sampled" and len(vals) >= 2:
        return History.sampled(np.linspace(-1.0, 0.0, len(vals)), vals)
    raise ConfigInvalid(f"unknown history {spec!r}")


def _num(kind):
    def conv(v):
        if isinstance(v, bool):
            raise ConfigInvalid(f"expected a number, got {v!r}")
        x = float(v)
        if not math.isfinite(x):
            raise ConfigInvalid(f"non-finite value {v!r}")
        if kind == "pos" and not x > 0:
            raise ConfigInvalid(f"expected a positive number, got {v!r}")
        if kind == "nonneg" and not x >= 0:
            raise ConfigInvalid(f"expected a non-negative number, got {v!r}")
        return x
    return conv


def _int(minimum):
    def conv(v):
        if isinstance(v, bool) or float(v) != int(float(v)):
            raise ConfigInvalid(f"expected an integer, got {v!r}")
        n = int(float(v))
        if n < minimum:
            raise ConfigInvalid(f"expected an integer >= {minimum}, got {v!r}")
        return n
    return conv


def _optional(conv):
    return lambda v: None if v is None else conv(v)


def _choice(*options):
    def conv(v):
        if v not in options:
            raise ConfigInvalid(f"expected one of {options}, got {v!r}")
        return v
    return conv


def _flag(v):
    if not isinstance(v, bool):
        raise ConfigInvalid(f"expected true/false, got {v!r}")
    return v


def _policy(v):
    if not isinstance(v, dict) or not set(v) <= {"alpha", "cap", "fixed"}:
        raise ConfigInvalid(f"t_end_policy must be an object with alpha, cap or fixed: {v!r}")
    return {k: POS(x) for k, x in v.items()}


REQUIRED = object()
POS, NONNEG, FLOAT = _num("pos"), _num("nonneg"), _num("any")
NL = (str, "tanh")

# name -> (converter, default)
PARAMS = {
    "chart": {"mu_grid": (parse_grid, REQUIRED)},
    "spectrum": {"h": (POS, REQUIRED), "zeta": (POS, 1.0), "kmax": (_int(0), 2),
                 "tol": (POS, 1e-10)},
    "fundsol": {"h": (POS, REQUIRED), "t_max": (POS, REQUIRED),
                "method": (_choice("exact", "numeric", "contour"), "numeric"),
                "n_points": (_int(2), 201), "tol": (POS, 1e-10), "abscissa": (FLOAT, 0.1),
                "T": (POS, 1e4)},
    "envelope": {"h": (POS, REQUIRED), "alpha": (POS, 3.0), "t_max": (_optional(POS), None),
                 "tol": (POS, 1e-8)},
    "simulate": {"nonlinearity": NL, "zeta": (POS, REQUIRED), "h": (NONNEG, REQUIRED),
                 "history": (str, "constant:1"), "t_end": (POS, REQUIRED), "tol": (POS, 1e-10),
                 "stride": (_int(1), 1)},
    "probe": {"nonlinearity": NL, "zeta": (POS, REQUIRED), "h": (NONNEG, REQUIRED),
              "t_end": (_optional(POS), None), "tol": (POS, 1e-6)},
    "sweep": {"nonlinearity": NL, "zeta_grid": (_optional(parse_grid), None),
              "h_grid": (_optional(parse_grid), None), "points": (parse_points, None),
              "t_end": (_optional(POS), None), "tol": (POS, 1e-6),
              "t_end_policy": (_policy, {"alpha": 3.0, "cap": T_END_CAP}),
              "force": (_flag, False), "resume": (_flag, False)},
    "attractor": {"nonlinearity": NL, "zeta": (POS, REQUIRED), "tol": (POS, 1e-10)},
    "hypotheses": {"nonlinearity": NL, "window": (parse_window, [-10.0, 10.0]),
                   "n_samples": (_int(100), 10_000)},
    "hc": {"nonlinearity": NL, "zeta": (POS, REQUIRED), "h_lo": (POS, REQUIRED),
           "h_hi": (POS, REQUIRED), "n_bisect": (_int(0), 8), "n_scan": (_int(0), 0),
           "t_end": (_optional(POS), None), "tol": (POS, 1e-6)},
}
COMMON = {"seed": (_int(0), 7), "precision": (_int(1), 15)}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigInvalid(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ddelab", description="Delay-equation stability laboratory")
    sub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    for name, params in PARAMS.items():
        sp = sub.add_parser(name)
        sp.add_argument("-o", "--output", required=True)
        sp.add_argument("--config", help="JSON file with parameters")
        for key, (conv, _) in {**params, **COMMON}.items():
            flag = "--" + key.replace("_", "-")
            if conv is _flag:
                sp.add_argument(flag, dest=key, action="store_const", const=True, default=None)
            else:
                sp.add_argument(flag, dest=key, default=None)
    return p


def resolve(args) -> dict:
    cmd = args.subcommand
    spec = {**PARAMS[cmd], **COMMON}
    raw = {k: d for k, (_, d) in spec.items()}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigInvalid(f"cannot read config {args.config}: {e}") from None
        cfg = cfg.get("parameters", cfg) if isinstance(cfg, dict) else cfg
        if not isinstance(cfg, dict):
            raise ConfigInvalid("config must be a JSON object")
        if "ensemble" in cfg and isinstance(cfg["ensemble"], dict) and "seed" in cfg["ensemble"]:
            cfg = {**cfg, "seed": cfg["ensemble"]["seed"]}
        for k, v in cfg.items():
            if k in ("subcommand", "output_path", "version", "ensemble"):
                continue
            if k not in spec:
                raise ConfigInvalid(f"unknown parameter {k!r} for {cmd}")
            raw[k] = v
    for k in spec:
        v = getattr(args, k, None)
        if v is not None:
            raw[k] = v
    resolved = {}
    for k, (conv, _) in spec.items():
        v = raw[k]
        if v is REQUIRED:
            raise ConfigInvalid(f"missing required parameter --{k.replace('_', '-')}")
        try:
            resolved[k] = conv(v)
        except ConfigInvalid:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigInvalid(f"bad value for {k}: {v!r} ({e})") from None
    return resolved


# ---------------------------------------------------------------------------
# subcommands


def run_chart(P, out):
    rows = chart(P["mu_grid"])
    output.write_csv(out, ["mu", "nu1", "nu2", "nu3"], rows)


def run_spectrum(P, out):
    spec = roots_in_strips(QuasiPoly(P["h"], P["zeta"]), P["kmax"], P["tol"])
    output.write_json(out, {**spec.to_dict(), "strip_sizes": spec.strip_sizes,
                            "k_max": P["kmax"]})


def run_fundsol(P, out):
    h, t_max = P["h"], P["t_max"]
    ts = np.linspace(0.0, t_max, P["n_points"])
    if P["method"] == "exact":
        v = fundamental_exact(h, t_max)(ts)
    elif P["method"] == "numeric":
        v = fundamental_numeric(h, t_max, P["tol"])(ts)
    else:
        ts = ts[1:]
        v = [contour_value(h, float(t), P["abscissa"], P["T"]) for t in ts]
    output.write_csv(out, ["t", "v"], zip(ts, v))


def run_envelope(P, out):
    rep = decay_envelope(P["h"], P["alpha"], P["t_max"], P["tol"])
    output.write_json(out, rep.to_dict())


def run_simulate(P, out):
    nl, _ = parse_nonlinearity(P["nonlinearity"])
    tr = integrate(nl, P["zeta"], P["h"], parse_history(P["history"]), P["t_end"], P["tol"])
    k = P["stride"]
    idx = np.arange(0, len(tr.t), k)
    if idx[-1] != len(tr.t) - 1:
        idx = np.append(idx, len(tr.t) - 1)
    output.write_csv(out, ["t", "x"], zip(tr.t[idx], tr.x[idx]))


def _probe_record(nl, zeta, h, P, policy=None):
    policy = policy or {}
    t_end = P.get("t_end") or policy.get("fixed")
    rep = probe_global_stability(nl, zeta, h, default_ensemble(P["seed"]), t_end, P["tol"],
                                 alpha=policy.get("alpha", 3.0),
                                 cap=policy.get("cap", T_END_CAP))
    label = classify(rep.point)
    d = rep.to_dict()
    d["label"] = label.value
    if label.proved_global and rep.verdict is Verdict.SomeDiverged:
        d["flag"] = "FATAL"
    elif label.proved_global and rep.verdict is Verdict.Inconclusive:
        d["flag"] = "WARN"
    else:
        d["flag"] = ""
    return d


def run_probe(P, out):
    nl, info = parse_nonlinearity(P["nonlinearity"])
    d = _probe_record(nl, P["zeta"], P["h"], P)
    output.write_json(out, {**d, "nonlinearity": nl.tag, **info})


def run_sweep(P, out):
    nl, _ = parse_nonlinearity(P["nonlinearity"])
    if P["points"] is not None:
        cells = P["points"]
    elif P["zeta_grid"] is not None and P["h_grid"] is not None:
        cells = [[z, h] for z in P["zeta_grid"] for h in P["h_grid"]]
    else:
        raise ConfigInvalid("sweep needs zeta_grid and h_grid, or points")
    if len(cells) > MAX_CELLS and not P["force"]:
        raise ConfigInvalid(f"{len(cells)} cells exceed {MAX_CELLS}; pass --force")
    for z, h in cells:
        if not (z > 0 and h >= 0):
            raise ConfigInvalid(f"cell (zeta={z}, h={h}) outside zeta > 0, h >= 0")

    run = Path(out)
    cell_dir = run / "cells"
    cell_dir.mkdir(parents=True, exist_ok=True)
    marker = run / "RUNNING"
    if marker.exists() and not P["resume"]:
        raise ConfigInvalid(f"{run} holds an unfinished sweep; pass --resume")
    marker.write_text("in progress\n")

    def work(i):
        path = cell_dir / f"cell_{i:05d}.json"
        if P["resume"] and path.exists():
            return json.loads(path.read_text())
        z, h = cells[i]
        d = {"index": i, **_probe_record(nl, z, h, P, P["t_end_policy"])}
        output.write_json(path, d)
        return json.loads(output.dumps(d))

    threads = max(1, int(os.environ.get("DDE_LAB_THREADS", "1") or 1))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        records = list(pool.map(work, range(len(cells))))

    cols = ["zeta", "h", "mu", "nu", "label", "verdict", "flag"]
    output.write_csv(run / "summary.csv", cols, [[r[c] for c in cols] for r in records])
    counts = {v.value: sum(r["verdict"] == v.value for r in records) for v in Verdict}
    output.write_json(run / "summary.json", {"cells": len(records), "verdicts": counts,
                                             "fatal": sum(r["flag"] == "FATAL" for r in records)})
    marker.unlink()


def run_attractor(P, out):
    nl, info = parse_nonlinearity(P["nonlinearity"])
    iv = sm.attractor_interval(nl, P["zeta"], P["tol"])
    output.write_json(out, {"a": iv.a, "b": iv.b, "zeta": iv.zeta, "residual": iv.residual,
                            "nonlinearity": nl.tag, **info})


def run_hypotheses(P, out):
    nl, info = parse_nonlinearity(P["nonlinearity"])
    rep = sm.check_hypotheses(nl, P["window"], P["n_samples"])
    output.write_json(out, {**rep.to_dict(), "nonlinearity": nl.tag, **info})


def run_hc(P, out):
    nl, info = parse_nonlinearity(P["nonlinearity"])
    est = estimate_hc(nl, P["zeta"], P["h_lo"], P["h_hi"], default_ensemble(P["seed"]),
                      P["t_end"], n_bisect=P["n_bisect"], n_scan=P["n_scan"], tol=P["tol"])
    d = est.to_dict()
    z = P["zeta"]
    d.update({"zeta": z, "lower_bound": global_bound_delay(z),
              "local_boundary": local_boundary_delay(z), "nonlinearity": nl.tag, **info})
    output.write_json(out, d)


RUNNERS = {"chart": run_chart, "spectrum": run_spectrum, "fundsol": run_fundsol,
           "envelope": run_envelope, "simulate": run_simulate, "probe": run_probe,
           "sweep": run_sweep, "attractor": run_attractor, "hypotheses": run_hypotheses,
           "hc": run_hc}


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        P = resolve(args)
        output.DIGITS = P["precision"]
        out = args.output
        config = {"version": VERSION, "subcommand": args.subcommand, "parameters": P,
                  "output_path": out, "seed": P["seed"], "precision": P["precision"]}
        with np.errstate(all="ignore"):
            RUNNERS[args.subcommand](P, out)
        output.write_json(f"{out.rstrip('/')}.config.json", config)
        return 0
    except ConfigInvalid as e:
        return _fail("ConfigInvalid", str(e), 2)
    except DomainError as e:
        return _fail(type(e).__name__, str(e), 3)
    except DDELabError as e:
        return _fail(type(e).__name__, str(e), 3)
    finally:
        output.DIGITS = 15


if __name__ == "__main__":
    sys.exit(main())
