"""Command-line experiment runner.

``mvjl run config.json [--seed S] [--threads T] [--out DIR]`` writes

* ``report.json``: the deterministic report body (sorted keys, round-trip floats),
* ``*.csv``: flat tables backing every reported number,
* ``stamp.json``: config hash, seed and package version,
* ``metadata.json``: wall-clock timestamps and the thread cap (not part of the body).

Exit status: 0 all tolerances met, 1 a tolerance failed, 2 invalid configuration,
3 numerical blow-up.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigurationError, MvjlError, SimulationError
from .functional import GirsanovTilt
from .lderiv import LiftConfig, l_derivative, l_derivative_hessian, l_derivative_jacobian
from .measure import EmpiricalMeasure
from .model import builtin_model, builtin_test_function, list_models, list_test_functions
from .rng import SAMPLE, RandomStream
from .simulate import GaussianInitial, PointInitial, SimulationConfig, simulate_particle_system
from .verify import (VerificationReport, feynman_kac_value, functional_from_value, girsanov_system_check,
                     ito_expectation_check, measure_flow_derivative_check, pathwise_test, pide_residuals)

EXPERIMENTS = ("simulate", "verify-path", "residuals", "ito-check", "flow-derivative", "girsanov",
               "lderiv-check", "feynman-kac")
TOP_KEYS = {"experiment", "model", "value", "perturbation", "simulation", "tolerance", "seed", "output",
            "tilt", "options"}
SIM_KEYS = {"T", "n_steps", "N", "initial", "refinement"}
INITIAL_KEYS = {"point": {"kind", "x"}, "gaussian": {"kind", "mean", "sd"}}
OPTION_KEYS = {
    "simulate": {"checkpoints", "events"},
    "verify-path": {"intervals"},
    "residuals": set(),
    "ito-check": {"replicates", "times", "stride"},
    "flow-derivative": {"replicates", "times", "window"},
    "girsanov": set(),
    "lderiv-check": {"K", "h_fd", "atom", "other"},
    "feynman-kac": {"points", "M", "K"},
}


# ---------------------------------------------------------------- config

def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _reject_unknown(text: str, obj: dict, allowed: set, where: str) -> None:
    for k in obj:
        if k not in allowed:
            raise ConfigurationError(f"unknown key '{k}' in {where}; allowed: {sorted(allowed)}", _line_of(text, k))


def _number(text, obj, key, lo=None, hi=None, integer=False, default=None):
    if key not in obj:
        if default is None:
            raise ConfigurationError(f"missing required key '{key}'")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not isinstance(v, int)):
        raise ConfigurationError(f"'{key}' must be {'an integer' if integer else 'a number'}", _line_of(text, key))
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise ConfigurationError(f"'{key}' = {v} outside [{lo}, {hi}]", _line_of(text, key))
    return v


def load_config(path: str | Path) -> tuple[dict, str]:
    """Parse and validate a run configuration; returns (config, raw text)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config: {exc}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(cfg, dict):
        raise ConfigurationError("config must be a JSON object", 1)
    _reject_unknown(text, cfg, TOP_KEYS, "config")
    exp = cfg.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigurationError(f"experiment must be one of {list(EXPERIMENTS)}, got {exp!r}",
                                 _line_of(text, "experiment"))
    if exp != "lderiv-check":
        model = cfg.get("model")
        if not isinstance(model, dict) or "name" not in model:
            raise ConfigurationError("'model' must be an object with a 'name'", _line_of(text, "model"))
        _reject_unknown(text, model, {"name", "params"}, "model")
    for sect in ("value", "tilt", "perturbation", "options", "simulation"):
        if sect in cfg and not isinstance(cfg[sect], dict):
            raise ConfigurationError(f"'{sect}' must be an object", _line_of(text, sect))
    if "value" in cfg:
        _reject_unknown(text, cfg["value"], {"name", "params"}, "value")
    if "perturbation" in cfg:
        _reject_unknown(text, cfg["perturbation"], {"g1", "g2", "g3", "g4"}, "perturbation")
        for k in cfg["perturbation"]:
            _number(text, cfg["perturbation"], k)
    if "tilt" in cfg:
        _reject_unknown(text, cfg["tilt"], {"btilde", "lambda"}, "tilt")
        _number(text, cfg["tilt"], "lambda", lo=1e-12, hi=1.0, default=1.0)
    _reject_unknown(text, cfg.get("options", {}), OPTION_KEYS[exp], f"options for {exp}")
    sim = cfg.get("simulation", {})
    _reject_unknown(text, sim, SIM_KEYS, "simulation")
    _number(text, sim, "T", lo=1e-12, default=1.0)
    _number(text, sim, "n_steps", lo=1, integer=True, default=100)
    _number(text, sim, "N", lo=1, integer=True, default=100)
    _number(text, sim, "refinement", lo=1, integer=True, default=1)
    init = sim.get("initial", {"kind": "point", "x": [0.0]})
    if not isinstance(init, dict) or init.get("kind") not in INITIAL_KEYS:
        raise ConfigurationError("simulation.initial needs kind 'point' or 'gaussian'", _line_of(text, "initial"))
    _reject_unknown(text, init, INITIAL_KEYS[init["kind"]], "simulation.initial")
    if "seed" in cfg:
        _number(text, cfg, "seed", lo=0, integer=True)
    if cfg.get("tolerance") is not None:
        _number(text, cfg, "tolerance", lo=0.0)
    # resolve builtin names now so errors carry a line number
    try:
        if exp != "lderiv-check":
            builtin_model(cfg["model"]["name"], cfg["model"].get("params"))
        if "value" in cfg:
            builtin_test_function(cfg["value"].get("name"), cfg["value"].get("params"))
    except ConfigurationError as exc:
        key = "value" if "test function" in str(exc) else "model"
        raise ConfigurationError(str(exc), _line_of(text, key)) from None
    return cfg, text


def _sim_config(cfg: dict, seed: int) -> SimulationConfig:
    sim = cfg.get("simulation", {})
    init = sim.get("initial", {"kind": "point", "x": [0.0]})
    if init["kind"] == "point":
        initial = PointInitial(tuple(float(v) for v in np.atleast_1d(init.get("x", [0.0]))))
    else:
        initial = GaussianInitial(tuple(float(v) for v in np.atleast_1d(init.get("mean", [0.0]))),
                                  float(init.get("sd", 1.0)))
    return SimulationConfig(T=float(sim.get("T", 1.0)), n_steps=int(sim.get("n_steps", 100)), N=int(sim.get("N", 100)),
                            seed=seed, initial=initial, refinement=int(sim.get("refinement", 1)))


def _value(cfg: dict, default: str = "linear"):
    v = cfg.get("value", {"name": default})
    return builtin_test_function(v.get("name", default), v.get("params"))


# ---------------------------------------------------------------- experiments

def _exp_simulate(cfg, sim, threads):
    model = builtin_model(cfg["model"]["name"], cfg["model"].get("params"))
    opts = cfg.get("options", {})
    bundle = simulate_particle_system(model, sim, threads=threads)
    every = max(1, sim.n_steps // int(opts.get("checkpoints", 10)))
    rows = []
    for k in range(0, sim.n_steps + 1, every):
        x = bundle.state(k)
        rows.append({"k": k, "t": bundle.time(k), "mean": float(x.mean()), "variance": float(x.var()),
                     "second_moment": float(np.mean(np.sum(x * x, axis=1)))})
    tables = {"trajectory_summary": rows}
    if opts.get("events", False):
        tables["events"] = [{"k": int(s), "i": int(i), **{f"u{r}": float(v) for r, v in enumerate(u)}}
                            for s, i, u in zip(bundle.ev_step, bundle.ev_particle, bundle.ev_mark)]
    stats = {"final_mean": rows[-1]["mean"], "final_variance": rows[-1]["variance"],
             "accepted_events": bundle.accepted_count()}
    return VerificationReport("simulate", True, stats, tables, {}, {"model": model.name,
                                                                   "model_params": dict(model.params)})


def _spec(cfg, model, V):
    spec = functional_from_value(model, V)
    pert = cfg.get("perturbation", {})
    if any(pert.get(k, 0.0) for k in ("g1", "g2", "g3", "g4")):
        spec = spec.perturbed(**{k: float(v) for k, v in pert.items()})
    return spec


def _exp_verify_path(cfg, sim, threads):
    model = builtin_model(cfg["model"]["name"], cfg["model"].get("params"))
    V = _value(cfg)
    return pathwise_test(model, V, _spec(cfg, model, V), sim, cfg.get("tolerance"), threads=threads,
                         intervals=int(cfg.get("options", {}).get("intervals", 4)))


def _exp_residuals(cfg, sim, threads):
    model = builtin_model(cfg["model"]["name"], cfg["model"].get("params"))
    V = _value(cfg)
    tol = cfg.get("tolerance")
    return pide_residuals(model, V, _spec(cfg, model, V), tol=1e-10 if tol is None else float(tol), T=sim.T,
                          seed=sim.seed)


def _exp_ito(cfg, sim, threads):
    model = builtin_model(cfg["model"]["name"], cfg["model"].get("params"))
    o = cfg.get("options", {})
    return ito_expectation_check(model, _value(cfg, "quadratic"), sim, replicates=int(o.get("replicates", 20)),
                                 times=o.get("times"), stride=o.get("stride"), threads=threads)


def _exp_flow(cfg, sim, threads):
    model = builtin_model(cfg["model"]["name"], cfg["model"].get("params"))
    o = cfg.get("options", {})
    return measure_flow_derivative_check(model, _value(cfg, "second_moment"), sim,
                                         replicates=int(o.get("replicates", 20)), times=o.get("times"),
                                         window=o.get("window"), threads=threads)


def _exp_girsanov(cfg, sim, threads):
    model = builtin_model(cfg["model"]["name"], cfg["model"].get("params"))
    t = cfg.get("tilt", {})
    tilt = GirsanovTilt.constant(t.get("btilde", [0.0] * model.m), float(t.get("lambda", 1.0)))
    return girsanov_system_check(model, tilt, _value(cfg), sim, cfg.get("tolerance"), threads=threads)


def _exp_lderiv(cfg, sim, threads):
    o = cfg.get("options", {})
    V = _value(cfg, "second_moment")
    K = int(o.get("K", 50))
    lift = LiftConfig(float(o.get("h_fd", 1e-4)))
    d = V.d or 1
    rs = RandomStream(sim.seed).spawn(53)
    mu = EmpiricalMeasure(rs.normal(SAMPLE, 0, np.arange(K)[:, None], np.arange(d)[None, :]))
    x0 = np.zeros((1, d))

    def H(m):
        return float(np.asarray(V.value(0.0, x0, m)).reshape(-1)[0])

    i, j = int(o.get("atom", 0)), int(o.get("other", 1))
    yi, yj = mu.atoms[i:i + 1], mu.atoms[j:j + 1]
    rows = []
    for kind, num, ana in (
            ("dmu", l_derivative(H, mu, i, lift), V.dmu(0.0, x0, mu, yi)[0, 0]),
            ("dydmu", l_derivative_jacobian(H, mu, i, lift), V.dydmu(0.0, x0, mu, yi)[0, 0]),
            ("dmu2", l_derivative_hessian(H, mu, i, j, lift), V.dmu2(0.0, x0, mu, yi, yj)[0, 0])):
        rows.append({"derivative": kind, "numeric": np.ravel(num).tolist(), "analytic": np.ravel(ana).tolist(),
                     "error": float(np.max(np.abs(np.asarray(num) - np.asarray(ana))))})
    tol = cfg.get("tolerance")
    tols = {"dmu": 1e-6, "dydmu": 1e-4, "dmu2": 5e-3} if tol is None else dict.fromkeys(("dmu", "dydmu", "dmu2"), tol)
    ok = all(r["error"] <= tols[r["derivative"]] for r in rows)
    return VerificationReport(f"lderiv[{V.name}]", ok, {r["derivative"] + "_error": r["error"] for r in rows},
                              {"derivatives": rows}, tols, {"K": K, "h_fd": lift.h_fd, "atom": i, "other": j})


def _exp_feynman_kac(cfg, sim, threads):
    model = builtin_model(cfg["model"]["name"], cfg["model"].get("params"))
    V = _value(cfg)
    spec = functional_from_value(model, V)
    o = cfg.get("options", {})
    M = int(o.get("M", 10_000))
    K = int(o.get("K", 64))
    points = o.get("points", [[0.0, [0.0]], [0.5 * sim.T, [1.0]], [0.0, [-1.0]]])
    rs = RandomStream(sim.seed).spawn(59)
    mu = EmpiricalMeasure(sim.initial(rs, np.arange(K), model.d))
    rows = []
    ok = True
    for q, (t, x) in enumerate(points):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        val, se = feynman_kac_value(model, lambda xx, mm: V.value(sim.T, xx, mm), spec.g1, spec.g4, float(t), x,
                                    mu, sim, M, stream=rs.spawn(q), threads=threads)
        target = float(np.asarray(V.value(float(t), x.reshape(1, -1), mu)).reshape(-1)[0])
        tol = cfg.get("tolerance")
        band = 3.0 * se + (sim.dt if tol is None else float(tol))
        row = {"t": float(t), "x": x.tolist(), "value": val, "se": se, "target": target, "band": band,
               "pass": abs(val - target) <= band}
        ok = ok and row["pass"]
        rows.append(row)
    return VerificationReport(f"feynman_kac[{V.name}]", ok, {"max_error": max(abs(r["value"] - r["target"]) for r in rows)},
                              {"points": rows}, {"band": "3 se + dt (or 3 se + tolerance)"},
                              {"model": model.name, "model_params": dict(model.params), "M": M, "K": K})


DISPATCH = {
    "simulate": _exp_simulate, "verify-path": _exp_verify_path, "residuals": _exp_residuals,
    "ito-check": _exp_ito, "flow-derivative": _exp_flow, "girsanov": _exp_girsanov,
    "lderiv-check": _exp_lderiv, "feynman-kac": _exp_feynman_kac,
}


# ---------------------------------------------------------------- output

def _flatten(v):
    if isinstance(v, (list, tuple)):
        return " ".join(repr(float(e)) if isinstance(e, float) else str(e) for e in v)
    if isinstance(v, float):
        return repr(v)
    return v


def _write_tables(report: VerificationReport, out: Path, prefix: str = "") -> list:
    written = []
    # summary statistics get their own table so every reported number has a row
    summary = [{"report": report.name, "statistic": k, "value": v} for k, v in report.stats.items()]
    summary.append({"report": report.name, "statistic": "passed", "value": bool(report.passed)})
    for name, rows in {"summary": summary, **report.tables}.items():
        if not rows:
            continue
        path = out / f"{prefix}{name}.csv"
        cols = list(rows[0].keys())
        for r in rows:
            cols += [c for c in r if c not in cols]
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({c: _flatten(r.get(c, "")) for c in cols})
        written.append(path.name)
    for key, child in report.children.items():
        written += _write_tables(child, out, f"{prefix}{key}_")
    return written


def report_body(cfg: dict, seed: int, report: VerificationReport) -> str:
    body = {"version": __version__, "experiment": cfg["experiment"], "seed": seed,
            "config": {k: v for k, v in cfg.items() if k != "output"}, "report": report.to_dict()}
    return json.dumps(body, sort_keys=True, indent=2, allow_nan=True) + "\n"


def config_hash(cfg: dict, seed: int) -> str:
    canon = json.dumps({**{k: v for k, v in cfg.items() if k != "output"}, "seed": seed}, sort_keys=True,
                       separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def run(config_path: str, seed: int | None = None, threads: int = 1, out: str | None = None) -> int:
    """Execute one configured experiment; returns the exit status."""
    started = time.time()
    try:
        cfg, _ = load_config(config_path)
        seed = int(cfg.get("seed", 0)) if seed is None else int(seed)
        if seed < 0:
            raise ConfigurationError("seed must be non-negative")
        outdir = Path(out or cfg.get("output") or "mvjl-out")
        sim = _sim_config(cfg, seed)
    except (ConfigurationError, ValueError) as exc:
        print(f"{config_path}: configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        report = DISPATCH[cfg["experiment"]](cfg, sim, max(1, int(threads)))
    except SimulationError as exc:
        print(f"numerical blow-up: {exc} (particle {exc.particle}, step {exc.step})", file=sys.stderr)
        return 3
    except ConfigurationError as exc:
        print(f"{config_path}: configuration error: {exc}", file=sys.stderr)
        return 2
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.json").write_text(report_body(cfg, seed, report))
    tables = _write_tables(report, outdir)
    stamp = {"config_hash": config_hash(cfg, seed), "seed": seed, "version": __version__}
    (outdir / "stamp.json").write_text(json.dumps(stamp, sort_keys=True, indent=2) + "\n")
    meta = {"started": started, "finished": time.time(), "threads": threads, "tables": tables}
    (outdir / "metadata.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    print(report.summary())
    return 0 if report.passed else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mvjl", description="Mean-field jump diffusion experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--threads", type=int, default=1)
    p_run.add_argument("--out", default=None)
    sub.add_parser("list-models", help="list builtin coefficient models")
    sub.add_parser("list-functions", help="list builtin test functions")
    args = parser.parse_args(argv)
    if args.command == "list-models":
        for k, v in list_models().items():
            print(f"{k}: {v}")
        return 0
    if args.command == "list-functions":
        for k, v in list_test_functions().items():
            print(f"{k}: {v}")
        return 0
    try:
        return run(args.config, args.seed, args.threads, args.out)
    except MvjlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
