"""Command line entry point: ``fluctlab <command> [flags]``.

Config precedence: built-in defaults < --config JSON < flags. Seed falls
back to $FLUCTLAB_SEED, then 0. Exit codes: 0 ok, 1 numeric failure,
2 config error; failures print one line ``error=<kind> command=<cmd> reason=<json>``
on stderr.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .lattice import (ToleranceError, a_n, build_lattice, chi_alpha, integral_psi,
                      mean_weight, riemann_residual)
from .meanfield import CFLError, density_rows, fourier_amplitude, initial_grid, solve_density
from .model import DisorderLaw, model_from_config
from .simulator import (SimConfig, initial_state, interaction_field, replica_rngs, replica_seed,
                        simulate)

SCHEMA_VERSION = "1"
COMMANDS = ("chi", "residual", "simulate", "mckv", "fluct", "martingale", "scaling",
            "identity-suite")

_COMMON = {"schema_version": None, "command": None, "seed": None, "output_dir": "fluctlab_out",
           "workers": None, "method": "auto"}
_MODEL = {"model": "kuramoto", "model_params": {}}
DEFAULTS = {
    "chi": {"alphas": [0.0, 0.25, 0.5, 0.75], "tol": 1e-8},
    "residual": {"alphas": [0.25, 0.5, 0.75], "n": [1 << k for k in range(4, 21, 2)]},
    "simulate": {**_MODEL, "alpha": 0.25, "n": 256, "replicas": 1, "dt": 1e-3, "t_end": 1.0,
                 "record_stride": 10, "observables": ["sin1t", "cos1t"]},
    "mckv": {**_MODEL, "alpha": 0.25, "n_cells": 256, "dt": 1e-4, "t_end": 1.0,
             "model_params": {"initial": "cosine:1"}},
    "fluct": {**_MODEL, "alpha": 0.25, "n": 512, "replicas": 20, "dt": 1e-2, "t_end": 0.0,
              "n_cells": 128, "fns": ["sin1t", "cos1t", "one"],
              "pairs": [["one", "one"], ["sin1t", "cos1t"]]},
    "martingale": {"model": "free", "model_params": {"state_space": "circle"}, "alpha": 0.25,
                   "n": 1024, "replicas": 2000, "dt": 1e-2, "t_end": 1.0, "fn": "sin1t",
                   "n_cells": 128},
    "scaling": {**_MODEL, "alphas": [0.25], "n": [1 << k for k in range(8, 14)],
                "replicas": 200, "dt": 1e-2, "t_end": 1.0, "statistic": None, "tol": 0.1,
                "batch": 50, "model_params": {"K": 0.1}},
    "identity-suite": {"alpha": 0.75, "n": 512, "tol": 1e-10, "pairs": 5},
}
# keys whose value does not change results (kept out of the config hash)
_UNHASHED = ("output_dir", "workers")


class ConfigError(Exception):
    pass


class NumericFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from exc


def _ints(text):
    try:
        return [int(float(v)) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}") from exc


def _kv(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, val = text.split("=", 1)
    try:
        val = json.loads(val)
    except json.JSONDecodeError:
        pass
    return key, val


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fluctlab", description="Fluctuation experiments for lattice mean-field diffusions.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path)
        s.add_argument("--output-dir", dest="output_dir")
        s.add_argument("--seed", type=int)
        s.add_argument("--workers", type=int)
        s.add_argument("--method", choices=("direct", "fast", "auto"))
        s.add_argument("--alpha", type=float)
        s.add_argument("--alphas", type=_floats)
        s.add_argument("--n", type=_ints)
        s.add_argument("--replicas", type=int)
        s.add_argument("--dt", type=float)
        s.add_argument("--t-end", dest="t_end", type=float)
        s.add_argument("--tol", type=float)
        s.add_argument("--model")
        s.add_argument("--model-param", dest="model_param", type=_kv, action="append")
        s.add_argument("--statistic", choices=("sd", "bias", "coupling", "coupling_sup"))
        s.add_argument("--n-cells", dest="n_cells", type=int)
    return p


def _load_config(path: Path, command: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if "schema_version" not in doc:
        raise ConfigError("config lacks schema_version")
    if str(doc["schema_version"]) != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {doc['schema_version']!r} unsupported (want {SCHEMA_VERSION!r})")
    if doc.get("command", command) != command:
        raise ConfigError(f"config is for command {doc['command']!r}, not {command!r}")
    if isinstance(doc.get(command), dict):
        # per-command block form: {"schema_version": "1", "<command>": {...}}
        doc = {**{k: v for k, v in doc.items() if k != command}, **doc[command]}
    allowed = set(_COMMON) | set(DEFAULTS[command])
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys {unknown}")
    return doc


def resolve_config(args, env=None) -> dict:
    env = os.environ if env is None else env
    cmd = args.command
    cfg = {**_COMMON, **json.loads(json.dumps(DEFAULTS[cmd]))}
    if args.config is not None:
        cfg.update(_load_config(args.config, cmd))
    allowed = set(DEFAULTS[cmd])
    flags = {k: v for k, v in vars(args).items()
             if v is not None and k not in ("command", "config", "model_param")}
    # --alpha and --alphas are interchangeable where the command takes a list
    if "alpha" in flags and "alpha" not in allowed and "alphas" in allowed:
        flags["alphas"] = [flags.pop("alpha")]
    if "alphas" in flags and "alphas" not in allowed and "alpha" in allowed:
        vals = flags.pop("alphas")
        if len(vals) != 1:
            raise ConfigError(f"{cmd} takes a single alpha")
        flags["alpha"] = vals[0]
    if "n" in flags and not isinstance(DEFAULTS[cmd].get("n"), list):
        if len(flags["n"]) != 1:
            raise ConfigError(f"{cmd} takes a single --n")
        flags["n"] = flags["n"][0]
    for key in list(flags):
        if key not in allowed and key not in _COMMON:
            raise ConfigError(f"flag --{key.replace('_', '-')} does not apply to {cmd}")
    cfg.update(flags)
    if args.model_param:
        if "model_params" not in allowed:
            raise ConfigError(f"--model-param does not apply to {cmd}")
        cfg["model_params"] = {**cfg.get("model_params", {}), **dict(args.model_param)}
    if cfg.get("seed") is None:
        raw = env.get("FLUCTLAB_SEED")
        try:
            cfg["seed"] = int(raw) if raw not in (None, "") else 0
        except ValueError as exc:
            raise ConfigError(f"FLUCTLAB_SEED={raw!r} is not an integer") from exc
    cfg["schema_version"] = SCHEMA_VERSION
    cfg["command"] = cmd
    _validate(cfg)
    return cfg


def _validate(cfg):
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    for key in ("alpha",):
        if key in cfg:
            need(isinstance(cfg[key], (int, float)) and 0 <= cfg[key] < 1, f"{key} must lie in [0, 1)")
    if "alphas" in cfg:
        need(len(cfg["alphas"]) > 0 and all(0 <= a < 1 for a in cfg["alphas"]),
             "alphas must be non-empty and lie in [0, 1)")
    if "n" in cfg:
        ns = cfg["n"] if isinstance(cfg["n"], list) else [cfg["n"]]
        need(len(ns) > 0 and all(isinstance(n, int) and n >= 1 for n in ns), "n must be positive integers")
    for key in ("replicas", "n_cells", "batch", "record_stride", "pairs"):
        if key in cfg and not isinstance(cfg[key], list):
            need(isinstance(cfg[key], int) and cfg[key] >= 1, f"{key} must be a positive integer")
    for key in ("dt", "tol"):
        if key in cfg:
            need(isinstance(cfg[key], (int, float)) and cfg[key] > 0, f"{key} must be positive")
    if "t_end" in cfg:
        need(isinstance(cfg["t_end"], (int, float)) and cfg["t_end"] >= 0, "t_end must be >= 0")
    if cfg.get("workers") is not None:
        need(isinstance(cfg["workers"], int) and cfg["workers"] >= 1, "workers must be >= 1")
    need(cfg.get("method") in ("direct", "fast", "auto"), "method must be direct, fast or auto")
    need(isinstance(cfg["seed"], int) and 0 <= cfg["seed"] < 1 << 64, "seed must be a 64-bit unsigned integer")
    if "model_params" in cfg:
        need(isinstance(cfg["model_params"], dict), "model_params must be an object")


def config_hash(cfg: dict) -> str:
    body = {k: v for k, v in cfg.items() if k not in _UNHASHED}
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


class Outputs:
    """Writes CSV/JSONL named after the config hash plus one metadata JSON."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.dir = Path(cfg["output_dir"])
        self.files = []
        self.summary = {}

    def _path(self, stem, ext):
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / f"{stem}-{self.hash[:12]}.{ext}"
        self.files.append(path.name)
        return path

    def csv(self, stem, header, rows):
        path = self._path(stem, "csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        return path

    def jsonl(self, stem, records):
        path = self._path(stem, "jsonl")
        with open(path, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True, default=_json_default) + "\n")
        return path

    def finish(self):
        meta = {"schema_version": SCHEMA_VERSION, "command": self.cfg["command"],
                "config": self.cfg, "seed": self.cfg["seed"], "config_hash": self.hash,
                "version": f"fluctlab {__version__}", "outputs": list(self.files),
                "summary": self.summary,
                "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / f"{self.cfg['command']}-{self.hash[:12]}.meta.json"
        path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n")
        return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(type(o).__name__)


def _finite(values, what):
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise NumericFailure(f"non-finite values in {what}")


def _model(cfg):
    try:
        return model_from_config(cfg["model"], **cfg.get("model_params", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from exc


def _fn(name):
    from . import testfns as T

    if name in ("one", "1"):
        return T.constant()
    try:
        if name.endswith("t") and name[:3] in ("sin", "cos"):
            return T.TestFn1(name[:3], k=int(name[3:-1] or 1))
        if "*" in name:
            th, xp = name.split("*", 1)
            base = _fn(th)
            if xp[:3] in ("sin", "cos") and xp.endswith("x"):
                return T.TestFn1(base.theta_part, k=base.k, x_part=xp[:3], ell=int(xp[3:-1] or 1))
    except ValueError:
        pass
    raise ConfigError(f"unknown test function {name!r} (use one, sinKt, cosKt, sinKt*cosLx, ...)")


def _batches(replicas, workers, work, batch=50):
    chunks = [list(range(s, min(s + batch, replicas))) for s in range(0, replicas, batch)]
    workers = workers or os.cpu_count() or 1
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(min(workers, len(chunks))) as pool:
            return list(pool.map(work, chunks))
    return [work(c) for c in chunks]


# -- commands ------------------------------------------------------------------

def cmd_chi(cfg, out):
    rows = []
    for a in cfg["alphas"]:
        try:
            rows.append((a, chi_alpha(a, cfg["tol"]), cfg["tol"]))
        except ToleranceError as exc:
            raise NumericFailure(str(exc)) from exc
    _finite([r[1] for r in rows], "chi")
    out.csv("chi", ("alpha", "chi", "tol"), rows)


def cmd_residual(cfg, out):
    rows = []
    for a in cfg["alphas"]:
        for n in cfg["n"]:
            res = riemann_residual(n_half=n, alpha=a)
            mw = integral_psi(a) + res / n ** (1.0 - a)
            rows.append((a, n, mw, integral_psi(a), res))
    _finite([r[4] for r in rows], "residual")
    out.csv("residual", ("alpha", "N", "mean_weight", "integral_psi", "residual"), rows)


def _sim_config(cfg, t_end=None, stride=None):
    t_end = cfg["t_end"] if t_end is None else t_end
    stride = stride or cfg.get("record_stride", 1)
    if t_end > 0:
        # a stride longer than the run just records the two endpoints
        stride = max(1, min(stride, int(round(t_end / cfg["dt"]))))
    try:
        return SimConfig(dt=cfg["dt"], t_end=t_end, seed=cfg["seed"],
                         record_stride=stride,
                         method_interaction=cfg["method"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_simulate(cfg, out):
    model = _model(cfg)
    lat = build_lattice(cfg["n"], cfg["alpha"])
    fns = [_fn(name) for name in cfg["observables"]]
    sim = _sim_config(cfg)
    if sim.t_end <= 0:
        raise ConfigError("simulate needs t_end > 0")

    def work(reps):
        return simulate(model, lat, sim, fns, replicas=reps)

    trajs = _batches(cfg["replicas"], cfg["workers"], work)
    multi = cfg["replicas"] > 1
    offset = 0
    per_rep = []
    for tr in trajs:
        count = tr.final.replicas
        for k, t in enumerate(tr.times):
            for key, vals in tr.series.items():
                for r in range(count):
                    oid = f"{key}@{offset + r}" if multi else key
                    per_rep.append((offset + r, k, t, oid, float(vals[k][r])))
        offset += count
    per_rep.sort(key=lambda row: (row[1], row[0]))
    rows = [(t, oid, v) for _, _, t, oid, v in per_rep]
    _finite([r[2] for r in rows], "trajectory")
    out.csv("trajectory", ("time", "observable_id", "value"), rows)
    out.jsonl("trajectory-meta", ({"replica": r, "replica_seed": replica_seed(cfg["seed"], r),
                                   "seed": cfg["seed"], "model": model.name, "params": model.params,
                                   "N": cfg["n"], "alpha": cfg["alpha"], "version": __version__,
                                   "config_hash": out.hash}
                                  for r in range(cfg["replicas"])))


def cmd_mckv(cfg, out):
    model = _model(cfg)
    if not model.is_circle:
        raise ConfigError("mckv needs a circle model")
    try:
        grid0 = initial_grid(model, cfg["n_cells"])
        steps = int(round(cfg["t_end"] / cfg["dt"]))
        path = solve_density(model, cfg["alpha"], grid0, cfg["dt"], cfg["t_end"],
                             record_every=max(1, steps // 10))
    except CFLError as exc:
        raise ConfigError(str(exc)) from exc
    except NotImplementedError as exc:
        raise ConfigError(str(exc)) from exc
    final = path.grids[-1]
    _finite(final.values, "density")
    if np.any(final.values < -1e-12):
        raise NumericFailure("negative density")
    out.csv("density", ("theta_cell_center", "omega_value", "density"), density_rows(final))
    out.summary = {
        "mass_error": float(max(np.max(np.abs(g.masses() - 1.0)) for g in path.grids)),
        "mode1_amplitude": [{"time": float(g.time), "value": fourier_amplitude(g, 1)}
                            for g in path.grids],
    }


def _path_for(model, alpha, t_end, n_cells):
    from .scaling import meanfield_path

    if t_end == 0:
        from .meanfield import DensityPath
        return DensityPath.stationary(initial_grid(model, n_cells), model, alpha, 0.0)
    return meanfield_path(model, alpha, t_end, n_cells)


def cmd_fluct(cfg, out):
    from .fluctuation import duality_gap, eta_pair, h_pair, normalization, sample_records
    from .testfns import separable

    model = _model(cfg)
    alpha, n = cfg["alpha"], cfg["n"]
    lat = build_lattice(n, alpha)
    fns = {name: _fn(name) for name in cfg["fns"]}
    pairs = []
    for pair in cfg["pairs"]:
        if not (isinstance(pair, list) and len(pair) == 2):
            raise ConfigError("pairs must be [left, right] lists")
        pairs.append(separable(_fn(pair[0]), _fn(pair[1])))
    t_end = cfg["t_end"]
    path = _path_for(model, alpha, t_end, cfg["n_cells"])
    method = "direct" if cfg["method"] == "direct" else "fast"

    def work(reps):
        if t_end == 0:
            state = initial_state(model, lat, replica_rngs(cfg["seed"], reps))
        else:
            sim = _sim_config(cfg, stride=max(1, int(round(t_end / cfg["dt"]))))
            state = simulate(model, lat, sim, replicas=reps).final
        grid = path.grid_at(state.time)
        res = {"eta": {k: eta_pair(state, grid, f) for k, f in fns.items()},
               "H": {g.id: h_pair(state, grid, g, method=method) for g in pairs},
               "gap": {g.id: duality_gap(state, grid, g, relative=True) for g in pairs},
               "time": state.time, "reps": reps}
        return res

    parts = _batches(cfg["replicas"], cfg["workers"], work)
    records, gaps = [], {}
    for part in parts:
        for key, vals in part["eta"].items():
            _finite(vals, key)
            records.extend(sample_records(alpha, n, part["time"], key, vals, part["reps"][0]))
        for key, vals in part["H"].items():
            _finite(vals, key)
            records.extend(sample_records(alpha, n, part["time"], "H:" + key, vals, part["reps"][0]))
        for key, vals in part["gap"].items():
            gaps[key] = max(gaps.get(key, 0.0), float(np.max(vals)))
    out.jsonl("fluct", records)
    an, critical = normalization(n, alpha)
    out.summary = {"a_N": an, "critical": critical, "max_relative_duality_gap": gaps}


def cmd_martingale(cfg, out):
    from .fluctuation import martingale_cov, martingale_variance
    from .scaling import meanfield_path

    model = _model(cfg)
    if not model.is_circle:
        raise ConfigError("martingale needs a circle model (mean-field density)")
    alpha, n = cfg["alpha"], cfg["n"]
    f = _fn(cfg["fn"])
    lat = build_lattice(n, alpha)
    sim = _sim_config(cfg, stride=max(1, int(round(cfg["t_end"] / cfg["dt"]))))
    path = meanfield_path(model, alpha, cfg["t_end"], cfg["n_cells"])

    def work(reps):
        tr = simulate(model, lat, sim, replicas=reps, martingales=(f,))
        return tr.values(f"M:{f.id}")[-1]

    samples = np.concatenate(_batches(cfg["replicas"], cfg["workers"], work))
    _finite(samples, "martingale")
    kappa = martingale_cov(f, f, cfg["t_end"], path).eta
    pred = martingale_variance(kappa, n, alpha)
    var = float(np.var(samples, ddof=1))
    m4 = float(np.mean((samples - samples.mean()) ** 4))
    r = samples.size
    stderr = math.sqrt(max(m4 - var**2 * (r - 3) / (r - 1), 0.0) / r)
    z = (var - pred) / stderr if stderr > 0 else math.inf
    rows = [("mc_variance", var), ("mc_stderr", stderr), ("kappa_eta", kappa),
            ("predicted_variance", pred), ("z_score", z), ("replicas", r)]
    out.csv("martingale", ("quantity", "value"), rows)
    out.summary = {"within_3_stderr": bool(abs(z) <= 3.0), "z_score": z}


def cmd_scaling(cfg, out):
    from .scaling import CSV_COLUMNS, LadderConfig, LadderError, run_ladder, scaling_table

    model = _model(cfg)
    stat = cfg["statistic"]
    if stat is None:
        stat = "sd" if all(a < 0.5 for a in cfg["alphas"]) else "coupling_sup"
    try:
        ladder = LadderConfig(cfg["alphas"], cfg["n"], cfg["replicas"], cfg["seed"],
                              sim=_sim_config(cfg, stride=max(1, int(round(cfg["t_end"] / cfg["dt"])))),
                              batch=cfg["batch"], workers=cfg["workers"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        rows = run_ladder(ladder, model, stat)
    except LadderError as exc:
        raise NumericFailure(str(exc)) from exc
    table, fits = scaling_table(rows, cfg["tol"])
    _finite([r[4] for r in table], "scaling values")
    out.csv("scaling", CSV_COLUMNS, table)
    out.summary = {str(a): {"regime": label, "slope": est.slope if est else None,
                            "slope_stderr": est.stderr if est else None,
                            "r_squared": est.r_squared if est else None}
                   for a, (est, label) in fits.items()}


def cmd_identity_suite(cfg, out):
    from . import testfns as T
    from .fluctuation import duality_gap, eta_pair, h_pair
    from .model import build_kuramoto

    alpha, n, tol = cfg["alpha"], cfg["n"], cfg["tol"]
    rng = np.random.default_rng(cfg["seed"])
    lat = build_lattice(n, alpha)
    model = build_kuramoto(1.0, 1.0, DisorderLaw.symmetric_pair(0.5))
    state = initial_state(model, lat, replica_rngs(cfg["seed"], 1))
    grid = initial_grid(model, 64)
    checks = []
    fast = interaction_field(state, model, "fast")
    direct = interaction_field(state, model, "direct")
    checks.append(("fft_vs_direct_interaction", float(np.max(np.abs(fast - direct))), tol))
    closed = a_n(n, alpha) * (mean_weight(lat) - integral_psi(alpha))
    h1 = float(h_pair(state, grid, T.one2())[0])
    checks.append(("h_pair_one_vs_closed_form", abs(h1 - closed), 1e-12 * max(1.0, abs(closed))))
    checks.append(("eta_pair_one", float(abs(eta_pair(state, grid, T.constant())[0])), 1e-12))
    checks.append(("residual_alpha0", abs(riemann_residual(n_half=n, alpha=0.0) + 0.5), 1e-12))
    for k in range(cfg["pairs"]):
        g = random_separable(rng)
        gap = float(duality_gap(state, grid, g, relative=True)[0])
        checks.append((f"duality_gap[{g.id}]", gap, tol))
        hf = float(h_pair(state, grid, g, method="fast")[0])
        hd = float(h_pair(state, grid, g, method="direct")[0])
        checks.append((f"h_pair_fast_vs_direct[{g.id}]", abs(hf - hd), tol * max(1.0, abs(hd))))
    rows = [(name, val, lim, bool(val <= lim)) for name, val, lim in checks]
    out.csv("identity-suite", ("check", "value", "tolerance", "pass"), rows)
    failed = [r[0] for r in rows if not r[3]]
    out.summary = {"checks": len(rows), "failed": failed}
    if failed:
        raise NumericFailure(f"identity checks failed: {failed}")


def random_separable(rng):
    """A random product g = f1 (x) f2 of low-order Fourier test functions."""
    from . import testfns as T

    def one():
        return T.TestFn1(str(rng.choice(["one", "sin", "cos"])), k=int(rng.integers(1, 4)),
                         omega_coeffs=tuple(np.round(rng.normal(size=int(rng.integers(1, 3))), 3)),
                         x_part=str(rng.choice(["one", "sin", "cos"])), ell=int(rng.integers(1, 4)),
                         scale=float(np.round(rng.uniform(0.5, 2.0), 3)))
    return T.separable(one(), one())


HANDLERS = {"chi": cmd_chi, "residual": cmd_residual, "simulate": cmd_simulate,
            "mckv": cmd_mckv, "fluct": cmd_fluct, "martingale": cmd_martingale,
            "scaling": cmd_scaling, "identity-suite": cmd_identity_suite}


def _fail(kind, cmd, reason, code):
    print(f"error={kind} command={cmd or '-'} reason={json.dumps(str(reason))}", file=sys.stderr)
    return code


def run_command(argv=None, env=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    cmd = None
    try:
        args = build_parser().parse_args(argv)
        cmd = args.command
        if cmd is None:
            raise ConfigError(f"missing command; choose from {list(COMMANDS)}")
        cfg = resolve_config(args, env)
        out = Outputs(cfg)
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            HANDLERS[cmd](cfg, out)
        meta = out.finish()
        print(meta)
        return 0
    except ConfigError as exc:
        return _fail("config", cmd, exc, 2)
    except (NumericFailure, ToleranceError, FloatingPointError, OverflowError) as exc:
        return _fail("numeric", cmd, exc, 1)


def main():
    sys.exit(run_command())
