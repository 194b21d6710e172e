"""Command-line entry point: ``impuritylab <kind> --config file.json``.

Each run writes CSV data, optional JSON side files and one ``manifest.json``
into the output directory. Exit codes: 0 success, 2 configuration error,
3 resource error, 4 numerical-contract violation.
"""
from __future__ import annotations

import argparse
import difflib
import hashlib
import json
import math
import os
import sys
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, ImpurityLabError, NumericalContractError
from .lattice import DEFAULT_REGION_SIZE, SUPPORT_WIDTH

KINDS = ("monitored", "particle", "operator", "return-prob", "renewal", "entropy-estimate", "fcs-check")

REQUIRED = object()
FCS_TOL = 1e-10


@dataclass(frozen=True)
class Field:
    kind: type | tuple
    default: object = REQUIRED
    check: object = None  # callable returning an error string or None
    choices: tuple = ()


def _positive(x):
    return None if x > 0 else "must be positive"


def _nonneg(x):
    return None if x >= 0 else "must be nonnegative"


def _unit(x):
    return None if 0 <= x <= 1 else "must lie in [0, 1]"


def _chain(x):
    return None if x >= 2 else "must be >= 2"


def _window(x):
    if len(x) != 2 or not all(isinstance(v, (int, float)) for v in x):
        return "must be a pair [t_min, t_max]"
    return None if 0 < x[0] < x[1] else "must satisfy 0 < t_min < t_max"


REAL = (int, float)

COMMON = {
    "seed": Field(int, 0, _nonneg),
    "workers": Field((int, str), 1),
}

SCHEMAS = {
    "monitored": {
        "L": Field(int, REQUIRED, _chain),
        "p_m": Field(REAL, REQUIRED, _unit),
        "steps": Field(int, REQUIRED, _nonneg),
        "samples": Field(int, REQUIRED, _positive),
        "dt": Field(REAL, 0.5, _positive),
        "m": Field(int, DEFAULT_REGION_SIZE, _positive),
        "placement": Field(str, "boundary", choices=("boundary", "bulk")),
        "checkpoints": Field(list, []),
    },
    "particle": {
        "L": Field(int, REQUIRED, _chain),
        "delta": Field(REAL, REQUIRED),
        "t_max": Field(REAL, REQUIRED, _positive),
        "variant": Field(str, "raise3", choices=tuple(SUPPORT_WIDTH)),
        "site": Field(int, 1, _positive),
        "dt": Field(REAL, 0.05, _positive),
        "tol": Field(REAL, 1e-9, _positive),
        "checkpoints": Field(list, []),
        "memory_budget_gb": Field(REAL, 8.0, _positive),
    },
    "operator": {
        "L": Field(int, REQUIRED, _chain),
        "t_max": Field(REAL, REQUIRED, _positive),
        "mode": Field(str, "static", choices=("static", "floquet", "kitaev")),
        "delta": Field(REAL, 0.0),
        "variant": Field(str, "density2", choices=tuple(SUPPORT_WIDTH)),
        "site": Field(int, 1, _positive),
        "dt": Field(REAL, 0.1, _positive),
        "omega": Field(REAL, 2.5, _positive),
        "mu": Field(REAL, 1.6),
        "lam": Field(REAL, 1.0),
        "cut": Field((int, type(None)), None),
    },
    "return-prob": {
        "L": Field(int, REQUIRED, _chain),
        "t_max": Field(REAL, REQUIRED, _positive),
        "placement": Field(str, "boundary", choices=("boundary", "bulk")),
        "m": Field(int, 1, _positive),
        "dt": Field(REAL, 0.02, _positive),
        "fit_window": Field((list, type(None)), None),
    },
    "renewal": {
        "kernel": Field(str, "bulk", choices=("bulk", "boundary")),
        "p_m": Field(REAL, REQUIRED, _unit),
        "t_max": Field(REAL, 500.0, _positive),
        "dt": Field(REAL, 0.1, _positive),
        "fit_window": Field((list, type(None)), [20.0, 400.0]),
    },
    "entropy-estimate": {
        "xi": Field((int, float, str), REQUIRED),
        "v": Field(REAL, 2.0, _positive),
        "t_min": Field(REAL, 100.0, _positive),
        "t_max": Field(REAL, 1e6, _positive),
        "n_points": Field(int, 41, _positive),
    },
    "fcs-check": {
        "L": Field(int, 6, _chain),
        "samples": Field(int, 20, _positive),
    },
}


@dataclass
class ExperimentConfig:
    kind: str
    params: dict
    seed: int = 0
    workers: int = 1
    output_dir: Path = Path("out")
    source: dict = field(default_factory=dict)

    def echo(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "workers": self.workers, "params": self.params}


def _type_ok(value, kind) -> bool:
    kinds = kind if isinstance(kind, tuple) else (kind,)
    if isinstance(value, bool):
        return bool in kinds
    if float in kinds and isinstance(value, int):
        return True
    return isinstance(value, kinds)


def _type_name(kind) -> str:
    kinds = kind if isinstance(kind, tuple) else (kind,)
    names = {int: "integer", float: "number", str: "string", list: "list", type(None): "null"}
    return " or ".join(dict.fromkeys(names.get(k, k.__name__) for k in kinds))


def validate(kind: str, raw: dict) -> ExperimentConfig:
    """Check ``raw`` against the schema of ``kind`` and collect every problem."""
    if kind not in SCHEMAS:
        raise ConfigError([f"unknown experiment kind {kind!r}; expected one of {', '.join(KINDS)}"])
    schema = {**COMMON, **SCHEMAS[kind]}
    errors = []
    raw = dict(raw)
    file_kind = raw.pop("kind", kind)
    if file_kind != kind:
        errors.append(f"kind: config file declares {file_kind!r} but {kind!r} was requested")
    for key in raw:
        if key not in schema:
            hint = difflib.get_close_matches(key, schema, n=1, cutoff=0.5)
            if not hint:
                hint = [k for k in schema if k.lower() == key.lower()]
            suffix = f"; did you mean {hint[0]!r}?" if hint else ""
            errors.append(f"{key}: unknown key{suffix}")
    values = {}
    for key, spec in schema.items():
        if key not in raw:
            if spec.default is REQUIRED:
                errors.append(f"{key}: required")
            else:
                values[key] = spec.default
            continue
        v = raw[key]
        if not _type_ok(v, spec.kind):
            errors.append(f"{key}: expected {_type_name(spec.kind)}, got {type(v).__name__}")
            continue
        if spec.choices and v not in spec.choices:
            errors.append(f"{key}: {v!r} not in {list(spec.choices)}")
            continue
        if spec.check is not None and not isinstance(v, (str, type(None))):
            msg = spec.check(v)
            if msg:
                errors.append(f"{key}: {msg}, got {v!r}")
                continue
        values[key] = v
    errors += _cross_checks(kind, values)
    workers = values.pop("workers", 1)
    if isinstance(workers, str):
        if workers != "auto":
            errors.append(f"workers: expected an integer or 'auto', got {workers!r}")
        workers = os.cpu_count() or 1
    elif workers < 1:
        errors.append(f"workers: must be >= 1, got {workers}")
    if errors:
        raise ConfigError(errors)
    seed = values.pop("seed")
    return ExperimentConfig(kind=kind, params=values, seed=seed, workers=workers)


def _cross_checks(kind, v) -> list:
    errors = []
    if "fit_window" in v and v["fit_window"] is not None:
        msg = _window(v["fit_window"])
        if msg:
            errors.append(f"fit_window: {msg}")
    if kind == "monitored" and {"L", "m", "steps"} <= v.keys():
        if v["m"] > v["L"]:
            errors.append(f"m: region of {v['m']} sites does not fit in L={v['L']}")
        bad = [c for c in v.get("checkpoints", []) if not isinstance(c, int) or not 0 <= c <= v["steps"]]
        if bad:
            errors.append(f"checkpoints: entries must be step indices in 0..{v['steps']}, got {bad}")
    if kind in ("particle", "operator") and {"L", "site", "variant"} <= v.keys():
        if v.get("mode", "static") != "kitaev":
            width = SUPPORT_WIDTH[v["variant"]]
            if v["site"] + width - 1 > v["L"]:
                errors.append(f"site: {v['variant']} at site {v['site']} needs {width} sites, L={v['L']}")
    if kind == "operator" and "cut" in v and v["cut"] is not None and "L" in v:
        if not 0 <= v["cut"] <= v["L"]:
            errors.append(f"cut: must lie in 0..{v['L']}")
    if kind == "entropy-estimate":
        if isinstance(v.get("xi"), str) and v["xi"] != "log":
            errors.append(f"xi: expected a positive number or 'log', got {v['xi']!r}")
        elif isinstance(v.get("xi"), (int, float)) and v["xi"] <= 0:
            errors.append(f"xi: must be positive, got {v['xi']}")
        if {"t_min", "t_max"} <= v.keys() and v["t_min"] > v["t_max"]:
            errors.append("t_min: must not exceed t_max")
    if kind == "return-prob" and {"L", "m"} <= v.keys() and v["m"] > v["L"]:
        errors.append(f"m: region of {v['m']} sites does not fit in L={v['L']}")
    return errors


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_config(kind: str, path=None, overrides=(), seed=None, workers=None, out=None) -> ExperimentConfig:
    """Load a JSON file (optional), apply KEY=VALUE overrides and validate."""
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError([f"config file {path} not found"]) from None
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config file {path} is not valid JSON: {exc}"]) from None
        if not isinstance(raw, dict):
            raise ConfigError(["config file must contain a JSON object"])
    bad = []
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            bad.append(f"--set {item!r}: expected KEY=VALUE")
            continue
        raw[key.strip()] = _parse_value(value)
    if bad:
        raise ConfigError(bad)
    if seed is not None:
        raw["seed"] = seed
    if workers is not None:
        raw["workers"] = _parse_value(workers)
    cfg = validate(kind, raw)
    if out is not None:
        cfg.output_dir = Path(out)
    cfg.source = raw
    return cfg


# output helpers ----------------------------------------------------------


def fmt(x) -> str:
    """Locale-free number formatting: shortest round-trip repr, scientific below 1e-4."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="\n", encoding="ascii") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_distribution(out: Path, label: str, P) -> Path:
    return write_csv(out / f"distribution_{label}.csv", ["n", "P"], enumerate(np.asarray(P)))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


# experiment runners --------------------------------------------------------


def run_monitored(cfg: ExperimentConfig, out: Path) -> list:
    from .monitored import placement_config, run_ensemble

    p = cfg.params
    mc = placement_config(p["L"], p["p_m"], p["steps"], p["samples"], cfg.seed, placement=p["placement"],
                          m=p["m"], dt=p["dt"], checkpoints=p["checkpoints"])
    res = run_ensemble(mc, workers=cfg.workers)
    rows = zip(res.steps, res.N_series.times, res.N_series.mean, res.N_series.stderr,
               res.Nimp_series.mean, res.Nimp_series.stderr)
    files = [write_csv(out / "monitored.csv", ["step", "t", "N_mean", "N_stderr", "Nimp_mean", "Nimp_stderr"], rows)]
    for t, P in res.distributions.items():
        files.append(write_distribution(out, f"t{fmt(t)}", P))
    return files


def run_particle_kind(cfg: ExperimentConfig, out: Path) -> list:
    from .exactmb import run_particle
    from .lattice import ImpuritySpec

    p = cfg.params
    imp = ImpuritySpec(p["variant"], p["delta"], p["site"], p["L"])
    run = run_particle(p["L"], imp, p["t_max"], dt=p["dt"], tol=p["tol"], checkpoints=p["checkpoints"],
                       memory_budget=int(p["memory_budget_gb"] * 2**30))
    files = [write_csv(out / "particle.csv", ["t", "N", "N_imp", "J"], zip(run.times, run.N, run.N_imp, run.J))]
    for t, P in run.distributions.items():
        files.append(write_distribution(out, f"t{fmt(t)}", P))
    return files


OPERATOR_HEADER = ["t", "w", "w_I", "w_eta", "w_plus", "w_minus", "op_entropy"]


def run_operator(cfg: ExperimentConfig, out: Path) -> list:
    from . import opdyn
    from .lattice import ChainSpec, ImpuritySpec, build_kitaev

    p = cfg.params
    L = p["L"]
    nan = float("nan")
    if p["mode"] == "kitaev":
        H = build_kitaev(ChainSpec(L), p["mu"], p["lam"])
        times = p["dt"] * np.arange(int(round(p["t_max"] / p["dt"])) + 1)
        s = opdyn.majorana_free_evolve(H, times)
        rows = ((t, w, nan, nan, nan, nan, nan) for t, w in zip(s.times, s.w))
        return [write_csv(out / "operator.csv", OPERATOR_HEADER, rows)]
    imp = ImpuritySpec(p["variant"], p["delta"], p["site"], L) if p["delta"] != 0 else None
    cut = p["cut"] if p["cut"] is not None else L // 2
    if p["mode"] == "floquet":
        period = 2.0 / p["omega"]
        n = int(math.floor(p["t_max"] / period + 1e-9))
        s = opdyn.floquet_weight_series(L, imp, p["site"], p["omega"], n, entanglement_cut=cut)
    else:
        times = p["dt"] * np.arange(int(round(p["t_max"] / p["dt"])) + 1)
        s = opdyn.weight_series(L, imp, p["site"], times, entanglement_cut=cut)
    rows = ((t, x.w, x.w_I, x.w_eta, x.w_plus, x.w_minus, e) for t, x, e in zip(s.times, s.weights, s.entropy))
    return [write_csv(out / "operator.csv", OPERATOR_HEADER, rows)]


def run_return_prob(cfg: ExperimentConfig, out: Path) -> list:
    from .freeprop import envelope_indices, fit_power_law, return_probability
    from .lattice import ChainSpec, ImpurityRegion, build_hopping

    p = cfg.params
    L, m = p["L"], p["m"]
    if p["placement"] == "boundary":
        source, start = 1, 1
    else:
        source = L // 2
        start = source - (m - 1) // 2
    region = ImpurityRegion(start, m, L)
    times = p["dt"] * np.arange(int(round(p["t_max"] / p["dt"])) + 1)
    series = return_probability(build_hopping(ChainSpec(L)), region, source, times)
    flag = np.zeros(times.size, dtype=bool)
    flag[envelope_indices(series.values)] = True
    files = [write_csv(out / "return_prob.csv", ["t", "P", "envelope_flag"], zip(times, series.values, flag))]
    if p["fit_window"] is not None:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            fit = fit_power_law(series, p["fit_window"])
        files.append(write_json(out / "fit.json", {**fit.__dict__, "t_edge": series.t_edge,
                                                   "warnings": [str(w.message) for w in caught]}))
    return files


def run_renewal_kind(cfg: ExperimentConfig, out: Path) -> list:
    from .freeprop import envelope_indices
    from .renewal import renewal_exponent, renewal_kernel

    p = cfg.params
    k = renewal_kernel(p["kernel"], p["p_m"], t_max=p["t_max"], dt=p["dt"])
    P = k.probability().values
    flag = np.zeros(P.size, dtype=bool)
    flag[envelope_indices(P)] = True
    files = [write_csv(out / "renewal.csv", ["t", "A_abs2", "envelope"], zip(k.times, P, flag))]
    if p["fit_window"] is not None:
        fit = renewal_exponent(k, p["fit_window"])
        files.append(write_json(out / "fit.json", fit.__dict__))
    return files


def run_entropy(cfg: ExperimentConfig, out: Path) -> list:
    from .renewal import entropy_series

    p = cfg.params
    times = np.geomspace(p["t_min"], p["t_max"], p["n_points"])
    xi = np.log if p["xi"] == "log" else float(p["xi"])
    S = entropy_series(times, xi, v=p["v"])
    return [write_csv(out / "entropy.csv", ["t", "S_conf"], zip(times, S))]


def fcs_check(L: int = 6, samples: int = 20, seed: int = 0) -> float:
    """Largest deviation between determinant FCS and brute-force P(n) over random Gaussian states.

    Each sample draws a random Hermitian single-particle matrix K and builds
    rho ~ exp(-sum K_jk c_j^+ c_k) on the full Fock space; the correlation
    matrix is read off rho directly, so no convention enters the reference.
    """
    from scipy.linalg import expm

    from .exactmb import fermion_operators
    from .gaussian import GaussianState, number_distribution

    rng = np.random.default_rng(seed)
    c = [op.toarray() for op in fermion_operators(L)]
    cd = [x.conj().T for x in c]
    Nop = np.diag(np.array([bin(w).count("1") for w in range(2**L)], dtype=float))
    worst = 0.0
    for _ in range(samples):
        X = rng.normal(size=(L, L)) + 1j * rng.normal(size=(L, L))
        K = 1.5 * (X + X.conj().T) / 2
        G = sum(K[j, k] * cd[j] @ c[k] for j in range(L) for k in range(L))
        rho = expm(-G)
        rho /= np.trace(rho)
        C = np.array([[np.trace(rho @ cd[a] @ c[b]) for b in range(L)] for a in range(L)])
        brute = np.array([np.real(np.sum(np.diag(rho)[np.diag(Nop) == n])) for n in range(L + 1)])
        P = number_distribution(GaussianState(C))
        worst = max(worst, float(np.max(np.abs(P - brute))))
    return worst


def run_fcs_check(cfg: ExperimentConfig, out: Path) -> list:
    p = cfg.params
    dev = fcs_check(p["L"], p["samples"], cfg.seed)
    passed = dev < FCS_TOL
    print(f"fcs-check L={p['L']}: max deviation {dev:.3e} ({'PASS' if passed else 'FAIL'}, tol {FCS_TOL:g})")
    files = [write_json(out / "fcs_check.json", {"L": p["L"], "max_deviation": dev, "tolerance": FCS_TOL,
                                                 "passed": passed})]
    if not passed:
        raise NumericalContractError(f"FCS deviation {dev:.3e} exceeds {FCS_TOL:g}")
    return files


RUNNERS = {
    "monitored": run_monitored,
    "particle": run_particle_kind,
    "operator": run_operator,
    "return-prob": run_return_prob,
    "renewal": run_renewal_kind,
    "entropy-estimate": run_entropy,
    "fcs-check": run_fcs_check,
}


def run_experiment(cfg: ExperimentConfig) -> int:
    """Dispatch, then write the manifest. Returns the process exit status."""
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    files, status, error = [], 0, None
    try:
        files = RUNNERS[cfg.kind](cfg, out)
    except ImpurityLabError as exc:
        status = exc.exit_code if exc.exit_code in (2, 3, 4) else 4
        error = _error_payload(exc, status)
        files = [write_json(out / "error.json", error)]
        print(json.dumps(error), file=sys.stderr)
    manifest = {
        "config": cfg.echo(),
        "version": __version__,
        "started": started,
        "finished": _now(),
        "exit_code": status,
        "outputs": {f.name: _sha256(f) for f in files},
    }
    write_json(out / "manifest.json", manifest)
    return status


def _error_payload(exc: Exception, status: int) -> dict:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": status}
    for attr in ("errors", "required_bytes", "trajectory_index", "error_bound"):
        if getattr(exc, attr, None) is not None:
            payload[attr] = getattr(exc, attr)
    return payload


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="impuritylab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--config", help="JSON file with experiment parameters")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one parameter (value parsed as JSON when possible)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--workers", help="integer or 'auto'")
    parser.add_argument("--out", default="out", help="output directory (default: ./out)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.kind, args.config, args.overrides, args.seed, args.workers, args.out)
    except ConfigError as exc:
        print(json.dumps(_error_payload(exc, 2)), file=sys.stderr)
        return 2
    return run_experiment(cfg)


if __name__ == "__main__":
    sys.exit(main())
