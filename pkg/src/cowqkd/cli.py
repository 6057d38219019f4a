"""Command-line runner.

Usage::

    cowqkd rate CONFIG [--L 0,50,100] [--N 1e11] [--e-d 0.01] [--engine kato]
    cowqkd sweep CONFIG --L 0:130:10 --out rates.csv
    cowqkd optimize CONFIG
    cowqkd compare-bounds CONFIG --N 1e10,1e11
    cowqkd montecarlo CONFIG --N 1e7 --L 10 --seed 1

``CONFIG`` is an optional UTF-8 file of ``key = value`` lines (``#`` starts a
comment). Command-line flags override it; ``--set key=value`` overrides any
key. Lists are comma separated; ``start:stop:step`` is an inclusive range.

Exit codes: 0 success, 1 no positive rate anywhere on the grid (the CSV is
still written), 2 configuration error, 3 numerical assertion (including a
failed Monte Carlo self-check).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import decimal
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .channel import ChannelScenario, system_transmittance
from .model import BasisMode, DetectorModel, ParameterError, ProtocolParams, epsilon_budget
from .optimizer import DEFAULT_BOUNDS, VARIABLES, OptimizationError, OptimizationSpec, optimize
from .security import ENGINES, EP_MODES, KeyRateResult, evaluate_point

CSV_FIELDS = ("L_km", "eta", "N", "mu", "t_B", "p_d1", "p_d2", "e_d", "n_z", "E_z",
              "Ep_upper", "leak_EC", "key_length", "rate_per_pulse", "engine", "aborted")
COMPARE_FIELDS = ("L_km", "eta", "N", "engine_a", "engine_b", "rate_a", "rate_b",
                  "key_length_a", "key_length_b", "q00_M0_upper_a", "q00_M0_upper_b",
                  "aborted_a", "aborted_b")

EXIT_OK, EXIT_ABORTED, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
MAX_MONTECARLO_N = 10 ** 8


class ConfigError(Exception):
    def __init__(self, message, source="<config>", line=None):
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


# -- config ---------------------------------------------------------------

@dataclass
class _Entry:
    value: str
    source: str
    line: int | None


def read_config(path: str | None) -> dict[str, _Entry]:
    entries: dict[str, _Entry] = {}
    if path is None:
        return entries
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}", path) from exc
    for no, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        key, sep, value = text.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", path, no)
        entries[key.strip()] = _Entry(value.strip(), path, no)
    return entries


def _number(entry: _Entry, text: str | None = None) -> float:
    text = entry.value if text is None else text
    try:
        x = float(text)
    except ValueError:
        raise ConfigError(f"not a number: {text!r}", entry.source, entry.line) from None
    if not math.isfinite(x):
        raise ConfigError(f"not a finite number: {text!r}", entry.source, entry.line)
    return x


def _integer(entry: _Entry, text: str | None = None) -> int:
    text = entry.value if text is None else text
    try:
        d = decimal.Decimal(text.strip())
    except decimal.InvalidOperation:
        raise ConfigError(f"not an integer: {text!r}", entry.source, entry.line) from None
    if not d.is_finite() or d != d.to_integral_value():
        raise ConfigError(f"not an integer: {text!r}", entry.source, entry.line)
    return int(d)


def _number_list(entry: _Entry) -> list[float]:
    out = []
    for item in filter(None, (s.strip() for s in entry.value.split(","))):
        if ":" in item:
            parts = item.split(":")
            if len(parts) != 3:
                raise ConfigError(f"range must be start:stop:step, got {item!r}",
                                  entry.source, entry.line)
            start, stop, step = (_number(entry, p) for p in parts)
            if step <= 0 or stop < start:
                raise ConfigError(f"empty or invalid range {item!r}", entry.source, entry.line)
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            out.extend(start + i * step for i in range(count))
        else:
            out.append(_number(entry, item))
    return out


def _flag(entry: _Entry) -> bool:
    v = entry.value.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected true/false, got {entry.value!r}", entry.source, entry.line)


@dataclass
class RunConfig:
    distances: list[float] | None
    etas: list[float] | None
    n_list: list[int]
    template: ProtocolParams
    optimize: bool
    opt_spec: OptimizationSpec
    engine: str
    engines: tuple[str, str]
    ep_mode: str
    asymptotic: bool
    out: str | None
    seed: int
    workers: int
    coverage_trials: int = 100_000
    extras: dict = field(default_factory=dict)

    def points(self):
        """Grid in output order: N outer, scenario inner."""
        scen = ([(L, system_transmittance(ChannelScenario(length_km=L))) for L in self.distances]
                if self.distances is not None else [(None, e) for e in self.etas])
        return [(L, eta, n) for n in self.n_list for L, eta in scen]


KNOWN_KEYS = {
    "L", "eta", "N", "mu", "t_B", "p_d1", "p_d2", "e_d", "f_ec", "p_dark", "eta_det",
    "basis_mode", "p_switch", "eps_sec", "eps_cor", "engine", "engines", "ep_mode",
    "optimize", "free", "max_evals", "asymptotic", "out", "seed", "workers",
    "coverage_trials", "mu_bounds", "t_B_bounds", "p_d1_bounds", "p_d2_bounds",
}


def build_config(entries: dict[str, _Entry], optimize_default: bool = False) -> RunConfig:
    for key, e in entries.items():
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown key {key!r}", e.source, e.line)
    get = entries.get

    def num(key, default):
        return _number(get(key)) if key in entries else default

    def choice(key, default, allowed):
        if key not in entries:
            return default
        v = get(key).value
        if v not in allowed:
            raise ConfigError(f"{key} must be one of {', '.join(allowed)}, got {v!r}",
                              get(key).source, get(key).line)
        return v

    distances = etas = None
    if "L" in entries and "eta" in entries:
        e = get("eta")
        raise ConfigError("give either L or eta, not both", e.source, e.line)
    if "L" in entries:
        distances = _number_list(get("L"))
        if not distances:
            raise ConfigError("L list is empty", get("L").source, get("L").line)
        if any(L < 0 for L in distances):
            raise ConfigError("distances must be non-negative", get("L").source, get("L").line)
    elif "eta" in entries:
        etas = _number_list(get("eta"))
        if not etas:
            raise ConfigError("eta list is empty", get("eta").source, get("eta").line)
        if any(not 0.0 < x <= 1.0 for x in etas):
            raise ConfigError("eta values must lie in (0,1]", get("eta").source, get("eta").line)
    else:
        raise ConfigError("no scenario grid: set L or eta")

    if "N" in entries:
        e = get("N")
        n_list = [_integer(e, s) for s in e.value.split(",") if s.strip()]
        if not n_list:
            raise ConfigError("N list is empty", e.source, e.line)
        if any(n < 1 for n in n_list):
            raise ConfigError("N must be positive", e.source, e.line)
    else:
        n_list = [ProtocolParams().n_rounds]

    base = ProtocolParams()
    try:
        detector = DetectorModel(num("p_dark", base.detector.p_dark),
                                 num("eta_det", base.detector.eta_det))
        template = ProtocolParams(
            mu=num("mu", base.mu), t_B=num("t_B", base.t_B),
            p_d1=num("p_d1", base.p_d1), p_d2=num("p_d2", base.p_d2),
            n_rounds=n_list[0],
            basis_mode=BasisMode(choice("basis_mode", "passive", ("passive", "active"))),
            detector=detector, e_d=num("e_d", base.e_d), f_ec=num("f_ec", base.f_ec),
            p_switch=num("p_switch", None),
        )
        budget = epsilon_budget(num("eps_sec", 1e-10), num("eps_cor", 1e-15))
    except (ParameterError, ValueError) as exc:
        raise ConfigError(f"invalid protocol parameters: {exc}") from exc

    engine = choice("engine", "kato", ENGINES)
    engines = ("kato", "azuma")
    if "engines" in entries:
        e = get("engines")
        parts = tuple(s.strip() for s in e.value.split(","))
        if len(parts) != 2 or any(p not in ENGINES for p in parts):
            raise ConfigError("engines must name two of " + ", ".join(ENGINES), e.source, e.line)
        engines = parts

    free = VARIABLES
    if "free" in entries:
        e = get("free")
        free = tuple(s.strip() for s in e.value.split(",") if s.strip())
        if set(free) - set(VARIABLES):
            raise ConfigError(f"free must be a subset of {', '.join(VARIABLES)}", e.source, e.line)
    bounds = dict(DEFAULT_BOUNDS)
    for v in VARIABLES:
        key = f"{v}_bounds"
        if key in entries:
            pair = _number_list(get(key))
            if len(pair) != 2:
                raise ConfigError(f"{key} needs two numbers", get(key).source, get(key).line)
            bounds[v] = (pair[0], pair[1])
    max_evals = _integer(get("max_evals")) if "max_evals" in entries else 1500
    seed = _integer(get("seed")) if "seed" in entries else 0
    ep_mode = choice("ep_mode", "consistent", EP_MODES)
    asymptotic = _flag(get("asymptotic")) if "asymptotic" in entries else False
    spec = OptimizationSpec(free=free, bounds=bounds, max_evals=max_evals, seed=seed,
                            budget=budget, engine=engine, ep_mode=ep_mode,
                            finite=not asymptotic)
    workers = _integer(get("workers")) if "workers" in entries else 1
    if workers < 1:
        raise ConfigError("workers must be ≥ 1", get("workers").source, get("workers").line)
    trials = _integer(get("coverage_trials")) if "coverage_trials" in entries else 100_000
    return RunConfig(
        distances=distances, etas=etas, n_list=n_list, template=template,
        optimize=_flag(get("optimize")) if "optimize" in entries else optimize_default,
        opt_spec=spec, engine=engine, engines=engines, ep_mode=ep_mode,
        asymptotic=asymptotic, out=get("out").value if "out" in entries else None,
        seed=seed, workers=workers, coverage_trials=trials,
    )


# -- grid evaluation ------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, str)):
        return str(x)
    return f"{x:.12g}"


def _solve(cfg: RunConfig, eta: float, n: int, engine: str,
           template: ProtocolParams | None = None) -> tuple[ProtocolParams, KeyRateResult]:
    params = dataclasses.replace(template or cfg.template, n_rounds=n)
    if cfg.optimize:
        spec = dataclasses.replace(cfg.opt_spec, engine=engine)
        return optimize(params, eta, spec)
    res = evaluate_point(params, eta, cfg.opt_spec.budget, engine, cfg.ep_mode,
                         not cfg.asymptotic)
    return params, res


def _row(L, eta, params: ProtocolParams, res: KeyRateResult, engine: str) -> dict:
    return {
        "L_km": L, "eta": eta, "N": params.n_rounds, "mu": params.mu, "t_B": params.t_B,
        "p_d1": params.p_d1, "p_d2": params.p_d2, "e_d": params.e_d, "n_z": res.n_z,
        "E_z": res.e_z, "Ep_upper": res.e_p_upper, "leak_EC": res.leak_ec,
        "key_length": res.key_length, "rate_per_pulse": res.rate_per_pulse,
        "engine": engine if not res.trace.get("engine") == "none" else "none",
        "aborted": res.aborted,
    }


def _rate_job(job):
    cfg, (L, eta, n) = job
    params, res = _solve(cfg, eta, n, cfg.engine)
    return _row(L, eta, params, res, cfg.engine)


def _q00(res: KeyRateResult) -> float:
    be = res.trace.get("bounds")
    return be.q_upper["00"][0] if be is not None else math.nan


def _compare_job(job):
    cfg, (L, eta, n) = job
    ea, eb = cfg.engines
    pa, ra = _solve(cfg, eta, n, ea)
    pb, rb = _solve(cfg, eta, n, eb)
    if cfg.optimize:
        # seed each engine with the other's optimum so neither loses to a point it never saw
        pa2, ra2 = _solve(cfg, eta, n, ea, template=pb)
        pb2, rb2 = _solve(cfg, eta, n, eb, template=pa)
        if ra2.rate_per_pulse > ra.rate_per_pulse:
            pa, ra = pa2, ra2
        if rb2.rate_per_pulse > rb.rate_per_pulse:
            pb, rb = pb2, rb2
    return {
        "L_km": L, "eta": eta, "N": n, "engine_a": ea, "engine_b": eb,
        "rate_a": ra.rate_per_pulse, "rate_b": rb.rate_per_pulse,
        "key_length_a": ra.key_length, "key_length_b": rb.key_length,
        "q00_M0_upper_a": _q00(ra), "q00_M0_upper_b": _q00(rb),
        "aborted_a": ra.aborted, "aborted_b": rb.aborted,
    }


def run_grid(cfg: RunConfig, job_fn) -> list[dict]:
    """Evaluate every grid point; rows come back in grid order."""
    jobs = [(cfg, p) for p in cfg.points()]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(job_fn, jobs))
    return [job_fn(j) for j in jobs]


def write_csv(rows: list[dict], fields, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(r[f]) for f in fields])


# -- entry point ----------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cowqkd", description="Finite-key rates for COW QKD.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("rate", "evaluate the pipeline at the configured parameters"),
                        ("sweep", "optimise parameters at every grid point"),
                        ("optimize", "optimise parameters and report them"),
                        ("compare-bounds", "paired Kato and Azuma rates"),
                        ("montecarlo", "sampled-run self-check")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", nargs="?", help="key = value config file")
        p.add_argument("--L", help="distances in km, list or start:stop:step")
        p.add_argument("--N", help="numbers of rounds, comma separated")
        p.add_argument("--e-d", dest="e_d", help="misalignment error")
        p.add_argument("--engine", help="concentration engine: " + ", ".join(ENGINES))
        p.add_argument("--seed", help="random seed")
        p.add_argument("--out", help="output path (default standard output)")
        p.add_argument("--workers", help="worker processes for the grid")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key")
    return ap


def _overrides(args) -> dict[str, _Entry]:
    out = {}
    for key in ("L", "N", "e_d", "engine", "seed", "out", "workers"):
        v = getattr(args, key)
        if v is not None:
            out[key] = _Entry(v, f"--{key.replace('_', '-')}", None)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"expected KEY=VALUE, got {item!r}", "--set")
        out[key.strip()] = _Entry(value.strip(), "--set", None)
    return out


def _open_out(path):
    if path in (None, "", "-"):
        return None
    try:
        return open(path, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise ConfigError(f"output path not writable: {exc}", path) from exc


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        entries = read_config(args.config)
        entries.update(_overrides(args))
        cfg = build_config(entries, optimize_default=args.command in ("sweep", "optimize"))
        if args.command == "optimize":
            cfg.optimize = True
        if args.command == "montecarlo":
            return _montecarlo(cfg)
        fh = _open_out(cfg.out)
        try:
            if args.command == "compare-bounds":
                rows = run_grid(cfg, _compare_job)
                fields = COMPARE_FIELDS
                positive = any(r["rate_a"] > 0 or r["rate_b"] > 0 for r in rows)
            else:
                rows = run_grid(cfg, _rate_job)
                fields = CSV_FIELDS
                positive = any(r["rate_per_pulse"] > 0 for r in rows)
            write_csv(rows, fields, fh or sys.stdout)
        finally:
            if fh is not None:
                fh.close()
        return EXIT_OK if positive else EXIT_ABORTED
    except (ConfigError, OptimizationError) as exc:
        print(f"cowqkd: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AssertionError, ArithmeticError) as exc:
        print(f"cowqkd: numerical assertion failed: {exc!r}", file=sys.stderr)
        return EXIT_NUMERIC


def _montecarlo(cfg: RunConfig) -> int:
    from .validation import montecarlo_report

    if len(cfg.points()) != 1:
        raise ConfigError("montecarlo takes a single L (or eta) and a single N")
    L, eta, n = cfg.points()[0]
    if n > MAX_MONTECARLO_N:
        raise ConfigError(f"montecarlo N must be at most {MAX_MONTECARLO_N}")
    fh = _open_out(cfg.out)
    params, _ = _solve(cfg, eta, n, cfg.engine)
    report = montecarlo_report(params, eta, cfg.opt_spec.budget, cfg.seed, cfg.engine,
                               cfg.ep_mode, coverage_trials=cfg.coverage_trials)
    text = report.text()
    if fh is None:
        sys.stdout.write(text)
    else:
        with fh:
            fh.write(text)
    return EXIT_OK if report.passed else EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
