"""Scan orchestration: config files, the Farey-grid driver, and table export.

A scan walks the Farey grid up to Q_max, fills the beta cache, measures
locking intervals and the completeness ratio L(Q) along a dyadic ladder,
evaluates truncated variation/Hausdorff estimators, and runs any requested
flatness curves and KAM-regime probes.  Results land in a fixed set of CSV
files plus a canonical report.json.  With a fixed seed and workers = 1 two
runs produce byte-identical artifacts, and a warm cache changes nothing but
the wall time.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .cache import BetaCache, render_json
from .errors import ConfigError, StaircaseLabError
from .flatness import flatness_bound, flatness_curve
from .model import GeneratingModel, model_from_sections, parse_sections
from .solvers import SolveOptions
from .staircase import (
    DERIVATIVE_DEPTH,
    BetaTable,
    ac_part_probe,
    completeness_measure,
    convexity_probe,
    hausdorff_estimator,
    legendre,
    locking_intervals,
    mediant_chain,
    variation_estimator,
)
from .variational import minimize_periodic

_SCAN_KEYS = {
    "q_max",
    "h_lo",
    "h_hi",
    "c_lo",
    "c_hi",
    "nu",
    "theta",
    "estimator_q",
    "c_grid",
    "derivative_depth",
    "workers",
    "seed",
    "cache_dir",
    "out_dir",
}
_FLATNESS_KEYS = {"p", "q", "t_grid"}
_PROBE_KEYS = {"cf", "delta", "rho_lo", "rho_hi"}


@dataclass
class FlatnessTarget:
    p: int
    q: int
    t_grid: tuple[int, ...] | None = None


@dataclass
class ProbeTarget:
    cf: tuple[int, ...]
    delta: float = 0.3
    window: tuple[float, float] | None = None


@dataclass
class ScanConfig:
    """Parsed scan request: the model plus every knob of the experiment."""

    model: GeneratingModel
    q_max: int
    h_lo: float = 0.0
    h_hi: float = 1.0
    c_lo: float | None = None
    c_hi: float | None = None
    nus: tuple[float, ...] = ()
    thetas: tuple[float, ...] = ()
    estimator_q: int | None = None
    c_grid: int = 201
    derivative_depth: int = DERIVATIVE_DEPTH
    workers: int = 1
    seed: int = 0
    cache_dir: str | None = None
    out_dir: str | None = None
    flatness_targets: tuple[FlatnessTarget, ...] = ()
    probes: tuple[ProbeTarget, ...] = ()
    raw_text: str = ""

    @property
    def config_digest(self) -> str:
        return hashlib.sha256(self.raw_text.encode("utf-8")).hexdigest()


def _parse_int(section: str, data: dict, key: str, default=None) -> int:
    if key not in data:
        if default is None:
            raise ConfigError(f"[{section}] missing required key {key!r}")
        return default
    try:
        return int(data[key])
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {data[key]!r} is not an integer") from exc


def _parse_float(section: str, data: dict, key: str, default=None):
    if key not in data:
        return default
    try:
        return float(data[key])
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {data[key]!r} is not a number") from exc


def _parse_list(section: str, data: dict, key: str, cast):
    if key not in data or not data[key].strip():
        return ()
    out = []
    for item in data[key].split(","):
        try:
            out.append(cast(item.strip()))
        except ValueError as exc:
            raise ConfigError(
                f"[{section}] {key} has a bad entry {item.strip()!r}"
            ) from exc
    return tuple(out)


def parse_scan_config(text: str, require_scan: bool = True) -> ScanConfig:
    """Parses the sectioned config format into a validated ScanConfig.

    Sections: one [model] (plus optional [harmonic] blocks, both as in the
    model file format), at most one [scan], and any number of [flatness] and
    [probe] blocks.  Unknown sections or keys raise ConfigError.
    """
    sections = parse_sections(text)
    model_sections = [(n, d) for n, d in sections if n in ("model", "harmonic")]
    model = model_from_sections(model_sections)

    scan_data: dict | None = None
    flatness_targets: list[FlatnessTarget] = []
    probes: list[ProbeTarget] = []
    for name, data in sections:
        if name in ("model", "harmonic"):
            continue
        if name == "scan":
            if scan_data is not None:
                raise ConfigError("more than one [scan] section")
            unknown = set(data) - _SCAN_KEYS
            if unknown:
                raise ConfigError(f"[scan] unknown keys {sorted(unknown)}")
            scan_data = data
        elif name == "flatness":
            unknown = set(data) - _FLATNESS_KEYS
            if unknown:
                raise ConfigError(f"[flatness] unknown keys {sorted(unknown)}")
            p = _parse_int("flatness", data, "p")
            q = _parse_int("flatness", data, "q")
            if q < 1:
                raise ConfigError(f"[flatness] q must be positive, got {q}")
            grid = _parse_list("flatness", data, "t_grid", int)
            if grid and any(t < 1 for t in grid):
                raise ConfigError(f"[flatness] t_grid entries must be positive: {grid}")
            flatness_targets.append(FlatnessTarget(p, q, grid or None))
        elif name == "probe":
            unknown = set(data) - _PROBE_KEYS
            if unknown:
                raise ConfigError(f"[probe] unknown keys {sorted(unknown)}")
            cf = _parse_list("probe", data, "cf", int)
            if not cf:
                raise ConfigError("[probe] missing required key 'cf'")
            delta = _parse_float("probe", data, "delta", 0.3)
            rho_lo = _parse_float("probe", data, "rho_lo")
            rho_hi = _parse_float("probe", data, "rho_hi")
            if (rho_lo is None) != (rho_hi is None):
                raise ConfigError("[probe] rho_lo and rho_hi must come together")
            window = None
            if rho_lo is not None:
                if not rho_lo < rho_hi:
                    raise ConfigError(
                        f"[probe] empty window [{rho_lo}, {rho_hi}]"
                    )
                window = (rho_lo, rho_hi)
            probes.append(ProbeTarget(cf, delta, window))
        else:
            raise ConfigError(f"unknown section [{name}] in scan config")

    if scan_data is None:
        if require_scan:
            raise ConfigError("missing [scan] section")
        scan_data = {}

    q_max = _parse_int("scan", scan_data, "q_max", 16)
    if q_max < 1:
        raise ConfigError(f"[scan] q_max must be >= 1, got {q_max}")
    h_lo = _parse_float("scan", scan_data, "h_lo", 0.0)
    h_hi = _parse_float("scan", scan_data, "h_hi", 1.0)
    if not h_lo < h_hi:
        raise ConfigError(f"[scan] degenerate homology range [{h_lo}, {h_hi}]")
    c_lo = _parse_float("scan", scan_data, "c_lo")
    c_hi = _parse_float("scan", scan_data, "c_hi")
    if (c_lo is None) != (c_hi is None):
        raise ConfigError("[scan] c_lo and c_hi must come together")
    if c_lo is not None and not c_lo < c_hi:
        raise ConfigError(f"[scan] degenerate cohomology range [{c_lo}, {c_hi}]")
    nus = _parse_list("scan", scan_data, "nu", float)
    if any(not 0.0 < nu < 1.0 for nu in nus):
        raise ConfigError(f"[scan] nu values must lie in (0,1): {nus}")
    thetas = _parse_list("scan", scan_data, "theta", float)
    if any(not 0.0 < th <= 1.0 for th in thetas):
        raise ConfigError(f"[scan] theta values must lie in (0,1]: {thetas}")
    if thetas and not nus:
        raise ConfigError("[scan] theta given without any nu")
    estimator_q = _parse_int("scan", scan_data, "estimator_q", 0) or None
    c_grid = _parse_int("scan", scan_data, "c_grid", 201)
    if c_grid < 2:
        raise ConfigError(f"[scan] c_grid must be >= 2, got {c_grid}")
    depth = _parse_int("scan", scan_data, "derivative_depth", DERIVATIVE_DEPTH)
    if depth < 1:
        raise ConfigError(f"[scan] derivative_depth must be >= 1, got {depth}")
    workers = _parse_int("scan", scan_data, "workers", 1)
    if workers < 1:
        raise ConfigError(f"[scan] workers must be >= 1, got {workers}")
    seed = _parse_int("scan", scan_data, "seed", 0)

    return ScanConfig(
        model=model,
        q_max=q_max,
        h_lo=h_lo,
        h_hi=h_hi,
        c_lo=c_lo,
        c_hi=c_hi,
        nus=nus,
        thetas=thetas,
        estimator_q=estimator_q,
        c_grid=c_grid,
        derivative_depth=depth,
        workers=workers,
        seed=seed,
        cache_dir=scan_data.get("cache_dir"),
        out_dir=scan_data.get("out_dir"),
        flatness_targets=tuple(flatness_targets),
        probes=tuple(probes),
        raw_text=text,
    )


def load_scan_config(path) -> ScanConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scan_config(fh.read())


# ---- grid enumeration ----------------------------------------------------------


def _sorted_pairs(fracs) -> list[tuple[int, int]]:
    ordered = sorted(fracs, key=lambda f: (f.denominator, f))
    return [(r.numerator, r.denominator) for r in ordered]


def base_rationals(config: ScanConfig) -> list[tuple[int, int]]:
    """The Farey grid in [h_lo, h_hi] plus the window endpoints; these are
    the rationals whose one-sided derivatives the scan certifies."""
    base: set[Fraction] = set()
    for q in range(1, config.q_max + 1):
        lo = math.ceil(config.h_lo * q)
        hi = math.floor(config.h_hi * q)
        for p in range(lo, hi + 1):
            if math.gcd(abs(p), q) == 1:
                base.add(Fraction(p, q))
    base.add(Fraction(config.h_lo).limit_denominator(config.q_max))
    base.add(Fraction(config.h_hi).limit_denominator(config.q_max))
    return _sorted_pairs(base)


def scan_rationals(config: ScanConfig) -> list[tuple[int, int]]:
    """Every rational the grid fill will solve: the base rationals and the
    mediant chains their one-sided derivatives consume."""
    full = {Fraction(p, q) for p, q in base_rationals(config)}
    for p, q in base_rationals(config):
        for side in ("left", "right"):
            for j in range(1, config.derivative_depth + 1):
                full.add(mediant_chain(p, q, side, j))
    return _sorted_pairs(full)


def _beta_task(model: GeneratingModel, p: int, q: int, seed: int):
    """Worker-side solve; returns the configuration so the parent owns all writes."""
    return minimize_periodic(model, p, q, SolveOptions(seed=seed))


# ---- csv / json rendering -------------------------------------------------------


def _cell(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return f"{value:.17g}"
    text = str(value)
    if any(ch in text for ch in ',"\n'):
        return '"' + text.replace('"', '""') + '"'
    return text


def write_csv(path, header, rows) -> None:
    """Writes rows of mixed scalars with canonical float rendering (17 sig figs)."""
    lines = [",".join(_cell(h) for h in header)]
    lines.extend(",".join(_cell(v) for v in row) for row in rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_report(path, report: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_json(report) + "\n")


def flatness_csv_rows(curve):
    """(T, delta, u, zeta_upper, bound_value) rows for flatness_<p>_<q>.csv."""
    rows = []
    for T, delta, u, zeta in zip(curve.T_values, curve.deltas,
                                 curve.u_values, curve.zeta_upper_bounds):
        bound = (flatness_bound(curve.q, delta, curve.C_fit, curve.lambda_fit)
                 if math.isfinite(curve.C_fit) else float("nan"))
        rows.append((T, delta, u, zeta, bound))
    return rows


# ---- the scan driver ------------------------------------------------------------


def _dyadic_ladder(q_max: int) -> list[int]:
    ladder = []
    q = 4
    while q < q_max:
        ladder.append(q)
        q *= 2
    ladder.append(q_max)
    return sorted(set(ladder))


def fill_table(table: BetaTable, cache: BetaCache | None, config: ScanConfig,
               tasks, failures, derivative_targets=None) -> None:
    """Solves every (p,q) task into the table, then certifies one-sided
    derivatives on derivative_targets (default: the base rationals).

    With workers > 1 the solves are farmed to a process pool and committed to
    the cache in task order; the serial pass afterwards then hits the warm
    cache.  Failures are recorded only by the serial pass, so the failure
    list is identical for any worker count.
    """
    if derivative_targets is None:
        derivative_targets = base_rationals(config)
    if config.workers > 1 and cache is not None and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_beta_task, config.model, p, q, config.seed)
                       for p, q in tasks]
            for fut in futures:
                try:
                    cache.put(config.model, fut.result())
                except StaircaseLabError:
                    continue
    for p, q in tasks:
        try:
            table.beta(p, q)
        except StaircaseLabError as exc:
            failures.append({"p": p, "q": q, "stage": "beta",
                             "error": type(exc).__name__, "message": str(exc)})
    for p, q in derivative_targets:
        try:
            table.one_sided(p, q, config.derivative_depth)
        except StaircaseLabError as exc:
            failures.append({"p": p, "q": q, "stage": "derivative",
                             "error": type(exc).__name__, "message": str(exc)})


def cohomology_window(table: BetaTable, config: ScanConfig, failures):
    if config.c_lo is not None:
        return config.c_lo, config.c_hi
    lo = Fraction(config.h_lo).limit_denominator(config.q_max)
    hi = Fraction(config.h_hi).limit_denominator(config.q_max)
    try:
        c1 = table.one_sided(lo.numerator, lo.denominator, config.derivative_depth)[0]
        c2 = table.one_sided(hi.numerator, hi.denominator, config.derivative_depth)[1]
    except StaircaseLabError as exc:
        failures.append({"stage": "window", "error": type(exc).__name__,
                         "message": str(exc)})
        return None
    return c1, c2


def run_scan(config: ScanConfig):
    """Runs the whole experiment described by config.

    Returns (exit_status, report).  Exit 0 means the artifact set was written;
    isolated per-rational failures are recorded in the report, not fatal.  A
    fatal error (twist violation, nonconvex beta table, unwritable output)
    yields a nonzero status and a report.json carrying the error record.
    """
    if config.out_dir is None:
        raise ConfigError("scan requires an output directory (out_dir)")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report: dict = {
        "tool_version": __version__,
        "model": {"hash": config.model.model_hash, **config.model.to_config_dict()},
        "config_digest": config.config_digest,
        "results": {},
    }
    try:
        code = _run_scan_inner(config, out, report)
    except (StaircaseLabError, ValueError) as exc:
        report["error"] = {"type": type(exc).__name__, "message": str(exc)}
        write_report(out / "report.json", report)
        return 1, report
    write_report(out / "report.json", report)
    return code, report


def _run_scan_inner(config: ScanConfig, out: Path, report: dict) -> int:
    model = config.model
    model.check_twist()
    cache_dir = config.cache_dir or str(out / "cache")
    cache = BetaCache(cache_dir)
    options = SolveOptions(seed=config.seed)
    table = BetaTable.bind(model, config.h_lo, config.h_hi, cache=cache, options=options)

    failures: list[dict] = []
    results = report["results"]
    tasks = scan_rationals(config)
    fill_table(table, cache, config, tasks, failures)

    window = cohomology_window(table, config, failures)
    ladder = _dyadic_ladder(config.q_max)

    locking_rows = []
    l_of_q = []
    if window is not None:
        c1, c2 = window
        results["c_window"] = [c1, c2]
        intervals = []
        for Q in ladder:
            try:
                intervals = locking_intervals(table, Q, c1, c2, config.derivative_depth)
                l_of_q.append((Q, completeness_measure(intervals, c1, c2)))
            except StaircaseLabError as exc:
                failures.append({"stage": f"locking Q={Q}", "error": type(exc).__name__,
                                 "message": str(exc)})
        locking_rows = [
            (f"{iv.p}/{iv.q}", iv.c_minus, iv.c_plus, iv.width) for iv in intervals
        ]
    write_csv(out / "locking.csv", ("(p,q)", "c_minus", "c_plus", "width"), locking_rows)
    results["L_of_Q"] = [[Q, val] for Q, val in l_of_q]

    estimator_rows: list[tuple] = [("L", "", "", Q, val) for Q, val in l_of_q]
    for nu in config.nus:
        for Q in ladder:
            try:
                val = variation_estimator(table, nu, Q, config.estimator_q)
            except StaircaseLabError as exc:
                failures.append({"stage": f"variation nu={nu} Q={Q}",
                                 "error": type(exc).__name__, "message": str(exc)})
                continue
            estimator_rows.append(("variation", nu, "", Q, val))
    for nu in config.nus:
        for theta in config.thetas:
            for Q in ladder:
                try:
                    val = hausdorff_estimator(table, nu, theta, Q, config.estimator_q)
                except StaircaseLabError as exc:
                    failures.append({"stage": f"hausdorff nu={nu} theta={theta} Q={Q}",
                                     "error": type(exc).__name__, "message": str(exc)})
                    continue
                estimator_rows.append(("hausdorff", nu, theta, Q, val))
    write_csv(out / "estimators.csv", ("kind", "nu", "theta", "Q", "value"),
              estimator_rows)
    results["estimators"] = [
        {"kind": k, "nu": nu if nu != "" else None, "theta": th if th != "" else None,
         "Q": Q, "value": val}
        for k, nu, th, Q, val in estimator_rows
    ]

    stair = None
    stair_rows = []
    if window is not None:
        try:
            cs = np.linspace(window[0], window[1], config.c_grid)
            stair = legendre(table, cs)
            stair_rows = list(stair.d_alpha)
        except StaircaseLabError as exc:
            failures.append({"stage": "staircase", "error": type(exc).__name__,
                             "message": str(exc)})
    write_csv(out / "staircase.csv", ("c", "d_alpha"), stair_rows)

    beta_rows = [
        (e.p, e.q, e.rho, e.beta, e.c_minus, e.c_plus, e.bracket_width)
        for e in table.entries()
    ]
    write_csv(out / "beta.csv",
              ("p", "q", "rho", "beta", "c_minus", "c_plus", "bracket_width"),
              beta_rows)

    flatness_records = []
    for target in config.flatness_targets:
        try:
            curve = flatness_curve(model, target.p, target.q,
                                   T_list=target.t_grid, table=table, options=options)
        except StaircaseLabError as exc:
            failures.append({"stage": f"flatness {target.p}/{target.q}",
                             "error": type(exc).__name__, "message": str(exc)})
            continue
        write_csv(out / f"flatness_{curve.p}_{curve.q}.csv",
                  ("T", "delta", "u", "zeta_upper", "bound_value"),
                  flatness_csv_rows(curve))
        flatness_records.append({
            "p": curve.p, "q": curve.q, "c_plus": curve.c_plus,
            "C_fit": curve.C_fit, "lambda_fit": curve.lambda_fit,
            "lambda_monodromy": curve.lambda_monodromy, "verdict": curve.verdict,
        })
    results["flatness"] = flatness_records

    probe_records = []
    windows = [t.window for t in config.probes if t.window is not None]
    for target in config.probes:
        try:
            res = convexity_probe(table, target.cf, target.delta)
        except StaircaseLabError as exc:
            failures.append({"stage": f"probe cf={list(target.cf)}",
                             "error": type(exc).__name__, "message": str(exc)})
            continue
        probe_records.append({
            "cf": list(target.cf), "target": res.target, "c_low": res.c_low,
            "C_high": res.C_high, "slope": res.slope, "intercept": res.intercept,
            "n_samples": res.n_samples,
        })
    results["probes"] = probe_records
    if windows and stair is not None:
        ac = ac_part_probe(stair, windows)
        results["ac_part"] = {
            "bound": ac.bound, "lipschitz": ac.lipschitz,
            "c_windows": [list(w) for w in ac.c_windows],
            "n_segments": ac.n_segments,
        }

    results["n_rationals"] = len(tasks)
    results["failures"] = failures
    return 0
