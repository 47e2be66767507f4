"""Built-in experiments: configuration schema, replication driver and file output.

Each experiment takes a resolved configuration dict and an output directory
and writes CSV tables, a JSON summary and (optionally) PNG figures.  Every
file carries the configuration hash, the seed and the package version.
Replication ``r`` always draws from stream ``r``, and results are reduced
in replication order, so outputs do not depend on the thread count.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .core import ConfigError, DegenerateError, Quote, RngStream
from .estimators import (
    clustering_test,
    exponential_tail_check,
    sigma1,
    stationary_stats,
    vol_series,
)
from .laws import ULaw, VLaw
from .microsim import MicroParams, increment_law_distance, inter_trade_occupancy_probe, pool_by_depth, run_until
from .prelimit import ReturnLaw, ScalingScheme, coupled_terminal, convergence_probe, simulate_coupled
from .sde import derive_sde_params, simulate_sde
from .tails import fit_survival_curve, fit_tail
from .theta import (
    ConstantCancellation,
    GeometricPlacement,
    PatienceCancellation,
    PlacementPmf,
    PowerLawPlacement,
    TablePlacement,
    cancellation_from_placement,
    survival_power_law_pmf,
    theta_closed_form,
    theta_from_queue_params,
)

log = logging.getLogger(__name__)

# -- defaults -----------------------------------------------------------------

_TABLE3_SETS = [
    {"label": "a", "u": 2.8, "beta": 0.25, "xi": 0.02, "r": 0.25, "mu_gamma": 6.75, "paper_mean": 0.1704, "paper_std": 0.2068},
    {"label": "b", "u": 2.3, "beta": 0.25, "xi": 0.02, "r": 0.25, "mu_gamma": 6.75, "paper_mean": 0.1812, "paper_std": 0.2273},
    {"label": "c", "u": 2.8, "beta": 0.5, "xi": 0.025, "r": 0.25, "mu_gamma": 6.75, "paper_mean": 0.0957, "paper_std": 0.1056},
    {"label": "d", "u": 2.8, "beta": 0.25, "xi": 0.02, "r": 0.5, "mu_gamma": 4.5, "paper_mean": 0.1576, "paper_std": 0.1663},
]

_TABLE4_ROWS = [
    {"label": "1", "u": 2.8, "xi": 0.08, "r": 0.25, "mu": 12.0, "beta": 0.25, "mu_gamma": 9.0, "paper_mean": 0.1704, "paper_sigma1": 0.0822},
    {"label": "2", "u": 2.8, "xi": 0.4, "r": 0.25, "mu": 12.0, "beta": 0.25, "mu_gamma": 9.0, "paper_mean": 0.7934, "paper_sigma1": 0.4074},
    {"label": "3", "u": 2.8, "xi": 0.8, "r": 0.25, "mu": 12.0, "beta": 0.25, "mu_gamma": 9.0, "paper_mean": 1.5862, "paper_sigma1": 0.8169},
    {"label": "3b", "u": 2.3, "xi": 0.08, "r": 0.25, "mu": 12.0, "beta": 0.25, "mu_gamma": 9.0, "paper_mean": 0.1812, "paper_sigma1": 0.0885},
    {"label": "4", "u": 2.3, "xi": 0.08, "r": 0.5, "mu": 6.0, "beta": 0.25, "mu_gamma": 3.0, "paper_mean": 0.1696, "paper_sigma1": 0.0848},
    {"label": "5", "u": 2.3, "xi": 0.08, "r": 0.75, "mu": 4.0, "beta": 0.25, "mu_gamma": 1.0, "paper_mean": 0.1559, "paper_sigma1": 0.0812},
]

_SDE_COMMON = {"rho": 0.02, "c": 1.0, "horizon": 1e4, "dt": 1e-3, "burn_in": 0.2,
               "variance_convention": "table_matched", "initial_spread": 0.02, "reflection": "truncate"}

DEFAULTS: dict[str, dict[str, Any]] = {
    "table3": {"seed": 0, "replications": 4, "mu": 9.0, **_SDE_COMMON, "sets": _TABLE3_SETS, "figures": True},
    "table4": {"seed": 0, "replications": 20, **_SDE_COMMON, "rows": _TABLE4_ROWS, "figures": True},
    "tail": {
        "seed": 0, "replications": 1, "mu": 9.0, **_SDE_COMMON, "horizon": 1e5,
        "set": dict(_TABLE3_SETS[1]), "start_quantile": 0.9, "k_frac": 0.05, "figures": True,
    },
    "clustering": {
        "seed": 0, "replications": 1, "mu": 9.0, **_SDE_COMMON, "horizon": 1e5,
        "set": dict(_TABLE3_SETS[1]), "n_perm": 200, "level": 0.95, "figures": True,
    },
    "averaging": {
        "seed": 0, "replications": 1, "lam": 1.0, "mu": 1.0, "xis": [10, 100, 1000], "trades": 10_000,
        "method": "intervals", "q": 20, "initial_quote": [10_000, 9_998], "tick": 0.01,
        "placement": {"family": "geometric", "ratio": 0.5, "depth": 40},
        "cancellation": {"kind": "patience", "c_p": 1.0},
        "occupancy": {
            "enabled": True, "lam": 30.0, "mu": 5.0, "xi": 1000, "snapshots": 20_000, "min_expected": 0.01,
            "placement": {"family": "table", "weights": [0.3, 0.25, 0.2, 0.12, 0.08, 0.05]},
            "cancellation": {"kind": "constant", "alpha": 1.0},
        },
        "figures": True,
    },
    "convergence": {
        "seed": 0, "replications": 10_000, "beta": 1.0, "r": 0.5, "xi": 4.0, "u": 2.8, "rho": 0.02, "c": 1.0,
        "gamma": 1.0, "mu": 1.0, "ns": [100, 1000, 10_000], "delta_mode": "fine", "initial": [0.5, 0.0],
        "horizon": 1.0, "sde_dt": 0.01, "reference_factor": 4,
        "coupling": {
            "enabled": True, "ns": [100, 10_000], "paths": 1000, "beta": 0.25, "r": 0.25, "xi": 0.02, "u": 2.8,
            "rho": 0.02, "c": 1.0, "mu": 9.0, "gamma": 0.75, "initial": [1.0, 0.0], "delta_mode": "exact",
            "horizon": 1.0,
        },
        "figures": True,
    },
    "theta-roundtrip": {
        "seed": 0, "replications": 100, "lams": [0.1, 1.0, 10.0], "c_ps": [0.5, 1.0, 2.0], "max_ticks": 60,
        "power_law": {"vs": [1.5, 2.8], "c_ps": [1.0, 2.0], "top": 10_000, "k_frac": 0.05},
        "figures": True,
    },
}

EXPERIMENTS = tuple(DEFAULTS)

# values that change how a run is executed but not what it produces
_EXECUTION_KEYS = ("threads", "out")


# -- configuration ------------------------------------------------------------

def _merge(template: Any, given: Any, where: str) -> Any:
    if isinstance(template, dict):
        if not isinstance(given, dict):
            raise ConfigError(f"{where}: expected an object")
        unknown = set(given) - set(template)
        if unknown:
            raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
        out = copy.deepcopy(template)
        for k, v in given.items():
            out[k] = _merge(template[k], v, f"{where}.{k}")
        return out
    if isinstance(template, list) and template and isinstance(template[0], dict):
        if not isinstance(given, list):
            raise ConfigError(f"{where}: expected a list")
        keys = set(template[0])
        out = []
        for i, item in enumerate(given):
            if not isinstance(item, dict) or set(item) - keys:
                raise ConfigError(f"{where}[{i}]: unknown keys {sorted(set(item) - keys) if isinstance(item, dict) else item}")
            missing = keys - set(item)
            if missing:
                raise ConfigError(f"{where}[{i}]: missing keys {sorted(missing)}")
            out.append(dict(item))
        return out
    if isinstance(template, bool):
        if not isinstance(given, bool):
            raise ConfigError(f"{where}: expected true/false")
        return given
    if isinstance(template, (int, float)) and not isinstance(template, bool):
        if isinstance(given, bool) or not isinstance(given, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return given
    if isinstance(template, str) and not isinstance(given, str):
        raise ConfigError(f"{where}: expected a string")
    if isinstance(template, list) and not isinstance(given, list):
        raise ConfigError(f"{where}: expected a list")
    return given


def resolve_config(experiment: str, given: dict | None = None, **overrides) -> dict:
    """Defaults overlaid with ``given`` then with non-None ``overrides``."""
    if experiment not in DEFAULTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    # a placement block may switch family, so only its own keys are checked later
    tmpl = copy.deepcopy(DEFAULTS[experiment])
    given = copy.deepcopy(given or {})
    free = {}
    for key in ("placement", "cancellation"):
        if key in given:
            free[key] = given.pop(key)
    occ_free = {}
    if isinstance(given.get("occupancy"), dict):
        for key in ("placement", "cancellation"):
            if key in given["occupancy"]:
                occ_free[key] = given["occupancy"].pop(key)
    cfg = _merge(tmpl, given, experiment)
    cfg.update(free)
    if occ_free:
        cfg["occupancy"].update(occ_free)
    for k, v in overrides.items():
        if v is not None:
            if k not in cfg:
                raise ConfigError(f"{experiment}: unknown key {k!r}")
            cfg[k] = v
    seed = cfg["seed"]
    if not (isinstance(seed, int) and 0 <= seed < 2**64):
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    if not (isinstance(cfg["replications"], int) and cfg["replications"] >= 1):
        raise ConfigError("replications must be a positive integer")
    return cfg


def config_hash(experiment: str, cfg: dict) -> str:
    body = {k: v for k, v in cfg.items() if k not in _EXECUTION_KEYS}
    blob = json.dumps({"experiment": experiment, "config": body}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def build_placement(spec: dict):
    spec = dict(spec)
    family = spec.pop("family", None)
    try:
        if family == "geometric":
            return GeometricPlacement(float(spec.pop("ratio")), int(spec.pop("depth")))
        if family == "power":
            return PowerLawPlacement(float(spec.pop("exponent")), float(spec.pop("offset")), int(spec.pop("depth")))
        if family == "table":
            return TablePlacement(tuple(float(w) for w in spec.pop("weights")))
    except KeyError as e:
        raise ConfigError(f"placement: missing key {e}") from None
    finally:
        if family in ("geometric", "power", "table") and spec:
            raise ConfigError(f"placement: unknown keys {sorted(spec)}")
    raise ConfigError(f"placement: unknown family {family!r}")


def build_cancellation(spec: dict):
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "patience":
        obj = PatienceCancellation(float(spec.pop("c_p", 1.0)))
    elif kind == "constant":
        obj = ConstantCancellation(float(spec.pop("alpha", 1.0)))
    else:
        raise ConfigError(f"cancellation: unknown kind {kind!r}")
    if spec:
        raise ConfigError(f"cancellation: unknown keys {sorted(spec)}")
    return obj


# -- output helpers -------------------------------------------------------------

class Output:
    """Writes files into one directory with a shared provenance header."""

    def __init__(self, out_dir: Path, experiment: str, cfg: dict):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.experiment = experiment
        self.meta = {
            "experiment": experiment,
            "config_hash": config_hash(experiment, cfg),
            "seed": cfg["seed"],
            "version": __version__,
        }
        self.files: list[str] = []

    @property
    def header(self) -> tuple[str, ...]:
        return tuple(f"{k}={v}" for k, v in self.meta.items())

    def path(self, name: str) -> Path:
        p = self.dir / f"{self.experiment}_{name}"
        self.files.append(p.name)
        return p

    def table(self, name: str, columns: Sequence[str], rows: Sequence[Sequence[Any]]) -> Path:
        p = self.path(f"{name}.csv")
        with open(p, "w", newline="") as fh:
            for line in self.header:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        return p

    def json(self, name: str, payload: dict) -> Path:
        p = self.path(f"{name}.json")
        with open(p, "w") as fh:
            json.dump({"meta": self.meta, **_jsonable(payload)}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return p


def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".12g")
    return str(v)


def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        f = float(x)
        return f if math.isfinite(f) else None
    return x


def parallel_map(fn: Callable[[int], Any], n: int, threads: int = 1) -> list:
    """``[fn(0), ..., fn(n-1)]`` evaluated on up to ``threads`` threads."""
    if threads <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, range(n)))


def _mean_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(x.mean()), float("nan")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def _sde_params(row: dict, mu: float, cfg: dict):
    u_law = ULaw(row["r"], row["xi"])
    v_law = VLaw(row["u"], cfg["rho"], cfg["c"])
    return derive_sde_params(mu, row["beta"], u_law, row["mu_gamma"] / mu, v_law, cfg["variance_convention"])


# -- experiments ----------------------------------------------------------------

def _sde_replicate(params, cfg: dict, seed: int, index: int, threads: int):
    """Run the replications of one parameter row; row ``index`` selects a substream."""

    def one(r: int):
        path = simulate_sde((cfg["initial_spread"], 0.0), params, cfg["horizon"], cfg["dt"],
                            RngStream(seed, r).generator(index), reflection=cfg["reflection"])
        st = stationary_stats(path, burn_in_frac=cfg["burn_in"])
        m = path.m[int(cfg["burn_in"] * path.m.size):]
        return st.mean, st.std, sigma1(m)

    return np.array(parallel_map(one, cfg["replications"], threads))


def run_table3(cfg: dict, out: Output, threads: int = 1) -> dict:
    rows, res = [], []
    for idx, row in enumerate(cfg["sets"]):
        params = _sde_params(row, cfg["mu"], cfg)
        vals = _sde_replicate(params, cfg, cfg["seed"], idx, threads)
        (mean, mean_se), (std, std_se) = _mean_se(vals[:, 0]), _mean_se(vals[:, 1])
        rows.append([row["label"], row["u"], row["beta"], row["xi"], row["r"], row["mu_gamma"], params.eta,
                     params.sigma2, mean, mean_se, std, std_se, row["paper_mean"], row["paper_std"]])
        res.append({"label": row["label"], "mean": mean, "mean_se": mean_se, "std": std, "std_se": std_se,
                    "eta": params.eta, "sigma2": params.sigma2,
                    "paper_mean": row["paper_mean"], "paper_std": row["paper_std"]})
    out.table("stats", ["set", "u", "beta", "xi", "r", "mu_gamma", "eta", "sigma2", "mean", "mean_se", "std",
                        "std_se", "paper_mean", "paper_std"], rows)
    summary = {"sets": res, "replications": cfg["replications"], "horizon": cfg["horizon"]}
    if cfg["figures"]:
        from .plotting import table_comparison_figure

        table_comparison_figure(out.path("means.png"), [r["label"] for r in res], [r["mean"] for r in res],
                                [r["mean_se"] for r in res], [r["paper_mean"] for r in res], "E[s]", meta=out.meta)
    return summary


def run_table4(cfg: dict, out: Output, threads: int = 1) -> dict:
    rows, res = [], []
    for idx, row in enumerate(cfg["rows"]):
        params = _sde_params(row, row["mu"], cfg)
        vals = _sde_replicate(params, cfg, cfg["seed"], idx, threads)
        mean, mean_se = _mean_se(vals[:, 0])
        sig, sig_se = _mean_se(vals[:, 2])
        ratios = vals[:, 0] / vals[:, 2]
        ratio, ratio_se = _mean_se(ratios)
        ell = math.sqrt(row["r"] * row["mu"]) / (2 * row["beta"] * math.sqrt(3))
        sig_heur = row["xi"] * math.sqrt(row["r"] * row["mu"] / 3)
        rows.append([row["label"], row["u"], row["xi"], row["r"], row["mu"], row["beta"], row["mu_gamma"], params.eta,
                     params.sigma2, mean, mean_se, sig, sig_se, ratio, ratio_se, ell, sig_heur,
                     row["paper_mean"], row["paper_sigma1"]])
        res.append({"label": row["label"], "mean": mean, "mean_se": mean_se, "sigma1": sig, "sigma1_se": sig_se,
                    "ratio": ratio, "ratio_se": ratio_se, "ell": ell, "sigma1_no_jumps": sig_heur,
                    "eta": params.eta, "sigma2": params.sigma2,
                    "paper_mean": row["paper_mean"], "paper_sigma1": row["paper_sigma1"]})
    out.table("stats", ["row", "u", "xi", "r", "mu", "beta", "mu_gamma", "eta", "sigma2", "mean", "mean_se",
                        "sigma1", "sigma1_se", "ratio", "ratio_se", "ell", "sigma1_no_jumps", "paper_mean",
                        "paper_sigma1"], rows)
    if cfg["figures"]:
        from .plotting import spread_vs_vol_figure

        spread_vs_vol_figure(out.path("spread_vs_vol.png"), [r["sigma1"] for r in res], [r["mean"] for r in res],
                             [r["paper_sigma1"] for r in res], [r["paper_mean"] for r in res], meta=out.meta)
    return {"rows": res, "replications": cfg["replications"], "horizon": cfg["horizon"]}


def _long_path(cfg: dict, row: dict, seed: int, stream: int, gamma_zero: bool = False):
    row = dict(row, mu_gamma=0.0) if gamma_zero else row
    params = _sde_params(row, cfg["mu"], cfg)
    path = simulate_sde((cfg["initial_spread"], 0.0), params, cfg["horizon"], cfg["dt"], RngStream(seed, stream),
                        reflection=cfg["reflection"])
    return params, path


def run_tail(cfg: dict, out: Output, threads: int = 1) -> dict:
    def one(r: int):
        _, path = _long_path(cfg, cfg["set"], cfg["seed"], r)
        return path.s[int(cfg["burn_in"] * path.s.size):]

    s = np.concatenate(parallel_map(one, cfg["replications"], threads))
    shape = exponential_tail_check(s, start_q=cfg["start_quantile"])
    try:
        fit = fit_tail(s, cfg["k_frac"])
        fit_d = {"hill_exponent": fit.exponent, "slope_exponent": fit.slope_exponent,
                 "curvature_ratio": fit.curvature_ratio, "hill_ratio": fit.hill_ratio, "power_law": fit.power_law}
    except DegenerateError as e:
        fit_d = {"error": str(e)}
    xs = np.sort(s)
    qs = np.linspace(0.0, 0.9999, 400)
    grid = np.quantile(xs, qs)
    surv = 1.0 - np.searchsorted(xs, grid, side="right") / xs.size
    mean = float(s.mean())
    rows = [[x, np.log(max(p, 0.5 / xs.size)), -x / mean] for x, p in zip(grid, surv)]
    out.table("log_survival", ["s", "log_survival", "log_survival_exponential"], rows)
    out.table("tail_residual", ["quantile", "s", "log_survival", "log_survival_exponential", "residual"],
              [[q, x, a, b, a - b] for q, x, a, b in zip(shape.quantiles, shape.x, shape.log_survival,
                                                            shape.log_survival_exp)])
    summary = {
        "mean": mean, "std": float(s.std(ddof=1)), "n_points": int(s.size),
        "positive_frac": shape.positive_frac, "mean_upper_residual": shape.upper_residual,
        "heavier_than_exponential": shape.heavier_than_exponential, "tail_fit": fit_d,
    }
    if cfg["figures"]:
        from .plotting import log_survival_figure

        log_survival_figure(out.path("log_survival.png"), grid, np.log(np.maximum(surv, 0.5 / xs.size)), mean, s, meta=out.meta)
    return summary


def run_clustering(cfg: dict, out: Output, threads: int = 1) -> dict:
    res = {}
    series = {}
    for label, gz in (("jumps", False), ("no_jumps", True)):
        def one(r: int, gz=gz):
            params, path = _long_path(cfg, cfg["set"], cfg["seed"], r, gamma_zero=gz)
            m = path.m[int(cfg["burn_in"] * path.m.size):]
            vs = vol_series(m)
            test = clustering_test(vs.sigma_bar, RngStream(cfg["seed"], r).generator(1 + int(gz)),
                                   cfg["n_perm"], cfg["level"])
            return vs, test

        runs = parallel_map(one, cfg["replications"], threads)
        res[label] = [t.as_dict() for _, t in runs]
        series[label] = runs[0][0]
    rows = []
    g = RngStream(cfg["seed"], 0).generator(3)
    for label, vs in series.items():
        perm = g.permutation(vs.sigma_bar)
        rows += [[label, t, a, b] for t, a, b in zip(vs.t, vs.sigma_bar, perm)]
    out.table("sigma_bar", ["path", "t", "sigma_bar", "sigma_bar_permuted"], rows)
    out.table("tests", ["path", "replication", "acf1", "null_quantile", "p_value", "clustered"],
              [[lab, i, d["acf1"], d["null_q"], d["p_value"], d["clustered"]] for lab, ds in res.items()
               for i, d in enumerate(ds)])
    if cfg["figures"]:
        from .plotting import clustering_figure

        vs = series["jumps"]
        clustering_figure(out.path("sigma_bar.png"), vs.t, vs.sigma_bar, RngStream(cfg["seed"], 0).generator(4), meta=out.meta)
    return {"tests": res, "acf1_jumps": [d["acf1"] for d in res["jumps"]],
            "acf1_no_jumps": [d["acf1"] for d in res["no_jumps"]]}


def _micro_params(cfg: dict, xi: float) -> MicroParams:
    from .core import TickGrid

    a, b = cfg["initial_quote"]
    return MicroParams(
        lam=cfg["lam"], mu=cfg["mu"], placement=build_placement(cfg["placement"]),
        cancellation=build_cancellation(cfg["cancellation"]), xi=xi, grid=TickGrid(cfg["tick"]),
        initial_quote=Quote(int(a), int(b)), q=int(cfg["q"]), horizon_trades=int(cfg["trades"]),
    )


def run_averaging(cfg: dict, out: Output, threads: int = 1) -> dict:
    rows, pmf_rows, res = [], [], []
    for idx, xi in enumerate(cfg["xis"]):
        params = _micro_params(cfg, float(xi))

        def one(r: int, params=params, idx=idx):
            path, _, sim = run_until(params, RngStream(cfg["seed"], r).generator(idx), method=cfg["method"])
            tv, emp, exact = increment_law_distance(path, params)
            return tv, emp, exact, sim.counters, path

        runs = parallel_map(one, cfg["replications"], threads)
        tvs = [x[0] for x in runs]
        tv, tv_se = _mean_se(tvs)
        c = runs[0][3]
        rows += [[xi, r, x[0], x[3].trades, x[3].discarded, x[3].clamped] for r, x in enumerate(runs)]
        emp, exact = runs[0][1], runs[0][2]
        total = sum(emp.values())
        for i in sorted(set(emp) | set(exact)):
            pmf_rows.append([xi, i, emp.get(i, 0) / total, exact.get(i, 0.0)])
        res.append({"xi": xi, "tv": tv, "tv_se": tv_se, "tv_by_replication": tvs, "discarded": c.discarded})
        if idx == 0:
            runs[0][4].write_csv(out.path(f"trades_xi{xi}.csv"), out.header)
    out.table("tv", ["xi", "replication", "tv", "trades", "discarded", "clamped"], rows)
    out.table("increment_pmf", ["xi", "relative_tick", "empirical", "theta_law"], pmf_rows)
    summary: dict[str, Any] = {"sweep": res,
                               "strictly_decreasing": all(a["tv"] > b["tv"] for a, b in zip(res, res[1:]))}
    occ = cfg["occupancy"]
    if occ["enabled"]:
        ocfg = dict(cfg, lam=occ["lam"], mu=occ["mu"], placement=occ["placement"], cancellation=occ["cancellation"])
        params = _micro_params(ocfg, float(occ["xi"]))
        stats = inter_trade_occupancy_probe(params, RngStream(cfg["seed"], 0).generator(len(cfg["xis"])),
                                            int(occ["snapshots"]))
        pooled = pool_by_depth(stats)
        sel = pooled.expected >= occ["min_expected"]
        z = (pooled.mean - pooled.expected) / pooled.std_err
        out.table("occupancy", ["depth", "snapshots", "mean", "var", "expected", "dispersion", "z"],
                  [[k, int(pooled.n), pooled.mean[k], pooled.var[k], pooled.expected[k], pooled.dispersion[k], z[k]]
                   for k in range(pooled.mean.size)])
        summary["occupancy"] = {
            "classes_checked": int(sel.sum()),
            "dispersion_min": float(pooled.dispersion[sel].min()), "dispersion_max": float(pooled.dispersion[sel].max()),
            "max_abs_z": float(np.abs(z[sel]).max()),
        }
    if cfg["figures"]:
        from .plotting import tv_sweep_figure

        tv_sweep_figure(out.path("tv_sweep.png"), [r["xi"] for r in res], [r["tv"] for r in res], meta=out.meta)
    return summary


def _return_law(block: dict) -> ReturnLaw:
    return ReturnLaw(block["beta"], ULaw(block["r"], block["xi"]), VLaw(block["u"], block["rho"], block["c"]))


def run_convergence(cfg: dict, out: Output, threads: int = 1) -> dict:
    law = _return_law(cfg)
    rep = convergence_probe(law, cfg["gamma"], cfg["mu"], cfg["ns"], cfg["replications"], cfg["seed"],
                            initial=tuple(cfg["initial"]), horizon=cfg["horizon"], delta_mode=cfg["delta_mode"],
                            sde_dt=cfg["sde_dt"], threads=threads, reference_factor=cfg["reference_factor"])
    out.table("ks", ["n", "ks_s", "ks_m", "sup_gap_p95", "mean_jumps", "mean_jumps_se", "jump_count_limit"],
              [[n, a, b, c, d, e, rep.jump_rate_limit] for n, a, b, c, d, e in
               zip(rep.ns, rep.ks_s, rep.ks_m, rep.gap_p95, rep.mean_jumps, rep.mean_jumps_se)])
    summary: dict[str, Any] = {
        "ns": rep.ns, "ks_s": rep.ks_s, "ks_m": rep.ks_m, "sup_gap_p95": rep.gap_p95,
        "mean_jumps": rep.mean_jumps, "jump_count_limit": rep.jump_rate_limit,
        "ks_s_decreasing": all(a > b for a, b in zip(rep.ks_s, rep.ks_s[1:])),
    }
    cp = cfg["coupling"]
    if cp["enabled"]:
        claw = _return_law(cp)
        rows, res = [], []
        for n in cp["ns"]:
            scheme = ScalingScheme(int(n), cp["gamma"], cp["mu"], cp["delta_mode"])
            ts = coupled_terminal(tuple(cp["initial"]), claw, scheme, cp["horizon"], int(cp["paths"]), cfg["seed"], threads)
            rows.append([n, int(cp["paths"]), int(ts.steps.sum()), int(ts.violations.sum()), float(ts.worst_ratio.max()),
                         float(ts.max_gap.max())])
            res.append({"n": n, "violations": int(ts.violations.sum()), "steps": int(ts.steps.sum()),
                        "worst_ratio": float(ts.worst_ratio.max())})
        out.table("coupling", ["n", "paths", "steps", "violations", "worst_gap_to_bound", "max_gap"], rows)
        summary["coupling"] = res
        scheme = ScalingScheme(int(cp["ns"][0]), cp["gamma"], cp["mu"], cp["delta_mode"])
        simulate_coupled(tuple(cp["initial"]), claw, scheme, cp["horizon"], RngStream(cfg["seed"], 0)).write_csv(
            out.path(f"coupled_path_n{cp['ns'][0]}.csv"), out.header)
    if cfg["figures"]:
        from .plotting import ks_sweep_figure

        ks_sweep_figure(out.path("ks_sweep.png"), rep.ns, rep.ks_s, rep.ks_m, meta=out.meta)
    return summary


def random_pmf(g: np.random.Generator, max_ticks: int) -> PlacementPmf:
    """Random placement pmf on a random shifted support, with some exact zeros."""
    size = int(g.integers(2, max_ticks + 1))
    w = g.exponential(size=size) * (g.random(size) > 0.2)
    w[0] += 1e-3  # keep at least one positive mass
    return PlacementPmf.from_weights(int(g.integers(-3, 2)), w)


def theta_identity_error(p: PlacementPmf, lam: float, c_p: float) -> float:
    """Max relative gap between the closed form and the queue composition."""
    a = theta_closed_form(p, c_p).value
    b = theta_from_queue_params(p, cancellation_from_placement(p, lam, c_p), lam).value
    pos = a > 0
    if np.any(b[~pos] != 0):
        return float("inf")
    return float(np.max(np.abs(b[pos] - a[pos]) / a[pos]))


def run_theta_roundtrip(cfg: dict, out: Output, threads: int = 1) -> dict:
    def one(r: int):
        g = RngStream(cfg["seed"], r).generator()
        p = random_pmf(g, cfg["max_ticks"])
        return [(r, lam, c, theta_identity_error(p, lam, c)) for lam in cfg["lams"] for c in cfg["c_ps"]]

    t0 = time.perf_counter()
    rows = [row for chunk in parallel_map(one, cfg["replications"], threads) for row in chunk]
    elapsed = time.perf_counter() - t0
    out.table("identity", ["pmf", "lam", "c_p", "max_rel_error"], rows)
    worst = max(r[3] for r in rows)
    pl = cfg["power_law"]
    fits = []
    for v in pl["vs"]:
        p = survival_power_law_pmf(v, int(pl["top"]))
        for c in pl["c_ps"]:
            th = theta_closed_form(p, c)
            fit = fit_survival_curve(th.ticks[:-1], th.value[:-1], pl["k_frac"])
            fits.append([v, c, c * v, fit.exponent, fit.exponent / (c * v) - 1.0, fit.n_tail])
    out.table("power_law", ["v", "c_p", "expected_exponent", "fitted_exponent", "rel_error", "n_tail"], fits)
    if cfg["figures"]:
        from .plotting import theta_tail_figure

        theta_tail_figure(out.path("theta_tails.png"), pl["vs"], pl["c_ps"], int(pl["top"]), meta=out.meta)
    return {"max_rel_error": worst, "identity_checks": len(rows), "identity_seconds_wall": elapsed,
            "power_law": [{"v": f[0], "c_p": f[1], "expected": f[2], "fitted": f[3], "rel_error": f[4]} for f in fits]}


RUNNERS: dict[str, Callable[[dict, Output, int], dict]] = {
    "table3": run_table3,
    "table4": run_table4,
    "tail": run_tail,
    "clustering": run_clustering,
    "averaging": run_averaging,
    "convergence": run_convergence,
    "theta-roundtrip": run_theta_roundtrip,
}


def run_experiment(experiment: str, cfg: dict, out_dir, threads: int = 1) -> dict:
    """Run a resolved configuration; returns the summary that was written."""
    out = Output(Path(out_dir), experiment, cfg)
    with open(out.path("config.resolved.json"), "w") as fh:
        json.dump({"meta": out.meta, "config": cfg}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    summary = RUNNERS[experiment](cfg, out, max(1, int(threads)))
    out.json("summary", {"results": summary, "files": sorted(out.files + [f"{experiment}_summary.json"])})
    return summary
