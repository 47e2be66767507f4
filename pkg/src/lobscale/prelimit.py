"""Discrete price/spread recursion at scale ``n`` and its coupled auxiliary.

Every trade both quotes move.  Each side's return is either a small move
``(-1)^R floor(U / sqrt(n))`` (on the tick lattice) or, with probability
``gamma / n``, a spread-proportional jump ``floor(s V / 2)``.  The target
process caps each side's move at half the spread; the auxiliary process caps
the summed spread move at ``-S`` instead, and is driven by the same draws.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal, Sequence

import numba
import numpy as np

from .core import ConfigError, RngStream, as_generator, lattice_floor
from .laws import ULaw, VLaw, lattice_floor_scalar, u_quantile, v_quantile
from .sde import SdeParams, terminal_sample

DeltaMode = Literal["exact", "fine"]
BOUND_TOL = 1e-9


@dataclass(frozen=True)
class ReturnLaw:
    beta: float
    u_law: ULaw
    v_law: VLaw

    def __post_init__(self) -> None:
        if not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")


@dataclass(frozen=True)
class ScalingScheme:
    n: int
    gamma: float
    mu: float
    delta_mode: DeltaMode = "exact"
    tick: float | None = None  # explicit lattice step, overrides delta_mode

    def __post_init__(self) -> None:
        if self.tick is not None and not self.tick > 0:
            raise ConfigError(f"tick must be positive, got {self.tick}")
        if self.n < 1:
            raise ConfigError(f"scale index must be >= 1, got {self.n}")
        if self.delta_mode not in ("exact", "fine"):
            raise ConfigError(f"unknown delta mode {self.delta_mode!r}")
        if not (0 <= self.gamma < self.n):
            raise ConfigError(f"jump probability gamma/n must lie in [0, 1), got {self.gamma}/{self.n}")
        if not self.mu > 0:
            raise ConfigError("mu must be positive")

    @property
    def sqrt_n(self) -> float:
        return math.sqrt(self.n)

    @property
    def delta(self) -> float:
        if self.tick is not None:
            return self.tick
        d = 1.0 / self.sqrt_n
        return d if self.delta_mode == "exact" else d / math.log(self.n + 1)

    @property
    def q(self) -> float:
        return self.gamma / self.n

    @property
    def mu_n(self) -> float:
        return self.n * self.mu

    def p_down(self, law: ReturnLaw) -> float:
        """``P(R = 1)``, the probability of a move toward the other quote."""
        tilt = 2.0 * law.beta / self.sqrt_n
        if tilt > 1:
            raise ConfigError(f"n = {self.n} too small for beta = {law.beta}: need 2 beta / sqrt(n) <= 1")
        return 0.5 * (1.0 + tilt)


@numba.njit(cache=True, nogil=True)
def _side_ticks(s, w_i, w_v, w_r, w_u, q, p_down, u_scale, r, xi, u, rho, c):
    """One side's uncapped return, in ticks, at spread ``s`` ticks from four
    uniforms; ``u_scale = 1 / (sqrt(n) delta)``."""
    if w_i < q:
        return lattice_floor_scalar(s * v_quantile(w_v, u, rho, c) / 2.0, 1.0)
    mag = lattice_floor_scalar(u_quantile(w_u, r, xi) * u_scale, 1.0)
    return -mag if w_r < p_down else mag


@numba.njit(cache=True, nogil=True)
def _cap(s):
    return -math.floor(s / 2.0)


@numba.njit(cache=True, nogil=True)
def _coupled_kernel(s0, m0, w, q, p_down, u_scale, r, xi, u, rho, c, bound_unit, record):
    """Coupled recursion in tick units (integers held in floats, so sums are
    exact).  ``bound_unit`` is ``2 / sqrt(n)`` expressed in ticks."""
    n_steps = w.shape[0]
    size = n_steps + 1 if record else 1
    sb = np.empty(size)
    mb = np.empty(size)
    st = np.empty(size)
    mt = np.empty(size)
    nn = np.empty(size, dtype=np.int64)
    s_bar, m_bar, s_til, m_til, jumps = s0, m0, s0, m0, 0
    sb[0], mb[0], st[0], mt[0], nn[0] = s0, m0, s0, m0, 0
    violations = 0
    max_gap = 0.0
    worst_ratio = 0.0
    for k in range(n_steps):
        da = _side_ticks(s_bar, w[k, 0], w[k, 1], w[k, 2], w[k, 3], q, p_down, u_scale, r, xi, u, rho, c)
        db = _side_ticks(s_bar, w[k, 4], w[k, 5], w[k, 6], w[k, 7], q, p_down, u_scale, r, xi, u, rho, c)
        ea = _side_ticks(s_til, w[k, 0], w[k, 1], w[k, 2], w[k, 3], q, p_down, u_scale, r, xi, u, rho, c)
        eb = _side_ticks(s_til, w[k, 4], w[k, 5], w[k, 6], w[k, 7], q, p_down, u_scale, r, xi, u, rho, c)
        cap = _cap(s_bar)
        da = max(da, cap)
        db = max(db, cap)
        s_bar += da + db
        m_bar += da - db
        m_til += ea - eb
        s_til += max(ea + eb, -s_til)
        if w[k, 0] < q:
            jumps += 1
        if w[k, 4] < q:
            jumps += 1
        gap = s_bar - s_til
        bound = ((1.0 + c) ** jumps - 1.0) * bound_unit
        if gap < 0.0 or gap > bound * (1.0 + BOUND_TOL):
            violations += 1
        if abs(gap) > max_gap:
            max_gap = abs(gap)
        if bound > 0.0 and gap / bound > worst_ratio:
            worst_ratio = gap / bound
        if record:
            sb[k + 1], mb[k + 1], st[k + 1], mt[k + 1], nn[k + 1] = s_bar, m_bar, s_til, m_til, jumps
    if not record:
        sb[0], mb[0], st[0], mt[0], nn[0] = s_bar, m_bar, s_til, m_til, jumps
    return sb, mb, st, mt, nn, violations, max_gap, worst_ratio


def _kernel_args(law: ReturnLaw, scheme: ScalingScheme):
    return (
        scheme.q, scheme.p_down(law), 1.0 / (scheme.sqrt_n * scheme.delta),
        law.u_law.r, law.u_law.xi, law.v_law.u, law.v_law.rho, law.v_law.c,
        2.0 / (scheme.sqrt_n * scheme.delta),
    )


def _to_ticks(x: float, delta: float) -> float:
    return float(round(float(lattice_floor(x, delta)) / delta))


def sample_return(
    s: float,
    law: ReturnLaw,
    scheme: ScalingScheme,
    rng,
    *,
    I: int | None = None,
    R: int | None = None,
    U: float | None = None,
    V: float | None = None,
) -> float:
    """One side's uncapped lattice return at spread ``s``.

    Any of the four ingredients can be pinned, which is handy for checking
    the bracket arithmetic by hand.
    """
    if not s >= 0:
        raise ConfigError(f"spread must be nonnegative, got {s}")
    p_down = scheme.p_down(law)
    w = as_generator(rng).random(4)
    jump = (w[0] < scheme.q) if I is None else bool(I)
    d = scheme.delta
    if jump:
        v = law.v_law.quantile(w[1]) if V is None else V
        return float(lattice_floor(s * v / 2.0, d))
    down = (w[2] < p_down) if R is None else bool(R)
    u_val = law.u_law.quantile(w[3]) if U is None else U
    mag = float(lattice_floor(u_val / scheme.sqrt_n, d))
    return -mag if down else mag


def step_pair(state: tuple[float, float], law: ReturnLaw, scheme: ScalingScheme, w: np.ndarray) -> tuple[float, float]:
    """Target-process update ``(s, m) -> (s', m')`` from eight uniforms
    (four per side)."""
    d = scheme.delta
    s, m = _to_ticks(state[0], d), round(state[1] / d)
    args = _kernel_args(law, scheme)[:-1]
    da = _side_ticks(s, w[0], w[1], w[2], w[3], *args)
    db = _side_ticks(s, w[4], w[5], w[6], w[7], *args)
    cap = _cap(s)
    da, db = max(da, cap), max(db, cap)
    return (s + da + db) * d, (m + da - db) * d


def step_auxiliary(state: tuple[float, float], law: ReturnLaw, scheme: ScalingScheme, w: np.ndarray) -> tuple[float, float]:
    """Auxiliary update from the same eight uniforms: joint cap at ``-S``, no
    cap on the mid."""
    d = scheme.delta
    s, m = _to_ticks(state[0], d), round(state[1] / d)
    args = _kernel_args(law, scheme)[:-1]
    da = _side_ticks(s, w[0], w[1], w[2], w[3], *args)
    db = _side_ticks(s, w[4], w[5], w[6], w[7], *args)
    return (s + max(da + db, -s)) * d, (m + da - db) * d


@dataclass
class CoupledPaths:
    t: np.ndarray
    s_bar: np.ndarray
    m_bar: np.ndarray
    s_tilde: np.ndarray
    m_tilde: np.ndarray
    N: np.ndarray
    violations: int
    max_gap: float
    worst_ratio: float

    def write_csv(self, path, header_lines: tuple[str, ...] = ()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "t_k", "s_bar", "m_bar", "s_tilde", "m_tilde", "N"])
            for k in range(self.t.size):
                w.writerow([k, f"{self.t[k]:.12g}", f"{self.s_bar[k]:.12g}", f"{self.m_bar[k]:.12g}",
                            f"{self.s_tilde[k]:.12g}", f"{self.m_tilde[k]:.12g}", int(self.N[k])])


def _initial_ticks(initial: tuple[float, float], scheme: ScalingScheme) -> tuple[float, float, float]:
    """Initial spread in ticks (floored onto the lattice), the mid offset and the tick."""
    if not initial[0] >= 0:
        raise ConfigError("initial spread must be nonnegative")
    d = scheme.delta
    return _to_ticks(initial[0], d), float(initial[1]), d


def _draws(g: np.random.Generator, scheme: ScalingScheme, horizon: float) -> np.ndarray:
    n_steps = int(g.poisson(2.0 * scheme.mu_n * horizon))
    return g.random((n_steps, 8))


def simulate_coupled(
    initial: tuple[float, float],
    law: ReturnLaw,
    scheme: ScalingScheme,
    horizon: float,
    rng: RngStream,
) -> CoupledPaths:
    """Full coupled path on ``[0, horizon]``; trade times are a Poisson
    process of rate ``2 n mu``."""
    s0, m0, d = _initial_ticks(initial, scheme)
    g = rng.generator()
    w = _draws(g, scheme, horizon)
    times = np.concatenate(([0.0], np.sort(g.random(w.shape[0]) * horizon)))
    sb, mb, st, mt, nn, viol, gap, ratio = _coupled_kernel(s0, 0.0, w, *_kernel_args(law, scheme), True)
    return CoupledPaths(times, sb * d, m0 + mb * d, st * d, m0 + mt * d, nn, viol, gap * d, ratio)


@dataclass
class TerminalSample:
    s_bar: np.ndarray
    m_bar: np.ndarray
    s_tilde: np.ndarray
    m_tilde: np.ndarray
    N: np.ndarray
    violations: np.ndarray
    max_gap: np.ndarray
    worst_ratio: np.ndarray
    steps: np.ndarray


def coupled_terminal(
    initial: tuple[float, float],
    law: ReturnLaw,
    scheme: ScalingScheme,
    horizon: float,
    replications: int,
    seed: int,
    threads: int = 1,
) -> TerminalSample:
    """Terminal values over replications; replication ``r`` uses stream ``r``."""
    s0, m0, d = _initial_ticks(initial, scheme)
    args = _kernel_args(law, scheme)

    def one(r: int):
        w = _draws(RngStream(seed, r).generator(), scheme, horizon)
        sb, mb, st, mt, nn, viol, gap, ratio = _coupled_kernel(s0, 0.0, w, *args, False)
        return sb[0] * d, m0 + mb[0] * d, st[0] * d, m0 + mt[0] * d, nn[0], viol, gap * d, ratio, w.shape[0]

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            rows = list(ex.map(one, range(replications)))
    else:
        rows = [one(r) for r in range(replications)]
    cols = list(zip(*rows))
    return TerminalSample(
        *(np.array(c, dtype=float) for c in cols[:4]),
        np.array(cols[4], dtype=np.int64),
        np.array(cols[5], dtype=np.int64),
        np.array(cols[6], dtype=float),
        np.array(cols[7], dtype=float),
        np.array(cols[8], dtype=np.int64),
    )


def matched_sde_params(law: ReturnLaw, scheme: ScalingScheme) -> SdeParams:
    """Limit parameters read off the recursion's generator.

    Both sides move at every trade and trades arrive at rate ``2 n mu``, so
    per unit time the spread drifts by ``-8 mu beta E[U]``, each side's
    diffusive part has variance rate ``2 mu E[U^2]``, and each side jumps at
    rate ``2 mu gamma``.
    """
    mu = scheme.mu
    return SdeParams(
        eta=8.0 * mu * law.beta * law.u_law.mean,
        sigma2=2.0 * mu * law.u_law.second_moment,
        jump_intensity=2.0 * mu * scheme.gamma,
        v_law=law.v_law,
        variance_convention="generator_matched",
    )


@dataclass
class ConvergenceReport:
    ns: list[int]
    ks_s: list[float]
    ks_m: list[float]
    gap_p95: list[float]
    mean_jumps: list[float]
    mean_jumps_se: list[float]
    jump_rate_limit: float


def convergence_probe(
    law: ReturnLaw,
    gamma: float,
    mu: float,
    ns: Sequence[int],
    replications: int,
    seed: int,
    initial: tuple[float, float] = (1.0, 0.0),
    horizon: float = 1.0,
    delta_mode: DeltaMode = "fine",
    sde_dt: float = 1e-2,
    threads: int = 1,
    reference_factor: int = 4,
) -> ConvergenceReport:
    """KS distances between the recursion's time-``horizon`` marginals and
    the limit diffusion's, for each scale in ``ns``.

    The reference sample (``reference_factor`` times larger) uses the exact
    bridge reflection, so its own discretisation error does not mask the
    recursion's.
    """
    from scipy.stats import ks_2samp

    params = matched_sde_params(law, ScalingScheme(max(ns), gamma, mu, delta_mode))
    # the reference sample uses streams disjoint from the recursion's
    ref_s, ref_m = terminal_sample(
        initial, params, horizon, reference_factor * replications, seed, sde_dt, first_stream=1 << 32, reflection="bridge"
    )
    # N counts both channels
    rep = ConvergenceReport([], [], [], [], [], [], 2.0 * params.jump_intensity * horizon)
    for n in ns:
        scheme = ScalingScheme(n, gamma, mu, delta_mode)
        ts = coupled_terminal(initial, law, scheme, horizon, replications, seed, threads)
        rep.ns.append(int(n))
        rep.ks_s.append(float(ks_2samp(ts.s_bar, ref_s).statistic))
        rep.ks_m.append(float(ks_2samp(ts.m_bar, ref_m).statistic))
        rep.gap_p95.append(float(np.quantile(ts.max_gap, 0.95)))
        rep.mean_jumps.append(float(ts.N.mean()))
        rep.mean_jumps_se.append(float(ts.N.std(ddof=1) / math.sqrt(ts.N.size)))
    return rep
