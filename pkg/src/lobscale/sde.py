"""Reflected jump diffusion for the spread ``s`` and twice the mid ``m``.

Between jumps ``s`` follows drift ``-eta`` plus ``dW_a + dW_b`` and is kept
at or above zero by truncation, with the truncated amount accumulated in
``L``; ``m`` moves by ``dW_a - dW_b``.  Two independent compound Poisson
channels multiply the spread by ``1 + V/2``: channel 1 (an ask move) shifts
``m`` up by ``s V / 2`` and channel 2 (a bid move) shifts it down.

Since ``W_a + W_b`` and ``W_a - W_b`` are independent with variance rate
``2 sigma2`` each, the kernel draws them directly.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Literal

import numba
import numpy as np

from .core import ConfigError, RngStream, as_generator
from .laws import ULaw, VLaw

VarianceConvention = Literal["theorem_stated", "table_matched"]
Reflection = Literal["truncate", "bridge"]

NORMAL_CHUNK = 1 << 18


@dataclass(frozen=True)
class SdeParams:
    eta: float
    sigma2: float
    jump_intensity: float
    v_law: VLaw
    variance_convention: str | None = None

    def __post_init__(self) -> None:
        for name in ("eta", "sigma2", "jump_intensity"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ConfigError(f"{name} must be finite and nonnegative, got {v}")

    @property
    def sigma2_total(self) -> float:
        """Variance rate of the spread's diffusion part (two Brownian motions)."""
        return 2.0 * self.sigma2

    def stationary_mean_no_jumps(self) -> float:
        """Mean of the exponential stationary law of the jump-free spread."""
        if self.eta <= 0:
            raise ConfigError("no stationary law without a positive drift")
        return self.sigma2_total / (2.0 * self.eta)


def derive_sde_params(
    mu: float,
    beta: float,
    u_law: ULaw,
    gamma: float,
    v_law: VLaw,
    variance_convention: VarianceConvention = "table_matched",
) -> SdeParams:
    """Drift ``2 mu beta E[U]``, per-motion variance ``mu E[U^2]`` (or half of
    it under ``table_matched``) and jump intensity ``gamma mu`` per channel."""
    if not (mu >= 0 and beta >= 0 and gamma >= 0):
        raise ConfigError("mu, beta and gamma must be nonnegative")
    eta = 2.0 * mu * beta * u_law.mean
    if variance_convention == "theorem_stated":
        sigma2 = mu * u_law.second_moment
    elif variance_convention == "table_matched":
        sigma2 = mu * u_law.second_moment / 2.0
    else:
        raise ConfigError(f"unknown variance convention {variance_convention!r}")
    return SdeParams(eta, sigma2, gamma * mu, v_law, variance_convention)


@dataclass
class SdePath:
    """Samples on a regular grid plus a log of every jump (post-jump state)."""

    t: np.ndarray
    s: np.ndarray
    m: np.ndarray
    L: np.ndarray
    jump_t: np.ndarray
    jump_channel: np.ndarray
    jump_size: np.ndarray
    jump_s_before: np.ndarray
    jump_s: np.ndarray
    jump_m: np.ndarray
    jump_L: np.ndarray
    sample_dt: float

    def write_csv(self, path, header_lines: tuple[str, ...] = ()) -> None:
        """Grid rows (``jump_flag`` 0) merged in time order with jump rows."""
        rows = [(t, 0, s, m, L, 0, 0.0, 0) for t, s, m, L in zip(self.t, self.s, self.m, self.L)]
        rows += [
            (t, 1, s, m, L, 1, v, ch)
            for t, s, m, L, v, ch in zip(self.jump_t, self.jump_s, self.jump_m, self.jump_L, self.jump_size, self.jump_channel)
        ]
        rows.sort(key=lambda r: (r[0], r[1]))
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "s", "m", "L", "jump_flag", "jump_size", "jump_channel"])
            for t, _, s, m, L, flag, v, ch in rows:
                w.writerow([f"{t:.12g}", f"{s:.12g}", f"{m:.12g}", f"{L:.12g}", flag, f"{v:.12g}", int(ch)])


@numba.njit(cache=True, nogil=True)
def _advance(s, m, L, h, eta, sd_rate, z, p, bridge):
    sd = sd_rate * math.sqrt(h)
    x = s - eta * h + sd * z[p]
    if bridge:
        # minimum of the free path over the step, given both end points
        w = 0.5 * math.erfc(-z[p + 2] / math.sqrt(2.0))
        if w <= 0.0:
            w = 5e-324
        d = x - s
        low = 0.5 * (s + x - math.sqrt(d * d - 2.0 * sd * sd * math.log(w)))
        if low < 0.0:
            L -= low
            x -= low
    elif x < 0.0:
        L -= x
        x = 0.0
    return x, m + sd * z[p + 1], L


@numba.njit(cache=True, nogil=True)
def _sde_kernel(
    g, g_end, dt, horizon, rec_every, s, m, L, eta, sd_rate,
    z, p, jt, jch, jv, jp, js_before, js, jm, jl, rs, rm, rl, ri, bridge,
):
    """Run grid steps ``g .. g_end-1``; stops early when the normal buffer
    cannot cover the next step.  Returns the updated cursors and state."""
    n_jumps = jt.size
    stride = 3 if bridge else 2
    while g < g_end:
        t0 = g * dt
        t1 = min((g + 1) * dt, horizon)
        k = jp
        while k < n_jumps and jt[k] <= t1:
            k += 1
        if p + stride * (k - jp + 1) > z.size:
            break
        t = t0
        while jp < k:
            h = jt[jp] - t
            if h > 0.0:
                s, m, L = _advance(s, m, L, h, eta, sd_rate, z, p, bridge)
            p += stride
            t = jt[jp]
            js_before[jp] = s
            half = 0.5 * s * jv[jp]
            s = s + half
            if jch[jp] == 1:
                m += half
            else:
                m -= half
            js[jp] = s
            jm[jp] = m
            jl[jp] = L
            jp += 1
        h = t1 - t
        if h > 0.0:
            s, m, L = _advance(s, m, L, h, eta, sd_rate, z, p, bridge)
        p += stride
        g += 1
        if g % rec_every == 0:
            rs[ri] = s
            rm[ri] = m
            rl[ri] = L
            ri += 1
    return g, s, m, L, p, jp, ri


def _grid(horizon: float, dt: float, sample_dt: float) -> tuple[int, int]:
    if not (horizon > 0 and dt > 0 and sample_dt > 0):
        raise ConfigError("horizon, dt and sample_dt must be positive")
    rec_every = round(sample_dt / dt)
    if rec_every < 1 or abs(rec_every * dt - sample_dt) > 1e-9 * sample_dt:
        raise ConfigError(f"sample_dt {sample_dt} must be a multiple of dt {dt}")
    n_samples = round(horizon / sample_dt)
    if abs(n_samples * sample_dt - horizon) > 1e-9 * horizon:
        raise ConfigError(f"horizon {horizon} must be a multiple of sample_dt {sample_dt}")
    return rec_every, n_samples * rec_every


def simulate_sde(
    initial: tuple[float, float],
    params: SdeParams,
    horizon: float,
    dt: float = 1e-3,
    rng: RngStream | np.random.Generator | int = 0,
    sample_dt: float = 0.1,
    reflection: Reflection = "truncate",
) -> SdePath:
    """Euler scheme with exact jump times; the time grid is split at every jump.

    ``reflection="truncate"`` clips each step at zero.  ``"bridge"`` instead
    draws the minimum of the free path over the step given its end points
    and pushes the path up by its negative part, which is exact for the
    constant-coefficient motion between jumps (one extra normal per step).
    """
    if reflection not in ("truncate", "bridge"):
        raise ConfigError(f"unknown reflection scheme {reflection!r}")
    s0, m0 = float(initial[0]), float(initial[1])
    if not s0 >= 0:
        raise ConfigError(f"initial spread must be nonnegative, got {s0}")
    rec_every, n_steps = _grid(horizon, dt, sample_dt)
    g = as_generator(rng)

    # jump skeleton first, so it does not depend on how many normals are used
    times, chans = [], []
    for ch in (1, 2):
        k = int(g.poisson(params.jump_intensity * horizon)) if params.jump_intensity > 0 else 0
        times.append(np.sort(g.random(k) * horizon))
        chans.append(np.full(k, ch, dtype=np.int64))
    jt = np.concatenate(times)
    order = np.argsort(jt, kind="stable")
    jt = np.ascontiguousarray(jt[order])
    jch = np.ascontiguousarray(np.concatenate(chans)[order])
    jv = params.v_law.quantile(g.random(jt.size)) if jt.size else np.zeros(0)
    jv = np.ascontiguousarray(np.asarray(jv, dtype=float).reshape(-1))
    nj = jt.size
    js_before, js, jm, jl = (np.empty(nj) for _ in range(4))

    n_rec = n_steps // rec_every
    rs, rm, rl = np.empty(n_rec + 1), np.empty(n_rec + 1), np.empty(n_rec + 1)
    rs[0], rm[0], rl[0] = s0, m0, 0.0
    sd_rate = math.sqrt(2.0 * params.sigma2)

    # buffer size depends only on the inputs, so the normal stream is reproducible
    chunk = min(NORMAL_CHUNK, 3 * (n_steps + nj + 1))
    state = (0, s0, m0, 0.0)
    z = np.empty(0)
    p, jp, ri = 0, 0, 1
    while state[0] < n_steps:
        z = np.concatenate((z[p:], g.standard_normal(chunk)))
        p = 0
        gi, s, m, L, p, jp, ri = _sde_kernel(
            state[0], n_steps, dt, horizon, rec_every, state[1], state[2], state[3],
            params.eta, sd_rate, z, p, jt, jch, jv, jp, js_before, js, jm, jl, rs, rm, rl, ri,
            reflection == "bridge",
        )
        state = (gi, s, m, L)
    t = np.arange(n_rec + 1) * sample_dt
    return SdePath(t, rs, rm, rl, jt, jch, jv, js_before, js, jm, jl, sample_dt)


def terminal_sample(
    initial: tuple[float, float],
    params: SdeParams,
    horizon: float,
    replications: int,
    seed: int,
    dt: float = 1e-3,
    first_stream: int = 0,
    reflection: Reflection = "truncate",
) -> tuple[np.ndarray, np.ndarray]:
    """``(s(horizon), m(horizon))`` over independent streams ``first_stream + r``."""
    s = np.empty(replications)
    m = np.empty(replications)
    for r in range(replications):
        path = simulate_sde(initial, params, horizon, dt, RngStream(seed, first_stream + r), horizon, reflection)
        s[r], m[r] = path.s[-1], path.m[-1]
    return s, m
