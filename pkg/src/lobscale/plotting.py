"""Figures for the experiment reports (Agg backend, PNG output)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .theta import survival_power_law_pmf, theta_closed_form  # noqa: E402


def _save(fig, path, meta=None) -> None:
    fig.tight_layout()
    info = {"Software": None}
    if meta:
        info["Description"] = " ".join(f"{k}={v}" for k, v in meta.items())
    fig.savefig(path, dpi=120, metadata=info)
    plt.close(fig)


def table_comparison_figure(path, labels, values, errors, reference, ylabel: str, meta=None) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    x = np.arange(len(labels))
    ax.errorbar(x - 0.08, values, yerr=1.96 * np.nan_to_num(np.asarray(errors, float)), fmt="o", label="simulated")
    ax.plot(x + 0.08, reference, "s", mfc="none", label="reference")
    ax.set_xticks(x, labels)
    ax.set_ylabel(ylabel)
    ax.legend()
    _save(fig, path, meta)


def spread_vs_vol_figure(path, sigma1, mean, ref_sigma1, ref_mean, meta=None) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.loglog(sigma1, mean, "o", label="simulated")
    ax.loglog(ref_sigma1, ref_mean, "s", mfc="none", label="reference")
    lo = min(np.min(sigma1), np.min(ref_sigma1))
    hi = max(np.max(sigma1), np.max(ref_sigma1))
    xs = np.array([lo, hi])
    ax.loglog(xs, 2 * xs, "k:", lw=1, label="E[s] = 2 sigma1")
    ax.set_xlabel("sigma1")
    ax.set_ylabel("E[s]")
    ax.legend()
    _save(fig, path, meta)


def log_survival_figure(path, grid, log_survival, mean: float, s, meta=None) -> None:
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    a1.plot(grid, log_survival, label="empirical")
    a1.plot(grid, -np.asarray(grid) / mean, "--", label="exponential, same mean")
    a1.set_xlabel("s")
    a1.set_ylabel("log P(S > s)")
    a1.legend()
    a2.hist(s, bins=200, density=True, log=True)
    a2.set_xlabel("s")
    _save(fig, path, meta)


def clustering_figure(path, t, sigma_bar, rng, meta=None) -> None:
    fig, axes = plt.subplots(2, 1, figsize=(8, 4.5), sharex=True, sharey=True)
    axes[0].plot(t, sigma_bar, lw=0.6)
    axes[0].set_ylabel("window std")
    axes[1].plot(t, rng.permutation(sigma_bar), lw=0.6, color="gray")
    axes[1].set_ylabel("shuffled")
    axes[1].set_xlabel("t")
    _save(fig, path, meta)


def tv_sweep_figure(path, xis, tvs, meta=None) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.loglog(xis, tvs, "o-")
    ax.set_xlabel("speed factor")
    ax.set_ylabel("total variation")
    _save(fig, path, meta)


def ks_sweep_figure(path, ns, ks_s, ks_m, meta=None) -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.loglog(ns, ks_s, "o-", label="spread")
    ax.loglog(ns, ks_m, "s-", label="mid")
    ax.set_xlabel("n")
    ax.set_ylabel("KS distance")
    ax.legend()
    _save(fig, path, meta)


def theta_tail_figure(path, vs, c_ps, top: int, meta=None) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    for v in vs:
        p = survival_power_law_pmf(v, top)
        for c in c_ps:
            th = theta_closed_form(p, c)
            k = th.ticks[:-1]
            sel = (k > 0) & (th.value[:-1] > 0)
            ax.loglog(k[sel], th.value[:-1][sel], label=f"v={v}, c={c}")
    ax.set_xlabel("tick")
    ax.set_ylabel("survival")
    ax.legend(fontsize=8)
    _save(fig, path, meta)
