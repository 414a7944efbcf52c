"""Ensemble-level statistics: velocity, 1-D and higher-dimensional CLT
checks, recurrence/transience diagnostics, and gap-moment estimation.

Every pass/fail threshold is a parameter with a default and is echoed in
the report, so nothing is silently hardcoded.  Walks that ever left the
half-window (flagged by the walk module) are dropped from CLT statistics
and counted, since the torus contaminates their displacement law.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import kolmogorov, ndtr

from . import env as envmod
from . import network2d
from .corrector import assemble_corrector, martingale_check
from .env import LatticeWindow, ProcessSpec
from .heatkernel import (diagnostics, green_tail_slope, propagate, site_index)
from .walk import TransitionRule, run_annealed, run_ensemble_quenched

KS_LEVEL = 0.01


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov

def ks_statistic(samples: np.ndarray, cdf) -> float:
    """One-sample KS statistic against a continuous cdf."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n == 0:
        raise ValueError("empty sample")
    F = cdf(x)
    up = np.arange(1, n + 1) / n - F
    down = F - np.arange(0, n) / n
    return float(max(up.max(), down.max()))


def ks_pvalue(stat: float, n: int) -> float:
    """Asymptotic p-value with the small-sample correction factor."""
    s = np.sqrt(n)
    return float(kolmogorov((s + 0.12 + 0.11 / s) * stat))


def normal_cdf(variance: float):
    sd = np.sqrt(variance)
    return lambda x: ndtr(x / sd)


# ---------------------------------------------------------------------------
# velocity

@dataclass
class VelocityReport:
    mean: np.ndarray
    stderr: np.ndarray
    band_sigmas: float
    passes: bool

    def as_json(self) -> dict:
        return {"mean_velocity": self.mean.tolist(),
                "stderr": self.stderr.tolist(),
                "band_sigmas": self.band_sigmas,
                "passes": self.passes}


def velocity_test(final: np.ndarray, horizon: int,
                  band_sigmas: float = 3.0) -> VelocityReport:
    """Per-axis mean of X_n / n with a +-band_sigmas * stderr zero band."""
    v = final / horizon
    mean = v.mean(axis=0)
    stderr = v.std(axis=0, ddof=1) / np.sqrt(len(v))
    passes = bool((np.abs(mean) <= band_sigmas * stderr).all())
    return VelocityReport(mean, stderr, band_sigmas, passes)


# ---------------------------------------------------------------------------
# gap means and moments

def analytic_gap_mean(spec: ProcessSpec) -> float | None:
    if spec.variant == "bernoulli":
        return 1.0 / spec.param("p")
    return None


def birkhoff_gap_mean(env) -> float:
    """Average forward axis-0 gap over occupied sites of one environment."""
    fwd, _ = envmod.gap_tables(env)
    return float(fwd[0][env.occupancy].mean())


@dataclass
class MomentReport:
    q: float
    estimate: float
    stderr: float
    hill_index: float     # tail-index estimate from the top order statistics
    tail_fraction: float
    diverging: bool       # hill index <= q suggests E[f^q] is not finite

    def as_json(self) -> dict:
        return self.__dict__.copy()


def moment_from_samples(gaps: np.ndarray, q: float,
                        tail_fraction: float = 0.01) -> MomentReport:
    g = np.asarray(gaps, dtype=float)
    vals = g ** q
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(len(vals)))
    x = np.sort(g)
    k = max(10, int(len(x) * tail_fraction))
    k = min(k, len(x) - 1)
    top = x[-k:]
    thresh = x[-k - 1]
    if thresh < 1:
        thresh = 1.0
    logs = np.log(np.maximum(top, thresh) / thresh)
    m = float(logs.mean())
    hill = np.inf if m == 0 else 1.0 / m
    return MomentReport(q, est, se, float(hill), k / len(x), bool(hill <= q))


def moment_estimate(spec: ProcessSpec, window: LatticeWindow, q: float,
                    samples: int, seed: int) -> MomentReport:
    if q <= 0:
        raise ValueError("q must be positive")
    gaps = network2d.gap_samples(spec, window, samples, seed)
    return moment_from_samples(gaps, q)


# ---------------------------------------------------------------------------
# CLT reports

@dataclass
class CltReport:
    dimension: int
    horizon: int
    walkers: int
    excluded: int                 # window-limited walks dropped
    target: np.ndarray            # per-axis target variance
    target_provenance: str
    empirical: np.ndarray         # per-axis empirical variance of the scaled law
    covariance: np.ndarray        # full empirical covariance matrix
    ks_stats: np.ndarray
    ks_pvalues: np.ndarray
    level: float
    axis_level: float             # Bonferroni-corrected per-axis level
    passes: bool
    notes: dict = field(default_factory=dict)

    def as_json(self) -> dict:
        out = {k: (v.tolist() if isinstance(v, np.ndarray) else v)
               for k, v in self.__dict__.items()}
        return out

    def to_json(self) -> str:
        return json.dumps(self.as_json(), indent=2)


def _ks_report(scaled: np.ndarray, target: np.ndarray, level: float):
    d = scaled.shape[1]
    axis_level = level / d
    stats = np.zeros(d)
    pvals = np.zeros(d)
    for a in range(d):
        stats[a] = ks_statistic(scaled[:, a], normal_cdf(target[a]))
        pvals[a] = ks_pvalue(stats[a], scaled.shape[0])
    return stats, pvals, axis_level, bool((pvals > axis_level).all())


def clt_1d(spec: ProcessSpec, window: LatticeWindow, horizon: int,
           walkers: int, seed: int, rule: TransitionRule = TransitionRule(),
           level: float = KS_LEVEL, envs: int | None = None) -> CltReport:
    """Scaled endpoint law against N(0, squared mean gap), d = 1."""
    if window.d != 1:
        raise ValueError("clt_1d needs a one-dimensional window")
    if envs is None:
        # cap stacked step tables near 256 MB
        per_env = window.volume * 2 * (4 + 4 + 8)
        envs = max(1, min(walkers, (256 << 20) // per_env))
    ens = run_annealed(spec, window, rule, horizon, walkers, seed, envs=envs)
    wl = ens.window_limited
    finals = ens.final[~wl, 0]
    scaled = (finals / np.sqrt(horizon))[:, None]
    analytic = analytic_gap_mean(spec)
    probe = envmod.sample(spec, window, seed, condition_on_origin=True)
    birkhoff = birkhoff_gap_mean(probe)
    gap_mean = analytic if analytic is not None else birkhoff
    provenance = "analytic" if analytic is not None else "birkhoff"
    target = np.array([gap_mean ** 2])
    stats, pvals, axis_level, ok = _ks_report(scaled, target, level)
    notes = {"gap_mean": gap_mean, "gap_mean_birkhoff": birkhoff, "envs": envs}
    if analytic is not None:
        notes["estimator_agreement"] = abs(birkhoff - analytic) / analytic
    emp = scaled.var(axis=0, ddof=1)
    return CltReport(1, horizon, walkers, int(wl.sum()), target, provenance,
                     emp, np.atleast_2d(np.cov(scaled.T)), stats, pvals,
                     level, axis_level, ok, notes)


def clt_hd(spec: ProcessSpec, window: LatticeWindow, horizon: int,
           walkers: int, seed: int, rule: TransitionRule = TransitionRule(),
           use_corrector: bool = True, level: float = KS_LEVEL,
           eps0: float = 0.5, moment_samples: int = 20000,
           corrector_tol: float = 1e-9) -> CltReport:
    """Quenched endpoint CLT for d >= 2 against the martingale covariance D.

    With use_corrector the harmonically embedded endpoints M_n are tested;
    the embedding is periodic, so wrapped walks stay exact and nothing is
    excluded.  Without it, raw X_n endpoints are tested against the same D
    and window-limited walks are dropped.
    """
    d = window.d
    if d < 2:
        raise ValueError("clt_hd needs dimension >= 2")
    mom = moment_estimate(spec, window, 2.0 + eps0, moment_samples, seed)
    env = envmod.sample(spec, window, seed, condition_on_origin=True)
    fld = assemble_corrector(env, tol=corrector_tol)
    ens = run_ensemble_quenched(env, rule, horizon, walkers, seed)
    ms = martingale_check(fld, ens.final, horizon)
    target = np.diag(ms.D).copy()
    if use_corrector:
        scaled = ms.finals / np.sqrt(horizon)
        excluded = 0
    else:
        wl = ens.window_limited
        scaled = ens.final[~wl] / np.sqrt(horizon)
        excluded = int(wl.sum())
    stats, pvals, axis_level, ok = _ks_report(scaled, target, level)
    notes = {"use_corrector": use_corrector,
             "moment_check": mom.as_json(),
             "D": ms.D.tolist(),
             "D_trajectory": ms.D_traj.tolist(),
             "harmonicity_residual": ms.harmonicity}
    if mom.diverging:
        notes["warning"] = f"tail index {mom.hill_index:.2f} <= q={2 + eps0}"
    emp = scaled.var(axis=0, ddof=1)
    return CltReport(d, horizon, len(scaled), excluded, target,
                     "martingale increment covariance", emp,
                     np.atleast_2d(np.cov(scaled.T)), stats, pvals,
                     level, axis_level, ok, notes)


# ---------------------------------------------------------------------------
# recurrence / transience diagnostics

@dataclass
class RecurrenceReport:
    dimension: int
    verdict: str       # consistent-with-recurrent / consistent-with-transient / inconclusive
    details: dict

    def as_json(self) -> dict:
        return {"dimension": self.dimension, "verdict": self.verdict,
                "details": self.details}

    def to_json(self) -> str:
        return json.dumps(self.as_json(), indent=2)


def return_growth_exponent(spec: ProcessSpec, window: LatticeWindow,
                           horizon: int, walkers: int, seed: int,
                           rule: TransitionRule = TransitionRule(),
                           envs: int | None = None):
    """Fit E[origin visits by n] ~ n^a over three horizon doublings."""
    horizons = [horizon // 4, horizon // 2, horizon]
    means = []
    for h in horizons:
        ens = run_annealed(spec, window, rule, h, walkers, seed, envs=envs)
        means.append(float(ens.returns.mean()))
    a = float(np.polyfit(np.log(horizons), np.log(means), 1)[0])
    return a, horizons, means


def recurrence_report(spec: ProcessSpec, window: LatticeWindow, horizon: int,
                      walkers: int, seed: int,
                      rule: TransitionRule = TransitionRule(),
                      exponent_band: tuple = (0.45, 0.55),
                      green_slope_tol: float = 1e-4,
                      envs: int | None = None) -> RecurrenceReport:
    d = window.d
    if d == 1:
        a, horizons, means = return_growth_exponent(spec, window, horizon,
                                                    walkers, seed, rule, envs)
        ok = exponent_band[0] <= a <= exponent_band[1]
        verdict = "consistent-with-recurrent" if ok and means[-1] > means[0] \
            else "inconclusive"
        return RecurrenceReport(1, verdict, {
            "return_exponent": a, "exponent_band": list(exponent_band),
            "horizons": horizons, "mean_returns": means})
    if d == 2:
        gaps = network2d.gap_samples(spec, window, 100000, seed)
        tail = network2d.cauchy_tail_from_samples(gaps)
        env = envmod.sample(spec, window, seed, condition_on_origin=True)
        net = network2d.build_network(env)
        n_max = min(window.sides) // 2 - 1
        cuts = network2d.cutsets(net, min(n_max, 64))
        verdict = ("consistent-with-recurrent" if tail.passes
                   else "inconclusive")
        return RecurrenceReport(2, verdict, {
            "cauchy_tail_passes": bool(tail.passes),
            "cauchy_tail_C": tail.fitted_C,
            "cauchy_tail_slope": tail.growth_slope,
            "nash_williams_partial_sum": float(cuts.nash_williams_partial[-1]),
            "nash_williams_log_coeff": cuts.log_growth_coefficient()})
    env = envmod.sample(spec, window, seed, condition_on_origin=True)
    si = site_index(env)
    states = propagate(env, rule, horizon, si)
    diag = diagnostics(states, si)
    slope = green_tail_slope(diag.green_partial)
    verdict = ("consistent-with-transient" if slope <= green_slope_tol
               else "inconclusive")
    return RecurrenceReport(d, verdict, {
        "green_partial_final": float(diag.green_partial[-1]),
        "green_tail_slope": slope, "slope_tol": green_slope_tol,
        "horizon": horizon})
