"""Exact propagation of the quenched n-step law and its diagnostics.

All quantities here are deterministic: the law p^n(0,.) is pushed through
the transition kernel step by step, and the distance/entropy series and
the discrete Gauss-Green identity are evaluated to round-off, not sampled.
Distances use the torus-minimal representative of each site relative to
the origin, so the series are trusted only while the walk's mass stays
well inside the window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import env as envmod
from .env import Environment
from .walk import TransitionRule, build_step_table


class MassDriftError(Exception):
    """Propagated mass left the unit-total tolerance."""


class IdentityViolationError(Exception):
    """An exact algebraic identity exceeded its tolerance."""


@dataclass
class SiteIndex:
    """Occupied-site indexing shared by propagation and the corrector."""

    env: Environment
    flat: np.ndarray       # (S,) flat window indices of occupied sites
    row_of: np.ndarray     # (volume,) flat -> row, -1 for unoccupied
    coords: np.ndarray     # (S, d) centered integer representatives
    origin_row: int
    nbr_rows: np.ndarray   # (S, 2d) row index of each coordinate neighbor
    disp: np.ndarray       # (S, 2d) signed gap along the direction's axis


def site_index(env: Environment, rule: TransitionRule = TransitionRule()) -> SiteIndex:
    occ = env.occupancy
    flat = np.flatnonzero(occ.ravel())
    vol = env.window.volume
    row_of = np.full(vol, -1, dtype=np.int64)
    row_of[flat] = np.arange(len(flat))
    sides = np.array(env.window.sides)
    coords = np.array(np.unravel_index(flat, env.window.sides)).T
    half = sides - sides // 2
    coords = np.where(coords >= half[None, :], coords - sides[None, :], coords)
    table = build_step_table(env, rule)
    nbr_rows = row_of[table.nbr[flat]]
    sign = np.tile([1, -1], env.d)[None, :]
    disp = table.gaplen[flat] * sign
    origin_flat = 0
    origin_row = int(row_of[origin_flat])
    if origin_row < 0:
        raise ValueError("origin is not occupied")
    return SiteIndex(env, flat, row_of, coords.astype(np.int64), origin_row,
                     nbr_rows.astype(np.int64), disp.astype(np.int64))


def transition_matrix(si: SiteIndex, rule: TransitionRule = TransitionRule()) -> sp.csr_matrix:
    """Sparse kernel T with T[v, u] = one-step probability from v to u."""
    S, twod = si.nbr_rows.shape
    rows = np.repeat(np.arange(S), twod)
    cols = si.nbr_rows.ravel()
    if rule.alpha == 0.0:
        probs = np.full(S * twod, 1.0 / twod)
    else:
        w = np.abs(si.disp).astype(np.float64) ** rule.alpha
        w /= w.sum(axis=1, keepdims=True)
        probs = w.ravel()
    return sp.csr_matrix((probs, (rows, cols)), shape=(S, S))


@dataclass
class HeatKernelState:
    n: int
    mass: np.ndarray  # (S,) probability over occupied sites

    def p00(self, si: SiteIndex) -> float:
        return float(self.mass[si.origin_row])


def propagate(env: Environment, rule: TransitionRule, horizon: int,
              si: SiteIndex | None = None, tol: float = 1e-10) -> list[HeatKernelState]:
    """States p^0 .. p^N from a unit mass at the origin."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if si is None:
        si = site_index(env, rule)
    T = transition_matrix(si, rule)
    Tt = T.T.tocsr()
    mass = np.zeros(T.shape[0])
    mass[si.origin_row] = 1.0
    states = [HeatKernelState(0, mass)]
    for n in range(1, horizon + 1):
        mass = Tt @ mass
        total = mass.sum()
        if abs(total - 1.0) > tol:
            raise MassDriftError(f"mass {total!r} at step {n} drifted beyond {tol}")
        states.append(HeatKernelState(n, mass))
    return states


def _g(states, n):
    # averaged two-step mass at step n >= 1
    return 0.5 * (states[n].mass + states[n - 1].mass)


def _entropy(g: np.ndarray) -> float:
    nz = g[g > 0]
    return float(-(nz * np.log(nz)).sum())


@dataclass
class DiagnosticSeries:
    n: np.ndarray
    p00: np.ndarray
    M: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    gauss_green_residual: np.ndarray
    green_partial: np.ndarray
    K00: float     # sup of n^{d/2} p^n(0,0)
    Kmax: float    # sup of n^{d/2} max_y p^n(0,y)
    entropy_bound_ok: bool

    def to_csv(self) -> str:
        lines = ["n,p00,M,Q,R,gauss_green_residual,green_partial"]
        for i in range(len(self.n)):
            lines.append(f"{self.n[i]},{self.p00[i]:.17g},{self.M[i]:.17g},"
                         f"{self.Q[i]:.17g},{self.R[i]:.17g},"
                         f"{self.gauss_green_residual[i]:.3g},"
                         f"{self.green_partial[i]:.17g}")
        return "\n".join(lines) + "\n"


def gauss_green_residual(si: SiteIndex, g_n: np.ndarray, m_n: float, m_n1: float) -> float:
    """|M(n+1) - M(n) + (1/4d) sum over directed neighbor pairs of
    (|y| - |x|)(g_n(y) - g_n(x))| -- exact algebraic identity, any site norm."""
    norm = np.linalg.norm(si.coords, axis=1)
    twod = si.nbr_rows.shape[1]
    ny = norm[si.nbr_rows]           # (S, 2d)
    gy = g_n[si.nbr_rows]
    edge_sum = ((ny - norm[:, None]) * (gy - g_n[:, None])).sum()
    return abs(m_n1 - m_n + edge_sum / (2 * twod))


def diagnostics(states: list[HeatKernelState], si: SiteIndex,
                gg_tol: float = 1e-9) -> DiagnosticSeries:
    d = si.env.d
    N = len(states) - 1
    norm = np.linalg.norm(si.coords, axis=1)
    n_arr = np.arange(N + 1)
    p00 = np.array([s.p00(si) for s in states])
    M = np.zeros(N + 1)
    Q = np.zeros(N + 1)
    for n in range(1, N + 1):
        g = _g(states, n)
        M[n] = float((norm * g).sum())
        Q[n] = _entropy(g)
    ns = n_arr[1:]
    K00 = float((ns ** (d / 2) * p00[1:]).max())
    maxmass = np.array([float(s.mass.max()) for s in states])
    Kmax = float((ns ** (d / 2) * maxmass[1:]).max())
    c1 = np.log(Kmax)
    R = np.zeros(N + 1)
    ok = True
    for n in range(2, N + 1):
        R[n] = (Q[n] - (d / 2) * np.log(n - 1) + c1) / d
        if Q[n] < (d / 2) * np.log(n - 1) - c1 - 1e-12:
            ok = False
    gg = np.zeros(N + 1)
    for n in range(1, N):
        gg[n] = gauss_green_residual(si, _g(states, n), M[n], M[n + 1])
        if gg[n] > gg_tol:
            raise IdentityViolationError(
                f"Gauss-Green residual {gg[n]:.3e} at n={n} exceeds {gg_tol}")
    green = np.cumsum(p00)
    return DiagnosticSeries(n_arr, p00, M, Q, R, gg, green, K00, Kmax, ok)


@dataclass
class HeatKernelBound:
    series: np.ndarray      # n^{d/2} * max_y p^n(0,y)
    K: float
    plateau_ok: bool
    first_half_max: float
    last_half_max: float


def heat_kernel_bound(states: list[HeatKernelState], d: int,
                      n_min: int = 20, growth: float = 1.05) -> HeatKernelBound:
    """sup_n n^{d/2} max_y p^n; passes when the last half does not grow."""
    N = len(states) - 1
    if N < 10:
        raise ValueError("horizon must be >= 10")
    ns = np.arange(1, N + 1)
    maxmass = np.array([float(s.mass.max()) for s in states[1:]])
    series = ns ** (d / 2) * maxmass
    K = float(series.max())
    lo = max(n_min, 1)
    mid = lo + (N - lo) // 2
    first = float(series[lo - 1:mid].max())
    last = float(series[mid - 1:].max())
    return HeatKernelBound(series, K, last <= growth * first, first, last)


def green_partial(states: list[HeatKernelState], si: SiteIndex) -> np.ndarray:
    """Partial sums sum_{n<=N} p^n(0,0); index 0 is p^0(0,0) = 1."""
    return np.cumsum([s.p00(si) for s in states])


def green_tail_slope(partial: np.ndarray, window: int = 200) -> float:
    """Mean increment of the partial sums over the last ``window`` steps."""
    w = min(window, len(partial) - 1)
    return float((partial[-1] - partial[-1 - w]) / w)


def usable_horizon(states: list[HeatKernelState], si: SiteIndex,
                   quantile: float = 0.99) -> int:
    """Largest n whose 99% displacement quantile stays under L/4."""
    limit = min(si.env.window.sides) / 4
    norm = np.linalg.norm(si.coords, axis=1)
    order = np.argsort(norm)
    sorted_norm = norm[order]
    good = 0
    for s in states:
        c = np.cumsum(s.mass[order])
        k = int(np.searchsorted(c, quantile))
        k = min(k, len(sorted_norm) - 1)
        if sorted_norm[k] < limit:
            good = s.n
        else:
            break
    return good
