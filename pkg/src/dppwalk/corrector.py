"""Finite-volume corrector construction and its diagnostics.

The environment chain's kernel is realized site-wise on one periodic
environment: functions live on occupied sites, the kernel averages over
the 2d coordinate neighbors, and the local drift is the mean gap-signed
displacement.  Resolvent solves (1 + eps - T) psi = V along a decreasing
eps schedule yield psi at the smallest eps; chi(x) = psi(x) - psi(0)
makes x + chi(x) harmonic up to an eps-proportional residual, which is
what every downstream check is measured against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .heatkernel import SiteIndex, site_index, transition_matrix
from .env import Environment

DEFAULT_SCHEDULE = tuple(2.0 ** -k for k in range(3, 15))


class SolverError(Exception):
    """Resolvent solve failed to reach the requested residual."""


def drift(si: SiteIndex) -> np.ndarray:
    """Mean gap-signed displacement per site, shape (S, d)."""
    d = si.env.d
    S = si.disp.shape[0]
    V = np.zeros((S, d))
    for a in range(d):
        V[:, a] = (si.disp[:, 2 * a] + si.disp[:, 2 * a + 1]) / (2 * d)
    return V


def solve_psi(si: SiteIndex, V: np.ndarray, epsilon: float, tol: float = 1e-9,
              x0: np.ndarray | None = None, maxiter: int = 50000) -> tuple[np.ndarray, float]:
    """Solve (1 + eps - T) psi = V per coordinate; returns (psi, residual).

    Conjugate gradient on the SPD operator (spectrum inside [eps, 2 + eps]),
    warm-started from x0, with a direct sparse factorization as fallback.
    The residual is the max over coordinates of ||(1+eps-T)psi - V||_inf.
    """
    if epsilon <= 0 or tol <= 0:
        raise ValueError("epsilon and tol must be positive")
    T = transition_matrix(si)
    A = ((1.0 + epsilon) * sp.identity(T.shape[0], format="csr") - T).tocsr()
    S, d = V.shape
    psi = np.zeros_like(V)
    lu = None
    for a in range(d):
        b = V[:, a]
        if not b.any():
            continue
        guess = None if x0 is None else x0[:, a]
        x, info = spla.cg(A, b, x0=guess, rtol=0.0, atol=0.25 * tol,
                          maxiter=maxiter)
        if info != 0 or np.abs(A @ x - b).max() > tol:
            if lu is None:
                lu = spla.splu(A.tocsc())
            x = lu.solve(b)
        psi[:, a] = x
    residual = float(np.abs(A @ psi - V).max()) if S else 0.0
    if residual > tol:
        raise SolverError(f"residual {residual:.3e} exceeds tol {tol:.3e}")
    return psi, residual


@dataclass
class CorrectorField:
    si: SiteIndex
    schedule: tuple
    tol: float
    psi: np.ndarray              # (S, d) at the final eps
    chi: np.ndarray              # (S, d), chi at the origin row is 0
    eps_final: float
    solver_residuals: list       # per eps
    eps_norm_series: np.ndarray  # eps * mean |psi_eps|^2 per schedule entry
    cauchy_delta: float          # max increment change between last two eps
    cauchy_ok: bool
    V: np.ndarray = field(repr=False, default=None)

    def to_csv(self) -> str:
        d = self.si.env.d
        head = ",".join([f"x{a}" for a in range(d)]
                        + [f"chi{a}" for a in range(d)]
                        + [f"psi{a}" for a in range(d)])
        lines = [head]
        for r in range(self.chi.shape[0]):
            vals = ([str(c) for c in self.si.coords[r]]
                    + [f"{v:.17g}" for v in self.chi[r]]
                    + [f"{v:.17g}" for v in self.psi[r]])
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"

    def diagnostics(self) -> dict:
        return {
            "schedule": list(self.schedule),
            "tol": self.tol,
            "eps_final": self.eps_final,
            "solver_residuals": self.solver_residuals,
            "eps_norm_series": self.eps_norm_series.tolist(),
            "cauchy_delta": self.cauchy_delta,
            "cauchy_ok": self.cauchy_ok,
            "harmonicity_residual": harmonicity_residual(self.si, self.chi, self.V),
            "extraction": "smallest scheduled eps, Cauchy-checked against the previous one",
        }


def _edge_increments(si: SiteIndex, psi: np.ndarray) -> np.ndarray:
    """G[x, k] = psi(neighbor k of x) - psi(x), shape (S, 2d, d)."""
    return psi[si.nbr_rows] - psi[:, None, :]


def assemble_corrector(env_or_si, schedule=DEFAULT_SCHEDULE,
                       tol: float = 1e-9) -> CorrectorField:
    si = env_or_si if isinstance(env_or_si, SiteIndex) else site_index(env_or_si)
    sched = tuple(schedule)
    if any(b >= a for a, b in zip(sched, sched[1:])):
        raise ValueError("schedule must be strictly decreasing")
    V = drift(si)
    psi = None
    prev_inc = None
    residuals = []
    norms = []
    delta = np.inf
    for eps in sched:
        psi, res = solve_psi(si, V, eps, tol, x0=psi)
        residuals.append(res)
        norms.append(eps * float((psi ** 2).sum(axis=1).mean()))
        inc = _edge_increments(si, psi)
        if prev_inc is not None:
            delta = float(np.abs(inc - prev_inc).max())
        prev_inc = inc
    chi = psi - psi[si.origin_row]
    cauchy_ok = delta <= 10 * tol
    return CorrectorField(si, sched, tol, psi, chi, sched[-1], residuals,
                          np.array(norms), float(delta), cauchy_ok, V)


def conditional_increment_means(si: SiteIndex, chi: np.ndarray,
                                V: np.ndarray | None = None) -> np.ndarray:
    """Per-site mean of the harmonic-embedding increment, shape (S, d).

    Row x holds (1/2d) sum over neighbors y of (y + chi(y)) - (x + chi(x));
    analytically this equals eps * psi_eps(x)."""
    if V is None:
        V = drift(si)
    twod = si.nbr_rows.shape[1]
    return V + (chi[si.nbr_rows].sum(axis=1) - twod * chi) / twod


def harmonicity_residual(si: SiteIndex, chi: np.ndarray,
                         V: np.ndarray | None = None) -> float:
    means = conditional_increment_means(si, chi, V)
    return float(np.abs(means).max()) if means.size else 0.0


def path_chi(si: SiteIndex, psi: np.ndarray, start_row: int, dirs) -> tuple[np.ndarray, int]:
    """Sum psi increments along a coordinate-neighbor path; returns (sum, end row)."""
    total = np.zeros(psi.shape[1])
    row = start_row
    for k in dirs:
        nxt = int(si.nbr_rows[row, k])
        total += psi[nxt] - psi[row]
        row = nxt
    return total, row


# ---------------------------------------------------------------------------
# sublinearity diagnostics

@dataclass
class AxisReport:
    axis: int
    k: np.ndarray         # 1, 2, ... index along the occupied half-line
    chi_over_k: np.ndarray
    slope: float          # log-log trend of |chi(n_k e)|/k where positive


def sublinearity_axis(si: SiteIndex, chi: np.ndarray, axis: int = 0,
                      k_max: int | None = None) -> AxisReport:
    env = si.env
    L = env.window.sides[axis]
    occ = env.occupancy
    line_idx = [0] * env.d
    positions = []
    for x in range(1, L):
        line_idx[axis] = x
        if occ[tuple(line_idx)]:
            positions.append(x)
    if k_max is not None:
        positions = positions[:k_max]
    vals = np.zeros(len(positions))
    flat_strides = np.array([int(np.prod(env.window.sides[a + 1:], dtype=np.int64))
                             for a in range(env.d)])
    for i, x in enumerate(positions):
        row = int(si.row_of[x * flat_strides[axis]])
        vals[i] = np.linalg.norm(chi[row]) / (i + 1)
    k = np.arange(1, len(positions) + 1)
    pos = vals > 0
    if pos.sum() >= 3:
        slope = float(np.polyfit(np.log(k[pos]), np.log(vals[pos]), 1)[0])
    else:
        slope = 0.0
    return AxisReport(axis, k, vals, slope)


def first_increment_chi(field: CorrectorField, axis: int = 0) -> np.ndarray:
    """chi at the first occupied site in the +axis direction from the origin."""
    si = field.si
    k = 2 * axis  # direction +e_axis
    row = int(si.nbr_rows[si.origin_row, k])
    return field.chi[row].copy()


@dataclass
class BoxReport:
    n: int
    eps_grid: np.ndarray
    fractions: np.ndarray  # fraction of occupied x in [-n, n]^d with |chi| >= eps*n


def sublinearity_box(si: SiteIndex, chi: np.ndarray, n: int,
                     eps_grid=(0.05, 0.1, 0.2, 0.5)) -> BoxReport:
    inside = (np.abs(si.coords) <= n).all(axis=1)
    norms = np.linalg.norm(chi[inside], axis=1)
    grid = np.asarray(eps_grid, dtype=float)
    fracs = np.array([(norms >= e * n).mean() for e in grid])
    return BoxReport(n, grid, fracs)


# ---------------------------------------------------------------------------
# martingale decomposition

@dataclass
class MartingaleSeries:
    D: np.ndarray                 # site-averaged increment covariance, (d, d)
    max_conditional_mean: float   # over all sites, inf-norm of the increment mean
    harmonicity: float
    finals: np.ndarray | None = None  # M_n per walker when trajectories given
    D_traj: np.ndarray | None = None  # ensemble covariance of M_n / sqrt(n)

    def as_json(self) -> dict:
        out = {"D": self.D.tolist(),
               "max_conditional_mean": self.max_conditional_mean,
               "harmonicity_residual": self.harmonicity}
        if self.D_traj is not None:
            out["D_trajectory"] = self.D_traj.tolist()
        return out


def site_average_D(si: SiteIndex, chi: np.ndarray) -> np.ndarray:
    """Uniform-site average of the one-step covariance of the M increment."""
    d = si.env.d
    twod = 2 * d
    S = si.disp.shape[0]
    inc = chi[si.nbr_rows] - chi[:, None, :]          # (S, 2d, d)
    axes = np.repeat(np.arange(d), 2)
    inc[:, np.arange(twod), axes] += si.disp
    mean = inc.mean(axis=1)                            # (S, d)
    centered = inc - mean[:, None, :]
    cov = np.einsum("ski,skj->ij", centered, centered) / (twod * S)
    return cov


def martingale_finals(si: SiteIndex, chi: np.ndarray,
                      final_unwrapped: np.ndarray) -> np.ndarray:
    """M_n = X_n + chi(X_n mod L) for an array of unwrapped endpoints."""
    sides = np.array(si.env.window.sides)
    torus = np.mod(final_unwrapped, sides[None, :])
    strides = np.array([int(np.prod(si.env.window.sides[a + 1:], dtype=np.int64))
                        for a in range(si.env.d)])
    rows = si.row_of[(torus * strides[None, :]).sum(axis=1)]
    if (rows < 0).any():
        raise ValueError("trajectory endpoint on an unoccupied site")
    return final_unwrapped + chi[rows]


def martingale_check(field: CorrectorField,
                     final_unwrapped: np.ndarray | None = None,
                     horizon: int | None = None) -> MartingaleSeries:
    si = field.si
    D = site_average_D(si, field.chi)
    mcm = harmonicity_residual(si, field.chi, field.V)
    finals = None
    D_traj = None
    if final_unwrapped is not None:
        if horizon is None:
            raise ValueError("horizon required with trajectories")
        finals = martingale_finals(si, field.chi, final_unwrapped)
        scaled = finals / np.sqrt(horizon)
        D_traj = np.cov(scaled.T)
        D_traj = np.atleast_2d(D_traj)
    return MartingaleSeries(D, mcm, mcm, finals, D_traj)
