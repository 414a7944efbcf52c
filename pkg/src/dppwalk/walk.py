"""Quenched and annealed random walks on point-process environments.

The walk jumps from an occupied site to one of its 2d coordinate nearest
neighbors.  The uniform rule gives each neighbor probability 1/(2d); the
weighted generalization gives probability proportional to gap^alpha with
alpha = 0 reproducing the uniform rule exactly (gap^0 == 1.0 bitwise, so
both rules share one selection path).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import env as envmod
from .env import Environment, LatticeWindow, ProcessSpec


class CouplingError(Exception):
    """The 1-D sign-walk coupling identity failed (internal consistency)."""


@dataclass(frozen=True)
class TransitionRule:
    alpha: float = 0.0


@dataclass
class StepTable:
    """Precomputed per-site stepping data for one environment.

    Direction order: k = 2*axis is +e_axis, k = 2*axis + 1 is -e_axis.
    Tables are indexed by flat site index over the whole window; only
    occupied sites are ever visited.
    """

    env: Environment
    nbr: np.ndarray    # (volume, 2d) int32 flat index of neighbor
    gaplen: np.ndarray  # (volume, 2d) int32 gap length
    cum: np.ndarray    # (volume, 2d) float64 cumulative step probabilities
    rule: TransitionRule

    @property
    def d(self) -> int:
        return self.env.d


def build_step_table(env: Environment, rule: TransitionRule = TransitionRule()) -> StepTable:
    fwd, bwd = envmod.gap_tables(env)
    d = env.d
    sides = env.window.sides
    vol = env.window.volume
    gaps = np.empty((vol, 2 * d), dtype=np.int32)
    nbr = np.empty((vol, 2 * d), dtype=np.int32)
    idx = np.arange(vol).reshape(sides)
    coords = np.indices(sides)
    for axis in range(d):
        L = sides[axis]
        for sign, table, k in (((+1), fwd, 2 * axis), ((-1), bwd, 2 * axis + 1)):
            g = table[axis]
            tgt = (coords[axis] + sign * g) % L
            sel = [coords[a] for a in range(d)]
            sel[axis] = tgt
            nbr[:, k] = idx[tuple(sel)].ravel()
            gaps[:, k] = g.ravel()
    weights = gaps.astype(np.float64) ** rule.alpha
    cum = np.cumsum(weights, axis=1)
    cum /= cum[:, -1:]
    return StepTable(env, nbr, gaps, cum, rule)


def step_distribution(env: Environment, rule: TransitionRule, v) -> list:
    """Support and probabilities of one step from occupied v.

    Returns a sorted list of (point, probability) with duplicate target
    points merged.  Probabilities sum to 1 within 1e-12 (exactly 1/(2d)
    each for alpha = 0).
    """
    nb = envmod.neighbors(env, v)
    weights = [float(k) ** rule.alpha for (_, _, k) in nb]
    z = sum(weights)
    mass: dict[tuple, float] = {}
    for (pt, _, _), w in zip(nb, weights):
        mass[pt] = mass.get(pt, 0.0) + w / z
    return sorted(mass.items())


def _walk_seed_streams(master_seed: int, walk_indices) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.Philox(key=[master_seed & (2 ** 64 - 1), int(i)]))
            for i in walk_indices]


@dataclass
class Trajectory:
    """One quenched walk: torus positions and unwrapped (lifted) positions."""

    env: Environment
    rule: TransitionRule
    seed: int
    torus: np.ndarray      # (n+1, d) int64, coordinates mod sides
    unwrapped: np.ndarray  # (n+1, d) int64, lifted to Z^d

    @property
    def horizon(self) -> int:
        return len(self.torus) - 1

    @property
    def window_limited(self) -> bool:
        half = np.array(self.env.window.sides) // 2
        return bool((np.abs(self.unwrapped) > half[None, :]).any())


def run_quenched(env: Environment, rule: TransitionRule, horizon: int, seed: int) -> Trajectory:
    """Sample one trajectory of X_0..X_n from the quenched law."""
    table = build_step_table(env, rule)
    d = env.d
    sides = np.array(env.window.sides)
    u = _walk_seed_streams(seed, [0])[0].random(horizon)
    flat = 0  # origin
    torus = np.zeros((horizon + 1, d), dtype=np.int64)
    unwrapped = np.zeros((horizon + 1, d), dtype=np.int64)
    pos = np.zeros(d, dtype=np.int64)
    for t in range(horizon):
        row = table.cum[flat]
        k = int(np.searchsorted(row, u[t], side="right"))
        if k >= 2 * d:
            k = 2 * d - 1
        axis, sign = k >> 1, 1 - 2 * (k & 1)
        pos[axis] += sign * table.gaplen[flat, k]
        flat = int(table.nbr[flat, k])
        unwrapped[t + 1] = pos
        torus[t + 1] = pos % sides
    return Trajectory(env, rule, seed, torus, unwrapped)


@dataclass
class WalkEnsemble:
    """Summaries of many walks, quenched (one env) or annealed (fresh envs)."""

    mode: str
    rule: TransitionRule
    horizon: int
    master_seed: int
    window: LatticeWindow
    final: np.ndarray          # (walkers, d) int64 unwrapped X_n
    returns: np.ndarray        # (walkers,) int64 visits to the origin (t >= 1)
    max_abs: np.ndarray        # (walkers, d) int64 max |coordinate| along the walk
    spec_id: str = ""

    @property
    def walkers(self) -> int:
        return len(self.final)

    @property
    def window_limited(self) -> np.ndarray:
        half = np.array(self.window.sides) // 2
        return (self.max_abs > half[None, :]).any(axis=1)

    def to_csv(self) -> str:
        d = self.final.shape[1]
        buf = io.StringIO()
        wcsv = csv.writer(buf, lineterminator="\n")
        wcsv.writerow(["walk", "seed"]
                      + [f"x{i}" for i in range(d)]
                      + ["returns", "window_limited"])
        wl = self.window_limited
        for i in range(self.walkers):
            wcsv.writerow([i, f"{self.master_seed}/{i}"]
                          + [int(c) for c in self.final[i]]
                          + [int(self.returns[i]), int(wl[i])])
        return buf.getvalue()

    def aggregate(self) -> dict:
        n = max(self.horizon, 1)
        mean_v = (self.final / n).mean(axis=0)
        stderr_v = (self.final / n).std(axis=0, ddof=1) / np.sqrt(self.walkers)
        return {
            "mode": self.mode,
            "alpha": self.rule.alpha,
            "horizon": self.horizon,
            "walkers": self.walkers,
            "master_seed": self.master_seed,
            "spec_id": self.spec_id,
            "mean_velocity": mean_v.tolist(),
            "stderr_velocity": stderr_v.tolist(),
            "mean_returns": float(self.returns.mean()),
            "window_limited": int(self.window_limited.sum()),
        }

    def to_json(self) -> str:
        return json.dumps(self.aggregate(), indent=2)


def _run_block(nbr: np.ndarray, gaps: np.ndarray, cum: np.ndarray,
               env_of_walker: np.ndarray, walk_indices: np.ndarray,
               horizon: int, master_seed: int, chunk: int | None = None):
    """Vectorized stepping of many walkers over stacked (E, vol, 2d) tables."""
    d = nbr.shape[2] // 2
    if chunk is None:
        # keep the per-chunk uniform buffer around 64 MB
        chunk = int(min(4096, max(64, (64 << 20) // (8 * max(horizon, 1)))))
    W = len(env_of_walker)
    final = np.zeros((W, d), dtype=np.int64)
    returns = np.zeros(W, dtype=np.int64)
    max_abs = np.zeros((W, d), dtype=np.int64)
    twod = 2 * d
    for lo in range(0, W, chunk):
        hi = min(lo + chunk, W)
        w = hi - lo
        envid = env_of_walker[lo:hi]
        streams = _walk_seed_streams(master_seed, walk_indices[lo:hi])
        u = np.empty((w, horizon))
        for j, s in enumerate(streams):
            u[j] = s.random(horizon)
        flat = np.zeros(w, dtype=np.int64)
        pos = np.zeros((w, d), dtype=np.int64)
        ret = np.zeros(w, dtype=np.int64)
        mab = np.zeros((w, d), dtype=np.int64)
        rows = np.arange(w)
        for t in range(horizon):
            crow = cum[envid, flat]          # (w, 2d)
            k = (u[:, t, None] >= crow).sum(axis=1)
            np.clip(k, 0, twod - 1, out=k)
            axis = k >> 1
            sign = 1 - 2 * (k & 1)
            pos[rows, axis] += sign * gaps[envid, flat, k]
            flat = nbr[envid, flat, k].astype(np.int64)
            ret += (pos == 0).all(axis=1)
            np.maximum(mab, np.abs(pos), out=mab)
        final[lo:hi] = pos
        returns[lo:hi] = ret
        max_abs[lo:hi] = mab
    return final, returns, max_abs


def _stacked(tables_iter, n_envs: int, vol: int, twod: int):
    nbr = np.empty((n_envs, vol, twod), dtype=np.int32)
    gaps = np.empty((n_envs, vol, twod), dtype=np.int32)
    cum = np.empty((n_envs, vol, twod), dtype=np.float64)
    for j, t in enumerate(tables_iter):
        nbr[j] = t.nbr
        gaps[j] = t.gaplen
        cum[j] = t.cum
    return nbr, gaps, cum


def run_ensemble_quenched(env: Environment, rule: TransitionRule, horizon: int,
                          walkers: int, master_seed: int) -> WalkEnsemble:
    table = build_step_table(env, rule)
    idx = np.arange(walkers)
    final, returns, max_abs = _run_block(table.nbr[None], table.gaplen[None],
                                         table.cum[None],
                                         np.zeros(walkers, dtype=np.int64),
                                         idx, horizon, master_seed)
    return WalkEnsemble("quenched", rule, horizon, master_seed, env.window,
                        final, returns, max_abs, spec_id=env.spec_id)


def run_annealed(spec: ProcessSpec, window: LatticeWindow, rule: TransitionRule,
                 horizon: int, walkers: int, master_seed: int,
                 envs: int | None = None) -> WalkEnsemble:
    """Ensemble over fresh origin-conditioned environments.

    By default every walk gets its own environment; ``envs`` caps the number
    of distinct environments (walkers assigned round-robin), trading
    annealing granularity for memory on large windows.
    """
    if walkers < 1:
        raise ValueError("walkers must be >= 1")
    n_envs = walkers if envs is None else min(envs, walkers)

    def tables():
        for j in range(n_envs):
            e = envmod.sample(spec, window, master_seed + 1_000_003 * j,
                              condition_on_origin=True, strict=True)
            yield build_step_table(e, rule)

    d = window.d
    nbr, gaps, cum = _stacked(tables(), n_envs, window.volume, 2 * d)
    env_of_walker = np.arange(walkers, dtype=np.int64) % n_envs
    idx = np.arange(walkers)
    final, returns, max_abs = _run_block(nbr, gaps, cum, env_of_walker, idx,
                                         horizon, master_seed)
    return WalkEnsemble("annealed", rule, horizon, master_seed, window,
                        final, returns, max_abs, spec_id=spec.spec_id)


# ---------------------------------------------------------------------------
# 1-D coupling with the simple sign walk

def point_positions(env: Environment) -> np.ndarray:
    """Sorted occupied positions of a 1-D environment, origin included."""
    if env.d != 1:
        raise ValueError("point_positions is 1-D only")
    pos = np.flatnonzero(env.occupancy)
    if 0 not in pos:
        raise ValueError("environment must contain the origin")
    return pos


def point_at_index(env: Environment, j: int) -> int:
    """Unwrapped position of the j-th occupied point counted from the origin.

    Index 0 is the origin; positive indices walk in +e direction, negative
    in -e, unwrapping across torus periods.
    """
    pos = point_positions(env)
    m = len(pos)
    L = env.window.sides[0]
    origin_rank = int(np.searchsorted(pos, 0))
    q, r = divmod(origin_rank + j, m)
    return int(pos[r]) + q * L


def coupled_sign_walk(env: Environment, traj: Trajectory) -> np.ndarray:
    """Sign walk Y_k of a 1-D trajectory, with the coupling identity checked.

    Y_k accumulates the signs of the increments; the identity says the
    walk's unwrapped position is always the Y_k-th occupied point.
    """
    if env.d != 1:
        raise ValueError("coupled_sign_walk is 1-D only")
    x = traj.unwrapped[:, 0]
    inc = np.diff(x)
    if (inc == 0).any():
        raise CouplingError("zero increment in trajectory")
    y = np.concatenate([[0], np.cumsum(np.sign(inc))]).astype(np.int64)
    for k in range(len(x)):
        expect = point_at_index(env, int(y[k]))
        if expect != x[k]:
            raise CouplingError(
                f"coupling identity violated at step {k}: "
                f"X={x[k]} but point[{y[k]}]={expect}")
    return y
