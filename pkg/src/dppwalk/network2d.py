"""Electrical-network construction for 2-D environments.

Three steps: unit-conductance edges between coordinate nearest neighbors,
subdivision of every length-k edge into k unit segments of conductance k
(horizontal segments on layer 1, vertical on layer 2, so that crossings at
unoccupied points stay distinct), and identification of the two layer
copies at occupied points.  Cutsets and the conductance-law / Cauchy-tail
diagnostics live here too.

Vertices are tuples (x, y, layer) in unwrapped window coordinates, with
layer 0 for identified occupied points.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import env as envmod
from .env import Environment, LatticeWindow, ProcessSpec


class UnsupportedDimensionError(Exception):
    pass


class WindowLimitError(Exception):
    pass


@dataclass(frozen=True)
class NetEdge:
    u: tuple
    v: tuple
    conductance: int
    origin: tuple  # (start point, axis, length) of the originating unit-conductance edge


@dataclass
class Network:
    env: Environment
    edges: list[NetEdge]
    g1_edges: list[tuple]  # (start point, axis, length)

    @property
    def total_subdivided(self) -> int:
        return len(self.edges)


def _vertex(pt: tuple, axis: int, occupied: set) -> tuple:
    if pt in occupied:
        return (pt[0], pt[1], 0)
    return (pt[0], pt[1], axis + 1)


def build_network(env: Environment) -> Network:
    """Subdivided, layer-identified conductance network of a 2-D environment.

    Coordinates are centered torus representatives; edges that wrap carry
    endpoints beyond the window half-sides (two unwrapped copies of a torus
    site can appear near the seam, which only matters for cutsets at
    n ~ L/2, where cutsets() refuses to run anyway).
    """
    if env.d != 2:
        raise UnsupportedDimensionError("network construction is stated for d = 2")
    fwd, _ = envmod.gap_tables(env)
    sides = env.window.sides
    occ_idx = np.argwhere(env.occupancy)
    centered = {tuple(env.window.centered(v)) for v in occ_idx}
    g1 = []
    for v in occ_idx:
        cv = env.window.centered(v)
        for axis in range(2):
            k = int(fwd[(axis,) + tuple(v)])
            g1.append((cv, axis, k))
    edges = []
    for (start, axis, k) in g1:
        step = (1, 0) if axis == 0 else (0, 1)
        for j in range(k):
            a = (start[0] + j * step[0], start[1] + j * step[1])
            b = (start[0] + (j + 1) * step[0], start[1] + (j + 1) * step[1])
            # the far endpoint is an occupied torus site even when unwrapped
            a_occ = a in centered or (j == 0)
            b_occ = b in centered or (j == k - 1)
            ua = (a[0], a[1], 0) if a_occ else (a[0], a[1], axis + 1)
            ub = (b[0], b[1], 0) if b_occ else (b[0], b[1], axis + 1)
            edges.append(NetEdge(ua, ub, k, (start, axis, k)))
    return Network(env, edges, g1)


def series_conductance(edge_group: list[NetEdge]) -> Fraction:
    """Effective conductance of segments in series, exact rationals."""
    return 1 / sum(Fraction(1, e.conductance) for e in edge_group)


@dataclass
class CutsetReport:
    n: np.ndarray
    edge_counts: np.ndarray
    conductance_sums: np.ndarray
    nash_williams_partial: np.ndarray  # partial sums of 1 / C_{Pi_n}

    def to_csv(self) -> str:
        lines = ["n,edges,conductance_sum,nash_williams_partial"]
        for i in range(len(self.n)):
            lines.append(f"{self.n[i]},{self.edge_counts[i]},"
                         f"{self.conductance_sums[i]},"
                         f"{self.nash_williams_partial[i]:.17g}")
        return "\n".join(lines) + "\n"

    def log_growth_coefficient(self) -> float:
        """Least-squares coefficient a in partial ~ a log n + b."""
        x = np.log(self.n.astype(float))
        y = self.nash_williams_partial
        a, _ = np.polyfit(x, y, 1)
        return float(a)


def _inside_box(vertex: tuple, n: int) -> bool:
    return abs(vertex[0]) <= n and abs(vertex[1]) <= n


def cutsets(network: Network, n_max: int) -> CutsetReport:
    """Edges exiting the box [-n, n]^2 (both layers) for n = 1..n_max."""
    L = min(network.env.window.sides)
    if n_max >= L // 2:
        raise WindowLimitError(f"n_max={n_max} reaches the window half-side {L // 2}")
    ns = np.arange(1, n_max + 1)
    counts = np.zeros(n_max, dtype=np.int64)
    sums = np.zeros(n_max, dtype=np.int64)
    for e in network.edges:
        ua = max(abs(e.u[0]), abs(e.u[1]))
        ub = max(abs(e.v[0]), abs(e.v[1]))
        lo, hi = min(ua, ub), max(ua, ub)
        # edge crosses the boundary of [-n,n]^2 iff lo <= n < hi
        for n in range(max(lo, 1), min(hi, n_max + 1)):
            counts[n - 1] += 1
            sums[n - 1] += e.conductance
    partial = np.cumsum(1.0 / np.maximum(sums, 1))
    return CutsetReport(ns, counts, sums, partial)


def cutset_edges(network: Network, n: int) -> list[NetEdge]:
    out = []
    for e in network.edges:
        if _inside_box(e.u, n) != _inside_box(e.v, n):
            out.append(e)
    return out


# ---------------------------------------------------------------------------
# conductance law: Q(c(e) = k) = k P(f = k) / E_P[f]

def bernoulli_conductance_pmf(p: float, k_max: int) -> np.ndarray:
    """Analytic law k p^2 (1-p)^(k-1) for Bernoulli environments."""
    k = np.arange(1, k_max + 1)
    return k * p * p * (1 - p) ** (k - 1)


def interval_length_samples(spec: ProcessSpec, window: LatticeWindow,
                            samples: int, seed: int) -> np.ndarray:
    """Lengths of the axis intervals covering uniform random positions.

    The interval covering a uniform lattice position is length-biased,
    which is exactly the subdivided-edge conductance law.
    """
    if window.d != 2:
        raise UnsupportedDimensionError("conductance sampling is 2-D")
    rng = np.random.Generator(np.random.Philox(key=[seed & (2 ** 64 - 1), 0]))
    out = np.empty(samples, dtype=np.int64)
    got = 0
    env_seed = seed
    while got < samples:
        e = envmod.sample(spec, window, env_seed, condition_on_origin=False,
                          strict=True)
        env_seed += 1
        fwd, bwd = envmod.gap_tables(e)
        vol = window.volume
        take = min(samples - got, vol // 4)
        pos = rng.integers(0, vol, size=take)
        axis = rng.integers(0, 2, size=take)
        coords = np.array(np.unravel_index(pos, window.sides))
        occ_at = e.occupancy[tuple(coords)]
        # length of the interval covering the position: distance back to the
        # covering occupied site (0 if occupied) plus its forward gap
        back = np.where(occ_at, 0, bwd[(axis,) + tuple(coords)])
        sides_arr = np.array(window.sides)
        start = (coords[axis, np.arange(take)] - back) % sides_arr[axis]
        sel = coords.copy()
        sel[axis, np.arange(take)] = start
        length = fwd[(axis,) + tuple(sel)]
        out[got:got + take] = length
        got += take
    return out


@dataclass
class ConductanceLawReport:
    k: np.ndarray
    empirical: np.ndarray
    theoretical: np.ndarray
    tv_distance: float
    samples: int

    def to_csv(self) -> str:
        lines = ["k,empirical,theoretical"]
        for i in range(len(self.k)):
            lines.append(f"{self.k[i]},{self.empirical[i]:.17g},"
                         f"{self.theoretical[i]:.17g}")
        return "\n".join(lines) + "\n"


def conductance_law(spec: ProcessSpec, window: LatticeWindow, samples: int,
                    seed: int) -> ConductanceLawReport:
    lengths = interval_length_samples(spec, window, samples, seed)
    k_max = int(lengths.max())
    emp = np.bincount(lengths, minlength=k_max + 1)[1:] / len(lengths)
    if spec.variant == "bernoulli":
        theo = bernoulli_conductance_pmf(spec.param("p"), k_max)
    else:
        # estimate P(f = k) by direct gap sampling from the same spec
        gaps = gap_samples(spec, window, max(samples, 10_000), seed + 77)
        kk = max(k_max, int(gaps.max()))
        pf = np.bincount(gaps, minlength=kk + 1)[1:] / len(gaps)
        mean_f = float(gaps.mean())
        theo = (np.arange(1, kk + 1) * pf / mean_f)[:k_max]
        if len(theo) < k_max:
            theo = np.pad(theo, (0, k_max - len(theo)))
    tail = max(0.0, 1.0 - float(theo.sum()))
    tv = 0.5 * (np.abs(emp - theo).sum() + tail)
    return ConductanceLawReport(np.arange(1, k_max + 1), emp, theo, float(tv), samples)


def gap_samples(spec: ProcessSpec, window: LatticeWindow, samples: int,
                seed: int) -> np.ndarray:
    """Origin gaps f_{+e_1} from origin-conditioned environments.

    Bernoulli environments use the line marginal (the axis line through the
    origin is itself an i.i.d. Bernoulli line), which keeps large sample
    counts cheap; other variants sample whole environments.
    """
    L = window.sides[0]
    if spec.variant == "bernoulli":
        p = spec.param("p")
        rng = np.random.Generator(np.random.Philox(key=[seed & (2 ** 64 - 1), 1]))
        lines = rng.random((samples, L)) < p
        lines[:, -1] = True  # site L wraps to the (occupied) origin
        return lines.argmax(axis=1).astype(np.int64) + 1
    out = np.empty(samples, dtype=np.int64)
    for i in range(samples):
        e = envmod.sample(spec, window, seed + i, condition_on_origin=True,
                          strict=False)
        out[i] = envmod.gap(e, (0,) * window.d, (0, 1))
    return out


# ---------------------------------------------------------------------------
# Cauchy tail: sum_{k >= N} k P(f = k) <= C / N

@dataclass
class CauchyTailReport:
    N: np.ndarray
    tail_sums: np.ndarray      # T(N) = sum_{k>=N} k p_k
    fitted_C: float            # sup_N N * T(N) over the observed range
    passes: bool
    growth_slope: float        # log-log slope of N*T(N) over an interior range

    def to_csv(self) -> str:
        lines = ["N,tail_sum,N_times_tail"]
        for i in range(len(self.N)):
            lines.append(f"{self.N[i]},{self.tail_sums[i]:.17g},"
                         f"{self.N[i] * self.tail_sums[i]:.17g}")
        return "\n".join(lines) + "\n"


def cauchy_tail_check(pmf: np.ndarray, slope_tol: float = 0.05) -> CauchyTailReport:
    """Check the tail condition for a gap law given as pmf over k = 1..k_max.

    Passes when N * T(N) stabilizes over the observed range (log-log slope
    of an interior fit range <= slope_tol); a genuinely heavier-than-Cauchy
    tail makes N * T(N) grow polynomially and fails.
    """
    k = np.arange(1, len(pmf) + 1)
    kp = k * pmf
    tails = kp[::-1].cumsum()[::-1]
    Ns = k
    ntail = Ns * tails
    fitted_C = float(ntail.max())
    # fit away from the truncation edge, where the missing far tail would
    # make any law look lighter than it is
    lo = max(2, len(Ns) // 100)
    hi = max(lo + 2, len(Ns) // 10)
    sel = slice(lo - 1, hi)
    pos = tails[sel] > 0
    if pos.sum() >= 3:
        x = np.log(Ns[sel][pos].astype(float))
        y = np.log(ntail[sel][pos])
        slope = float(np.polyfit(x, y, 1)[0])
    else:
        slope = 0.0  # tail identically zero: condition holds trivially
    return CauchyTailReport(Ns, tails, fitted_C, slope <= slope_tol, slope)


def cauchy_tail_from_samples(gaps: np.ndarray, slope_tol: float = 0.05) -> CauchyTailReport:
    pmf = np.bincount(gaps)[1:] / len(gaps)
    return cauchy_tail_check(pmf, slope_tol)


# ---------------------------------------------------------------------------
# equivalence of the network walk and the coordinate-neighbor walk

def g1_transition_matrix(network: Network) -> tuple[list, np.ndarray]:
    """Transition matrix of the walk induced by the unit-conductance edges."""
    env = network.env
    win = env.window
    pts = sorted({tuple(win.centered(v)) for v in np.argwhere(env.occupancy)})
    index = {p: i for i, p in enumerate(pts)}
    P = np.zeros((len(pts), len(pts)))
    for (start, axis, k) in network.g1_edges:
        step = (k, 0) if axis == 0 else (0, k)
        far = tuple(win.centered((start[0] + step[0], start[1] + step[1])))
        a, b = index[tuple(win.centered(start))], index[far]
        P[a, b] += 0.25
        P[b, a] += 0.25
    return pts, P
