"""Projection/squeezing machinery for finite point sets in the positive
quadrant, and conductance-profile bounds for small Markov chains.

Sets are plain frozensets of integer coordinate tuples with every
coordinate >= 1.  Axes are 1-based throughout (j-th coordinate).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

PointSet = frozenset


def as_point_set(points) -> PointSet:
    """Validate and freeze a collection of positive-integer points."""
    pts = frozenset(tuple(int(c) for c in p) for p in points)
    if not pts:
        raise ValueError("point set must be nonempty")
    dims = {len(p) for p in pts}
    if len(dims) != 1:
        raise ValueError(f"mixed dimensions {sorted(dims)}")
    for p in pts:
        if any(c < 1 for c in p):
            raise ValueError(f"coordinate < 1 in {p}")
    return pts


def set_dim(A: PointSet) -> int:
    return len(next(iter(A)))


def energy(A: PointSet) -> int:
    """Sum of all coordinates over all points."""
    return sum(sum(p) for p in A)


def project(A: PointSet, j: int) -> PointSet:
    """Drop the j-th coordinate (1-based) of every point."""
    d = set_dim(A)
    if not 1 <= j <= d:
        raise ValueError(f"axis {j} out of range for dimension {d}")
    return frozenset(p[:j - 1] + p[j:] for p in A)


def fibers(A: PointSet, j: int) -> dict:
    """Partition A by its projection: base point -> sorted j-th coordinates."""
    d = set_dim(A)
    if not 1 <= j <= d:
        raise ValueError(f"axis {j} out of range for dimension {d}")
    out: dict = {}
    for p in A:
        out.setdefault(p[:j - 1] + p[j:], []).append(p[j - 1])
    for base in out:
        out[base].sort()
    return out


def squeeze(A: PointSet, j: int) -> PointSet:
    """Compact every fiber in direction j onto {1, ..., fiber size}."""
    out = []
    for base, line in fibers(A, j).items():
        for k in range(1, len(line) + 1):
            out.append(base[:j - 1] + (k,) + base[j - 1:])
    return frozenset(out)


def squeeze_fixpoint(A: PointSet) -> PointSet:
    """Apply squeezing operators cyclically until a full cycle is stable.

    Energy strictly decreases at every changing step, so the iteration
    terminates well inside the |A| * energy(A) cap.
    """
    A = as_point_set(A)
    d = set_dim(A)
    cap = len(A) * energy(A) + d
    stable = 0
    j = 1
    steps = 0
    while stable < d:
        B = squeeze(A, j)
        if B == A:
            stable += 1
        else:
            assert energy(B) < energy(A), "squeeze did not reduce energy"
            stable = 0
        A = B
        j = j % d + 1
        steps += 1
        if steps > cap:
            raise RuntimeError("squeeze iteration failed to stabilize")
    return A


def isoperimetric_check(A: PointSet) -> tuple[int, float]:
    """Largest projection size and its ratio to |A|^{(d-1)/d}."""
    A = as_point_set(A)
    d = set_dim(A)
    m = max(len(project(A, j)) for j in range(1, d + 1))
    return m, m / len(A) ** ((d - 1) / d)


def boundary_edge_count(A: PointSet) -> int:
    """Lattice edges from A to its complement in Z^d (quadrant wall included)."""
    A = as_point_set(A)
    d = set_dim(A)
    count = 0
    for p in A:
        for j in range(d):
            for s in (1, -1):
                q = p[:j] + (p[j] + s,) + p[j + 1:]
                if q not in A:
                    count += 1
    return count


# ---------------------------------------------------------------------------
# conductance profile and the mixing-time lower bound it implies

@dataclass
class ConductanceProfile:
    u: np.ndarray            # subset-size thresholds 1..u_max
    phi: np.ndarray          # Phi(u) = min |dS|/|S| over nonempty proper S, |S| <= u
    exact: bool              # False when only a randomized upper bound was feasible
    samples: int = 0

    def to_csv(self) -> str:
        lines = ["u,phi"]
        for i in range(len(self.u)):
            lines.append(f"{self.u[i]},{self.phi[i]:.17g}")
        return "\n".join(lines) + "\n"


def _boundary_flow(P: np.ndarray, S: tuple) -> float:
    idx = list(S)
    out = P[idx].sum() - P[np.ix_(idx, idx)].sum()
    return float(out)


def conductance_profile(P: np.ndarray, u_max: int | None = None,
                        enum_limit: int = 20, rand_samples: int = 20000,
                        seed: int = 0) -> ConductanceProfile:
    """Phi(u) over nonempty proper subsets of size <= u.

    Exhaustive for small state spaces; otherwise random subsets give an
    upper bound on Phi, flagged via ``exact=False``.
    """
    n = P.shape[0]
    if u_max is None:
        u_max = n - 1
    u_max = min(u_max, n - 1)
    if u_max < 1:
        raise ValueError("need at least one proper subset size")
    best = np.full(u_max + 1, np.inf)
    if n <= enum_limit:
        for size in range(1, u_max + 1):
            for S in itertools.combinations(range(n), size):
                best[size] = min(best[size], _boundary_flow(P, S) / size)
        np.minimum.accumulate(best[1:], out=best[1:])
        return ConductanceProfile(np.arange(1, u_max + 1), best[1:], True)
    rng = np.random.Generator(np.random.Philox(key=[seed, 0]))
    for _ in range(rand_samples):
        size = int(rng.integers(1, u_max + 1))
        S = tuple(rng.choice(n, size=size, replace=False))
        best[size] = min(best[size], _boundary_flow(P, S) / size)
    np.minimum.accumulate(best[1:], out=best[1:])
    return ConductanceProfile(np.arange(1, u_max + 1), best[1:], False,
                              samples=rand_samples)


@dataclass
class MixingBound:
    required_n: int          # smallest integer n satisfying the bound
    integral: float
    gamma: float
    eps: float
    max_p: float             # max p^n(x, y) at required_n, for the direct check
    holds: bool              # max_p <= eps


def _phi_at(profile: ConductanceProfile, u: float) -> float:
    # piecewise-constant: Phi at the largest tabulated threshold <= u,
    # clamped to the ends of the table
    k = int(np.floor(u))
    k = max(int(profile.u[0]), min(k, int(profile.u[-1])))
    return float(profile.phi[k - int(profile.u[0])])


def morris_peres_check(P: np.ndarray, profile: ConductanceProfile,
                       gamma: float, eps: float) -> MixingBound:
    """Evaluate n >= 1 + ((1-g)^2/g^2) * int_4^{4/eps} 4 du / (u Phi(u)^2)
    with piecewise-constant Phi, then verify p^n(x,y) <= eps directly."""
    if not 0 < gamma <= 1:
        raise ValueError("gamma must be in (0, 1]")
    if not 0 < eps < 1:
        raise ValueError("eps must be in (0, 1)")
    lo, hi = 4.0, 4.0 / eps
    integral = 0.0
    u = lo
    while u < hi:
        nxt = min(np.floor(u) + 1, hi)
        integral += (4.0 / _phi_at(profile, u) ** 2) * np.log(nxt / u)
        u = nxt
    bound = 1.0 + ((1 - gamma) ** 2 / gamma ** 2) * integral
    n = max(1, int(np.ceil(bound)))
    Pn = np.linalg.matrix_power(P, n)
    max_p = float(Pn.max())
    return MixingBound(n, integral, gamma, eps, max_p, max_p <= eps)


# ---------------------------------------------------------------------------
# text-file set literals

def parse_set_file(text: str) -> PointSet:
    """One point per line, whitespace-separated integer coordinates."""
    pts = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        pts.append(tuple(int(tok) for tok in line.split()))
    return as_point_set(pts)


def format_set(A: PointSet) -> str:
    return "\n".join(" ".join(str(c) for c in p) for p in sorted(A)) + "\n"
