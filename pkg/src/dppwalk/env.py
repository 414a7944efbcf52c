"""Discrete point-process environments on finite torus windows.

An environment is a bit field over a d-dimensional torus window.  Occupied
sites carry the walk; each occupied site has one coordinate nearest
neighbor per axis direction, found by scanning along the axis (with
wraparound) for the next occupied site.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class EnvironmentError_(Exception):
    """Base class for environment construction/IO failures."""


class FormatError(EnvironmentError_):
    """Malformed binary environment payload."""


class ValidationError(EnvironmentError_):
    """Environment violates the requested validation mode."""


class RejectionBudgetError(EnvironmentError_):
    """Conditioning by rejection exhausted its retry budget."""


@dataclass(frozen=True)
class LatticeWindow:
    """Finite torus window of Z^d: per-axis side lengths, periodic boundary."""

    sides: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "sides", tuple(int(s) for s in self.sides))
        if len(self.sides) < 1:
            raise ValueError("window needs at least one axis")
        if any(s < 2 for s in self.sides):
            raise ValueError("every side must be >= 2")

    @property
    def d(self) -> int:
        return len(self.sides)

    @property
    def volume(self) -> int:
        return int(np.prod(self.sides))

    def wrap(self, x: Sequence[int]) -> tuple[int, ...]:
        return tuple(int(c) % s for c, s in zip(x, self.sides))

    def centered(self, x: Sequence[int]) -> tuple[int, ...]:
        """Torus-minimal representative of x, componentwise in [-L/2, L/2)."""
        out = []
        for c, s in zip(x, self.sides):
            c = int(c) % s
            if c >= s - s // 2:
                c -= s
            out.append(c)
        return tuple(out)


@dataclass(frozen=True)
class ProcessSpec:
    """Parametric law of the point process.

    Variants: bernoulli(p), deleted_balls(radii, probs),
    percolation_cluster(p) (largest open cluster of Bernoulli edge
    percolation on the window; biased near criticality), explicit(sites).
    """

    variant: str
    params: tuple = field(default_factory=tuple)

    @staticmethod
    def bernoulli(p: float) -> "ProcessSpec":
        if not 0.0 < p < 1.0:
            # p = 1 is admitted separately as the degenerate full lattice
            if p != 1.0:
                raise ValueError("bernoulli p must be in (0, 1]")
        return ProcessSpec("bernoulli", (("p", float(p)),))

    @staticmethod
    def deleted_balls(radii: Sequence[int], probs: Sequence[float]) -> "ProcessSpec":
        radii = tuple(int(r) for r in radii)
        probs = tuple(float(q) for q in probs)
        if len(radii) != len(probs):
            raise ValueError("radii and probs must have equal length")
        if any(q >= 1.0 or q < 0.0 for q in probs):
            raise ValueError("all deletion probs must be in [0, 1)")
        if any(r < 0 for r in radii):
            raise ValueError("radii must be nonnegative")
        return ProcessSpec("deleted_balls", (("radii", radii), ("probs", probs)))

    @staticmethod
    def percolation_cluster(p: float) -> "ProcessSpec":
        if not 0.0 < p <= 1.0:
            raise ValueError("percolation p must be in (0, 1]")
        return ProcessSpec("percolation_cluster", (("p", float(p)),))

    @staticmethod
    def explicit(sites: Iterable[Sequence[int]]) -> "ProcessSpec":
        pts = tuple(sorted(tuple(int(c) for c in s) for s in sites))
        if not pts:
            raise ValueError("explicit spec needs at least one site")
        return ProcessSpec("explicit", (("sites", pts),))

    def param(self, name: str):
        for k, v in self.params:
            if k == name:
                return v
        raise KeyError(name)

    @property
    def spec_id(self) -> str:
        return f"{self.variant}:" + ",".join(f"{k}={v}" for k, v in self.params)

    def to_json(self) -> str:
        return json.dumps({"variant": self.variant, "params": dict(
            (k, list(v) if isinstance(v, tuple) else v) for k, v in self.params)})

    @staticmethod
    def from_json(text: str) -> "ProcessSpec":
        obj = json.loads(text)
        variant = obj["variant"]
        params = obj.get("params", {})
        if variant == "bernoulli":
            return ProcessSpec.bernoulli(params["p"])
        if variant == "deleted_balls":
            return ProcessSpec.deleted_balls(params["radii"], params["probs"])
        if variant == "percolation_cluster":
            return ProcessSpec.percolation_cluster(params["p"])
        if variant == "explicit":
            return ProcessSpec.explicit(params["sites"])
        raise ValueError(f"unknown spec variant {variant!r}")

    @staticmethod
    def parse(text: str) -> "ProcessSpec":
        """Parse compact CLI syntax, e.g. 'bernoulli:p=0.5'."""
        if text.strip().startswith("{"):
            return ProcessSpec.from_json(text)
        variant, _, rest = text.partition(":")
        kv = {}
        if rest:
            for item in rest.split(","):
                k, _, v = item.partition("=")
                kv[k.strip()] = v.strip()
        if variant == "bernoulli":
            return ProcessSpec.bernoulli(float(kv["p"]))
        if variant == "percolation_cluster":
            return ProcessSpec.percolation_cluster(float(kv["p"]))
        if variant == "deleted_balls":
            radii = [int(x) for x in kv["radii"].split("+")]
            probs = [float(x) for x in kv["probs"].split("+")]
            return ProcessSpec.deleted_balls(radii, probs)
        if variant == "explicit":
            sites = [tuple(int(c) for c in s.split("."))
                     for s in kv["sites"].split("+")]
            return ProcessSpec.explicit(sites)
        raise ValueError(f"unknown spec variant {variant!r}")


@dataclass(frozen=True, eq=False)
class Environment:
    """One realization of the point process on a torus window.

    occupancy is a boolean array of shape ``window.sides``; immutable by
    convention (the array is flagged read-only at construction).
    """

    window: LatticeWindow
    occupancy: np.ndarray
    origin_conditioned: bool = False
    strict_validated: bool = False
    spec_id: str = ""
    seed: int = 0

    def __post_init__(self):
        occ = np.ascontiguousarray(self.occupancy, dtype=bool)
        occ.setflags(write=False)
        object.__setattr__(self, "occupancy", occ)
        if occ.shape != self.window.sides:
            raise ValueError("occupancy shape does not match window sides")
        if self.origin_conditioned and not occ[(0,) * self.window.d]:
            raise ValidationError("origin-conditioned environment with empty origin")

    def __eq__(self, other):
        if not isinstance(other, Environment):
            return NotImplemented
        return (self.window == other.window
                and self.origin_conditioned == other.origin_conditioned
                and self.strict_validated == other.strict_validated
                and self.seed == other.seed
                and np.array_equal(self.occupancy, other.occupancy))

    @property
    def d(self) -> int:
        return self.window.d

    @property
    def n_occupied(self) -> int:
        return int(self.occupancy.sum())

    def occupied(self, v: Sequence[int]) -> bool:
        return bool(self.occupancy[self.window.wrap(v)])


# ---------------------------------------------------------------------------
# sampling

_REJECTION_BUDGET = 10 ** 6
_STRICT_RETRIES = 64


def _rng(seed: int, stream: int = 0) -> np.random.Generator:
    # counter-based generator: sampling is a pure function of (seed, stream)
    return np.random.Generator(np.random.Philox(key=[seed & (2 ** 64 - 1),
                                                     stream & (2 ** 64 - 1)]))


def _sample_bernoulli(spec, window, seed, condition):
    p = spec.param("p")
    occ = _rng(seed).random(window.sides) < p
    if condition:
        occ[(0,) * window.d] = True  # exact conditioning by independence
    return occ


def _sample_deleted_balls(spec, window, seed, condition):
    radii = spec.param("radii")
    probs = spec.param("probs")
    expected_deleted = sum(q * (2 * r + 1) ** window.d
                           for r, q in zip(radii, probs)) * window.volume
    if expected_deleted > window.volume:
        import warnings
        warnings.warn("deleted-balls parameters expect more deleted volume "
                      "than the window holds; occupancy may be very sparse")
    rng = _rng(seed)
    for attempt in range(_REJECTION_BUDGET):
        occ = np.ones(window.sides, dtype=bool)
        for r, q in zip(radii, probs):
            centers = np.argwhere(rng.random(window.sides) < q)
            if centers.size == 0:
                continue
            ball = np.argwhere(np.ones((2 * r + 1,) * window.d, dtype=bool)) - r
            pts = (centers[:, None, :] + ball[None, :, :]).reshape(-1, window.d)
            pts %= np.array(window.sides)
            occ[tuple(pts.T)] = False
        if not condition or occ[(0,) * window.d]:
            return occ
        rng = _rng(seed, stream=attempt + 1)
    raise RejectionBudgetError("could not condition deleted-balls sample on the origin")


class _UnionFind:
    def __init__(self, n):
        self.parent = np.arange(n)
        self.rank = np.zeros(n, dtype=np.int8)

    def find(self, a):
        p = self.parent
        root = a
        while p[root] != root:
            root = p[root]
        while p[a] != root:
            p[a], a = root, p[a]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1


def _sample_percolation(spec, window, seed, condition):
    p = spec.param("p")
    n = window.volume
    sides = np.array(window.sides)
    for attempt in range(_REJECTION_BUDGET):
        rng = _rng(seed, stream=attempt)
        uf = _UnionFind(n)
        idx = np.arange(n).reshape(window.sides)
        for axis in range(window.d):
            open_edges = rng.random(window.sides) < p
            shifted = np.roll(idx, -1, axis=axis)
            a = idx[open_edges]
            b = shifted[open_edges]
            for x, y in zip(a.ravel(), b.ravel()):
                uf.union(int(x), int(y))
        roots = np.fromiter((uf.find(i) for i in range(n)), dtype=np.int64, count=n)
        counts = np.bincount(roots, minlength=n)
        biggest = int(counts.argmax())
        occ = (roots == biggest).reshape(window.sides)
        if not condition or occ[(0,) * window.d]:
            return occ
    raise RejectionBudgetError("could not condition percolation cluster on the origin")


def _sample_explicit(spec, window, seed, condition):
    occ = np.zeros(window.sides, dtype=bool)
    for s in spec.param("sites"):
        if len(s) != window.d:
            raise ValueError("explicit site dimension mismatch")
        occ[window.wrap(s)] = True
    if condition and not occ[(0,) * window.d]:
        raise ValidationError("explicit site list does not contain the origin")
    return occ


_SAMPLERS = {
    "bernoulli": _sample_bernoulli,
    "deleted_balls": _sample_deleted_balls,
    "percolation_cluster": _sample_percolation,
    "explicit": _sample_explicit,
}


def strict_valid(occ: np.ndarray) -> bool:
    """Every axis-aligned line holds >= 2 occupied sites."""
    d = occ.ndim
    for axis in range(d):
        counts = occ.sum(axis=axis)
        if (counts < 2).any():
            return False
    return True


def sample(spec: ProcessSpec, window: LatticeWindow, seed: int,
           condition_on_origin: bool = True, strict: bool = True) -> Environment:
    """Draw one environment; deterministic in (spec, window, seed, flags)."""
    sampler = _SAMPLERS.get(spec.variant)
    if sampler is None:
        raise ValueError(f"unknown spec variant {spec.variant!r}")
    last_occ = None
    for retry in range(_STRICT_RETRIES):
        occ = sampler(spec, window, seed + retry * 0x9E3779B97F4A7C15, condition_on_origin)
        last_occ = occ
        if not strict or strict_valid(occ):
            return Environment(window, occ, origin_conditioned=condition_on_origin,
                               strict_validated=strict and strict_valid(occ),
                               spec_id=spec.spec_id, seed=seed)
        if spec.variant == "explicit":
            break  # deterministic; retrying cannot help
    if strict:
        raise ValidationError(
            "strict validation failed: some axis line has fewer than 2 occupied sites")
    return Environment(window, last_occ, origin_conditioned=condition_on_origin,
                       strict_validated=False, spec_id=spec.spec_id, seed=seed)


def full_lattice(window: LatticeWindow) -> Environment:
    occ = np.ones(window.sides, dtype=bool)
    return Environment(window, occ, origin_conditioned=True, strict_validated=True,
                       spec_id="bernoulli:p=1.0", seed=0)


# ---------------------------------------------------------------------------
# gaps and neighbors

def directions(d: int) -> list[tuple[int, int]]:
    """Direction list as (axis, sign) pairs, ordered +e_1, -e_1, +e_2, ..."""
    out = []
    for axis in range(d):
        out.append((axis, +1))
        out.append((axis, -1))
    return out


def gap(env: Environment, v: Sequence[int], direction: tuple[int, int]) -> int:
    """Least k > 0 with v + k*e occupied (modular scan along the axis).

    If v is the only occupied site on its line the degenerate gap L
    (self-neighbor under wrap) is returned.
    """
    axis, sign = direction
    v = env.window.wrap(v)
    L = env.window.sides[axis]
    line_index = list(v)
    for k in range(1, L + 1):
        line_index[axis] = (v[axis] + sign * k) % L
        if env.occupancy[tuple(line_index)]:
            return k
    raise ValidationError("axis line contains no occupied site at all")


def neighbors(env: Environment, v: Sequence[int]):
    """The 2d coordinate nearest neighbors of occupied v.

    Returns a list of (point, (axis, sign), gap) triples, one per direction.
    """
    v = env.window.wrap(v)
    if not env.occupancy[v]:
        raise ValueError("neighbors requested at an unoccupied site")
    out = []
    for direction in directions(env.d):
        axis, sign = direction
        k = gap(env, v, direction)
        u = list(v)
        u[axis] = (v[axis] + sign * k) % env.window.sides[axis]
        out.append((tuple(u), direction, k))
    return out


def shift(env: Environment, x: Sequence[int]) -> Environment:
    """Translate so x becomes the origin: shifted(y) = occupancy(x + y)."""
    occ = env.occupancy
    for axis, c in enumerate(x):
        occ = np.roll(occ, -int(c), axis=axis)
    return Environment(env.window, occ, origin_conditioned=False,
                       strict_validated=env.strict_validated,
                       spec_id=env.spec_id, seed=env.seed)


def gap_tables(env: Environment) -> tuple[np.ndarray, np.ndarray]:
    """Per-site forward/backward gaps along every axis, fully vectorized.

    Returns (fwd, bwd), each of shape (d,) + sides, with
    fwd[i][v] = min{k>0 : v + k e_i occupied} and likewise backward.
    Defined at every site (occupied or not); sites on a line whose only
    occupied point is the site itself get the degenerate value L.
    """
    occ = env.occupancy
    d = occ.ndim
    fwd = np.empty((d,) + occ.shape, dtype=np.int32)
    bwd = np.empty((d,) + occ.shape, dtype=np.int32)
    for axis in range(d):
        moved = np.moveaxis(occ, axis, -1)
        L = moved.shape[-1]
        lines = moved.reshape(-1, L)
        if not lines.any(axis=1).all():
            raise ValidationError("axis line with no occupied site")
        doubled = np.concatenate([lines, lines], axis=1)
        pos = np.where(doubled, np.arange(2 * L)[None, :], 4 * L)
        # smallest occupied index >= j, per line
        nxt = np.minimum.accumulate(pos[:, ::-1], axis=1)[:, ::-1]
        f = (nxt[:, 1:L + 1] - np.arange(L)[None, :]).astype(np.int32)
        fl = np.moveaxis(f.reshape(moved.shape), -1, axis)
        fwd[axis] = fl
        # backward gap = forward gap of the axis-reversed occupancy
        rlines = lines[:, ::-1]
        rdoubled = np.concatenate([rlines, rlines], axis=1)
        rpos = np.where(rdoubled, np.arange(2 * L)[None, :], 4 * L)
        rnxt = np.minimum.accumulate(rpos[:, ::-1], axis=1)[:, ::-1]
        b = (rnxt[:, 1:L + 1] - np.arange(L)[None, :]).astype(np.int32)
        bl = np.moveaxis(b[:, ::-1].reshape(moved.shape), -1, axis)
        bwd[axis] = bl
    return fwd, bwd


# ---------------------------------------------------------------------------
# binary persistence: magic "DPP1", u8 d, d*u32 LE sides, u8 flags,
# u64 seed, bit-packed occupancy, u32 crc32 of the packed payload.

_MAGIC = b"DPP1"


def save(env: Environment) -> bytes:
    header = _MAGIC + struct.pack("<B", env.d)
    header += struct.pack(f"<{env.d}I", *env.window.sides)
    flags = (1 if env.origin_conditioned else 0) | (2 if env.strict_validated else 0)
    header += struct.pack("<B", flags)
    header += struct.pack("<Q", env.seed & (2 ** 64 - 1))
    payload = np.packbits(env.occupancy.ravel()).tobytes()
    return header + payload + struct.pack("<I", zlib.crc32(payload))


def load(data: bytes, strict: bool = False) -> Environment:
    if len(data) < 4 or data[:4] != _MAGIC:
        raise FormatError("bad magic: not a DPP1 environment file")
    off = 4
    (d,) = struct.unpack_from("<B", data, off)
    off += 1
    if d < 1 or d > 16:
        raise FormatError(f"dimension overflow: d={d} outside [1, 16]")
    if len(data) < off + 4 * d + 9:
        raise FormatError("truncated header")
    sides = struct.unpack_from(f"<{d}I", data, off)
    off += 4 * d
    (flags,) = struct.unpack_from("<B", data, off)
    off += 1
    (seed,) = struct.unpack_from("<Q", data, off)
    off += 8
    window = LatticeWindow(sides)
    nbits = window.volume
    nbytes = (nbits + 7) // 8
    if len(data) != off + nbytes + 4:
        raise FormatError("truncated or oversized payload")
    payload = data[off:off + nbytes]
    (crc,) = struct.unpack_from("<I", data, off + nbytes)
    if crc != zlib.crc32(payload):
        raise FormatError("payload checksum mismatch")
    occ = np.unpackbits(np.frombuffer(payload, dtype=np.uint8),
                        count=nbits).astype(bool).reshape(window.sides)
    env = Environment(window, occ,
                      origin_conditioned=bool(flags & 1),
                      strict_validated=bool(flags & 2),
                      seed=seed)
    if strict and not strict_valid(occ):
        raise ValidationError("loaded environment fails strict validation")
    return env
