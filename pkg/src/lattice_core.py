"""Lattice Core Module

Truncated weighted lattice phase space used by every other module.

A lattice is an explicit finite box of sites in Z^m. Each site carries a
position q (a circle angle for angular models, a real for mode models) and
a momentum p. Site weights rho define the weighted geometry

    ||u||_rho^2 = sum_i rho_i^2 (d_T(q_i, 0)^2 + p_i^2)

and paths are sampled on uniform time grids, integrated in time with the
trapezoidal rule. All objects are immutable after construction.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.integrate import trapezoid

from errors import DimensionError

TWO_PI = 2.0 * np.pi


# ──────────────────────────────────────────────────────────────
# 🔄 Angle helpers
# ──────────────────────────────────────────────────────────────
def wrap_angle(a):
    """Return the representative of ``a`` in [0, 2π)."""
    r = np.mod(np.asarray(a, dtype=float), TWO_PI)
    # np.mod rounds tiny negative inputs up to exactly 2π
    return np.where(r >= TWO_PI, 0.0, r)


def lift_angle(a):
    """Return the signed representative of ``a`` in [-π, π)."""
    return np.mod(np.asarray(a, dtype=float) + np.pi, TWO_PI) - np.pi


def torus_distance(a, b):
    """Geodesic distance on the circle between angles ``a`` and ``b``.

    Works elementwise on arrays; the result lies in [0, π].
    """
    d = np.mod(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)), TWO_PI)
    out = np.minimum(d, TWO_PI - d)
    return float(out) if np.ndim(out) == 0 else out


def _frozen(values, ndim=None):
    arr = np.array(values, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise DimensionError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


# ──────────────────────────────────────────────────────────────
# ⚖️ Site weights
# ──────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class WeightSequence:
    """Positive site weights on a finite box of Z^m.

    Attributes:
        sites: ordered lattice coordinates, one tuple of ints per site
        rho: weight per site, strictly positive and finite
        c_rho: cached sum of the weights
    """

    sites: tuple
    rho: np.ndarray
    c_rho: float = field(init=False)

    def __post_init__(self):
        sites = tuple(tuple(int(c) for c in s) for s in self.sites)
        rho = _frozen(self.rho, ndim=1)
        if len(sites) != rho.size:
            raise DimensionError(f"{len(sites)} sites but {rho.size} weights")
        if rho.size == 0:
            raise DimensionError("a weight sequence needs at least one site")
        if not np.all(np.isfinite(rho)) or np.any(rho <= 0):
            raise ValueError("site weights must be finite and strictly positive")
        if not math.isfinite(float(np.sum(rho**2))):
            raise ValueError("sum of squared weights overflows")
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "c_rho", math.fsum(rho.tolist()))

    @classmethod
    def box(cls, shape: Sequence[int], decay: float = 0.5, rho=None) -> "WeightSequence":
        """Centered box of sites with weights ``decay ** |i|_1`` unless ``rho`` is given."""
        shape = tuple(int(s) for s in shape)
        if not shape or any(s < 1 for s in shape):
            raise ValueError(f"invalid lattice shape {shape}")
        axes = [range(-(s // 2), s - s // 2) for s in shape]
        sites = tuple(itertools.product(*axes))
        if rho is None:
            rho = [decay ** sum(abs(c) for c in s) for s in sites]
        return cls(sites, rho)

    @classmethod
    def chain(cls, rho: Sequence[float]) -> "WeightSequence":
        """One-dimensional sites 0..n-1 with explicit weights."""
        return cls(tuple((i,) for i in range(len(rho))), rho)

    @property
    def n(self) -> int:
        return self.rho.size

    @property
    def rho_sq(self) -> np.ndarray:
        return self.rho**2

    def scaled(self, factor: float) -> "WeightSequence":
        return WeightSequence(self.sites, self.rho * factor)

    def require(self, n: int) -> None:
        """Raise DimensionError unless this sequence indexes ``n`` sites."""
        if n != self.n:
            raise DimensionError(f"state has {n} sites but weights index {self.n}")

    def neighbor_pairs(self) -> list:
        """Pairs (a, b), a < b, of site indices at l1-distance one."""
        index = {s: k for k, s in enumerate(self.sites)}
        pairs = []
        for a, s in enumerate(self.sites):
            for axis in range(len(s)):
                t = list(s)
                t[axis] += 1
                b = index.get(tuple(t))
                if b is not None:
                    pairs.append((min(a, b), max(a, b)))
        return sorted(pairs)


# ──────────────────────────────────────────────────────────────
# 📍 States and state differences
# ──────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class LatticeState:
    """A (q, p) pair on a finite site set.

    For angular states q is stored in [0, 2π); mode states (``angular=False``)
    store q as a plain real coordinate.
    """

    q: np.ndarray
    p: np.ndarray
    angular: bool = True

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(-1)
        p = _frozen(np.reshape(self.p, -1), ndim=1)
        if q.shape != p.shape:
            raise DimensionError(f"q has {q.size} sites but p has {p.size}")
        if self.angular:
            q = wrap_angle(q)
        object.__setattr__(self, "q", _frozen(q, ndim=1))
        object.__setattr__(self, "p", p)

    @classmethod
    def zeros(cls, n: int, angular: bool = True) -> "LatticeState":
        return cls(np.zeros(n), np.zeros(n), angular)

    @property
    def n(self) -> int:
        return self.q.size

    def q_magnitude(self) -> np.ndarray:
        """Per-site distance of q from the origin (torus distance when angular)."""
        return torus_distance(self.q, 0.0) if self.angular else np.abs(self.q)


@dataclass(frozen=True)
class StateDelta:
    """Tangent vector (dq, dp): a difference of states with angles lifted."""

    dq: np.ndarray
    dp: np.ndarray

    def __post_init__(self):
        dq = _frozen(np.reshape(self.dq, -1), ndim=1)
        dp = _frozen(np.reshape(self.dp, -1), ndim=1)
        if dq.shape != dp.shape:
            raise DimensionError(f"dq has {dq.size} sites but dp has {dp.size}")
        object.__setattr__(self, "dq", dq)
        object.__setattr__(self, "dp", dp)

    @classmethod
    def between(cls, a: LatticeState, b: LatticeState) -> "StateDelta":
        """The difference ``b - a`` with angle increments lifted to [-π, π)."""
        if a.n != b.n:
            raise DimensionError(f"cannot subtract states with {a.n} and {b.n} sites")
        dq = b.q - a.q
        if a.angular or b.angular:
            dq = lift_angle(dq)
        return cls(dq, b.p - a.p)

    @property
    def n(self) -> int:
        return self.dq.size


def weighted_norm(u: LatticeState, w: WeightSequence) -> float:
    """Weighted norm sqrt(sum_i rho_i^2 (d_T(q_i, 0)^2 + p_i^2)).

    Raises:
        DimensionError: if the state and the weights index different site sets
    """
    w.require(u.n)
    return math.sqrt(float(np.sum(w.rho_sq * (u.q_magnitude() ** 2 + u.p**2))))


def weighted_inner(u: StateDelta, v: StateDelta, w: WeightSequence) -> float:
    """Weighted inner product of two tangent vectors.

    Only defined on differences; the metric between states goes through
    ``torus_distance`` instead.
    """
    w.require(u.n)
    w.require(v.n)
    return float(np.sum(w.rho_sq * (u.dq * v.dq + u.dp * v.dp)))


def delta_norm(u: StateDelta, w: WeightSequence) -> float:
    return math.sqrt(max(weighted_inner(u, u, w), 0.0))


# ──────────────────────────────────────────────────────────────
# 🛤️ Paths on uniform time grids
# ──────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class PathGrid:
    """A trajectory sampled at K+1 uniform times on [t0, t1].

    Attributes:
        t0, t1: end times, t1 > t0
        q, p: node arrays of shape (K+1, n)
        angular: whether q is circle valued
    """

    t0: float
    t1: float
    q: np.ndarray
    p: np.ndarray
    angular: bool = True

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        p = _frozen(self.p, ndim=2)
        if q.ndim != 2 or q.shape != p.shape:
            raise DimensionError(f"q shape {q.shape} does not match p shape {p.shape}")
        if q.shape[0] < 2:
            raise ValueError("a path needs K >= 1, i.e. at least two nodes")
        if not float(self.t1) > float(self.t0):
            raise ValueError(f"t1={self.t1} must exceed t0={self.t0}")
        if self.angular:
            q = wrap_angle(q)
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "t1", float(self.t1))
        object.__setattr__(self, "q", _frozen(q, ndim=2))
        object.__setattr__(self, "p", p)

    @classmethod
    def from_states(cls, t0: float, t1: float, nodes: Sequence[LatticeState]) -> "PathGrid":
        angular = nodes[0].angular
        return cls(t0, t1, np.stack([s.q for s in nodes]), np.stack([s.p for s in nodes]), angular)

    @classmethod
    def constant(cls, state: LatticeState, t0: float, t1: float, K: int) -> "PathGrid":
        q = np.tile(state.q, (K + 1, 1))
        p = np.tile(state.p, (K + 1, 1))
        return cls(t0, t1, q, p, state.angular)

    @property
    def K(self) -> int:
        return self.q.shape[0] - 1

    @property
    def n(self) -> int:
        return self.q.shape[1]

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.K

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.K + 1)

    def node(self, k: int) -> LatticeState:
        return LatticeState(self.q[k], self.p[k], self.angular)

    def nodes(self) -> Iterator[LatticeState]:
        for k in range(self.K + 1):
            yield self.node(k)

    def unwrapped_q(self) -> np.ndarray:
        """Continuous lift of q: start node as stored, increments lifted to [-π, π)."""
        if not self.angular:
            return np.array(self.q)
        steps = lift_angle(np.diff(self.q, axis=0))
        return np.vstack([self.q[:1], self.q[:1] + np.cumsum(steps, axis=0)])

    def with_arrays(self, q, p) -> "PathGrid":
        return PathGrid(self.t0, self.t1, q, p, self.angular)

    def same_grid(self, other: "PathGrid") -> bool:
        return (
            self.K == other.K
            and self.n == other.n
            and math.isclose(self.t0, other.t0)
            and math.isclose(self.t1, other.t1)
        )


def state_sq_norms(dq, dp, rho_sq) -> np.ndarray:
    """Squared weighted norms of (possibly batched) differences along the last axis."""
    return np.sum(rho_sq * (np.square(dq) + np.square(dp)), axis=-1)


def path_norm(path: PathGrid, w: WeightSequence) -> float:
    """L^2([t0, t1], l^2_rho) norm of a path by the trapezoidal rule."""
    w.require(path.n)
    qmag = torus_distance(path.q, 0.0) if path.angular else np.abs(path.q)
    values = state_sq_norms(qmag, path.p, w.rho_sq)
    return math.sqrt(max(float(trapezoid(values, dx=path.dt)), 0.0))


def path_distance(a: PathGrid, b: PathGrid, w: WeightSequence) -> float:
    """L^2_rho distance between two paths sharing a grid."""
    if not a.same_grid(b):
        raise DimensionError("paths do not share a time grid and site set")
    w.require(a.n)
    dq = torus_distance(a.q, b.q) if (a.angular or b.angular) else a.q - b.q
    values = state_sq_norms(dq, a.p - b.p, w.rho_sq)
    return math.sqrt(max(float(trapezoid(values, dx=a.dt)), 0.0))
