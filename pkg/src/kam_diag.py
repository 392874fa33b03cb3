"""KAM Diagnostics Module

Small divisors <k, omega> + <l, Omega> over the class

    Z = {(k, l) != 0 : |k|_1 <= K, |l|_1 <= 2}

and the checks built on them: single divisor margins against the
threshold alpha <l>_d / A_k with A_k = 1 + |k|^tau and
<l>_d = max(1, |sum_j j^d l_j|), Monte Carlo estimates of the resonant
measure of a parameter box, Diophantine scans of action grids and the
sampled lipeomorphism check of the frequency map.

Every scan reduces a point to its resonance margin

    min_{(k, l)} |<k, omega> + <l, Omega>| * A_k / <l>_d

so the point is admissible at alpha exactly when its margin is >= alpha.
Admissible sets are nested in alpha by construction.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from errors import ConfigurationError, InsufficientDataError, OutOfClassError
from gauss_tools import ProbabilityEstimate
from sde_engine import make_generator

logger = logging.getLogger(__name__)


# ──────────────────────────────────────────────────────────────
# 🔢 Integer lattice balls
# ──────────────────────────────────────────────────────────────
def lattice_ball_size(dim: int, radius: int) -> int:
    """Number of v in Z^dim with |v|_1 <= radius: sum_i 2^i C(dim, i) C(radius, i)."""
    if dim < 0 or radius < 0:
        raise ValueError("dimension and radius must be non-negative")
    return sum(2**i * math.comb(dim, i) * math.comb(radius, i) for i in range(min(dim, radius) + 1))


def lattice_ball(dim: int, radius: int) -> np.ndarray:
    """All v in Z^dim with |v|_1 <= radius, shape (count, dim), zero vector first."""
    if dim == 0:
        return np.zeros((1, 0), dtype=int)
    rows = []

    def extend(prefix, left):
        if len(prefix) == dim:
            rows.append(prefix)
            return
        extend(prefix + [0], left)
        for v in range(1, left + 1):
            extend(prefix + [v], left - v)
            extend(prefix + [-v], left - v)

    extend([], radius)
    return np.array(rows, dtype=int).reshape(-1, dim)


def divisor_class_size(n: int, k_cutoff: int, normal: int, l_max: int = 2) -> int:
    return lattice_ball_size(n, k_cutoff) * lattice_ball_size(normal, l_max) - 1


def enumerate_divisors(n: int, k_cutoff: int, normal: int, l_max: int = 2):
    """
    Every (k, l) != 0 with |k|_1 <= k_cutoff over n tangential frequencies and
    |l|_1 <= l_max over ``normal`` normal frequencies.

    Returns:
        tuple: (ks, ls) integer arrays of shape (P, n) and (P, normal)

    Raises:
        OutOfClassError: if l_max > 2
        ConfigurationError: if the class is empty
    """
    if l_max > 2:
        raise OutOfClassError(f"|l| is limited to 2, got l_max={l_max}")
    ks, ls = lattice_ball(n, k_cutoff), lattice_ball(normal, l_max)
    ki, li = np.meshgrid(np.arange(len(ks)), np.arange(len(ls)), indexing="ij")
    ki, li = ki.ravel()[1:], li.ravel()[1:]
    if ki.size == 0:
        raise ConfigurationError("the divisor enumeration is empty; raise k_cutoff or l_max")
    return ks[ki], ls[li]


class DivisorTable:
    """Factored (k, l) enumeration with per-vector A_k and <l>_d."""

    def __init__(self, n: int, k_cutoff: int, normal_indices: Sequence[int], tau: float,
                 d: float = 2.0, l_max: int = 2):
        if l_max > 2:
            raise OutOfClassError(f"|l| is limited to 2, got l_max={l_max}")
        self.normal_indices = np.asarray(normal_indices, dtype=float)
        self.ks = lattice_ball(n, k_cutoff)
        self.ls = lattice_ball(len(self.normal_indices), l_max)
        if len(self.ks) * len(self.ls) <= 1:
            raise ConfigurationError("the divisor enumeration is empty; raise k_cutoff or l_max")
        self.a_k = 1.0 + np.sum(np.abs(self.ks), axis=1) ** tau
        self.l_d = np.maximum(1.0, np.abs(self.ls @ self.normal_indices**d))
        self.size = len(self.ks) * len(self.ls) - 1

    def margins(self, omega: np.ndarray, Omega: np.ndarray, chunk: int = 64) -> np.ndarray:
        """Resonance margin of each row of ``omega`` (S, n) with ``Omega`` (S, m) or (m,)."""
        omega = np.atleast_2d(np.asarray(omega, dtype=float))
        Omega = np.broadcast_to(np.asarray(Omega, dtype=float), (omega.shape[0], len(self.normal_indices)))
        scale = self.a_k[:, None] / self.l_d[None, :]
        out = np.empty(omega.shape[0])
        for start in range(0, omega.shape[0], chunk):
            kw = omega[start : start + chunk] @ self.ks.T
            lw = Omega[start : start + chunk] @ self.ls.T
            ratio = np.abs(kw[:, :, None] + lw[:, None, :]) * scale
            ratio[:, 0, 0] = np.inf
            out[start : start + chunk] = ratio.reshape(ratio.shape[0], -1).min(axis=1)
        return out


# ──────────────────────────────────────────────────────────────
# ➗ Single divisors
# ──────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class DivisorQuery:
    """
    One element (k, l) of the divisor class with its threshold parameters.

    ``l`` is dense over the normal modes whose indices are passed to
    :func:`small_divisor_margin`.
    """

    k: tuple
    l: tuple
    tau: float
    alpha: float
    d: float = 2.0

    def __post_init__(self):
        k = tuple(int(v) for v in np.ravel(self.k))
        l = tuple(int(v) for v in np.ravel(self.l))
        if not any(k) and not any(l):
            raise OutOfClassError("(k, l) = (0, 0) is not a divisor")
        if sum(abs(v) for v in l) > 2:
            raise OutOfClassError(f"|l| must be at most 2, got l={list(l)}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.tau < len(k) + 1:
            raise ValueError(f"tau must be >= n + 1 = {len(k) + 1}, got {self.tau}")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "l", l)

    @property
    def a_k(self) -> float:
        return 1.0 + float(sum(abs(v) for v in self.k)) ** self.tau


@dataclass(frozen=True)
class DivisorMargin:
    lhs: float
    threshold: float

    @property
    def passed(self) -> bool:
        return self.lhs >= self.threshold

    def as_dict(self) -> dict:
        return {"lhs": self.lhs, "threshold": self.threshold, "pass": self.passed}


def small_divisor_margin(q: DivisorQuery, omega, Omega, normal_indices=None) -> DivisorMargin:
    """
    |<k, omega> + <l, Omega>| against alpha <l>_d / A_k.

    Args:
        q: the divisor and its threshold parameters
        omega: tangential frequencies, length len(q.k)
        Omega: normal frequencies, length len(q.l)
        normal_indices: mode index j of each normal frequency, default 1..len(Omega)
    """
    omega = np.asarray(omega, dtype=float)
    Omega = np.asarray(Omega, dtype=float)
    if omega.size != len(q.k) or Omega.size != len(q.l):
        raise OutOfClassError(f"frequency vectors ({omega.size}, {Omega.size}) do not cover "
                              f"k and l ({len(q.k)}, {len(q.l)})")
    j = np.arange(1, Omega.size + 1) if normal_indices is None else np.asarray(normal_indices, dtype=float)
    l = np.array(q.l, dtype=float)
    lhs = abs(float(np.dot(q.k, omega) + np.dot(l, Omega)))
    l_d = max(1.0, abs(float(np.dot(l, j**q.d))))
    return DivisorMargin(lhs, q.alpha * l_d / q.a_k)


# ──────────────────────────────────────────────────────────────
# 🎯 Resonant measure
# ──────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class ResonanceScan:
    """
    Attributes:
        box: parameter box as (low, high) per coordinate
        k_cutoff: bound on |k|_1
        normal_modes: number of normal frequencies, indexed 1..normal_modes
        alphas: alpha ladder
        samples: uniform samples drawn once and shared by every alpha
        tau: exponent of A_k, default n + 2
        d: exponent of <l>_d
    """

    box: tuple
    k_cutoff: int
    normal_modes: int
    alphas: tuple
    samples: int = 100_000
    tau: Optional[float] = None
    d: float = 2.0
    l_max: int = 2

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        if not box or any(not hi > lo for lo, hi in box):
            raise ConfigurationError("the parameter box must be a nonempty product of intervals")
        if self.k_cutoff < 0 or self.normal_modes < 0 or self.samples < 1:
            raise ConfigurationError("k_cutoff, normal_modes must be >= 0 and samples >= 1")
        if any(a < 0 for a in self.alphas):
            raise ConfigurationError("alpha values must be non-negative")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        object.__setattr__(self, "tau", float(len(box) + 2 if self.tau is None else self.tau))

    @property
    def n(self) -> int:
        return len(self.box)

    def table(self) -> DivisorTable:
        return DivisorTable(self.n, self.k_cutoff, np.arange(1, self.normal_modes + 1), self.tau,
                            self.d, self.l_max)


@dataclass(frozen=True)
class ResonanceLevel:
    alpha: float
    estimate: ProbabilityEstimate

    def as_dict(self) -> dict:
        return {"alpha": self.alpha, **self.estimate.as_dict()}


def resonant_measure_mc(scan: ResonanceScan, freq_map: Callable, seed: int = 0,
                        chunk: int = 20_000) -> list:
    """
    Fraction of the box that is resonant at each alpha.

    ``freq_map`` maps a batch of parameters (S, n) to (omega (S, n), Omega
    (S, m) or (m,)). A sample is resonant at alpha when its margin is < alpha.

    Returns:
        list[ResonanceLevel] in ladder order
    """
    table = scan.table()
    lo, hi = (np.array(v) for v in zip(*scan.box))
    margins = []
    for index, start in enumerate(range(0, scan.samples, chunk)):
        size = min(chunk, scan.samples - start)
        xi = lo + (hi - lo) * make_generator(seed, index).random((size, scan.n))
        omega, Omega = freq_map(xi)
        margins.append(table.margins(omega, Omega))
    margins = np.concatenate(margins)
    levels = []
    for alpha in scan.alphas:
        hits = int(np.count_nonzero(margins < alpha))
        levels.append(ResonanceLevel(alpha, ProbabilityEstimate.from_counts(hits, scan.samples)))
        logger.info("resonant fraction at alpha=%g: %d / %d", alpha, hits, scan.samples)
    return levels


@dataclass(frozen=True)
class ResonanceFit:
    mu: float
    log_constant: float
    residuals: np.ndarray
    usable_alphas: tuple

    def as_dict(self) -> dict:
        return {
            "mu": self.mu,
            "log_constant": self.log_constant,
            "residuals": [float(r) for r in self.residuals],
            "usable_alphas": list(self.usable_alphas),
        }


def fit_resonance_exponent(alphas: Sequence[float], fractions: Sequence[float]) -> ResonanceFit:
    """Least squares ln(fraction) = ln c + mu ln(alpha) over levels with a positive fraction."""
    a = np.asarray(alphas, dtype=float)
    f = np.asarray(fractions, dtype=float)
    keep = (a > 0) & (f > 0)
    if np.count_nonzero(keep) < 2:
        raise InsufficientDataError(f"need two levels with resonant samples, got {int(np.count_nonzero(keep))}",
                                    usable=a[keep].tolist())
    x, y = np.log(a[keep]), np.log(f[keep])
    mu, log_c = np.polyfit(x, y, 1)
    return ResonanceFit(float(mu), float(log_c), y - (log_c + mu * x), tuple(float(v) for v in a[keep]))


# ──────────────────────────────────────────────────────────────
# 🕸️ Diophantine scans over action grids
# ──────────────────────────────────────────────────────────────
def action_grid(low, high, points: int) -> np.ndarray:
    """Tensor grid with ``points`` nodes per axis, shape (points**n, n)."""
    low, high = np.atleast_1d(low).astype(float), np.atleast_1d(high).astype(float)
    axes = [np.linspace(lo, hi, points) for lo, hi in zip(low, high)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))


@dataclass(frozen=True)
class DiophantineScan:
    actions: np.ndarray
    margins: np.ndarray
    alpha: float
    tau: float
    divisors: int

    def admissible_at(self, alpha: float) -> np.ndarray:
        return self.margins >= alpha

    @property
    def admissible(self) -> np.ndarray:
        return self.admissible_at(self.alpha)

    @property
    def fraction(self) -> float:
        return float(np.mean(self.admissible))

    def rows(self):
        for point, ok in zip(self.actions, self.admissible):
            yield (*(float(v) for v in point), int(ok))


def diophantine_scan(nf, actions, alpha: float, tau: Optional[float] = None, k_cutoff: int = 6,
                     l_max: int = 2, d: float = 2.0) -> DiophantineScan:
    """
    Action grid points whose normal-form frequencies pass every divisor bound.

    Args:
        nf: NormalForm; normal modes up to its cutoff enter l
        actions: grid of tangential actions, shape (G, n)
        alpha: threshold scale, 0 admits every point
        tau: exponent of A_k, default n + 2
    """
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    tau = float(nf.n + 2 if tau is None else tau)
    table = DivisorTable(nf.n, k_cutoff, nf.normal_modes, tau, d, l_max)
    margins = table.margins(nf.omega(actions), nf.Omega(actions))
    scan = DiophantineScan(actions, margins, float(alpha), tau, table.size)
    logger.info("diophantine scan: %d / %d admissible at alpha=%g over %d divisors",
                int(np.count_nonzero(scan.admissible)), len(actions), alpha, table.size)
    return scan


# ──────────────────────────────────────────────────────────────
# 📐 Lipeomorphism probe
# ──────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class LipeomorphismReport:
    min_quotient: float
    max_quotient: float
    pairs: int
    tolerance: float

    @property
    def near_degenerate(self) -> bool:
        return self.min_quotient <= self.tolerance * max(1.0, self.max_quotient)

    def as_dict(self) -> dict:
        return {
            "min_quotient": self.min_quotient,
            "max_quotient": self.max_quotient,
            "pairs": self.pairs,
            "near_degenerate": self.near_degenerate,
        }


def lipeomorphism_check(freq: Callable, box, pairs: int = 1000, seed: int = 0,
                        tol: float = 1e-6) -> LipeomorphismReport:
    """Sampled |omega(I) - omega(J)| / |I - J| over random pairs in the box."""
    lo, hi = (np.array(v, dtype=float) for v in zip(*box))
    rng = make_generator(seed)
    a = lo + (hi - lo) * rng.random((pairs, lo.size))
    b = lo + (hi - lo) * rng.random((pairs, lo.size))
    quotients = np.linalg.norm(freq(a) - freq(b), axis=1) / np.linalg.norm(a - b, axis=1)
    report = LipeomorphismReport(float(quotients.min()), float(quotients.max()), pairs, tol)
    if report.near_degenerate:
        logger.warning("frequency map is close to degenerate: min quotient %.3e", report.min_quotient)
    return report
