"""Gauss Tools Module

Karhunen-Loève expansion of the integrated noise W^sigma(t) = int_0^t sigma dW
and the small-ball constants of Gaussian Markov processes.

- kl_expand: trapezoid-weighted Nyström eigensolve of the covariance kernel
  K(s, t) = int_0^{min(s, t)} sigma(u)^2 du
- lambda1 / kappa_p: the variational constant of the L^p small-ball rate
- small_ball_constant: lim eps^2 ln P(||X||_p <= eps) for X = H(t) W(G(t)/H(t))
- small_ball_bound_rho: the lattice-wide lower bound -kappa_2 C_rho^2 M^2
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.linalg import eigh, eigh_tridiagonal
from scipy.stats import norm

from config import CONFIG
from errors import FactorizationError, ResolutionError
from sde_engine import make_generator

logger = logging.getLogger(__name__)

Profile = Union[float, Callable]


def _sample(profile: Profile, t: np.ndarray) -> np.ndarray:
    """Evaluate a scalar or callable time profile on a grid."""
    if callable(profile):
        return np.broadcast_to(np.asarray(profile(t), dtype=float), t.shape).copy()
    return np.full(t.shape, float(profile))


def trapezoid_weights(n: int, dt: float) -> np.ndarray:
    w = np.full(n, dt)
    w[0] = w[-1] = 0.5 * dt
    return w


# ──────────────────────────────────────────────────────────────
# 🎯 Bernoulli estimates with Wilson intervals
# ──────────────────────────────────────────────────────────────
def wilson_interval(hits: int, n: int, confidence: float = 0.95):
    """
    Wilson score interval for a binomial proportion.

    With zero hits the upper end is the exact one-sided bound
    1 - (1 - confidence)^(1/n).
    """
    if n < 1:
        raise ValueError("a proportion needs at least one sample")
    if hits == 0:
        return 0.0, 1.0 - (1.0 - confidence) ** (1.0 / n)
    z = norm.ppf(0.5 + 0.5 * confidence)
    p = hits / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z / denom * math.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n))
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class ProbabilityEstimate:
    """Monte Carlo estimate of an event probability."""

    p_hat: float
    ci_low: float
    ci_high: float
    hits: int
    samples: int
    low_confidence: bool

    @classmethod
    def from_counts(cls, hits: int, samples: int, confidence: float = 0.95, **extra):
        lo, hi = wilson_interval(hits, samples, confidence)
        return cls(hits / samples, lo, hi, int(hits), int(samples), hits == 0, **extra)

    @property
    def log_p(self) -> float:
        return math.log(self.p_hat) if self.p_hat > 0 else -math.inf

    def as_dict(self) -> dict:
        return {
            "p_hat": self.p_hat,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "hits": self.hits,
            "n": self.samples,
            "low_confidence": self.low_confidence,
        }


# ──────────────────────────────────────────────────────────────
# 🌊 Karhunen-Loève expansion
# ──────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class KLBasis:
    """
    Leading eigenpairs of the covariance operator on a uniform grid.

    Attributes:
        grid: n sample times on [0, T]
        weights: trapezoid quadrature weights of the grid
        eigenvalues: lambda_j^2, descending and nonnegative
        eigenfunctions: array (k, n), orthonormal in the weighted inner product
        trace: int_0^T K(t, t) dt
    """

    grid: np.ndarray
    weights: np.ndarray
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    trace: float

    @property
    def k(self) -> int:
        return self.eigenvalues.size

    def gram(self) -> np.ndarray:
        return (self.eigenfunctions * self.weights) @ self.eigenfunctions.T

    def project(self, h) -> np.ndarray:
        """Coefficients <h, l_j> of grid samples ``h`` (last axis = time)."""
        return np.asarray(h, dtype=float) @ (self.eigenfunctions * self.weights).T

    def synthesize(self, xi) -> np.ndarray:
        """Paths sum_j lambda_j xi_j l_j(t) from standard normal coefficients (..., k)."""
        return (np.asarray(xi) * np.sqrt(self.eigenvalues)) @ self.eigenfunctions

    def tail_variance(self) -> float:
        """Expected squared norm carried by the discarded modes."""
        return max(self.trace - float(np.sum(self.eigenvalues)), 0.0)


def integrated_kernel(sigma: Profile, grid: np.ndarray) -> np.ndarray:
    """Covariance matrix K(t_i, t_j) = int_0^{min} sigma^2 on the grid."""
    cumulative = cumulative_trapezoid(_sample(sigma, grid) ** 2, grid, initial=0.0)
    index = np.arange(grid.size)
    return cumulative[np.minimum.outer(index, index)]


def kl_expand(sigma: Profile, T: float, n: int, k: Optional[int] = None) -> KLBasis:
    """
    Karhunen-Loève basis of W^sigma on [0, T] by the Nyström method.

    The integral operator is discretized with trapezoid weights W and the
    symmetric matrix W^1/2 K W^1/2 is diagonalized; eigenfunctions are
    W^-1/2 v, normalized so their first interior sample is positive.

    Args:
        sigma: diffusion coefficient, a constant or a callable of t
        T: time horizon
        n: grid size (including both endpoints)
        k: number of modes, default all n

    Raises:
        ResolutionError: if k > n or n < 2
    """
    k = n if k is None else int(k)
    if n < 2 or k > n or k < 1:
        raise ResolutionError(f"cannot extract {k} modes from a grid of {n} points")
    if n < 4 * k and k != n:
        logger.warning("kl_expand: grid of %d points is coarse for %d modes", n, k)

    # Nystrom discretization on a uniform trapezoid grid
    grid = np.linspace(0.0, T, n)
    weights = trapezoid_weights(n, grid[1] - grid[0])
    kernel = integrated_kernel(sigma, grid)
    # symmetrize with the square-root weights before eigh
    root_w = np.sqrt(weights)
    values, vectors = eigh(root_w[:, None] * kernel * root_w[None, :], subset_by_index=[n - k, n - 1])
    values, vectors = values[::-1], vectors[:, ::-1]  # Largest first
    functions = (vectors / root_w[:, None]).T
    # Fix each sign so the function starts upward
    signs = np.where(functions[:, 1] < 0, -1.0, 1.0)
    functions = functions * signs[:, None]

    trace = float(np.dot(weights, np.diagonal(kernel)))
    logger.debug("kl_expand: n=%d k=%d leading eigenvalue %.6g", n, k, values[0])
    return KLBasis(grid, weights, np.clip(values, 0.0, None), functions, trace)


# ──────────────────────────────────────────────────────────────
# 📐 Small-ball constants
# ──────────────────────────────────────────────────────────────
def _ground_state(p, radius, points):
    x = np.linspace(-radius, radius, points + 2)[1:-1]
    h = x[1] - x[0]
    diag = 1.0 / h**2 + np.abs(x) ** p
    off = np.full(points - 1, -0.5 / h**2)
    return float(eigh_tridiagonal(diag, off, select="i", select_range=(0, 0), eigvals_only=True)[0])


def lambda1(p: float, radius: Optional[float] = None, mesh: Optional[int] = None) -> float:
    """
    Ground-state energy of -1/2 phi'' + |x|^p phi on the line.

    Finite differences on [-R, R] with Dirichlet ends, followed by one
    Richardson extrapolation in the mesh width. Without an explicit radius,
    R is chosen so that R^p exceeds 50 times the eigenvalue estimate.

    Args:
        p: exponent, p >= 1
        radius: half-width of the truncated domain
        mesh: number of mesh intervals, default CONFIG["LAMBDA1_MESH"]
    """
    if not p >= 1:
        raise ValueError(f"lambda1 needs p >= 1, got {p}")
    mesh = int(mesh or CONFIG["LAMBDA1_MESH"])
    # an odd number of interior points keeps x = 0 on the mesh
    points = mesh - 1 if mesh % 2 == 0 else mesh

    def solve(R):
        coarse = _ground_state(p, R, points)
        fine = _ground_state(p, R, 2 * points + 1)
        return (4.0 * fine - coarse) / 3.0

    if radius is not None:
        return solve(float(radius))
    estimate = 1.0
    R = (50.0 * estimate) ** (1.0 / p)
    value = solve(R)
    if value > estimate:
        R = (50.0 * value) ** (1.0 / p)
        value = solve(R)
    return value


def kappa_p(p: float, lam: Optional[float] = None) -> float:
    """kappa_p = 2^(2/p) p (lambda1(p) / (2 + p))^((2 + p) / p)."""
    lam = lambda1(p) if lam is None else lam
    return 2.0 ** (2.0 / p) * p * (lam / (2.0 + p)) ** ((2.0 + p) / p)


@dataclass(frozen=True)
class SmallBallReport:
    """Small-ball rate of a Gaussian Markov process in L^p[0, 1]."""

    kappa_p: float
    lambda1_p: float
    limit_constant: float
    p: float = 2.0

    def as_dict(self) -> dict:
        return {"p": self.p, "kappa_p": self.kappa_p, "lambda1_p": self.lambda1_p,
                "limit_constant": self.limit_constant}


def _rate_integral(integrand, t, p):
    r = p / (2.0 + p)
    return float(trapezoid(np.abs(integrand) ** r, t)) ** (1.0 / r)


def small_ball_constant(G: Profile, H: Profile, p: float = 2.0, n: Optional[int] = None,
                        lam: Optional[float] = None) -> SmallBallReport:
    """
    lim eps^2 ln P(||X||_p <= eps) for the Markov process X(t) = H(t) W(G(t)/H(t)).

    limit = -kappa_p (int_0^1 (G'H - H'G)^(p/(2+p)) dt)^((2+p)/p), with the
    derivatives taken by second-order differences on an n-point grid.

    Raises:
        FactorizationError: if G/H is not strictly increasing on (0, 1)
    """
    n = int(n or CONFIG["SMALL_BALL_GRID"])
    t = np.linspace(0.0, 1.0, n)
    g, h = _sample(G, t), _sample(H, t)
    if np.any(h[1:-1] == 0):
        raise FactorizationError("H vanishes inside (0, 1)")
    ratio = g[1:-1] / h[1:-1]
    if not np.all(np.diff(ratio) > 0):
        raise FactorizationError("G/H must be strictly increasing on (0, 1)")

    # G'H - H'G by second-order differences
    wronskian = np.gradient(g, t, edge_order=2) * h - np.gradient(h, t, edge_order=2) * g
    lam = lambda1(p) if lam is None else lam
    kappa = kappa_p(p, lam)
    return SmallBallReport(kappa, lam, -kappa * _rate_integral(wronskian, t, p), p)


def small_ball_constant_markov(f: Profile, p: float = 2.0, n: Optional[int] = None,
                               lam: Optional[float] = None) -> SmallBallReport:
    """Small-ball constant of X(t) = int_0^t f dW, i.e. -kappa_p (int |f|^(2p/(2+p)))^((2+p)/p)."""
    n = int(n or CONFIG["SMALL_BALL_GRID"])
    t = np.linspace(0.0, 1.0, n)
    lam = lambda1(p) if lam is None else lam
    kappa = kappa_p(p, lam)
    return SmallBallReport(kappa, lam, -kappa * _rate_integral(_sample(f, t) ** 2, t, p), p)


def small_ball_bound_rho(noise, w, refined: bool = False, T: float = 1.0,
                         kappa2: Optional[float] = None) -> float:
    """
    Lower bound on lim eps^2 ln P(||W^sigma||_{L^2_rho} <= eps) for the lattice noise.

    Returns -kappa_2 C_rho^2 M^2 with M the noise's upper ellipticity bound.
    With ``refined=True`` the per-site form -kappa_2 C_rho sum_j rho_j
    (int_0^T sigma_j)^2 is returned, sigma_j the larger channel coefficient
    of site j; on T = 1 it is never below the plain bound.
    """
    w.require(noise.n)
    kappa2 = kappa_p(2.0) if kappa2 is None else kappa2
    if not refined:
        return -kappa2 * w.c_rho**2 * noise.upper**2
    t = np.linspace(0.0, T, CONFIG["SMALL_BALL_GRID"])
    sigma = np.maximum(noise.sigma_q_at(t), noise.sigma_p_at(t))
    per_site = trapezoid(sigma, t, axis=0) ** 2
    return -kappa2 * w.c_rho * float(np.sum(w.rho * per_site))


def small_ball_probability_mc(basis: KLBasis, radius: float, n: int, seed: int,
                              eps: float = 1.0, chunk: Optional[int] = None) -> ProbabilityEstimate:
    """
    P(||eps W^sigma||_{L^2} <= radius) by sampling KL coefficients.

    ||eps W||^2 = eps^2 (sum_j lambda_j^2 xi_j^2 + tail), the tail replaced by
    its mean. Chunks use generators keyed by (seed, chunk index).
    """
    if not radius > 0 or not eps > 0:
        raise ValueError("radius and eps must be positive")
    chunk = int(chunk or CONFIG["MC_BLOCK_SIZE"])
    tail = basis.tail_variance()  # Variance left out by the truncation
    hits, done, index = 0, 0, 0  # Running totals over the blocks
    while done < n:
        size = min(chunk, n - done)
        xi = make_generator(seed, index).standard_normal((size, basis.k))
        sq = eps**2 * (xi**2 @ basis.eigenvalues + tail)
        hits += int(np.count_nonzero(sq <= radius**2))
        done += size
        index += 1
    return ProbabilityEstimate.from_counts(hits, n)
