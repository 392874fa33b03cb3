"""LDP Monte Carlo Module

Large-deviation checks for the small-noise lattice system.

- rate_function: J(psi) = 1/2 OM action, +inf unless psi starts at x0
- tube_probability_mc: P(||X^eps - psi||_{L^2_rho} <= delta) by simulation
- gaussian_oracle_tube_prob: the same probability for H = 0, computed from
  the Karhunen-Loève coefficients of the integrated noise
- ldp_estimate / ldp_scaling_fit: the eps ladder and the affine
  extrapolation of eps^2 ln P to eps = 0
- tube_rate_infimum: projected descent for inf of J over the tube
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import partial
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.linalg import solve_banded

from config import CONFIG
from errors import InsufficientDataError, UnsupportedModelError
from gauss_tools import ProbabilityEstimate, kl_expand, trapezoid_weights
from hamiltonian_models import FreeModel
from lattice_core import LatticeState, PathGrid, WeightSequence, torus_distance
from om_path import discrete_action, discrete_gradient, om_action
from sde_engine import SimConfig, make_generator, run_blocks

logger = logging.getLogger(__name__)

# generator streams are keyed (seed, ORACLE_STREAM, chunk) for the oracle
ORACLE_STREAM = 1


@dataclass(frozen=True)
class TubeSpec:
    """L^2_rho ball of paths around ``center`` with the start pinned at center(0)."""

    center: PathGrid
    radius: float
    weights: WeightSequence

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"tube radius must be positive, got {self.radius}")
        if self.center.t0 != 0.0:
            raise ValueError("tube centers must start at t = 0")
        self.weights.require(self.center.n)

    @property
    def x0(self) -> LatticeState:
        return self.center.node(0)

    @property
    def T(self) -> float:
        return self.center.t1


@dataclass(frozen=True)
class TubeEstimate(ProbabilityEstimate):
    """Tube-hit estimate at one noise level."""

    eps: float = math.nan


@dataclass(frozen=True)
class LdpEstimate:
    """
    Tube probabilities along a descending eps ladder.

    ``fitted_neg_rate`` is the eps -> 0 intercept of the affine fit of
    eps^2 ln p_hat, or None when fewer than three levels had hits.
    """

    estimates: tuple
    fitted_neg_rate: Optional[float] = None

    @property
    def epsilons(self) -> np.ndarray:
        return np.array([e.eps for e in self.estimates])

    @property
    def log_probs(self) -> np.ndarray:
        return np.array([e.log_p for e in self.estimates])

    @property
    def log_ci(self) -> np.ndarray:
        lo = [math.log(e.ci_low) if e.ci_low > 0 else -math.inf for e in self.estimates]
        return np.column_stack([lo, [math.log(e.ci_high) for e in self.estimates]])

    def rows(self) -> list:
        """Table rows (epsilon, hits, n, p_hat, ci_low, ci_high, eps2_ln_p)."""
        return [
            (e.eps, e.hits, e.samples, e.p_hat, e.ci_low, e.ci_high, e.eps**2 * e.log_p)
            for e in self.estimates
        ]


@dataclass(frozen=True)
class ScalingFit:
    """Extrapolated eps^2 ln P against the rate of the tube."""

    fitted_neg_rate: float
    slope: float
    residual_rms: float
    neg_rate_center: float
    neg_rate_infimum: Optional[float]
    rel_gap: float
    usable_epsilons: tuple = field(default=())

    @property
    def rate_inf_bound(self) -> float:
        return self.neg_rate_infimum if self.neg_rate_infimum is not None else self.neg_rate_center

    def as_dict(self) -> dict:
        return {
            "fitted_neg_rate": self.fitted_neg_rate,
            "slope": self.slope,
            "residual_rms": self.residual_rms,
            "neg_rate_center": self.neg_rate_center,
            "neg_rate_infimum": self.neg_rate_infimum,
            "rate_inf_bound": self.rate_inf_bound,
            "rel_gap": self.rel_gap,
            "usable_epsilons": list(self.usable_epsilons),
        }


# ──────────────────────────────────────────────────────────────
# 📉 Rate function
# ──────────────────────────────────────────────────────────────
def starts_at(psi: PathGrid, x0: LatticeState, tol: float = 1e-12) -> bool:
    start = psi.node(0)
    dq = torus_distance(start.q, x0.q) if psi.angular else np.abs(start.q - x0.q)
    return bool(np.all(dq <= tol) and np.all(np.abs(start.p - x0.p) <= tol))


def rate_function(psi: PathGrid, model, noise, w: WeightSequence,
                  x0: Optional[LatticeState] = None) -> float:
    """
    Large-deviation rate J(psi) = om_action(psi).total / 2.

    Returns +inf when ``x0`` is given and psi does not start there.
    """
    if x0 is not None and not starts_at(psi, x0):
        return math.inf
    return om_action(psi, model, noise, w).half_total


# ──────────────────────────────────────────────────────────────
# 🎲 Tube Monte Carlo
# ──────────────────────────────────────────────────────────────
def _tube_hits(Q, P, dt, center_q, center_p, rho_sq, radius, angular):
    dq = torus_distance(Q, center_q[:, None, :]) if angular else Q - center_q[:, None, :]
    dp = P - center_p[:, None, :]
    sq = trapezoid(np.sum(rho_sq * (dq**2 + dp**2), axis=-1), dx=dt, axis=0)
    return int(np.count_nonzero(sq <= radius**2))


def tube_probability_mc(model, noise, tube: TubeSpec, eps: float, n: int, seed: int,
                        workers: int = 1, block_size: Optional[int] = None) -> TubeEstimate:
    """
    Fraction of simulated paths within the tube, with a Wilson interval.

    Paths start at the tube center's first node and use its time grid.
    Zero hits give p_hat = 0 with the one-sided bound and ``low_confidence``.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if n < 1:
        raise ValueError("tube_probability_mc needs n >= 1")
    center = tube.center
    reducer = partial(_tube_hits, center_q=np.asarray(center.q), center_p=np.asarray(center.p),
                      rho_sq=tube.weights.rho_sq, radius=tube.radius, angular=center.angular)
    cfg = SimConfig(dt=center.dt, seed=seed)
    counts = run_blocks(model, noise.with_epsilon(eps), tube.x0, tube.T, cfg, n, reducer,
                        seed=seed, workers=workers, block_size=block_size)
    hits = int(sum(counts))
    logger.info("tube eps=%g: %d / %d hits", eps, hits, n)
    return TubeEstimate.from_counts(hits, n, eps=float(eps))


def gaussian_oracle_tube_prob(model, noise, tube: TubeSpec, eps: float,
                              samples: Optional[int] = None, seed: int = 0,
                              chunk: Optional[int] = None) -> float:
    """
    Tube probability for the free model from the Karhunen-Loève expansion.

    With H = 0 the process is X = x0 + eps W^sigma, one independent Gaussian
    process per (site, channel). On the tube's grid the squared trapezoid
    distance is sum_j (eps lambda_j xi_j - h_j)^2 per component, h_j the
    coefficients of h = psi - x0, which is sampled diagonally. Angles are
    treated on the lift, valid while eps W stays well inside (-π, π).

    Raises:
        UnsupportedModelError: for any model other than the free one
    """
    if not isinstance(model, FreeModel):
        raise UnsupportedModelError(f"the Gaussian oracle needs the free model, got {model.name!r}")
    samples = int(samples or CONFIG["ORACLE_SAMPLES"])
    chunk = int(chunk or CONFIG["MC_BLOCK_SIZE"])
    center = tube.center
    n_grid = center.K + 1
    rho_sq = tube.weights.rho_sq

    components = []  # (rho^2, sqrt eigenvalues, coefficients of h, orthogonal remainder)
    h_q = center.unwrapped_q() - center.q[0]
    h_p = np.asarray(center.p) - center.p[0]
    weights = trapezoid_weights(n_grid, center.dt)
    for site in range(center.n):
        channels = ((h_q[:, site], noise.sigma_q_at), (h_p[:, site], noise.sigma_p_at))
        for h, sigma_at in channels:
            basis = kl_expand(lambda t, f=sigma_at, i=site: f(t)[..., i], center.t1, n_grid)
            coeffs = basis.project(h)
            remainder = max(float(np.dot(weights, h * h)) - float(np.sum(coeffs**2)), 0.0)
            components.append((rho_sq[site], np.sqrt(basis.eigenvalues), coeffs,
                               remainder + eps**2 * basis.tail_variance()))

    hits, done, index = 0, 0, 0
    while done < samples:
        size = min(chunk, samples - done)
        rng = make_generator(seed, ORACLE_STREAM, index)
        sq = np.zeros(size)
        for r2, root, coeffs, rest in components:
            xi = rng.standard_normal((size, root.size))
            sq += r2 * (np.sum((eps * root * xi - coeffs) ** 2, axis=1) + rest)
        hits += int(np.count_nonzero(sq <= tube.radius**2))
        done += size
        index += 1
    return hits / samples


# ──────────────────────────────────────────────────────────────
# 🪜 Ladders and fits
# ──────────────────────────────────────────────────────────────
def fit_eps2_log(epsilons: Sequence[float], probs: Sequence[float]):
    """
    Least-squares affine fit eps^2 ln p = a + b eps over levels with p > 0.

    Returns:
        tuple: (intercept a, slope b, rms residual, usable epsilons)

    Raises:
        InsufficientDataError: with fewer than three usable levels
    """
    eps = np.asarray(epsilons, dtype=float)
    probs = np.asarray(probs, dtype=float)
    usable = probs > 0
    if np.count_nonzero(usable) < 3:
        raise InsufficientDataError(
            f"need >= 3 levels with hits, usable levels: {eps[usable].tolist()}",
            usable=eps[usable].tolist(),
        )
    x, y = eps[usable], eps[usable] ** 2 * np.log(probs[usable])
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (intercept + slope * x)
    return float(intercept), float(slope), float(np.sqrt(np.mean(residual**2))), tuple(x.tolist())


def ldp_estimate(model, noise, tube: TubeSpec, epsilons: Optional[Sequence[float]] = None,
                 n: int = 10_000, seed: int = 0, workers: int = 1) -> LdpEstimate:
    """Run tube_probability_mc over a descending eps ladder, one seed stream per level."""
    epsilons = sorted(epsilons or CONFIG["EPS_LADDER"], reverse=True)
    estimates = tuple(
        tube_probability_mc(model, noise, tube, eps, n, seed + level, workers)
        for level, eps in enumerate(epsilons)
    )
    try:
        fitted = fit_eps2_log(epsilons, [e.p_hat for e in estimates])[0]
    except InsufficientDataError:
        fitted = None
    return LdpEstimate(estimates, fitted)


def _increment_preconditioner(K, dt):
    """Banded form of (1/dt) tridiag(-1, 2, -1) on nodes 1..K, last diagonal entry 1."""
    ab = np.zeros((3, K))
    ab[0, 1:] = -1.0
    ab[1, :] = 2.0
    ab[1, -1] = 1.0
    ab[2, :-1] = -1.0
    return ab / dt


def tube_rate_infimum(tube: TubeSpec, model, noise, max_iters: int = 200,
                      rtol: float = 1e-10) -> float:
    """
    Approximate inf of J over the tube by projected descent from its center.

    Steps are preconditioned by the discrete Laplacian (exact for the free
    model), projected back onto the L^2_rho ball around the center with the
    start node pinned, and accepted under an Armijo condition, so the
    returned value never exceeds J(center).
    """
    center, w = tube.center, tube.weights
    cq, cp = center.unwrapped_q(), np.array(center.p)
    K, n, dt, t0 = center.K, center.n, center.dt, center.t0
    args = (t0, dt, model, noise, w.rho_sq)
    trap = trapezoid_weights(K + 1, dt)[:, None]

    def value(zq, zp):
        return 0.5 * sum(discrete_action(zq, zp, *args))

    def project(zq, zp):
        eq, ep = zq - cq, zp - cp
        dist = math.sqrt(float(np.sum(trap * w.rho_sq * (eq**2 + ep**2))))
        if dist > tube.radius:
            s = tube.radius / dist
            eq, ep = eq * s, ep * s
        return cq + eq, cp + ep

    ab = _increment_preconditioner(K, dt)
    t_mid = t0 + (np.arange(K) + 0.5) * dt
    scale = np.concatenate([np.mean(w.rho_sq / noise.sigma_q_at(t_mid) ** 2, axis=0),
                            np.mean(w.rho_sq / noise.sigma_p_at(t_mid) ** 2, axis=0)])

    zq, zp = cq.copy(), cp.copy()
    current = value(zq, zp)
    for iteration in range(max_iters):
        gq, gp = discrete_gradient(zq, zp, *args)
        g = 0.5 * np.hstack([gq, gp])[1:]
        direction = solve_banded((1, 1), ab, g / scale)
        step, accepted = 1.0, False
        while step > 1e-12:
            tq = np.vstack([zq[:1], zq[1:] - step * direction[:, :n]])
            tp = np.vstack([zp[:1], zp[1:] - step * direction[:, n:]])
            tq, tp = project(tq, tp)
            trial = value(tq, tp)
            moved = np.hstack([zq - tq, zp - tp])[1:]
            if trial <= current - 1e-4 * float(np.sum(g * moved)):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        improvement = current - trial
        zq, zp, current = tq, tp, trial
        if improvement <= rtol * max(current, 1e-300):
            break
    logger.debug("tube_rate_infimum: %.6g after %d iterations", current, iteration + 1)
    return float(current)


def ldp_scaling_fit(estimates: LdpEstimate, tube: TubeSpec, model, noise, w: WeightSequence = None,
                    infimum: bool = True) -> ScalingFit:
    """
    Compare the extrapolated eps^2 ln P with the rate of the tube.

    The reference is -inf J over the tube from tube_rate_infimum when
    ``infimum`` is set, otherwise -J(center). rel_gap is measured against
    that reference (absolute when the reference is 0).

    Raises:
        InsufficientDataError: fewer than three levels with hits
    """
    w = w or tube.weights
    intercept, slope, rms, usable = fit_eps2_log(estimates.epsilons,
                                                [e.p_hat for e in estimates.estimates])
    neg_center = -rate_function(tube.center, model, noise, w)
    neg_inf = -tube_rate_infimum(tube, model, noise) if infimum else None
    reference = neg_inf if neg_inf is not None else neg_center
    gap = abs(intercept - reference) / abs(reference) if reference != 0 else abs(intercept)
    return ScalingFit(intercept, slope, rms, neg_center, neg_inf, gap, usable)


def drift_tube_center(n_sites: int, T: float, K: int, speed: float = 1.0,
                      site: int = 0) -> PathGrid:
    """Center psi_q(t) = speed * t on one site, everything else at rest."""
    t = np.linspace(0.0, T, K + 1)
    q = np.zeros((K + 1, n_sites))
    q[:, site] = speed * t
    return PathGrid(0.0, T, q, np.zeros((K + 1, n_sites)), True)


def oracle_ladder(model, noise, tube: TubeSpec, epsilons: Sequence[float],
                  samples: Optional[int] = None, seed: int = 0) -> list:
    """Oracle probabilities on an eps ladder, for comparison with ldp_estimate."""
    return [gaussian_oracle_tube_prob(model, noise, tube, eps, samples, seed + level)
            for level, eps in enumerate(sorted(epsilons, reverse=True))]

