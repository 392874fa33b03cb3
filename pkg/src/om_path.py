"""OM Path Module

Discretized Onsager-Machlup action of lattice paths and its minimization.

For a path Z_0..Z_K (angles unwrapped along the path) with increments
D_k = Z_{k+1} - Z_k and midpoints M_k = Z_k + D_k / 2 the action is

    A = dt * sum_k sum_i c_ik r_ik^2,   r_k = D_k / dt - f(M_k)

with f the Hamiltonian vector field and c = rho^2 / sigma(t_k + dt/2)^2,
separately for the q and p channels. The action never reads the noise
intensity. Its exact discrete gradient uses the models' Hessian-vector
products; minimization runs L-BFGS-B in increment coordinates, which keeps
the problem well conditioned as K grows.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from errors import DimensionError, OptimizationError, ResolutionError
from lattice_core import PathGrid, StateDelta, WeightSequence

logger = logging.getLogger(__name__)

CONSTRAINTS = ("fixed_start", "fixed_both_endpoints")


@dataclass(frozen=True)
class ActionReport:
    """Discrete action of a path, split by channel, plus its Euler-Lagrange defect."""

    total: float
    q_term: float
    p_term: float
    el_residual: float

    @property
    def half_total(self) -> float:
        """The large-deviation convention, total / 2."""
        return 0.5 * self.total

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "half_total": self.half_total,
            "q_term": self.q_term,
            "p_term": self.p_term,
            "el_residual": self.el_residual,
        }


@dataclass(frozen=True)
class MinimizeConfig:
    """
    Settings for :func:`minimize_action`.

    Attributes:
        max_iters: iteration cap for L-BFGS-B
        grad_tol: stop once the largest gradient component is below this
        memory: number of stored curvature pairs
        max_line_search: line-search evaluations per iteration
        constraint: ``fixed_start`` or ``fixed_both_endpoints``
    """

    max_iters: int = 5000
    grad_tol: float = 1e-6
    memory: int = 20
    max_line_search: int = 40
    constraint: str = "fixed_start"

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError(f"grad_tol must be positive, got {self.grad_tol}")
        if self.max_iters < 1 or self.memory < 1 or self.max_line_search < 1:
            raise ValueError("max_iters, memory and max_line_search must be >= 1")
        if self.constraint not in CONSTRAINTS:
            raise ValueError(f"unknown constraint {self.constraint!r}; choose from {CONSTRAINTS}")


# ──────────────────────────────────────────────────────────────
# 🧮 Array-level action and gradient
# ──────────────────────────────────────────────────────────────
def _residuals(zq, zp, dt, model):
    dq, dp = np.diff(zq, axis=0), np.diff(zp, axis=0)
    mq, mp = zq[:-1] + 0.5 * dq, zp[:-1] + 0.5 * dp
    fq, fp = model.drift(mq, mp)
    return dq / dt - fq, dp / dt - fp, mq, mp


def _channel_weights(t0, dt, K, noise, rho_sq):
    t_mid = t0 + (np.arange(K) + 0.5) * dt
    return rho_sq / noise.sigma_q_at(t_mid) ** 2, rho_sq / noise.sigma_p_at(t_mid) ** 2


def discrete_action(zq, zp, t0, dt, model, noise, rho_sq):
    """
    Action terms of unwrapped node arrays.

    Args:
        zq, zp: node arrays of shape (K + 1, n), q unwrapped
        t0, dt: grid origin and step
        rho_sq: squared site weights

    Returns:
        tuple: (q_term, p_term)
    """
    rq, rp, _, _ = _residuals(zq, zp, dt, model)
    cq, cp = _channel_weights(t0, dt, zq.shape[0] - 1, noise, rho_sq)
    return float(dt * np.sum(cq * rq**2)), float(dt * np.sum(cp * rp**2))


def discrete_gradient(zq, zp, t0, dt, model, noise, rho_sq):
    """Exact gradient of the discrete action with respect to every node, shape (K + 1, n) each."""
    rq, rp, mq, mp = _residuals(zq, zp, dt, model)
    cq, cp = _channel_weights(t0, dt, zq.shape[0] - 1, noise, rho_sq)
    sq, sp = 2.0 * dt * cq * rq, 2.0 * dt * cp * rp

    # transpose of the drift Jacobian: Df^T s = Hess H (-s_p, s_q)
    hq, hp = model.hessian_vector(mq, mp, -sp, sq)
    gq = np.zeros_like(zq)
    gp = np.zeros_like(zp)
    # each residual touches its two end nodes
    gq[1:] += sq / dt - 0.5 * hq
    gq[:-1] += -sq / dt - 0.5 * hq
    gp[1:] += sp / dt - 0.5 * hp
    gp[:-1] += -sp / dt - 0.5 * hp
    return gq, gp


def _check(path, model, noise, w):
    if path.K < 2:
        raise ResolutionError(f"the action needs K >= 2 steps, got K={path.K}")
    w.require(path.n)
    if model.n != path.n:
        raise DimensionError(f"path has {path.n} sites but model {model.name!r} has {model.n}")
    if noise is not None and noise.n != path.n:
        raise DimensionError(f"path has {path.n} sites but noise has {noise.n}")


# ──────────────────────────────────────────────────────────────
# 📏 Public path-level operations
# ──────────────────────────────────────────────────────────────
def euler_lagrange_residual(path: PathGrid, model, w: WeightSequence) -> float:
    """
    Time-integrated defect of the deterministic equations of motion,
    sum_k dt (||r_q,k||_rho + ||r_p,k||_rho).

    Zero exactly when the nodes solve the midpoint discretization of the
    Hamiltonian flow.
    """
    w.require(path.n)
    rq, rp, _, _ = _residuals(path.unwrapped_q(), np.asarray(path.p), path.dt, model)
    norms = np.sqrt(np.sum(w.rho_sq * rq**2, axis=-1)) + np.sqrt(np.sum(w.rho_sq * rp**2, axis=-1))
    return float(path.dt * np.sum(norms))


def om_action(path: PathGrid, model, noise, w: WeightSequence) -> ActionReport:
    """
    Onsager-Machlup action of a path.

    Args:
        path: trajectory on a uniform grid with K >= 2
        model: HamiltonianModel on the path's sites
        noise: NoiseModel; only the time profile of sigma is used
        w: site weights

    Returns:
        ActionReport: total = q_term + p_term, plus the Euler-Lagrange defect

    Raises:
        ResolutionError: if K < 2
    """
    _check(path, model, noise, w)
    q_term, p_term = discrete_action(path.unwrapped_q(), np.asarray(path.p), path.t0, path.dt,
                                     model, noise, w.rho_sq)
    return ActionReport(q_term + p_term, q_term, p_term, euler_lagrange_residual(path, model, w))


def om_gradient(path: PathGrid, model, noise, w: WeightSequence, constraint: str = None):
    """
    Gradient of the discrete action with respect to node coordinates.

    Angles are differentiated in the path's local lift. With a constraint
    mode the rows of pinned nodes are zero.

    Returns:
        tuple: (grad_q, grad_p), each of shape (K + 1, n)
    """
    _check(path, model, noise, w)
    gq, gp = discrete_gradient(path.unwrapped_q(), np.asarray(path.p), path.t0, path.dt,
                               model, noise, w.rho_sq)
    # pinned nodes do not move
    if constraint is not None:
        if constraint not in CONSTRAINTS:
            raise ValueError(f"unknown constraint {constraint!r}")
        gq[0] = gp[0] = 0.0
        if constraint == "fixed_both_endpoints":
            gq[-1] = gp[-1] = 0.0
    return gq, gp


# ──────────────────────────────────────────────────────────────
# 🎯 Minimization in increment coordinates
# ──────────────────────────────────────────────────────────────
class _IncrementProblem:
    """Maps free increments d_0.. to nodes Z = Z_0 + cumsum(d) and back."""

    def __init__(self, zq, zp, t0, dt, model, noise, rho_sq, constraint):
        self.K, self.n = zq.shape[0] - 1, zq.shape[1]
        self.start = np.concatenate([zq[0], zp[0]])
        self.end = np.concatenate([zq[-1], zp[-1]])
        self.both = constraint == "fixed_both_endpoints"
        self.free = self.K - 1 if self.both else self.K
        self.args = (t0, dt, model, noise, rho_sq)
        self.evaluations = 0

    def initial(self, zq, zp):
        z = np.hstack([zq, zp])
        return np.diff(z, axis=0)[: self.free].ravel()

    def nodes(self, d):
        d = d.reshape(self.free, 2 * self.n)
        z = np.empty((self.K + 1, 2 * self.n))
        z[0] = self.start
        z[1 : self.free + 1] = self.start + np.cumsum(d, axis=0)
        if self.both:
            z[-1] = self.end
        return z[:, : self.n], z[:, self.n :]

    def __call__(self, d):
        self.evaluations += 1
        zq, zp = self.nodes(d)
        q_term, p_term = discrete_action(zq, zp, *self.args)
        gq, gp = discrete_gradient(zq, zp, *self.args)
        g = np.hstack([gq, gp])[1 : self.free + 1]
        # d_j moves nodes j+1..free, so its gradient is a reverse cumulative sum
        grad_d = np.cumsum(g[::-1], axis=0)[::-1]
        return q_term + p_term, grad_d.ravel()


def minimize_action(initial: PathGrid, model, noise, w: WeightSequence,
                    cfg: MinimizeConfig = MinimizeConfig()):
    """
    Most probable path by minimizing the discrete action.

    The start node is pinned, and with ``fixed_both_endpoints`` the final
    node too. L-BFGS-B runs on the free increments with a Wolfe line
    search, so the action never increases.

    Args:
        initial: starting guess satisfying the constraint
        cfg: iteration limits, tolerance and constraint mode

    Returns:
        tuple: (PathGrid, ActionReport, iterations)

    Raises:
        OptimizationError: if the run ends without decreasing the action
            from a nonzero start, with the optimizer's diagnostics attached
    """
    _check(initial, model, noise, w)
    zq0, zp0 = initial.unwrapped_q(), np.array(initial.p)
    problem = _IncrementProblem(zq0, zp0, initial.t0, initial.dt, model, noise, w.rho_sq,
                                cfg.constraint)
    # Evaluate once at the guess
    d0 = problem.initial(zq0, zp0)
    a0, g0 = problem(d0)

    if not np.all(np.isfinite(g0)) or not math.isfinite(a0):
        raise OptimizationError("non-finite action or gradient at the initial path",
                                {"initial_action": a0})
    if np.max(np.abs(g0), initial=0.0) <= cfg.grad_tol:
        logger.info("initial path already stationary (action %.3e)", a0)
        return initial, om_action(initial, model, noise, w), 0

    # Quasi-Newton on the increments
    result = minimize(
        problem,
        d0,
        jac=True,
        method="L-BFGS-B",
        options={
            "maxiter": cfg.max_iters,
            "maxfun": 20 * cfg.max_iters,
            "maxcor": cfg.memory,
            "maxls": cfg.max_line_search,
            "gtol": cfg.grad_tol,
            "ftol": 1e-15,
        },
    )
    # Kept on the error for a failed run
    diagnostics = {
        "initial_action": a0,
        "final_action": float(result.fun),
        "iterations": int(result.nit),
        "evaluations": problem.evaluations,
        "message": str(result.message),
        "grad_inf_norm": float(np.max(np.abs(result.jac))) if result.jac is not None else None,
    }
    if not math.isfinite(result.fun) or not result.fun < a0:
        raise OptimizationError(f"action minimization made no progress: {result.message}",
                                diagnostics)
    if not result.success:
        logger.warning("minimize_action stopped early: %s", result.message)
    logger.info("minimize_action: %.6e -> %.6e in %d iterations", a0, result.fun, result.nit)

    # Rebuild the nodes from the optimal increments
    zq, zp = problem.nodes(result.x)
    path = initial.with_arrays(zq, zp)
    return path, om_action(path, model, noise, w), int(result.nit)


def straight_line(start, end, t0: float, t1: float, K: int) -> PathGrid:
    """Linear interpolation between two LatticeStates, angles along the short arc."""
    delta = StateDelta.between(start, end)
    s = np.linspace(0.0, 1.0, K + 1)[:, None]
    return PathGrid(t0, t1, start.q + s * delta.dq, start.p + s * delta.dp, start.angular)
