"""SDE Engine Module

Simulates the stochastic Hamiltonian system

    dq = dH/dp dt + eps sigma_q(t) dW_q
    dp = -dH/dq dt + eps sigma_p(t) dW_p

on a truncated lattice, and evaluates the Girsanov (Radon-Nikodym) weight
of simulated paths against a reference path.

Randomness comes from counter-based Philox generators. A single trajectory
is keyed by its seed; ensembles are split into fixed-size blocks keyed by
(seed, block index), so the worker count never changes a sampled path.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import partial
from typing import Callable, Optional

import numpy as np

from config import CONFIG
from errors import DegenerateMeasureError, DimensionError, IntegrationError
from hamiltonian_models import HamiltonianModel
from lattice_core import LatticeState, PathGrid, lift_angle, wrap_angle

logger = logging.getLogger(__name__)

SCHEMES = ("euler_maruyama", "splitting")


# ──────────────────────────────────────────────────────────────
# 🌫️ Noise model
# ──────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class NoiseModel:
    """
    Diagonal, time-dependent diffusion coefficients with global intensity eps.

    sigma(t) = base * (1 + modulation * sin(2π frequency t)) per site, for
    both the position and the momentum channel.

    Attributes:
        sigma_q, sigma_p: positive base coefficients per site
        epsilon: global noise intensity, >= 0
        modulation: relative modulation amplitude, |modulation| < 1
        frequency: modulation frequency in cycles per unit time
        lower, upper: ellipticity bounds 0 < lower <= sigma(t) <= upper
    """

    sigma_q: np.ndarray
    sigma_p: np.ndarray
    epsilon: float = 1.0
    modulation: float = 0.0
    frequency: float = 0.0
    lower: Optional[float] = None
    upper: Optional[float] = None

    def __post_init__(self):
        sq = np.array(self.sigma_q, dtype=float).reshape(-1)
        sp = np.array(self.sigma_p, dtype=float).reshape(-1)
        if sq.shape != sp.shape:
            raise DimensionError(f"sigma_q has {sq.size} sites but sigma_p has {sp.size}")
        if np.any(sq <= 0) or np.any(sp <= 0) or not np.all(np.isfinite(sq)) or not np.all(np.isfinite(sp)):
            raise ValueError("diffusion coefficients must be finite and positive")
        if not abs(self.modulation) < 1.0:
            raise ValueError("modulation amplitude must satisfy |modulation| < 1")
        if not self.epsilon >= 0:
            raise ValueError(f"noise intensity must be >= 0, got {self.epsilon}")
        sq.setflags(write=False)
        sp.setflags(write=False)
        object.__setattr__(self, "sigma_q", sq)
        object.__setattr__(self, "sigma_p", sp)

        base_min = min(sq.min(), sp.min())
        base_max = max(sq.max(), sp.max())
        env_lower = base_min * (1.0 - abs(self.modulation))
        env_upper = base_max * (1.0 + abs(self.modulation))
        lower = env_lower if self.lower is None else float(self.lower)
        upper = env_upper if self.upper is None else float(self.upper)
        if not (0 < lower <= env_lower + 1e-15 and env_upper <= upper + 1e-15):
            raise ValueError(
                f"ellipticity bounds [{lower}, {upper}] do not contain the "
                f"coefficient range [{env_lower}, {env_upper}]"
            )
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def constant(cls, n: int, value: float = 1.0, epsilon: float = 1.0) -> "NoiseModel":
        return cls(np.full(n, value), np.full(n, value), epsilon)

    @property
    def n(self) -> int:
        return self.sigma_q.size

    def with_epsilon(self, epsilon: float) -> "NoiseModel":
        return replace(self, epsilon=float(epsilon))

    def scaled(self, factor: float) -> "NoiseModel":
        return replace(self, sigma_q=self.sigma_q * factor, sigma_p=self.sigma_p * factor,
                       lower=None, upper=None)

    def _factor(self, t):
        return 1.0 + self.modulation * np.sin(2.0 * np.pi * self.frequency * np.asarray(t, dtype=float))

    def sigma_q_at(self, t):
        """sigma_q at time(s) t; shape (n,) or (len(t), n)."""
        return np.multiply.outer(self._factor(t), self.sigma_q)

    def sigma_p_at(self, t):
        return np.multiply.outer(self._factor(t), self.sigma_p)

    def check(self, times, max_jump: Optional[float] = None) -> None:
        """
        Verify ellipticity and bounded increments on sampled times.

        Raises:
            ValueError: if a sampled coefficient leaves [lower, upper] or jumps
                by more than ``max_jump`` between consecutive samples
        """
        times = np.asarray(times, dtype=float)
        values = np.concatenate([self.sigma_q_at(times), self.sigma_p_at(times)], axis=-1)
        if values.min() < self.lower - 1e-12 or values.max() > self.upper + 1e-12:
            raise ValueError("diffusion coefficients leave their ellipticity bounds")
        if times.size > 1:
            if max_jump is None:
                dt = float(np.max(np.diff(times)))
                slope = 2.0 * np.pi * abs(self.frequency * self.modulation) * self.upper
                max_jump = 1.01 * slope * dt + 1e-12
            jump = float(np.max(np.abs(np.diff(values, axis=0))))
            if jump > max_jump:
                raise ValueError(f"diffusion coefficients jump by {jump:.3e} between samples")


# ──────────────────────────────────────────────────────────────
# ⚙️ Simulation configuration
# ──────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class SimConfig:
    """Time step, seed and integration scheme."""

    dt: float
    seed: int = 0
    scheme: str = "euler_maruyama"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"time step must be positive, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")


def grid_steps(T: float, dt: float) -> int:
    """Number of uniform steps covering [0, T] with step at most ``dt``."""
    if not T > 0:
        raise ValueError(f"time horizon must be positive, got {T}")
    return max(1, int(math.ceil(T / dt - 1e-9)))


def make_generator(*key) -> np.random.Generator:
    """Counter-based generator keyed by integers (seed, block, ...)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


# ──────────────────────────────────────────────────────────────
# 🔁 Integration core (batched)
# ──────────────────────────────────────────────────────────────
def _integrate(model, noise, q0, p0, T, K, scheme, rng, epsilon):
    """
    Integrate a batch of trajectories.

    Args:
        q0, p0: initial arrays of shape (B, n)
        rng: generator for the noise; unused when epsilon == 0

    Returns:
        tuple: arrays Q, P of shape (K + 1, B, n)
    """
    h = T / K
    sqrt_h = math.sqrt(h)
    guard = CONFIG["BLOWUP_GUARD"]
    Q = np.empty((K + 1,) + q0.shape)
    P = np.empty((K + 1,) + p0.shape)
    Q[0], P[0] = q0, p0

    for k in range(K):
        q, p = Q[k], P[k]
        if scheme == "splitting":
            q_new, p_new = model.strang_step(q, p, h)
        else:
            fq, fp = model.drift(q, p)
            q_new, p_new = q + h * fq, p + h * fp
        if epsilon > 0:
            # left-endpoint coefficients
            t = k * h
            xi = rng.standard_normal((2,) + q.shape)
            q_new = q_new + epsilon * noise.sigma_q_at(t) * sqrt_h * xi[0]
            p_new = p_new + epsilon * noise.sigma_p_at(t) * sqrt_h * xi[1]

        bad = ~np.isfinite(p_new) | (np.abs(p_new) > guard) | ~np.isfinite(q_new)
        if not model.angular:
            bad |= np.abs(q_new) > guard
        if bad.any():
            raise IntegrationError(
                f"{model.name}: state left the finite region at step {k + 1} "
                f"(t={(k + 1) * h:.6g}); |p| or |q| exceeded {guard:g}",
                step=k + 1,
            )
        Q[k + 1] = wrap_angle(q_new) if model.angular else q_new
        P[k + 1] = p_new
    return Q, P


def _check_inputs(model, noise, x0):
    if x0.n != model.n:
        raise DimensionError(f"initial state has {x0.n} sites but model has {model.n}")
    if noise is not None and noise.n != model.n:
        raise DimensionError(f"noise has {noise.n} sites but model has {model.n}")


def simulate(model: HamiltonianModel, noise: NoiseModel, x0: LatticeState, T: float,
             cfg: SimConfig) -> PathGrid:
    """
    Simulate one trajectory on [0, T].

    Euler-Maruyama by default; ``scheme="splitting"`` composes a Strang step
    of the Hamiltonian flow with the additive noise increment. Identical
    arguments give bit-identical paths.

    Raises:
        IntegrationError: on blow-up, naming the step
    """
    _check_inputs(model, noise, x0)
    K = grid_steps(T, cfg.dt)
    rng = make_generator(cfg.seed)
    Q, P = _integrate(model, noise, x0.q[None, :], x0.p[None, :], T, K, cfg.scheme, rng,
                      noise.epsilon)
    return PathGrid(0.0, T, Q[:, 0, :], P[:, 0, :], model.angular)


def simulate_deterministic(model: HamiltonianModel, x0: LatticeState, T: float,
                           cfg: SimConfig) -> PathGrid:
    """The eps = 0 flow; with ``scheme="splitting"`` a symplectic Strang integrator."""
    _check_inputs(model, None, x0)
    K = grid_steps(T, cfg.dt)
    Q, P = _integrate(model, None, x0.q[None, :], x0.p[None, :], T, K, cfg.scheme, None, 0.0)
    return PathGrid(0.0, T, Q[:, 0, :], P[:, 0, :], model.angular)


# ──────────────────────────────────────────────────────────────
# 🧪 Ensembles in seed-stable blocks
# ──────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class Ensemble:
    """Batch of trajectories: q, p have shape (n_paths, K + 1, n)."""

    t1: float
    q: np.ndarray
    p: np.ndarray
    angular: bool

    @property
    def K(self) -> int:
        return self.q.shape[1] - 1

    @property
    def n_paths(self) -> int:
        return self.q.shape[0]

    def path(self, i: int) -> PathGrid:
        return PathGrid(0.0, self.t1, self.q[i], self.p[i], self.angular)


def _block_sizes(n_paths, block_size):
    full, rest = divmod(n_paths, block_size)
    return [block_size] * full + ([rest] if rest else [])


def _run_block(job, model, noise, x0, T, K, scheme, seed, reducer):
    index, size = job
    rng = make_generator(seed, index)
    q0 = np.tile(x0.q, (size, 1))
    p0 = np.tile(x0.p, (size, 1))
    Q, P = _integrate(model, noise, q0, p0, T, K, scheme, rng, noise.epsilon)
    return reducer(Q, P, T / K)


def run_blocks(model: HamiltonianModel, noise: NoiseModel, x0: LatticeState, T: float,
               cfg: SimConfig, n_paths: int, reducer: Callable, seed: Optional[int] = None,
               workers: int = 1, block_size: Optional[int] = None) -> list:
    """
    Simulate ``n_paths`` trajectories block by block and reduce each block.

    ``reducer(Q, P, dt)`` receives arrays of shape (K + 1, B, n) and must be
    picklable when ``workers > 1``. Results come back in block order.
    """
    if n_paths < 1:
        raise ValueError("an ensemble needs at least one path")
    _check_inputs(model, noise, x0)
    K = grid_steps(T, cfg.dt)
    seed = cfg.seed if seed is None else seed
    block_size = block_size or CONFIG["MC_BLOCK_SIZE"]
    jobs = list(enumerate(_block_sizes(n_paths, block_size)))
    task = partial(_run_block, model=model, noise=noise, x0=x0, T=T, K=K, scheme=cfg.scheme,
                   seed=seed, reducer=reducer)
    logger.debug("ensemble: %d paths in %d blocks, %d workers", n_paths, len(jobs), workers)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(task, jobs))
    return [task(job) for job in jobs]


def _keep_paths(Q, P, dt):
    return np.swapaxes(Q, 0, 1), np.swapaxes(P, 0, 1)


def simulate_ensemble(model: HamiltonianModel, noise: NoiseModel, x0: LatticeState, T: float,
                      cfg: SimConfig, n_paths: int, seed: Optional[int] = None,
                      workers: int = 1, block_size: Optional[int] = None) -> Ensemble:
    """Full paths of an ensemble; memory grows with n_paths * K, so keep it moderate."""
    blocks = run_blocks(model, noise, x0, T, cfg, n_paths, _keep_paths, seed, workers, block_size)
    q = np.concatenate([b[0] for b in blocks])
    p = np.concatenate([b[1] for b in blocks])
    return Ensemble(T, q, p, model.angular)


# ──────────────────────────────────────────────────────────────
# ⚖️ Girsanov weight
# ──────────────────────────────────────────────────────────────
def girsanov_log_weights(Q, P, ref_q, ref_p, dt, model, noise):
    """
    Log Radon-Nikodym weights of batched paths against a reference.

    With u_k = -(f(X_k) - dphi_k/dt) / (eps sigma(t_k)) and Brownian
    increments dW_k = (dX_k - f(X_k) dt) / (eps sigma(t_k)) recovered from
    the path, the log weight is sum_k <u_k, dW_k> - 1/2 sum_k |u_k|^2 dt.
    The sum is componentwise Euclidean, which makes the weight an exact
    discrete martingale.

    Args:
        Q, P: arrays (K + 1, B, n)
        ref_q, ref_p: reference arrays (K + 1, n)

    Returns:
        ndarray: log weights, shape (B,)
    """
    eps = noise.epsilon
    if not eps > 0:
        raise DegenerateMeasureError("the Girsanov weight needs a positive noise intensity")
    K = Q.shape[0] - 1
    t = np.arange(K) * dt
    sig_q = eps * noise.sigma_q_at(t)[:, None, :]
    sig_p = eps * noise.sigma_p_at(t)[:, None, :]

    dXq = np.diff(Q, axis=0)
    dphi_q = np.diff(ref_q, axis=0)[:, None, :]
    if model.angular:
        dXq = lift_angle(dXq)
        dphi_q = lift_angle(dphi_q)
    dXp = np.diff(P, axis=0)
    dphi_p = np.diff(ref_p, axis=0)[:, None, :]

    fq, fp = model.drift(Q[:-1], P[:-1])
    dWq = (dXq - fq * dt) / sig_q
    dWp = (dXp - fp * dt) / sig_p
    uq = -(fq - dphi_q / dt) / sig_q
    up = -(fp - dphi_p / dt) / sig_p
    ito = np.sum(uq * dWq + up * dWp, axis=(0, 2))
    energy = 0.5 * dt * np.sum(uq**2 + up**2, axis=(0, 2))
    return ito - energy


def girsanov_weight(path: PathGrid, model: HamiltonianModel, noise: NoiseModel,
                    reference: PathGrid) -> float:
    """
    Radon-Nikodym weight of ``path`` relative to ``reference``.

    Raises:
        DegenerateMeasureError: if eps == 0
        DimensionError: if the paths do not share a grid
    """
    if not path.same_grid(reference):
        raise DimensionError("path and reference must share a time grid and site set")
    log_w = girsanov_log_weights(path.q[:, None, :], path.p[:, None, :], reference.q,
                                 reference.p, path.dt, model, noise)
    return float(np.exp(log_w[0]))
