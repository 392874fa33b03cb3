"""Hamiltonian Models Module

Plug-in registry of lattice Hamiltonians H(q, p) with analytic gradients and
Hessian-vector products, plus finite-difference verification of that data.

Built-in models:
- free: H = 0, the driftless baseline
- harmonic_lattice: independent oscillators in the lifted angle
- pendulum_lattice: on-site pendulums with nearest-neighbour cosine coupling
- nls_modes: the Schrödinger mode Hamiltonian or, with normal_form=True,
  its integrable normal form; built by nls_spectral and registered lazily

All models evaluate on arrays with arbitrary leading batch axes; the last
axis indexes lattice sites.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional

import numpy as np

from config import model_param_problems
from errors import ConfigurationError, ModelError, UnsupportedModelError
from lattice_core import LatticeState, WeightSequence, lift_angle, wrap_angle

logger = logging.getLogger(__name__)


class HamiltonianModel(ABC):
    """
    Base class for Hamiltonians on an n-site lattice.

    Subclasses implement ``value``, ``grad_q`` and ``grad_p``; they should
    override ``hessian_vector`` with an analytic product, since the
    finite-difference fallback is only accurate to about 1e-8.

    Attributes:
        name: registry identifier
        n: number of sites
        angular: whether q is circle valued
        separable: whether H = T(p) + V(q), enabling leapfrog splitting
        lipschitz_hint: optional Lipschitz constant of the gradient
    """

    name = "abstract"
    angular = True
    separable = False

    def __init__(self, n: int, lipschitz_hint: Optional[float] = None):
        if n < 1:
            raise ValueError("a model needs at least one site")
        self.n = int(n)
        self.lipschitz_hint = lipschitz_hint

    @abstractmethod
    def value(self, q, p):
        """Energy, shape = leading batch shape."""

    @abstractmethod
    def grad_q(self, q, p):
        """dH/dq, same shape as q."""

    @abstractmethod
    def grad_p(self, q, p):
        """dH/dp, same shape as p."""

    def hessian_vector(self, q, p, vq, vp):
        """Hessian of H applied to (vq, vp); returns (hq, hp)."""
        h = 1e-6
        gq_plus, gp_plus = self.grad_q(q + h * vq, p + h * vp), self.grad_p(q + h * vq, p + h * vp)
        gq_minus, gp_minus = self.grad_q(q - h * vq, p - h * vp), self.grad_p(q - h * vq, p - h * vp)
        return (gq_plus - gq_minus) / (2 * h), (gp_plus - gp_minus) / (2 * h)

    def drift(self, q, p):
        """Hamiltonian vector field (dH/dp, -dH/dq)."""
        return self.grad_p(q, p), -self.grad_q(q, p)

    def energy(self, state: LatticeState) -> float:
        value = float(self.value(state.q, state.p))
        if not np.isfinite(value):
            raise ModelError(f"{self.name}: non-finite energy {value}")
        return value

    def strang_step(self, q, p, h):
        """
        One second-order symplectic step of length ``h``.

        Separable models use kick-drift-kick leapfrog. Models with other
        tractable splittings override this method.

        Raises:
            UnsupportedModelError: if the model offers no splitting
        """
        if not self.separable:
            raise UnsupportedModelError(f"model {self.name!r} has no symplectic splitting")
        p_half = p - 0.5 * h * self.grad_q(q, p)
        q_new = q + h * self.grad_p(q, p_half)
        p_new = p_half - 0.5 * h * self.grad_q(q_new, p_half)
        return q_new, p_new

    def describe(self) -> dict:
        return {"name": self.name, "sites": self.n}


# ──────────────────────────────────────────────────────────────
# 🧱 Built-in lattice models
# ──────────────────────────────────────────────────────────────
class FreeModel(HamiltonianModel):
    """H = 0."""

    name = "free"
    separable = True

    def __init__(self, n, angular=True):
        super().__init__(n, lipschitz_hint=0.0)
        self.angular = angular

    def value(self, q, p):
        return np.zeros(np.shape(q)[:-1])

    def grad_q(self, q, p):
        return np.zeros_like(np.asarray(q, dtype=float))

    def grad_p(self, q, p):
        return np.zeros_like(np.asarray(p, dtype=float))

    def hessian_vector(self, q, p, vq, vp):
        return np.zeros_like(vq), np.zeros_like(vp)


class HarmonicLattice(HamiltonianModel):
    """H = sum_i p_i^2/2 + omega_i^2 theta_i^2/2 with theta the angle lifted to [-π, π)."""

    name = "harmonic_lattice"
    separable = True

    def __init__(self, omega):
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        super().__init__(omega.size, lipschitz_hint=float(max(1.0, np.max(omega**2))))
        self.omega_sq = omega**2

    def value(self, q, p):
        theta = lift_angle(q)
        return 0.5 * np.sum(np.square(p) + self.omega_sq * np.square(theta), axis=-1)

    def grad_q(self, q, p):
        return self.omega_sq * lift_angle(q)

    def grad_p(self, q, p):
        return np.asarray(p, dtype=float).copy()

    def hessian_vector(self, q, p, vq, vp):
        return self.omega_sq * vq, np.array(vp, dtype=float)

    def describe(self):
        return {**super().describe(), "omega": np.sqrt(self.omega_sq).tolist()}


class PendulumLattice(HamiltonianModel):
    """H = sum_i p_i^2/2 - cos q_i + kappa sum_<i,j> (1 - cos(q_i - q_j))."""

    name = "pendulum_lattice"
    separable = True

    def __init__(self, n, bonds=(), kappa=0.5):
        super().__init__(n)
        self.kappa = float(kappa)
        self.bonds = tuple(tuple(b) for b in bonds)
        # incidence matrix: (q @ D.T)[b] = q_i - q_j for bond b = (i, j)
        self.incidence = np.zeros((len(self.bonds), self.n))
        for row, (i, j) in enumerate(self.bonds):
            self.incidence[row, i] = 1.0
            self.incidence[row, j] = -1.0
        degree = np.abs(self.incidence).sum(axis=0).max() if self.bonds else 0.0
        self.lipschitz_hint = 1.0 + 2.0 * self.kappa * degree

    @classmethod
    def on(cls, weights: WeightSequence, kappa=0.5):
        return cls(weights.n, weights.neighbor_pairs(), kappa)

    def _bond_angles(self, q):
        return np.asarray(q, dtype=float) @ self.incidence.T

    def value(self, q, p):
        onsite = np.sum(0.5 * np.square(p) - np.cos(q), axis=-1)
        coupling = self.kappa * np.sum(1.0 - np.cos(self._bond_angles(q)), axis=-1)
        return onsite + coupling

    def grad_q(self, q, p):
        return np.sin(q) + self.kappa * np.sin(self._bond_angles(q)) @ self.incidence

    def grad_p(self, q, p):
        return np.asarray(p, dtype=float).copy()

    def hessian_vector(self, q, p, vq, vp):
        bond_v = np.asarray(vq, dtype=float) @ self.incidence.T
        hq = np.cos(q) * vq + self.kappa * (np.cos(self._bond_angles(q)) * bond_v) @ self.incidence
        return hq, np.array(vp, dtype=float)

    def describe(self):
        return {**super().describe(), "kappa": self.kappa, "bonds": [list(b) for b in self.bonds]}


# ──────────────────────────────────────────────────────────────
# 🗂️ Registry
# ──────────────────────────────────────────────────────────────
def _build_free(weights, params):
    return FreeModel(weights.n, angular=params.get("angular", True))


def _build_harmonic(weights, params):
    omega = params.get("omega", 1.0)
    return HarmonicLattice(np.broadcast_to(np.asarray(omega, dtype=float), (weights.n,)))


def _build_pendulum(weights, params):
    return PendulumLattice.on(weights, kappa=params.get("kappa", 0.5))


def _build_nls(weights, params):
    # imported lazily: nls_spectral depends on this module
    from nls_spectral import NlsModel

    nls = NlsModel(**{k: v for k, v in params.items() if k != "normal_form"})
    if nls.modes != weights.n:
        raise ModelError(f"nls model has {nls.modes} modes but the lattice has {weights.n} sites")
    return nls.normal_form_hamiltonian() if params.get("normal_form") else nls.hamiltonian()


MODEL_REGISTRY = {
    "free": _build_free,
    "harmonic_lattice": _build_harmonic,
    "pendulum_lattice": _build_pendulum,
    "nls_modes": _build_nls,
}


def build_model(name: str, weights: WeightSequence, **params) -> HamiltonianModel:
    """
    Create a registered model on the sites of ``weights``.

    Args:
        name: registry key
        weights: lattice the model lives on
        **params: model parameters (omega, kappa, or NlsModel fields)

    Raises:
        ModelError: if ``name`` is not registered
        ConfigurationError: if a parameter is unknown to the model or out of range
    """
    try:
        builder = MODEL_REGISTRY[name]
    except KeyError:
        raise ModelError(f"unknown model {name!r}; choose from {sorted(MODEL_REGISTRY)}") from None
    problems = model_param_problems(name, params, prefix="")
    if problems:
        raise ConfigurationError("; ".join(problems))
    return builder(weights, params)


# ──────────────────────────────────────────────────────────────
# 🔍 Verification of (C1) data
# ──────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class GradCheckReport:
    """Worst relative error between analytic and central-difference gradients."""

    max_rel_err: float
    worst_component: str
    step: float


def grad_check(model: HamiltonianModel, x: LatticeState, h: float = 1e-5) -> GradCheckReport:
    """
    Compare analytic gradients with central differences of the energy.

    The relative error of each component is |a - d| / max(1, |a|, |d|), so
    vanishing gradients are compared absolutely.

    Raises:
        ValueError: if h <= 0
        ModelError: if the energy is not finite at a probed state
    """
    if not h > 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    n = model.n
    if x.n != n:
        raise ModelError(f"state has {x.n} sites but model {model.name!r} has {n}")
    q0, p0 = np.asarray(x.q, dtype=float), np.asarray(x.p, dtype=float)

    # batch of 2n + 2n shifted states: rows [q+, q-, p+, p-]
    eye = h * np.eye(n)
    qs = np.concatenate([q0 + eye, q0 - eye, np.tile(q0, (2 * n, 1))])
    ps = np.concatenate([np.tile(p0, (2 * n, 1)), p0 + eye, p0 - eye])
    energies = np.asarray(model.value(qs, ps), dtype=float)
    if not np.all(np.isfinite(energies)):
        raise ModelError(f"{model.name}: non-finite energy near the probed state")

    numeric = np.concatenate([
        (energies[:n] - energies[n:2 * n]) / (2 * h),
        (energies[2 * n:3 * n] - energies[3 * n:]) / (2 * h),
    ])
    analytic = np.concatenate([model.grad_q(q0, p0), model.grad_p(q0, p0)])
    rel = np.abs(analytic - numeric) / np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    worst = int(np.argmax(rel))
    label = f"q[{worst}]" if worst < n else f"p[{worst - n}]"
    logger.debug("grad_check %s: worst %s rel err %.3e", model.name, label, rel[worst])
    return GradCheckReport(float(rel[worst]), label, h)


def symplectic_trace_defect(model: HamiltonianModel, x: LatticeState, w: WeightSequence,
                            h: float = 1e-4) -> float:
    """
    Weighted trace of the antisymmetric part of the mixed Hessian,
    sum_i rho_i^2 [(d2H/dq dp)_ii - (d2H/dp dq)_ii].

    Second derivatives come from central differences of the analytic
    gradients. The result vanishes for any smooth H; a nonzero value means
    the gradients are not the gradients of one energy.
    """
    n = model.n
    w.require(n)
    q0, p0 = np.asarray(x.q, dtype=float), np.asarray(x.p, dtype=float)
    eye = h * np.eye(n)
    # d/dp_i of dH/dq_i
    qp = np.tile(q0, (n, 1))
    d_qp = np.diagonal(model.grad_q(qp, p0 + eye) - model.grad_q(qp, p0 - eye)) / (2 * h)
    # d/dq_i of dH/dp_i
    pp = np.tile(p0, (n, 1))
    d_pq = np.diagonal(model.grad_p(q0 + eye, pp) - model.grad_p(q0 - eye, pp)) / (2 * h)
    return float(np.sum(w.rho_sq * (d_qp - d_pq)))


def sample_states(n: int, count: int, rng: np.random.Generator, radius: float = 1.0,
                  angular: bool = True) -> list:
    """Uniform random states in the Euclidean ball of ``radius`` in R^{2n}."""
    states = []
    for _ in range(count):
        direction = rng.standard_normal(2 * n)
        direction /= np.linalg.norm(direction)
        r = radius * rng.random() ** (1.0 / (2 * n))
        z = r * direction
        q = wrap_angle(z[:n]) if angular else z[:n]
        states.append(LatticeState(q, z[n:], angular))
    return states
