"""NLS Spectral Module

The cubic Schrödinger equation on [0, π] with Dirichlet ends, written in the
sine modes phi_j = sqrt(2/π) sin(jx), q_j = x_j + i y_j:

    H = 1/2 sum_j lambda_j (x_j^2 + y_j^2) + c/4 int_0^π (X^2 + Y^2)^2 dx,
    lambda_j = j^2 + m,   X = sum_j x_j phi_j,  Y = sum_j y_j phi_j

with dx/dt = dH/dy and dy/dt = -dH/dx. The quartic integral is evaluated by
the trapezoidal rule on a uniform grid fine enough to be exact for the
trigonometric polynomial it integrates.

Also here: the coefficients G_ijkl and their Birkhoff averages, the normal
form (alpha, beta, A, B), its nondegeneracy checks, simulation wrappers on
top of sde_engine and the torus deviation diagnostics.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache, partial
from typing import Optional, Sequence

import numpy as np

from config import CONFIG
from errors import ConfigurationError, DimensionError
from gauss_tools import ProbabilityEstimate
from hamiltonian_models import HamiltonianModel
from kam_diag import enumerate_divisors
from lattice_core import LatticeState, PathGrid, WeightSequence
from ldp_mc import rate_function
from sde_engine import SimConfig, run_blocks, simulate, simulate_deterministic

logger = logging.getLogger(__name__)


# ──────────────────────────────────────────────────────────────
# 🎼 Eigenpairs and quartic coefficients
# ──────────────────────────────────────────────────────────────
def mode_grid(points: int = 2048) -> np.ndarray:
    """Uniform grid on [0, π] with ``points`` nodes, endpoints included."""
    return np.linspace(0.0, np.pi, points)


def eigen_pair(j: int, m: float, x: Optional[np.ndarray] = None):
    """
    Dirichlet eigenpair of A = -d^2/dx^2 + m on [0, π].

    Returns:
        tuple: (phi_j sampled on ``x``, lambda_j = j^2 + m)
    """
    if j < 1:
        raise ValueError(f"mode index must be >= 1, got {j}")
    x = mode_grid() if x is None else np.asarray(x, dtype=float)
    return math.sqrt(2.0 / math.pi) * np.sin(j * x), float(j * j + m)


def has_zero_sign_sum(i: int, j: int, k: int, l: int) -> bool:
    """Whether i ± j ± k ± l = 0 for some choice of signs."""
    return any(i + a * j + b * k + c * l == 0 for a, b, c in itertools.product((1, -1), repeat=3))


@lru_cache(maxsize=None)
def _legendre(points: int):
    nodes, weights = np.polynomial.legendre.leggauss(points)
    return 0.5 * math.pi * (nodes + 1.0), 0.5 * math.pi * weights


def g_coefficient(i: int, j: int, k: int, l: int, shortcut: bool = True) -> float:
    """
    G_ijkl = int_0^π phi_i phi_j phi_k phi_l dx by Gauss-Legendre quadrature.

    With ``shortcut`` the coefficient is returned as exactly 0 when no sign
    pattern makes i ± j ± k ± l vanish.
    """
    if min(i, j, k, l) < 1:
        raise ValueError("mode indices must be >= 1")
    if shortcut and not has_zero_sign_sum(i, j, k, l):
        return 0.0
    x, w = _legendre(2 * (i + j + k + l) + 32)
    product = np.sin(i * x) * np.sin(j * x) * np.sin(k * x) * np.sin(l * x)
    return float((2.0 / math.pi) ** 2 * np.dot(w, product))


def birkhoff_gbar(i: int, j: int) -> float:
    """Normal-form coefficient (4 - delta_ij) / (4π)."""
    if min(i, j) < 1:
        raise ValueError("mode indices must be >= 1")
    return (4.0 - (1.0 if i == j else 0.0)) / (4.0 * math.pi)


def gbar_from_quadrature(i: int, j: int) -> float:
    """Resonant average of the quartic term: G_iijj for i != j, G_iiii / 2 for i = j."""
    if i == j:
        return 0.5 * g_coefficient(i, i, i, i)
    return g_coefficient(i, i, j, j)


def gbar_matrix(modes: int) -> np.ndarray:
    idx = np.arange(1, modes + 1)
    return (4.0 - np.equal.outer(idx, idx)) / (4.0 * math.pi)


# ──────────────────────────────────────────────────────────────
# 🌊 Mode model and its Hamiltonians
# ──────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class NlsModel:
    """
    Truncated cubic NLS in sine modes 1..modes.

    Attributes:
        m: mass parameter
        modes: number of retained modes J
        a, p_w: exponents of the mode weights j^p_w e^(a j)
        coupling: prefactor of the quartic term, 0 gives the linear equation
        quad_points: trapezoid intervals for the quartic integral
    """

    m: float = 1.0
    modes: int = 8
    a: float = 0.1
    p_w: float = 1.0
    coupling: float = 1.0
    quad_points: Optional[int] = None

    def __post_init__(self):
        if self.modes < 1:
            raise ValueError("an NLS model needs at least one mode")
        if self.a < 0 or self.p_w < 0.5:
            raise ValueError(f"mode weights need a >= 0 and p_w >= 1/2, got a={self.a}, p_w={self.p_w}")
        quad = self.quad_points or 4 * self.modes + 4
        if quad <= 2 * self.modes:
            raise ValueError(f"quad_points must exceed 2 * modes = {2 * self.modes}")
        object.__setattr__(self, "quad_points", int(quad))

    @property
    def indices(self) -> np.ndarray:
        return np.arange(1, self.modes + 1)

    @property
    def lambdas(self) -> np.ndarray:
        return self.indices.astype(float) ** 2 + self.m

    def mode_weights(self) -> WeightSequence:
        j = self.indices.astype(float)
        return WeightSequence.chain(j**self.p_w * np.exp(self.a * j))

    def basis_on_grid(self):
        """(phi matrix (modes, N-1) at interior trapezoid nodes, node spacing)."""
        h = math.pi / self.quad_points
        x = h * np.arange(1, self.quad_points)
        return math.sqrt(2.0 / math.pi) * np.sin(np.outer(self.indices, x)), h

    def hamiltonian(self) -> "NlsModeHamiltonian":
        return NlsModeHamiltonian(self)

    def normal_form_hamiltonian(self) -> "NlsNormalFormHamiltonian":
        return NlsNormalFormHamiltonian(self)


class NlsModeHamiltonian(HamiltonianModel):
    """Full truncated Hamiltonian; q holds the real parts x, p the imaginary parts y."""

    name = "nls_modes"
    angular = False
    separable = False

    def __init__(self, nls: NlsModel):
        super().__init__(nls.modes)
        self.nls = nls
        self.lam = nls.lambdas
        self.phi, self.h = nls.basis_on_grid()
        self.coupling = nls.coupling

    def _fields(self, x, y):
        return np.asarray(x, dtype=float) @ self.phi, np.asarray(y, dtype=float) @ self.phi

    def value(self, q, p):
        X, Y = self._fields(q, p)
        quartic = 0.25 * self.coupling * self.h * np.sum((X**2 + Y**2) ** 2, axis=-1)
        return 0.5 * np.sum(self.lam * (np.square(q) + np.square(p)), axis=-1) + quartic

    def _nonlinear_grad(self, q, p):
        X, Y = self._fields(q, p)
        density = self.coupling * self.h * (X**2 + Y**2)
        return (density * X) @ self.phi.T, (density * Y) @ self.phi.T

    def grad_q(self, q, p):
        return self.lam * np.asarray(q, dtype=float) + self._nonlinear_grad(q, p)[0]

    def grad_p(self, q, p):
        return self.lam * np.asarray(p, dtype=float) + self._nonlinear_grad(q, p)[1]

    def hessian_vector(self, q, p, vq, vp):
        X, Y = self._fields(q, p)
        VX, VY = self._fields(vq, vp)
        c = self.coupling * self.h
        hx = (c * ((3 * X**2 + Y**2) * VX + 2 * X * Y * VY)) @ self.phi.T
        hy = (c * (2 * X * Y * VX + (X**2 + 3 * Y**2) * VY)) @ self.phi.T
        return self.lam * vq + hx, self.lam * vp + hy

    def _rotate(self, x, y, angle):
        c, s = np.cos(angle), np.sin(angle)
        return c * x + s * y, c * y - s * x

    def strang_step(self, q, p, h):
        """Half linear rotation, implicit-midpoint quartic step, half rotation."""
        x, y = self._rotate(q, p, 0.5 * h * self.lam)
        if self.coupling != 0.0:
            x, y = self._implicit_midpoint(x, y, h)
        return self._rotate(x, y, 0.5 * h * self.lam)

    def _implicit_midpoint(self, x, y, h, tol=1e-14, max_iter=50):
        xn, yn = x, y
        for _ in range(max_iter):
            gx, gy = self._nonlinear_grad(0.5 * (x + xn), 0.5 * (y + yn))
            x_next, y_next = x + h * gy, y - h * gx
            change = max(np.max(np.abs(x_next - xn)), np.max(np.abs(y_next - yn)))
            xn, yn = x_next, y_next
            if change <= tol * (1.0 + np.max(np.abs(xn)) + np.max(np.abs(yn))):
                break
        return xn, yn

    def describe(self):
        return {**super().describe(), "m": self.nls.m, "coupling": self.coupling}


class NlsNormalFormHamiltonian(HamiltonianModel):
    """Integrable normal form sum_j lambda_j I_j + 2 sum_ij Gbar_ij I_i I_j, I_j = (x_j^2 + y_j^2)/2."""

    name = "nls_normal_form"
    angular = False
    separable = False

    def __init__(self, nls: NlsModel):
        super().__init__(nls.modes)
        self.nls = nls
        self.lam = nls.lambdas
        self.gbar = gbar_matrix(nls.modes)

    @staticmethod
    def actions(q, p):
        return 0.5 * (np.square(q) + np.square(p))

    def frequencies(self, q, p):
        """nu_j = dH/dI_j = lambda_j + 4 (Gbar I)_j."""
        return self.lam + 4.0 * self.actions(q, p) @ self.gbar

    def value(self, q, p):
        I = self.actions(q, p)
        return np.sum(self.lam * I, axis=-1) + 2.0 * np.sum((I @ self.gbar) * I, axis=-1)

    def grad_q(self, q, p):
        return self.frequencies(q, p) * q

    def grad_p(self, q, p):
        return self.frequencies(q, p) * p

    def hessian_vector(self, q, p, vq, vp):
        nu = self.frequencies(q, p)
        coupled = 4.0 * ((q * vq + p * vp) @ self.gbar)
        return nu * vq + q * coupled, nu * vp + p * coupled

    def strang_step(self, q, p, h):
        # actions are invariant, so the flow is a rotation at fixed frequencies
        angle = h * self.frequencies(q, p)
        c, s = np.cos(angle), np.sin(angle)
        return c * q + s * p, c * p - s * q


# ──────────────────────────────────────────────────────────────
# 📍 Mode states and tori
# ──────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class ModeState:
    """Real and imaginary parts of the mode amplitudes q_j = x_j + i y_j."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        y = np.array(self.y, dtype=float).reshape(-1)
        if x.shape != y.shape:
            raise DimensionError(f"x has {x.size} modes but y has {y.size}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("mode amplitudes must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_complex(cls, q) -> "ModeState":
        q = np.asarray(q, dtype=complex)
        return cls(q.real, q.imag)

    @classmethod
    def zeros(cls, modes: int) -> "ModeState":
        return cls(np.zeros(modes), np.zeros(modes))

    @property
    def modes(self) -> int:
        return self.x.size

    def actions(self) -> np.ndarray:
        return 0.5 * (self.x**2 + self.y**2)

    def as_complex(self) -> np.ndarray:
        return self.x + 1j * self.y

    def lattice_state(self) -> LatticeState:
        return LatticeState(self.x, self.y, angular=False)


@dataclass(frozen=True)
class TorusSpec:
    """Torus |q_j|^2 = 2 I_j for the tangential modes J (1-based)."""

    modes: tuple
    actions: np.ndarray

    def __post_init__(self):
        modes = tuple(int(j) for j in self.modes)
        actions = np.array(self.actions, dtype=float).reshape(-1)
        if len(modes) != actions.size or len(set(modes)) != len(modes):
            raise ValueError("a torus needs one action per distinct tangential mode")
        if min(modes) < 1:
            raise ValueError("mode indices must be >= 1")
        if not np.all(actions > 0):
            raise ValueError("torus actions must be strictly positive")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "actions", actions)

    def initial_state(self, total_modes: int, phases: Optional[Sequence[float]] = None,
                      offset: float = 0.0) -> ModeState:
        """A point on the torus (actions shifted by ``offset``), normal modes at rest."""
        if max(self.modes) > total_modes:
            raise DimensionError(f"torus mode {max(self.modes)} exceeds the {total_modes} modes")
        phases = np.zeros(len(self.modes)) if phases is None else np.asarray(phases, dtype=float)
        radius = np.sqrt(2.0 * (self.actions + offset))
        q = np.zeros(total_modes, dtype=complex)
        q[np.array(self.modes) - 1] = radius * np.exp(-1j * phases)
        return ModeState.from_complex(q)


@dataclass(frozen=True)
class TorusDeviation:
    """Per-node distance of a mode path from a torus."""

    times: np.ndarray
    action_dev: np.ndarray
    normal_energy: np.ndarray


def torus_deviation(path: PathGrid, torus: TorusSpec, nls: NlsModel) -> TorusDeviation:
    """
    action_dev(t) = max_{j in J} |I_j(t) - I_j| and normal_energy(t) =
    sum_{j not in J} rho_j^2 |q_j(t)|^2 along a mode path.
    """
    if path.n != nls.modes or max(torus.modes) > path.n:
        raise DimensionError(f"path has {path.n} modes, model {nls.modes}, torus up to {max(torus.modes)}")
    tangential = np.array(torus.modes) - 1
    normal = np.setdiff1d(np.arange(path.n), tangential)
    actions = 0.5 * (np.asarray(path.q) ** 2 + np.asarray(path.p) ** 2)
    action_dev = np.max(np.abs(actions[:, tangential] - torus.actions), axis=1)
    rho_sq = nls.mode_weights().rho_sq
    normal_energy = np.sum(rho_sq[normal] * 2.0 * actions[:, normal], axis=1)
    return TorusDeviation(path.times, action_dev, normal_energy)


# ──────────────────────────────────────────────────────────────
# 🧭 Normal form and nondegeneracy
# ──────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class NormalForm:
    """
    Frequency data of the quartic normal form around the torus family of J.

    omega(I) = alpha + A I on the tangential modes, Omega(I) = beta + B I on
    the normal modes up to the cutoff.
    """

    tangential: tuple
    normal_modes: tuple
    alpha: np.ndarray
    beta: np.ndarray
    A: np.ndarray
    B: np.ndarray

    @property
    def n(self) -> int:
        return len(self.tangential)

    def omega(self, I) -> np.ndarray:
        return self.alpha + np.asarray(I, dtype=float) @ self.A.T

    def Omega(self, I) -> np.ndarray:
        return self.beta + np.asarray(I, dtype=float) @ self.B.T

    def energy(self, I, Z=None) -> float:
        """<alpha, I> + <beta, Z> + 1/2 <A I, I> + <B I, Z>."""
        I = np.asarray(I, dtype=float)
        Z = np.zeros(len(self.normal_modes)) if Z is None else np.asarray(Z, dtype=float)
        return float(self.alpha @ I + self.beta @ Z + 0.5 * I @ self.A @ I + Z @ self.B @ I)


def normal_form(nls: NlsModel, J: Sequence[int], cutoff: int) -> NormalForm:
    """
    Assemble (alpha, beta, A, B) from lambda_j and Gbar.

    With |q_i|^2 = 2 I_i the quartic average equals 2 sum Gbar_ij I_i I_j,
    so A = 4 Gbar[J, J] and B = 4 Gbar[N, J].
    """
    J = tuple(sorted(int(j) for j in J))
    if not J or J[0] < 1 or J[-1] > cutoff:
        raise ConfigurationError(f"tangential modes {J} must lie in 1..{cutoff}")
    normal = tuple(j for j in range(1, cutoff + 1) if j not in J)
    lam = lambda js: np.array([j * j + nls.m for j in js], dtype=float)
    gbar = gbar_matrix(cutoff)
    tj, nj = np.array(J) - 1, np.array(normal, dtype=int) - 1
    return NormalForm(J, normal, lam(J), lam(normal), 4.0 * gbar[np.ix_(tj, tj)],
                      4.0 * gbar[np.ix_(nj, tj)])


@dataclass(frozen=True)
class NondegeneracyReport:
    det_A: float
    min_l_beta: float
    worst_l: tuple
    min_divisor: float
    worst_divisor: tuple
    tolerance: float
    violations: tuple = field(default=())

    @property
    def passed(self) -> bool:
        return not self.violations

    def as_dict(self) -> dict:
        return {
            "det_A": self.det_A,
            "min_l_beta": self.min_l_beta,
            "worst_l": list(self.worst_l),
            "min_divisor": self.min_divisor,
            "worst_divisor": [list(v) for v in self.worst_divisor],
            "tolerance": self.tolerance,
            "violations": list(self.violations),
            "passed": self.passed,
        }


def check_nondegeneracy(nf: NormalForm, l_range: int = 2, k_cutoff: int = 3,
                        action_samples: int = 64, action_max: float = 0.1, seed: int = 0,
                        tol: float = 1e-12) -> NondegeneracyReport:
    """
    det A != 0, <l, beta> != 0 for 1 <= |l| <= l_range, and
    <k, omega(I)> + <l, Omega(I)> != 0 over sampled actions I in (0, action_max]^n.
    """
    det_a = float(np.linalg.det(nf.A))
    pairs = enumerate_divisors(nf.n, k_cutoff, len(nf.normal_modes), l_max=l_range)
    ks, ls = pairs
    nonzero_l = np.any(ls != 0, axis=1)

    # no normal modes leaves no <l, beta> condition to check
    l_only = nonzero_l & ~np.any(ks != 0, axis=1)
    if np.any(l_only):
        l_beta = np.abs(ls[l_only] @ nf.beta)
        worst = int(np.argmin(l_beta))
        min_l_beta = float(l_beta[worst])
        worst_l = tuple(int(v) for v in ls[l_only][worst])
    else:
        min_l_beta, worst_l = math.inf, ()

    # divisors that involve a normal frequency, or the k-only ones when there is none
    mixed = nonzero_l if np.any(nonzero_l) else np.any(ks != 0, axis=1)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    I = rng.uniform(0.0, action_max, size=(action_samples, nf.n))
    # divisor grid: samples x pairs
    div = np.abs(nf.omega(I) @ ks[mixed].T + nf.Omega(I) @ ls[mixed].T)
    flat = int(np.argmin(div))
    s, pidx = np.unravel_index(flat, div.shape)
    min_div = float(div[s, pidx])
    worst_div = (tuple(int(v) for v in ks[mixed][pidx]), tuple(int(v) for v in ls[mixed][pidx]),
                 tuple(float(v) for v in I[s]))

    violations = []
    if abs(det_a) <= tol:
        violations.append("det A vanishes")
    if min_l_beta <= tol:
        violations.append(f"<l, beta> vanishes for l={list(worst_l)}")
    if min_div <= tol:
        violations.append("small divisor vanishes on the sampled actions")
    for v in violations:
        logger.warning("nondegeneracy: %s", v)
    return NondegeneracyReport(det_a, min_l_beta, worst_l, min_div, worst_div, tol, tuple(violations))


# ──────────────────────────────────────────────────────────────
# 🎲 Simulation, most probable path and rates
# ──────────────────────────────────────────────────────────────
def _check_modes(nls, u0):
    if u0.modes != nls.modes:
        raise DimensionError(f"initial data has {u0.modes} modes but the model has {nls.modes}")


def simulate_snls(nls: NlsModel, noise, u0: ModeState, T: float, cfg: SimConfig,
                  normal_form_only: bool = False) -> PathGrid:
    """
    Stochastic mode dynamics with independent real/imaginary noises.

    ``noise.sigma_q`` carries sigma^R per mode and ``noise.sigma_p`` sigma^I.
    """
    _check_modes(nls, u0)
    model = nls.normal_form_hamiltonian() if normal_form_only else nls.hamiltonian()
    return simulate(model, noise, u0.lattice_state(), T, cfg)


def mpp_nls(nls: NlsModel, u0: ModeState, T: float, cfg: SimConfig,
            normal_form_only: bool = False) -> PathGrid:
    """Most probable path from u0: the deterministic mode flow."""
    _check_modes(nls, u0)
    model = nls.normal_form_hamiltonian() if normal_form_only else nls.hamiltonian()
    return simulate_deterministic(model, u0.lattice_state(), T, cfg)


def nls_rate_function(psi: PathGrid, nls: NlsModel, noise, u0: Optional[ModeState] = None) -> float:
    """Rate of a mode path under the mode weights; +inf when psi does not start at u0."""
    x0 = u0.lattice_state() if u0 is not None else None
    return rate_function(psi, nls.hamiltonian(), noise, nls.mode_weights(), x0)


def _max_action_dev(Q, P, dt, tangential, actions):
    current = 0.5 * (Q[:, :, tangential] ** 2 + P[:, :, tangential] ** 2)
    return np.max(np.abs(current - actions), axis=(0, 2))


@dataclass(frozen=True)
class ExceedanceLevel:
    eps: float
    seed: int
    threshold: float
    estimate: ProbabilityEstimate
    mean_max_dev: float

    def as_record(self) -> dict:
        return {
            "eps": self.eps,
            "seed": self.seed,
            "threshold": self.threshold,
            **self.estimate.as_dict(),
            "eps2_ln_p": self.eps**2 * self.estimate.log_p,
            "mean_max_action_dev": self.mean_max_dev,
        }


def torus_exceedance_ladder(nls: NlsModel, torus: TorusSpec, noise, epsilons: Sequence[float],
                            threshold: float, T: float, n: int, seed: int, dt: float = 1e-3,
                            normal_form_only: bool = True, scheme: str = "splitting",
                            workers: int = 1) -> list:
    """
    P(max_t action_dev > threshold) along a descending eps ladder.

    Paths start on the torus; level ``i`` uses seed ``seed + i``.

    Returns:
        list[ExceedanceLevel]
    """
    if not threshold > 0:
        raise ValueError("the exceedance threshold must be positive")
    model = nls.normal_form_hamiltonian() if normal_form_only else nls.hamiltonian()
    x0 = torus.initial_state(nls.modes).lattice_state()
    reducer = partial(_max_action_dev, tangential=np.array(torus.modes) - 1, actions=torus.actions)
    levels = []
    for level, eps in enumerate(sorted(epsilons, reverse=True)):
        cfg = SimConfig(dt=dt, seed=seed + level, scheme=scheme)
        blocks = run_blocks(model, noise.with_epsilon(eps), x0, T, cfg, n, reducer,
                            workers=workers, block_size=CONFIG["MC_BLOCK_SIZE"])
        devs = np.concatenate(blocks)
        hits = int(np.count_nonzero(devs > threshold))
        levels.append(ExceedanceLevel(float(eps), seed + level, float(threshold),
                                      ProbabilityEstimate.from_counts(hits, n), float(np.mean(devs))))
        logger.info("torus ladder eps=%g: %d / %d exceedances", eps, hits, n)
    return levels
