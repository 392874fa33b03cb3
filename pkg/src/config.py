import json
import math
import os
from dataclasses import dataclass, field, fields, is_dataclass
from typing import Optional

from errors import ConfigValidationError

# ──────────────────────────────────────────────────────────────
# 📦 Configuration block: all paths and constants in one place
# ──────────────────────────────────────────────────────────────
# Numerical defaults shared by the library modules, plus the strict parser
# for the JSON run configurations consumed by main.py. Paths are computed
# relative to the project root so bundled configs resolve from anywhere.

# Goes up two levels from this file (src/config.py) to reach project root
ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# Environment variable that overrides the output directory when --out is absent
OUT_ENV = "LATTICE_OM_OUT"

CONFIG = {
    # Bundled run configurations and the default output location
    "CONFIGS_DIR": os.path.join(ROOT, "configs"),
    "OUT_DIR": os.path.join(ROOT, "out"),

    # Simulation aborts once any coordinate exceeds this magnitude
    "BLOWUP_GUARD": 1e6,

    # Paths per Monte Carlo block; each block has its own (seed, block) stream
    "MC_BLOCK_SIZE": 10_000,

    # Default descending eps ladder for LDP runs
    "EPS_LADDER": [0.4, 0.3, 0.2, 0.15, 0.1],

    # Samples per eps level for the Gaussian oracle
    "ORACLE_SAMPLES": 10**6,

    # Mesh intervals for the lambda1 eigenproblem
    "LAMBDA1_MESH": 4096,

    # Time nodes for small-ball quadratures
    "SMALL_BALL_GRID": 20_001,
}


# ──────────────────────────────────────────────────────────────
# 🔎 Field checks
# ──────────────────────────────────────────────────────────────
# Each check returns None when the value is acceptable, else a message.
def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def positive(v):
    return None if _is_number(v) and v > 0 else "must be > 0"


def non_negative(v):
    return None if _is_number(v) and v >= 0 else "must be >= 0"


def number(v):
    return None if _is_number(v) else "must be a finite number"


def unit_open(v):
    return None if _is_number(v) and abs(v) < 1 else "must satisfy |x| < 1"


def boolean(v):
    return None if isinstance(v, bool) else "must be true or false"


def int_at_least(low):
    def check(v):
        return None if _is_int(v) and v >= low else f"must be an integer >= {low}"
    return check


def optional(check):
    def wrapped(v):
        return None if v is None else check(v)
    return wrapped


def choice(*options):
    def check(v):
        return None if v in options else f"must be one of {list(options)}"
    return check


def list_of(check, min_len=1):
    def wrapped(v):
        if not isinstance(v, list) or len(v) < min_len:
            return f"must be a list with at least {min_len} entries"
        bad = [i for i, item in enumerate(v) if check(item)]
        return f"entries {bad} {check(v[bad[0]])}" if bad else None
    return wrapped


def scalar_or_list(check):
    def wrapped(v):
        return list_of(check)(v) if isinstance(v, list) else check(v)
    return wrapped


def mapping(v):
    return None if isinstance(v, dict) else "must be an object"


# Parameters each registered model accepts under model.params, with their checks
MODEL_PARAMS = {
    "free": {"angular": boolean},
    "harmonic_lattice": {"omega": scalar_or_list(positive)},
    "pendulum_lattice": {"kappa": non_negative},
    "nls_modes": {
        "m": number,
        "modes": int_at_least(1),
        "a": non_negative,
        "p_w": positive,
        "coupling": number,
        "quad_points": optional(int_at_least(3)),
        "normal_form": boolean,
    },
}


def model_param_problems(name, params, prefix="model.params."):
    """One dotted-path message per unknown or out-of-range model parameter."""
    allowed = MODEL_PARAMS.get(name, {})
    problems = []
    for key, value in params.items():
        check = allowed.get(key)
        if check is None:
            problems.append(f"{prefix}{key}: unknown parameter for model {name!r}; "
                            f"expected one of {sorted(allowed)}")
            continue
        message = check(value)
        if message:
            problems.append(f"{prefix}{key}: {message}")
    return problems


def _opt(default, check, **kw):
    return field(default=default, metadata={"check": check}, **kw)


def _list(default, check):
    return field(default_factory=lambda: tuple(default), metadata={"check": check})


def _section(cls):
    return field(default_factory=cls, metadata={"section": cls})


# ──────────────────────────────────────────────────────────────
# 🧾 RunConfig sections
# ──────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class ModelSection:
    name: str = _opt("pendulum_lattice", choice("free", "harmonic_lattice", "pendulum_lattice", "nls_modes"))
    params: dict = field(default_factory=dict, metadata={"check": mapping})


@dataclass(frozen=True)
class WeightsSection:
    shape: tuple = _list([4], list_of(int_at_least(1)))
    decay: float = _opt(0.5, positive)
    rho: Optional[tuple] = _opt(None, optional(list_of(positive)))


@dataclass(frozen=True)
class NoiseSection:
    sigma_q: object = _opt(1.0, scalar_or_list(positive))
    sigma_p: object = _opt(1.0, scalar_or_list(positive))
    epsilon: float = _opt(1.0, non_negative)
    modulation: float = _opt(0.0, unit_open)
    frequency: float = _opt(0.0, non_negative)


@dataclass(frozen=True)
class GridSection:
    T: float = _opt(1.0, positive)
    dt: float = _opt(0.01, positive)
    K: Optional[int] = _opt(None, optional(int_at_least(2)))
    scheme: str = _opt("splitting", choice("euler_maruyama", "splitting"))


@dataclass(frozen=True)
class MonteCarloSection:
    n: int = _opt(10_000, int_at_least(1))
    seed: int = _opt(0, int_at_least(0))
    workers: int = _opt(1, int_at_least(1))


@dataclass(frozen=True)
class InitialSection:
    q: Optional[tuple] = _opt(None, optional(list_of(number)))
    p: Optional[tuple] = _opt(None, optional(list_of(number)))


@dataclass(frozen=True)
class MppSection:
    max_iters: int = _opt(5000, int_at_least(1))
    grad_tol: float = _opt(1e-6, positive)
    constraint: str = _opt("fixed_start", choice("fixed_start", "fixed_both_endpoints"))


@dataclass(frozen=True)
class LdpSection:
    epsilons: tuple = _list(CONFIG["EPS_LADDER"], list_of(positive, min_len=3))
    radius: float = _opt(0.3, positive)
    speed: float = _opt(1.0, number)
    site: int = _opt(0, int_at_least(0))
    oracle: bool = _opt(True, boolean)
    oracle_samples: int = _opt(CONFIG["ORACLE_SAMPLES"], int_at_least(1))
    infimum: bool = _opt(True, boolean)


@dataclass(frozen=True)
class SmallBallSection:
    powers: tuple = _list([1.0, 2.0, 4.0], list_of(positive))
    radius: float = _opt(0.5, positive)
    samples: int = _opt(100_000, int_at_least(1))
    kl_nodes: int = _opt(512, int_at_least(2))
    kl_modes: int = _opt(64, int_at_least(1))


@dataclass(frozen=True)
class KlSection:
    nodes: int = _opt(512, int_at_least(2))
    modes: int = _opt(5, int_at_least(1))


@dataclass(frozen=True)
class NlsSection:
    m: float = _opt(1.0, number)
    modes: int = _opt(8, int_at_least(1))
    a: float = _opt(0.1, non_negative)
    p_w: float = _opt(1.0, positive)
    coupling: float = _opt(1.0, number)
    cutoff: int = _opt(4, int_at_least(1))
    tangential: tuple = _list([1, 2], list_of(int_at_least(1)))
    actions: tuple = _list([0.5, 0.5], list_of(positive))
    threshold: float = _opt(0.1, positive)
    epsilons: tuple = _list([0.1, 0.05, 0.025], list_of(positive))
    normal_form_only: bool = _opt(True, boolean)


@dataclass(frozen=True)
class KamSection:
    k_cutoff: int = _opt(6, int_at_least(0))
    cutoff: int = _opt(12, int_at_least(1))
    alpha: float = _opt(0.05, non_negative)
    alphas: tuple = _list([0.2, 0.1, 0.05, 0.025], list_of(non_negative))
    tau: Optional[float] = _opt(None, optional(positive))
    d: float = _opt(2.0, positive)
    action_low: tuple = _list([0.0, 0.0], list_of(non_negative))
    action_high: tuple = _list([1.0, 1.0], list_of(positive))
    points: int = _opt(41, int_at_least(2))
    toy_samples: int = _opt(100_000, int_at_least(1))
    toy_normal_modes: int = _opt(4, int_at_least(0))


@dataclass(frozen=True)
class RunConfig:
    """A fully validated run configuration."""

    model: ModelSection = _section(ModelSection)
    weights: WeightsSection = _section(WeightsSection)
    noise: NoiseSection = _section(NoiseSection)
    grid: GridSection = _section(GridSection)
    mc: MonteCarloSection = _section(MonteCarloSection)
    initial: InitialSection = _section(InitialSection)
    mpp: MppSection = _section(MppSection)
    ldp: LdpSection = _section(LdpSection)
    smallball: SmallBallSection = _section(SmallBallSection)
    kl: KlSection = _section(KlSection)
    nls: NlsSection = _section(NlsSection)
    kam: KamSection = _section(KamSection)

    def as_dict(self) -> dict:
        return _to_plain(self)


# ──────────────────────────────────────────────────────────────
# 🧪 Strict parsing
# ──────────────────────────────────────────────────────────────
def _to_plain(obj):
    if is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


def _freeze(value):
    return tuple(value) if isinstance(value, list) else value


def _parse_section(cls, raw, prefix, problems):
    if not isinstance(raw, dict):
        problems.append(f"{prefix.rstrip('.') or '<root>'}: must be an object")
        return cls()
    known = {f.name: f for f in fields(cls)}
    for key in raw:
        if key not in known:
            problems.append(f"{prefix}{key}: unknown key")
    values = {}
    for name, f in known.items():
        if name not in raw:
            continue
        section = f.metadata.get("section")
        if section is not None:
            values[name] = _parse_section(section, raw[name], f"{prefix}{name}.", problems)
            continue
        message = f.metadata["check"](raw[name])
        if message:
            problems.append(f"{prefix}{name}: {message}")
        else:
            values[name] = _freeze(raw[name])
    return cls(**values)


def _cross_checks(cfg, problems):
    if cfg.grid.dt > cfg.grid.T:
        problems.append("grid.dt: must not exceed grid.T")
    if cfg.weights.rho is not None:
        sites = math.prod(cfg.weights.shape)
        if len(cfg.weights.rho) != sites:
            problems.append(f"weights.rho: needs {sites} entries for shape {list(cfg.weights.shape)}")
    if len(cfg.nls.tangential) != len(cfg.nls.actions):
        problems.append("nls.actions: needs one action per tangential mode")
    if cfg.nls.tangential and max(cfg.nls.tangential) > cfg.nls.cutoff:
        problems.append("nls.tangential: modes must not exceed nls.cutoff")
    if len(cfg.kam.action_low) != len(cfg.kam.action_high):
        problems.append("kam.action_high: must have the same length as kam.action_low")
    elif any(hi <= lo for lo, hi in zip(cfg.kam.action_low, cfg.kam.action_high)):
        problems.append("kam.action_high: every entry must exceed kam.action_low")


def parse_config(raw: dict) -> RunConfig:
    """
    Validate a decoded JSON document into a RunConfig.

    Raises:
        ConfigValidationError: listing every offending key as a dotted path
    """
    problems = []
    cfg = _parse_section(RunConfig, raw, "", problems)
    # params are checked against the model they belong to, once the name is valid
    if not any(p.startswith(("model.name:", "model.params:", "model:")) for p in problems):
        problems.extend(model_param_problems(cfg.model.name, cfg.model.params))
    if not problems:
        _cross_checks(cfg, problems)
    if problems:
        raise ConfigValidationError(problems)
    return cfg


def load_config(path: Optional[str] = None) -> RunConfig:
    """Read and validate a JSON run configuration; no path gives all defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f)
    except FileNotFoundError:
        raise ConfigValidationError([f"config file not found: {path}"]) from None
    except json.JSONDecodeError as e:
        raise ConfigValidationError([f"config is not valid JSON: {e}"]) from None
    return parse_config(raw)


def output_dir(flag: Optional[str] = None) -> str:
    """--out wins, then $LATTICE_OM_OUT, then the project's out/ directory."""
    return flag or os.environ.get(OUT_ENV) or CONFIG["OUT_DIR"]
