"""External run configuration: "key = value" text, defaults, validation.

The config layer owns all user-facing parameter validation (ranges, the
2K > 4 requirement, scheme/form pairing, T/dt divisibility) and the initial
condition mini-language:

    flat:<c>
    modes:[(k1,k2,amp,phase),...]          sum of amp*cos(2 pi (k.x) + phase)
    random_smooth:<seed>,<decay>           reproducible band-limited field
"""
from __future__ import annotations

import ast
import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .dynamics import FormKind, ModelForm, default_dt
from .grid import GridSpec, ScalarField
from .harness import SCHEMES, ModelConfig
from .noise import TAG_IC, derive_key

__all__ = [
    "ConfigError",
    "RunConfig",
    "resolve_dt",
    "parse_config",
    "serialize_config",
    "config_from_file",
    "to_model_form",
    "to_model_config",
    "n_steps_of",
    "build_initial",
    "random_smooth_field",
]

RANDOM_SMOOTH_KMAX = 5
RANDOM_SMOOTH_GRAD_BOUND = 0.5


class ConfigError(ValueError):
    pass


def resolve_dt(n: int, T: float) -> float:
    """Largest dt that divides T exactly while staying under 0.25 h^2.

    Used when the config leaves dt unset, so the defaults always validate.
    """
    return T / math.ceil(T / default_dt(n))


@dataclass(frozen=True)
class RunConfig:
    form: str = "ito_mcf"
    n: int = 64
    dt: float = 0.0          # 0 means "derive from n and T via resolve_dt"
    T: float = 0.1
    eps: float = 0.1
    eta: float = 0.0
    bigK: int = 3
    R: float = 1e6
    rho: float = 1.0
    theta: float = 0.5
    scheme: str = ""         # "" means "derive from form"
    n_paths: int = 1
    base_seed: int = 0
    record_stride: int = 10
    initial_condition: str = "flat:0.0"
    output_dir: str = "out"


_KEY_ORDER = tuple(f.name for f in fields(RunConfig))
_FORM_NAMES = tuple(k.value for k in FormKind)


def _parse_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {raw!r}")


def _parse_float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {raw!r}")


def _validate(cfg: RunConfig) -> RunConfig:
    if cfg.form not in _FORM_NAMES:
        raise ConfigError(f"form must be one of {_FORM_NAMES}, got {cfg.form!r}")
    if cfg.n < 8 or cfg.n % 2:
        raise ConfigError(f"n must be an even integer >= 8, got {cfg.n}")
    scheme = cfg.scheme or (
        "heun_strat" if cfg.form == "stratonovich_mcf" else "em_imex"
    )
    if scheme not in SCHEMES:
        raise ConfigError(f"scheme must be one of {SCHEMES}, got {cfg.scheme!r}")
    strat = cfg.form == "stratonovich_mcf"
    if strat != (scheme == "heun_strat"):
        raise ConfigError(f"scheme {scheme!r} cannot integrate form {cfg.form!r}")
    if cfg.T <= 0.0:
        raise ConfigError(f"T must be positive, got {cfg.T}")
    if cfg.dt < 0.0:
        raise ConfigError(f"dt must be positive, got {cfg.dt}")
    dt = cfg.dt if cfg.dt else resolve_dt(cfg.n, cfg.T)
    m = round(cfg.T / dt)
    if m < 1 or abs(m * dt - cfg.T) > 1e-9 * max(cfg.T, dt):
        raise ConfigError(f"T = {cfg.T} is not an integer multiple of dt = {dt}")
    if not 0.0 <= cfg.eps <= 1.0:
        raise ConfigError(f"eps must lie in [0, 1], got {cfg.eps}")
    if not 0.0 <= cfg.eta <= 1.0:
        raise ConfigError(f"eta must lie in [0, 1], got {cfg.eta}")
    if 2 * cfg.bigK <= 4:
        raise ConfigError(
            f"bigK must satisfy 2K > 4 (so bigK >= 3), got {cfg.bigK}"
        )
    if not cfg.R > 0.0:
        raise ConfigError(f"R must be positive, got {cfg.R}")
    if not 0.0 < cfg.rho < 2.0:
        raise ConfigError(f"rho must lie in (0,2), got {cfg.rho}")
    if cfg.theta < 0.0:
        raise ConfigError(f"theta must be nonnegative, got {cfg.theta}")
    if cfg.n_paths < 1:
        raise ConfigError(f"n_paths must be at least 1, got {cfg.n_paths}")
    if cfg.base_seed < 0:
        raise ConfigError(f"base_seed must be nonnegative, got {cfg.base_seed}")
    if cfg.record_stride < 1:
        raise ConfigError(f"record_stride must be at least 1, got {cfg.record_stride}")
    if not cfg.output_dir:
        raise ConfigError("output_dir must be nonempty")
    parse_initial_spec(cfg.initial_condition)  # raises on malformed specs
    try:
        to_model_form(cfg)
    except ValueError as e:
        raise ConfigError(str(e))
    return cfg


def parse_config(text: str) -> RunConfig:
    """Parse "key = value" lines; '#' starts a comment; unknown keys error."""
    values: dict[str, object] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _KEY_ORDER:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        if key in ("n", "bigK", "n_paths", "base_seed", "record_stride"):
            values[key] = _parse_int(key, raw)
        elif key in ("dt", "T", "eps", "eta", "R", "rho", "theta"):
            values[key] = _parse_float(key, raw)
        else:
            values[key] = raw
    cfg = RunConfig(**values)
    if not cfg.dt and cfg.n >= 8 and cfg.T > 0.0:
        cfg = replace(cfg, dt=resolve_dt(cfg.n, cfg.T))
    if not cfg.scheme:
        cfg = replace(
            cfg,
            scheme="heun_strat" if cfg.form == "stratonovich_mcf" else "em_imex",
        )
    return _validate(cfg)


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for key in _KEY_ORDER:
        val = getattr(cfg, key)
        lines.append(f"{key} = {val!r}" if isinstance(val, float) else f"{key} = {val}")
    return "\n".join(lines) + "\n"


def config_from_file(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def n_steps_of(cfg: RunConfig) -> int:
    return int(round(cfg.T / cfg.dt))


def to_model_form(cfg: RunConfig) -> ModelForm:
    kind = FormKind(cfg.form)
    if kind in (FormKind.REGULARIZED, FormKind.REGULARIZED_TRUNCATED):
        return ModelForm(
            kind,
            eps=cfg.eps,
            eta=cfg.eta,
            big_k=cfg.bigK,
            r_trunc=cfg.R if kind is FormKind.REGULARIZED_TRUNCATED else float("inf"),
        )
    if kind is FormKind.RHO_VARIANT:
        return ModelForm(kind, rho=cfg.rho)
    return ModelForm(kind)


def to_model_config(cfg: RunConfig, **overrides) -> ModelConfig:
    base = dict(
        form=to_model_form(cfg),
        scheme=cfg.scheme,
        n=cfg.n,
        dt=cfg.dt,
        n_steps=n_steps_of(cfg),
        record_stride=cfg.record_stride,
    )
    base.update(overrides)
    return ModelConfig(**base)


# ---------------------------------------------------------------------------
# initial conditions

def parse_initial_spec(spec: str):
    """Split an IC spec into (kind, payload); raises ConfigError if malformed."""
    if ":" not in spec:
        raise ConfigError(f"initial_condition needs 'kind:args', got {spec!r}")
    kind, _, arg = spec.partition(":")
    kind = kind.strip()
    if kind == "flat":
        try:
            return "flat", float(arg)
        except ValueError:
            raise ConfigError(f"flat initial condition needs a number, got {arg!r}")
    if kind == "modes":
        try:
            modes = ast.literal_eval(arg.strip())
        except (ValueError, SyntaxError):
            raise ConfigError(f"cannot parse mode list {arg!r}")
        if not isinstance(modes, (list, tuple)) or not modes:
            raise ConfigError("mode list must be a nonempty [(k1,k2,amp,phase), ...]")
        out = []
        for m in modes:
            if not isinstance(m, (list, tuple)) or len(m) != 4:
                raise ConfigError(f"each mode needs (k1, k2, amp, phase), got {m!r}")
            k1, k2, amp, phase = m
            if int(k1) != k1 or int(k2) != k2:
                raise ConfigError(f"mode numbers must be integers, got {m!r}")
            out.append((int(k1), int(k2), float(amp), float(phase)))
        return "modes", out
    if kind == "random_smooth":
        parts = [p.strip() for p in arg.split(",")]
        if len(parts) != 2:
            raise ConfigError(
                f"random_smooth needs 'seed,decay', got {arg!r}"
            )
        try:
            seed = int(parts[0])
            decay = float(parts[1])
        except ValueError:
            raise ConfigError(f"random_smooth needs 'seed,decay', got {arg!r}")
        if decay < 3.0:
            raise ConfigError(f"random_smooth decay must be >= 3, got {decay}")
        return "random_smooth", (seed, decay)
    raise ConfigError(f"unknown initial condition kind {kind!r}")


def _half_plane_modes(kmax: int) -> list[tuple[int, int]]:
    """One representative per conjugate mode pair, fixed order."""
    out = []
    for k1 in range(0, kmax + 1):
        for k2 in range(-kmax, kmax + 1):
            if k1 == 0 and k2 <= 0:
                continue
            out.append((k1, k2))
    return out


def random_smooth_field(grid: GridSpec, seed: int, decay: float) -> ScalarField:
    """Band-limited random field with |k|^(-decay) amplitudes.

    The mode set, phases, and amplitudes depend only on (seed, decay); values
    are exact trigonometric evaluations on the grid nodes, so refining the
    grid samples the same continuum function. Amplitudes are normalized so
    sup |grad u| <= RANDOM_SMOOTH_GRAD_BOUND.
    """
    modes = _half_plane_modes(RANDOM_SMOOTH_KMAX)
    rng = np.random.Generator(np.random.Philox(key=derive_key(seed, TAG_IC, 0)))
    phases = rng.uniform(0.0, 2.0 * math.pi, size=len(modes))
    norms = np.array([math.hypot(k1, k2) for k1, k2 in modes])
    amps = norms**-decay
    amps *= RANDOM_SMOOTH_GRAD_BOUND / float(np.sum(amps * 2.0 * math.pi * norms))
    x1, x2 = grid.nodes()
    vals = np.zeros((grid.n, grid.n))
    for (k1, k2), a, ph in zip(modes, amps, phases):
        vals += a * np.cos(2.0 * math.pi * (k1 * x1 + k2 * x2) + ph)
    return ScalarField(grid, vals)


def build_initial(spec: str, grid: GridSpec) -> ScalarField:
    kind, payload = parse_initial_spec(spec)
    if kind == "flat":
        return ScalarField(grid, np.full((grid.n, grid.n), float(payload)))
    if kind == "modes":
        x1, x2 = grid.nodes()
        vals = np.zeros((grid.n, grid.n))
        for k1, k2, amp, phase in payload:
            vals += amp * np.cos(2.0 * math.pi * (k1 * x1 + k2 * x2) + phase)
        return ScalarField(grid, vals)
    seed, decay = payload
    return random_smooth_field(grid, seed, decay)
