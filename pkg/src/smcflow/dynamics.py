"""Model forms, drift/diffusion assembly, and time steppers.

The driving noise is a single scalar Brownian motion; each model form fixes a
drift and the diffusion coefficient field sqrt(rho) * H(grad u):

* ``stratonovich_mcf``   du = H v dt + sqrt(rho) H o dW  (Heun stepping)
* ``ito_mcf``            du = (Lap u / 2 + H v / 2) dt + H dW
* ``ito_anisotropic``    du = (Lap u - w^T D^2u w / 2) dt + H dW
* ``regularized``        adds eps * Lap u - eta * Delta^(2K) u
* ``regularized_truncated`` additionally clips the Hessian entrywise
* ``rho_variant``        du = (rho/2 Lap u + (1 - rho/2) H v) dt + sqrt(rho) H dW

The Ito stepper is IMEX: the linear part A = c * Lap - eta * Delta^(2K)
(with c the form's Laplacian prefactor) is treated implicitly through a
diagonal Fourier solve, and the remaining nondegenerate-free terms stay
explicit. For a constant initial field every stepper reproduces
u(t) = c + sqrt(rho) W(t) to rounding.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .grid import (
    DiffMethod,
    GridSpec,
    ScalarField,
    SymTensorField,
    div_spectral,
    get_workspace,
    grad_spectral_hat,
    hess_spectral_hat,
    integrate,
)
from .geometry import anisotropic_operator, geometry_bundle, mcf_operator, strat_correction
from .noise import NoisePath

__all__ = [
    "FormKind",
    "ModelForm",
    "NonFiniteFieldError",
    "PathState",
    "StepAudit",
    "drift",
    "diffusion",
    "truncate_hessian",
    "truncate_hessian_arrays",
    "EmImexStepper",
    "HeunStratStepper",
    "step_em_imex",
    "step_heun_strat",
    "monitor_tau_r",
    "PicardReport",
    "mild_picard_iterate",
    "default_dt",
]


class FormKind(Enum):
    STRATONOVICH_MCF = "stratonovich_mcf"
    ITO_MCF = "ito_mcf"
    ITO_ANISOTROPIC = "ito_anisotropic"
    REGULARIZED = "regularized"
    REGULARIZED_TRUNCATED = "regularized_truncated"
    RHO_VARIANT = "rho_variant"


_ANISO_KINDS = (FormKind.ITO_ANISOTROPIC, FormKind.REGULARIZED, FormKind.REGULARIZED_TRUNCATED)


@dataclass(frozen=True)
class ModelForm:
    """A model form plus its parameters; validated on construction."""

    kind: FormKind
    eps: float = 0.0
    eta: float = 0.0
    big_k: int = 3
    r_trunc: float = float("inf")
    rho: float = 1.0

    def __post_init__(self):
        k = self.kind
        if k in (FormKind.REGULARIZED, FormKind.REGULARIZED_TRUNCATED):
            if not 0.0 < self.eps <= 1.0:
                raise ValueError(f"{k.value} needs eps in (0, 1], got {self.eps}")
            if not 0.0 <= self.eta <= 1.0:
                raise ValueError(f"{k.value} needs eta in [0, 1], got {self.eta}")
            if self.big_k < 1 or self.big_k != int(self.big_k):
                raise ValueError(f"{k.value} needs integer big_k >= 1, got {self.big_k}")
        if k is FormKind.REGULARIZED_TRUNCATED:
            if not self.r_trunc > 0.0:
                raise ValueError(f"truncation radius must be positive, got {self.r_trunc}")
        if k is FormKind.RHO_VARIANT:
            if not 0.0 < self.rho < 2.0:
                raise ValueError(f"rho must lie in (0, 2), got {self.rho}")
        elif self.rho != 1.0:
            raise ValueError(f"{k.value} fixes rho = 1; got rho = {self.rho}")

    @property
    def lap_coef(self) -> float:
        """Laplacian prefactor folded into the implicit operator."""
        if self.kind is FormKind.ITO_MCF:
            return 0.5
        if self.kind is FormKind.RHO_VARIANT:
            return 0.5 * self.rho
        if self.kind in (FormKind.REGULARIZED, FormKind.REGULARIZED_TRUNCATED):
            return 1.0 + self.eps
        return 1.0  # ito_anisotropic

    @property
    def eta_eff(self) -> float:
        if self.kind in (FormKind.REGULARIZED, FormKind.REGULARIZED_TRUNCATED):
            return self.eta
        return 0.0


class NonFiniteFieldError(RuntimeError):
    """A step produced NaN/inf; carries where and when it first appeared."""

    def __init__(self, step: int, index: tuple[int, int]):
        self.step = step
        self.index = index
        super().__init__(f"non-finite field entry at grid index {index} after step {step}")


def default_dt(n: int) -> float:
    """Explicit-stability proxy 0.25 h^2 used when no dt is given."""
    return 0.25 / (n * n)


# ---------------------------------------------------------------------------
# pointwise pieces

def _theta_times_a(a: np.ndarray, r: float) -> np.ndarray:
    """Entrywise a -> theta_R(|a|) * a with a quintic smoothstep bridge.

    theta is 1 on [0, R/2], 0 on [R, inf), and 1 - s(2|a|/R - 1) in between
    with s(x) = 6x^5 - 15x^4 + 10x^3, so the clipped entry is a C^1 function
    of the input. Entries at or below R/2 are passed through bit-identically.
    """
    aa = np.abs(a)
    x = 2.0 * aa / r - 1.0
    x = np.clip(x, 0.0, 1.0)
    s = ((6.0 * x - 15.0) * x + 10.0) * x * x * x
    return np.where(aa <= 0.5 * r, a, np.where(aa >= r, 0.0, (1.0 - s) * a))


def truncate_hessian_arrays(a11, a12, a22, r: float):
    if not r > 0.0:
        raise ValueError("truncation radius must be positive")
    return _theta_times_a(a11, r), _theta_times_a(a12, r), _theta_times_a(a22, r)


def truncate_hessian(hess: SymTensorField, r: float) -> SymTensorField:
    a11, a12, a22 = truncate_hessian_arrays(hess.a11, hess.a12, hess.a22, r)
    return SymTensorField(hess.grid, a11, a12, a22)


def drift(u: ScalarField, form: ModelForm, method: DiffMethod = DiffMethod.SPECTRAL) -> ScalarField:
    """Full drift field of the given form (including any linear parts)."""
    b = geometry_bundle(u, method, with_dw=False)
    k = form.kind
    if k is FormKind.STRATONOVICH_MCF:
        return mcf_operator(b)
    if k is FormKind.ITO_MCF:
        lap = b.hess.a11 + b.hess.a22
        return ScalarField(u.grid, 0.5 * lap + 0.5 * mcf_operator(b).values)
    if k is FormKind.RHO_VARIANT:
        lap = b.hess.a11 + b.hess.a22
        c = 0.5 * form.rho
        return ScalarField(u.grid, c * lap + (1.0 - c) * mcf_operator(b).values)
    # anisotropic family: (1 + eps) Lap u - w^T D^2u w / 2 - eta Delta^(2K) u
    if k is FormKind.REGULARIZED_TRUNCATED:
        hs = truncate_hessian(b.hess, form.r_trunc)
    else:
        hs = b.hess
    w1, w2 = b.w.x1, b.w.x2
    corr = 0.5 * (w1 * w1 * hs.a11 + 2.0 * w1 * w2 * hs.a12 + w2 * w2 * hs.a22)
    lap = b.hess.a11 + b.hess.a22
    out = (1.0 + form.eps) * lap - corr if form.eps != 0.0 else lap - corr
    if form.eta_eff != 0.0:
        if method is not DiffMethod.SPECTRAL:
            raise ValueError("polyharmonic term requires the spectral method")
        ws = get_workspace(u.grid.n)
        out = out - form.eta * ws.inverse(ws.polyharmonic_sym(form.big_k) * ws.forward(u.values))
    return ScalarField(u.grid, out)


def diffusion(u: ScalarField, form: ModelForm, method: DiffMethod = DiffMethod.SPECTRAL) -> ScalarField:
    """Noise coefficient field sqrt(rho) * H(grad u)."""
    b = geometry_bundle(u, method, with_dw=False)
    if form.rho == 1.0:
        return ScalarField(u.grid, b.H.values)
    return ScalarField(u.grid, np.sqrt(form.rho) * b.H.values)


# ---------------------------------------------------------------------------
# path state and steppers

@dataclass
class PathState:
    """One path's state between steps.

    The real-space array is the whole state: steppers recompute spectral
    data from it every step, so a path checkpointed to disk and resumed
    reproduces the uninterrupted trajectory bit for bit.
    """

    u: ScalarField
    step: int
    noise: NoisePath
    tau_r_triggered: bool = False
    tau_r_time: float | None = None

    @property
    def t(self) -> float:
        return self.step * self.noise.dt


@dataclass
class StepAudit:
    """Per-step bookkeeping emitted by the steppers.

    Mass entries are spatial integrals; `drift_mass` excludes the implicit
    linear part, whose integral vanishes identically (zero symbol at k = 0).
    """

    dw: float
    mass_before: float
    mass_after: float
    drift_mass: float
    noise_mass: float
    g_mass: float = 0.0
    hess_linf: float | None = None
    g: np.ndarray | None = None
    n_explicit: np.ndarray | None = None
    u_plus: np.ndarray | None = None
    u_plus_hat: np.ndarray | None = None

    @property
    def mass_residual(self) -> float:
        return self.mass_after - (self.mass_before + self.drift_mass + self.noise_mass)


def _check_finite(values: np.ndarray, step: int):
    if not np.isfinite(values).all():
        idx = np.argwhere(~np.isfinite(values))[0]
        raise NonFiniteFieldError(step, (int(idx[0]), int(idx[1])))


class EmImexStepper:
    """Euler-Maruyama step with the stiff linear part implicit.

    u+ solves (Id - dt A) u+ = u + dt N(u) + g(u) dW, where A collects the
    form's Laplacian prefactor and polyharmonic term and N(u) is the explicit
    remainder (curvature terms only). Rejects Stratonovich forms: pairing the
    Stratonovich drift with an Ito scheme silently changes the equation.
    """

    def __init__(self, grid: GridSpec, form: ModelForm, dt: float, noise_off: bool = False):
        if form.kind is FormKind.STRATONOVICH_MCF:
            raise ValueError(
                "stratonovich_mcf drift cannot be stepped by the Ito scheme; use heun_strat"
            )
        if dt <= 0.0:
            raise ValueError("stepper needs dt > 0")
        self.grid = grid
        self.form = form
        self.dt = dt
        self.noise_off = noise_off
        self.ws = get_workspace(grid.n)
        self.lin_sym = form.lap_coef * self.ws.lap_sym
        if form.eta_eff != 0.0:
            self.lin_sym = self.lin_sym - form.eta * self.ws.polyharmonic_sym(form.big_k)
        self.denom = 1.0 - dt * self.lin_sym
        self.sqrt_rho = np.sqrt(form.rho)
        self.aniso = form.kind in _ANISO_KINDS
        c = form.lap_coef
        self.hv_coef = {FormKind.ITO_MCF: 0.5, FormKind.RHO_VARIANT: 1.0 - c}.get(form.kind, 0.0)

    def step(self, state: PathState, want_fields: bool = False) -> tuple[PathState, StepAudit]:
        ws = self.ws
        u = state.u.values
        uh = ws.forward(u)
        g1, g2 = grad_spectral_hat(uh, ws)
        hval = np.sqrt(1.0 + g1 * g1 + g2 * g2)
        hess_linf = None
        if self.aniso:
            a11, a12, a22 = hess_spectral_hat(uh, ws)
            hess_linf = float(
                max(np.max(np.abs(a11)), np.max(np.abs(a12)), np.max(np.abs(a22)))
            )
            if self.form.kind is FormKind.REGULARIZED_TRUNCATED:
                a11, a12, a22 = truncate_hessian_arrays(a11, a12, a22, self.form.r_trunc)
            w1 = g1 / hval
            w2 = g2 / hval
            n_expl = -0.5 * (w1 * w1 * a11 + 2.0 * w1 * w2 * a12 + w2 * w2 * a22)
        else:
            w1 = g1 / hval
            w2 = g2 / hval
            v = div_spectral(w1, w2, ws)
            n_expl = self.hv_coef * (hval * v)

        g = hval if self.form.rho == 1.0 else self.sqrt_rho * hval
        dw = 0.0 if self.noise_off else float(state.noise.increments[state.step])
        inv_n2 = 1.0 / (self.grid.n**2)
        g_mass = float(np.sum(g)) * inv_n2
        if self.noise_off:
            rhs = u + self.dt * n_expl
        else:
            rhs = u + self.dt * n_expl + g * dw
        rhs_hat = ws.forward(rhs)
        u_plus_hat = rhs_hat / self.denom
        u_plus = ws.inverse(u_plus_hat)
        _check_finite(u_plus, state.step + 1)

        audit = StepAudit(
            dw=dw,
            mass_before=float(np.sum(u)) * inv_n2,
            mass_after=float(np.sum(u_plus)) * inv_n2,
            drift_mass=self.dt * float(np.sum(n_expl)) * inv_n2,
            noise_mass=g_mass * dw,
            g_mass=g_mass,
            hess_linf=hess_linf,
        )
        if want_fields:
            audit.g = g
            audit.n_explicit = n_expl
            audit.u_plus = u_plus
            audit.u_plus_hat = u_plus_hat
        new_state = replace(state, u=ScalarField(self.grid, u_plus), step=state.step + 1)
        return new_state, audit


class HeunStratStepper:
    """Predictor-corrector (Heun) step for the Stratonovich form.

    Fully explicit; the usual midpoint trapezoid in both drift and noise
    makes it consistent with the Stratonovich calculus. Stability demands
    dt * (8 pi^2) * (n/2)^2 < 2, which default_dt satisfies with margin.
    """

    def __init__(self, grid: GridSpec, form: ModelForm, dt: float, noise_off: bool = False):
        if form.kind is not FormKind.STRATONOVICH_MCF:
            raise ValueError(
                f"heun_strat steps the stratonovich_mcf form only, got {form.kind.value}"
            )
        if dt <= 0.0:
            raise ValueError("stepper needs dt > 0")
        self.grid = grid
        self.form = form
        self.dt = dt
        self.noise_off = noise_off
        self.ws = get_workspace(grid.n)
        self.sqrt_rho = np.sqrt(form.rho)

    def _hv_and_g(self, values):
        ws = self.ws
        uh = ws.forward(values)
        g1, g2 = grad_spectral_hat(uh, ws)
        hval = np.sqrt(1.0 + g1 * g1 + g2 * g2)
        v = div_spectral(g1 / hval, g2 / hval, ws)
        g = hval if self.form.rho == 1.0 else self.sqrt_rho * hval
        return hval * v, g

    def step(self, state: PathState, want_fields: bool = False) -> tuple[PathState, StepAudit]:
        u = state.u.values
        dw = float(state.noise.increments[state.step])
        if self.noise_off:
            dw = 0.0
        hv0, g0 = self._hv_and_g(u)
        pred = u + self.dt * hv0 + g0 * dw
        _check_finite(pred, state.step + 1)
        hv1, g1 = self._hv_and_g(pred)
        drift_avg = 0.5 * (hv0 + hv1)
        g_avg = 0.5 * (g0 + g1)
        u_plus = u + self.dt * drift_avg + g_avg * dw
        _check_finite(u_plus, state.step + 1)

        inv_n2 = 1.0 / (self.grid.n**2)
        g_mass = float(np.sum(g_avg)) * inv_n2
        audit = StepAudit(
            dw=dw,
            mass_before=float(np.sum(u)) * inv_n2,
            mass_after=float(np.sum(u_plus)) * inv_n2,
            drift_mass=self.dt * float(np.sum(drift_avg)) * inv_n2,
            noise_mass=g_mass * dw,
            g_mass=g_mass,
        )
        if want_fields:
            audit.g = g_avg
            audit.n_explicit = drift_avg
            audit.u_plus = u_plus
        new_state = replace(state, u=ScalarField(self.grid, u_plus), step=state.step + 1)
        return new_state, audit


def step_em_imex(state: PathState, form: ModelForm, noise_off: bool = False) -> PathState:
    """One IMEX Euler-Maruyama step (convenience wrapper)."""
    stepper = EmImexStepper(state.u.grid, form, state.noise.dt, noise_off)
    new_state, _ = stepper.step(state)
    return new_state


def step_heun_strat(state: PathState, form: ModelForm, noise_off: bool = False) -> PathState:
    """One Heun (Stratonovich) step (convenience wrapper)."""
    stepper = HeunStratStepper(state.u.grid, form, state.noise.dt, noise_off)
    new_state, _ = stepper.step(state)
    return new_state


def monitor_tau_r(state: PathState, hess_linf: float, r: float) -> PathState:
    """Latch the first time ||D^2 u||_inf reaches R/2; idempotent afterwards."""
    if not state.tau_r_triggered and hess_linf >= 0.5 * r:
        return replace(state, tau_r_triggered=True, tau_r_time=state.t)
    return state


# ---------------------------------------------------------------------------
# mild-solution fixed point

@dataclass
class PicardReport:
    diffs: list[float]
    ratios: list[float]
    diverged: bool
    trajectory: list[ScalarField]


def mild_picard_iterate(
    u0: ScalarField,
    noise: NoisePath,
    form: ModelForm,
    horizon: float,
    iterations: int = 6,
) -> PicardReport:
    """Picard iteration for the mild formulation of the truncated equation.

    With S(t) the (spectrally exact) semigroup of the linear part, iterate

        u_{k+1}(t) = S(t) u0
                     - 1/2 sum_{s<t} S(t-s) [w^T Theta_R(D^2 u_k) w](s) dt
                     + sum_{s<t} S(t-s) H(grad u_k(s)) dW(s)

    with left-endpoint sums on the noise grid. Returns the sup-in-time L2
    differences d_k between successive iterates and their ratios; ratios
    below one exhibit the contraction, and they shrink with the horizon.
    """
    if form.kind is not FormKind.REGULARIZED_TRUNCATED:
        raise ValueError("mild iteration is defined for the regularized_truncated form")
    if iterations < 2:
        raise ValueError("need at least two iterations to report a ratio")
    grid = u0.grid
    ws = get_workspace(grid.n)
    dt = noise.dt
    m = int(round(horizon / dt))
    if m < 1 or abs(m * dt - horizon) > 1e-9 * max(horizon, dt):
        raise ValueError("horizon must be a positive multiple of the noise dt")
    if m > noise.n_steps:
        raise ValueError("noise path too short for the requested horizon")

    lin_sym = ws.linear_sym(form.eps, form.eta, form.big_k)
    # semigroup factors for lags 0..m (lag 0 is the identity)
    semi = [np.ones_like(lin_sym)]
    step_factor = np.exp(dt * lin_sym)
    for _ in range(m):
        semi.append(semi[-1] * step_factor)

    u0_hat = ws.forward(u0.values)
    inv_n = 1.0 / grid.n
    h2 = inv_n * inv_n

    def evaluate(traj_hats):
        """Apply the mild map to a trajectory of Fourier states."""
        f_hats = []
        g_hats = []
        for uh in traj_hats:
            g1, g2 = grad_spectral_hat(uh, ws)
            hval = np.sqrt(1.0 + g1 * g1 + g2 * g2)
            a11, a12, a22 = hess_spectral_hat(uh, ws)
            a11, a12, a22 = truncate_hessian_arrays(a11, a12, a22, form.r_trunc)
            w1 = g1 / hval
            w2 = g2 / hval
            f = w1 * w1 * a11 + 2.0 * w1 * w2 * a12 + w2 * w2 * a22
            f_hats.append(ws.forward(f))
            g_hats.append(ws.forward(hval))
        out = [u0_hat.copy()]
        for j in range(1, m + 1):
            acc = semi[j] * u0_hat
            for s in range(j):
                acc = acc + semi[j - s] * (
                    -0.5 * dt * f_hats[s] + noise.increments[s] * g_hats[s]
                )
            out.append(acc)
        return out

    traj = [semi[j] * u0_hat for j in range(m + 1)]  # S(t) u0 as starting guess
    diffs: list[float] = []
    for _ in range(iterations):
        nxt = evaluate(traj)
        sup = 0.0
        for a, b in zip(nxt, traj):
            d = ws.inverse(a - b)
            sup = max(sup, float(np.sqrt(h2 * np.sum(d * d))))
        diffs.append(sup)
        traj = nxt
    ratios = [diffs[i + 1] / diffs[i] if diffs[i] > 0.0 else 0.0 for i in range(len(diffs) - 1)]
    run = 0
    diverged = False
    for r in ratios:
        run = run + 1 if r > 1.0 else 0
        if run >= 3:
            diverged = True
            break
    trajectory = [ScalarField(grid, ws.inverse(uh)) for uh in traj]
    return PicardReport(diffs=diffs, ratios=ratios, diverged=diverged, trajectory=trajectory)
