"""Single-path runs, Monte Carlo ensembles, and shared-noise parameter sweeps.

Paths are the unit of parallelism. Every ensemble result is a pure function
of (config, base_seed): per-path noise comes from a counter-derived seed, the
worker pool (SMCFLOW_WORKERS threads) only changes scheduling, and all
reductions run in path-index order after the pool drains.
"""
from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .dynamics import (
    EmImexStepper,
    FormKind,
    HeunStratStepper,
    ModelForm,
    NonFiniteFieldError,
    PathState,
    monitor_tau_r,
)
from .grid import DiffMethod, GridSpec, ScalarField, l2_norm_sq
from .monitors import (
    EnergyRecord,
    MartingaleReport,
    MartingaleSample,
    MartingaleTracker,
    area_inequality_check,
    martingale_test,
    record_path_sample,
)
from .noise import NoisePath, path_seed

__all__ = [
    "ModelConfig",
    "PathResult",
    "EnsembleReport",
    "SweepPlan",
    "EtaSweepReport",
    "EpsilonSweepReport",
    "TruncationReport",
    "ConvergenceReport",
    "make_stepper",
    "run_path",
    "run_ensemble",
    "sweep_eta",
    "sweep_epsilon",
    "sweep_R",
    "self_convergence_dt",
    "self_convergence_resolution",
    "worker_count",
]

SCHEMES = ("em_imex", "heun_strat")


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to advance one path, minus the initial field."""

    form: ModelForm
    scheme: str
    n: int
    dt: float
    n_steps: int
    record_stride: int = 10
    method: DiffMethod = DiffMethod.SPECTRAL
    noise_off: bool = False
    martingale_steps: tuple[int, ...] = ()
    stop_at_tau_r: bool = False
    keep_audits: bool = False

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; pick one of {SCHEMES}")
        strat = self.form.kind is FormKind.STRATONOVICH_MCF
        if strat != (self.scheme == "heun_strat"):
            raise ValueError(
                f"scheme {self.scheme!r} cannot integrate form {self.form.kind.value!r}"
            )
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        if self.record_stride < 1:
            raise ValueError("record_stride must be at least 1")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if any(s < 1 or s > self.n_steps for s in self.martingale_steps):
            raise ValueError("martingale sample steps must lie in [1, n_steps]")

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.n)

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt


def make_stepper(cfg: ModelConfig):
    cls = HeunStratStepper if cfg.scheme == "heun_strat" else EmImexStepper
    return cls(cfg.grid, cfg.form, cfg.dt, noise_off=cfg.noise_off)


@dataclass
class PathResult:
    seed: int | None
    records: list[EnergyRecord]
    record_steps: list[int]
    hv_mass: np.ndarray            # <H v, 1> at the record times
    w_rec: np.ndarray              # W(t) at the record times
    terminal: ScalarField
    steps_done: int
    max_mass_residual: float
    censored: bool = False
    blowup_step: int | None = None
    tau_r_triggered: bool = False
    tau_r_time: float | None = None
    martingale_samples: list[MartingaleSample] = field(default_factory=list)
    audits: list | None = None


def run_path(
    cfg: ModelConfig,
    u0: ScalarField,
    seed: int | None = None,
    noise: NoisePath | None = None,
    stepper=None,
    start_step: int = 0,
    stop_at_step: int | None = None,
    checkpoint_every: int | None = None,
    checkpoint_cb: Callable[[PathState], None] | None = None,
) -> PathResult:
    """Advance one path up to cfg.n_steps, recording monitors along the way.

    start_step > 0 resumes from a checkpointed field (u0 is then the state at
    that step); stop_at_step ends the run early; checkpoint_cb is invoked
    every checkpoint_every completed steps with the current state.
    """
    if noise is None:
        if seed is None:
            raise ValueError("need a seed or an explicit noise path")
        noise = NoisePath.generate(seed, cfg.dt, cfg.n_steps)
    else:
        if abs(noise.dt - cfg.dt) > 1e-15 * max(cfg.dt, 1.0):
            raise ValueError("noise path dt does not match the config dt")
        if noise.n_steps < cfg.n_steps:
            raise ValueError("noise path shorter than the run")
    if stepper is None:
        stepper = make_stepper(cfg)
    if not 0 <= start_step <= cfg.n_steps:
        raise ValueError("start_step outside [0, n_steps]")
    end_step = cfg.n_steps if stop_at_step is None else min(cfg.n_steps, stop_at_step)

    state = PathState(u=u0, step=start_step, noise=noise)
    tracker = (
        MartingaleTracker(cfg.dt, cfg.martingale_steps) if cfg.martingale_steps else None
    )
    trunc = cfg.form.kind is FormKind.REGULARIZED_TRUNCATED
    records: list[EnergyRecord] = []
    record_steps: list[int] = []
    hv_mass: list[float] = []
    w_rec: list[float] = []
    audits = [] if cfg.keep_audits else None
    max_res = 0.0
    censored = False
    blowup_step = None

    def take_record(st: PathState):
        rec, hv = record_path_sample(st.u, st.t, cfg.method)
        records.append(rec)
        record_steps.append(st.step)
        hv_mass.append(hv)
        w_rec.append(0.0 if cfg.noise_off else float(noise.w[st.step]))

    take_record(state)
    if trunc and records[0].hess_linf >= 0.5 * cfg.form.r_trunc:
        state = replace(state, tau_r_triggered=True, tau_r_time=state.t)

    while state.step < end_step:
        if trunc and cfg.stop_at_tau_r and state.tau_r_triggered:
            break
        try:
            new_state, audit = stepper.step(state)
        except NonFiniteFieldError as e:
            censored = True
            blowup_step = e.step
            break
        if trunc and audit.hess_linf is not None and not state.tau_r_triggered:
            flagged = monitor_tau_r(state, audit.hess_linf, cfg.form.r_trunc)
            if flagged.tau_r_triggered:
                new_state = replace(
                    new_state, tau_r_triggered=True, tau_r_time=flagged.tau_r_time
                )
        state = new_state
        max_res = max(max_res, abs(audit.mass_residual))
        if tracker is not None:
            tracker.update(audit)
        if audits is not None:
            audits.append(audit)
        if state.step % cfg.record_stride == 0 or state.step == end_step:
            take_record(state)
        if (
            checkpoint_cb is not None
            and checkpoint_every
            and (state.step - start_step) % checkpoint_every == 0
        ):
            checkpoint_cb(state)

    return PathResult(
        seed=seed,
        records=records,
        record_steps=record_steps,
        hv_mass=np.array(hv_mass),
        w_rec=np.array(w_rec),
        terminal=state.u,
        steps_done=state.step,
        max_mass_residual=max_res,
        censored=censored,
        blowup_step=blowup_step,
        tau_r_triggered=state.tau_r_triggered,
        tau_r_time=state.tau_r_time,
        martingale_samples=tracker.samples if tracker is not None else [],
        audits=audits,
    )


def worker_count() -> int:
    """Worker threads from SMCFLOW_WORKERS; results never depend on it."""
    raw = os.environ.get("SMCFLOW_WORKERS", "")
    try:
        k = int(raw) if raw else 1
    except ValueError:
        raise ValueError(f"SMCFLOW_WORKERS must be an integer, got {raw!r}")
    return max(1, k)


@dataclass
class EnsembleReport:
    config: ModelConfig
    base_seed: int
    results: list[PathResult]
    n_paths: int
    n_censored: int
    wall_clock: float
    total_steps: int
    martingale: MartingaleReport | None = None

    @property
    def censor_rate(self) -> float:
        return self.n_censored / self.n_paths

    @property
    def ok(self) -> bool:
        return self.censor_rate <= 0.01

    def uncensored(self) -> list[PathResult]:
        return [r for r in self.results if not r.censored]

    def records_matrix(self, field_name: str) -> np.ndarray:
        """(paths, record_times) array of one EnergyRecord field, uncensored."""
        rows = [
            [getattr(rec, field_name) for rec in r.records] for r in self.uncensored()
        ]
        return np.array(rows)

    @property
    def record_times(self) -> np.ndarray:
        return np.array([rec.t for rec in self.uncensored()[0].records])

    @property
    def max_mass_residual(self) -> float:
        return max(r.max_mass_residual for r in self.results)


def run_ensemble(
    cfg: ModelConfig,
    u0: ScalarField | Callable[[int], ScalarField],
    n_paths: int,
    base_seed: int,
) -> EnsembleReport:
    """Monte Carlo ensemble with per-path derived seeds and ordered reduction."""
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    t0 = time.perf_counter()
    stepper = make_stepper(cfg)
    seeds = [path_seed(base_seed, i) for i in range(n_paths)]

    def one(i: int) -> PathResult:
        start = u0(i) if callable(u0) else u0
        return run_path(cfg, start, seed=seeds[i], stepper=stepper)

    k = worker_count()
    if k == 1:
        results = [one(i) for i in range(n_paths)]
    else:
        with ThreadPoolExecutor(max_workers=k) as pool:
            results = list(pool.map(one, range(n_paths)))

    n_censored = sum(1 for r in results if r.censored)
    mart = None
    if cfg.martingale_steps:
        samples = [r.martingale_samples for r in results if not r.censored]
        if samples:
            mart = martingale_test(samples, n_censored=n_censored)
    return EnsembleReport(
        config=cfg,
        base_seed=base_seed,
        results=results,
        n_paths=n_paths,
        n_censored=n_censored,
        wall_clock=time.perf_counter() - t0,
        total_steps=sum(r.steps_done for r in results),
        martingale=mart,
    )


# ---------------------------------------------------------------------------
# parameter sweeps (common random numbers along the swept axis)

SWEEP_AXES = ("eta", "epsilon", "R", "dt", "resolution", "rho")


@dataclass(frozen=True)
class SweepPlan:
    axis: str
    values: tuple
    base_config: ModelConfig
    n_paths: int
    base_seed: int

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}; pick one of {SWEEP_AXES}")
        vals = list(self.values)
        if len(vals) < 2:
            raise ValueError("a sweep needs at least two values")
        up = all(b > a for a, b in zip(vals, vals[1:]))
        down = all(b < a for a, b in zip(vals, vals[1:]))
        if not (up or down):
            raise ValueError("sweep values must be strictly monotone")
        if self.axis == "dt":
            for a, b in zip(vals, vals[1:]):
                r = a / b
                if abs(r - round(r)) > 1e-12 or int(round(r)) < 2 or (
                    int(round(r)) & (int(round(r)) - 1)
                ):
                    raise ValueError("dt sweeps must refine by exact factors of 2")
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")


def _mean_successive_l2_diffs(
    terminal_sets: Sequence[Sequence[ScalarField]],
) -> np.ndarray:
    """Mean over paths of ||u_j - u_{j+1}||_L2 for consecutive sweep values."""
    out = []
    for a_set, b_set in zip(terminal_sets, terminal_sets[1:]):
        diffs = [
            np.sqrt(
                l2_norm_sq(ScalarField(a.grid, a.values - b.values))
            )
            for a, b in zip(a_set, b_set)
        ]
        out.append(float(np.mean(diffs)))
    return np.array(out)


@dataclass
class EtaSweepReport:
    etas: tuple
    mean_diffs: np.ndarray
    cauchy: bool
    reports: list[EnsembleReport]


def sweep_eta(plan: SweepPlan, u0: ScalarField) -> EtaSweepReport:
    """Shared-noise sweep of the polyharmonic coefficient toward 0."""
    if plan.axis != "eta":
        raise ValueError("plan axis must be 'eta'")
    reports = []
    terminals = []
    for eta in plan.values:
        cfg = replace(plan.base_config, form=replace(plan.base_config.form, eta=eta))
        rep = run_ensemble(cfg, u0, plan.n_paths, plan.base_seed)
        reports.append(rep)
        terminals.append([r.terminal for r in rep.results])
    diffs = _mean_successive_l2_diffs(terminals)
    cauchy = bool(np.all(np.diff(diffs) < 0.0))
    return EtaSweepReport(etas=tuple(plan.values), mean_diffs=diffs, cauchy=cauchy, reports=reports)


@dataclass
class EpsilonSweepReport:
    eps_values: tuple
    area_excess: np.ndarray
    grad_margin: np.ndarray     # E ge(T) - (E ge(0) + 3 SE), negative = bound holds
    grad_uniform: bool
    mean_diffs: np.ndarray
    reports: list[EnsembleReport]


def sweep_epsilon(plan: SweepPlan, u0: ScalarField) -> EpsilonSweepReport:
    """Shared-noise vanishing-viscosity sweep with area-budget trend data."""
    if plan.axis != "epsilon":
        raise ValueError("plan axis must be 'epsilon'")
    reports = []
    terminals = []
    excesses = []
    margins = []
    for eps in plan.values:
        cfg = replace(plan.base_config, form=replace(plan.base_config.form, eps=eps))
        rep = run_ensemble(cfg, u0, plan.n_paths, plan.base_seed)
        reports.append(rep)
        terminals.append([r.terminal for r in rep.results])
        excesses.append(area_inequality_check([r.records for r in rep.uncensored()]).excess)
        ge = rep.records_matrix("grad_energy")
        gap = ge[:, -1] - ge[:, 0]
        se = gap.std(ddof=1) / np.sqrt(len(gap)) if len(gap) > 1 else 0.0
        margins.append(float(gap.mean() - 3.0 * se))
    diffs = _mean_successive_l2_diffs(terminals)
    margins = np.array(margins)
    return EpsilonSweepReport(
        eps_values=tuple(plan.values),
        area_excess=np.array(excesses),
        grad_margin=margins,
        grad_uniform=bool(np.all(margins <= 0.0)),
        mean_diffs=diffs,
        reports=reports,
    )


@dataclass
class TruncationReport:
    r_values: tuple
    trigger_fraction: np.ndarray
    fraction_nonincreasing: bool
    final_fraction_zero: bool
    untriggered_bit_identical: bool
    reports: list[EnsembleReport]


def sweep_R(plan: SweepPlan, u0: ScalarField) -> TruncationReport:
    """Increasing truncation radii: triggers must die out and become inert."""
    if plan.axis != "R":
        raise ValueError("plan axis must be 'R'")
    if any(b <= a for a, b in zip(plan.values, plan.values[1:])):
        raise ValueError("R sweeps must increase")
    reports = []
    fractions = []
    for r in plan.values:
        cfg = replace(
            plan.base_config, form=replace(plan.base_config.form, r_trunc=r)
        )
        rep = run_ensemble(cfg, u0, plan.n_paths, plan.base_seed)
        reports.append(rep)
        fractions.append(
            sum(1 for p in rep.results if p.tau_r_triggered) / plan.n_paths
        )
    fractions = np.array(fractions)
    identical = True
    for ra, rb in zip(reports, reports[1:]):
        for pa, pb in zip(ra.results, rb.results):
            if pa.tau_r_triggered or pb.tau_r_triggered:
                continue
            if not np.array_equal(pa.terminal.values, pb.terminal.values):
                identical = False
    return TruncationReport(
        r_values=tuple(plan.values),
        trigger_fraction=fractions,
        fraction_nonincreasing=bool(np.all(np.diff(fractions) <= 0.0)),
        final_fraction_zero=bool(fractions[-1] == 0.0),
        untriggered_bit_identical=identical,
        reports=reports,
    )


@dataclass
class ConvergenceReport:
    labels: tuple
    diffs: np.ndarray
    orders: np.ndarray

    @property
    def observed_order(self) -> float:
        return float(np.min(self.orders)) if self.orders.size else float("nan")


def self_convergence_dt(
    cfg: ModelConfig, u0: ScalarField, seed: int, n_levels: int = 3
) -> ConvergenceReport:
    """Strong dt-refinement study under one bridge-refined Brownian path."""
    if n_levels < 2:
        raise ValueError("need at least two refinement levels")
    noise = NoisePath.generate(seed, cfg.dt, cfg.n_steps)
    terminals = []
    dts = []
    for lev in range(n_levels + 1):
        lcfg = replace(cfg, dt=noise.dt, n_steps=noise.n_steps)
        res = run_path(lcfg, u0, noise=noise)
        terminals.append(res.terminal)
        dts.append(noise.dt)
        if lev < n_levels:
            noise = noise.refine()
    diffs = np.array(
        [
            np.sqrt(l2_norm_sq(ScalarField(a.grid, a.values - b.values)))
            for a, b in zip(terminals, terminals[1:])
        ]
    )
    orders = np.log2(diffs[:-1] / diffs[1:]) if diffs.size > 1 else np.array([])
    return ConvergenceReport(labels=tuple(dts), diffs=diffs, orders=orders)


def self_convergence_resolution(
    cfg: ModelConfig,
    u0_builder: Callable[[GridSpec], ScalarField],
    seed: int,
    n_values: Sequence[int],
) -> ConvergenceReport:
    """Spatial refinement under the same scalar noise path.

    The noise is spatially uniform, so one path drives every resolution; the
    finer terminal field is restricted to the coarser grid (corner-anchored
    nodes nest exactly) before differencing.
    """
    ns = list(n_values)
    if len(ns) < 2 or any(b != 2 * a for a, b in zip(ns, ns[1:])):
        raise ValueError("resolutions must double: n, 2n, 4n, ...")
    noise = NoisePath.generate(seed, cfg.dt, cfg.n_steps)
    terminals = []
    for n in ns:
        lcfg = replace(cfg, n=n)
        res = run_path(lcfg, u0_builder(lcfg.grid), noise=noise)
        terminals.append(res.terminal)
    diffs = []
    for coarse, fine in zip(terminals, terminals[1:]):
        restricted = fine.values[::2, ::2]
        diffs.append(
            np.sqrt(l2_norm_sq(ScalarField(coarse.grid, restricted - coarse.values)))
        )
    diffs = np.array(diffs)
    orders = np.log2(diffs[:-1] / diffs[1:]) if diffs.size > 1 else np.array([])
    return ConvergenceReport(labels=tuple(ns), diffs=diffs, orders=orders)
