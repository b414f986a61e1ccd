"""Direct optimization of the input noise pair under editing losses.

Each optimization step needs dL/d(x_T, y_T) where L is evaluated on the
generated motion. Two interchangeable gradient paths provide it:

* ``full_cache`` records the entire generation on one tape and backpropagates.
  Memory grows linearly with the step count, so it refuses schedules longer
  than a configured cap — it exists as the small-T oracle the other path is
  checked against.
* ``inversion_recompute`` runs generation untaped, then walks the chain
  backwards: it reconstructs the pair at step t from the pair at t-1 via the
  exact inverse, re-records just that one step on a fresh tape, and applies
  the vector-Jacobian product to carry the adjoint one step up. At no point
  are more than two steps' worth of activations held, independent of T.

The retained-step meter counts exactly that — simultaneously held per-step
activation buffers — so tests can assert the memory contract without
measuring process RSS.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import GradTape
from .losses import EditSpec, MirrorMap, edit_loss
from .sampler import (CoupledState, NoiseLedger, SamplerConfig, SamplerError,
                      _coupled_step_tensors, step_inverse)
from .schedule import VarianceSchedule

GRAD_PATHS = ("full_cache", "inversion_recompute")


class OptimizerError(RuntimeError):
    """Config misuse (cap exceeded, bad path) in the noise optimizer."""


@dataclass(frozen=True)
class OptimizerConfig:
    steps: int = 3
    lr: float = 0.05
    grad_normalize: bool = True
    renorm_noise: bool = True
    grad_path: str = "inversion_recompute"
    full_cache_cap: int = 64
    tie_arms: bool = False
    early_stop: bool = False
    plateau_rel_improvement: float = 0.01
    plateau_patience: int = 2

    def __post_init__(self):
        if self.steps < 1:
            raise OptimizerError(f"steps must be >= 1, got {self.steps}")
        if self.lr < 0:
            raise OptimizerError(f"lr must be >= 0, got {self.lr}")
        if self.grad_path not in GRAD_PATHS:
            raise OptimizerError(f"unknown grad path {self.grad_path!r}")


class RetainedStepMeter:
    """Counts per-step activation buffers currently held; tracks the peak."""

    def __init__(self):
        self.current = 0
        self.peak = 0

    def acquire(self, n: int = 1):
        self.current += n
        self.peak = max(self.peak, self.current)

    def release(self, n: int = 1):
        self.current -= n


def _z_for(schedule: VarianceSchedule, config: SamplerConfig,
           ledger: NoiseLedger | None):
    """Resolve the per-step noise draw; fixed across optimization steps."""
    if config.noise_mode == "deterministic":
        return lambda t: None
    if ledger is None:
        raise OptimizerError("recorded noise mode needs the generation ledger")
    return lambda t: ledger.replay(schedule.orig_timestep(t))


def _run_generation(x_T: np.ndarray, y_T: np.ndarray, model,
                    schedule: VarianceSchedule, config: SamplerConfig,
                    z_of) -> tuple[np.ndarray, np.ndarray]:
    """Untaped coupled generation from a distinct (x_T, y_T) pair."""
    x, y = ad.constant(x_T), ad.constant(y_T)
    for t in range(schedule.total_steps, 0, -1):
        x, y = _coupled_step_tensors(x, y, t, model, schedule, config, z_of(t))
    return x.data, y.data


def grad_full_cache(x_T: np.ndarray, y_T: np.ndarray, model,
                    schedule: VarianceSchedule,
                    specs: EditSpec | list[EditSpec],
                    mirror: MirrorMap | None = None,
                    config: SamplerConfig = SamplerConfig(),
                    ledger: NoiseLedger | None = None,
                    cap: int = 64,
                    meter: RetainedStepMeter | None = None
                    ) -> tuple[float, np.ndarray, np.ndarray]:
    """Whole-generation-on-one-tape gradient; the small-T oracle path."""
    T = schedule.total_steps
    if T > cap:
        raise OptimizerError(
            f"full-cache gradient refuses schedules with total_steps > {cap} "
            f"(got {T}); use the inversion_recompute path")
    meter = meter or RetainedStepMeter()
    z_of = _z_for(schedule, config, ledger)
    tape = GradTape()
    xl, yl = tape.leaf(x_T), tape.leaf(y_T)
    x, y = xl, yl
    for t in range(T, 0, -1):
        x, y = _coupled_step_tensors(x, y, t, model, schedule, config, z_of(t))
        meter.acquire()
    loss = edit_loss(specs, x, mirror)
    value = loss.item()
    grads = ad.backward(tape, loss)
    meter.release(T)
    return value, grads[xl.node], grads[yl.node]


def grad_inversion_recompute(x_T: np.ndarray, y_T: np.ndarray, model,
                             schedule: VarianceSchedule,
                             specs: EditSpec | list[EditSpec],
                             mirror: MirrorMap | None = None,
                             config: SamplerConfig = SamplerConfig(),
                             ledger: NoiseLedger | None = None,
                             meter: RetainedStepMeter | None = None
                             ) -> tuple[float, np.ndarray, np.ndarray]:
    """Constant-memory gradient via inverse reconstruction of intermediate states.

    Matches grad_full_cache up to floating-point tolerance; requires an
    invertible schedule, and in recorded mode the ledger of the generation.
    """
    if not schedule.is_invertible:
        raise OptimizerError(
            "inversion_recompute needs an invertible schedule "
            "(respace(..., invertible=True))")
    meter = meter or RetainedStepMeter()
    z_of = _z_for(schedule, config, ledger)
    x0, y0 = _run_generation(x_T, y_T, model, schedule, config, z_of)

    tape = GradTape()
    x0l = tape.leaf(x0)
    tape.leaf(y0)  # zero-filled gradient: the loss reads only the x arm
    loss = edit_loss(specs, x0l, mirror)
    value = loss.item()
    gx = ad.backward(tape, loss)[x0l.node]
    gy = np.zeros_like(gx)

    state = CoupledState(x=x0, y=y0, t=0)
    for t in range(1, schedule.total_steps + 1):
        z = z_of(t)
        state = step_inverse(state, model, schedule, config, z=z)
        meter.acquire()  # reconstructed boundary pair
        step_tape = GradTape()
        xl, yl = step_tape.leaf(state.x), step_tape.leaf(state.y)
        meter.acquire()  # the single re-recorded step
        xo, yo = _coupled_step_tensors(xl, yl, t, model, schedule, config, z)
        surrogate = ad.add(ad.tsum(ad.mul(xo, ad.constant(gx))),
                           ad.tsum(ad.mul(yo, ad.constant(gy))))
        grads = ad.backward(step_tape, surrogate)
        gx, gy = grads[xl.node], grads[yl.node]
        meter.release(2)
        if not (np.all(np.isfinite(gx)) and np.all(np.isfinite(gy))):
            raise OptimizerError(f"non-finite gradient during adjoint sweep at step {t}")
    return value, gx, gy


def _gradient(path: str, *args, **kwargs):
    fn = grad_full_cache if path == "full_cache" else grad_inversion_recompute
    return fn(*args, **kwargs)


@dataclass
class TraceRecord:
    step: int
    loss: float
    relative_loss: float
    grad_inf_norm: float | None
    wall_time: float
    retained_steps: int
    arm_divergence: float

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "loss": self.loss,
            "relative_loss": self.relative_loss,
            "grad_inf_norm": self.grad_inf_norm,
            "wall_time": self.wall_time,
            "retained_steps": self.retained_steps,
            "arm_divergence": self.arm_divergence,
        }


_CSV_FIELDS = ("step", "loss", "relative_loss", "grad_inf_norm", "wall_time",
               "retained_steps", "arm_divergence")


@dataclass
class OptimizationTrace:
    records: list[TraceRecord] = field(default_factory=list)
    final_x_T: np.ndarray | None = None
    final_y_T: np.ndarray | None = None
    final_x_0: np.ndarray | None = None
    final_y_0: np.ndarray | None = None
    aborted: bool = False
    abort_reason: str | None = None

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
            writer.writeheader()
            for rec in self.records:
                writer.writerow(rec.to_dict())


def optimize_noise(x_T: np.ndarray, y_T: np.ndarray, model,
                   schedule: VarianceSchedule,
                   opt: OptimizerConfig,
                   specs: EditSpec | list[EditSpec],
                   mirror: MirrorMap | None = None,
                   config: SamplerConfig = SamplerConfig(),
                   ledger: NoiseLedger | None = None,
                   on_record=None) -> OptimizationTrace:
    """SGD on the input noise pair under an editing loss.

    Both arms receive their own gradients (``tie_arms`` forces y_T back onto
    x_T after each update instead). A non-finite loss or gradient aborts and
    returns the partial trace rather than raising. ``on_record`` is called
    with each TraceRecord as it is appended, which is how the job service
    streams live loss curves.
    """
    if not np.all(np.isfinite(x_T)) or not np.all(np.isfinite(y_T)):
        raise OptimizerError("input noise is not finite")
    x_T = np.asarray(x_T, dtype=np.float64).copy()
    y_T = np.asarray(y_T, dtype=np.float64).copy()
    shell = float(np.sqrt(x_T.size))
    z_of = _z_for(schedule, config, ledger)
    trace = OptimizationTrace()

    start = time.perf_counter()
    x0, y0 = _run_generation(x_T, y_T, model, schedule, config, z_of)
    loss0 = edit_loss(specs, ad.constant(x0), mirror).item()
    trace.records.append(TraceRecord(
        step=0, loss=loss0, relative_loss=1.0, grad_inf_norm=None,
        wall_time=time.perf_counter() - start, retained_steps=0,
        arm_divergence=float(np.abs(x_T - y_T).max())))
    if on_record:
        on_record(trace.records[-1])
    trace.final_x_T, trace.final_y_T = x_T, y_T
    trace.final_x_0, trace.final_y_0 = x0, y0

    plateau_hits = 0
    prev_loss = loss0
    for s in range(1, opt.steps + 1):
        start = time.perf_counter()
        meter = RetainedStepMeter()
        try:
            _, gx, gy = _gradient(
                opt.grad_path, x_T, y_T, model, schedule, specs,
                mirror=mirror, config=config, ledger=ledger, meter=meter,
                **({"cap": opt.full_cache_cap} if opt.grad_path == "full_cache" else {}))
        except (SamplerError, OptimizerError) as exc:
            trace.aborted, trace.abort_reason = True, str(exc)
            return trace
        gnorm = float(max(np.abs(gx).max(), np.abs(gy).max()))
        if not np.isfinite(gnorm):
            trace.aborted = True
            trace.abort_reason = f"non-finite gradient at optimization step {s}"
            return trace
        if opt.grad_normalize and gnorm > 0.0:
            gx, gy = gx / gnorm, gy / gnorm
        x_T = x_T - opt.lr * gx
        y_T = x_T.copy() if opt.tie_arms else y_T - opt.lr * gy
        if opt.renorm_noise:
            for arm in (x_T, y_T):
                norm = float(np.linalg.norm(arm))
                if norm > 0.0:
                    arm *= shell / norm

        x0, y0 = _run_generation(x_T, y_T, model, schedule, config, z_of)
        loss = edit_loss(specs, ad.constant(x0), mirror).item()
        if not np.isfinite(loss):
            trace.aborted = True
            trace.abort_reason = f"non-finite loss at optimization step {s}"
            return trace
        relative = loss / loss0 if loss0 != 0.0 else 1.0
        trace.records.append(TraceRecord(
            step=s, loss=loss, relative_loss=relative, grad_inf_norm=gnorm,
            wall_time=time.perf_counter() - start, retained_steps=meter.peak,
            arm_divergence=float(np.abs(x_T - y_T).max())))
        if on_record:
            on_record(trace.records[-1])
        trace.final_x_T, trace.final_y_T = x_T, y_T
        trace.final_x_0, trace.final_y_0 = x0, y0

        if opt.early_stop:
            improvement = ((prev_loss - loss) / abs(prev_loss)
                           if prev_loss != 0.0 else 0.0)
            plateau_hits = plateau_hits + 1 if improvement < opt.plateau_rel_improvement else 0
            if plateau_hits >= opt.plateau_patience:
                break
        prev_loss = loss
    return trace
