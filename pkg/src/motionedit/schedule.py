"""Diffusion variance schedules and their per-step sampling coefficients.

A schedule owns everything the sampler needs per step t in [1, T]: the noise
increments beta_t, the cumulative signal levels alpha_bar_t, the stochastic
term scale sigma_t, and the two affine coefficients of the x0-prediction
update

    x_{t-1} = a_t * x_t + b_t * eps(x_t, t) + sigma_t * z

with a_t = (1 - alpha_bar_{t-1}) * sqrt(alpha_t) / (1 - alpha_bar_t) and
b_t = beta_t * sqrt(alpha_bar_{t-1}) / (1 - alpha_bar_t).

Schedules can be respaced to fewer steps so that the coarse alpha_bar
sequence matches the fine one at strided timesteps. Two anchor modes exist:

* plain (``invertible=False``): anchors start at original timestep 0, so the
  respaced schedule still has alpha_bar'_0 = 1 and hence a'_1 = 0 — its last
  generation step collapses to the raw denoiser prediction.
* ``invertible=True``: anchors start at an original timestep >= 1, so
  alpha_bar'_0 < 1 and every a'_t is nonzero. This is the only kind of
  schedule the inversion machinery accepts, because a step with a_t = 0
  discards its input and has no pre-image.

All arithmetic is double precision; inversion quality degrades measurably in
single precision over long step chains.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

DEFAULT_TOTAL_STEPS = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02

SPACINGS = ("linear", "cosine")


class ScheduleError(ValueError):
    """Invalid schedule parameters or an impossible respacing request."""


def _fingerprint(base_total: int, beta_start: float, beta_end: float,
                 spacing: str, step_map: np.ndarray) -> str:
    doc = {
        "total_steps": int(base_total),
        "beta_start": float(beta_start),
        "beta_end": float(beta_end),
        "spacing": spacing,
        "step_map": [int(v) for v in step_map],
    }
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class VarianceSchedule:
    """Immutable bundle of per-step diffusion coefficients.

    ``step_map`` has ``total_steps + 1`` entries; ``step_map[k]`` is the
    original-schedule timestep whose noise level local index k carries
    (identity ``[0..T]`` for unrespaced schedules). The denoiser is always
    conditioned on ``step_map[k]``, never on the local index.
    """

    total_steps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray  # length total_steps + 1; index 0 is the anchor level
    sigmas: np.ndarray
    a_coeffs: np.ndarray
    b_coeffs: np.ndarray
    step_map: np.ndarray
    spacing: str = "linear"
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    base_total_steps: int = field(default=0)

    def __post_init__(self):
        if self.total_steps != len(self.betas):
            raise ScheduleError("total_steps does not match beta array length")
        if len(self.alpha_bars) != self.total_steps + 1:
            raise ScheduleError("alpha_bars must have total_steps + 1 entries")
        if len(self.step_map) != self.total_steps + 1:
            raise ScheduleError("step_map must have total_steps + 1 entries")
        for arr in (self.betas, self.alphas, self.alpha_bars, self.sigmas,
                    self.a_coeffs, self.b_coeffs, self.step_map):
            arr.setflags(write=False)

    # -- 1-based step accessors -------------------------------------------

    def beta(self, t: int) -> float:
        return float(self.betas[t - 1])

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal level after t local steps (t may be 0)."""
        return float(self.alpha_bars[t])

    def sigma(self, t: int) -> float:
        return float(self.sigmas[t - 1])

    def a(self, t: int) -> float:
        return float(self.a_coeffs[t - 1])

    def b(self, t: int) -> float:
        return float(self.b_coeffs[t - 1])

    def orig_timestep(self, t: int) -> int:
        """Original-schedule timestep to condition the denoiser on at local step t."""
        return int(self.step_map[t])

    # -- identity ----------------------------------------------------------

    @property
    def is_respaced(self) -> bool:
        return self.total_steps != self.base_total_steps or not np.array_equal(
            self.step_map, np.arange(self.total_steps + 1))

    @property
    def is_invertible(self) -> bool:
        """True when every step has a_t != 0, i.e. the anchor level is below 1."""
        return float(self.alpha_bars[0]) < 1.0

    @property
    def fingerprint(self) -> str:
        return _fingerprint(self.base_total_steps, self.beta_start,
                            self.beta_end, self.spacing, self.step_map)

    @property
    def base_fingerprint(self) -> str:
        """Fingerprint of the unrespaced schedule this one derives from."""
        return _fingerprint(self.base_total_steps, self.beta_start,
                            self.beta_end, self.spacing,
                            np.arange(self.base_total_steps + 1))

    def is_respacing_of(self, other: "VarianceSchedule") -> bool:
        return self.base_fingerprint == other.fingerprint

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        """Compact form; derived arrays are recomputed on load, never persisted."""
        return {
            "total_steps": int(self.base_total_steps),
            "beta_start": float(self.beta_start),
            "beta_end": float(self.beta_end),
            "spacing": self.spacing,
            "step_map": [int(v) for v in self.step_map],
        }


def _base_betas(total_steps: int, beta_start: float, beta_end: float,
                spacing: str) -> np.ndarray:
    if spacing == "linear":
        return np.linspace(beta_start, beta_end, total_steps, dtype=np.float64)
    # Squared-cosine alpha_bar curve; the beta bounds are validated but do not
    # shape this curve (they only parameterize the linear ramp).
    s = 0.008
    ts = np.arange(total_steps + 1, dtype=np.float64) / total_steps
    f = np.cos((ts + s) / (1.0 + s) * np.pi / 2.0) ** 2
    abar = f / f[0]
    betas = 1.0 - abar[1:] / abar[:-1]
    return np.clip(betas, 1e-8, 0.999)


def _derive(betas: np.ndarray, anchor0: float, step_map: np.ndarray,
            spacing: str, beta_start: float, beta_end: float,
            base_total_steps: int) -> VarianceSchedule:
    alphas = 1.0 - betas
    alpha_bars = np.empty(len(betas) + 1, dtype=np.float64)
    alpha_bars[0] = anchor0
    alpha_bars[1:] = anchor0 * np.cumprod(alphas)
    one_minus = 1.0 - alpha_bars
    if anchor0 == 1.0:
        # 1 - alpha_bar_1 equals beta_1 identically; computing it as such keeps
        # a_1 = 0 and b_1 = 1 exact instead of 1 ulp off
        one_minus[1] = betas[0]
    sigmas = np.sqrt(one_minus[:-1] / one_minus[1:] * betas)
    a_coeffs = one_minus[:-1] * np.sqrt(alphas) / one_minus[1:]
    b_coeffs = betas * np.sqrt(alpha_bars[:-1]) / one_minus[1:]
    return VarianceSchedule(
        total_steps=len(betas), betas=betas, alphas=alphas,
        alpha_bars=alpha_bars, sigmas=sigmas, a_coeffs=a_coeffs,
        b_coeffs=b_coeffs, step_map=step_map, spacing=spacing,
        beta_start=beta_start, beta_end=beta_end,
        base_total_steps=base_total_steps)


def build_schedule(total_steps: int = DEFAULT_TOTAL_STEPS,
                   beta_start: float = DEFAULT_BETA_START,
                   beta_end: float = DEFAULT_BETA_END,
                   spacing: str = "linear") -> VarianceSchedule:
    """Construct an unrespaced schedule over ``total_steps`` steps.

    Defaults follow the common linear 1e-4 -> 0.02 over 1000 steps convention.
    """
    if total_steps < 1:
        raise ScheduleError(f"total_steps must be >= 1, got {total_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ScheduleError(
            f"beta range must satisfy 0 < beta_start <= beta_end < 1, "
            f"got [{beta_start}, {beta_end}]")
    if spacing not in SPACINGS:
        raise ScheduleError(f"unknown spacing {spacing!r}; expected one of {SPACINGS}")
    betas = _base_betas(total_steps, beta_start, beta_end, spacing)
    step_map = np.arange(total_steps + 1, dtype=np.int64)
    return _derive(betas, 1.0, step_map, spacing, beta_start, beta_end, total_steps)


def _respace_with_anchors(schedule: VarianceSchedule,
                          anchors: np.ndarray) -> VarianceSchedule:
    abar = schedule.alpha_bars
    n = len(anchors) - 1
    betas = np.empty(n, dtype=np.float64)
    for k in range(1, n + 1):
        lo, hi = int(anchors[k - 1]), int(anchors[k])
        if hi == lo + 1:
            # consecutive anchors: copy the base beta verbatim so identity
            # respacing reproduces the base schedule bit-for-bit
            betas[k - 1] = schedule.betas[hi - 1]
        else:
            betas[k - 1] = 1.0 - abar[hi] / abar[lo]
    return _derive(betas, float(abar[int(anchors[0])]), anchors.astype(np.int64),
                   schedule.spacing, schedule.beta_start, schedule.beta_end,
                   schedule.base_total_steps)


def respace(schedule: VarianceSchedule, n_steps: int,
            invertible: bool = False) -> VarianceSchedule:
    """Derive an ``n_steps`` schedule whose alpha_bar matches strided timesteps.

    Anchors are evenly strided and always include the final timestep T, so the
    terminal noise level is preserved. With ``invertible=True`` the anchor
    list starts at an original timestep >= 1 instead of 0, which keeps every
    a_t nonzero at the cost of treating the clean sample as sitting at the
    (near-clean) alpha_bar level of that first anchor. Inversion only accepts
    such schedules; ``n_steps <= total_steps - 1`` in that mode.
    """
    if schedule.is_respaced:
        raise ScheduleError("cannot respace an already-respaced schedule")
    T = schedule.total_steps
    if not 1 <= n_steps <= T:
        raise ScheduleError(f"n_steps must be in [1, {T}], got {n_steps}")
    if invertible:
        if n_steps > T - 1:
            raise ScheduleError(
                f"invertible respacing needs n_steps <= {T - 1} so the anchor "
                f"list can start above timestep 0, got {n_steps}")
        anchors = np.round(np.linspace(1, T, n_steps + 1)).astype(np.int64)
    else:
        anchors = np.round(np.linspace(0, T, n_steps + 1)).astype(np.int64)
    if np.any(np.diff(anchors) < 1):
        raise ScheduleError("respacing anchors are not strictly increasing")
    return _respace_with_anchors(schedule, anchors)


def schedule_to_json(schedule: VarianceSchedule) -> str:
    return json.dumps(schedule.to_json_dict(), sort_keys=True)


def schedule_from_json(doc: str | dict) -> VarianceSchedule:
    if isinstance(doc, str):
        doc = json.loads(doc)
    base = build_schedule(doc["total_steps"], doc["beta_start"],
                          doc["beta_end"], doc["spacing"])
    step_map = np.asarray(doc.get("step_map", []), dtype=np.int64)
    if len(step_map) == 0 or np.array_equal(step_map, base.step_map):
        return base
    if step_map[-1] != base.total_steps or np.any(np.diff(step_map) < 1):
        raise ScheduleError("step_map must strictly increase and end at total_steps")
    return _respace_with_anchors(base, step_map)
