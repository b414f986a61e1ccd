"""Differentiable editing losses over pose tensors of shape (F, J, R).

Four loss kinds drive the noise optimizer: pinning selected frame/joint
rotation cells to targets, shrinking or growing the overall rotation
magnitude, damping or amplifying inter-frame velocity, and symmetrizing
mirrored joint pairs. All of them are mean-normalized squared errors built
from autodiff primitives, so they are differentiable with respect to the
generated motion and therefore — through the sampler — with respect to the
input noise.

Angles inside the engine are always radians; the JSON authoring format uses
degrees and joint names, converted exactly once at this module's boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LOSS_KINDS = ("frame_joint", "motion_range", "velocity", "symmetry")
DIRECTIONS = ("minimize", "maximize")


class EditSpecError(ValueError):
    """Malformed editing specification (bad kind, index, or shape)."""


@dataclass(frozen=True)
class MirrorMap:
    """Left/right joint pairing used by the symmetry loss.

    ``sign_flip`` holds one +1/-1 per rotation channel and is applied to the
    right-side joint before comparison; all +1 gives a raw channel-by-channel
    comparison instead of a mirrored one.
    """

    pairs: tuple[tuple[int, int], ...]
    sign_flip: tuple[float, ...] = (1.0, -1.0, -1.0)

    def __post_init__(self):
        seen: set[int] = set()
        for left, right in self.pairs:
            if left == right or left in seen or right in seen:
                raise EditSpecError(f"mirror pairs must be disjoint, got {self.pairs}")
            seen.add(left)
            seen.add(right)

    @property
    def left_indices(self) -> list[int]:
        return [p[0] for p in self.pairs]

    @property
    def right_indices(self) -> list[int]:
        return [p[1] for p in self.pairs]


@dataclass(frozen=True)
class EditSpec:
    """Declarative editing goal: one loss kind plus its selectors and targets."""

    kind: str
    frames: tuple[int, ...] = ()
    joints: tuple[int, ...] = ()
    targets: np.ndarray | None = None  # (J', R) radians, frame_joint only
    direction: str = "minimize"
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise EditSpecError(f"unknown loss kind {self.kind!r}")
        if self.direction not in DIRECTIONS:
            raise EditSpecError(f"unknown direction {self.direction!r}")
        if self.direction == "maximize" and self.kind not in ("motion_range", "velocity"):
            raise EditSpecError(f"direction=maximize is not supported for {self.kind}")
        if self.weight <= 0:
            raise EditSpecError("weight must be positive")
        if self.kind == "frame_joint":
            if not self.frames or not self.joints:
                raise EditSpecError("frame_joint needs at least one frame and one joint")
            tgt = np.asarray(self.targets, dtype=np.float64)
            if tgt.ndim != 2 or tgt.shape[0] != len(self.joints):
                raise EditSpecError(
                    f"targets must have shape (n_joints={len(self.joints)}, R), "
                    f"got {tgt.shape}")
            tgt.setflags(write=False)
            object.__setattr__(self, "targets", tgt)

    def validate_against(self, n_frames: int, n_joints: int, n_channels: int):
        """Range-check selectors; raises naming the first offending index."""
        for f in self.frames:
            if not 0 <= f < n_frames:
                raise EditSpecError(f"frame index {f} out of range [0, {n_frames})")
        for j in self.joints:
            if not 0 <= j < n_joints:
                raise EditSpecError(f"joint index {j} out of range [0, {n_joints})")
        if self.kind == "frame_joint" and self.targets.shape[1] != n_channels:
            raise EditSpecError(
                f"targets have {self.targets.shape[1]} channels, motion has {n_channels}")


def _sign(direction: str) -> float:
    return 1.0 if direction == "minimize" else -1.0


def euler(x: Tensor | np.ndarray) -> Tensor:
    """Rotation-channel view of a motion.

    Poses are stored as Euler radians, so this is the identity; it exists as
    a named operator so a different storage representation could slot in.
    """
    return ad.as_tensor(x)


def vel(x: Tensor | np.ndarray) -> Tensor:
    """Forward-difference velocity, zero-padded so the shape stays (F, J, R)."""
    x = ad.as_tensor(x)
    if x.shape[0] < 2:
        raise EditSpecError(f"velocity needs >= 2 frames, got {x.shape[0]}")
    head = ad.narrow(x, 0, 1, x.shape[0])
    tail = ad.narrow(x, 0, 0, x.shape[0] - 1)
    pad = ad.constant(np.zeros((1,) + x.shape[1:]))
    return ad.concat([ad.sub(head, tail), pad], axis=0)


def loss_frame_joint(x: Tensor | np.ndarray, spec: EditSpec) -> Tensor:
    if spec.kind != "frame_joint":
        raise EditSpecError(f"expected frame_joint spec, got {spec.kind}")
    x = ad.as_tensor(x)
    spec.validate_against(x.shape[0], x.shape[1], x.shape[2])
    sel = ad.take(ad.take(x, spec.frames, axis=0), spec.joints, axis=1)
    tgt = ad.constant(np.broadcast_to(spec.targets, sel.shape))
    return ad.tmean(ad.square(ad.sub(sel, tgt)))


def loss_motion_range(x: Tensor | np.ndarray, direction: str = "minimize") -> Tensor:
    return ad.smul(ad.tmean(ad.square(euler(x))), _sign(direction))


def loss_velocity(x: Tensor | np.ndarray, direction: str = "minimize") -> Tensor:
    return ad.smul(ad.tmean(ad.square(vel(x))), _sign(direction))


def loss_symmetry(x: Tensor | np.ndarray, mirror: MirrorMap) -> Tensor:
    if not mirror.pairs:
        raise EditSpecError("mirror map has no pairs")
    x = ad.as_tensor(x)
    n_joints = x.shape[1]
    for left, right in mirror.pairs:
        if left >= n_joints or right >= n_joints:
            raise EditSpecError(
                f"mirror pair ({left}, {right}) out of range for {n_joints} joints")
    left = ad.take(x, mirror.left_indices, axis=1)
    right = ad.take(x, mirror.right_indices, axis=1)
    flip = ad.broadcast_to(ad.constant(np.asarray(mirror.sign_flip)), right.shape)
    return ad.tmean(ad.square(ad.sub(left, ad.mul(right, flip))))


def edit_loss(specs: EditSpec | list[EditSpec], x: Tensor | np.ndarray,
              mirror: MirrorMap | None = None) -> Tensor:
    """Weighted sum of one or more editing losses on a pose tensor."""
    if isinstance(specs, EditSpec):
        specs = [specs]
    if not specs:
        raise EditSpecError("no edit specs given")
    total: Tensor | None = None
    for spec in specs:
        if spec.kind == "frame_joint":
            term = loss_frame_joint(x, spec)
        elif spec.kind == "motion_range":
            term = loss_motion_range(x, spec.direction)
        elif spec.kind == "velocity":
            term = loss_velocity(x, spec.direction)
        else:
            if mirror is None:
                raise EditSpecError("symmetry loss needs a mirror map")
            term = loss_symmetry(x, mirror)
        term = ad.smul(term, spec.weight)
        total = term if total is None else ad.add(total, term)
    return total


def evaluate_loss(specs: EditSpec | list[EditSpec], frames: np.ndarray,
                  mirror: MirrorMap | None = None) -> float:
    """Loss value on a plain array, outside any tape."""
    return edit_loss(specs, ad.constant(frames), mirror).item()


# -- JSON authoring boundary (degrees + joint names) --------------------------

def spec_to_json_dict(spec: EditSpec, joint_names: list[str]) -> dict:
    doc: dict = {"kind": spec.kind, "direction": spec.direction,
                 "weight": spec.weight}
    if spec.kind == "frame_joint":
        doc["frames"] = list(spec.frames)
        doc["joints"] = [joint_names[j] for j in spec.joints]
        doc["targets_deg"] = np.degrees(spec.targets).tolist()
    return doc


def spec_from_json_dict(doc: dict, joint_names: list[str]) -> EditSpec:
    kind = doc.get("kind")
    if kind not in LOSS_KINDS:
        raise EditSpecError(f"unknown loss kind {kind!r}")
    direction = doc.get("direction", "minimize")
    weight = float(doc.get("weight", 1.0))
    if kind != "frame_joint":
        return EditSpec(kind=kind, direction=direction, weight=weight)
    name_to_idx = {n: i for i, n in enumerate(joint_names)}
    joints = []
    for name in doc.get("joints", []):
        if name not in name_to_idx:
            raise EditSpecError(f"unknown joint name {name!r}")
        joints.append(name_to_idx[name])
    targets = np.radians(np.asarray(doc.get("targets_deg", []), dtype=np.float64))
    return EditSpec(kind=kind, frames=tuple(int(f) for f in doc.get("frames", [])),
                    joints=tuple(joints), targets=targets,
                    direction=direction, weight=weight)
