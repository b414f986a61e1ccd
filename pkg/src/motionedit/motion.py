"""Skeleton and motion-sequence data model, file I/O, and the plumbing metric.

Motions are (F, J, R) arrays of per-frame per-joint Euler rotations in
radians over a fixed skeleton. The native ``.gmo`` container stores the frame
block as raw little-endian float64, so a save/load round trip is bit-exact —
text formats lose digits, and lost digits are exactly what destabilizes long
inversion chains. BVH export exists for external viewers only (degrees,
6 decimals).

``stat_frechet`` is a Fréchet distance between Gaussian fits of per-frame
pose vectors. It is a raw-feature plumbing metric, not a learned-feature
gesture distance; treat its values as relative, not comparable to published
numbers.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .losses import MirrorMap

_GMO_MAGIC = b"GMO1"
_GMO_VERSION = 1


class MotionFormatError(ValueError):
    """Unparseable motion file; message carries the byte offset or line."""


class SkeletonMismatchError(ValueError):
    """Loaded motion belongs to a different skeleton than the session's."""


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int  # -1 for the root
    offset: tuple[float, float, float]


@dataclass(frozen=True)
class Skeleton:
    """Topologically ordered joint list plus the left/right mirror map."""

    joints: tuple[Joint, ...]
    rotation_order: str = "XYZ"
    mirror: MirrorMap = field(default_factory=lambda: MirrorMap(pairs=()))

    def __post_init__(self):
        roots = [i for i, j in enumerate(self.joints) if j.parent < 0]
        if len(roots) != 1 or roots[0] != 0:
            raise ValueError("skeleton needs exactly one root at index 0")
        for i, j in enumerate(self.joints):
            if i > 0 and not 0 <= j.parent < i:
                raise ValueError(f"joint {j.name!r} breaks topological order")
        for left, right in self.mirror.pairs:
            if left >= len(self.joints) or right >= len(self.joints):
                raise ValueError(f"mirror pair ({left}, {right}) references a "
                                 f"missing joint")

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def joint_names(self) -> list[str]:
        return [j.name for j in self.joints]

    def to_json_dict(self) -> dict:
        return {
            "rotation_order": self.rotation_order,
            "joints": [{"name": j.name, "parent": j.parent,
                        "offset": list(j.offset)} for j in self.joints],
            "mirror": {"pairs": [list(p) for p in self.mirror.pairs],
                       "sign_flip": list(self.mirror.sign_flip)},
        }

    @property
    def fingerprint(self) -> str:
        blob = json.dumps(self.to_json_dict(), sort_keys=True,
                          separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def skeleton_from_json_dict(doc: dict) -> Skeleton:
    joints = tuple(Joint(name=j["name"], parent=int(j["parent"]),
                         offset=tuple(float(v) for v in j["offset"]))
                   for j in doc["joints"])
    m = doc.get("mirror", {"pairs": [], "sign_flip": [1.0, -1.0, -1.0]})
    mirror = MirrorMap(pairs=tuple(tuple(int(v) for v in p) for p in m["pairs"]),
                       sign_flip=tuple(float(v) for v in m["sign_flip"]))
    return Skeleton(joints=joints, rotation_order=doc.get("rotation_order", "XYZ"),
                    mirror=mirror)


def default_skeleton() -> Skeleton:
    """16-joint desk-scale humanoid with a fixed left/right mirror map."""
    j = [
        Joint("root", -1, (0.0, 0.0, 0.0)),          # 0
        Joint("spine1", 0, (0.0, 0.12, 0.0)),        # 1
        Joint("spine2", 1, (0.0, 0.12, 0.0)),        # 2
        Joint("chest", 2, (0.0, 0.12, 0.0)),         # 3
        Joint("neck", 3, (0.0, 0.10, 0.0)),          # 4
        Joint("head", 4, (0.0, 0.10, 0.0)),          # 5
        Joint("l_shoulder", 3, (0.18, 0.05, 0.0)),   # 6
        Joint("l_elbow", 6, (0.28, 0.0, 0.0)),       # 7
        Joint("l_wrist", 7, (0.25, 0.0, 0.0)),       # 8
        Joint("r_shoulder", 3, (-0.18, 0.05, 0.0)),  # 9
        Joint("r_elbow", 9, (-0.28, 0.0, 0.0)),      # 10
        Joint("r_wrist", 10, (-0.25, 0.0, 0.0)),     # 11
        Joint("l_hip", 0, (0.10, -0.05, 0.0)),       # 12
        Joint("l_knee", 12, (0.0, -0.40, 0.0)),      # 13
        Joint("r_hip", 0, (-0.10, -0.05, 0.0)),      # 14
        Joint("r_knee", 14, (0.0, -0.40, 0.0)),      # 15
    ]
    mirror = MirrorMap(pairs=((6, 9), (7, 10), (8, 11), (12, 14), (13, 15)),
                       sign_flip=(1.0, -1.0, -1.0))
    return Skeleton(joints=tuple(j), mirror=mirror)


@dataclass(frozen=True)
class MotionSequence:
    """Immutable (F, J, R) Euler-radian motion over a skeleton."""

    skeleton: Skeleton
    frames: np.ndarray
    frame_rate: float = 30.0
    condition: object | None = None  # optional ConditionVector

    def __post_init__(self):
        arr = np.asarray(self.frames, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] < 1:
            raise ValueError(f"frames must be (F, J, R) with F >= 1, got {arr.shape}")
        if arr.shape[1] != self.skeleton.n_joints:
            raise ValueError(f"frames have {arr.shape[1]} joints, skeleton has "
                             f"{self.skeleton.n_joints}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("frames contain non-finite angles")
        arr.setflags(write=False)
        object.__setattr__(self, "frames", arr)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def skeleton_ref(self) -> str:
        return self.skeleton.fingerprint


def normalize_angles(frames: np.ndarray) -> np.ndarray:
    """Wrap entries beyond |2*pi| into (-pi, pi]; in-range values untouched."""
    out = np.array(frames, dtype=np.float64)
    wide = np.abs(out) > 2.0 * np.pi
    if np.any(wide):
        wrapped = np.pi - np.mod(np.pi - out[wide], 2.0 * np.pi)
        out[wide] = wrapped
    return out


# -- native .gmo container ------------------------------------------------------

def save_motion(motion: MotionSequence, path) -> None:
    skel_blob = json.dumps(motion.skeleton.to_json_dict(), sort_keys=True,
                           separators=(",", ":")).encode()
    cond = motion.condition
    cond_blob = b""
    if cond is not None:
        from .denoiser import condition_to_json_dict
        cond_blob = json.dumps(condition_to_json_dict(cond), sort_keys=True,
                               separators=(",", ":")).encode()
    F, J, R = motion.frames.shape
    with open(path, "wb") as fh:
        fh.write(_GMO_MAGIC)
        fh.write(struct.pack("<I", _GMO_VERSION))
        fh.write(struct.pack("<I", len(skel_blob)))
        fh.write(skel_blob)
        fh.write(struct.pack("<d", motion.frame_rate))
        fh.write(struct.pack("<III", F, J, R))
        fh.write(motion.frames.astype("<f8").tobytes())
        fh.write(struct.pack("<I", len(cond_blob)))
        fh.write(cond_blob)


def _need(blob: bytes, offset: int, count: int, what: str) -> int:
    if offset + count > len(blob):
        raise MotionFormatError(
            f"truncated motion file: needed {count} bytes for {what} at byte "
            f"offset {offset}, file has {len(blob)}")
    return offset + count


def load_motion(path, expect_skeleton: Skeleton | None = None) -> MotionSequence:
    """Load a .gmo file; bit-exact for in-range angles.

    With ``expect_skeleton`` given, a fingerprint mismatch raises instead of
    silently importing a motion from a different rig.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    offset = _need(blob, 0, 8, "header")
    if blob[:4] != _GMO_MAGIC:
        raise MotionFormatError(f"bad magic at byte offset 0: {blob[:4]!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != _GMO_VERSION:
        raise MotionFormatError(f"unsupported version {version} at byte offset 4")
    end = _need(blob, offset, 4, "skeleton length")
    (skel_len,) = struct.unpack_from("<I", blob, offset)
    offset = end
    end = _need(blob, offset, skel_len, "skeleton block")
    try:
        skeleton = skeleton_from_json_dict(json.loads(blob[offset:end]))
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise MotionFormatError(
            f"bad skeleton block at byte offset {offset}: {exc}") from exc
    offset = end
    end = _need(blob, offset, 8 + 12, "frame header")
    (frame_rate,) = struct.unpack_from("<d", blob, offset)
    F, J, R = struct.unpack_from("<III", blob, offset + 8)
    offset = end
    count = F * J * R
    end = _need(blob, offset, 8 * count, "frame block")
    frames = np.frombuffer(blob, dtype="<f8", count=count,
                           offset=offset).reshape(F, J, R)
    offset = end
    end = _need(blob, offset, 4, "condition length")
    (cond_len,) = struct.unpack_from("<I", blob, offset)
    offset = end
    end = _need(blob, offset, cond_len, "condition block")
    condition = None
    if cond_len:
        from .denoiser import condition_from_json_dict
        condition = condition_from_json_dict(json.loads(blob[offset:end]))
    if expect_skeleton is not None and skeleton.fingerprint != expect_skeleton.fingerprint:
        raise SkeletonMismatchError(
            f"motion skeleton {skeleton.fingerprint} does not match session "
            f"skeleton {expect_skeleton.fingerprint}")
    return MotionSequence(skeleton=skeleton, frames=normalize_angles(frames),
                          frame_rate=frame_rate, condition=condition)


# -- BVH subset -------------------------------------------------------------------

_AXIS_CHANNEL = {"X": "Xrotation", "Y": "Yrotation", "Z": "Zrotation"}


def export_bvh(motion: MotionSequence, path) -> None:
    """Write the BVH subset: rotation-only joints, root position zeroed.

    Angles go out in degrees with six decimals, which quantizes each angle by
    at most ~8.7e-9 rad.
    """
    skel = motion.skeleton
    children: dict[int, list[int]] = {i: [] for i in range(skel.n_joints)}
    for i, j in enumerate(skel.joints):
        if j.parent >= 0:
            children[j.parent].append(i)
    rot_channels = " ".join(_AXIS_CHANNEL[ax] for ax in skel.rotation_order)
    lines: list[str] = ["HIERARCHY"]

    def emit(idx: int, depth: int):
        j = skel.joints[idx]
        pad = "  " * depth
        kind = "ROOT" if j.parent < 0 else "JOINT"
        lines.append(f"{pad}{kind} {j.name}")
        lines.append(f"{pad}{{")
        inner = "  " * (depth + 1)
        lines.append(f"{inner}OFFSET {j.offset[0]:.6f} {j.offset[1]:.6f} {j.offset[2]:.6f}")
        if j.parent < 0:
            lines.append(f"{inner}CHANNELS 6 Xposition Yposition Zposition {rot_channels}")
        else:
            lines.append(f"{inner}CHANNELS 3 {rot_channels}")
        kids = children[idx]
        if kids:
            for k in kids:
                emit(k, depth + 1)
        else:
            lines.append(f"{inner}End Site")
            lines.append(f"{inner}{{")
            lines.append(f"{inner}  OFFSET 0.000000 0.050000 0.000000")
            lines.append(f"{inner}}}")
        lines.append(f"{pad}}}")

    emit(0, 0)
    lines.append("MOTION")
    lines.append(f"Frames: {motion.n_frames}")
    lines.append(f"Frame Time: {1.0 / motion.frame_rate:.6f}")
    deg = np.degrees(motion.frames)
    for f in range(motion.n_frames):
        row = ["0.000000", "0.000000", "0.000000"]
        row += [f"{v:.6f}" for v in deg[f].reshape(-1)]
        lines.append(" ".join(row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def import_bvh(path) -> MotionSequence:
    """Parse the exported subset back; angles normalized into (-pi, pi]."""
    with open(path, "r", encoding="utf-8") as fh:
        tokens = []
        for lineno, line in enumerate(fh, start=1):
            for tok in line.split():
                tokens.append((tok, lineno))
    pos = 0

    def peek() -> str:
        return tokens[pos][0] if pos < len(tokens) else ""

    def next_tok(what: str) -> str:
        nonlocal pos
        if pos >= len(tokens):
            raise MotionFormatError(f"unexpected end of BVH file while reading {what}")
        tok, _ = tokens[pos]
        pos += 1
        return tok

    def expect(value: str):
        tok = next_tok(value)
        if tok != value:
            raise MotionFormatError(
                f"expected {value!r} at line {tokens[pos - 1][1]}, got {tok!r}")

    expect("HIERARCHY")
    names: list[str] = []
    parents: list[int] = []
    offsets: list[tuple[float, float, float]] = []
    rotation_order: list[str] = []
    root_seen = False

    def parse_joint(parent: int):
        nonlocal root_seen
        kind = next_tok("ROOT/JOINT")
        if kind == "ROOT":
            if root_seen:
                raise MotionFormatError("multiple roots are not supported")
            root_seen = True
        elif kind != "JOINT":
            raise MotionFormatError(f"expected ROOT or JOINT, got {kind!r} at "
                                    f"line {tokens[pos - 1][1]}")
        name = next_tok("joint name")
        expect("{")
        expect("OFFSET")
        off = tuple(float(next_tok("offset")) for _ in range(3))
        expect("CHANNELS")
        n_chan = int(next_tok("channel count"))
        chans = [next_tok("channel") for _ in range(n_chan)]
        rots = [c for c in chans if c.endswith("rotation")]
        others = [c for c in chans if not c.endswith("rotation")]
        if parent < 0:
            if len(rots) != 3 or any(not c.endswith("position") for c in others):
                raise MotionFormatError(f"unsupported root channels {chans}")
        elif len(rots) != 3 or others:
            raise MotionFormatError(f"unsupported channels {chans} on joint {name!r}")
        order = "".join(c[0] for c in rots)
        if not rotation_order:
            rotation_order.append(order)
        elif rotation_order[0] != order:
            raise MotionFormatError("mixed rotation orders are not supported")
        idx = len(names)
        names.append(name)
        parents.append(parent)
        offsets.append(off)
        while True:
            nxt = peek()
            if nxt == "JOINT":
                parse_joint(idx)
            elif nxt == "End":
                next_tok("End")
                expect("Site")
                expect("{")
                expect("OFFSET")
                for _ in range(3):
                    next_tok("end-site offset")
                expect("}")
            elif nxt == "}":
                next_tok("}")
                return
            else:
                raise MotionFormatError(f"unexpected token {nxt!r} at line "
                                        f"{tokens[pos][1] if pos < len(tokens) else '?'}")

    parse_joint(-1)
    expect("MOTION")
    expect("Frames:")
    n_frames = int(next_tok("frame count"))
    expect("Frame")
    expect("Time:")
    frame_time = float(next_tok("frame time"))
    n_joints = len(names)
    per_frame = 3 + 3 * n_joints
    values = np.empty((n_frames, per_frame))
    for f in range(n_frames):
        for c in range(per_frame):
            values[f, c] = float(next_tok(f"frame {f} value {c}"))
    frames = np.radians(values[:, 3:].reshape(n_frames, n_joints, 3))
    joints = tuple(Joint(name=names[i], parent=parents[i], offset=offsets[i])
                   for i in range(n_joints))
    skeleton = Skeleton(joints=joints, rotation_order=rotation_order[0])
    return MotionSequence(skeleton=skeleton, frames=normalize_angles(frames),
                          frame_rate=1.0 / frame_time)


# -- plumbing similarity metric ----------------------------------------------------

def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def stat_frechet(motion_a: MotionSequence, motion_b: MotionSequence) -> float:
    """Fréchet distance between Gaussian fits of per-frame pose vectors.

    |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with the matrix root
    taken on the symmetrized product. Raw-feature plumbing, not a learned
    gesture metric.
    """
    if motion_a.skeleton.fingerprint != motion_b.skeleton.fingerprint:
        raise SkeletonMismatchError("motions live on different skeletons")
    a = motion_a.frames.reshape(motion_a.n_frames, -1)
    b = motion_b.frames.reshape(motion_b.n_frames, -1)
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("frechet distance needs >= 2 frames per motion")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)
    root_a = _psd_sqrt(cov_a)
    cross = _psd_sqrt(root_a @ cov_b @ root_a)
    val = float(np.sum((mu_a - mu_b) ** 2)
                + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    return max(val, 0.0)
