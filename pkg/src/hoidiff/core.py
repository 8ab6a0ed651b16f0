"""Domain types, rotation algebra, skeleton kinematics, canonicalization and
the flat motion codec shared by every other module.

Conventions (fixed package-wide):
  * vertical axis +Y, canonical forward axis +Z
  * rotations are axis-angle 3-vectors on the principal branch (angle <= pi)
  * flat frame layout: q (J*3, row-major by joint) | j (J*3) | r (3) | o (3)
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

UP = np.array([0.0, 1.0, 0.0])
FORWARD = np.array([0.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# rotation algebra
# ---------------------------------------------------------------------------

def axis_angle_to_matrix(a: np.ndarray) -> np.ndarray:
    """Rodrigues formula for axis-angle vectors of shape (..., 3).

    The zero vector maps to the identity.
    """
    a = np.asarray(a, dtype=np.float64)
    theta = np.linalg.norm(a, axis=-1, keepdims=True)
    # safe unit axis; where theta == 0 the sin/cos terms vanish anyway
    axis = np.where(theta > 0, a / np.where(theta == 0, 1.0, theta), 0.0)
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros_like(x)
    K = np.stack(
        [
            np.stack([zero, -z, y], axis=-1),
            np.stack([z, zero, -x], axis=-1),
            np.stack([-y, x, zero], axis=-1),
        ],
        axis=-2,
    )
    th = theta[..., None]
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + np.sin(th) * K + (1.0 - np.cos(th)) * (K @ K)


def matrix_to_axis_angle(R: np.ndarray) -> np.ndarray:
    """Log map (principal branch) via quaternions, stable at angles near 0 and pi.

    At angle exactly pi the sign ambiguity is resolved to the representative
    whose first nonzero component is non-negative.
    """
    R = np.asarray(R, dtype=np.float64)
    q = _matrix_to_quat(R)
    # enforce w >= 0 so the angle is in [0, pi]
    q = np.where(q[..., :1] < 0, -q, q)
    w = np.clip(q[..., 0], -1.0, 1.0)
    v = q[..., 1:]
    vn = np.linalg.norm(v, axis=-1)
    angle = 2.0 * np.arctan2(vn, w)
    scale = np.where(vn > 1e-300, angle / np.where(vn == 0, 1.0, vn), 2.0)
    aa = v * scale[..., None]
    return _fix_pi_sign(aa)


def _matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion (w, x, y, z), Shepperd's method."""
    m00, m01, m02 = R[..., 0, 0], R[..., 0, 1], R[..., 0, 2]
    m10, m11, m12 = R[..., 1, 0], R[..., 1, 1], R[..., 1, 2]
    m20, m21, m22 = R[..., 2, 0], R[..., 2, 1], R[..., 2, 2]
    tr = m00 + m11 + m22

    # four candidate decompositions, pick the numerically largest pivot
    q = np.empty(R.shape[:-2] + (4,), dtype=np.float64)
    c0 = np.sqrt(np.maximum(1.0 + tr, 0.0))
    c1 = np.sqrt(np.maximum(1.0 + m00 - m11 - m22, 0.0))
    c2 = np.sqrt(np.maximum(1.0 - m00 + m11 - m22, 0.0))
    c3 = np.sqrt(np.maximum(1.0 - m00 - m11 + m22, 0.0))
    choice = np.argmax(np.stack([c0, c1, c2, c3], axis=-1), axis=-1)

    s0 = np.where(c0 == 0, 1.0, c0)
    q0 = np.stack([0.5 * c0, 0.5 * (m21 - m12) / s0, 0.5 * (m02 - m20) / s0,
                   0.5 * (m10 - m01) / s0], axis=-1)
    s1 = np.where(c1 == 0, 1.0, c1)
    q1 = np.stack([0.5 * (m21 - m12) / s1, 0.5 * c1, 0.5 * (m01 + m10) / s1,
                   0.5 * (m02 + m20) / s1], axis=-1)
    s2 = np.where(c2 == 0, 1.0, c2)
    q2 = np.stack([0.5 * (m02 - m20) / s2, 0.5 * (m01 + m10) / s2, 0.5 * c2,
                   0.5 * (m12 + m21) / s2], axis=-1)
    s3 = np.where(c3 == 0, 1.0, c3)
    q3 = np.stack([0.5 * (m10 - m01) / s3, 0.5 * (m02 + m20) / s3,
                   0.5 * (m12 + m21) / s3, 0.5 * c3], axis=-1)

    stacked = np.stack([q0, q1, q2, q3], axis=-2)
    q = np.take_along_axis(stacked, choice[..., None, None].repeat(4, -1), axis=-2)[..., 0, :]
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def _fix_pi_sign(aa: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Near angle pi both a and -a encode the same rotation; pick the
    representative with non-negative first nonzero component."""
    theta = np.linalg.norm(aa, axis=-1)
    at_pi = np.abs(theta - np.pi) < tol
    if not np.any(at_pi):
        return aa
    aa = aa.copy()
    flat = aa.reshape(-1, 3)
    for i in np.nonzero(at_pi.reshape(-1))[0]:
        v = flat[i]
        for c in v:
            if abs(c) > tol:
                if c < 0:
                    flat[i] = -v
                break
    return flat.reshape(aa.shape)


def normalize_axis_angle(a: np.ndarray) -> np.ndarray:
    """Wrap axis-angle vectors onto the principal branch (angle <= pi)."""
    a = np.asarray(a, dtype=np.float64)
    theta = np.linalg.norm(a, axis=-1, keepdims=True)
    wrapped = np.mod(theta, 2.0 * np.pi)
    # angle in (pi, 2pi) is the same rotation as angle-2pi about the same axis
    big = wrapped > np.pi
    target = np.where(big, wrapped - 2.0 * np.pi, wrapped)
    scale = np.where(theta > 0, target / np.where(theta == 0, 1.0, theta), 1.0)
    return _fix_pi_sign(a * scale)


def rotation_about_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Skeleton:
    """Fixed kinematic tree: parent indices in topological order plus bone
    offsets expressed in the parent frame (meters)."""

    parents: np.ndarray          # [J] int, parents[0] == -1
    offsets: np.ndarray          # [J, 3] float
    names: tuple[str, ...] = ()

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=np.int64)
        offsets = np.asarray(self.offsets, dtype=np.float64)
        if parents[0] != -1:
            raise ValueError("root parent must be -1")
        if np.any(parents[1:] >= np.arange(1, len(parents))):
            raise ValueError("parents must be topologically ordered (parents[k] < k)")
        if offsets.shape != (len(parents), 3):
            raise ValueError("offsets must have shape [J, 3]")
        lengths = np.linalg.norm(offsets[1:], axis=-1)
        if np.any(lengths <= 0):
            raise ValueError("non-root bone offsets must have positive length")
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", offsets)

    @property
    def joint_count(self) -> int:
        return len(self.parents)

    @property
    def bones(self) -> list[tuple[int, int]]:
        """(parent, child) index pairs, one per non-root joint."""
        return [(int(self.parents[k]), k) for k in range(1, self.joint_count)]


@dataclass
class HumanMotion:
    q: np.ndarray  # [N, J, 3] axis-angle local joint rotations
    j: np.ndarray  # [N, J, 3] global joint positions (meters)

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        self.j = np.asarray(self.j, dtype=np.float64)
        if self.q.shape != self.j.shape or self.q.ndim != 3 or self.q.shape[-1] != 3:
            raise ValueError(f"q/j shape mismatch: {self.q.shape} vs {self.j.shape}")

    @property
    def frame_count(self) -> int:
        return self.q.shape[0]

    @property
    def joint_count(self) -> int:
        return self.q.shape[1]


@dataclass
class ObjectMotion:
    r: np.ndarray  # [N, 3] axis-angle global object rotation
    o: np.ndarray  # [N, 3] object center translation (meters)

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=np.float64)
        self.o = np.asarray(self.o, dtype=np.float64)
        if self.r.shape != self.o.shape or self.r.ndim != 2 or self.r.shape[-1] != 3:
            raise ValueError(f"r/o shape mismatch: {self.r.shape} vs {self.o.shape}")

    @property
    def frame_count(self) -> int:
        return self.r.shape[0]


@dataclass
class HOIClip:
    """One interaction sequence: coupled human and object motion plus the
    text annotations and a reference to the object model."""

    human: HumanMotion
    object: ObjectMotion
    object_id: str
    fps: int
    texts: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.human.frame_count != self.object.frame_count:
            raise ValueError("human and object frame counts differ")
        if self.fps <= 0:
            raise ValueError("fps must be positive")

    @property
    def frame_count(self) -> int:
        return self.human.frame_count


@dataclass
class ObjectModel:
    """Canonical-frame surface samples of a rigid object; the shape condition
    and geometry source.  Centroid of points is the origin."""

    points: np.ndarray  # [V, 3]
    category: str
    name: str
    faces: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or self.points.shape[0] < 3:
            raise ValueError("points must have shape [V >= 3, 3]")

    @property
    def sample_count(self) -> int:
        return self.points.shape[0]


# ---------------------------------------------------------------------------
# default skeleton (22 joints, SMPL-like topology without hands)
# ---------------------------------------------------------------------------

_JOINT_NAMES = (
    "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2",
    "l_ankle", "r_ankle", "spine3", "l_foot", "r_foot", "neck",
    "l_collar", "r_collar", "head", "l_shoulder", "r_shoulder",
    "l_elbow", "r_elbow", "l_wrist", "r_wrist",
)

_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19)

# parent-frame bone offsets in meters, Y up; proportions of a ~1.7 m body
_OFFSETS = (
    (0.00, 0.00, 0.00),    # pelvis (root)
    (0.09, -0.05, 0.00),   # l_hip
    (-0.09, -0.05, 0.00),  # r_hip
    (0.00, 0.11, 0.00),    # spine1
    (0.00, -0.40, 0.00),   # l_knee
    (0.00, -0.40, 0.00),   # r_knee
    (0.00, 0.13, 0.00),    # spine2
    (0.00, -0.42, 0.00),   # l_ankle
    (0.00, -0.42, 0.00),   # r_ankle
    (0.00, 0.06, 0.00),    # spine3
    (0.00, -0.06, 0.13),   # l_foot
    (0.00, -0.06, 0.13),   # r_foot
    (0.00, 0.21, 0.00),    # neck
    (0.07, 0.12, 0.00),    # l_collar
    (-0.07, 0.12, 0.00),   # r_collar
    (0.00, 0.09, 0.00),    # head
    (0.11, 0.03, 0.00),    # l_shoulder
    (-0.11, 0.03, 0.00),   # r_shoulder
    (0.00, -0.27, 0.00),   # l_elbow
    (0.00, -0.27, 0.00),   # r_elbow
    (0.00, -0.26, 0.00),   # l_wrist
    (0.00, -0.26, 0.00),   # r_wrist
)

JOINT_INDEX = {name: i for i, name in enumerate(_JOINT_NAMES)}


def default_skeleton() -> Skeleton:
    """The fixed 22-joint skeleton used across the package."""
    return Skeleton(parents=np.array(_PARENTS), offsets=np.array(_OFFSETS),
                    names=_JOINT_NAMES)


# ---------------------------------------------------------------------------
# kinematics
# ---------------------------------------------------------------------------

def fk(skeleton: Skeleton, q: np.ndarray, root_pos: np.ndarray) -> np.ndarray:
    """Forward kinematics: local axis-angle rotations + root trajectory ->
    global joint positions [N, J, 3]."""
    q = np.asarray(q, dtype=np.float64)
    root_pos = np.asarray(root_pos, dtype=np.float64)
    J = skeleton.joint_count
    if q.ndim != 3 or q.shape[1] != J or q.shape[2] != 3:
        raise ValueError(f"q must have shape [N, {J}, 3], got {q.shape}")
    if root_pos.shape != (q.shape[0], 3):
        raise ValueError("root_pos must have shape [N, 3]")

    R_local = axis_angle_to_matrix(q)                 # [N, J, 3, 3]
    N = q.shape[0]
    R_global = np.empty_like(R_local)
    j = np.empty((N, J, 3), dtype=np.float64)
    R_global[:, 0] = R_local[:, 0]
    j[:, 0] = root_pos
    for k in range(1, J):
        p = skeleton.parents[k]
        R_global[:, k] = R_global[:, p] @ R_local[:, k]
        j[:, k] = j[:, p] + np.einsum("nab,b->na", R_global[:, p], skeleton.offsets[k])
    return j


def global_rotations(skeleton: Skeleton, q: np.ndarray) -> np.ndarray:
    """Global rotation matrices [N, J, 3, 3] accumulated down the tree."""
    R_local = axis_angle_to_matrix(np.asarray(q, dtype=np.float64))
    R_global = np.empty_like(R_local)
    R_global[:, 0] = R_local[:, 0]
    for k in range(1, skeleton.joint_count):
        R_global[:, k] = R_global[:, skeleton.parents[k]] @ R_local[:, k]
    return R_global


# ---------------------------------------------------------------------------
# canonicalization
# ---------------------------------------------------------------------------

def heading_angle(clip: HOIClip, eps: float = 1e-8) -> float:
    """Heading of the frame-0 root facing, measured about +Y from +Z.

    Falls back to the root velocity direction when the facing is
    vertical-aligned, and to zero when that is degenerate too.
    """
    R0 = axis_angle_to_matrix(clip.human.q[0, 0])
    fwd = R0 @ FORWARD
    horiz = np.array([fwd[0], 0.0, fwd[2]])
    if np.linalg.norm(horiz) < eps:
        vel = clip.human.j[-1, 0] - clip.human.j[0, 0]
        horiz = np.array([vel[0], 0.0, vel[2]])
        if np.linalg.norm(horiz) < eps:
            return 0.0
    return float(np.arctan2(horiz[0], horiz[2]))


def canonicalize(clip: HOIClip) -> HOIClip:
    """Apply one rigid transform (heading rotation about +Y plus horizontal
    translation) to the whole scene so that the frame-0 root sits at zero
    horizontal position facing +Z."""
    theta = heading_angle(clip)
    R = rotation_about_y(-theta)

    j = np.einsum("ab,nkb->nka", R, clip.human.j)
    o = np.einsum("ab,nb->na", R, clip.object.o)
    shift = np.array([j[0, 0, 0], 0.0, j[0, 0, 2]])
    j = j - shift
    o = o - shift

    q = clip.human.q.copy()
    q[:, 0] = matrix_to_axis_angle(R @ axis_angle_to_matrix(clip.human.q[:, 0]))
    r = matrix_to_axis_angle(R @ axis_angle_to_matrix(clip.object.r))

    return HOIClip(
        human=HumanMotion(q=q, j=j),
        object=ObjectMotion(r=r, o=o),
        object_id=clip.object_id,
        fps=clip.fps,
        texts=list(clip.texts),
    )


# ---------------------------------------------------------------------------
# flat motion codec
# ---------------------------------------------------------------------------

def frame_width(joint_count: int) -> int:
    """Flat frame width F = 3J (q) + 3J (j) + 3 (r) + 3 (o)."""
    return 6 * joint_count + 6


def flatten(human: HumanMotion, obj: ObjectMotion) -> np.ndarray:
    """Pack a motion pair into [N, F] with the documented layout."""
    if human.frame_count != obj.frame_count:
        raise ValueError("frame counts differ")
    N, J = human.q.shape[:2]
    return np.concatenate(
        [human.q.reshape(N, 3 * J), human.j.reshape(N, 3 * J), obj.r, obj.o], axis=1
    )


def unflatten(x: np.ndarray, joint_count: int) -> tuple[HumanMotion, ObjectMotion]:
    """Inverse of flatten; raises on a width that does not match the codec."""
    x = np.asarray(x, dtype=np.float64)
    F = frame_width(joint_count)
    if x.ndim != 2 or x.shape[1] != F:
        raise ValueError(f"expected [N, {F}], got {x.shape}")
    N = x.shape[0]
    J = joint_count
    q = x[:, : 3 * J].reshape(N, J, 3)
    j = x[:, 3 * J : 6 * J].reshape(N, J, 3)
    r = x[:, 6 * J : 6 * J + 3]
    o = x[:, 6 * J + 3 :]
    return HumanMotion(q=q, j=j), ObjectMotion(r=r, o=o)


def clip_to_flat(clip: HOIClip) -> np.ndarray:
    return flatten(clip.human, clip.object)


def flat_to_clip(x: np.ndarray, joint_count: int, object_id: str, fps: int,
                 texts: Optional[list[str]] = None) -> HOIClip:
    human, obj = unflatten(x, joint_count)
    return HOIClip(human=human, object=obj, object_id=object_id, fps=fps,
                   texts=list(texts) if texts else [])


# ---------------------------------------------------------------------------
# object posing
# ---------------------------------------------------------------------------

def pose_object_points(model: ObjectModel, r_t: np.ndarray, o_t: np.ndarray) -> np.ndarray:
    """World-frame surface points for one object pose: R(r_t) @ p + o_t."""
    R = axis_angle_to_matrix(np.asarray(r_t, dtype=np.float64))
    return model.points @ R.T + np.asarray(o_t, dtype=np.float64)


def pose_object_trajectory(model: ObjectModel, obj: ObjectMotion) -> np.ndarray:
    """World-frame surface points for every frame: [N, V, 3]."""
    R = axis_angle_to_matrix(obj.r)                    # [N, 3, 3]
    return np.einsum("nab,vb->nva", R, model.points) + obj.o[:, None, :]
