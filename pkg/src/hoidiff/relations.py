"""Human-centric kinematic relations and mutual human/object offset fields.

Relations are literal component-wise differences: gamma[n, k] = q[n, k] - r[n]
and tau[n, k] = j[n, k] - o[n].  Distance fields are directed nearest-neighbor
offset vectors between human capsule surface samples and posed object points;
inside/outside signs are deliberately not computed (no watertight meshes here).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    HOIClip,
    HumanMotion,
    ObjectModel,
    ObjectMotion,
    Skeleton,
    axis_angle_to_matrix,
    global_rotations,
    matrix_to_axis_angle,
    pose_object_trajectory,
)

CAPSULE_RADIUS = 0.05  # meters; fixed body-surface proxy around each bone
DEFAULT_FIELD_SAMPLES = 64


@dataclass
class RelationTensor:
    gamma: np.ndarray  # [N, J, 3] rotation relations
    tau: np.ndarray    # [N, J, 3] translation relations (meters)


@dataclass
class DistanceField:
    d_h2o: np.ndarray  # [N, M, 3] human sample -> nearest object point
    d_o2h: np.ndarray  # [N, M, 3] object sample -> nearest human sample

    @property
    def sample_count(self) -> int:
        return self.d_h2o.shape[1]


def compute_relations(human: HumanMotion, obj: ObjectMotion,
                      geodesic: bool = False) -> RelationTensor:
    """Relation tensors from a motion pair.

    Default is the literal joint-wise subtraction; `geodesic=True` swaps the
    rotation part for log(R_q R_r^T) (ablation only, never the default).
    """
    if human.frame_count != obj.frame_count:
        raise ValueError("frame counts differ")
    if geodesic:
        Rq = axis_angle_to_matrix(human.q)                    # [N, J, 3, 3]
        Rr = axis_angle_to_matrix(obj.r)                      # [N, 3, 3]
        rel = np.einsum("nkab,ncb->nkac", Rq, Rr)
        gamma = matrix_to_axis_angle(rel)
    else:
        gamma = human.q - obj.r[:, None, :]
    tau = human.j - obj.o[:, None, :]
    return RelationTensor(gamma=gamma, tau=tau)


# ---------------------------------------------------------------------------
# human surface proxy: capsule samples along bones
# ---------------------------------------------------------------------------

def capsule_sample_table(skeleton: Skeleton, count: int, seed: int = 0) -> np.ndarray:
    """Fixed per-skeleton sample parameters: rows (bone_child, u, radial xyz).

    `u` is the fraction along the bone from parent to child; the radial unit
    vector is perpendicular to the bone's rest direction, expressed in the
    parent joint's frame.  Deterministic given the seed; samples are spread
    round-robin over bones.  World placement rotates with the parent joint's
    global rotation, which makes the samples exactly rigid-motion covariant.
    """
    rng = np.random.default_rng(seed)
    bones = skeleton.bones
    rows = []
    for i in range(count):
        _, child = bones[i % len(bones)]
        rest = skeleton.offsets[child]
        e1, e2 = _perp_basis(rest / np.linalg.norm(rest))
        phi = rng.uniform(0.0, 2.0 * np.pi)
        radial = np.cos(phi) * e1 + np.sin(phi) * e2
        rows.append((child, rng.uniform(0.1, 0.9), *radial))
    return np.array(rows, dtype=np.float64)


def _perp_basis(axis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Two unit vectors perpendicular to a unit axis (rest-pose construction,
    so the branch choice is baked per bone and never flips at runtime)."""
    ref = np.array([0.0, 1.0, 0.0]) if abs(axis[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(ref, axis)
    e1 = e1 / np.linalg.norm(e1)
    return e1, np.cross(axis, e1)


def human_surface_points(skeleton: Skeleton, q: np.ndarray, j: np.ndarray,
                         table: np.ndarray) -> np.ndarray:
    """World-frame capsule surface samples [N, M, 3].

    Sample m sits at lerp(parent, child, u) plus CAPSULE_RADIUS along its
    fixed radial direction carried into world space by the parent joint's
    global rotation (computed from q).
    """
    j = np.asarray(j, dtype=np.float64)
    child = table[:, 0].astype(np.int64)
    parent = skeleton.parents[child]
    u = table[:, 1][None, :, None]
    radial_rest = table[:, 2:5]

    Rg = global_rotations(skeleton, q)                 # [N, J, 3, 3]
    a = j[:, parent]                                   # [N, M, 3]
    seg = j[:, child] - a
    radial = np.einsum("nmab,mb->nma", Rg[:, parent], radial_rest)
    return a + u * seg + CAPSULE_RADIUS * radial


def compute_distance_field(clip: HOIClip, model: ObjectModel, skeleton: Skeleton,
                           count: int = DEFAULT_FIELD_SAMPLES,
                           seed: int = 0) -> DistanceField:
    """Mutual nearest-neighbor offset fields between `count` human capsule
    samples and `count` object surface samples, every frame."""
    if model.sample_count == 0 or clip.frame_count == 0:
        raise ValueError("empty point sets")
    if count > model.sample_count:
        raise ValueError(f"count {count} exceeds object samples {model.sample_count}")

    table = capsule_sample_table(skeleton, count, seed=seed)
    h = human_surface_points(skeleton, clip.human.q, clip.human.j, table)  # [N, M, 3]
    p_all = pose_object_trajectory(model, clip.object)            # [N, V, 3]
    obj_idx = object_sample_indices(model.sample_count, count, seed=seed)
    p_sub = p_all[:, obj_idx]                                     # [N, M, 3]

    # human sample -> nearest of all V posed object points
    d_h2o = nearest_offsets(h, p_all)
    # object sample (M-point subsample) -> nearest human sample
    d_o2h = nearest_offsets(p_sub, h)
    return DistanceField(d_h2o=d_h2o, d_o2h=d_o2h)


def object_sample_indices(available: int, count: int, seed: int = 0) -> np.ndarray:
    """Deterministic subsample of object surface points used for the o->h side."""
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(available, size=count, replace=False))


def nearest_offsets(sources: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-source offset vector to its nearest target: [.., S, 3] x [.., T, 3]
    -> [.., S, 3].  Shared helper for metrics and oracles."""
    diff = targets[..., None, :, :] - sources[..., :, None, :]
    d2 = np.sum(diff * diff, axis=-1)
    idx = np.argmin(d2, axis=-1)
    return np.take_along_axis(targets, idx[..., None], axis=-2) - sources
