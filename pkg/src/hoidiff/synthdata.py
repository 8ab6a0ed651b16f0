"""Deterministic procedural generator for human-object interaction datasets.

Produces clips in the same schema as captured data (index.json + binary
tensors), with three templated text annotations per clip and per-phase labels
for the object regime (static / attached / sliding).  Everything is a pure
function of the seed.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    HOIClip,
    HumanMotion,
    JOINT_INDEX,
    ObjectModel,
    ObjectMotion,
    Skeleton,
    axis_angle_to_matrix,
    canonicalize,
    clip_to_flat,
    default_skeleton,
    fk,
    frame_width,
    global_rotations,
    matrix_to_axis_angle,
    rotation_about_y,
)

CLIP_MAGIC = b"THOR"
SCENARIO_KINDS = ("lift_carry_place", "drag_along_ground", "sit_static", "carry_on_shoulder")
OBJECT_CATEGORIES = ("box", "plank", "cylinder", "seat")

MAX_CARRY_DIM = 0.8       # meters; largest liftable extent
MAX_SHOULDER_DIM = 1.5    # long objects ride on the shoulder
MAX_DRAG_DIM = 1.6
MAX_SPEED = 2.0       # m/s, human-plausible walking bound
GRASP_GAP = 0.02      # hand hovers this far above the object's top surface


class GenerationError(ValueError):
    """Raised for infeasible scenario specs, naming the violated bound."""


# ---------------------------------------------------------------------------
# object primitives
# ---------------------------------------------------------------------------

def _mirrored(rng, sampler, count):
    """Draw count/2 surface points and mirror them through the origin, so the
    sample centroid is exactly zero for centro-symmetric primitives."""
    half = sampler(rng, count // 2)
    return np.concatenate([half, -half])


def _box_surface(rng, half_extents, count):
    hx, hy, hz = half_extents
    areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
    face = rng.choice(6, size=count, p=areas / areas.sum())
    u = rng.uniform(-1, 1, size=(count, 2))
    pts = np.empty((count, 3))
    for i, f in enumerate(face):
        a, b = u[i]
        if f < 2:    # +-x faces
            pts[i] = [hx if f == 0 else -hx, a * hy, b * hz]
        elif f < 4:  # +-y faces
            pts[i] = [a * hx, hy if f == 2 else -hy, b * hz]
        else:        # +-z faces
            pts[i] = [a * hx, b * hy, hz if f == 4 else -hz]
    return pts


def _cylinder_surface(rng, radius, half_height, count):
    lateral = 2 * np.pi * radius * 2 * half_height
    caps = np.pi * radius ** 2
    p_lat = lateral / (lateral + 2 * caps)
    pts = np.empty((count, 3))
    for i in range(count):
        if rng.uniform() < p_lat:
            th = rng.uniform(0, 2 * np.pi)
            pts[i] = [radius * np.cos(th), rng.uniform(-half_height, half_height),
                      radius * np.sin(th)]
        else:
            th = rng.uniform(0, 2 * np.pi)
            rr = radius * np.sqrt(rng.uniform())
            y = half_height if rng.uniform() < 0.5 else -half_height
            pts[i] = [rr * np.cos(th), y, rr * np.sin(th)]
    return pts


def sample_object(category: str, seed: int, count: int = 256) -> ObjectModel:
    """A primitive object with `count` exact-surface samples and an exactly
    zero sample centroid."""
    rng = np.random.default_rng(seed)
    name = f"{category}_{seed % 1000:03d}"
    if category == "box":
        half = rng.uniform([0.125, 0.10, 0.125], [0.225, 0.20, 0.225])
        pts = _mirrored(rng, lambda r, c: _box_surface(r, half, c), count)
    elif category == "plank":
        half = np.array([rng.uniform(0.40, 0.70), rng.uniform(0.015, 0.03),
                         rng.uniform(0.10, 0.20)])
        pts = _mirrored(rng, lambda r, c: _box_surface(r, half, c), count)
    elif category == "cylinder":
        radius = rng.uniform(0.12, 0.20)
        half_h = rng.uniform(0.15, 0.25)
        pts = _mirrored(rng, lambda r, c: _cylinder_surface(r, radius, half_h, c), count)
    elif category == "seat":
        # slab on a pedestal; component sample counts split by surface area,
        # then the assembly is shifted so the exact sample centroid is zero
        slab = np.array([0.20, 0.025, 0.20])
        ped = np.array([rng.uniform(0.10, 0.14), rng.uniform(0.19, 0.23),
                        rng.uniform(0.10, 0.14)])
        n_slab = count // 2
        slab_pts = _mirrored(rng, lambda r, c: _box_surface(r, slab, c), n_slab)
        ped_pts = _mirrored(rng, lambda r, c: _box_surface(r, ped, c), count - n_slab)
        c_slab = np.array([0.0, ped[1] * 2 + slab[1], 0.0])   # slab center above pedestal
        c_ped = np.array([0.0, ped[1], 0.0])
        shift = (n_slab * c_slab + (count - n_slab) * c_ped) / count
        pts = np.concatenate([slab_pts + (c_slab - shift), ped_pts + (c_ped - shift)])
    else:
        raise GenerationError(f"unknown object category: {category!r}")
    return ObjectModel(points=pts, category=category, name=name)


def rest_rotation(category: str, yaw: float) -> np.ndarray:
    """Axis-angle rest orientation: planks stand on their long edge, all other
    categories rest upright, with a free yaw."""
    R = rotation_about_y(yaw)
    if category == "plank":
        R = R @ axis_angle_to_matrix(np.array([np.pi / 2, 0.0, 0.0]))
    return matrix_to_axis_angle(R)


# ---------------------------------------------------------------------------
# scenario spec
# ---------------------------------------------------------------------------

@dataclass
class Phase:
    name: str
    object_mode: str  # static | attached | sliding
    start: int        # frame, inclusive
    end: int          # frame, exclusive


@dataclass
class ScenarioSpec:
    kind: str
    object_model: ObjectModel
    fps: int = 30
    speed: float = 0.9            # m/s during walking phases
    phase_frames: dict = field(default_factory=dict)
    side: str = "right"
    object_yaw: float = 0.0
    sway_amp: float = 0.03        # rad, low-frequency idle noise
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise GenerationError(f"unknown scenario kind: {self.kind!r}")
        if not 0.0 < self.speed <= MAX_SPEED:
            raise GenerationError(
                f"speed {self.speed:.2f} m/s outside (0, {MAX_SPEED}] m/s bound")
        total = sum(self.phase_frames.values())
        if not 2 * self.fps <= total <= 10 * self.fps:
            raise GenerationError(
                f"total duration {total / self.fps:.2f} s outside [2, 10] s")

    @property
    def frame_count(self) -> int:
        return sum(self.phase_frames.values())


def default_phase_frames(kind: str, rng, fps: int = 30) -> dict:
    dip = int(0.8 * fps)
    if kind == "sit_static":
        frames = {
            "idle_in": int(rng.integers(int(0.4 * fps), int(0.9 * fps))),
            "sit_down": fps,
            "seated": int(rng.integers(fps, 3 * fps)),
            "rise": fps,
            "idle_out": int(rng.integers(int(0.4 * fps), int(0.9 * fps))),
        }
    else:
        frames = {
            "approach": int(rng.integers(int(0.8 * fps), int(1.8 * fps))),
            "grasp": dip,
            "carry": int(rng.integers(fps, int(2.6 * fps))),
            "release": dip,
            "rest": int(rng.integers(int(0.4 * fps), int(1.0 * fps))),
        }
    # pad the final phase so clip lengths quantize to 0.5 s, which lets the
    # trainer form same-length batches without masking
    step = fps // 2
    total = sum(frames.values())
    last = next(reversed(frames))
    frames[last] += (-total) % step
    return frames


# ---------------------------------------------------------------------------
# pose machinery
# ---------------------------------------------------------------------------

def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _bump(t, a, peak, b):
    """0 outside [a, b], smooth rise to 1 at `peak`, smooth fall after."""
    t = np.asarray(t, dtype=np.float64)
    up = _smoothstep((t - a) / max(peak - a, 1e-9))
    down = 1.0 - _smoothstep((t - peak) / max(b - peak, 1e-9))
    return np.where(t < peak, up, down)


_J = JOINT_INDEX


def _side_prefix(side: str) -> str:
    return {"left": "l", "right": "r"}[side]


def _squat_pose(q, s, arm_side=None, arm_amount=None):
    """Add a squat-and-lean layer at depth s (scalar or [N]); optionally add
    the reaching-arm layer for `arm_side` at a separately controlled depth."""
    s = np.asarray(s, dtype=np.float64)
    for hip, knee, ankle in ((_J["l_hip"], _J["l_knee"], _J["l_ankle"]),
                             (_J["r_hip"], _J["r_knee"], _J["r_ankle"])):
        q[:, hip, 0] += -1.60 * s
        q[:, knee, 0] += 2.60 * s
        q[:, ankle, 0] += -0.90 * s
    for spine in (_J["spine1"], _J["spine2"], _J["spine3"]):
        q[:, spine, 0] += 0.45 * s
    if arm_side is not None:
        a = s if arm_amount is None else np.asarray(arm_amount, dtype=np.float64)
        q[:, _J[f"{_side_prefix(arm_side)}_shoulder"], 0] += -0.90 * a
        q[:, _J[f"{_side_prefix(arm_side)}_elbow"], 0] += -0.25 * a
    return q


def _sit_pose(q, s):
    s = np.asarray(s, dtype=np.float64)
    for hip, knee in ((_J["l_hip"], _J["l_knee"]), (_J["r_hip"], _J["r_knee"])):
        q[:, hip, 0] += -1.90 * s
        q[:, knee, 0] += 1.95 * s
    q[:, _J["spine1"], 0] += 0.10 * s
    return q


def _walk_pose(q, omega, gate, speed, swing_mask=(1.0, 1.0)):
    """Add the gait layer; swing_mask scales the (left, right) arm swing so a
    carrying arm can be frozen."""
    amp = 0.35 + 0.18 * speed
    knee_amp = 0.55
    sin_w = np.sin(omega) * gate
    q[:, _J["l_hip"], 0] += -amp * sin_w
    q[:, _J["r_hip"], 0] += amp * sin_w
    q[:, _J["l_knee"], 0] += knee_amp * np.maximum(0.0, np.sin(omega)) * gate
    q[:, _J["r_knee"], 0] += knee_amp * np.maximum(0.0, -np.sin(omega)) * gate
    q[:, _J["l_ankle"], 0] += 0.25 * amp * sin_w
    q[:, _J["r_ankle"], 0] += -0.25 * amp * sin_w
    q[:, _J["l_shoulder"], 0] += 0.5 * amp * sin_w * swing_mask[0]
    q[:, _J["r_shoulder"], 0] += -0.5 * amp * sin_w * swing_mask[1]
    return q


def _sway_noise(q, rng, n, amp, joints, fps):
    """Low-frequency smooth noise on secondary joints."""
    t = np.arange(n) / fps
    for jname in joints:
        for axis in (0, 2):
            f = rng.uniform(0.15, 0.5)
            ph = rng.uniform(0, 2 * np.pi)
            q[:, _J[jname], axis] += amp * np.sin(2 * np.pi * f * t + ph)
    return q


def _stand_height(skeleton: Skeleton) -> float:
    """Rest-pose drop from root to the lowest foot joint."""
    j = fk(skeleton, np.zeros((1, skeleton.joint_count, 3)), np.zeros((1, 3)))
    feet = [_J["l_foot"], _J["r_foot"]]
    return -float(j[0, feet].min(axis=0)[1])


def _snap_to_ground(skeleton, q, root):
    """Lower/raise the root per frame so the lowest foot joint touches y=0."""
    j = fk(skeleton, q, root)
    feet_y = j[:, [_J["l_foot"], _J["r_foot"]], 1].min(axis=1)
    root = root.copy()
    root[:, 1] -= feet_y
    return root, fk(skeleton, q, root)


def _wrist_height_at_depth(skeleton, s, side, stand_h):
    """Snapped wrist height of the pure squat-and-reach pose at depth s."""
    q = np.zeros((1, skeleton.joint_count, 3))
    _squat_pose(q, np.array([s]), arm_side=side)
    root = np.array([[0.0, stand_h, 0.0]])
    _, j = _snap_to_ground(skeleton, q, root)
    return float(j[0, _J[f"{_side_prefix(side)}_wrist"], 1])


def _solve_reach_depth(skeleton, target_y, side, stand_h):
    """Bisect the squat depth so the snapped wrist height hits target_y."""
    lo, hi = 0.0, 1.0
    y_lo = _wrist_height_at_depth(skeleton, lo, side, stand_h)
    y_hi = _wrist_height_at_depth(skeleton, hi, side, stand_h)
    if not (y_hi - 1e-6 <= target_y <= y_lo + 1e-6):
        raise GenerationError(
            f"grasp height {target_y:.3f} m outside reachable band "
            f"[{y_hi:.3f}, {y_lo:.3f}] m")
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        if _wrist_height_at_depth(skeleton, mid, side, stand_h) > target_y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _solve_sit_depth(skeleton, target_root_y, stand_h):
    def root_y(s):
        q = np.zeros((1, skeleton.joint_count, 3))
        _sit_pose(q, np.array([s]))
        root, _ = _snap_to_ground(skeleton, q, np.array([[0.0, stand_h, 0.0]]))
        return float(root[0, 1])

    lo, hi = 0.0, 1.0
    if not (root_y(hi) - 1e-6 <= target_root_y <= root_y(lo) + 1e-6):
        raise GenerationError(
            f"seat height implies root {target_root_y:.3f} m outside reachable "
            f"band [{root_y(hi):.3f}, {root_y(lo):.3f}] m")
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        if root_y(mid) > target_root_y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _window(t, a, b, ramp=0.35):
    """Smooth indicator of [a, b]: 0 at/before a, 1 on the interior plateau,
    0 at/after b."""
    t = np.asarray(t, dtype=np.float64)
    return _smoothstep((t - a) / ramp) * (1.0 - _smoothstep((t - b + ramp) / ramp))


def _object_extents(model: ObjectModel, rest_r: np.ndarray) -> tuple[float, float]:
    """(rest height above ground, max dimension) of the rest-posed object."""
    pts = model.points @ axis_angle_to_matrix(rest_r).T
    height = float(pts[:, 1].max() - pts[:, 1].min())
    max_dim = float((model.points.max(0) - model.points.min(0)).max())
    return height, max_dim


# ---------------------------------------------------------------------------
# clip generation
# ---------------------------------------------------------------------------

def generate_clip(spec: ScenarioSpec, skeleton: Skeleton | None = None
                  ) -> tuple[HOIClip, list[Phase]]:
    """One kinematically consistent clip plus its object-regime phase labels.

    Contracts: during `attached` phases the object-to-hand transform is
    constant; during `static` phases the object pose is constant; the lowest
    foot joint touches the ground every frame; texts (3 paraphrases) name the
    action, the object and the involved body part.  Deterministic per seed.
    """
    skeleton = skeleton or default_skeleton()
    if not spec.phase_frames:
        spec.phase_frames = default_phase_frames(
            spec.kind, np.random.default_rng(spec.seed), spec.fps)
        spec.__post_init__()
    if spec.kind == "sit_static":
        clip, phases = _generate_sit(spec, skeleton)
    else:
        clip, phases = _generate_manipulation(spec, skeleton)
    clip = canonicalize(clip)
    return clip, phases


def _phase_bounds(frames: dict) -> dict:
    bounds, start = {}, 0
    for name, n in frames.items():
        bounds[name] = (start, start + n)
        start += n
    return bounds


def _generate_manipulation(spec: ScenarioSpec, skeleton: Skeleton):
    model = spec.object_model
    rest_r = rest_rotation(model.category, spec.object_yaw)
    height, max_dim = _object_extents(model, rest_r)
    limit, verb = {
        "drag_along_ground": (MAX_DRAG_DIM, "drag"),
        "carry_on_shoulder": (MAX_SHOULDER_DIM, "carry"),
        "lift_carry_place": (MAX_CARRY_DIM, "carry"),
    }[spec.kind]
    if max_dim > limit:
        raise GenerationError(
            f"object too large to {verb}: "
            f"max dimension {max_dim:.2f} m exceeds {limit:.2f} m")

    pre = _side_prefix(spec.side)
    fps = spec.fps
    bounds = _phase_bounds(spec.phase_frames)
    n_total = spec.frame_count
    t = np.arange(n_total) / fps
    d0, d1 = (b / fps for b in bounds["grasp"])
    e0, e1 = (b / fps for b in bounds["release"])
    g_t, rho_t = 0.5 * (d0 + d1), 0.5 * (e0 + e1)
    g, rho = int(round(g_t * fps)), int(round(rho_t * fps))

    stand_h = _stand_height(skeleton)
    target = height + GRASP_GAP
    s_star = _solve_reach_depth(skeleton, target, spec.side, stand_h)

    gate = _window(t, 0.0, d0) + _window(t, d1, e0)
    omega = np.cumsum(2.0 * np.pi * (1.3 + 0.5 * spec.speed) * gate) / fps
    squat = s_star * (_bump(t, d0, g_t, d1) + _bump(t, e0, rho_t, e1))
    arm = s_star * np.where(
        t < g_t, _smoothstep((t - d0) / (g_t - d0)),
        np.where(t <= rho_t, 1.0, 1.0 - _smoothstep((t - rho_t) / (e1 - rho_t))))
    hold = _window(t, d0, e1)

    q = np.zeros((n_total, skeleton.joint_count, 3))
    swing = (1.0, 1.0 - hold) if spec.side == "right" else (1.0 - hold, 1.0)
    _walk_pose(q, omega, gate, spec.speed, swing_mask=swing)
    _squat_pose(q, squat, arm_side=spec.side, arm_amount=arm)
    if spec.kind == "carry_on_shoulder":
        raise_amt = _window(t, g_t + 0.15, rho_t - 0.15, 0.5)
        q[:, _J[f"{pre}_shoulder"], 0] += -1.10 * raise_amt
        q[:, _J[f"{pre}_elbow"], 0] += -0.25 * raise_amt
    other = "l" if pre == "r" else "r"
    rng = np.random.default_rng(spec.seed)
    _sway_noise(q, rng, n_total, spec.sway_amp,
                ("head", "neck", f"{other}_shoulder", f"{other}_elbow"), fps)

    root = np.zeros((n_total, 3))
    root[:, 1] = stand_h
    root[:, 2] = np.cumsum(spec.speed * gate) / fps
    root, j = _snap_to_ground(skeleton, q, root)

    wrist = _J[f"{pre}_wrist"]
    Rg = global_rotations(skeleton, q)
    Rw = Rg[:, wrist]
    pw = j[:, wrist]

    R0 = axis_angle_to_matrix(rest_r)
    o0 = np.array([pw[g, 0], -float((model.points @ R0.T)[:, 1].min()), pw[g, 2]])

    r = np.tile(rest_r, (n_total, 1))
    o = np.tile(o0, (n_total, 1))
    span = slice(g, rho + 1)
    if spec.kind == "drag_along_ground":
        delta = pw[span] - pw[g]
        o[span, 0] = o0[0] + delta[:, 0]
        o[span, 2] = o0[2] + delta[:, 2]
        mode = "sliding"
    else:
        R_off = Rw[g].T @ R0
        p_off = Rw[g].T @ (o0 - pw[g])
        R_obj = Rw[span] @ R_off
        r[span] = matrix_to_axis_angle(R_obj)
        o[span] = pw[span] + np.einsum("nab,b->na", Rw[span], p_off)
        mode = "attached"
    r[rho + 1:] = r[rho]
    o[rho + 1:] = o[rho]

    phases = [
        Phase("approach", "static", 0, int(d0 * fps)),
        Phase("grasp", "static", int(d0 * fps), g),
        Phase(spec.kind.split("_")[0], mode, g, rho + 1),
        Phase("release", "static", rho + 1, int(e1 * fps)),
        Phase("rest", "static", int(e1 * fps), n_total),
    ]
    texts = _make_texts(spec, rng)
    clip = HOIClip(human=HumanMotion(q=q, j=j), object=ObjectMotion(r=r, o=o),
                   object_id=model.name, fps=fps, texts=texts)
    return clip, phases


def _generate_sit(spec: ScenarioSpec, skeleton: Skeleton):
    model = spec.object_model
    if model.category != "seat":
        raise GenerationError(f"sit_static requires a seat, got {model.category!r}")
    rest_r = rest_rotation(model.category, spec.object_yaw)
    height, _ = _object_extents(model, rest_r)
    if not 0.30 <= height <= 0.65:
        raise GenerationError(
            f"seat height {height:.2f} m outside sittable band [0.30, 0.65] m")

    fps = spec.fps
    bounds = _phase_bounds(spec.phase_frames)
    n_total = spec.frame_count
    t = np.arange(n_total) / fps
    s0, s1 = (b / fps for b in bounds["sit_down"])
    r0, r1 = (b / fps for b in bounds["rise"])

    stand_h = _stand_height(skeleton)
    depth = _solve_sit_depth(skeleton, height + 0.06, stand_h)
    sit = depth * np.where(t < s1, _smoothstep((t - s0) / (s1 - s0)),
                           1.0 - _smoothstep((t - r0) / (r1 - r0)))

    q = np.zeros((n_total, skeleton.joint_count, 3))
    _sit_pose(q, sit)
    rng = np.random.default_rng(spec.seed)
    _sway_noise(q, rng, n_total, spec.sway_amp,
                ("head", "neck", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow"),
                fps)

    root = np.zeros((n_total, 3))
    root[:, 1] = stand_h
    root, j = _snap_to_ground(skeleton, q, root)

    R0 = axis_angle_to_matrix(rest_r)
    o0 = np.array([0.0, -float((model.points @ R0.T)[:, 1].min()), 0.0])
    r = np.tile(rest_r, (n_total, 1))
    o = np.tile(o0, (n_total, 1))

    phases = [
        Phase("idle_in", "static", 0, bounds["idle_in"][1]),
        Phase("sit_down", "static", *bounds["sit_down"]),
        Phase("seated", "static", *bounds["seated"]),
        Phase("rise", "static", *bounds["rise"]),
        Phase("idle_out", "static", bounds["idle_out"][0], n_total),
    ]
    texts = _make_texts(spec, rng)
    clip = HOIClip(human=HumanMotion(q=q, j=j), object=ObjectMotion(r=r, o=o),
                   object_id=model.name, fps=fps, texts=texts)
    return clip, phases


# ---------------------------------------------------------------------------
# text annotations
# ---------------------------------------------------------------------------

OBJECT_NOUNS = {
    "box": ("box", "crate", "carton"),
    "plank": ("plank", "board", "panel"),
    "cylinder": ("drum", "barrel", "canister"),
    "seat": ("stool", "seat", "bench"),
}

_TEMPLATES = {
    "lift_carry_place": (
        "a person bends down and picks up the {noun} with the {side} hand, "
        "carries it forward and sets it down on the ground",
        "someone lifts the {noun} off the ground with the {side} hand, walks "
        "forward carrying it and places it back down",
        "a person grabs the {noun}, hauls it forward for a few steps and then "
        "puts it down again",
    ),
    "carry_on_shoulder": (
        "a person picks the {noun} up and hoists it to {side} shoulder height, "
        "then walks forward carrying it high",
        "someone raises the {noun} up beside the {side} shoulder with one hand "
        "and carries it forward",
        "a person lifts the {noun} to the {side} shoulder and strides ahead "
        "while holding it up there",
    ),
    "drag_along_ground": (
        "a person bends down, grips the {noun} with the {side} hand and drags "
        "it along the ground while walking forward",
        "someone takes hold of the {noun} and pulls it across the floor for "
        "several steps",
        "a person drags the {noun} forward along the ground, keeping the "
        "{side} hand on it the whole way",
    ),
    "sit_static": (
        "a person sits down on the {noun}, rests there for a moment and then "
        "stands up again",
        "someone lowers themselves onto the {noun} and stays seated briefly "
        "before rising back to their feet",
        "a person takes a seat on the {noun}, sits calmly for a while and then "
        "gets up again",
    ),
}

# one keyword per scenario kind that appears in every paraphrase of that kind
KIND_KEYWORDS = {
    "lift_carry_place": ("picks", "lifts", "grabs"),
    "carry_on_shoulder": ("shoulder",),
    "drag_along_ground": ("drags", "pulls"),
    "sit_static": ("sits", "seated", "seat"),
}


def _make_texts(spec: ScenarioSpec, rng) -> list[str]:
    nouns = list(OBJECT_NOUNS[spec.object_model.category])
    rng.shuffle(nouns)
    side = spec.side
    return [tpl.format(noun=nouns[i % len(nouns)], side=side)
            for i, tpl in enumerate(_TEMPLATES[spec.kind])]


# ---------------------------------------------------------------------------
# binary formats
# ---------------------------------------------------------------------------

def write_clip_tensor(path, x: np.ndarray) -> None:
    """Flat motion tensor file: magic 'THOR', u32 N, u32 F, N*F little-endian f32."""
    x = np.asarray(x)
    with open(path, "wb") as f:
        f.write(CLIP_MAGIC)
        f.write(struct.pack("<II", x.shape[0], x.shape[1]))
        f.write(x.astype("<f4").tobytes())


def read_clip_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CLIP_MAGIC:
            raise ValueError(
                f"bad clip file {path}: magic bytes {magic!r}, expected {CLIP_MAGIC!r}")
        n, width = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(4 * n * width), dtype="<f4")
    if data.size != n * width:
        raise ValueError(f"truncated clip file {path}")
    return data.reshape(n, width).astype(np.float64)


def write_object_points(path, points: np.ndarray) -> None:
    """Object point file: u32 V, V*3 little-endian f32."""
    points = np.asarray(points)
    with open(path, "wb") as f:
        f.write(struct.pack("<I", points.shape[0]))
        f.write(points.astype("<f4").tobytes())


def read_object_points(path) -> np.ndarray:
    with open(path, "rb") as f:
        (v,) = struct.unpack("<I", f.read(4))
        data = np.frombuffer(f.read(12 * v), dtype="<f4")
    if data.size != 3 * v:
        raise ValueError(f"truncated object file {path}")
    return data.reshape(v, 3).astype(np.float64)


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

@dataclass
class DatasetConfig:
    train_clips: int = 200
    test_clips: int = 30
    fps: int = 30
    objects_per_category: int = 2
    object_samples: int = 256
    seed: int = 0


PRESETS = {
    "default": DatasetConfig(),
    "paper-scale": DatasetConfig(train_clips=2144, test_clips=233),
    "tiny": DatasetConfig(train_clips=24, test_clips=8),
}

_KIND_CATEGORIES = {
    "lift_carry_place": ("box", "cylinder"),
    "carry_on_shoulder": ("plank", "box"),
    "drag_along_ground": ("box", "plank", "cylinder"),
    "sit_static": ("seat",),
}


@dataclass
class ClipRecord:
    id: str
    file: str
    object_id: str
    split: str
    texts: list[str]
    phases: list[Phase]


@dataclass
class DatasetIndex:
    root: Path
    fps: int
    joint_count: int
    clips: list[ClipRecord]
    objects: dict[str, str]  # object_id -> file
    object_categories: dict[str, str]
    avg_text_tokens: float

    def split(self, tag: str) -> list[ClipRecord]:
        return [c for c in self.clips if c.split == tag]

    def load_clip(self, rec: ClipRecord) -> HOIClip:
        x = read_clip_tensor(self.root / rec.file)
        human, obj = _unflatten_checked(x, self.joint_count)
        return HOIClip(human=human, object=obj, object_id=rec.object_id,
                       fps=self.fps, texts=list(rec.texts))

    def load_object(self, object_id: str) -> ObjectModel:
        pts = read_object_points(self.root / self.objects[object_id])
        return ObjectModel(points=pts, category=self.object_categories[object_id],
                           name=object_id)


def _unflatten_checked(x, joint_count):
    from .core import unflatten

    return unflatten(x, joint_count)


def build_object_library(config: DatasetConfig) -> list[ObjectModel]:
    models = []
    for ci, category in enumerate(OBJECT_CATEGORIES):
        for k in range(config.objects_per_category):
            models.append(sample_object(category, seed=config.seed * 997 + ci * 31 + k,
                                        count=config.object_samples))
    # names must be unique ids
    seen = {}
    for m in models:
        if m.name in seen:
            m.name = f"{m.name}_{seen[m.name]}"
        seen[m.name] = seen.get(m.name, 0) + 1
    return models


def generate_dataset(config: DatasetConfig, out_dir) -> DatasetIndex:
    """Write a full dataset directory (index.json, clips/, objects/) and
    return its index.  Byte-deterministic given the config."""
    from .encoders import tokenize

    out = Path(out_dir)
    (out / "clips").mkdir(parents=True, exist_ok=True)
    (out / "objects").mkdir(parents=True, exist_ok=True)
    skeleton = default_skeleton()

    models = build_object_library(config)
    by_category: dict[str, list[ObjectModel]] = {}
    for m in models:
        by_category.setdefault(m.category, []).append(m)
        write_object_points(out / "objects" / f"{m.name}.bin", m.points)

    total = config.train_clips + config.test_clips
    records = []
    token_counts = []
    for i in range(total):
        rng = np.random.default_rng(np.random.SeedSequence((config.seed, i)))
        kind = SCENARIO_KINDS[i % len(SCENARIO_KINDS)]
        cats = _KIND_CATEGORIES[kind]
        model = rng.choice(by_category[cats[int(rng.integers(len(cats)))]])
        spec = ScenarioSpec(
            kind=kind,
            object_model=model,
            fps=config.fps,
            speed=float(rng.uniform(0.6, 1.3)),
            phase_frames=default_phase_frames(kind, rng, config.fps),
            side="right" if rng.uniform() < 0.5 else "left",
            object_yaw=float(rng.uniform(-0.5, 0.5)),
            seed=int(rng.integers(2**31)),
        )
        clip, phases = generate_clip(spec, skeleton)
        clip_id = f"clip_{i:05d}"
        fname = f"clips/{clip_id}.bin"
        write_clip_tensor(out / fname, clip_to_flat(clip))
        split = "train" if i < config.train_clips else "test"
        records.append(ClipRecord(id=clip_id, file=fname, object_id=model.name,
                                  split=split, texts=clip.texts, phases=phases))
        token_counts.extend(len(tokenize(t)) for t in clip.texts)

    avg_tokens = float(np.mean(token_counts))
    index = {
        "fps": config.fps,
        "joint_count": skeleton.joint_count,
        "frame_width": frame_width(skeleton.joint_count),
        "avg_text_tokens": avg_tokens,
        "splits": {
            "train": [r.id for r in records if r.split == "train"],
            "test": [r.id for r in records if r.split == "test"],
        },
        "clips": [
            {
                "id": r.id, "file": r.file, "object_id": r.object_id,
                "split": r.split, "texts": r.texts,
                "phases": [
                    {"name": p.name, "object_mode": p.object_mode,
                     "start": p.start, "end": p.end} for p in r.phases
                ],
            }
            for r in records
        ],
        "objects": [
            {"id": m.name, "category": m.category, "file": f"objects/{m.name}.bin"}
            for m in models
        ],
        "config": {
            "train_clips": config.train_clips, "test_clips": config.test_clips,
            "fps": config.fps, "objects_per_category": config.objects_per_category,
            "object_samples": config.object_samples, "seed": config.seed,
        },
    }
    with open(out / "index.json", "w", encoding="utf-8") as f:
        json.dump(index, f, indent=1, sort_keys=True)
    return load_dataset(out)


def load_dataset(path) -> DatasetIndex:
    """Read a dataset directory; also the import adapter for externally
    produced data in the same schema."""
    root = Path(path)
    with open(root / "index.json", encoding="utf-8") as f:
        index = json.load(f)
    clips = [
        ClipRecord(
            id=c["id"], file=c["file"], object_id=c["object_id"], split=c["split"],
            texts=list(c["texts"]),
            phases=[Phase(p["name"], p["object_mode"], p["start"], p["end"])
                    for p in c.get("phases", [])],
        )
        for c in index["clips"]
    ]
    objects = {o["id"]: o["file"] for o in index["objects"]}
    categories = {o["id"]: o["category"] for o in index["objects"]}

    train = set(index["splits"]["train"])
    test = set(index["splits"]["test"])
    if train & test:
        raise ValueError(f"train/test splits overlap: {sorted(train & test)[:3]}")
    missing = {c.object_id for c in clips} - set(objects)
    if missing:
        raise ValueError(f"clips reference unknown objects: {sorted(missing)}")

    return DatasetIndex(
        root=root, fps=index["fps"], joint_count=index["joint_count"],
        clips=clips, objects=objects, object_categories=categories,
        avg_text_tokens=index.get("avg_text_tokens", float("nan")),
    )
