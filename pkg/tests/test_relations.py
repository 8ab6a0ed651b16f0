import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hoidiff.core import (
    HOIClip,
    HumanMotion,
    ObjectModel,
    ObjectMotion,
    Skeleton,
    fk,
    matrix_to_axis_angle,
    axis_angle_to_matrix,
    rotation_about_y,
)
from hoidiff.relations import (
    CAPSULE_RADIUS,
    capsule_sample_table,
    compute_distance_field,
    compute_relations,
    human_surface_points,
    nearest_offsets,
    object_sample_indices,
)


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def relations_double_loop(q, j, r, o):
    """Scalar double-loop evaluation of the joint-wise subtraction."""
    N, J = q.shape[:2]
    gamma = np.zeros((N, J, 3))
    tau = np.zeros((N, J, 3))
    for n in range(N):
        for k in range(J):
            for c in range(3):
                gamma[n, k, c] = q[n, k, c] - r[n, c]
                tau[n, k, c] = j[n, k, c] - o[n, c]
    return gamma, tau


def exhaustive_nearest(sources, targets):
    """O(S*T) search, one pair at a time."""
    out = np.zeros_like(sources)
    for s in range(sources.shape[0]):
        best, best_d = None, np.inf
        for t in range(targets.shape[0]):
            d = float(np.linalg.norm(targets[t] - sources[s]))
            if d < best_d:
                best, best_d = targets[t], d
        out[s] = best - sources[s]
    return out


def small_skeleton(rng, joints):
    parents = [-1] + [rng.integers(0, k) for k in range(1, joints)]
    offsets = rng.uniform(-0.4, 0.4, size=(joints, 3))
    offsets[0] = 0
    for k in range(1, joints):
        while np.linalg.norm(offsets[k]) < 1e-2:
            offsets[k] = rng.uniform(-0.4, 0.4, size=3)
    return Skeleton(parents=np.array(parents), offsets=offsets)


def random_scene(rng, joints=4, frames=3, v=16):
    sk = small_skeleton(rng, joints)
    q = rng.uniform(-1, 1, size=(frames, joints, 3))
    j = fk(sk, q, rng.uniform(-1, 1, size=(frames, 3)))
    r = rng.uniform(-1, 1, size=(frames, 3))
    o = rng.uniform(-1, 1, size=(frames, 3))
    clip = HOIClip(human=HumanMotion(q=q, j=j), object=ObjectMotion(r=r, o=o),
                   object_id="x", fps=30, texts=["t"])
    pts = rng.normal(size=(v, 3)) * 0.3
    model = ObjectModel(points=pts - pts.mean(0), category="box", name="b")
    return sk, clip, model


# ---------------------------------------------------------------------------
# compute_relations
# ---------------------------------------------------------------------------

def test_tau_zero_when_object_at_every_joint():
    rng = np.random.default_rng(0)
    q = rng.normal(size=(4, 1, 3))
    j = rng.normal(size=(4, 1, 3))
    rel = compute_relations(HumanMotion(q=q, j=j),
                            ObjectMotion(r=np.zeros((4, 3)), o=j[:, 0]))
    np.testing.assert_array_equal(rel.tau, 0)


def test_gamma_zero_when_object_rotation_tracks_joint():
    rng = np.random.default_rng(1)
    q = rng.normal(size=(5, 3, 3))
    j = rng.normal(size=(5, 3, 3))
    rel = compute_relations(HumanMotion(q=q, j=j),
                            ObjectMotion(r=q[:, 1, :], o=np.zeros((5, 3))))
    np.testing.assert_array_equal(rel.gamma[:, 1, :], 0)


def test_relations_match_double_loop_oracle():
    rng = np.random.default_rng(2)
    for _ in range(20):
        q = rng.normal(size=(3, 5, 3))
        j = rng.normal(size=(3, 5, 3))
        r = rng.normal(size=(3, 3))
        o = rng.normal(size=(3, 3))
        rel = compute_relations(HumanMotion(q=q, j=j), ObjectMotion(r=r, o=o))
        g, t = relations_double_loop(q, j, r, o)
        assert np.max(np.abs(rel.gamma - g)) < 1e-12
        assert np.max(np.abs(rel.tau - t)) < 1e-12


def test_relations_frame_mismatch_raises():
    with pytest.raises(ValueError):
        compute_relations(HumanMotion(q=np.zeros((3, 2, 3)), j=np.zeros((3, 2, 3))),
                          ObjectMotion(r=np.zeros((4, 3)), o=np.zeros((4, 3))))


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_relations_exactly_linear(seed):
    rng = np.random.default_rng(seed)
    shape_h = (3, 4, 3)
    q, dq = rng.normal(size=shape_h), rng.normal(size=shape_h)
    j, dj = rng.normal(size=shape_h), rng.normal(size=shape_h)
    r, dr = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    o, do = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))

    base = compute_relations(HumanMotion(q=q, j=j), ObjectMotion(r=r, o=o))
    delta = compute_relations(HumanMotion(q=dq, j=dj), ObjectMotion(r=dr, o=do))
    summed = compute_relations(HumanMotion(q=q + dq, j=j + dj),
                               ObjectMotion(r=r + dr, o=o + do))
    np.testing.assert_allclose(summed.gamma, base.gamma + delta.gamma, atol=1e-12)
    np.testing.assert_allclose(summed.tau, base.tau + delta.tau, atol=1e-12)


def test_tau_rotates_with_scene_translation_leaves_gamma():
    rng = np.random.default_rng(3)
    sk, clip, model = random_scene(rng)
    rel = compute_relations(clip.human, clip.object)

    t = np.array([2.0, 0.0, -1.0])
    moved = compute_relations(
        HumanMotion(q=clip.human.q, j=clip.human.j + t),
        ObjectMotion(r=clip.object.r, o=clip.object.o + t))
    np.testing.assert_allclose(moved.tau, rel.tau, atol=1e-12)

    R = rotation_about_y(0.7)
    q2 = clip.human.q.copy()
    q2[:, 0] = matrix_to_axis_angle(R @ axis_angle_to_matrix(clip.human.q[:, 0]))
    rot = compute_relations(
        HumanMotion(q=q2, j=clip.human.j @ R.T),
        ObjectMotion(r=matrix_to_axis_angle(R @ axis_angle_to_matrix(clip.object.r)),
                     o=clip.object.o @ R.T))
    np.testing.assert_allclose(rot.tau, rel.tau @ R.T, atol=1e-12)


def test_geodesic_flag_changes_gamma_only():
    rng = np.random.default_rng(4)
    q = rng.uniform(-1, 1, size=(2, 3, 3))
    j = rng.normal(size=(2, 3, 3))
    r = rng.uniform(-1, 1, size=(2, 3))
    o = rng.normal(size=(2, 3))
    lit = compute_relations(HumanMotion(q=q, j=j), ObjectMotion(r=r, o=o))
    geo = compute_relations(HumanMotion(q=q, j=j), ObjectMotion(r=r, o=o), geodesic=True)
    np.testing.assert_array_equal(lit.tau, geo.tau)
    assert np.max(np.abs(lit.gamma - geo.gamma)) > 1e-3
    # geodesic gamma really is log(Rq Rr^T)
    Rq = axis_angle_to_matrix(q[0, 0])
    Rr = axis_angle_to_matrix(r[0])
    np.testing.assert_allclose(geo.gamma[0, 0], matrix_to_axis_angle(Rq @ Rr.T), atol=1e-10)


# ---------------------------------------------------------------------------
# distance fields
# ---------------------------------------------------------------------------

def test_capsule_samples_sit_on_capsule_surface():
    rng = np.random.default_rng(5)
    sk, clip, _ = random_scene(rng, joints=4, frames=2)
    table = capsule_sample_table(sk, 12)
    pts = human_surface_points(sk, clip.human.q, clip.human.j, table)
    for m in range(12):
        child = int(table[m, 0])
        parent = sk.parents[child]
        a, b = clip.human.j[0, parent], clip.human.j[0, child]
        seg = b - a
        axis_pt = a + table[m, 1] * seg
        d = np.linalg.norm(pts[0, m] - axis_pt)
        np.testing.assert_allclose(d, CAPSULE_RADIUS, atol=1e-12)
        # radial component perpendicular to the bone (pose is FK-consistent)
        assert abs((pts[0, m] - axis_pt) @ (seg / np.linalg.norm(seg))) < 1e-12


def test_distance_field_separation_bound():
    rng = np.random.default_rng(6)
    sk, clip, model = random_scene(rng)
    far = HOIClip(human=clip.human,
                  object=ObjectMotion(r=clip.object.r, o=clip.object.o + np.array([1e3, 0, 0])),
                  object_id="x", fps=30, texts=["t"])
    field = compute_distance_field(far, model, sk, count=8)
    assert np.linalg.norm(field.d_h2o, axis=-1).min() > 1e3 - 20.0
    assert np.linalg.norm(field.d_o2h, axis=-1).min() > 1e3 - 20.0


def test_distance_field_zero_at_coincidence():
    # one object point placed exactly on a human capsule sample
    sk = Skeleton(parents=np.array([-1, 0]), offsets=np.array([[0.0, 0, 0], [0, 0.5, 0]]))
    q = np.zeros((1, 2, 3))
    j = fk(sk, q, np.zeros((1, 3)))
    table = capsule_sample_table(sk, 4)
    h = human_surface_points(sk, q, j, table)
    pts = np.concatenate([h[0, :1] , np.ones((3, 3))])  # first object point == sample 0
    model = ObjectModel(points=pts - 0, category="box", name="b")  # no recentering: pose is identity
    clip = HOIClip(human=HumanMotion(q=q, j=j),
                   object=ObjectMotion(r=np.zeros((1, 3)), o=np.zeros((1, 3))),
                   object_id="b", fps=30, texts=["t"])
    field = compute_distance_field(clip, model, sk, count=4)
    assert np.linalg.norm(field.d_h2o[0, 0]) < 1e-12


def test_distance_field_matches_exhaustive_oracle():
    rng = np.random.default_rng(7)
    sk, clip, model = random_scene(rng, joints=5, frames=2, v=64)
    count = 16
    field = compute_distance_field(clip, model, sk, count=count, seed=3)

    table = capsule_sample_table(sk, count, seed=3)
    h = human_surface_points(sk, clip.human.q, clip.human.j, table)
    idx = object_sample_indices(model.sample_count, count, seed=3)
    for n in range(clip.frame_count):
        R = axis_angle_to_matrix(clip.object.r[n])
        p_all = model.points @ R.T + clip.object.o[n]
        assert np.max(np.abs(field.d_h2o[n] - exhaustive_nearest(h[n], p_all))) < 1e-9
        assert np.max(np.abs(field.d_o2h[n] - exhaustive_nearest(p_all[idx], h[n]))) < 1e-9


def test_distance_field_antisymmetric_on_coincident_sets():
    # when both sides use the same point set, offsets are index-matched negatives
    rng = np.random.default_rng(8)
    a = rng.normal(size=(6, 3))
    b = a.copy()
    np.testing.assert_allclose(nearest_offsets(a, b), -nearest_offsets(b, a), atol=1e-15)
    np.testing.assert_array_equal(nearest_offsets(a, b), 0)


def test_distance_field_rejects_oversized_count():
    rng = np.random.default_rng(9)
    sk, clip, model = random_scene(rng, v=8)
    with pytest.raises(ValueError):
        compute_distance_field(clip, model, sk, count=9)


def test_field_covariance_under_heading_rotation():
    rng = np.random.default_rng(10)
    sk, clip, model = random_scene(rng)
    R = rotation_about_y(1.1)
    q2 = clip.human.q.copy()
    q2[:, 0] = matrix_to_axis_angle(R @ axis_angle_to_matrix(clip.human.q[:, 0]))
    moved = HOIClip(
        human=HumanMotion(q=q2, j=clip.human.j @ R.T),
        object=ObjectMotion(r=matrix_to_axis_angle(R @ axis_angle_to_matrix(clip.object.r)),
                            o=clip.object.o @ R.T),
        object_id="x", fps=30, texts=["t"])
    f0 = compute_distance_field(clip, model, sk, count=8)
    f1 = compute_distance_field(moved, model, sk, count=8)
    np.testing.assert_allclose(f1.d_h2o, f0.d_h2o @ R.T, atol=1e-9)
    np.testing.assert_allclose(f1.d_o2h, f0.d_o2h @ R.T, atol=1e-9)
