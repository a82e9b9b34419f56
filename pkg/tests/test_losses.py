import numpy as np
import pytest

from graspfield.geometry import RigidTransform
from graspfield.geometry.sdf import SignedDistanceField
from graspfield.losses import (
    canonicalize,
    collision_loss,
    combined_loss,
    consistency_loss,
    contact_sdf,
    contact_values_many,
    evaluate_loss,
    l2_loss,
    penetration_stats,
)
from oracles import central_diff, colliding_poses, rel_error


def rand_pose(rng, d=31, n=None):
    shape = (d,) if n is None else (n, d)
    x = rng.normal(size=shape)
    return x


# ---------------------------------------------------------------- l2


def test_l2_zero_at_target(rng):
    x = rand_pose(rng)
    r = l2_loss(x, x)
    assert r.value == 0.0 and not np.any(r.d_prediction)


def test_l2_unit_offset():
    x = np.zeros(10)
    x[3] = 1.0
    y = x.copy()
    y[8] = 1.0
    r = l2_loss(y, x)
    assert r.value == 1.0
    assert r.d_prediction[8] == 2.0 and np.count_nonzero(r.d_prediction) == 1


def test_l2_quaternion_sign_canonicalized(rng):
    x = rand_pose(rng)
    x[3] = 0.7
    y = x.copy()
    y[3:7] *= -1
    assert l2_loss(y, x).value == 0.0


def test_l2_gradient_fd(rng):
    for _ in range(10):
        p, t = rand_pose(rng, n=4), rand_pose(rng, n=4)
        p[:, 3] = np.abs(p[:, 3]) + 0.1
        g = l2_loss(p, t).d_prediction
        fd = central_diff(lambda z: l2_loss(z, t).value, p, 1e-5)
        assert rel_error(g, fd) <= 1e-8


def test_l2_shape_mismatch():
    with pytest.raises(ValueError):
        l2_loss(np.zeros((2, 9)), np.zeros((3, 9)))


# ---------------------------------------------------------------- consistency


def test_consistency_k1_equals_l2(rng):
    p, t = rand_pose(rng, n=5), rand_pose(rng, n=5)
    a, b = consistency_loss(p, t[:, None]), l2_loss(p, t)
    assert a.value == b.value
    assert np.array_equal(a.d_prediction, b.d_prediction)


def test_consistency_exact_candidate_selected(rng):
    c = rand_pose(rng, n=5)
    c[:, 3] = np.abs(c[:, 3])
    r = consistency_loss(c[3], c)
    assert r.value == 0.0 and r.selected_j == 3


def test_consistency_ties_lowest_index(rng):
    c = rand_pose(rng, n=1)
    c = np.repeat(c, 4, axis=0)
    r = consistency_loss(rand_pose(rng), c)
    assert r.selected_j == 0


def test_consistency_brute_force_min(rng):
    for _ in range(200):
        p = rand_pose(rng)
        c = rand_pose(rng, n=8)
        r = consistency_loss(p, c)
        each = [l2_loss(p, c[j]).value for j in range(8)]
        assert r.value == min(each)
        assert r.selected_j == int(np.argmin(each))


def test_consistency_gradient_fd(rng):
    for _ in range(10):
        p = rand_pose(rng, n=3)
        c = rand_pose(rng, d=31, n=3 * 6).reshape(3, 6, 31)
        p[:, 3] = np.abs(p[:, 3]) + 0.1
        g = consistency_loss(p, c).d_prediction
        fd = central_diff(lambda z: consistency_loss(z, c).value, p, 1e-6)
        assert rel_error(g, fd) <= 1e-6


def test_consistency_argmin_invariant_under_common_isometry(rng):
    p = rand_pose(rng)
    c = rand_pose(rng, n=6)
    shift = rng.normal(size=3)
    p2, c2 = p.copy(), c.copy()
    p2[:3] += shift
    c2[:, :3] += shift
    assert consistency_loss(p, c).selected_j == consistency_loss(p2, c2).selected_j


# ---------------------------------------------------------------- collision


@pytest.fixture(scope="module")
def colliding(tiny_dataset, wide24):
    return colliding_poses(tiny_dataset, wide24, 8, np.random.default_rng(3))


def test_collision_zero_when_outside(tiny_dataset, wide24):
    e = tiny_dataset[0]
    sdf = tiny_dataset.sdf(e.object_id)
    x = e.poses[0].copy()
    x[:3] = [5.0, 5.0, 5.0]
    r = collision_loss(x, wide24, sdf, e.t_r)
    assert r.value == 0.0 and not np.any(r.d_prediction)


def slab():
    """Three contacts on one finger and a field equal to z - 0.5 in the cube (scale_s = 2)."""
    from graspfield.kinematics import gripper_from_dict

    ident = {"t": [0, 0, 0], "q": [1, 0, 0, 0]}
    model = gripper_from_dict({
        "links": [{"name": "b", "parent": None, "offset": ident}, {"name": "f", "parent": "b", "offset": ident}],
        "joints": [{"link": "f", "axis": [0, 0, 1], "limits": [-1, 1]}],
        "contacts": [{"link": "f", "offset": [0, 0, -0.1]}, {"link": "f", "offset": [0, 0, 0.1]},
                     {"link": "f", "offset": [0, 0, 0.2]}],
    })
    res = 11
    t_sdf = np.eye(4)
    t_sdf[:3, :3] *= 2.0
    t_sdf[:3, 3] = 0.5
    g = np.arange(res) / (res - 1)
    vals = np.broadcast_to(g[None, None, :] - 0.5, (res,) * 3).copy()
    return model, SignedDistanceField(res, vals, t_sdf)


def test_collision_single_point_depth():
    model, sdf = slab()
    # cube z of the points: 0.3, 0.7, 0.9 -> only the first is inside, depth 0.2
    x = np.array([0, 0, 0, 1, 0, 0, 0, 0.0])
    r = collision_loss(x, model, sdf, RigidTransform.identity())
    assert r.value == pytest.approx(0.04, rel=1e-12)
    assert np.all(r.sdf_values[1:] > 0)


def test_collision_gradient_fd(colliding, wide24):
    assert len(colliding) == 8
    for x, sdf, t_r in colliding:
        g = collision_loss(x, wide24, sdf, t_r).d_prediction
        fd = central_diff(lambda z: collision_loss(z, wide24, sdf, t_r).value, x, 1e-7)
        assert rel_error(g, fd) <= 1e-4


def test_collision_zero_iff_no_penetration(colliding, wide24):
    for x, sdf, t_r in colliding:
        assert collision_loss(x, wide24, sdf, t_r).value > 0
        assert penetration_stats(x, wide24, sdf, t_r)[0] > 0


# ---------------------------------------------------------------- combined


def test_combined_endpoints(colliding, wide24, rng):
    x, sdf, t_r = colliding[0]
    c = rng.normal(size=(4, wide24.pose_dim))
    cons = consistency_loss(x, c)
    coll = collision_loss(x, wide24, sdf, t_r)
    one = combined_loss(x, c, wide24, sdf, t_r, 1.0)
    zero = combined_loss(x, c, wide24, sdf, t_r, 0.0)
    assert one.value == cons.value and np.array_equal(one.d_prediction, cons.d_prediction)
    assert zero.value == coll.value and np.array_equal(zero.d_prediction, coll.d_prediction)
    mid = combined_loss(x, c, wide24, sdf, t_r, 0.75)
    assert mid.value == pytest.approx(0.75 * cons.value + 0.25 * coll.value, rel=1e-15)


def test_combined_linear_in_beta(colliding, wide24, rng):
    x, sdf, t_r = colliding[1]
    c = rng.normal(size=(4, wide24.pose_dim))
    for b in (0.1, 0.3, 0.75):
        s = combined_loss(x, c, wide24, sdf, t_r, b).value + combined_loss(x, c, wide24, sdf, t_r, 1 - b).value
        want = consistency_loss(x, c).value + collision_loss(x, wide24, sdf, t_r).value
        assert s == pytest.approx(want, rel=1e-14)


def test_combined_gradient_fd(colliding, wide24, rng):
    for x, sdf, t_r in colliding[:4]:
        c = x + rng.normal(scale=0.3, size=(5, wide24.pose_dim))
        g = combined_loss(x, c, wide24, sdf, t_r, 0.75).d_prediction
        fd = central_diff(lambda z: combined_loss(z, c, wide24, sdf, t_r, 0.75).value, x, 1e-7)
        assert rel_error(g, fd) <= 1e-4


def test_combined_beta_range(colliding, wide24):
    x, sdf, t_r = colliding[0]
    with pytest.raises(ValueError):
        combined_loss(x, x[None], wide24, sdf, t_r, 1.5)


# ---------------------------------------------------------------- penetration stats


def test_penetration_stats_clean(tiny_dataset, wide24):
    e = tiny_dataset[0]
    x = e.poses[0].copy()
    x[:3] = 9.0
    assert penetration_stats(x, wide24, tiny_dataset.sdf(e.object_id), e.t_r) == (0, 0.0, 0.0)


def test_penetration_two_points_constructed():
    model, sdf = slab()
    x = np.array([0, 0, 0, 1, 0, 0, 0, 0.0])
    assert penetration_stats(x, model, sdf, RigidTransform.identity())[0] == 1
    # shift down 0.3 cube units: z = 0.0, 0.4, 0.6 -> depths 0.5 and 0.1
    x[2] = -0.3
    x[7] = 0.5  # a joint about z leaves the z coordinates alone
    count, mx, mean = penetration_stats(x, model, sdf, RigidTransform.identity())
    assert count == 2
    assert mx == pytest.approx(0.5 / 2.0)
    assert mean == pytest.approx(0.3 / 2.0)


def test_outside_cube_never_collides(wide24, box_sdf):
    x = np.zeros(wide24.pose_dim)
    x[3] = 1.0
    x[:3] = [0.0, 0.0, 3.0]
    assert penetration_stats(x, wide24, box_sdf, RigidTransform.identity()) == (0, 0.0, 0.0)


def test_contact_values_many_matches_single(colliding, wide24):
    xs = np.array([c[0] for c in colliding])
    sdfs = [c[1] for c in colliding]
    trs = [c[2] for c in colliding]
    many = contact_values_many(xs, wide24, sdfs, trs)
    for i, (x, s, t) in enumerate(colliding):
        assert np.allclose(many[i], contact_sdf(x, wide24, s, t, jacobian=False)[0], atol=1e-13)


def test_evaluate_loss_dispatch(rng):
    p = rand_pose(rng, n=2)
    c = rand_pose(rng, n=2 * 3).reshape(2, 3, 31)
    assert evaluate_loss("l2", p, c).value == l2_loss(p, c[:, 0]).value
    assert evaluate_loss("consistency", p, c).value == consistency_loss(p, c).value
    with pytest.raises(ValueError):
        evaluate_loss("huber", p, c)


def test_canonicalize_idempotent(rng):
    x = rand_pose(rng, n=6)
    assert np.array_equal(canonicalize(canonicalize(x)), canonicalize(x))
    assert np.all(canonicalize(x)[:, 3] >= 0)
