import json

import numpy as np
import pytest

from graspfield.geometry import RigidTransform
from graspfield.geometry.transforms import quat_mul, quat_to_matrix
from graspfield.kinematics import (
    GraspPose,
    GripperFormatError,
    fk_jacobian,
    forward_kinematics,
    gripper_from_dict,
    load_gripper,
)

IDENT = {"t": [0, 0, 0], "q": [1, 0, 0, 0]}


def two_link():
    return gripper_from_dict(
        {
            "links": [
                {"name": "base", "parent": None, "offset": IDENT},
                {"name": "l1", "parent": "base", "offset": IDENT},
                {"name": "l2", "parent": "l1", "offset": {"t": [1, 0, 0], "q": [1, 0, 0, 0]}},
            ],
            "joints": [
                {"link": "l1", "axis": [0, 0, 1], "limits": [-3, 3]},
                {"link": "l2", "axis": [0, 0, 1], "limits": [-3, 3]},
            ],
            "contacts": [{"link": "l2", "offset": [1, 0, 0]}, {"link": "l1", "offset": [0.5, 0, 0]}],
        },
        name="planar",
    )


def random_pose(model, rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    lo, hi = model.limits.T
    return np.concatenate([rng.normal(scale=0.05, size=3), q, rng.uniform(lo, hi)])


def test_builtin_grippers(wide24, simple9):
    assert (wide24.n_joints, wide24.n_contacts) == (24, 45)
    assert simple9.n_joints == 9
    assert simple9.n_contacts == 12


def test_rest_configuration(wide24):
    x = np.zeros(wide24.pose_dim)
    x[3] = 1.0
    assert np.array_equal(forward_kinematics(wide24, x), wide24.rest_points)


def test_wrist_translation_shifts_points(wide24, rng):
    x = random_pose(wide24, rng)
    y = x.copy()
    y[0] += 1.0
    d = forward_kinematics(wide24, y) - forward_kinematics(wide24, x)
    assert np.allclose(d, [1.0, 0.0, 0.0], atol=1e-12)


def test_two_link_analytic():
    m = two_link()
    x = np.array([0, 0, 0, 1, 0, 0, 0, np.pi / 2, np.pi / 2])
    pts = forward_kinematics(m, x)
    assert np.allclose(pts[0], [-1.0, 1.0, 0.0], atol=1e-12)
    assert np.allclose(pts[1], [0.0, 0.5, 0.0], atol=1e-12)
    x[7:] = [np.pi / 2, 0.0]
    assert np.allclose(forward_kinematics(m, x)[0], [0.0, 2.0, 0.0], atol=1e-12)


def test_rigid_motion_equivariance(wide24, rng):
    for _ in range(10):
        x = random_pose(wide24, rng)
        g = RigidTransform(rng.normal(size=3), rng.normal(size=4) / 2)
        g = RigidTransform(g.translation, g.rotation / np.linalg.norm(g.rotation))
        y = x.copy()
        y[:3] = g.apply(x[:3][None])[0]
        y[3:7] = quat_mul(g.rotation, x[3:7])
        want = g.apply(forward_kinematics(wide24, x))
        assert np.allclose(forward_kinematics(wide24, y), want, atol=1e-9)


def test_quaternion_double_cover(wide24, rng):
    x = random_pose(wide24, rng)
    y = x.copy()
    y[3:7] *= -1
    assert np.array_equal(forward_kinematics(wide24, x), forward_kinematics(wide24, y))


def _fd_jacobian(model, x, h=1e-6):
    out = np.zeros((model.n_contacts, 3, len(x)))
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        out[..., k] = (forward_kinematics(model, x + e) - forward_kinematics(model, x - e)) / (2 * h)
    return out


@pytest.mark.parametrize("name", ["wide24", "simple9"])
def test_jacobian_matches_fd(name, rng):
    model = load_gripper(name)
    for _ in range(5):
        x = random_pose(model, rng)
        # stay clear of the joint limits, where clamping would kink the FD stencil
        lo, hi = model.limits.T
        x[7:] = np.clip(x[7:], lo + 1e-3, hi - 1e-3)
        x[3:7] *= 1.3  # raw, unnormalized quaternion
        ana = fk_jacobian(model, x)
        fd = _fd_jacobian(model, x)
        assert np.abs(ana - fd).max() / np.abs(fd).max() <= 1e-5


def test_jacobian_directional(wide24, rng):
    for _ in range(100):
        x = random_pose(wide24, rng)
        v = rng.normal(size=x.size)
        h = 1e-6
        lo, hi = wide24.limits.T
        x[7:] = np.clip(x[7:], lo + 1e-3, hi - 1e-3)
        fd = (forward_kinematics(wide24, x + h * v) - forward_kinematics(wide24, x - h * v)) / (2 * h)
        jv = fk_jacobian(wide24, x) @ v
        assert np.linalg.norm(jv - fd) / np.linalg.norm(fd) <= 1e-5


def test_jacobian_structure(wide24, rng):
    x = random_pose(wide24, rng)
    jac = fk_jacobian(wide24, x)
    assert np.array_equal(jac[:, :, :3], np.broadcast_to(np.eye(3), (wide24.n_contacts, 3, 3)))
    # joints that do not move a point's link contribute nothing
    dead = ~wide24.contact_joint_mask
    assert np.all(jac[:, :, 7:].transpose(0, 2, 1)[dead] == 0.0)
    assert dead.any()


def test_batch_matches_single(wide24, rng):
    xs = np.array([random_pose(wide24, rng) for _ in range(4)])
    batch = forward_kinematics(wide24, xs)
    for i, x in enumerate(xs):
        assert np.allclose(batch[i], forward_kinematics(wide24, x), atol=1e-14)


def test_grasp_pose_round_trip_and_clamp(wide24, rng):
    x = random_pose(wide24, rng)
    x[3:7] = np.abs(x[3:7])  # canonical w >= 0
    x[3:7] /= np.linalg.norm(x[3:7])
    pose = GraspPose.from_vector(x, wide24)
    assert not pose.clamped
    assert np.allclose(pose.to_vector(), x, atol=1e-15)
    x[7] = 50.0
    clamped = GraspPose.from_vector(x, wide24)
    assert clamped.clamped
    assert clamped.joints[0] == wide24.limits[0, 1]


def test_wrong_pose_length(wide24):
    with pytest.raises(ValueError, match="expected 31"):
        GraspPose.from_vector(np.zeros(10), wide24)


def _doc():
    return json.loads(json.dumps(two_link().source))


def test_cycle_rejected():
    d = _doc()
    d["links"].append({"name": "a", "parent": "b", "offset": IDENT})
    d["links"].append({"name": "b", "parent": "a", "offset": IDENT})
    with pytest.raises(GripperFormatError, match="kinematic cycle at link"):
        gripper_from_dict(d)


def test_non_unit_axis_rejected():
    d = _doc()
    d["joints"][0]["axis"] = [0, 0, 2]
    with pytest.raises(GripperFormatError, match="axis is not unit length"):
        gripper_from_dict(d)


def test_bad_limits_and_unknown_parent():
    d = _doc()
    d["joints"][1]["limits"] = [1, 0]
    with pytest.raises(GripperFormatError, match="lo < hi"):
        gripper_from_dict(d)
    d = _doc()
    d["links"][2]["parent"] = "ghost"
    with pytest.raises(GripperFormatError, match="unknown parent"):
        gripper_from_dict(d)
    d = _doc()
    d["contacts"] = []
    with pytest.raises(GripperFormatError, match="at least one contact"):
        gripper_from_dict(d)


def test_load_from_file(tmp_path):
    p = tmp_path / "g.json"
    p.write_text(json.dumps(_doc()))
    m = load_gripper(p)
    assert m.name == "g" and m.n_joints == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(GripperFormatError, match="invalid JSON"):
        load_gripper(bad)
    with pytest.raises(FileNotFoundError):
        load_gripper(tmp_path / "missing.json")


def test_rotation_matrix_of_wrist(wide24, rng):
    x = random_pose(wide24, rng)
    pose = GraspPose.from_vector(x, wide24)
    r = quat_to_matrix(pose.wrist.rotation)
    assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
