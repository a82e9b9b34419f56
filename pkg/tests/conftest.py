import numpy as np
import pytest

from graspfield.geometry import build_sdf, make_primitive
from graspfield.kinematics import load_gripper


@pytest.fixture(scope="session")
def sphere_mesh():
    return make_primitive("sphere", radius=0.05)


@pytest.fixture(scope="session")
def box_mesh():
    return make_primitive("box", wx=0.04, wy=0.06, wz=0.10)


@pytest.fixture(scope="session")
def sphere_sdf(sphere_mesh):
    return build_sdf(sphere_mesh, 32)


@pytest.fixture(scope="session")
def box_sdf(box_mesh):
    return build_sdf(box_mesh, 32)


@pytest.fixture(scope="session")
def wide24():
    return load_gripper("wide24")


@pytest.fixture(scope="session")
def simple9():
    return load_gripper("simple9")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


TINY_SPECS = {
    "s0_sphere": ("sphere", dict(radius=0.04)),
    "s1_box": ("box", dict(wx=0.05, wy=0.04, wz=0.07)),
    "s2_cylinder": ("cylinder", dict(radius=0.025, height=0.08)),
}


@pytest.fixture(scope="session")
def tiny_meshes():
    return {oid: make_primitive(kind, **p) for oid, (kind, p) in TINY_SPECS.items()}


@pytest.fixture(scope="session")
def tiny_dataset_dir(tiny_meshes, tmp_path_factory):
    """Three objects, K=3, short annealing; saved to disk and reloaded."""
    from graspfield.dataset import DatasetConfig, build_dataset
    from graspfield.planner import AnnealConfig

    cfg = DatasetConfig(gripper="wide24", k=3, grid_resolution=16, sdf_resolution=32,
                        anneal=AnnealConfig(iterations=300))
    ds = build_dataset(tiny_meshes, cfg, seed=7)
    root = tmp_path_factory.mktemp("tiny_ds")
    ds.save(root)
    return root


@pytest.fixture(scope="session")
def tiny_dataset(tiny_dataset_dir):
    from graspfield.dataset import GraspDataset

    return GraspDataset.load(tiny_dataset_dir)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
