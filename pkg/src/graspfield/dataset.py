"""Grasp datasets: planning per object, 27-rotation augmentation, splits and persistence.

On disk a dataset is a directory holding ``dataset.jsonl`` (one entry per
line, occupancy grids run-length encoded), ``sdf/<object_id>.gsdf`` and
``manifest.json``.
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry.mesh import TriMesh
from .geometry.sdf import SignedDistanceField, build_sdf
from .geometry.transforms import RigidTransform, augmentation_rotations, quat_canonical, quat_mul
from .geometry.voxel import OccupancyGrid, voxelize
from .kinematics import GripperModel, load_gripper
from .planner import AnnealConfig, plan_k_grasps
from .seeding import derive_seed

FORMAT = "graspfield-dataset-1"
SPLIT_TAGS = ("train", "test")


class DatasetError(RuntimeError):
    """Dataset construction or loading failed for a named object."""


@dataclass(frozen=True)
class DatasetConfig:
    gripper: str = "wide24"
    k: int = 8
    grid_resolution: int = 16
    sdf_resolution: int = 32
    split_fraction: float = 0.8
    anneal: AnnealConfig = field(default_factory=AnnealConfig)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie in (0, 1)")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        anneal = AnnealConfig(**d.pop("anneal", {}))
        return cls(anneal=anneal, **d)


@dataclass
class DatasetEntry:
    object_id: str
    rotation_index: int
    t_r: RigidTransform
    grid: OccupancyGrid
    sdf_path: str
    poses: np.ndarray   # (K, 7+J), translations in cube units
    costs: np.ndarray   # (K,), ascending
    split: str = "train"

    def to_json(self):
        return {
            "object_id": self.object_id,
            "rotation_index": int(self.rotation_index),
            "t_r": self.t_r.to_dict(),
            "grid": {
                "resolution": int(self.grid.resolution),
                "rle": self.grid.to_rle(),
                "object_to_grid": self.grid.object_to_grid.ravel().tolist(),
            },
            "sdf_path": self.sdf_path,
            "poses": np.asarray(self.poses).tolist(),
            "costs": np.asarray(self.costs).tolist(),
            "split": self.split,
        }

    @classmethod
    def from_json(cls, d):
        g = d["grid"]
        grid = OccupancyGrid.from_rle(g["resolution"], g["rle"], np.reshape(g["object_to_grid"], (4, 4)))
        return cls(
            d["object_id"],
            int(d["rotation_index"]),
            RigidTransform.from_dict(d["t_r"]),
            grid,
            d["sdf_path"],
            np.asarray(d["poses"], dtype=float),
            np.asarray(d["costs"], dtype=float),
            d.get("split", "train"),
        )


@dataclass
class GraspDataset:
    entries: list
    gripper: str = ""
    root: Optional[Path] = None
    sdfs: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    @property
    def k(self):
        return int(self.entries[0].poses.shape[0]) if self.entries else 0

    @property
    def object_ids(self):
        return list(dict.fromkeys(e.object_id for e in self.entries))

    def splits(self):
        return {e.object_id: e.split for e in self.entries}

    def subset(self, tag):
        if tag not in SPLIT_TAGS:
            raise ValueError(f"unknown split {tag!r}")
        return GraspDataset([e for e in self.entries if e.split == tag], self.gripper, self.root, self.sdfs)

    def sdf(self, object_id) -> SignedDistanceField:
        if object_id not in self.sdfs:
            entry = next((e for e in self.entries if e.object_id == object_id), None)
            if entry is None:
                raise KeyError(f"object {object_id} is not in the dataset")
            path = Path(entry.sdf_path) if self.root is None else Path(self.root) / entry.sdf_path
            if not path.exists():
                raise DatasetError(f"object {object_id}: signed distance field {path} is missing")
            self.sdfs[object_id] = SignedDistanceField.load(path)
        return self.sdfs[object_id]

    def grids(self):
        """``(n, R, R, R)`` float occupancy."""
        return np.stack([e.grid.as_array() for e in self.entries])

    def candidates(self):
        """``(n, K, 7+J)`` candidate poses."""
        return np.stack([e.poses for e in self.entries])

    def contexts(self):
        """Per-entry ``(sdf, t_r)`` pairs for the collision loss."""
        return [(self.sdf(e.object_id), e.t_r) for e in self.entries]

    def save(self, out_dir, manifest_extra=None):
        """Write JSONL, SDF binaries and manifest; returns the manifest dict."""
        out = Path(out_dir)
        (out / "sdf").mkdir(parents=True, exist_ok=True)
        for oid in self.object_ids:
            self.sdf(oid).save(out / "sdf" / f"{oid}.gsdf")
        lines = [json.dumps(e.to_json(), sort_keys=True) for e in self.entries]
        (out / "dataset.jsonl").write_text("\n".join(lines) + "\n")
        manifest = {
            "format": FORMAT,
            "gripper": self.gripper,
            "entries": len(self.entries),
            "objects": len(self.object_ids),
            "k": self.k,
            "split": self.splits(),
            "content_hash": content_hash(out),
        }
        manifest.update(manifest_extra or {})
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        self.root = out
        return manifest

    @classmethod
    def load(cls, root):
        root = Path(root)
        manifest_path = root / "manifest.json"
        data_path = root / "dataset.jsonl"
        for p in (manifest_path, data_path):
            if not p.exists():
                raise DatasetError(f"{p} is missing")
        manifest = json.loads(manifest_path.read_text())
        entries = [DatasetEntry.from_json(json.loads(line)) for line in data_path.read_text().splitlines() if line]
        ds = cls(entries, manifest.get("gripper", ""), root)
        for oid in ds.object_ids:
            ds.sdf(oid)
        return ds


def content_hash(root):
    """sha256 over the dataset lines and every SDF binary, in sorted order."""
    root = Path(root)
    h = hashlib.sha256()
    files = [root / "dataset.jsonl"] + sorted((root / "sdf").glob("*.gsdf"))
    for p in files:
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def rotate_pose(pose, t_r: RigidTransform):
    """Left-compose the wrist of a cube-unit pose with ``t_r``, a rotation about the origin."""
    if np.any(t_r.translation != 0.0):
        raise ValueError("augmentation transforms must be pure rotations")
    x = np.array(pose, dtype=float)
    x[..., :3] = x[..., :3] @ t_r.rotation_matrix.T
    x[..., 3:7] = quat_canonical(quat_mul(np.broadcast_to(t_r.rotation, x[..., 3:7].shape), x[..., 3:7]))
    return x


def augment(entry: DatasetEntry, mesh: TriMesh, grid_resolution=None):
    """The 27 rotated copies of an unrotated entry.

    Each copy re-voxelizes the rotated mesh, left-composes every wrist with
    ``T_r`` and keeps joints, costs and the object's SDF unchanged.
    """
    res = grid_resolution or entry.grid.resolution
    if not np.allclose(entry.t_r.matrix(), np.eye(4)):
        raise ValueError("augment expects an unrotated entry")
    out = []
    for r, t_r in enumerate(augmentation_rotations()):
        grid = voxelize(mesh.transformed(t_r), res)
        out.append(replace(entry, rotation_index=r, t_r=t_r, grid=grid, poses=rotate_pose(entry.poses, t_r)))
    return out


def split_dataset(dataset: GraspDataset, fraction=0.8, seed=0):
    """Tag objects train/test by a seeded permutation; rotations share their object's tag."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    ids = sorted(dataset.object_ids)
    n_train = int(np.floor(fraction * len(ids) + 0.5))
    if len(ids) >= 2:
        n_train = min(max(n_train, 1), len(ids) - 1)
    perm = np.random.default_rng(seed).permutation(len(ids))
    train = {ids[i] for i in perm[:n_train]}
    entries = [replace(e, split="train" if e.object_id in train else "test") for e in dataset.entries]
    return GraspDataset(entries, dataset.gripper, dataset.root, dataset.sdfs)


def plan_object(object_id, mesh: TriMesh, model: GripperModel, cfg: DatasetConfig, seed):
    """SDF plus the 27 augmented entries for one object."""
    try:
        mesh.require_closed()
        sdf = build_sdf(mesh, cfg.sdf_resolution)
        anneal = cfg.anneal.with_seed(derive_seed(seed, "plan", object_id))
        plans = plan_k_grasps(model, sdf, anneal, cfg.k)
        poses = np.stack([p for p, _ in plans])
        costs = np.array([c.total for _, c in plans])
        base = DatasetEntry(
            object_id,
            -1,
            RigidTransform.identity(),
            voxelize(mesh, cfg.grid_resolution),
            f"sdf/{object_id}.gsdf",
            poses,
            costs,
        )
        return sdf, augment(base, mesh, cfg.grid_resolution)
    except Exception as exc:
        raise DatasetError(f"object {object_id}: {exc}") from exc


def _plan_job(args):
    oid, mesh, gripper, cfg, seed = args
    return plan_object(oid, mesh, load_gripper(gripper), cfg, seed)


def build_dataset(meshes: dict, cfg: DatasetConfig, seed=0, workers=1, model=None):
    """Plan, augment and split a dataset; a pure function of its arguments.

    Objects are planned independently with per-object seeds, so any
    ``workers`` count yields the same dataset.
    """
    if not meshes:
        raise DatasetError("empty object set")
    jobs = [(oid, mesh, cfg.gripper, cfg, seed) for oid, mesh in meshes.items()]
    if workers > 1 and len(jobs) > 1 and model is None:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_plan_job, jobs))
    else:
        model = model or load_gripper(cfg.gripper)
        results = [plan_object(oid, mesh, model, cfg, s) for oid, mesh, _, _, s in jobs]
    entries, sdfs = [], {}
    for (oid, *_), (sdf, ents) in zip(jobs, results):
        sdfs[oid] = sdf
        entries.extend(ents)
    ds = GraspDataset(entries, cfg.gripper, None, sdfs)
    return split_dataset(ds, cfg.split_fraction, derive_seed(seed, "split"))
