"""Procedural object sets standing in for a scanned-object collection."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry.mesh import PRIMITIVE_KINDS, make_primitive, read_obj, write_obj

# parameter ranges in meters; each family gets independent uniform draws
_RANGES = {
    "sphere": {"radius": (0.025, 0.05)},
    "box": {"wx": (0.03, 0.09), "wy": (0.03, 0.09), "wz": (0.03, 0.09)},
    "cylinder": {"radius": (0.02, 0.04), "height": (0.06, 0.12)},
    "capsule": {"radius": (0.02, 0.035), "length": (0.03, 0.07)},
    "ellipsoid": {"a": (0.025, 0.05), "b": (0.025, 0.05), "c": (0.025, 0.05)},
    "superquadric": {"a": (0.025, 0.045), "b": (0.025, 0.045), "c": (0.025, 0.045), "e1": (0.3, 1.5), "e2": (0.3, 1.5)},
}


def object_specs(count, seed, families=PRIMITIVE_KINDS):
    """List of ``{"id", "kind", "params"}`` cycling through ``families``."""
    if count < 1:
        raise ValueError("empty object set")
    unknown = [f for f in families if f not in PRIMITIVE_KINDS]
    if unknown:
        raise ValueError(f"unknown primitive families {unknown}")
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(count):
        kind = families[i % len(families)]
        params = {k: round(float(rng.uniform(lo, hi)), 4) for k, (lo, hi) in _RANGES[kind].items()}
        specs.append({"id": f"obj{i:03d}_{kind}", "kind": kind, "params": params})
    return specs


def generate_objects(out_dir, count=20, seed=0, families=PRIMITIVE_KINDS):
    """Write one OBJ per object plus ``objects.json``; returns the spec list."""
    specs = object_specs(count, seed, families)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for spec in specs:
        write_obj(make_primitive(spec["kind"], **spec["params"]), out / f"{spec['id']}.obj")
    manifest = {"seed": int(seed), "count": count, "objects": specs}
    (out / "objects.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return specs


def load_objects(obj_dir):
    """``{object_id: TriMesh}`` in manifest order (or sorted file order without one)."""
    d = Path(obj_dir)
    manifest = d / "objects.json"
    if manifest.exists():
        ids = [s["id"] for s in json.loads(manifest.read_text())["objects"]]
    else:
        ids = sorted(p.stem for p in d.glob("*.obj"))
    if not ids:
        raise ValueError(f"{d}: empty object set")
    meshes = {}
    for oid in ids:
        path = d / f"{oid}.obj"
        if not path.exists():
            raise FileNotFoundError(f"object {oid}: mesh file {path} is missing")
        meshes[oid] = read_obj(path)
    return meshes
