"""Command-line pipeline: gen-objects, build-dataset, train, predict, refine, eval.

Exit codes: 0 success, 1 runtime failure, 2 usage error. ``GRASPFIELD_THREADS``
caps worker processes and BLAS threads.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .config import PipelineConfig, load_config
from .dataset import DatasetError, GraspDataset, build_dataset, content_hash
from .geometry.sdf import build_sdf
from .geometry.voxel import voxelize
from .kinematics import GraspPose, load_gripper
from .losses import LOSS_NAMES, to_metric
from .network import ConvSpec, auto_config, load_checkpoint, save_checkpoint
from .network.model import forward
from .network.training import LossSpec, TrainConfig, train, write_residual_log
from .objects import generate_objects, load_objects
from .seeding import derive_seed

log = logging.getLogger("graspfield")

DATASET_FORMAT_VERSION = 1


class UsageError(Exception):
    pass


def _threads():
    raw = os.environ.get("GRASPFIELD_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"GRASPFIELD_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"GRASPFIELD_THREADS must be a positive integer, got {raw!r}")
    return n


def _write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- gen-objects


def cmd_gen_objects(args, cfg: PipelineConfig):
    out = Path(args.out or cfg.paths.objects)
    count = cfg.objects.count if args.count is None else args.count
    seed = derive_seed(cfg.seed if args.seed is None else args.seed, "objects")
    specs = generate_objects(out, count, seed, tuple(cfg.objects.families))
    print(f"wrote {len(specs)} objects to {out}")


# ---------------------------------------------------------------- build-dataset


def _dataset_config(args, cfg: PipelineConfig):
    dc = cfg.dataset
    if args.gripper:
        dc = replace(dc, gripper=args.gripper)
    if args.k is not None:
        dc = replace(dc, k=args.k)
    if args.iterations is not None:
        dc = replace(dc, anneal=replace(dc.anneal, iterations=args.iterations))
    return dc


def _inputs_hash(obj_dir, dc, seed, gripper):
    h = hashlib.sha256()
    h.update(json.dumps({"config": dc.to_dict(), "seed": seed, "version": DATASET_FORMAT_VERSION}, sort_keys=True).encode())
    h.update(gripper.digest().encode())
    for p in sorted(Path(obj_dir).glob("*.obj")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def build_dataset_dir(obj_dir, out, dc, seed, force=False, workers=1):
    """Build (or reuse) a dataset directory; returns ``(manifest, rebuilt)``."""
    out = Path(out)
    model = load_gripper(dc.gripper)
    meshes = load_objects(obj_dir)
    inputs = _inputs_hash(obj_dir, dc, seed, model)
    manifest_path = out / "manifest.json"
    if manifest_path.exists() and not force:
        old = json.loads(manifest_path.read_text())
        try:
            same = old.get("inputs_hash") == inputs and content_hash(out) == old.get("content_hash")
        except OSError:
            same = False
        if same:
            return old, False
    ds = build_dataset(meshes, dc, seed=seed, workers=workers)
    extra = {
        "inputs_hash": inputs,
        "config": dc.to_dict(),
        "seed": seed,
        "gripper_hash": model.digest(),
        "objects_dir": str(obj_dir),
    }
    return ds.save(out, extra), True


def cmd_build_dataset(args, cfg: PipelineConfig):
    dc = _dataset_config(args, cfg)
    obj_dir = Path(args.objects or cfg.paths.objects)
    out = Path(args.out or cfg.paths.dataset)
    seed = derive_seed(cfg.seed if args.seed is None else args.seed, "dataset")
    manifest, rebuilt = build_dataset_dir(obj_dir, out, dc, seed, args.force, _threads())
    state = "built" if rebuilt else "up to date (inputs and content hash match)"
    print(f"dataset {out}: {manifest['entries']} entries, {manifest['objects']} objects, K={manifest['k']}; {state}")


# ---------------------------------------------------------------- train


def _network_config(cfg: PipelineConfig, resolution, output_dim):
    convs = tuple(ConvSpec(*c) if not isinstance(c, dict) else ConvSpec(**c) for c in cfg.network.conv_layers)
    return auto_config(resolution, convs, tuple(cfg.network.hidden), output_dim)


def train_one(ds, loss, cfg: PipelineConfig, epochs, seed, out_dir, tag=None):
    model = load_gripper(ds.gripper)
    spec = LossSpec.parse(loss, cfg.train.beta)
    network = _network_config(cfg, ds[0].grid.resolution, model.pose_dim)
    tc = TrainConfig(
        epochs=epochs,
        batch_size=cfg.train.batch_size,
        learning_rate=cfg.train.learning_rate,
        log_beta=cfg.eval.beta,
    )
    tag = tag or spec.name
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_seed = derive_seed(seed, "train", tag)
    result = train(ds, spec, epochs, train_seed, network=network, train_config=tc, model=model)
    meta = {
        "loss": str(spec),
        "epochs": epochs,
        "seed": train_seed,
        "gripper": ds.gripper,
        "gripper_hash": model.digest(),
        "diverged": result.diverged,
        "best_epoch": result.best_epoch,
    }
    save_checkpoint(out_dir / f"{tag}.gfnet", result.params, result.config, meta)
    write_residual_log(out_dir / f"{tag}_residuals.csv", result.log)
    if result.diverged:
        log.warning("training %s diverged: %s", tag, result.message)
    return result


def cmd_train(args, cfg: PipelineConfig):
    ds_dir = Path(args.dataset or cfg.paths.dataset)
    out = Path(args.out or cfg.paths.models)
    ds = GraspDataset.load(ds_dir)
    epochs = cfg.train.epochs if args.epochs is None else args.epochs
    if epochs < 0:
        raise UsageError("--epochs must be >= 0")
    if args.beta is not None:
        if not 0.0 <= args.beta <= 1.0:
            raise UsageError("--beta must lie in [0, 1]")
        cfg = replace(cfg, train=replace(cfg.train, beta=args.beta))
    seed = cfg.seed if args.seed is None else args.seed
    losses = list(LOSS_NAMES) if args.sweep else [args.loss or cfg.train.loss]
    failed = []
    for loss in losses:
        res = train_one(ds, loss, cfg, epochs, seed, out)
        fin = res.final("test")
        summary = ", ".join(f"{k}={v:.4g}" for k, v in fin.items()) if fin else "no epochs run"
        print(f"{loss}: wrote {out / (loss + '.gfnet')} ({summary})")
        if res.diverged:
            failed.append(loss)
    if failed:
        print(f"error: training diverged for {', '.join(failed)}; best checkpoints were kept", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------- predict / refine


def _pose_json(x, model, sdf, extra=None):
    pose = GraspPose.from_vector(x, model)
    metric = to_metric(x, sdf.scale_s)
    doc = {
        "gripper": model.name,
        "units": "cube",
        "scale_s": sdf.scale_s,
        "pose": [float(v) for v in pose.to_vector()],
        "wrist_m": {"t": [float(v) for v in metric[:3]], "q": [float(v) for v in pose.wrist.rotation]},
        "joints": [float(v) for v in pose.joints],
    }
    doc.update(extra or {})
    return doc


def cmd_predict(args, cfg: PipelineConfig):
    from .evaluation import epsilon_quality, export_scene, predict_with_resampling
    from .geometry.mesh import read_obj
    from .refine import pose_refine

    params, network, meta = load_checkpoint(args.checkpoint)
    model = load_gripper(meta.get("gripper", cfg.dataset.gripper))
    if network.output_dim != model.pose_dim:
        raise ValueError(f"checkpoint output {network.output_dim} does not match gripper {model.name}")
    mesh = read_obj(args.object)
    mesh.require_closed()
    sdf = build_sdf(mesh, cfg.dataset.sdf_resolution)
    timings = {}
    extra = {}
    if args.resample:
        t0 = time.perf_counter()
        res = predict_with_resampling(
            params, network, mesh, sdf, model, args.resample, seed=derive_seed(cfg.seed, "resample"),
            beta=args.beta, friction_mu=cfg.eval.friction_mu,
        )
        timings["total_s"] = time.perf_counter() - t0
        x = res.pose
        extra.update(rotations_tried=res.rotations_tried, epsilon=res.epsilon, passed=res.passed)
    else:
        t0 = time.perf_counter()
        grid = voxelize(mesh, network.input_resolution)
        out, _ = forward(params, network, grid.as_array(), "eval")
        x = out[0]
        timings["forward_s"] = time.perf_counter() - t0
        if args.refine:
            t0 = time.perf_counter()
            r = pose_refine(x, model, sdf, _identity(), beta=args.beta, max_iters=cfg.eval.refine_max_iters,
                            step=cfg.eval.refine_step, joints_only=cfg.eval.refine_joints_only)
            timings["adjust_s"] = time.perf_counter() - t0
            x = r.pose
            extra.update(converged=r.converged, iterations=r.iterations)
        extra["epsilon"] = epsilon_quality(x, model, sdf, cfg.eval.friction_mu, 256)
    doc = _pose_json(x, model, sdf, extra)
    doc["timings"] = timings
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    if args.scene:
        export_scene(args.scene, mesh, model, x, sdf.scale_s)


def _identity():
    from .geometry.transforms import RigidTransform

    return RigidTransform.identity()


def cmd_refine(args, cfg: PipelineConfig):
    from .geometry.mesh import read_obj
    from .refine import pose_refine, runtime_adjust

    doc = json.loads(Path(args.pose).read_text())
    model = load_gripper(doc.get("gripper", cfg.dataset.gripper))
    x = np.asarray(doc["pose"], dtype=float)
    if x.shape != (model.pose_dim,):
        raise ValueError(f"pose has length {x.size}, gripper {model.name} expects {model.pose_dim}")
    mesh = read_obj(args.object)
    mesh.require_closed()
    sdf = build_sdf(mesh, cfg.dataset.sdf_resolution)
    joints_only = cfg.eval.refine_joints_only if args.joints_only is None else args.joints_only
    kw = dict(step=args.step, max_iters=args.max_iters, joints_only=joints_only)
    t0 = time.perf_counter()
    if args.beta == 0.0:
        r = runtime_adjust(x, model, sdf, _identity(), **kw)
    else:
        r = pose_refine(x, model, sdf, _identity(), beta=args.beta, **kw)
    out = _pose_json(r.pose, model, sdf, {"converged": r.converged, "iterations": r.iterations,
                                          "penetrations": r.penetrations})
    out["timings"] = {"adjust_s": time.perf_counter() - t0}
    text = json.dumps(out, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0 if r.converged or args.beta > 0 else 1


# ---------------------------------------------------------------- eval


def _load_models(models_dir, names=LOSS_NAMES, tag_suffix=""):
    out = {}
    for name in names:
        p = Path(models_dir) / f"{name}{tag_suffix}.gfnet"
        if not p.exists():
            raise FileNotFoundError(f"missing checkpoint for loss {name!r}: {p}")
        params, config, _ = load_checkpoint(p)
        out[name] = (params, config)
    return out


def cmd_eval(args, cfg: PipelineConfig):
    from .evaluation import (
        epsilon_quality,
        penetration_report,
        residual_matrix,
        write_penetration_table,
        write_residual_matrix,
    )

    ds_dir = Path(args.dataset or cfg.paths.dataset)
    models_dir = Path(args.models or cfg.paths.models)
    out = Path(args.out or cfg.paths.reports)
    out.mkdir(parents=True, exist_ok=True)
    ds = GraspDataset.load(ds_dir)
    models = _load_models(models_dir)
    model = load_gripper(ds.gripper)
    timings = {}

    t0 = time.perf_counter()
    mat = residual_matrix(models, ds, beta=cfg.eval.beta, gripper=model)
    write_residual_matrix(out / "residual_matrix.csv", mat)
    timings["residual_matrix_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    reports = {}
    ev = cfg.eval
    for name in ("consistency", "combined"):
        params, network = models[name]
        reports[f"{name}/raw"] = penetration_report(params, network, ds, False, model)
        reports[f"{name}/adjusted"] = penetration_report(
            params, network, ds, True, model, max_iters=ev.refine_max_iters, step=ev.refine_step,
            joints_only=ev.refine_joints_only,
        )
    write_penetration_table(out / "penetration.csv", reports)
    timings["penetration_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    adjusted = reports["combined/adjusted"].poses
    test = ds.subset("test")
    rows = []
    for entry, pose in zip(test, adjusted):
        sdf = ds.sdf(entry.object_id)
        row = {"object_id": entry.object_id, "rotation_index": entry.rotation_index}
        for d in ev.directions:
            row[f"eps_{d}"] = epsilon_quality(pose, model, sdf, ev.friction_mu, d, entry.t_r)
        rows.append(row)
    _write_rows(out / "quality.csv", rows)
    timings["quality_s"] = time.perf_counter() - t0

    if args.compare:
        t0 = time.perf_counter()
        _compare_low_dof(args, cfg, ds, ds_dir, models_dir, out)
        timings["compare_s"] = time.perf_counter() - t0
    _write_json(out / "timings.json", timings)
    print(f"reports written to {out}")
    print("residual matrix (rows trained with, columns evaluated by l2/consistency/combined):")
    for name, row in zip(LOSS_NAMES, mat):
        print(f"  {name:12s} " + " ".join(f"{v:10.4g}" for v in row))


def _write_rows(path, rows):
    import csv

    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})


def _compare_low_dof(args, cfg, ds, ds_dir, models_dir, out):
    """Train the comparison gripper under L2 with the same budget; report both test residuals."""
    low = cfg.eval.compare_gripper
    low_dir = Path(args.compare_dataset or f"{ds_dir}-{low}")
    manifest = json.loads((Path(ds_dir) / "manifest.json").read_text())
    dc = replace(cfg.dataset, gripper=low)
    obj_dir = manifest.get("objects_dir", cfg.paths.objects)
    seed = manifest.get("seed", derive_seed(cfg.seed, "dataset"))
    build_dataset_dir(obj_dir, low_dir, dc, seed, workers=_threads())
    low_ds = GraspDataset.load(low_dir)
    epochs = cfg.train.epochs if args.epochs is None else args.epochs
    rows = []
    for gname, gds in ((ds.gripper, ds), (low, low_ds)):
        res = train_one(gds, "l2", cfg, epochs, cfg.seed, Path(models_dir) / "compare", tag=f"l2_{gname}")
        fin_test, fin_train = res.final("test"), res.final("train")
        model = load_gripper(gname)
        rows.append({
            "gripper": gname,
            "joints": model.n_joints,
            "pose_dim": model.pose_dim,
            "train_l2": fin_train.get("l2", float("nan")),
            "test_l2": fin_test.get("l2", float("nan")),
        })
    _write_rows(out / "compare_low_dof.csv", rows)


# ---------------------------------------------------------------- entry point


def build_parser():
    p = argparse.ArgumentParser(prog="graspfield", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="pipeline config JSON (defaults apply to missing keys)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-objects", help="write procedural OBJ meshes and objects.json")
    g.add_argument("--out")
    g.add_argument("--count", type=int)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_objects)

    b = sub.add_parser("build-dataset", help="SDFs, annealed grasps, 27-rotation augmentation and split")
    b.add_argument("--objects")
    b.add_argument("--out")
    b.add_argument("--gripper")
    b.add_argument("--k", type=int)
    b.add_argument("--iterations", type=int)
    b.add_argument("--seed", type=int)
    b.add_argument("--force", action="store_true", help="rebuild even if the manifest matches")
    b.set_defaults(func=cmd_build_dataset)

    t = sub.add_parser("train", help="train a pose regressor and write checkpoint + residual log")
    t.add_argument("--dataset")
    t.add_argument("--out")
    t.add_argument("--loss", choices=LOSS_NAMES)
    t.add_argument("--beta", type=float, help="collision/consistency weight of the combined loss")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--sweep", action="store_true", help="train all three losses")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="predict a grasp for an OBJ mesh")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--object", required=True)
    pr.add_argument("--refine", action="store_true")
    pr.add_argument("--beta", type=float, default=0.5, help="proximity weight for refinement")
    pr.add_argument("--resample", type=int, default=0, metavar="N", help="up to N rotated attempts")
    pr.add_argument("--out")
    pr.add_argument("--scene", help="write an OBJ with the object and contact markers")
    pr.set_defaults(func=cmd_predict)

    r = sub.add_parser("refine", help="remove penetrations from a pose JSON")
    r.add_argument("--pose", required=True)
    r.add_argument("--object", required=True)
    r.add_argument("--beta", type=float, default=0.0)
    r.add_argument("--step", type=float, default=0.1)
    r.add_argument("--max-iters", type=int, default=500)
    jo = r.add_mutually_exclusive_group()
    jo.add_argument("--joints-only", dest="joints_only", action="store_true", default=None)
    jo.add_argument("--full-pose", dest="joints_only", action="store_false")
    r.add_argument("--out")
    r.set_defaults(func=cmd_refine)

    e = sub.add_parser("eval", help="residual matrix, penetration table and quality sweep")
    e.add_argument("--dataset")
    e.add_argument("--models")
    e.add_argument("--out")
    e.add_argument("--compare", choices=["low-dof"])
    e.add_argument("--compare-dataset")
    e.add_argument("--epochs", type=int, help="training budget for --compare")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "refine" and args.beta is not None and not 0.0 <= args.beta < 1.0:
        parser.error("--beta must lie in [0, 1)")
    try:
        threads = _threads()
        cfg = load_config(args.config)
        with threadpool_limits(limits=threads):
            rc = args.func(args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"graspfield: error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, FileNotFoundError, ValueError, KeyError, OSError, FloatingPointError) as exc:
        print(f"graspfield: error: {exc}", file=sys.stderr)
        return 1
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
