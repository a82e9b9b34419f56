"""Mini-batch training of the pose regressor with a per-epoch residual log."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..kinematics import GripperModel, load_gripper
from ..losses import LOSS_NAMES, canonicalize, contact_values_many, evaluate_loss
from ..seeding import derive_seed
from .config import NetworkConfig, desk_config
from .model import Parameters, backward, forward, init_parameters
from .optim import AdamState, NonFiniteGradientError, adam_step


@dataclass(frozen=True)
class LossSpec:
    name: str
    beta: float = 0.75

    def __post_init__(self):
        if self.name not in LOSS_NAMES:
            raise ValueError(f"unknown loss {self.name!r}; expected one of {LOSS_NAMES}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")

    @classmethod
    def parse(cls, spec, beta=0.75):
        """Accepts ``"l2"``, ``"consistency"``, ``"combined"``, ``"combined:0.5"`` or a tuple."""
        if isinstance(spec, LossSpec):
            return spec
        if isinstance(spec, (tuple, list)):
            return cls(spec[0], float(spec[1]) if len(spec) > 1 else beta)
        name, _, b = str(spec).partition(":")
        return cls(name, float(b) if b else beta)

    def __str__(self):
        return f"combined:{self.beta:g}" if self.name == "combined" else self.name


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    log_beta: float = 0.75  # beta of the combined column in the residual log

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainResult:
    params: Parameters
    config: NetworkConfig
    log: list = field(default_factory=list)
    diverged: bool = False
    message: str = ""
    best_epoch: int = 0

    def final(self, split="test"):
        """``{loss_name: residual}`` of the last logged epoch."""
        if not self.log:
            return {}
        last = self.log[-1]["epoch"]
        return {r["loss_name"]: r[split] for r in self.log if r["epoch"] == last}

    def write_log(self, path):
        write_residual_log(path, self.log)


def write_residual_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "loss_name", "train", "test"])
        for r in rows:
            w.writerow([r["epoch"], r["loss_name"], repr(float(r["train"])), repr(float(r["test"]))])


def predict_batched(params, config, grids, batch=64):
    grids = np.asarray(grids, dtype=float)
    if len(grids) == 0:
        return np.zeros((0, config.output_dim))
    return np.concatenate([forward(params, config, grids[i : i + batch], "eval")[0] for i in range(0, len(grids), batch)])


def residuals_from_predictions(pred, candidates, contact_values=None, beta=0.75):
    """Mean residual of each loss; the collision part needs contact SDF values."""
    pred = canonicalize(pred)
    cands = canonicalize(candidates)
    d2 = np.einsum("nkd,nkd->nk", pred[:, None] - cands, pred[:, None] - cands)
    out = {"l2": float(d2[:, 0].mean()), "consistency": float(d2.min(axis=1).mean())}
    if contact_values is None:
        out["collision"] = float("nan")
    else:
        neg = np.minimum(contact_values, 0.0)
        out["collision"] = float((neg * neg).sum(axis=1).mean())
    out["combined"] = beta * out["consistency"] + (1.0 - beta) * out["collision"]
    return out


def evaluate_residuals(params, config, grids, candidates, model=None, contexts=None, beta=0.75):
    if len(grids) == 0:
        return {k: float("nan") for k in LOSS_NAMES + ("collision",)}
    pred = predict_batched(params, config, grids)
    vals = None
    if contexts is not None and model is not None:
        vals = contact_values_many(pred, model, [c[0] for c in contexts], [c[1] for c in contexts])
    return residuals_from_predictions(pred, candidates, vals, beta)


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    out = [perm[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) == 1:
        # a lone item would zero the dense batchnorm; fold it into the previous batch
        last = out.pop()
        out[-1] = np.concatenate([out[-1], last])
    return out


def fit_arrays(
    grids,
    candidates,
    *,
    model: GripperModel,
    loss="consistency",
    epochs=None,
    seed=0,
    network: Optional[NetworkConfig] = None,
    contexts=None,
    test_grids=None,
    test_candidates=None,
    test_contexts=None,
    train_config: Optional[TrainConfig] = None,
    params: Optional[Parameters] = None,
    progress=None,
) -> TrainResult:
    """Train on ``(n, R, R, R)`` grids against ``(n, K, 7+J)`` candidate poses.

    ``contexts`` holds one ``(sdf, t_r)`` pair per item and is needed by the
    combined loss and by the collision column of the log. Shuffling and
    initialization derive from ``seed``. Each epoch appends one row per loss
    name with train and test residuals. A non-finite loss or gradient stops
    training and restores the parameters of the best epoch so far.
    """
    spec = LossSpec.parse(loss)
    tc = train_config or TrainConfig()
    if epochs is not None:
        tc = TrainConfig(**{**tc.to_dict(), "epochs": int(epochs)})
    grids = np.asarray(grids, dtype=float)
    cands = np.asarray(candidates, dtype=float)
    if cands.ndim == 2:
        cands = cands[:, None]
    n = len(grids)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if cands.shape[0] != n:
        raise ValueError(f"{n} grids but {cands.shape[0]} candidate sets")
    if spec.name == "combined" and spec.beta < 1.0 and contexts is None:
        raise ValueError("the combined loss needs per-item (sdf, t_r) contexts")
    network = network or desk_config(model.pose_dim, grids.shape[-1])
    if network.output_dim != cands.shape[-1]:
        raise ValueError(f"network output {network.output_dim} != pose dimension {cands.shape[-1]}")
    if params is None:
        params = init_parameters(network, derive_seed(seed, "init"))
        # start the head at the mean first candidate so early epochs fit shape, not offset
        params["head.b"] = canonicalize(cands[:, 0]).mean(axis=0)
    else:
        params = params.copy()
    has_test = test_grids is not None and len(test_grids) > 0
    if has_test:
        test_grids = np.asarray(test_grids, dtype=float)
        test_cands = np.asarray(test_candidates, dtype=float)
        if test_cands.ndim == 2:
            test_cands = test_cands[:, None]

    state = AdamState.for_params(
        params, learning_rate=tc.learning_rate, beta1=tc.beta1, beta2=tc.beta2, eps=tc.eps, batch_size=tc.batch_size
    )
    rng = np.random.default_rng(derive_seed(seed, "shuffle"))
    result = TrainResult(params, network)
    best_value, best_params = np.inf, params.copy()
    for epoch in range(1, tc.epochs + 1):
        try:
            for idx in _batches(n, tc.batch_size, rng):
                pred, tape = forward(params, network, grids[idx], "train")
                ctx = [contexts[i] for i in idx] if contexts is not None else None
                rep = evaluate_loss(
                    spec.name,
                    pred,
                    cands[idx],
                    model,
                    [c[0] for c in ctx] if ctx else None,
                    [c[1] for c in ctx] if ctx else None,
                    spec.beta,
                )
                if not np.isfinite(rep.value):
                    raise FloatingPointError(f"non-finite {spec} loss at epoch {epoch}")
                adam_step(params, backward(params, network, tape, rep.d_prediction), state)
        except (FloatingPointError, NonFiniteGradientError) as exc:
            result.params = best_params
            result.diverged = True
            result.message = f"{exc}; restored epoch {result.best_epoch}"
            return result
        train_res = evaluate_residuals(params, network, grids, cands, model, contexts, tc.log_beta)
        test_res = (
            evaluate_residuals(params, network, test_grids, test_cands, model, test_contexts, tc.log_beta)
            if has_test
            else {k: float("nan") for k in train_res}
        )
        for name in LOSS_NAMES:
            result.log.append({"epoch": epoch, "loss_name": name, "train": train_res[name], "test": test_res[name]})
        if spec.name == "combined":
            value = spec.beta * train_res["consistency"] + (1.0 - spec.beta) * train_res["collision"]
        else:
            value = train_res[spec.name]
        if np.isfinite(value) and value < best_value:
            best_value, best_params, result.best_epoch = value, params.copy(), epoch
        if progress is not None:
            progress(epoch, train_res, test_res)
    result.params = params
    return result


def train(dataset, loss_spec, epochs, seed, network=None, train_config=None, model=None, progress=None):
    """Train on the ``train`` split of a :class:`~graspfield.dataset.GraspDataset`, logging the ``test`` split."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    model = model or load_gripper(dataset.gripper)
    tr = dataset.subset("train")
    te = dataset.subset("test")
    if len(tr) == 0:
        raise ValueError("dataset has no training entries")
    return fit_arrays(
        tr.grids(),
        tr.candidates(),
        model=model,
        loss=loss_spec,
        epochs=epochs,
        seed=seed,
        network=network,
        contexts=tr.contexts(),
        test_grids=te.grids() if len(te) else None,
        test_candidates=te.candidates() if len(te) else None,
        test_contexts=te.contexts() if len(te) else None,
        train_config=train_config,
        progress=progress,
    )
