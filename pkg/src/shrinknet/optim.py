"""SGD training with jointly updated shrinkage coefficients.

The weight update is momentum SGD with optional weight decay::

    buf <- momentum * buf + (grad + weight_decay * param)
    param <- param - lr * buf

Weight decay applies to weight matrices only, never to biases or to the
shrinkage coefficients.  Penalty subgradients are added to the data-loss
gradients every batch, without batch-size rescaling.  Coefficients follow the
same learning-rate schedule, use their own momentum buffers (momentum
``lambda_momentum``, defaulting to the weight momentum), and are clamped to
``lambda_floor`` after every step.

Per-epoch metrics land in a :class:`RunRecord`; its JSONL serialization is
byte-stable for a fixed seed — wall-clock times go to a separate
``timing.json`` sidecar.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import engine, penalties
from .data import Dataset
from .errors import ConfigError, TrainingDiverged
from .models import Model, model_inputs, evaluate
from .penalties import PenaltyConfig


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 1
    batch_size: int = 100
    seed: int = 0
    schedule: tuple[tuple[int, float], ...] = ()  # (epoch, multiplier), applied at epoch >= milestone
    lambda_floor: float = 1e-8
    lambda_momentum: float | None = None
    freeze_lambda: bool = False
    snapshot_every: int = 0  # 0 = no (lam, |w|) snapshots
    shuffle: bool = True

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.lambda_momentum is not None and not 0.0 <= self.lambda_momentum < 1.0:
            raise ConfigError(f"lambda_momentum must lie in [0, 1), got {self.lambda_momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.lambda_floor <= 0:
            raise ConfigError(f"lambda_floor must be positive, got {self.lambda_floor}")
        ms = [e for e, _ in self.schedule]
        if ms != sorted(ms):
            raise ConfigError(f"schedule milestones must be nondecreasing, got {ms}")


def lr_at(cfg: OptimConfig, epoch: int) -> float:
    """Base rate times the product of multipliers whose milestone <= epoch."""
    lr = cfg.lr
    for milestone, mult in cfg.schedule:
        if milestone <= epoch:
            lr *= mult
    return lr


def sgd_step(param: np.ndarray, grad: np.ndarray, buf: np.ndarray,
             lr: float, momentum: float, weight_decay: float = 0.0) -> None:
    """In-place momentum-SGD update of ``param`` and its buffer."""
    d = grad + weight_decay * param if weight_decay else grad
    buf *= momentum
    buf += d
    param -= lr * buf


@dataclass
class RunRecord:
    """Per-epoch training metrics plus the resolved configuration echo."""

    epochs: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    epoch_seconds: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # (epoch, lam, |w|) over penalized set
    batch_objective: list | None = None

    def config_hash(self) -> str:
        blob = json.dumps(self.config, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def to_jsonl(self) -> str:
        lines = [json.dumps(e, sort_keys=True) for e in self.epochs]
        lines.append(json.dumps({"summary": self.summary}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def write(self, run_dir) -> None:
        """Write record.jsonl (+snapshots.npz) and the timing sidecar."""
        import os

        os.makedirs(str(run_dir), exist_ok=True)
        with open(os.path.join(str(run_dir), "record.jsonl"), "w") as f:
            f.write(self.to_jsonl())
        with open(os.path.join(str(run_dir), "timing.json"), "w") as f:
            json.dump({"epoch_seconds": self.epoch_seconds}, f)
        if self.snapshots:
            epochs = np.array([e for e, _, _ in self.snapshots])
            lam = np.stack([l for _, l, _ in self.snapshots])
            absw = np.stack([a for _, _, a in self.snapshots])
            np.savez(os.path.join(str(run_dir), "snapshots.npz"),
                     epochs=epochs, lam=lam, absw=absw)

    @staticmethod
    def read_jsonl(path):
        """Parse record.jsonl back into (epoch dicts, summary dict)."""
        epochs, summary = [], {}
        with open(str(path)) as f:
            for line in f:
                doc = json.loads(line)
                if "summary" in doc:
                    summary = doc["summary"]
                else:
                    epochs.append(doc)
        return epochs, summary


class _LambdaState:
    """Trainer-side view of the shrinkage coefficients.

    Shapes depend on the penalty kind: per-weight for halo/weighted, one
    scalar for sws, one scalar per penalized layer for shalo1, and both for
    shalo2.  The flat per-weight view is synced back into the model's
    per-layer arrays after training.
    """

    def __init__(self, model: Model, pcfg: PenaltyConfig):
        self.kind = pcfg.kind
        self.pen = model.penalized_params()
        self.sizes = [w.size for _, w, _ in self.pen]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)
        self.flat = (
            np.concatenate([lam.ravel() for _, _, lam in self.pen])
            if self.pen else np.empty(0)
        )
        self.groups = tuple(
            tuple(range(self.offsets[i], self.offsets[i + 1]))
            for i in range(len(self.pen))
        )
        self.shared = 1.0
        self.per_group = np.ones(len(self.pen))
        self.buf_flat = np.zeros_like(self.flat)
        self.buf_shared = 0.0
        self.buf_group = np.zeros(len(self.pen))

    def arg(self):
        """The lam argument matching :func:`penalties.penalty_subgrad`."""
        if self.kind in ("weighted", "halo"):
            return self.flat
        if self.kind == "sws":
            return np.float64(self.shared)
        if self.kind == "shalo1":
            return self.per_group
        if self.kind == "shalo2":
            return (self.per_group, self.flat)
        return None

    def step(self, dlam, lr: float, momentum: float, floor: float) -> None:
        if self.kind == "halo":
            sgd_step(self.flat, dlam, self.buf_flat, lr, momentum)
            np.maximum(self.flat, floor, out=self.flat)
        elif self.kind == "sws":
            self.buf_shared = momentum * self.buf_shared + float(dlam)
            self.shared = max(self.shared - lr * self.buf_shared, floor)
        elif self.kind == "shalo1":
            sgd_step(self.per_group, dlam, self.buf_group, lr, momentum)
            np.maximum(self.per_group, floor, out=self.per_group)
        elif self.kind == "shalo2":
            dgroups, dinner = dlam
            sgd_step(self.per_group, dgroups, self.buf_group, lr, momentum)
            np.maximum(self.per_group, floor, out=self.per_group)
            sgd_step(self.flat, dinner, self.buf_flat, lr, momentum)
            np.maximum(self.flat, floor, out=self.flat)

    def current_flat(self) -> np.ndarray:
        """Per-weight coefficient view for snapshots/analysis."""
        if self.kind == "sws":
            return np.full(int(self.offsets[-1]), self.shared)
        if self.kind == "shalo1":
            out = np.empty(int(self.offsets[-1]))
            for i in range(len(self.pen)):
                out[self.offsets[i]:self.offsets[i + 1]] = self.per_group[i]
            return out
        return self.flat

    def sync_model(self) -> None:
        flat = self.current_flat()
        for i, (_, w, lam) in enumerate(self.pen):
            if lam is not None:
                lam[...] = flat[self.offsets[i]:self.offsets[i + 1]].reshape(w.shape)


def _penalized_flat(model: Model) -> np.ndarray:
    pen = model.penalized_params()
    return (np.concatenate([w.data.ravel() for _, w, _ in pen])
            if pen else np.empty(0))


def train(
    model: Model,
    train_set: Dataset,
    penalty: PenaltyConfig,
    cfg: OptimConfig,
    test_set: Dataset | None = None,
    report_threshold: float = 0.0,
    trace_objective: bool = False,
):
    """Minimize data loss + penalty over weights (and coefficients, for the
    kinds that train them).  Returns ``(model, RunRecord)``; the model is
    updated in place.
    """
    pcfg = penalty
    rng = np.random.default_rng(cfg.seed)
    lam_state = _LambdaState(model, pcfg)
    if pcfg.kind in ("shalo1", "shalo2"):
        # grouping = one group per penalized layer, whatever the config says
        pcfg = pcfg.with_(group_map=lam_state.groups)
    lam_momentum = cfg.momentum if cfg.lambda_momentum is None else cfg.lambda_momentum

    bufs = {id(t): np.zeros_like(t.data) for t in model.parameters()}
    weight_ids = {id(lp.weight) for lp in model.layers}
    pen = model.penalized_params()
    offsets = lam_state.offsets

    record = RunRecord(
        config={
            "penalty": asdict(penalty),
            "optim": asdict(cfg),
            "data": train_set.provenance,
            "report_threshold": report_threshold,
        },
        batch_objective=[] if trace_objective else None,
    )

    n = len(train_set)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = lr_at(cfg, epoch)
        loss_sum = 0.0
        correct = 0
        batch_rng = rng if cfg.shuffle else None
        for bi, (xb, yb) in enumerate(train_set.batches(cfg.batch_size, batch_rng)):
            model.zero_grad()
            with engine.recording():
                out = model.forward(model_inputs(model, xb))
                if train_set.task == "classification":
                    loss = engine.softmax_cross_entropy(out, yb)
                else:
                    loss = engine.mse_loss(engine.reshape(out, yb.shape), yb)
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch}, batch {bi}"
                    )
                engine.backward(loss)

            loss_sum += float(loss.data) * len(xb)
            if train_set.task == "classification":
                correct += int((out.data.argmax(axis=1) == yb).sum())

            if pcfg.kind != "none":
                w_flat = _penalized_flat(model)
                dw_flat, dlam = penalties.penalty_subgrad(pcfg, w_flat, lam_state.arg())
                for i, (_, w, _) in enumerate(pen):
                    dw = dw_flat[offsets[i]:offsets[i + 1]].reshape(w.shape)
                    w.grad = dw if w.grad is None else w.grad + dw
                if trace_objective:
                    record.batch_objective.append(
                        float(loss.data)
                        + penalties.penalty_value(pcfg, w_flat, lam_state.arg())
                    )
                if (pcfg.kind in penalties.TRAINABLE_LAMBDA_KINDS
                        and not cfg.freeze_lambda):
                    lam_state.step(dlam, lr, lam_momentum, cfg.lambda_floor)
            elif trace_objective:
                record.batch_objective.append(float(loss.data))

            for lp in model.layers:
                for t in (lp.weight, lp.bias):
                    g = t.grad if t.grad is not None else np.zeros_like(t.data)
                    wd = cfg.weight_decay if id(t) in weight_ids else 0.0
                    if t is lp.weight and lp.frozen is not None:
                        g = g * lp.frozen
                    sgd_step(t.data, g, bufs[id(t)], lr, cfg.momentum, wd)
                if lp.frozen is not None:
                    lp.weight.data[~lp.frozen] = 0.0

        epoch_row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": loss_sum / n,
            "train_acc": correct / n if train_set.task == "classification" else None,
        }
        if test_set is not None:
            test_loss, test_acc = evaluate(model, test_set)
            epoch_row["test_loss"] = test_loss
            epoch_row["test_acc"] = test_acc
        mags = model.penalized_magnitudes()
        if mags.size:
            epoch_row["sparsity_exact"] = float(np.mean(mags == 0.0))
            epoch_row["sparsity_at_threshold"] = float(np.mean(mags <= report_threshold))
        record.epochs.append(epoch_row)
        if cfg.snapshot_every > 0 and (
            (epoch + 1) % cfg.snapshot_every == 0 or epoch == cfg.epochs - 1
        ):
            record.snapshots.append(
                (epoch, lam_state.current_flat().copy(), mags.copy())
            )
        record.epoch_seconds.append(time.perf_counter() - t0)

    lam_state.sync_model()
    last = record.epochs[-1]
    record.summary = {
        "epochs": cfg.epochs,
        "final_train_loss": last["train_loss"],
        "final_train_acc": last["train_acc"],
        "final_test_loss": last.get("test_loss"),
        "final_test_acc": last.get("test_acc"),
        "final_sparsity_exact": last.get("sparsity_exact"),
        "final_sparsity_at_threshold": last.get("sparsity_at_threshold"),
        "config_hash": record.config_hash(),
    }
    if pcfg.kind in ("shalo1", "shalo2"):
        record.summary["lambda_groups"] = [float(v) for v in lam_state.per_group]
    if pcfg.kind == "sws":
        record.summary["lambda_shared"] = float(lam_state.shared)
    return model, record
