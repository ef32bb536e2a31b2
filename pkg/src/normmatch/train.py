"""Training loop (Adam with step decay) and evaluation tables."""

from __future__ import annotations

import numpy as np

from .config import TrainConfig
from .matching import accuracy
from .model import MatchingModel

__all__ = ["Adam", "lr_at_epoch", "train", "evaluate", "format_accuracy_table"]


class Adam:
    """Bias-corrected moment-adaptive updates, one (m, v) pair per parameter.

    Parameters whose names start with "backbone." take the learning rate
    scaled by backbone_lr_factor.
    """

    def __init__(self, store, backbone_lr_factor: float = 1.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.backbone_lr_factor = backbone_lr_factor
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(store.value(n)) for n in store.trainable_names()}
        self.v = {n: np.zeros_like(store.value(n)) for n in store.trainable_names()}

    def step(self, lr: float) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name in self.store.trainable_names():
            g = self.store.grad(name)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            group_lr = lr * (self.backbone_lr_factor if name.startswith("backbone.") else 1.0)
            update = group_lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
            self.store.set_value(name, self.store.value(name) - update)


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """Scheduled learning rate for a 1-based epoch index.

    The rate is multiplied by lr_decay_factor after each epoch listed in
    lr_decay_epochs, so epoch e uses base_lr * factor^|{d in decay : d < e}|.
    """
    k = sum(1 for d in config.lr_decay_epochs if d < epoch)
    return config.base_lr * config.lr_decay_factor ** k


def train(config: TrainConfig, train_pairs, val_pairs=None,
          model: MatchingModel | None = None, log=None):
    """Run the optimization loop.

    Returns (model, optimizer, history, aborted). history has one entry per
    completed epoch: epoch index, learning rate, mean train loss, and
    validation accuracy (None when no validation pairs are given). A
    non-finite batch loss aborts training before the parameter update, so
    the model retains the last good state.
    """
    if model is None:
        model = MatchingModel(config)
    optimizer = Adam(model.store, backbone_lr_factor=config.backbone_lr_factor)
    history: list[dict] = []
    aborted = False
    for epoch in range(1, config.epochs + 1):
        lr = lr_at_epoch(config, epoch)
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_pairs))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_pairs[i] for i in order[start : start + config.batch_size]]
            model.store.zero_grads()
            batch_loss = 0.0
            for pair in batch:
                report = model.loss_and_grads(pair)
                batch_loss += report.total
            batch_loss /= len(batch)
            if not np.isfinite(batch_loss):
                aborted = True
                break
            for name in model.store.trainable_names():
                model.store.grad(name)[...] /= len(batch)
            optimizer.step(lr)
            model.store.quantize_float32()
            losses.append(batch_loss)
        if aborted:
            if log:
                log(f"epoch {epoch}: non-finite loss, aborting with last good parameters")
            break
        entry = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.mean(losses)) if losses else float("nan"),
            "val_accuracy": None,
        }
        if val_pairs:
            entry["val_accuracy"] = evaluate(model, val_pairs)["mean"]
        history.append(entry)
        if log:
            va = entry["val_accuracy"]
            log(
                f"epoch {epoch}: lr {lr:g}, train loss {entry['train_loss']:.4f}"
                + (f", val accuracy {va:.3f}" if va is not None else "")
            )
    return model, optimizer, history, aborted


def evaluate(model: MatchingModel, pairs) -> dict:
    """Per-class and mean matching accuracy over a dataset.

    The mean is the unweighted average of the per-class accuracies.
    """
    if not pairs:
        raise ValueError("cannot evaluate an empty dataset")
    per_class: dict[int, list[float]] = {}
    for pair in pairs:
        matching, _, _ = model.match_pair(pair)
        per_class.setdefault(pair.class_id, []).append(accuracy(matching, pair.truth))
    classes = [
        {"class_id": cid, "count": len(vals), "accuracy": float(np.mean(vals))}
        for cid, vals in sorted(per_class.items())
    ]
    mean = float(np.mean([c["accuracy"] for c in classes]))
    return {"classes": classes, "mean": mean}


def format_accuracy_table(result: dict) -> str:
    """Aligned plain-text rendering of an evaluation result."""
    lines = [f"{'class':>8} {'count':>7} {'accuracy':>9}"]
    for row in result["classes"]:
        lines.append(f"{row['class_id']:>8d} {row['count']:>7d} {row['accuracy']:>9.4f}")
    lines.append(f"{'mean':>8} {'':>7} {result['mean']:>9.4f}")
    return "\n".join(lines)
