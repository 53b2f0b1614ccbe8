"""Minibatch SGD with momentum and weight decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..tensorcore import NonFiniteError, backward, evaluate
from .graph import LayerGraph, forward_with_taps


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training diverged (non-finite loss) in epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainHyper:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-5
    epochs: int = 8
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.momentum < 0 or self.weight_decay < 0 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("training hyperparameters must be non-negative (batch size positive)")


@dataclass
class TrainResult:
    graph: LayerGraph
    losses: list = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")


def loss_and_grad(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy (K > 1) or logistic loss (K == 1) and its logit gradient."""
    n = logits.shape[0]
    if logits.shape[1] == 1:
        z = logits[:, 0]
        y = labels.astype(np.float64)
        loss = np.mean(np.logaddexp(0.0, z) - y * z)
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        return float(loss), ((p - y) / n)[:, None]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -np.mean(logp[np.arange(n), labels])
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def dataset_loss(graph: LayerGraph, images, labels, chunk: int = 256) -> float:
    logits = forward_with_taps(graph, images, chunk=chunk)["output"]
    return loss_and_grad(logits, np.asarray(labels))[0]


def sgd_train(graph: LayerGraph, data, hyper: TrainHyper | None = None, log=None) -> TrainResult:
    """Train a copy of ``graph`` on ``data``; deterministic given ``hyper.seed``."""
    hyper = hyper or TrainHyper()
    images, labels = np.asarray(data.images), np.asarray(data.labels)
    if len(images) == 0:
        raise ValueError("dataset is empty")
    graph = graph.copy()
    initial = dataset_loss(graph, images, labels)
    result = TrainResult(graph, [], initial, initial)
    if hyper.epochs == 0:
        return result
    rng = np.random.default_rng(hyper.seed)
    g, refs = graph.compile()
    names = sorted(graph.trainable)
    velocity = {k: np.zeros_like(graph.params[k]) for k in names}
    out_ref = refs[graph.output]
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(images))
        total = 0.0
        for lo in range(0, len(order), hyper.batch_size):
            idx = order[lo : lo + hyper.batch_size]
            try:
                trace = evaluate(g, graph.bindings(images[idx]))
            except NonFiniteError as exc:
                raise TrainingDiverged(epoch) from exc
            loss, dlogits = loss_and_grad(trace.values[out_ref], labels[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch)
            total += loss * len(idx)
            grads = backward(trace, {out_ref: dlogits}, names)
            for k in names:
                v = velocity[k]
                v *= hyper.momentum
                v += grads[k] + hyper.weight_decay * graph.params[k]
                graph.params[k] -= hyper.lr * v
        epoch_loss = total / len(images)
        if not np.isfinite(epoch_loss):
            raise TrainingDiverged(epoch)
        result.losses.append(epoch_loss)
        if log is not None:
            log(f"epoch {epoch + 1}/{hyper.epochs} loss {epoch_loss:.4f}")
    result.final_loss = dataset_loss(graph, images, labels)
    return result


def accuracy(graph: LayerGraph, images, labels) -> float:
    from .graph import predict

    return float(np.mean(predict(graph, images) == np.asarray(labels)))
