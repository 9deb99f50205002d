"""Adversarial training loop: label loss plus scheduled domain-confusion
loss plus feature-norm regularization, optimized jointly with Adam.

The reversal strength follows lambda(p) = 2/(1+exp(-gamma*p)) - 1 over
normalized progress p, so early steps are pure supervised learning and
domain invariance is enforced gradually.  The strength enters through the
gradient reversal node, not as a loss coefficient: the discriminator always
trains at full strength against the current features, while the encoder
feels -lambda times that gradient.  The logged total recomposes the
breakdown as loss_cls + w_dom*lambda*loss_dom + w_feat*loss_feat.

Augmentation is resampled every epoch from streams keyed by (seed, purpose,
epoch), so runs are reproducible and ablation variants see identical data.

The returned model is the mean of the final epoch's iterates, not the last
step alone.  At a constant learning rate the tail of the trajectory bounces
around its basin; averaging it keeps the same solution while removing the
noise of whichever point the last step happened to land on.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .checkpoint import save_checkpoint
from .domainshift import DomainSpec, tag_batch
from .encoder import feature_norm_loss
from .errors import ConfigError, ContractError, DataError
from .ops import cross_entropy
from .synthgen import Sample
from .tensor import Tensor

logger = logging.getLogger(__name__)

LOG_HEADER = ["step", "lambda", "loss_cls", "loss_dom", "loss_feat", "train_acc"]

# stream tags for derived rngs; distinct constants keep streams independent
_STREAM_AUG = 1
_STREAM_SHUFFLE = 2


@dataclass
class TrainConfig:
    epochs: int = 15
    # small batches buy optimizer steps; at 600 samples and a fixed epoch
    # budget the schedule needs them to converge before lambda saturates
    batch_size: int = 8
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    w_dom: float = 1.0
    w_feat: float = 1e-4
    gamma: float = 10.0
    use_quantum: bool = True
    use_adversarial: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(
                f"batch size must be >= 2 for batch statistics, got {self.batch_size}"
            )
        if self.w_dom < 0 or self.w_feat < 0:
            raise ConfigError("loss weights must be nonnegative")
        if self.gamma <= 0:
            raise ConfigError(f"schedule constant must be positive, got {self.gamma}")


def lambda_schedule(p: float, gamma: float = 10.0) -> float:
    """Reversal strength 2/(1+exp(-gamma*p)) - 1; 0 at p=0, approaching 1."""
    if p < 0.0 or p > 1.0:
        logger.warning("progress %.4f outside [0, 1], clamping", p)
        p = min(max(p, 0.0), 1.0)
    return 2.0 / (1.0 + math.exp(-gamma * p)) - 1.0


class Adam:
    """Adaptive moment estimation over named parameter tensors."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {name: np.zeros_like(t.data) for name, t in self.params}
        self.v = {name: np.zeros_like(t.data) for name, t in self.params}
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()


def _batch_arrays(samples: Sequence[Sample]):
    x = np.stack([s.image for s in samples])[:, None, :, :]
    y = np.array([s.label for s in samples], dtype=np.int64)
    d = np.array([s.domain for s in samples], dtype=np.int64)
    return x, y, d


def train_step(model, optimizer: Adam, x: np.ndarray, y: np.ndarray,
               d: np.ndarray, lam: float, config: TrainConfig) -> Dict[str, float]:
    """One optimization step; returns the loss breakdown for logging."""
    if x.shape[0] < 2:
        raise ContractError(f"train batch must have >= 2 samples, got {x.shape[0]}")
    h = model.encode(Tensor(x), mode="train")
    h_prime = model.enhance(h)
    logits = model.classify(h_prime)
    loss_cls = cross_entropy(logits, y)
    total_graph = loss_cls

    loss_dom_value = 0.0
    if model.use_adversarial and config.w_dom > 0.0:
        dom_logits = model.discriminate(h, lam)
        loss_dom = cross_entropy(dom_logits, d)
        loss_dom_value = loss_dom.item()
        total_graph = total_graph + loss_dom * config.w_dom

    loss_feat_value = 0.0
    if config.w_feat > 0.0:
        loss_feat = feature_norm_loss(h)
        loss_feat_value = loss_feat.item()
        total_graph = total_graph + loss_feat * config.w_feat

    cls_value = loss_cls.item()
    components = dict(loss_cls=cls_value, loss_dom=loss_dom_value,
                      loss_feat=loss_feat_value)
    if not all(np.isfinite(v) for v in components.values()):
        raise ContractError(f"non-finite loss: {components}")

    optimizer.zero_grad()
    total_graph.backward()
    optimizer.step()

    acc = float((logits.data.argmax(axis=1) == y).mean())
    total = cls_value + config.w_dom * lam * loss_dom_value + config.w_feat * loss_feat_value
    return dict(loss_cls=cls_value, loss_dom=loss_dom_value,
                loss_feat=loss_feat_value, total=total, train_acc=acc)


def _epoch_batches(count: int, batch_size: int, rng: np.random.Generator) -> List[np.ndarray]:
    order = rng.permutation(count)
    batches = [order[i:i + batch_size] for i in range(0, count, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        # a singleton tail cannot produce batch statistics; fold it back
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def fit(model, config: TrainConfig, samples: Sequence[Sample],
        specs: Sequence[DomainSpec], log_path=None, checkpoint_path=None,
        on_epoch=None) -> List[Dict[str, float]]:
    """Train the model in place; returns the per-step log rows.

    Each epoch re-augments the clean samples with fresh domain parameters,
    shuffles, and iterates minibatches with p = global_step / total_steps.
    The weights left in the model (and written to the checkpoint) are the
    mean over the final epoch's iterates, batch statistics included.
    """
    if len(samples) == 0:
        raise ConfigError("training dataset is empty")
    probe = np.random.default_rng([config.seed, _STREAM_SHUFFLE, 0])
    steps_per_epoch = len(_epoch_batches(len(samples), config.batch_size, probe))
    total_steps = config.epochs * steps_per_epoch

    optimizer = Adam(model.parameters(), lr=config.learning_rate,
                     beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    rows: List[Dict[str, float]] = []
    tail_sums: Optional[Dict[str, np.ndarray]] = None
    tail_count = 0
    step = 0
    for epoch in range(config.epochs):
        aug_rng = np.random.default_rng([config.seed, _STREAM_AUG, epoch])
        tagged = tag_batch(samples, specs, aug_rng)
        shuffle_rng = np.random.default_rng([config.seed, _STREAM_SHUFFLE, epoch])
        for batch_idx in _epoch_batches(len(tagged), config.batch_size, shuffle_rng):
            lam = lambda_schedule(step / total_steps, config.gamma)
            x, y, d = _batch_arrays([tagged[i] for i in batch_idx])
            breakdown = train_step(model, optimizer, x, y, d, lam, config)
            rows.append(dict(step=step, **{"lambda": lam}, **breakdown))
            step += 1
            if epoch == config.epochs - 1:
                if tail_sums is None:
                    tail_sums = {n: a.copy() for n, a in model.named_arrays()}
                else:
                    for name, arr in model.named_arrays():
                        tail_sums[name] += arr
                tail_count += 1
        if on_epoch is not None:
            on_epoch(epoch, model)

    if tail_count:
        for name, arr in model.named_arrays():
            arr[...] = tail_sums[name] / tail_count

    if log_path is not None:
        write_log(log_path, rows)
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, model.named_arrays())
    return rows


def write_log(path, rows) -> None:
    try:
        with open(Path(path), "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(LOG_HEADER)
            for row in rows:
                writer.writerow([row["step"], f"{row['lambda']:.8f}",
                                 f"{row['loss_cls']:.8f}", f"{row['loss_dom']:.8f}",
                                 f"{row['loss_feat']:.8f}", f"{row['train_acc']:.6f}"])
    except OSError as exc:
        raise DataError(f"cannot write training log {path}: {exc}") from exc
