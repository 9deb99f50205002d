"""Test-time adaptation: refresh BN running statistics on unlabeled
target batches, leaving every learned parameter untouched.

Each forward in adapt mode recomputes batch statistics and blends them
into the running buffers with momentum eta; no gradients exist on that
path.  The interface takes plain image arrays, so label leakage is ruled
out by construction.  Adaptation happens on a copy: the input model is
never mutated, which keeps with/without comparisons honest.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .errors import ConfigError, ContractError
from .tensor import Tensor


def image_batches(images, batch_size: int = 32) -> List[np.ndarray]:
    """Stack raw (H, W) images into (N, 1, H, W) minibatch arrays.

    A trailing singleton is folded into the previous batch because batch
    statistics need at least two samples.
    """
    if batch_size < 2:
        raise ConfigError(f"batch size must be >= 2, got {batch_size}")
    arrs = [np.asarray(im, dtype=np.float64) for im in images]
    batches = [np.stack(arrs[i:i + batch_size])[:, None, :, :]
               for i in range(0, len(arrs), batch_size)]
    if len(batches) > 1 and batches[-1].shape[0] < 2:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def adapt(model, batches: Sequence[np.ndarray], eta: float = 0.1,
          passes: int = 1):
    """Return a copy of the model with BN running stats blended toward the
    target batches; repeated passes converge geometrically to the batch
    statistics at rate (1 - eta)."""
    if not 0.0 < eta <= 1.0:
        raise ConfigError(f"adaptation momentum must be in (0, 1], got {eta}")
    if passes < 0:
        raise ConfigError(f"passes must be >= 0, got {passes}")
    batches = [np.asarray(b, dtype=np.float64) for b in batches]
    if not batches:
        raise ConfigError("need at least one target batch")
    for b in batches:
        if b.ndim != 4 or b.shape[0] < 2:
            raise ContractError(
                f"adaptation batch must be (N >= 2, C, H, W), got shape {b.shape}"
            )
    adapted = copy.deepcopy(model)
    for _ in range(passes):
        for b in batches:
            adapted.encode(Tensor(b), mode="adapt", momentum=eta)
    return adapted


@dataclass
class FreezeReport:
    """Itemized diff between two model states."""
    changed: List[str]
    violations: List[str]

    @property
    def passes(self) -> bool:
        return not self.violations

    def __str__(self):
        if not self.changed:
            return "no arrays changed"
        lines = [f"{len(self.changed)} arrays changed"]
        for name in self.changed:
            mark = "ok " if name not in self.violations else "BAD"
            lines.append(f"  [{mark}] {name}")
        return "\n".join(lines)


def _named(obj) -> dict:
    if hasattr(obj, "named_arrays"):
        return dict(obj.named_arrays())
    return dict(obj)


def freeze_check(before, after) -> FreezeReport:
    """Diff two models (or checkpoint dicts); passes iff only running
    statistics differ."""
    a, b = _named(before), _named(after)
    if set(a) != set(b):
        missing = sorted(set(a) ^ set(b))
        raise ContractError(f"architecture mismatch: {missing[:4]}")
    changed = []
    for name in a:
        if a[name].shape != b[name].shape:
            raise ContractError(
                f"architecture mismatch: {name} is {a[name].shape} vs {b[name].shape}"
            )
        if not np.array_equal(a[name], b[name]):
            changed.append(name)
    violations = [n for n in changed
                  if not n.endswith((".running_mean", ".running_var"))]
    return FreezeReport(changed=changed, violations=violations)
