"""Comparison suite: the plain convolutional baseline, the named model
variants, and the multi-seed experiment driver.

Variants share one training pipeline.  Because the full model constructs
every branch regardless of ablation flags and the data streams are keyed
only by the config seed, two variants given the same seed train on
bit-identical batches from bit-identical initialization, differing only
in the ablated computation.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .domainshift import TRAIN_DOMAINS, UNSEEN_DOMAIN, DomainSpec, shift_to_domain
from .encoder import Conv2d, DGQModel, Linear
from .errors import ConfigError, ShapeError
from .metrics import (METRIC_KEYS, bootstrap_ci, per_domain_report,
                      predict_scores)
from .ops import maxpool2d
from .synthgen import generate_clean
from .tensor import relu, reshape
from .trainer import TrainConfig, fit
from .tta import adapt, image_batches

logger = logging.getLogger(__name__)

VARIANT_NAMES = ("simple_cnn", "dgq_full", "dgq_no_quantum", "dgq_no_adv",
                 "dgq_no_tta")

REPORT_COLUMNS = (["variant", "seed", "tta"] + list(METRIC_KEYS)
                  + [f"{k}_lo" for k in METRIC_KEYS]
                  + [f"{k}_hi" for k in METRIC_KEYS]
                  + ["domain_variance"])

# rng stream tags for experiment data, disjoint from the trainer's
_STREAM_TRAIN_DATA = 11
_STREAM_TEST_DATA = 12
_STREAM_EVAL_SHIFT = 13


class SimpleCNN:
    """Shallow two-conv baseline: no normalization, no domain branch.

    Exposes the same encode/enhance/classify surface as the full model so
    the one trainer drives both.
    """

    use_quantum = False
    use_adversarial = False

    def __init__(self, input_size: int = 64, classes: int = 2, seed: int = 0):
        if input_size < 8 or input_size % 4:
            raise ConfigError(
                f"input size must be a multiple of 4 and >= 8, got {input_size}"
            )
        rng = np.random.default_rng(seed)
        self.conv1 = Conv2d(1, 16, 3, 1, 1, rng)
        self.conv2 = Conv2d(16, 32, 3, 1, 1, rng)
        side = input_size // 4
        self.fc = Linear(32 * side * side, classes, rng)
        self.input_size = input_size

    def encode(self, x, mode: str = "train", momentum=None):
        # mode is accepted for interface parity; there are no statistics
        if x.ndim != 4 or x.shape[2] != self.input_size or x.shape[3] != self.input_size:
            raise ShapeError(
                f"expected (N, 1, {self.input_size}, {self.input_size}), got {x.shape}"
            )
        h = maxpool2d(relu(self.conv1(x)))
        h = maxpool2d(relu(self.conv2(h)))
        return reshape(h, (x.shape[0], -1))

    def enhance(self, h):
        return h

    def classify(self, h):
        return self.fc(h)

    def forward(self, x, mode="eval", lam=0.0):
        logits = self.classify(self.encode(x, mode))
        return logits, None, None, None

    def parameters(self):
        return (self.conv1.parameters("conv1") + self.conv2.parameters("conv2")
                + self.fc.parameters("fc"))

    def named_arrays(self):
        return [(name, t.data) for name, t in self.parameters()]

    def load_arrays(self, arrays: Dict[str, np.ndarray]):
        params = dict(self.parameters())
        for name, value in arrays.items():
            if name not in params:
                raise ConfigError(f"checkpoint array {name} matches no model state")
            if params[name].data.shape != value.shape:
                raise ShapeError(f"checkpoint array {name} shape mismatch")
            params[name].data = value.astype(np.float64).copy()
        missing = [n for n in params if n not in arrays]
        if missing:
            raise ConfigError(f"checkpoint is missing arrays: {missing[:4]}")

    def parameter_count(self):
        return sum(t.data.size for _, t in self.parameters())

    def zero_grad(self):
        for _, t in self.parameters():
            t.zero_grad()


def build_variant(name: str, config: TrainConfig, image_size: int = 64,
                  model_kwargs: Optional[dict] = None):
    """Model plus adjusted TrainConfig for a named variant.

    The returned config carries the ablation flags; dgq_no_tta trains
    exactly like dgq_full and differs only at evaluation time.
    """
    if name not in VARIANT_NAMES:
        raise ConfigError(f"unknown variant {name!r}, expected one of {VARIANT_NAMES}")
    kwargs = dict(model_kwargs or {})
    if name == "simple_cnn":
        model = SimpleCNN(input_size=image_size, seed=config.seed)
        return model, replace(config, w_dom=0.0, w_feat=0.0,
                              use_quantum=False, use_adversarial=False)
    flags = dict(
        dgq_full=(True, True),
        dgq_no_quantum=(False, True),
        dgq_no_adv=(True, False),
        dgq_no_tta=(True, True),
    )[name]
    model = DGQModel(use_quantum=flags[0], use_adversarial=flags[1],
                     seed=config.seed, **kwargs)
    return model, replace(config, use_quantum=flags[0], use_adversarial=flags[1])


def variant_applies_tta(name: str) -> bool:
    return name != "dgq_no_tta"


def _train_signature(name: str, config: TrainConfig) -> tuple:
    """Two variants with equal signatures produce bit-identical training."""
    if name == "simple_cnn":
        return ("simple_cnn", config.seed)
    return ("dgq", config.use_quantum, config.use_adversarial, config.seed)


@dataclass
class ComparisonRow:
    variant: str
    seed: int
    tta: bool
    metrics: dict
    lower: dict
    upper: dict
    domain_variance: float
    per_domain: Dict[int, dict] = field(default_factory=dict)

    def as_flat(self):
        row = dict(variant=self.variant, seed=self.seed, tta=int(self.tta))
        row.update({k: self.metrics.get(k) for k in METRIC_KEYS})
        row.update({f"{k}_lo": self.lower.get(k) for k in METRIC_KEYS})
        row.update({f"{k}_hi": self.upper.get(k) for k in METRIC_KEYS})
        row["domain_variance"] = self.domain_variance
        return row


def evaluate_on_unseen(model, clean_test, data_seed: int, seed: int,
                       n_boot: int = 500, eval_seed: int = 0,
                       apply_tta: bool = False, eta: float = 0.1,
                       passes: int = 1, tta_batch: int = 32,
                       train_domains: Optional[Sequence[DomainSpec]] = None,
                       unseen: Optional[DomainSpec] = None):
    """Metrics on the unseen-domain render of the held-out set, plus the
    per-domain breakdown over all four domains."""
    if unseen is None:
        unseen = UNSEEN_DOMAIN
    specs = list(TRAIN_DOMAINS if train_domains is None else train_domains)
    specs.append(unseen)
    rendered = {
        spec.domain: shift_to_domain(
            clean_test, spec,
            np.random.default_rng([data_seed, _STREAM_EVAL_SHIFT, seed, spec.domain]))
        for spec in specs
    }
    target = rendered[unseen.domain]
    if apply_tta:
        model = adapt(model, image_batches([s.image for s in target], tta_batch),
                      eta=eta, passes=passes)
    labels = np.array([s.label for s in target], dtype=np.int64)
    scores = predict_scores(model, [s.image for s in target])
    boot = bootstrap_ci(labels, scores, n_boot=n_boot, seed=eval_seed)
    domains = per_domain_report(model, rendered)
    return boot, domains


def run_comparison(variants: Sequence[str], seeds: Sequence[int],
                   config: TrainConfig, out_dir,
                   train_count: int = 600, test_count: int = 120,
                   image_size: int = 64, data_seed: int = 0,
                   pos_fraction: float = 0.5, n_boot: int = 500,
                   eval_seed: int = 0, tta_eta: float = 0.1,
                   tta_passes: int = 1, tta_batch: int = 32,
                   model_kwargs: Optional[dict] = None,
                   train_domains: Optional[Sequence[DomainSpec]] = None,
                   unseen: Optional[DomainSpec] = None) -> List[ComparisonRow]:
    """Train every variant on every seed and evaluate on the unseen domain
    with and without TTA.  Partial results are flushed if a variant fails.
    """
    if len(variants) < 1:
        raise ConfigError("need at least one variant")
    unknown = [v for v in variants if v not in VARIANT_NAMES]
    if unknown:
        raise ConfigError(f"unknown variants {unknown}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows: List[ComparisonRow] = []
    trained: Dict[tuple, object] = {}
    try:
        for seed in seeds:
            train_seed = int(np.random.SeedSequence(
                [data_seed, _STREAM_TRAIN_DATA, seed]).generate_state(1)[0])
            test_seed = int(np.random.SeedSequence(
                [data_seed, _STREAM_TEST_DATA, seed]).generate_state(1)[0])
            clean_train = generate_clean(train_count, pos_fraction,
                                         seed=train_seed, size=image_size)
            clean_test = generate_clean(test_count, pos_fraction,
                                        seed=test_seed, size=image_size,
                                        id_offset=train_count)
            for name in variants:
                model, cfg = build_variant(name, replace(config, seed=seed),
                                           image_size, model_kwargs)
                key = _train_signature(name, cfg)
                if key in trained:
                    model = trained[key]
                    logger.info("reusing trained model for %s seed %d", name, seed)
                else:
                    logger.info("training %s seed %d", name, seed)
                    fit(model, cfg, clean_train,
                        TRAIN_DOMAINS if train_domains is None else train_domains,
                        log_path=out_dir / f"{name}_seed{seed}_train.csv",
                        checkpoint_path=out_dir / f"{name}_seed{seed}.dgq")
                    trained[key] = model
                tta_states = [False, True] if variant_applies_tta(name) else [False]
                for tta in tta_states:
                    boot, domains = evaluate_on_unseen(
                        model, clean_test, data_seed, seed, n_boot=n_boot,
                        eval_seed=eval_seed, apply_tta=tta, eta=tta_eta,
                        passes=tta_passes, tta_batch=tta_batch,
                        train_domains=train_domains, unseen=unseen)
                    rows.append(ComparisonRow(
                        variant=name, seed=seed, tta=tta,
                        metrics=boot.point.as_dict(),
                        lower=boot.lower, upper=boot.upper,
                        domain_variance=domains.accuracy_variance,
                        per_domain={d: m.as_dict()
                                    for d, m in domains.rows.items()},
                    ))
    finally:
        if rows:
            write_comparison(out_dir, rows)
    return rows


def write_comparison(out_dir, rows: List[ComparisonRow]) -> None:
    out_dir = Path(out_dir)
    with open(out_dir / "comparison.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.as_flat())
    with open(out_dir / "per_domain.csv", "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["variant", "seed", "tta", "domain"] + list(METRIC_KEYS))
        for row in rows:
            for domain, metrics in sorted(row.per_domain.items()):
                writer.writerow([row.variant, row.seed, int(row.tta), domain]
                                + [metrics[k] for k in METRIC_KEYS])
    payload = [dict(row.as_flat(), per_domain=row.per_domain) for row in rows]
    with open(out_dir / "comparison.json", "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
