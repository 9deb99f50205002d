"""Virtual acquisition-domain simulation: photometric perturbations drawn
per sample from per-domain ranges.

A domain is a box of parameter ranges, not a fixed transform; every sample
draws fresh continuous parameters from its domain's box, so two samples
tagged with the same domain almost surely differ.  Three training domains
model device tiers (tight, mainstream, legacy ranges) and a fourth,
deliberately outside the training envelope, is reserved for evaluation.

The pixel pipeline is fixed: brightness scale, contrast about the image
mean, unsharp-mask sharpening, additive Gaussian noise, clamp to [0, 1].
Stages with identity parameters are skipped outright, which keeps identity
parameters bit-exact and consumes no randomness when the noise level is 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import ConfigError
from .synthgen import Sample


@dataclass(frozen=True)
class ShiftParams:
    brightness: float
    contrast: float
    sharpen: float
    noise: float

    def __post_init__(self):
        if self.brightness <= 0 or self.contrast <= 0:
            raise ConfigError(
                f"brightness and contrast must be positive, got "
                f"({self.brightness}, {self.contrast})"
            )
        if self.sharpen < 0 or self.noise < 0:
            raise ConfigError(
                f"sharpen and noise must be nonnegative, got "
                f"({self.sharpen}, {self.noise})"
            )


def _as_subranges(value) -> Tuple[Tuple[float, float], ...]:
    """Normalize (lo, hi) or ((lo, hi), (lo, hi), ...) to a tuple of pairs."""
    seq = tuple(value)
    if len(seq) == 2 and not isinstance(seq[0], (tuple, list)):
        seq = (seq,)
    out = []
    for pair in seq:
        lo, hi = float(pair[0]), float(pair[1])
        if lo > hi:
            raise ConfigError(f"range [{lo}, {hi}] has min > max")
        out.append((lo, hi))
    if not out:
        raise ConfigError("empty range list")
    return tuple(out)


@dataclass(frozen=True)
class DomainSpec:
    """Parameter ranges for one virtual domain.

    ``brightness`` may be a union of sub-ranges (the unseen domain brackets
    the training envelope from both sides); the sub-range is then chosen by
    a fair coin before the uniform draw.
    """

    domain: int
    brightness: Tuple[Tuple[float, float], ...]
    contrast: Tuple[float, float]
    sharpen: Tuple[float, float]
    noise: Tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "brightness", _as_subranges(self.brightness))
        for name in ("contrast", "sharpen", "noise"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} range [{lo}, {hi}] has min > max")
            object.__setattr__(self, name, (float(lo), float(hi)))


TRAIN_DOMAINS: List[DomainSpec] = [
    DomainSpec(0, (0.95, 1.05), (0.95, 1.05), (0.0, 0.2), (0.0, 0.01)),
    DomainSpec(1, (0.85, 1.15), (0.80, 1.20), (0.0, 0.5), (0.01, 0.03)),
    DomainSpec(2, (0.70, 1.30), (0.60, 1.40), (0.5, 1.0), (0.03, 0.08)),
]

UNSEEN_DOMAIN = DomainSpec(
    3, ((0.60, 0.80), (1.20, 1.40)), (0.50, 0.70), (0.8, 1.2), (0.06, 0.10)
)


def sample_params(spec: DomainSpec, rng: np.random.Generator) -> ShiftParams:
    """Draw one independent uniform value per parameter from the spec's box."""
    ranges = spec.brightness
    if len(ranges) > 1:
        lo, hi = ranges[int(rng.integers(len(ranges)))]
    else:
        lo, hi = ranges[0]
    b = float(rng.uniform(lo, hi))
    c = float(rng.uniform(*spec.contrast))
    s = float(rng.uniform(*spec.sharpen))
    v = float(rng.uniform(*spec.noise))
    return ShiftParams(brightness=b, contrast=c, sharpen=s, noise=v)


def _blur3(x: np.ndarray) -> np.ndarray:
    """Separable 3x3 binomial blur ([1 2 1] twice, /16), reflect padding."""
    xp = np.pad(x, 1, mode="reflect")
    rows = (xp[:-2, :] + 2.0 * xp[1:-1, :] + xp[2:, :]) * 0.25
    return (rows[:, :-2] + 2.0 * rows[:, 1:-1] + rows[:, 2:]) * 0.25


def apply_shift(x: np.ndarray, p: ShiftParams, rng: np.random.Generator = None) -> np.ndarray:
    """Transform one image; stages run in fixed order, identity stages are
    skipped so (1, 1, 0, 0) returns the pixels untouched and a zero noise
    level draws nothing from the rng."""
    out = x
    if p.brightness != 1.0:
        out = out * p.brightness
    if p.contrast != 1.0:
        m = out.mean()
        out = (out - m) * p.contrast + m
    if p.sharpen != 0.0:
        out = out + p.sharpen * (out - _blur3(out))
    if p.noise != 0.0:
        if rng is None:
            raise ConfigError("noise level > 0 requires an rng")
        out = out + p.noise * rng.standard_normal(out.shape)
    return np.clip(out, 0.0, 1.0)


def tag_batch(samples: Sequence[Sample], specs: Sequence[DomainSpec],
              rng: np.random.Generator) -> List[Sample]:
    """Assign each sample a uniformly random domain, draw fresh params, and
    apply the shift.  Returns new samples; the inputs are left untouched."""
    if len(specs) < 2:
        raise ConfigError(f"multi-domain tagging needs >= 2 domain specs, got {len(specs)}")
    out = []
    for s in samples:
        d = int(rng.integers(len(specs)))
        params = sample_params(specs[d], rng)
        image = apply_shift(s.image, params, rng)
        out.append(Sample(image=image, label=s.label, domain=specs[d].domain, id=s.id))
    return out


def shift_to_domain(samples: Sequence[Sample], spec: DomainSpec,
                    rng: np.random.Generator) -> List[Sample]:
    """Shift every sample into one fixed domain (evaluation sets)."""
    out = []
    for s in samples:
        params = sample_params(spec, rng)
        image = apply_shift(s.image, params, rng)
        out.append(Sample(image=image, label=s.label, domain=spec.domain, id=s.id))
    return out
