"""Synthetic grayscale dataset: smooth anatomy-like backgrounds, half of
them carrying one bright elliptical lesion with a soft, ragged boundary.

Every sample is generated from its own counter-based RNG keyed by
(seed, sample id), so generation is order-independent: sample 17 has the
same pixels whether the dataset is built whole or one image at a time.

Datasets persist as binary PGM (P5, maxval 255) files plus a CSV manifest;
the round trip loses at most half a quantization step (1/510) per pixel.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import ConfigError, DataError

MANIFEST_HEADER = ["path", "label", "domain", "id"]


@dataclass
class Sample:
    image: np.ndarray
    label: int
    domain: int
    id: int


def _sample_rng(seed: int, sample_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, sample_id])))


def _value_noise(rng: np.random.Generator, size: int, cells: int = 8) -> np.ndarray:
    """Smooth noise: a coarse random grid upsampled bilinearly."""
    grid = rng.random((cells + 1, cells + 1))
    pos = np.linspace(0.0, cells, size)
    i0 = np.minimum(pos.astype(int), cells - 1)
    frac = pos - i0
    rows = grid[i0, :] * (1.0 - frac)[:, None] + grid[i0 + 1, :] * frac[:, None]
    return rows[:, i0] * (1.0 - frac)[None, :] + rows[:, i0 + 1] * frac[None, :]


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    """Sum of a few broad Gaussians plus faint value noise, spanning [0.1, 0.8]."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    field = np.zeros((size, size))
    for _ in range(int(rng.integers(3, 7))):
        cx, cy = rng.uniform(0, size, size=2)
        sigma = rng.uniform(0.15, 0.35) * size
        amp = rng.uniform(0.4, 1.0)
        field += amp * np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma ** 2)))
    field += 0.15 * _value_noise(rng, size)
    lo, hi = field.min(), field.max()
    if hi - lo < 1e-12:
        return np.full((size, size), 0.45)
    return 0.1 + 0.7 * (field - lo) / (hi - lo)


def _add_lesion(rng: np.random.Generator, image: np.ndarray) -> np.ndarray:
    """Boost one ellipse: center inside the central 60%, semi-axes 8-25% of
    the width, random orientation, Gaussian falloff, boundary radius
    modulated by +-15% low-order sinusoids."""
    size = image.shape[0]
    cx, cy = rng.uniform(0.2 * size, 0.8 * size, size=2)
    a, b = rng.uniform(0.08 * size, 0.25 * size, size=2)
    phi = rng.uniform(0.0, np.pi)
    amp = rng.uniform(0.25, 0.45)
    w2, w3 = rng.uniform(0.3, 1.0, size=2)
    p2, p3 = rng.uniform(0.0, 2.0 * np.pi, size=2)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    dxr = dx * np.cos(phi) + dy * np.sin(phi)
    dyr = -dx * np.sin(phi) + dy * np.cos(phi)
    u = np.sqrt((dxr / a) ** 2 + (dyr / b) ** 2)
    psi = np.arctan2(dyr, dxr)
    ragged = (w2 * np.sin(2 * psi + p2) + w3 * np.sin(3 * psi + p3)) / (w2 + w3)
    u = u / (1.0 + 0.15 * ragged)
    boost = amp * np.exp(-2.0 * u ** 2)
    return np.clip(image + boost, 0.0, 1.0)


def _label_for(index: int, count: int, pos_fraction: float) -> int:
    # Bresenham-style stratification: exactly floor(count * fraction) positives
    return int(np.floor((index + 1) * pos_fraction) - np.floor(index * pos_fraction))


def generate_clean(count: int, pos_fraction: float = 0.5, seed: int = 0,
                   size: int = 64, id_offset: int = 0) -> List[Sample]:
    """Deterministic stratified dataset of clean (unshifted) samples.

    ``id_offset`` shifts the sample ids so that disjoint splits drawn from
    the same seed never share a per-sample RNG stream.
    """
    if count < 2:
        raise ConfigError(f"dataset needs at least 2 samples, got {count}")
    if not 0.0 < pos_fraction < 1.0:
        raise ConfigError(f"pos_fraction must be in (0, 1), got {pos_fraction}")
    if size < 16:
        raise ConfigError(f"image size must be at least 16, got {size}")

    samples = []
    for i in range(count):
        sid = id_offset + i
        rng = _sample_rng(seed, sid)
        label = _label_for(i, count, pos_fraction)
        image = _background(rng, size)
        if label == 1:
            image = _add_lesion(rng, image)
        samples.append(Sample(image=image, label=label, domain=-1, id=sid))
    return samples


def write_pgm(path: Path, image: np.ndarray) -> None:
    """Binary PGM, maxval 255, pixel byte = round(intensity * 255)."""
    h, w = image.shape
    data = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path: Path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    # header = magic, width, height, maxval as whitespace-separated tokens,
    # with optional '#' comment lines
    tokens = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(raw):
            raise DataError(f"malformed PGM header in {path}: truncated")
        ch = raw[pos:pos + 1]
        if ch == b"#":
            pos = raw.find(b"\n", pos)
            if pos == -1:
                raise DataError(f"malformed PGM header in {path}: unterminated comment")
            pos += 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(raw) and not raw[end:end + 1].isspace():
                end += 1
            tokens.append(raw[pos:end])
            pos = end
    pos += 1
    if tokens[0] != b"P5":
        raise DataError(f"malformed PGM header in {path}: magic {tokens[0]!r}, expected P5")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise DataError(f"malformed PGM header in {path}: non-numeric dimensions") from exc
    if maxval != 255:
        raise DataError(f"unsupported PGM maxval {maxval} in {path}, expected 255")
    body = raw[pos:pos + w * h]
    if len(body) != w * h:
        raise DataError(f"malformed PGM body in {path}: expected {w * h} bytes, got {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def save_dataset(samples: List[Sample], root) -> Path:
    """Write PGM files plus manifest.csv; returns the manifest path."""
    root = Path(root)
    images_dir = root / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    manifest = root / "manifest.csv"
    with open(manifest, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for s in samples:
            rel = f"images/{s.id:06d}.pgm"
            write_pgm(root / rel, s.image)
            writer.writerow([rel, s.label, s.domain, s.id])
    return manifest


def load_dataset(root) -> List[Sample]:
    root = Path(root)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise DataError(f"no manifest.csv under {root}")
    with open(manifest, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"manifest {manifest} is empty, expected a header row") from None
        if header != MANIFEST_HEADER:
            raise DataError(f"manifest header {header} != {MANIFEST_HEADER}")
        samples = []
        seen_ids = set()
        for row in reader:
            if len(row) != 4:
                raise DataError(f"manifest row {row} has {len(row)} fields, expected 4")
            rel, label_s, domain_s, id_s = row
            path = root / rel
            if not path.exists():
                raise DataError(f"manifest references missing file {path}")
            try:
                label, domain, sid = int(label_s), int(domain_s), int(id_s)
            except ValueError as exc:
                raise DataError(f"manifest row {row}: non-integer field") from exc
            if label not in (0, 1):
                raise DataError(f"label {label} outside {{0,1}} for id {sid}")
            if sid in seen_ids:
                raise DataError(f"duplicate sample id {sid} in manifest")
            seen_ids.add(sid)
            samples.append(Sample(image=read_pgm(path), label=label, domain=domain, id=sid))
    return samples
