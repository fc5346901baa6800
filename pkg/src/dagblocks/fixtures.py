"""Deterministic desk-scale dataset fixtures.

Shipped with the CLI so every end-to-end scenario is reproducible from a seed
without external data. Multi-file fixtures (two-domain-gaussians) return one
dataset per suffix.
"""

from __future__ import annotations

import numpy as np

from .errors import EngineError
from .persistence import Dataset

XOR_POINTS = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=np.float32)
XOR_LABELS = np.array([0, 1, 1, 0], dtype=np.int32)


def make_xor(seed: int = 0) -> Dataset:
    """The four XOR points as the train split, repeated as the test split."""
    samples = np.concatenate([XOR_POINTS, XOR_POINTS])
    labels = np.concatenate([XOR_LABELS, XOR_LABELS])
    return Dataset(samples=samples, labels=labels, num_classes=2, train_count=4)


def make_blobs2d(seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    n = 250
    labels = (np.arange(n) % 2).astype(np.int32)  # interleaved, so any split is balanced
    centers = np.array([[-1.0, -1.0], [1.0, 1.0]], dtype=np.float32)
    samples = centers[labels] + rng.normal(0, 0.4, size=(n, 2)).astype(np.float32)
    return Dataset(
        samples=samples.astype(np.float32),
        labels=labels,
        num_classes=2,
        train_count=200,
    )


def make_digits8x8(seed: int = 0) -> Dataset:
    """Ten noisy prototype glyphs rendered as 1x8x8 maps; linearly separable."""
    rng = np.random.default_rng(seed)
    prototypes = rng.uniform(0.0, 1.0, size=(10, 1, 8, 8)).astype(np.float32)
    n = 600
    labels = (np.arange(n) % 10).astype(np.int32)
    noise = rng.normal(0, 0.1, size=(n, 1, 8, 8)).astype(np.float32)
    samples = prototypes[labels] + noise
    perm = rng.permutation(n)
    return Dataset(
        samples=samples[perm].astype(np.float32),
        labels=labels[perm],
        num_classes=10,
        train_count=500,
    )


def _gaussian_bump(cy: float, cx: float, amplitude: float, sigma: float = 1.3) -> np.ndarray:
    yy, xx = np.mgrid[0:8, 0:8].astype(np.float32)
    return amplitude * np.exp(-(((yy - cy) ** 2) + ((xx - cx) ** 2)) / (2 * sigma**2))


def _domain_gaussians(rng, centers, amplitude, background) -> tuple[np.ndarray, np.ndarray]:
    n = 500
    labels = (np.arange(n) % 2).astype(np.int32)
    maps = np.stack([
        background + _gaussian_bump(*centers[c], amplitude) for c in labels
    ])[:, None, :, :]
    samples = maps + rng.normal(0, 0.05, size=(n, 1, 8, 8))
    perm = rng.permutation(n)
    return samples[perm].astype(np.float32), labels[perm]


def make_two_domain_gaussians(seed: int = 0) -> dict[str, Dataset]:
    """Same two classes rendered under a domain shift (moved, dimmer bumps)."""
    rng = np.random.default_rng(seed)
    src_x, src_y = _domain_gaussians(
        rng, centers=[(2.0, 2.0), (5.0, 5.0)], amplitude=1.0, background=0.0
    )
    tgt_x, tgt_y = _domain_gaussians(
        rng, centers=[(3.0, 2.0), (6.0, 5.0)], amplitude=0.6, background=0.3
    )
    return {
        "source": Dataset(samples=src_x, labels=src_y, num_classes=2, train_count=400),
        "target": Dataset(samples=tgt_x, labels=tgt_y, num_classes=2, train_count=400),
    }


FIXTURE_NAMES = ("xor", "blobs2d", "two-domain-gaussians", "digits8x8-synthetic")


def generate_fixture(name: str, seed: int = 0) -> dict[str, Dataset]:
    """Datasets by suffix ('' for single-file fixtures)."""
    if name == "xor":
        return {"": make_xor(seed)}
    if name == "blobs2d":
        return {"": make_blobs2d(seed)}
    if name == "digits8x8-synthetic":
        return {"": make_digits8x8(seed)}
    if name == "two-domain-gaussians":
        return {f"_{k}": v for k, v in make_two_domain_gaussians(seed).items()}
    raise EngineError("unknown-fixture", f"unknown fixture {name!r}; choose from {list(FIXTURE_NAMES)}")
