"""Deterministic synthetic classification tasks for desk-scale experiments.

Each task regenerates bit-identically from (name, seed): the class
geometry (means, covariances, boundary shapes) is a fixed constant of the
task, and the seed only drives sampling noise and the shuffle that
produces the disjoint 60/20/20 train/val/test split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnknownTask, ValidationError

N_SAMPLES = 1000
SPLIT_FRACTIONS = (0.6, 0.2, 0.2)


@dataclass(frozen=True)
class ToyTask:
    name: str
    seed: int
    d_in: int
    n_classes: int
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    def split(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        if which == "train":
            return self.train_x, self.train_y
        if which == "val":
            return self.val_x, self.val_y
        if which == "test":
            return self.test_x, self.test_y
        raise ValidationError(f"unknown split {which!r}; expected train|val|test")

    def with_permuted_labels(self, mapping: np.ndarray) -> ToyTask:
        """Same features, labels remapped through `mapping` (for sanity tests)."""
        if sorted(mapping.tolist()) != list(range(self.n_classes)):
            raise ValidationError("mapping must be a permutation of the class indices")
        return ToyTask(
            name=self.name,
            seed=self.seed,
            d_in=self.d_in,
            n_classes=self.n_classes,
            train_x=self.train_x,
            train_y=mapping[self.train_y],
            val_x=self.val_x,
            val_y=mapping[self.val_y],
            test_x=self.test_x,
            test_y=mapping[self.test_y],
        )


# Fixed anisotropic Gaussian-mixture geometry. Mean separations are tuned
# so a linear probe clears 95% while 3-bit weight noise still moves the
# MLP's decision boundary measurably. Features arrive at heterogeneous
# magnitudes (a fixed per-dimension scale spanning ~1000x for the blob
# tasks), which forces first-layer weight rows to span a wide dynamic
# range: exactly the regime where a per-channel low-bit grid crushes the
# small weights and quantization-aware training has something to fix.
_BLOBS_FEATURE_SCALE = np.array([32.0, 8.0, 2.0, 1.0, 0.25, 0.03125])
_PLANE_FEATURE_SCALE = np.array([8.0, 0.25])

_BLOBS_A_MEANS = 0.89 * np.array(
    [
        [2.0, 2.0, 0.0, 0.0, 1.0, -1.0],
        [-2.0, 1.0, 2.0, -1.0, -1.0, 0.0],
        [0.0, -2.0, -2.0, 2.0, 0.0, 1.0],
    ]
)
_BLOBS_A_SCALES = np.array(
    [
        [1.0, 0.6, 1.2, 0.8, 1.0, 0.7],
        [0.7, 1.1, 0.9, 1.0, 0.6, 1.2],
        [1.2, 0.8, 0.7, 1.1, 0.9, 1.0],
    ]
)
_BLOBS_B_MEANS = 0.90 * np.array(
    [
        [1.8, -1.2, 1.0, 0.0, -2.0, 0.5],
        [-1.5, -1.5, -1.0, 1.5, 1.0, 1.0],
        [0.0, 1.8, -1.8, -1.5, 0.0, -1.0],
        [1.2, 1.2, 1.5, 1.2, 1.5, -1.8],
    ]
)
_BLOBS_B_SCALES = np.array(
    [
        [0.9, 1.1, 0.8, 1.2, 1.0, 0.7],
        [1.1, 0.7, 1.2, 0.9, 0.8, 1.0],
        [0.8, 1.0, 1.0, 0.7, 1.2, 0.9],
        [1.0, 0.9, 0.7, 1.0, 1.1, 1.2],
    ]
)


def _gaussian_blobs(rng: np.random.Generator, n: int, means: np.ndarray, scales: np.ndarray):
    n_classes, d_in = means.shape
    labels = np.arange(n) % n_classes
    noise = rng.standard_normal((n, d_in))
    features = (means[labels] + noise * scales[labels]) * _BLOBS_FEATURE_SCALE
    return features, labels


def _moons(rng: np.random.Generator, n: int, noise: float = 0.18):
    labels = np.arange(n) % 2
    t = rng.uniform(0.0, np.pi, size=n)
    x = np.where(labels == 0, np.cos(t), 1.0 - np.cos(t))
    y = np.where(labels == 0, np.sin(t), 0.5 - np.sin(t))
    features = np.stack([x, y], axis=1) + noise * rng.standard_normal((n, 2))
    return features * _PLANE_FEATURE_SCALE, labels


def _xor_grid(rng: np.random.Generator, n: int, noise: float = 0.3):
    base = rng.uniform(-2.0, 2.0, size=(n, 2))
    labels = ((base[:, 0] > 0) ^ (base[:, 1] > 0)).astype(np.int64)
    features = (base + noise * rng.standard_normal((n, 2))) * _PLANE_FEATURE_SCALE
    return features, labels


_GENERATORS = {
    "blobs-A": lambda rng, n: _gaussian_blobs(rng, n, _BLOBS_A_MEANS, _BLOBS_A_SCALES),
    "blobs-B": lambda rng, n: _gaussian_blobs(rng, n, _BLOBS_B_MEANS, _BLOBS_B_SCALES),
    "moons": _moons,
    "xor-grid": _xor_grid,
}


def registered_tasks() -> list[str]:
    return sorted(_GENERATORS)


def make_task(name: str, seed: int) -> ToyTask:
    """Generate a registered task; bit-identical for identical (name, seed)."""
    if name not in _GENERATORS:
        raise UnknownTask(name, registered_tasks())
    rng = np.random.default_rng(np.random.PCG64(seed))
    features, labels = _GENERATORS[name](rng, N_SAMPLES)
    features = features.astype(np.float32)
    labels = labels.astype(np.int64)

    order = rng.permutation(N_SAMPLES)
    features, labels = features[order], labels[order]
    n_train = int(N_SAMPLES * SPLIT_FRACTIONS[0])
    n_val = int(N_SAMPLES * SPLIT_FRACTIONS[1])
    parts = (
        (features[:n_train], labels[:n_train]),
        (features[n_train : n_train + n_val], labels[n_train : n_train + n_val]),
        (features[n_train + n_val :], labels[n_train + n_val :]),
    )
    for x, y in parts:
        x.setflags(write=False)
        y.setflags(write=False)
    return ToyTask(
        name=name,
        seed=seed,
        d_in=features.shape[1],
        n_classes=int(labels.max()) + 1,
        train_x=parts[0][0],
        train_y=parts[0][1],
        val_x=parts[1][0],
        val_y=parts[1][1],
        test_x=parts[2][0],
        test_y=parts[2][1],
    )
