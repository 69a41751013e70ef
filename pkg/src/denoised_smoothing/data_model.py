"""
Synthetic data model: Gaussian mixtures, labeled mixtures and points.

The mixture is the stand-in for the data distribution. It has a closed-form
posterior mean under diffusion noise and a closed-form Bayes classifier.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from denoised_smoothing.errors import DimensionMismatchError, DomainError

logger = logging.getLogger(__name__)

_WEIGHT_TOLERANCE = 1e-12


def _frozen_array(values, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise DomainError(f"Invalid {name}: expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """
    Isotropic Gaussian mixture sum_k w_k N(mu_k, tau^2 I) on [-1, 1]^d.

    Attributes:
        weights: Component weights, shape (K,), summing to 1
        means: Component means, shape (K, d), inside the input cube
        tau: Shared component standard deviation
    """

    weights: np.ndarray
    means: np.ndarray
    tau: float

    def __post_init__(self):
        weights = _frozen_array(self.weights, 1, 'weights')
        means = _frozen_array(self.means, 2, 'means')
        object.__setattr__(self, 'weights', weights)
        object.__setattr__(self, 'means', means)
        object.__setattr__(self, 'tau', float(self.tau))

        if len(weights) != len(means) or len(weights) == 0:
            raise DomainError(
                f"Invalid mixture: {len(weights)} weights for {len(means)} means"
            )
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > _WEIGHT_TOLERANCE:
            raise DomainError(
                f"Invalid weights: {weights.tolist()}. Must be nonnegative and sum to 1"
            )
        if np.any(np.abs(means) > 1.0):
            raise DomainError("Invalid means: all coordinates must lie in [-1, 1]")
        if not self.tau > 0:
            raise DomainError(f"Invalid tau: {self.tau}. Must be positive")

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def K(self) -> int:
        return self.means.shape[0]

    def check_dim(self, x: np.ndarray, what: str = 'input') -> np.ndarray:
        """Return x as a float array whose last axis matches the model dimension."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 0 or x.shape[-1] != self.d:
            raise DimensionMismatchError(self.d, x.shape[-1] if x.ndim else 0, what)
        return x

    def to_dict(self) -> Dict[str, Any]:
        return {'weights': self.weights.tolist(), 'means': self.means.tolist(), 'tau': self.tau}


@dataclass(frozen=True, eq=False)
class LabeledMixture:
    """Mixture whose components carry class labels; several components may share one."""

    model: MixtureModel
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, 'labels', labels)
        if labels.shape != (self.model.K,):
            raise DomainError(
                f"Invalid labels: {labels.tolist()}. Need one label per component ({self.model.K})"
            )
        if np.any(labels < 0) or np.any(labels >= self.n_classes):
            raise DomainError(f"Invalid labels: {labels.tolist()}. Must lie in [0, {self.n_classes})")
        missing = sorted(set(range(self.n_classes)) - set(labels.tolist()))
        if missing:
            raise DomainError(f"Invalid labels: classes {missing} own no component")

    @property
    def d(self) -> int:
        return self.model.d

    def class_centroids(self) -> np.ndarray:
        """Weight-averaged component mean of every class, shape (C, d)."""
        centroids = np.zeros((self.n_classes, self.d))
        for c in range(self.n_classes):
            members = self.labels == c
            w = self.model.weights[members]
            mu = self.model.means[members]
            if w.sum() > 0:
                centroids[c] = w @ mu / w.sum()
            else:
                centroids[c] = mu.mean(axis=0)
        return centroids

    def to_dict(self) -> Dict[str, Any]:
        data = self.model.to_dict()
        data.update({'labels': self.labels.tolist(), 'n_classes': self.n_classes})
        return data


@dataclass(frozen=True, eq=False)
class Point:
    """A data vector in [-1, 1]^d with an optional true label."""

    x: np.ndarray
    true_label: Optional[int] = None
    id: str = ''

    def __post_init__(self):
        x = _frozen_array(self.x, 1, 'point')
        object.__setattr__(self, 'x', x)
        if np.any(np.abs(x) > 1.0):
            raise DomainError(f"Invalid point {self.id!r}: coordinates must lie in [-1, 1]")
        if self.true_label is not None:
            object.__setattr__(self, 'true_label', int(self.true_label))

    def to_dict(self) -> Dict[str, Any]:
        return {'id': self.id, 'x': self.x.tolist(), 'true_label': self.true_label}


def sample_points(lm: LabeledMixture, size: int, seed: int, prefix: str = 'p') -> List[Point]:
    """
    Draw a labeled dataset from the mixture.

    Draws are clipped to the input cube; the label is the class of the
    component that generated the draw.
    """
    if size < 0:
        raise DomainError(f"Invalid dataset size: {size}. Must be nonnegative")
    rng = np.random.default_rng(seed)
    components = rng.choice(lm.model.K, size=size, p=lm.model.weights)
    draws = lm.model.means[components] + lm.model.tau * rng.standard_normal((size, lm.d))
    draws = np.clip(draws, -1.0, 1.0)
    width = max(5, len(str(size)))
    return [
        Point(x=draws[i], true_label=int(lm.labels[components[i]]), id=f"{prefix}{i:0{width}d}")
        for i in range(size)
    ]


def random_mixture(d: int, n_components: int, n_classes: int, tau: float, seed: int,
                   spread: float = 0.8) -> LabeledMixture:
    """
    Random labeled mixture: uniform means in [-spread, spread]^d and Dirichlet weights.

    The first n_classes components get classes 0..C-1 so every class is owned.
    """
    if n_components < n_classes:
        raise DomainError(
            f"Invalid mixture size: {n_components} components for {n_classes} classes"
        )
    rng = np.random.default_rng(seed)
    means = rng.uniform(-spread, spread, size=(n_components, d))
    weights = rng.dirichlet(np.ones(n_components))
    weights = weights / weights.sum()
    labels = np.concatenate([
        np.arange(n_classes),
        rng.integers(0, n_classes, size=n_components - n_classes),
    ])
    return LabeledMixture(MixtureModel(weights, means, tau), labels, n_classes)


def product_mixture(d: int, position: float = 0.9, weight: float = 0.85,
                    tau: float = 0.05) -> LabeledMixture:
    """
    Corner mixture with one component per vertex of [-position, position]^d.

    Every coordinate is independently negative with probability `weight`,
    and every component is its own class, so accuracy factorises over axes.
    """
    if not 0 < weight < 1:
        raise DomainError(f"Invalid axis weight: {weight}. Must lie in (0, 1)")
    corners = np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
    means = position * corners
    weights = np.prod(np.where(corners < 0, weight, 1.0 - weight), axis=1)
    weights = weights / weights.sum()
    labels = np.arange(len(corners))
    return LabeledMixture(MixtureModel(weights, means, tau), labels, len(corners))


def points_from_arrays(xs: Sequence[Sequence[float]], labels: Optional[Sequence[Optional[int]]] = None,
                       ids: Optional[Sequence[str]] = None) -> List[Point]:
    """Build points from explicit coordinates."""
    labels = labels if labels is not None else [None] * len(xs)
    ids = ids if ids is not None else [f"p{i:05d}" for i in range(len(xs))]
    return [Point(x=x, true_label=y, id=i) for x, y, i in zip(xs, labels, ids)]
