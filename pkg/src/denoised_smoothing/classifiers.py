"""
Label predictors applied to denoised points.

Both classifiers are vectorised over the leading axes of their input and
break ties toward the lowest class index.
"""
import logging
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import logsumexp

from denoised_smoothing.data_model import LabeledMixture
from denoised_smoothing.errors import DomainError

logger = logging.getLogger(__name__)

CLASSIFIER_KINDS = ('bayes', 'nearest_centroid')


def class_log_scores(weights: np.ndarray, means: np.ndarray, tau: float, labels: np.ndarray,
                     n_classes: int, x: np.ndarray) -> np.ndarray:
    """
    Unnormalised log class densities log sum_{k in c} w_k N(x; mu_k, tau^2 I).

    Constant terms shared by every class are dropped, and the weights need
    not sum to one.

    Returns:
        Array of shape x.shape[:-1] + (n_classes,)
    """
    diff = x[..., None, :] - means
    with np.errstate(divide='ignore'):
        log_w = np.log(weights)
    component = log_w - np.sum(diff * diff, axis=-1) / (2.0 * tau * tau)
    scores = np.empty(x.shape[:-1] + (n_classes,))
    for c in range(n_classes):
        scores[..., c] = logsumexp(component[..., labels == c], axis=-1)
    return scores


def _as_label(result: np.ndarray) -> Union[int, np.ndarray]:
    return int(result) if result.ndim == 0 else result


def bayes_classify(lm: LabeledMixture, x: np.ndarray) -> Union[int, np.ndarray]:
    """
    Bayes-optimal class of x under the labeled mixture.

    Args:
        lm: Labeled mixture
        x: Vector of shape (d,) or batch of shape (..., d)

    Returns:
        Class index (int for a single vector, int array for a batch)

    Raises:
        DimensionMismatchError: If the last axis of x is not d
    """
    x = lm.model.check_dim(x)
    scores = class_log_scores(lm.model.weights, lm.model.means, lm.model.tau,
                              lm.labels, lm.n_classes, x)
    return _as_label(np.argmax(scores, axis=-1))


def nearest_centroid_classify(lm: LabeledMixture, x: np.ndarray) -> Union[int, np.ndarray]:
    """Class whose weight-averaged centroid is nearest to x in l2."""
    x = lm.model.check_dim(x)
    centroids = lm.class_centroids()
    diff = x[..., None, :] - centroids
    return _as_label(np.argmin(np.sum(diff * diff, axis=-1), axis=-1))


@dataclass(frozen=True, eq=False)
class MixtureClassifier:
    """
    Picklable classifier bound to a labeled mixture.

    Calling it on a (..., d) array returns the predicted labels.
    """

    lm: LabeledMixture
    kind: str = 'bayes'

    def __post_init__(self):
        if self.kind not in CLASSIFIER_KINDS:
            raise DomainError(f"Invalid classifier kind: {self.kind}. Must be one of {CLASSIFIER_KINDS}")

    @property
    def n_classes(self) -> int:
        return self.lm.n_classes

    def __call__(self, x: np.ndarray) -> Union[int, np.ndarray]:
        if self.kind == 'bayes':
            return bayes_classify(self.lm, x)
        return nearest_centroid_classify(self.lm, x)
