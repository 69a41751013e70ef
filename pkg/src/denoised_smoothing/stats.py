"""
Statistics of randomized smoothing.

Exact binomial confidence bounds, the two-sided binomial test used by
PREDICT, the Gaussian quantile and the certified l2 radius rule
R = sigma * Phi^-1(p_lower).
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, special, stats

from denoised_smoothing.errors import DomainError

logger = logging.getLogger(__name__)

ABSTAIN = -1

# A bound of 1 has no finite radius in double precision; it is capped here.
P_LOWER_CAP = 1.0 - 1e-12


@dataclass(frozen=True)
class CertifyParams:
    """
    Parameters of one PREDICT/CERTIFY invocation.

    sigma is in the [-1, 1] input convention. batch_size fixes how noise
    samples are split into independently seeded blocks and therefore must
    stay constant for results to be reproducible.
    """

    sigma: float
    n0: int = 100
    n: int = 100_000
    alpha_fail: float = 0.001
    eta: float = 0.001
    batch_size: int = 1000

    def __post_init__(self):
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise DomainError(f"Invalid sigma: {self.sigma}. Must be positive")
        if self.n0 < 1 or self.n < 1:
            raise DomainError(f"Invalid sample counts: n0={self.n0}, n={self.n}. Must be positive")
        if self.n0 > self.n:
            raise DomainError(f"Invalid sample counts: n0={self.n0} exceeds n={self.n}")
        for name in ('alpha_fail', 'eta'):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise DomainError(f"Invalid {name}: {value}. Must lie in (0, 1)")
        if self.batch_size < 1:
            raise DomainError(f"Invalid batch_size: {self.batch_size}. Must be positive")

    def with_sigma(self, sigma: float) -> 'CertifyParams':
        return replace(self, sigma=float(sigma))


@dataclass
class CertificationResult:
    """Outcome of CERTIFY for one point."""

    label: int
    p_lower: float
    radius_pm1: float
    radius_01: float
    counts: Tuple[int, ...] = field(default_factory=tuple)

    @property
    def abstained(self) -> bool:
        return self.label == ABSTAIN

    def to_dict(self) -> dict:
        return {
            'label': self.label,
            'p_lower': self.p_lower,
            'radius_pm1': self.radius_pm1,
            'radius_01': self.radius_01,
            'counts': list(self.counts),
        }


def _check_counts(successes, trials, allow_empty: bool = False):
    if int(successes) != successes or int(trials) != trials:
        raise DomainError(f"Invalid counts: {successes}/{trials}. Must be integers")
    if trials < (0 if allow_empty else 1) or not 0 <= successes <= trials:
        raise DomainError(f"Invalid counts: {successes}/{trials}. Need 0 <= successes <= trials")


def clopper_pearson_lower(successes: int, trials: int, alpha_fail: float) -> float:
    """
    One-sided (1 - alpha_fail) Clopper-Pearson lower bound on a binomial proportion.

    The bound is the p solving P[Bin(trials, p) >= successes] = alpha_fail,
    located by bisection on the exact binomial tail.

    Args:
        successes: Number of successes observed
        trials: Number of trials (>= 1)
        alpha_fail: Failure probability in (0, 1)

    Returns:
        Lower confidence bound in [0, 1]

    Raises:
        DomainError: On invalid counts or alpha_fail outside (0, 1)
    """
    _check_counts(successes, trials)
    if not 0 < alpha_fail < 1:
        raise DomainError(f"Invalid alpha_fail: {alpha_fail}. Must lie in (0, 1)")
    k, n = int(successes), int(trials)

    if k == 0:
        return 0.0
    if k == n:
        return alpha_fail ** (1.0 / n)

    log_alpha = math.log(alpha_fail)

    def tail_excess(p: float) -> float:
        return float(stats.binom.logsf(k - 1, n, p)) - log_alpha

    return float(optimize.bisect(tail_excess, 0.0, 1.0, xtol=1e-15, maxiter=200))


def binom_p_test(n_a: int, n_total: int, p: float) -> float:
    """
    Two-sided exact binomial test.

    Twice the smaller tail probability of the observation, capped at 1.
    """
    _check_counts(n_a, n_total, allow_empty=True)
    if not 0 < p < 1:
        raise DomainError(f"Invalid success probability: {p}. Must lie in (0, 1)")
    lower = stats.binom.cdf(n_a, n_total, p)
    upper = stats.binom.sf(n_a - 1, n_total, p)
    return float(min(1.0, 2.0 * min(lower, upper)))


def gaussian_quantile(p: float) -> float:
    """Inverse standard normal CDF."""
    if not 0 < p < 1:
        raise DomainError(f"Invalid probability: {p}. Must lie strictly inside (0, 1)")
    return float(special.ndtri(p))


def certified_radius(sigma: float, p_lower: float) -> float:
    """
    Certified l2 radius sigma * Phi^-1(p_lower), or 0 when p_lower <= 1/2.

    p_lower is capped at P_LOWER_CAP, so a bound of 1 gives the largest
    finite radius.

    Raises:
        DomainError: If p_lower lies outside [0, 1]
    """
    if not 0 <= p_lower <= 1:
        raise DomainError(f"Invalid p_lower: {p_lower}. Must lie in [0, 1]")
    p_lower = min(float(p_lower), P_LOWER_CAP)
    if p_lower <= 0.5:
        return 0.0
    return float(sigma * gaussian_quantile(p_lower))


def max_certifiable_radius(params: CertifyParams, sigma: Optional[float] = None) -> float:
    """Largest radius any run with params.n estimation samples can certify."""
    ceiling = clopper_pearson_lower(params.n, params.n, params.alpha_fail)
    return certified_radius(params.sigma if sigma is None else sigma, ceiling)


def top_two(counts: Sequence[int]) -> Tuple[int, Optional[int]]:
    """Indices of the two largest tallies, ties broken toward the lower index."""
    counts = np.asarray(counts)
    order = np.argsort(-counts, kind='stable')
    runner_up = int(order[1]) if len(order) > 1 else None
    return int(order[0]), runner_up


def decide_prediction(counts: Sequence[int], eta: float) -> Tuple[int, float]:
    """
    PREDICT decision from a vote tally.

    Returns:
        (label or ABSTAIN, p-value of the top-two binomial test at 1/2)
    """
    top, runner_up = top_two(counts)
    n_a = int(counts[top])
    n_b = int(counts[runner_up]) if runner_up is not None else 0
    p_value = binom_p_test(n_a, n_a + n_b, 0.5)
    return (top if p_value <= eta else ABSTAIN), p_value


def decide_certification(candidate: int, counts: Sequence[int], sigma: float,
                         alpha_fail: float) -> CertificationResult:
    """
    CERTIFY decision for a candidate class given the estimation tally.

    Only the candidate's own count enters the bound; the label never
    switches to another class.
    """
    counts = tuple(int(c) for c in counts)
    trials = sum(counts)
    p_lower = clopper_pearson_lower(counts[candidate], trials, alpha_fail)
    if p_lower <= 0.5:
        return CertificationResult(ABSTAIN, p_lower, 0.0, 0.0, counts)
    radius = certified_radius(sigma, p_lower)
    return CertificationResult(candidate, p_lower, radius, radius / 2.0, counts)
