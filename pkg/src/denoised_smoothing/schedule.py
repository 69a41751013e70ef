"""
Diffusion noise schedules and the sigma <-> timestep conversions.

A schedule is described by its cumulative signal factor alpha_bar(t) on
[0, T]. Randomized-smoothing noise of scale sigma applied to an input in
the [-1, 1] convention matches the diffusion forward process at the
timestep where alpha_bar = 1 / (1 + sigma^2), after scaling the noisy
input by sqrt(alpha_bar).
"""
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Union

import numpy as np
from scipy import optimize

from denoised_smoothing.errors import DomainError, UnsatisfiableSigmaError

logger = logging.getLogger(__name__)

SCHEDULE_KINDS = ('cosine', 'linear')

# Relative slack used when deciding whether a lower integer timestep
# already reaches the requested noise level.
_ROUNDING_SLACK = 1e-12
# Relative noise increase from rounding that triggers a warning.
_SHIFT_WARNING = 0.01

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    """
    Immutable description of a diffusion noise schedule.

    Attributes:
        kind: 'cosine' or 'linear'
        T: Number of discrete timesteps
        s: Cosine offset (cosine only)
        beta_min: First beta of the linear ramp (linear only)
        beta_max: Last beta of the linear ramp (linear only)
    """

    kind: str = 'cosine'
    T: int = 1000
    s: float = 0.008
    beta_min: float = 1e-4
    beta_max: float = 0.02

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise DomainError(f"Invalid schedule kind: {self.kind}. Must be one of {SCHEDULE_KINDS}")
        if int(self.T) != self.T or self.T < 1:
            raise DomainError(f"Invalid T: {self.T}. Must be a positive integer")
        if self.kind == 'cosine' and not self.s >= 0:
            raise DomainError(f"Invalid cosine offset s: {self.s}. Must be nonnegative")
        if self.kind == 'linear' and not 0 < self.beta_min <= self.beta_max < 1:
            raise DomainError(
                f"Invalid beta range: [{self.beta_min}, {self.beta_max}]. "
                f"Must satisfy 0 < beta_min <= beta_max < 1"
            )

    def max_sigma(self) -> float:
        """Largest smoothing noise level the schedule can represent (sigma at t = T)."""
        return float(sigma_of_t(self, self.T))

    def to_dict(self) -> dict:
        if self.kind == 'cosine':
            return {'kind': self.kind, 'T': self.T, 's': self.s}
        return {'kind': self.kind, 'T': self.T,
                'beta_min': self.beta_min, 'beta_max': self.beta_max}


@dataclass(frozen=True)
class TimestepSolution:
    """Result of matching a smoothing noise level to a diffusion timestep."""

    t_continuous: float
    t_discrete: int
    alpha_bar: float
    sigma_achieved: float

    def to_dict(self) -> dict:
        return {
            't_continuous': self.t_continuous,
            't_discrete': self.t_discrete,
            'alpha_bar': self.alpha_bar,
            'sigma_achieved': self.sigma_achieved,
        }


ZERO_NOISE = TimestepSolution(t_continuous=0.0, t_discrete=0, alpha_bar=1.0, sigma_achieved=0.0)


@lru_cache(maxsize=16)
def _linear_log_alpha_bar(T: int, beta_min: float, beta_max: float) -> np.ndarray:
    betas = np.linspace(beta_min, beta_max, T, dtype=np.float64)
    table = np.concatenate([[0.0], np.cumsum(np.log1p(-betas))])
    table.setflags(write=False)
    return table


def _check_t(schedule: NoiseSchedule, t: np.ndarray):
    if np.any(~np.isfinite(t)) or np.any(t < 0) or np.any(t > schedule.T):
        raise DomainError(f"Invalid timestep: {t}. Must lie in [0, {schedule.T}]")


def _cosine_f(schedule: NoiseSchedule, t: np.ndarray) -> np.ndarray:
    return np.cos((t / schedule.T + schedule.s) / (1.0 + schedule.s) * (np.pi / 2)) ** 2


def alpha_bar(schedule: NoiseSchedule, t: ArrayLike) -> ArrayLike:
    """
    Cumulative signal factor at timestep t.

    The cosine schedule is evaluated in closed form. The linear schedule is
    the cumulative product of (1 - beta) at integer steps, with log alpha_bar
    interpolated linearly in between.

    Args:
        schedule: Noise schedule
        t: Timestep(s) in [0, T], scalar or array

    Returns:
        alpha_bar in (0, 1], same shape as t

    Raises:
        DomainError: If any t lies outside [0, T]
    """
    t_arr = np.asarray(t, dtype=np.float64)
    _check_t(schedule, t_arr)

    if schedule.kind == 'cosine':
        zero = np.zeros((), dtype=np.float64)
        value = _cosine_f(schedule, t_arr) / _cosine_f(schedule, zero)
    else:
        table = _linear_log_alpha_bar(schedule.T, schedule.beta_min, schedule.beta_max)
        value = np.exp(np.interp(t_arr, np.arange(schedule.T + 1), table))

    if value.ndim == 0:
        return float(value)
    return value


def sigma_of_t(schedule: NoiseSchedule, t: ArrayLike) -> ArrayLike:
    """Smoothing noise level sqrt((1 - alpha_bar) / alpha_bar) at timestep t."""
    a = np.asarray(alpha_bar(schedule, t))
    value = np.sqrt((1.0 - a) / a)
    if value.ndim == 0:
        return float(value)
    return value


def _check_sigma(schedule: NoiseSchedule, sigma: float) -> float:
    sigma = float(sigma)
    if not math.isfinite(sigma) or sigma < 0:
        raise DomainError(f"Invalid sigma: {sigma}. Must be a finite nonnegative number")
    max_sigma = schedule.max_sigma()
    if sigma > max_sigma:
        raise UnsatisfiableSigmaError(sigma, max_sigma)
    return sigma


def closed_form_timestep(schedule: NoiseSchedule, sigma: float) -> float:
    """
    Continuous timestep whose cosine-schedule noise equals sigma.

    Solves cos^2(u) / cos^2(u_0) = 1 / (1 + sigma^2) for t analytically.
    """
    if schedule.kind != 'cosine':
        raise DomainError(f"Invalid schedule kind for closed form: {schedule.kind}. Must be 'cosine'")
    sigma = _check_sigma(schedule, sigma)
    s = schedule.s
    csc = 1.0 / math.sin(math.pi / (2.0 + 2.0 * s))
    arg = min(1.0, 1.0 / (math.sqrt(1.0 + sigma * sigma) * csc))
    t = schedule.T * (1.0 - 2.0 * (1.0 + s) * math.asin(arg) / math.pi)
    return min(max(t, 0.0), float(schedule.T))


def bisect_timestep(schedule: NoiseSchedule, sigma: float, xtol: float = 1e-12) -> float:
    """
    Continuous timestep whose noise equals sigma, found by bisection.

    Works for any monotone schedule. The bracket is [0, T] and the root of
    log alpha_bar(t) + log(1 + sigma^2) is located to xtol * T in t.
    """
    sigma = _check_sigma(schedule, sigma)
    if sigma == 0.0:
        return 0.0
    target = math.log1p(sigma * sigma)

    def residual(t: float) -> float:
        return math.log(alpha_bar(schedule, t)) + target

    if residual(float(schedule.T)) >= 0.0:
        return float(schedule.T)
    return float(optimize.bisect(residual, 0.0, float(schedule.T),
                                 xtol=xtol * schedule.T, maxiter=200))


def timestep_solution_at(schedule: NoiseSchedule, t: int,
                         t_continuous: Optional[float] = None) -> TimestepSolution:
    """Solution record for an exact integer timestep."""
    t = int(t)
    a = alpha_bar(schedule, t)
    return TimestepSolution(
        t_continuous=float(t if t_continuous is None else t_continuous),
        t_discrete=t,
        alpha_bar=a,
        sigma_achieved=math.sqrt((1.0 - a) / a),
    )


def get_timestep(schedule: NoiseSchedule, sigma: float) -> TimestepSolution:
    """
    Match a smoothing noise level to a diffusion timestep.

    The continuous timestep uses the closed form for cosine schedules and
    bisection otherwise. The discrete timestep is the smallest integer step
    whose noise is at least sigma, so the noise actually injected is never
    smaller than requested.

    Args:
        schedule: Noise schedule
        sigma: Smoothing noise level in the [-1, 1] input convention

    Returns:
        TimestepSolution with alpha_bar and sigma_achieved taken at t_discrete

    Raises:
        DomainError: If sigma is negative or not finite
        UnsatisfiableSigmaError: If sigma exceeds the schedule's maximum
    """
    sigma = _check_sigma(schedule, sigma)
    if sigma == 0.0:
        return ZERO_NOISE

    if schedule.kind == 'cosine':
        t_cont = closed_form_timestep(schedule, sigma)
    else:
        t_cont = bisect_timestep(schedule, sigma)

    t_disc = min(int(math.ceil(t_cont)), schedule.T)
    t_disc = max(t_disc, 1)
    if t_disc > 1 and sigma_of_t(schedule, t_disc - 1) >= sigma * (1.0 - _ROUNDING_SLACK):
        t_disc -= 1
    elif t_disc < schedule.T and sigma_of_t(schedule, t_disc) < sigma * (1.0 - _ROUNDING_SLACK):
        t_disc += 1

    solution = timestep_solution_at(schedule, t_disc, t_continuous=t_cont)
    logger.debug(
        f"sigma={sigma:.6g} -> t*={t_cont:.6f}, t_discrete={t_disc}, "
        f"sigma_achieved={solution.sigma_achieved:.6g}"
    )
    if sigma > 0 and solution.sigma_achieved > sigma * (1.0 + _SHIFT_WARNING):
        logger.warning(
            f"Timestep rounding injects sigma={solution.sigma_achieved:.6g} for requested {sigma:.6g}"
        )
    return solution


def scale_factor(solution: TimestepSolution) -> float:
    """Factor sqrt(alpha_bar) that maps a sigma-noised input onto the diffusion trajectory."""
    return math.sqrt(solution.alpha_bar)
