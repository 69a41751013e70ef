"""
Denoisers for diffusion-noised inputs.

All estimators use the exact posterior mean E[x | x_t] of a Gaussian-mixture
data model, so differences between strategies reflect the procedure rather
than model error. Every function is vectorised over the leading axes of
its input and returns points clamped to [-1, 1]^d.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import softmax

from denoised_smoothing.data_model import MixtureModel
from denoised_smoothing.errors import DomainError
from denoised_smoothing.schedule import (
    NoiseSchedule,
    TimestepSolution,
    alpha_bar,
    get_timestep,
    scale_factor,
)

logger = logging.getLogger(__name__)

DENOISER_KINDS = (
    'one_shot_posterior_mean',
    'ancestral_multi_step',
    'deterministic_multi_step',
    'identity',
    'mismatched_posterior_mean',
)
LADDER_SPACINGS = ('geometric', 'karras')

DEFAULT_DETERMINISTIC_STEPS = 18
SIGMA_MIN_RATIO = 100.0
KARRAS_RHO = 7.0


@dataclass(frozen=True, eq=False)
class DenoiserSpec:
    """
    Denoising strategy and its parameters.

    Attributes:
        kind: One of DENOISER_KINDS
        model: Mixture used by every posterior-mean estimate (all kinds but identity)
        sigma_train: Noise level the mismatched denoiser is calibrated for
        steps: Number of reverse transitions. Deterministic sampler defaults to 18;
            None for the ancestral chain means every integer timestep from t* to 0
        order: 1 (Euler) or 2 (Heun) for the deterministic sampler
        spacing: 'geometric' or 'karras' sigma ladder for the deterministic sampler
    """

    kind: str
    model: Optional[MixtureModel] = None
    sigma_train: Optional[float] = None
    steps: Optional[int] = None
    order: int = 1
    spacing: str = 'geometric'

    def __post_init__(self):
        if self.kind not in DENOISER_KINDS:
            raise DomainError(f"Invalid denoiser kind: {self.kind}. Must be one of {DENOISER_KINDS}")
        if self.kind != 'identity' and self.model is None:
            raise DomainError(f"Invalid denoiser: kind {self.kind} needs a mixture model")
        if (self.kind == 'mismatched_posterior_mean') != (self.sigma_train is not None):
            raise DomainError("Invalid denoiser: sigma_train is required for, and only for, "
                              "mismatched_posterior_mean")
        if self.sigma_train is not None and not self.sigma_train > 0:
            raise DomainError(f"Invalid sigma_train: {self.sigma_train}. Must be positive")

        multi_step = self.kind in ('ancestral_multi_step', 'deterministic_multi_step')
        if self.steps is not None and not multi_step:
            raise DomainError(f"Invalid denoiser: steps does not apply to kind {self.kind}")
        if self.kind == 'deterministic_multi_step' and self.steps is None:
            object.__setattr__(self, 'steps', DEFAULT_DETERMINISTIC_STEPS)
        if self.steps is not None and (int(self.steps) != self.steps or self.steps < 1):
            raise DomainError(f"Invalid steps: {self.steps}. Must be a positive integer")
        if self.order not in (1, 2):
            raise DomainError(f"Invalid order: {self.order}. Must be 1 or 2")
        if self.spacing not in LADDER_SPACINGS:
            raise DomainError(f"Invalid spacing: {self.spacing}. Must be one of {LADDER_SPACINGS}")

    @property
    def is_stochastic(self) -> bool:
        return self.kind == 'ancestral_multi_step'

    def to_dict(self) -> dict:
        data = {'kind': self.kind}
        if self.sigma_train is not None:
            data['sigma_train'] = self.sigma_train
        if self.steps is not None:
            data['steps'] = self.steps
        if self.kind == 'deterministic_multi_step':
            data.update({'order': self.order, 'spacing': self.spacing})
        return data


def clamp(x: np.ndarray) -> np.ndarray:
    return np.clip(x, -1.0, 1.0)


def _posterior_mean(model: MixtureModel, x_t: np.ndarray, ab: float) -> np.ndarray:
    """Unclamped E[x | x_t] for x_t = sqrt(ab) x + sqrt(1 - ab) eps."""
    sa = math.sqrt(ab)
    tau2 = model.tau * model.tau
    var = ab * tau2 + (1.0 - ab)
    diff = x_t[..., None, :] - sa * model.means
    with np.errstate(divide='ignore'):
        log_w = np.log(model.weights)
    resp = softmax(log_w - np.sum(diff * diff, axis=-1) / (2.0 * var), axis=-1)
    component_means = model.means + (sa * tau2 / var) * diff
    return np.einsum('...k,...kd->...d', resp, component_means)


def posterior_mean(model: MixtureModel, x_t: np.ndarray, solution: TimestepSolution,
                   clamp_output: bool = True) -> np.ndarray:
    """
    Exact posterior mean of the clean point given its diffusion-noised version.

    Args:
        model: Mixture data model
        x_t: Noised point(s) at the solution's timestep, shape (..., d)
        solution: Timestep the noise corresponds to
        clamp_output: Clamp the estimate to the input cube

    Returns:
        Estimate of shape (..., d)

    Raises:
        DimensionMismatchError: If the last axis of x_t is not d
    """
    x_t = model.check_dim(x_t)
    out = _posterior_mean(model, x_t, solution.alpha_bar)
    return clamp(out) if clamp_output else out


def _resolve(schedule: NoiseSchedule, sigma: float,
             solution: Optional[TimestepSolution]) -> TimestepSolution:
    return solution if solution is not None else get_timestep(schedule, sigma)


def one_shot_denoise(spec: DenoiserSpec, x_noised: np.ndarray, sigma: float,
                     schedule: NoiseSchedule,
                     solution: Optional[TimestepSolution] = None) -> np.ndarray:
    """
    Single-application denoiser for a sigma-noised input x + delta.

    The input is scaled by sqrt(alpha_bar(t*)) onto the diffusion trajectory
    and the kind-appropriate estimate is returned. The mismatched kind takes
    its timestep from sigma_train instead of the injected sigma.

    Args:
        spec: Denoiser settings (identity, one-shot or mismatched kinds)
        x_noised: Noised input(s), shape (..., d)
        sigma: Injected noise level in the [-1, 1] convention
        schedule: Noise schedule
        solution: Pre-resolved timestep for sigma, if already known

    Returns:
        Denoised point(s) in [-1, 1]^d

    Raises:
        UnsatisfiableSigmaError: If sigma exceeds the schedule's range
    """
    solution = _resolve(schedule, sigma, solution)
    x_noised = np.asarray(x_noised, dtype=np.float64)
    if spec.kind == 'identity' or solution.t_discrete == 0:
        return clamp(x_noised)

    if spec.kind == 'one_shot_posterior_mean':
        return posterior_mean(spec.model, scale_factor(solution) * x_noised, solution)
    if spec.kind == 'mismatched_posterior_mean':
        trained = get_timestep(schedule, spec.sigma_train)
        return posterior_mean(spec.model, scale_factor(trained) * x_noised, trained)
    raise DomainError(f"Invalid denoiser kind for one-shot denoising: {spec.kind}")


def _ladder(sigma_max: float, steps: int, spacing: str) -> np.ndarray:
    if steps == 1:
        return np.array([sigma_max, 0.0])
    sigma_min = sigma_max / SIGMA_MIN_RATIO
    if spacing == 'geometric':
        sigmas = np.geomspace(sigma_max, sigma_min, steps)
    else:
        ramp = np.linspace(0.0, 1.0, steps)
        max_inv_rho = sigma_max ** (1.0 / KARRAS_RHO)
        min_inv_rho = sigma_min ** (1.0 / KARRAS_RHO)
        sigmas = (max_inv_rho + ramp * (min_inv_rho - max_inv_rho)) ** KARRAS_RHO
    sigmas[0] = sigma_max
    return np.append(sigmas, 0.0)


def sigma_ladder(spec: DenoiserSpec, sigma_max: float) -> np.ndarray:
    """Decreasing noise levels visited by the deterministic sampler, ending at 0."""
    return _ladder(sigma_max, spec.steps, spec.spacing)


def _variance_exploding_denoiser(model: MixtureModel, y: np.ndarray, s: float) -> np.ndarray:
    # y = x + s * eps corresponds to alpha_bar = 1 / (1 + s^2) after scaling.
    ab = 1.0 / (1.0 + s * s)
    return _posterior_mean(model, math.sqrt(ab) * y, ab)


def deterministic_denoise(spec: DenoiserSpec, x_noised: np.ndarray, sigma: float,
                          schedule: NoiseSchedule,
                          solution: Optional[TimestepSolution] = None) -> np.ndarray:
    """
    Deterministic probability-flow sampler started at the matched noise level.

    Integrates dy/ds = (y - D(y; s)) / s from the achieved noise level down
    to 0 along the configured sigma ladder, with Euler steps (order 1) or Heun
    corrections (order 2) on every step that does not end at 0.
    """
    solution = _resolve(schedule, sigma, solution)
    y = np.asarray(x_noised, dtype=np.float64)
    if solution.t_discrete == 0:
        return clamp(y)
    model = spec.model
    y = model.check_dim(y)

    sigmas = sigma_ladder(spec, solution.sigma_achieved)
    for s, s_next in zip(sigmas[:-1], sigmas[1:]):
        denoised = _variance_exploding_denoiser(model, y, s)
        d = (y - denoised) / s
        dt = s_next - s
        if spec.order == 1 or s_next == 0:
            y = y + d * dt
        else:
            y_2 = y + d * dt
            d_2 = (y_2 - _variance_exploding_denoiser(model, y_2, s_next)) / s_next
            y = y + (d + d_2) / 2.0 * dt
    return clamp(y)


def ancestral_timesteps(t_star: int, steps: Optional[int]) -> np.ndarray:
    """Decreasing integer timesteps from t_star to 0 visited by the ancestral chain."""
    if steps is None or steps >= t_star:
        return np.arange(t_star, -1, -1)
    grid = np.round(np.linspace(t_star, 0, steps + 1)).astype(np.int64)
    return np.unique(grid)[::-1]


def ancestral_denoise(spec: DenoiserSpec, x_noised: np.ndarray, sigma: float,
                      schedule: NoiseSchedule, rng: np.random.Generator,
                      solution: Optional[TimestepSolution] = None) -> np.ndarray:
    """
    Stochastic reverse diffusion chain from t* down to 0.

    Every transition t -> t_prev draws x_{t_prev} from the Gaussian
    posterior q(x_{t_prev} | x_t, x0_hat), with x0_hat the clamped posterior
    mean at t. Skipped timesteps use the respaced form of the same posterior.

    Args:
        spec: Ancestral denoiser settings
        x_noised: Noised input(s), shape (..., d)
        sigma: Injected noise level
        schedule: Noise schedule
        rng: Random stream for the fresh Gaussian noise
        solution: Pre-resolved timestep for sigma

    Returns:
        Final sample in [-1, 1]^d
    """
    solution = _resolve(schedule, sigma, solution)
    x = np.asarray(x_noised, dtype=np.float64)
    if solution.t_discrete == 0:
        return clamp(x)
    model = spec.model
    x = model.check_dim(x)

    timesteps = ancestral_timesteps(solution.t_discrete, spec.steps)
    alpha_bars = np.asarray(alpha_bar(schedule, timesteps.astype(np.float64)))
    x_t = math.sqrt(solution.alpha_bar) * x
    for ab_t, ab_prev in zip(alpha_bars[:-1], alpha_bars[1:]):
        x0_hat = clamp(_posterior_mean(model, x_t, ab_t))
        alpha_step = ab_t / ab_prev
        beta_step = 1.0 - alpha_step
        coef_x0 = math.sqrt(ab_prev) * beta_step / (1.0 - ab_t)
        coef_xt = math.sqrt(alpha_step) * (1.0 - ab_prev) / (1.0 - ab_t)
        variance = beta_step * (1.0 - ab_prev) / (1.0 - ab_t)
        x_t = coef_x0 * x0_hat + coef_xt * x_t
        if variance > 0:
            x_t = x_t + math.sqrt(variance) * rng.standard_normal(x_t.shape)
    return clamp(x_t)


def denoise(spec: DenoiserSpec, x_noised: np.ndarray, sigma: float, schedule: NoiseSchedule,
            rng: Optional[np.random.Generator] = None,
            solution: Optional[TimestepSolution] = None) -> np.ndarray:
    """Dispatch to the estimator for spec.kind."""
    if spec.kind == 'ancestral_multi_step':
        if rng is None:
            raise DomainError("Invalid call: the ancestral denoiser needs a random stream")
        return ancestral_denoise(spec, x_noised, sigma, schedule, rng, solution)
    if spec.kind == 'deterministic_multi_step':
        return deterministic_denoise(spec, x_noised, sigma, schedule, solution)
    return one_shot_denoise(spec, x_noised, sigma, schedule, solution)


def evaluation_count(spec: DenoiserSpec, schedule: NoiseSchedule, sigma: float) -> int:
    """Number of posterior-mean evaluations one denoise call performs."""
    solution = get_timestep(schedule, sigma)
    if spec.kind == 'identity' or solution.t_discrete == 0:
        return 0
    if spec.kind == 'ancestral_multi_step':
        return len(ancestral_timesteps(solution.t_discrete, spec.steps)) - 1
    if spec.kind == 'deterministic_multi_step':
        return spec.steps if spec.order == 1 else 2 * spec.steps - 1
    return 1
