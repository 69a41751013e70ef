"""
Denoised smoothing: noise injection, denoising and classification composed
into a base classifier, with PREDICT and CERTIFY on top of it.

Random numbers come from counter-based substreams keyed by
(master seed, sigma index, point index, stage, block). A block covers
batch_size consecutive samples, so tallies do not depend on how points are
spread over workers.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from denoised_smoothing.classifiers import MixtureClassifier
from denoised_smoothing.data_model import Point
from denoised_smoothing.denoisers import DenoiserSpec, denoise
from denoised_smoothing.errors import EmptyDatasetError, UnsupportedDenoiserError
from denoised_smoothing.run_record import PointResult, RunRecord, SigmaRow
from denoised_smoothing.schedule import NoiseSchedule, TimestepSolution, get_timestep
from denoised_smoothing.stats import (
    CertificationResult,
    CertifyParams,
    decide_certification,
    decide_prediction,
    max_certifiable_radius,
    top_two,
)

logger = logging.getLogger(__name__)

STAGE_SELECTION = 0
STAGE_ESTIMATION = 1
STAGE_PREDICT = 2
STAGE_COMPARE_NOISE = 4
STAGE_COMPARE_CHAIN = 5


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent Philox stream for a (master seed, key...) counter."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True, eq=False)
class SmoothedClassifier:
    """
    Base classifier classify(denoise(x + delta)) plus the schedule it runs on.

    The smoothed prediction is the majority vote of this base classifier
    under Gaussian noise.
    """

    denoiser: DenoiserSpec
    classifier: MixtureClassifier
    schedule: NoiseSchedule

    @property
    def n_classes(self) -> int:
        return self.classifier.n_classes

    def classify_noised(self, x_noised: np.ndarray, sigma: float, solution: TimestepSolution,
                        rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Labels of already-noised inputs of shape (..., d)."""
        denoised = denoise(self.denoiser, x_noised, sigma, self.schedule, rng=rng,
                           solution=solution)
        return np.asarray(self.classifier(denoised))

    def decision_function(self, sigma: float) -> Callable[[np.ndarray], np.ndarray]:
        """
        Pointwise label map y -> classify(denoise(y)) for inputs noised at sigma.

        Raises:
            UnsupportedDenoiserError: For stochastic denoisers, which have no such map
        """
        if self.denoiser.is_stochastic:
            raise UnsupportedDenoiserError(
                f"Denoiser kind {self.denoiser.kind} is stochastic and has no decision function"
            )
        solution = get_timestep(self.schedule, sigma)

        def decide(y: np.ndarray) -> np.ndarray:
            return self.classify_noised(y, sigma, solution)

        return decide


@dataclass
class PredictOutcome:
    """Outcome of PREDICT for one point."""

    label: int
    counts: Tuple[int, ...]
    p_value: float

    def to_dict(self) -> dict:
        return {'label': self.label, 'counts': list(self.counts), 'p_value': self.p_value}


def _noised_labels(x: np.ndarray, solution: TimestepSolution, sigma: float, num: int,
                   smoothed: SmoothedClassifier, rng: np.random.Generator) -> np.ndarray:
    delta = rng.standard_normal((num, x.shape[-1])) * solution.sigma_achieved
    return smoothed.classify_noised(x[None, :] + delta, sigma, solution, rng=rng)


def noise_and_classify(point: Point, sigma: float, smoothed: SmoothedClassifier,
                       rng: np.random.Generator) -> int:
    """
    Draw one delta ~ N(0, sigma_achieved^2 I), denoise x + delta and classify it.

    Raises:
        UnsatisfiableSigmaError: If sigma exceeds the schedule's range
    """
    solution = get_timestep(smoothed.schedule, sigma)
    return int(_noised_labels(point.x, solution, sigma, 1, smoothed, rng)[0])


def sample_counts(point: Point, sigma: float, num: int, smoothed: SmoothedClassifier,
                  master_seed: int, key: Sequence[int], batch_size: int,
                  solution: Optional[TimestepSolution] = None) -> np.ndarray:
    """
    Class tally of num base-classifier votes under noise.

    Args:
        point: Point to smooth around
        sigma: Requested noise level; noise of solution.sigma_achieved is injected
        num: Number of votes
        smoothed: Base classifier
        master_seed: Run seed
        key: Substream key prefix, e.g. (sigma_index, point_index, stage)
        batch_size: Votes per independently seeded block
        solution: Pre-resolved timestep

    Returns:
        Integer counts of shape (n_classes,)
    """
    if solution is None:
        solution = get_timestep(smoothed.schedule, sigma)
    counts = np.zeros(smoothed.n_classes, dtype=np.int64)
    for block, start in enumerate(range(0, num, batch_size)):
        size = min(batch_size, num - start)
        rng = substream(master_seed, *key, block)
        labels = _noised_labels(point.x, solution, sigma, size, smoothed, rng)
        counts += np.bincount(labels, minlength=smoothed.n_classes)
    return counts


def predict(point: Point, params: CertifyParams, smoothed: SmoothedClassifier,
            master_seed: int = 0, sigma_index: int = 0, point_index: int = 0) -> PredictOutcome:
    """
    PREDICT: vote with params.n noise draws, then test the top two classes.

    Returns the top class only if the two-sided binomial test at 1/2 gives
    p <= eta, otherwise ABSTAIN.
    """
    counts = sample_counts(point, params.sigma, params.n, smoothed, master_seed,
                           (sigma_index, point_index, STAGE_PREDICT), params.batch_size)
    label, p_value = decide_prediction(counts, params.eta)
    return PredictOutcome(label, tuple(int(c) for c in counts), p_value)


def certify(point: Point, params: CertifyParams, smoothed: SmoothedClassifier,
            master_seed: int = 0, sigma_index: int = 0, point_index: int = 0,
            solution: Optional[TimestepSolution] = None) -> CertificationResult:
    """
    CERTIFY: pick a candidate with n0 votes, bound its probability with n fresh votes.

    The radius is computed with the noise level actually injected
    (sigma_achieved of the rounded timestep).

    Returns:
        CertificationResult with radius in both input conventions
    """
    if solution is None:
        solution = get_timestep(smoothed.schedule, params.sigma)
    key = (sigma_index, point_index)
    selection = sample_counts(point, params.sigma, params.n0, smoothed, master_seed,
                              key + (STAGE_SELECTION,), params.batch_size, solution)
    candidate, _ = top_two(selection)
    estimation = sample_counts(point, params.sigma, params.n, smoothed, master_seed,
                               key + (STAGE_ESTIMATION,), params.batch_size, solution)
    result = decide_certification(candidate, estimation, solution.sigma_achieved, params.alpha_fail)
    logger.debug(
        f"Point {point.id}: candidate={candidate}, hits={estimation[candidate]}/{params.n}, "
        f"label={result.label}, radius_01={result.radius_01:.6g}"
    )
    return result


def certify_dataset(points: Sequence[Point], params: CertifyParams, smoothed: SmoothedClassifier,
                    master_seed: int, epsilons: Sequence[float], sigma_index: int = 0,
                    sigma_config: Optional[float] = None, workers: int = 1,
                    config_snapshot: Optional[dict] = None) -> RunRecord:
    """
    CERTIFY every point at one noise level and aggregate certified accuracy.

    Args:
        points: Dataset (true labels are needed for accuracy)
        params: Certification parameters; params.sigma is in the [-1, 1] convention
        smoothed: Base classifier
        master_seed: Run seed
        epsilons: Radii ([0,1] convention) at which certified accuracy is reported
        sigma_index: Position of this noise level in the run's sigma grid
        sigma_config: Noise level as configured ([0,1] convention), defaults to sigma/2
        workers: Worker processes
        config_snapshot: Configuration stored in the record

    Returns:
        RunRecord with a single sigma row

    Raises:
        EmptyDatasetError: If points is empty
    """
    from denoised_smoothing.workers.certify_worker import certify_points

    if len(points) == 0:
        raise EmptyDatasetError("Invalid dataset: no points to certify")

    solution = get_timestep(smoothed.schedule, params.sigma)
    sigma_config = params.sigma / 2.0 if sigma_config is None else sigma_config
    logger.info(
        f"Certifying {len(points)} points at sigma={sigma_config:g} "
        f"(internal {params.sigma:g}, injected {solution.sigma_achieved:.6g}, t={solution.t_discrete})"
    )

    started = time.perf_counter()
    results = certify_points(points, params, smoothed, master_seed, sigma_index, workers)
    elapsed = time.perf_counter() - started

    row = SigmaRow(
        sigma=sigma_config,
        sigma_pm1=params.sigma,
        sigma_achieved_pm1=solution.sigma_achieved,
        t_continuous=solution.t_continuous,
        t_discrete=solution.t_discrete,
        n0=params.n0,
        n=params.n,
        alpha_fail=params.alpha_fail,
        max_certifiable_radius_01=max_certifiable_radius(params, solution.sigma_achieved) / 2.0,
        results=[PointResult.from_certification(p.id, p.true_label, r)
                 for p, r in zip(points, results)],
    )
    row.aggregate(epsilons)
    samples = len(points) * (params.n0 + params.n)
    logger.info(
        f"sigma={sigma_config:g}: clean accuracy {row.clean_accuracy:.2f}% "
        f"({elapsed:.2f} s, {samples / max(elapsed, 1e-12):.0f} samples/s)"
    )
    return RunRecord(
        config=dict(config_snapshot or {}),
        master_seed=int(master_seed),
        epsilons=[float(e) for e in epsilons],
        rows=[row],
        wall_clock_s=elapsed,
        throughput=samples / elapsed if elapsed > 0 else 0.0,
    )


@dataclass
class CompareTable:
    """Clean accuracy (%) of classifier after each denoiser, per noise level."""

    names: List[str]
    sigmas: List[float]
    seeds: List[int]
    per_seed: Dict[str, List[List[float]]] = field(default_factory=dict)

    def mean(self, name: str) -> List[float]:
        return np.mean(np.asarray(self.per_seed[name]), axis=0).tolist()

    def cell(self, name: str, sigma_index: int) -> float:
        return self.mean(name)[sigma_index]


def sampler_compare(points: Sequence[Point], sigmas: Sequence[float],
                    denoisers: Dict[str, DenoiserSpec], classifier: MixtureClassifier,
                    schedule: NoiseSchedule, seeds: Sequence[int], draws: int) -> CompareTable:
    """
    Accuracy of classifier after denoiser for every (denoiser, sigma) cell.

    Every denoiser sees the same noise draws for a given (seed, sigma), and
    stochastic chains draw from their own substream.

    Args:
        points: Labeled dataset
        sigmas: Evaluation noise levels in the [-1, 1] convention; 0 is allowed
        denoisers: Named denoiser specifications
        classifier: Downstream classifier
        schedule: Noise schedule
        seeds: Seeds to average over
        draws: Noise draws per point and seed

    Returns:
        CompareTable with per-seed cells and their mean
    """
    if len(points) == 0:
        raise EmptyDatasetError("Invalid dataset: no points to compare samplers on")
    xs = np.stack([p.x for p in points])
    truth = np.array([-1 if p.true_label is None else p.true_label for p in points])
    names = list(denoisers)
    table = CompareTable(names=names, sigmas=[float(s) for s in sigmas],
                         seeds=[int(s) for s in seeds],
                         per_seed={name: [] for name in names})

    for seed in seeds:
        cells = {name: [] for name in names}
        for j, sigma in enumerate(sigmas):
            solution = get_timestep(schedule, sigma)
            noise_rng = substream(seed, j, STAGE_COMPARE_NOISE)
            delta = noise_rng.standard_normal((draws,) + xs.shape) * solution.sigma_achieved
            noised = xs[None, :, :] + delta
            for k, name in enumerate(names):
                chain_rng = substream(seed, j, STAGE_COMPARE_CHAIN, k)
                denoised = denoise(denoisers[name], noised, sigma, schedule, rng=chain_rng,
                                   solution=solution)
                labels = np.asarray(classifier(denoised))
                cells[name].append(100.0 * float(np.mean(labels == truth[None, :])))
        for name in names:
            table.per_seed[name].append(cells[name])
        logger.info(f"Seed {seed}: " + ", ".join(
            f"{name}={np.round(cells[name], 2).tolist()}" for name in names))
    return table


def mismatch_grid(points: Sequence[Point], train_sigmas: Sequence[float],
                  eval_sigmas: Sequence[float], denoiser_template: DenoiserSpec,
                  classifier: MixtureClassifier, schedule: NoiseSchedule,
                  seed: int, draws: int) -> np.ndarray:
    """
    Accuracy grid of posterior-mean denoisers calibrated for sigma_train and
    evaluated at sigma_eval.

    Returns:
        Array of shape (len(train_sigmas), len(eval_sigmas)) in percent
    """
    denoisers = {
        f"{s:g}": DenoiserSpec('mismatched_posterior_mean', denoiser_template.model, sigma_train=s)
        for s in train_sigmas
    }
    table = sampler_compare(points, eval_sigmas, denoisers, classifier, schedule, [seed], draws)
    return np.array([table.mean(name) for name in denoisers])
