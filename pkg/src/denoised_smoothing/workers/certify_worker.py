"""
Worker processes for certification so large datasets use every core.

Each task covers a contiguous slice of the dataset and keeps the global
point index, so every point draws from the same substreams whatever the
worker count.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, List, Sequence

from denoised_smoothing.data_model import Point
from denoised_smoothing.stats import CertificationResult, CertifyParams

logger = logging.getLogger(__name__)


@dataclass
class CertifyTask:
    """A slice of points certified by one worker call."""

    points: List[Point]
    start_index: int
    params: CertifyParams
    smoothed: Any
    master_seed: int
    sigma_index: int


def run_certify_task(task: CertifyTask) -> List[CertificationResult]:
    """Certify every point of a task; runs inside a worker process."""
    from denoised_smoothing.pipeline import certify

    results = []
    for offset, point in enumerate(task.points):
        results.append(certify(point, task.params, task.smoothed, task.master_seed,
                               task.sigma_index, task.start_index + offset))
    return results


def split_tasks(points: Sequence[Point], params: CertifyParams, smoothed, master_seed: int,
                sigma_index: int, n_tasks: int) -> List[CertifyTask]:
    """Cut the dataset into at most n_tasks contiguous slices."""
    n_tasks = max(1, min(n_tasks, len(points)))
    size = -(-len(points) // n_tasks)
    return [
        CertifyTask(list(points[start:start + size]), start, params, smoothed,
                    master_seed, sigma_index)
        for start in range(0, len(points), size)
    ]


def certify_points(points: Sequence[Point], params: CertifyParams, smoothed, master_seed: int,
                   sigma_index: int, workers: int = 1) -> List[CertificationResult]:
    """
    Certify all points, in order, on `workers` processes.

    Args:
        points: Dataset
        params: Certification parameters
        smoothed: SmoothedClassifier shared read-only by all workers
        master_seed: Run seed
        sigma_index: Position of params.sigma in the run's grid
        workers: Number of processes; 1 runs in-process

    Returns:
        One CertificationResult per point, in dataset order
    """
    if workers <= 1 or len(points) <= 1:
        return run_certify_task(CertifyTask(list(points), 0, params, smoothed,
                                            master_seed, sigma_index))

    # Several tasks per worker keeps the pool busy when point costs differ.
    tasks = split_tasks(points, params, smoothed, master_seed, sigma_index, 4 * workers)
    logger.info(f"Certifying {len(points)} points in {len(tasks)} tasks on {workers} workers")
    results: List[CertificationResult] = []
    with ProcessPoolExecutor(max_workers=workers) as executor:
        for chunk in executor.map(run_certify_task, tasks):
            results.extend(chunk)
    return results
