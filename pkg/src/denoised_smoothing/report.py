"""
CSV and JSON emitters for certification tables, curves and comparisons.

All numbers are written with 6 significant digits through format(), which
never consults the locale.
"""
import csv
import json
import logging
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Union

import numpy as np

from denoised_smoothing.errors import DomainError
from denoised_smoothing.pipeline import CompareTable
from denoised_smoothing.run_record import RunRecord, accuracy_at

logger = logging.getLogger(__name__)

ENVELOPE = 'envelope'
DEFAULT_CURVE_STEP = 0.01


def fmt(value: float) -> str:
    return format(float(value), '.6g')


def _write_rows(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        writer.writerows(rows)
    logger.info(f"Wrote {path}")
    return path


def write_json(data: Any, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(data, indent=2), encoding='utf-8')
    logger.info(f"Wrote {path}")
    return path


def certified_accuracy_header(epsilons: Sequence[float]) -> List[str]:
    return (['sigma', 'sigma_internal', 'sigma_achieved', 'clean_accuracy']
            + [f"eps_{fmt(e)}" for e in epsilons])


def write_certified_accuracy(record: RunRecord, path: Union[str, Path]) -> Path:
    """One row per noise level, one column per epsilon, values in percent."""
    rows = [
        [fmt(row.sigma), fmt(row.sigma_pm1), fmt(row.sigma_achieved_pm1 / 2.0),
         fmt(row.clean_accuracy)] + [fmt(v) for v in row.certified_accuracy]
        for row in record.rows
    ]
    return _write_rows(path, certified_accuracy_header(record.epsilons), rows)


def curve_epsilons(max_radius: float, step: float = DEFAULT_CURVE_STEP) -> np.ndarray:
    """Epsilons 0, step, 2*step, ... ending exactly at max_radius."""
    if step <= 0:
        raise DomainError(f"Invalid curve step: {step}. Must be positive")
    k = int(np.floor(max_radius / step + 1e-9))
    eps = step * np.arange(k + 1)
    if eps[-1] < max_radius - 1e-12:
        eps = np.append(eps, max_radius)
    return eps


def curve_series(record: RunRecord, step: float = DEFAULT_CURVE_STEP) -> List[List[str]]:
    """
    Certified accuracy as a function of epsilon for each noise level.

    Each noise level's series ends at its largest certifiable radius. The
    envelope takes the best noise level at every epsilon.

    Returns:
        Rows (sigma, epsilon, certified_accuracy) as formatted strings
    """
    rows = []
    for row in record.rows:
        for eps in curve_epsilons(row.max_certifiable_radius_01, step):
            rows.append([fmt(row.sigma), fmt(eps), fmt(accuracy_at(row.results, eps))])

    if record.rows:
        top = max(row.max_certifiable_radius_01 for row in record.rows)
        for eps in curve_epsilons(top, step):
            best = max(accuracy_at(row.results, eps) for row in record.rows)
            rows.append([ENVELOPE, fmt(eps), fmt(best)])
    return rows


def write_curve(record: RunRecord, path: Union[str, Path], step: float = DEFAULT_CURVE_STEP) -> Path:
    return _write_rows(path, ['sigma', 'epsilon', 'certified_accuracy'], curve_series(record, step))


def write_ablation(grid: np.ndarray, train_sigmas: Sequence[float], eval_sigmas: Sequence[float],
                   path: Union[str, Path]) -> Path:
    """Mismatch grid, rows = sigma_train, columns = sigma_eval ([0,1] convention)."""
    header = ['sigma_train'] + [f"eval_{fmt(s)}" for s in eval_sigmas]
    rows = [[fmt(s)] + [fmt(v) for v in grid[i]] for i, s in enumerate(train_sigmas)]
    return _write_rows(path, header, rows)


def write_compare(table: CompareTable, sigmas: Sequence[float], path: Union[str, Path],
                  per_seed_path: Union[str, Path]) -> List[Path]:
    """
    Seed-averaged and per-seed sampler comparison tables.

    Args:
        table: Comparison result
        sigmas: Column labels ([0,1] convention), aligned with table.sigmas
        path: Destination of the seed-averaged table
        per_seed_path: Destination of the per-seed table
    """
    columns = [f"sigma_{fmt(s)}" for s in sigmas]
    mean_rows = [[name] + [fmt(v) for v in table.mean(name)] for name in table.names]
    seed_rows = [
        [name, str(seed)] + [fmt(v) for v in cells]
        for name in table.names
        for seed, cells in zip(table.seeds, table.per_seed[name])
    ]
    return [
        _write_rows(path, ['denoiser'] + columns, mean_rows),
        _write_rows(per_seed_path, ['denoiser', 'seed'] + columns, seed_rows),
    ]
