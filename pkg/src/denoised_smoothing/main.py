"""
Command-line entry point for denoised smoothing runs.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from denoised_smoothing.config import RunConfig, internal_sigma, load_config
from denoised_smoothing.denoisers import DenoiserSpec
from denoised_smoothing.errors import (
    ConfigError,
    SmoothingError,
    UnsatisfiableSigmaError,
    VerificationError,
)
from denoised_smoothing.oracle import (
    QuadratureGrid,
    exact_certified_radius,
    exact_class_probabilities,
    soundness_search,
)
from denoised_smoothing.pipeline import certify, certify_dataset, mismatch_grid, predict, sampler_compare
from denoised_smoothing.report import (
    DEFAULT_CURVE_STEP,
    write_ablation,
    write_certified_accuracy,
    write_compare,
    write_curve,
    write_json,
)
from denoised_smoothing.run_record import RunRecord
from denoised_smoothing.schedule import get_timestep

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_SIGMA = 3
EXIT_VERIFICATION = 4

RUN_RECORD_FILE = 'run_record.json'
CERTIFIED_ACCURACY_FILE = 'certified_accuracy.csv'
CURVE_FILE = 'certified_curve.csv'
ABLATION_FILE = 'ablation.csv'
COMPARE_FILE = 'compare_samplers.csv'
COMPARE_PER_SEED_FILE = 'compare_samplers_per_seed.csv'
SOUNDNESS_FILE = 'soundness_report.json'


def _load(args) -> RunConfig:
    if args.config is None:
        raise ConfigError(f"The {args.command} command needs --config")
    return load_config(args.config).with_overrides(seed=args.seed, workers=args.workers)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_certify(config: RunConfig) -> RunRecord:
    """CERTIFY the configured dataset at every noise level of the grid."""
    points = config.points()
    smoothed = config.smoothed()
    record = None
    for index, sigma in enumerate(config.sigma_grid):
        row_record = certify_dataset(
            points, config.certify.params_for(sigma), smoothed, config.seed,
            config.epsilon_grid, sigma_index=index, sigma_config=sigma,
            workers=config.workers, config_snapshot=config.raw,
        )
        record = row_record if record is None else record.merge(row_record)
    record.verify_aggregates()
    return record


def cmd_certify(args) -> int:
    config = _load(args)
    out = _out_dir(args)
    record = run_certify(config)
    record.save_json(out / RUN_RECORD_FILE)
    write_certified_accuracy(record, out / CERTIFIED_ACCURACY_FILE)
    write_curve(record, out / CURVE_FILE, args.step)
    return EXIT_OK


def cmd_predict(args) -> int:
    config = _load(args)
    points = config.points()
    matches = [i for i, p in enumerate(points) if p.id == args.point]
    if not matches:
        raise ConfigError(f"Unknown point id: {args.point}")
    index = matches[0]
    sigma = config.sigma_grid[0] if args.sigma is None else args.sigma
    sigma_index = (config.sigma_grid.index(sigma) if sigma in config.sigma_grid
                   else len(config.sigma_grid))
    outcome = predict(points[index], config.certify.params_for(sigma), config.smoothed(),
                      config.seed, sigma_index, index)
    print(json.dumps({'id': args.point, 'sigma': sigma, **outcome.to_dict()}))
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = _load(args)
    out = _out_dir(args)
    ablation = config.ablation
    template = DenoiserSpec('one_shot_posterior_mean', config.mixture.model)
    grid = mismatch_grid(
        config.points(),
        [internal_sigma(s) for s in ablation.train_sigmas],
        [internal_sigma(s) for s in ablation.eval_sigmas],
        template, config.classifier(), config.schedule, ablation.seed, ablation.draws,
    )
    write_ablation(grid, ablation.train_sigmas, ablation.eval_sigmas, out / ABLATION_FILE)
    return EXIT_OK


def cmd_compare_samplers(args) -> int:
    config = _load(args)
    out = _out_dir(args)
    sigmas = config.compare.sigma_grid or config.sigma_grid
    table = sampler_compare(
        config.points(), [internal_sigma(s) for s in sigmas], config.compare_denoisers(),
        config.classifier(), config.schedule, config.compare.seeds, config.compare.draws,
    )
    write_compare(table, sigmas, out / COMPARE_FILE, out / COMPARE_PER_SEED_FILE)
    return EXIT_OK


def run_verify(config: RunConfig) -> dict:
    """
    Oracle-exact certificates for the dataset, each checked by a soundness search.

    With verify.inflate > 0 the search is repeated at inflated radii, where
    finding violations shows the search has teeth. With verify.mc_check the
    Monte-Carlo radius is compared with the exact one.
    """
    settings = config.verify
    points = config.points()
    if settings.points is not None:
        points = points[:settings.points]
    smoothed = config.smoothed()
    grid = QuadratureGrid(scheme=settings.scheme, nodes=settings.nodes, d=config.mixture.d)
    search = dict(directions=settings.directions, ascent_steps=settings.ascent_steps,
                  starts=settings.starts, tolerance=settings.tolerance, seed=config.seed)

    rows = []
    for sigma_index, sigma in enumerate(config.sigma_grid):
        params = config.certify.params_for(sigma)
        noise = get_timestep(config.schedule, params.sigma).sigma_achieved
        for point_index, point in enumerate(points):
            probs = exact_class_probabilities(point, params.sigma, smoothed, grid)
            label = int(np.argmax(probs))
            radius = exact_certified_radius(float(probs[label]), noise)
            report = soundness_search(point, radius, smoothed, params.sigma, grid, label, **search)
            entry = {
                'id': point.id, 'sigma': sigma, 'label': label,
                'p_exact': probs.tolist(), 'radius_01': radius / 2.0,
                'evaluations': report.evaluations, 'violations': [vars(v) for v in report.violations],
            }
            if settings.inflate > 0 and radius > 0:
                inflated = soundness_search(point, settings.inflate * radius, smoothed,
                                            params.sigma, grid, label, **search)
                entry['inflated_violations'] = len(inflated.violations)
            if settings.mc_check:
                result = certify(point, params, smoothed, config.seed, sigma_index, point_index)
                entry['radius_mc_01'] = result.radius_01
                entry['mc_within_exact'] = result.radius_pm1 <= radius
            rows.append(entry)

    failures = sum(1 for r in rows if r['violations'])
    return {'points': len(points), 'sigmas': list(config.sigma_grid), 'failures': failures,
            'results': rows}


def cmd_verify(args) -> int:
    config = _load(args)
    out = _out_dir(args)
    report = run_verify(config)
    write_json(report, out / SOUNDNESS_FILE)
    if report['failures']:
        raise VerificationError(
            f"Soundness violations at {report['failures']} certified (point, sigma) pairs"
        )
    logger.info(f"No soundness violations over {len(report['results'])} (point, sigma) pairs")
    return EXIT_OK


def cmd_curve(args) -> int:
    out = _out_dir(args)
    record = RunRecord.load_json(args.record)
    record.verify_aggregates()
    write_curve(record, out / CURVE_FILE, args.step)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='denoised-smoothing',
        description='Certified robustness by denoised randomized smoothing on synthetic mixtures.',
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, help='Run configuration (.yaml, .yml or .json)')
    common.add_argument('--seed', type=int, help='Master seed, overrides the config')
    common.add_argument('--workers', type=int, help='Worker processes, overrides the config')
    common.add_argument('--out', default='results', help='Output directory')
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument('--verbose', action='store_true', help='Debug logging')
    verbosity.add_argument('--quiet', action='store_true', help='Warnings and errors only')

    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('certify', parents=[common], help='Certify the dataset at every sigma')
    p.add_argument('--step', type=float, default=DEFAULT_CURVE_STEP, help='Curve epsilon step')
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser('predict', parents=[common], help='Smoothed prediction for one point')
    p.add_argument('--point', required=True, help='Point id, e.g. p00003')
    p.add_argument('--sigma', type=float, help='Noise level ([0,1] convention), default first of grid')
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser('ablate', parents=[common], help='Mismatched-denoiser accuracy grid')
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser('compare-samplers', parents=[common], help='Denoiser accuracy comparison')
    p.set_defaults(func=cmd_compare_samplers)

    p = sub.add_parser('verify', parents=[common], help='Oracle soundness check of certificates')
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser('curve', parents=[common], help='Certified accuracy curve from a run record')
    p.add_argument('--record', type=Path, required=True, help='run_record.json of a certify run')
    p.add_argument('--step', type=float, default=DEFAULT_CURVE_STEP, help='Curve epsilon step')
    p.set_defaults(func=cmd_curve)
    return parser


def _configure_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s %(levelname)s %(name)s: %(message)s',
                        force=True)


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand and map failures to exit codes."""
    args = build_parser().parse_args(argv)
    _configure_logging(args)
    try:
        return args.func(args)
    except UnsatisfiableSigmaError as e:
        logger.error(str(e))
        return EXIT_SIGMA
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_CONFIG
    except VerificationError as e:
        logger.error(str(e))
        return EXIT_VERIFICATION
    except SmoothingError as e:
        logger.error(f"{args.command} failed: {e}", exc_info=True)
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
