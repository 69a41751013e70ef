"""
Run configuration loaded from a YAML or JSON file.

Noise levels, radii and sigma_train are written in the [0,1] input
convention; the engine works in the [-1,1] convention, so every configured
sigma is doubled internally.
"""
import copy
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import yaml

from denoised_smoothing.classifiers import CLASSIFIER_KINDS, MixtureClassifier
from denoised_smoothing.data_model import (
    LabeledMixture,
    MixtureModel,
    Point,
    product_mixture,
    random_mixture,
    sample_points,
)
from denoised_smoothing.denoisers import DenoiserSpec
from denoised_smoothing.errors import ConfigError, EmptyDatasetError
from denoised_smoothing.pipeline import SmoothedClassifier
from denoised_smoothing.schedule import NoiseSchedule
from denoised_smoothing.stats import CertifyParams

logger = logging.getLogger(__name__)

CONVENTION_FACTOR = 2.0


def internal_sigma(sigma: float) -> float:
    """Map a [0,1]-convention noise level to the [-1,1] convention."""
    return CONVENTION_FACTOR * float(sigma)


@dataclass(frozen=True)
class CertifySettings:
    n0: int = 100
    n: int = 100_000
    alpha_fail: float = 0.001
    eta: float = 0.001
    batch_size: int = 1000

    def params_for(self, sigma: float) -> CertifyParams:
        """CertifyParams for a configured ([0,1] convention) noise level."""
        return CertifyParams(sigma=internal_sigma(sigma), n0=self.n0, n=self.n,
                             alpha_fail=self.alpha_fail, eta=self.eta,
                             batch_size=self.batch_size)


@dataclass(frozen=True)
class DatasetConfig:
    size: int = 0
    seed: int = 0
    points: Optional[List[Dict[str, Any]]] = None


@dataclass(frozen=True)
class CompareConfig:
    denoisers: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    draws: int = 5
    sigma_grid: Optional[List[float]] = None


@dataclass(frozen=True)
class AblationConfig:
    train_sigmas: List[float] = field(default_factory=lambda: [0.25, 0.5, 1.0])
    eval_sigmas: List[float] = field(default_factory=lambda: [0.0, 0.25, 0.5, 1.0])
    draws: int = 5
    seed: int = 0


@dataclass(frozen=True)
class VerifyConfig:
    points: Optional[int] = None
    nodes: int = 32
    scheme: str = 'gauss_hermite'
    directions: int = 10_000
    ascent_steps: int = 100
    starts: int = 3
    tolerance: float = 1e-4
    inflate: float = 1.5
    mc_check: bool = False


def _section(data: Dict[str, Any], key: str) -> Dict[str, Any]:
    """An optional mapping section; an empty YAML key counts as absent."""
    section = data.get(key)
    if section is None:
        return {}
    if not isinstance(section, dict):
        raise ConfigError(f"Invalid config section {key!r}: must be a mapping")
    return section


def _build_mixture(section: Dict[str, Any]) -> LabeledMixture:
    if 'generate' in section:
        g = section['generate']
        return random_mixture(int(g['d']), int(g['components']), int(g['classes']),
                              float(g['tau']), int(g.get('seed', 0)),
                              float(g.get('spread', 0.8)))
    if 'product' in section:
        p = section['product']
        return product_mixture(int(p['d']), float(p.get('position', 0.9)),
                               float(p.get('weight', 0.85)), float(p.get('tau', 0.05)))

    components = section['components']
    weights = np.array([float(c['weight']) for c in components])
    means = [c['mean'] for c in components]
    labels = [int(c['label']) for c in components]
    n_classes = int(section.get('classes', max(labels) + 1))
    if section.get('normalize', False):
        weights = weights / weights.sum()
    return LabeledMixture(MixtureModel(weights, means, float(section['tau'])), labels, n_classes)


def build_denoiser(section: Dict[str, Any], model: MixtureModel) -> DenoiserSpec:
    """DenoiserSpec from a config mapping; sigma_train is in the [0,1] convention."""
    section = dict(section)
    section.pop('name', None)
    kind = section.pop('kind')
    sigma_train = section.pop('sigma_train', None)
    unknown = set(section) - {'steps', 'order', 'spacing'}
    if unknown:
        raise ConfigError(f"Unknown denoiser keys: {sorted(unknown)}")
    return DenoiserSpec(
        kind=kind,
        model=None if kind == 'identity' else model,
        sigma_train=None if sigma_train is None else internal_sigma(sigma_train),
        **section,
    )


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Validated run configuration."""

    schedule: NoiseSchedule
    mixture: LabeledMixture
    dataset: DatasetConfig
    denoiser: DenoiserSpec
    classifier_kind: str
    certify: CertifySettings
    sigma_grid: List[float]
    epsilon_grid: List[float]
    seed: int = 0
    workers: int = 1
    compare: CompareConfig = field(default_factory=CompareConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    raw: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.classifier_kind not in CLASSIFIER_KINDS:
            raise ConfigError(
                f"Invalid classifier kind: {self.classifier_kind}. Must be one of {CLASSIFIER_KINDS}"
            )
        if not self.sigma_grid or any(s <= 0 for s in self.sigma_grid):
            raise ConfigError(f"Invalid sigma_grid: {self.sigma_grid}. Need positive values")
        eps = list(self.epsilon_grid)
        if eps != sorted(eps) or any(e < 0 for e in eps):
            raise ConfigError(f"Invalid epsilon_grid: {eps}. Must be ascending and nonnegative")
        if self.workers < 1:
            raise ConfigError(f"Invalid workers: {self.workers}. Must be positive")

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunConfig':
        """
        Build and validate a configuration from a parsed mapping.

        Raises:
            ConfigError: On missing keys or invalid values
        """
        if not isinstance(data, dict):
            raise ConfigError("Invalid config: top level must be a mapping")
        try:
            mixture = _build_mixture(data['mixture'])
            compare_raw = dict(_section(data, 'compare'))
            denoisers = {d.get('name', d['kind']): d for d in compare_raw.pop('denoisers', [])}
            config = cls(
                schedule=NoiseSchedule(**_section(data, 'schedule')),
                mixture=mixture,
                dataset=DatasetConfig(**_section(data, 'dataset')),
                denoiser=build_denoiser(
                    _section(data, 'denoiser') or {'kind': 'one_shot_posterior_mean'}, mixture.model
                ),
                classifier_kind=_section(data, 'classifier').get('kind', 'bayes'),
                certify=CertifySettings(**_section(data, 'certify')),
                sigma_grid=[float(s) for s in data.get('sigma_grid', [0.25, 0.5, 1.0])],
                epsilon_grid=[float(e) for e in data.get('epsilon_grid', [0.0, 0.25, 0.5, 0.75, 1.0])],
                seed=int(data.get('seed', 0)),
                workers=int(data.get('workers', 1)),
                compare=CompareConfig(denoisers=denoisers, **compare_raw),
                ablation=AblationConfig(**_section(data, 'ablation')),
                verify=VerifyConfig(**_section(data, 'verify')),
                raw=copy.deepcopy(data),
            )
            for section in config.compare.denoisers.values():
                build_denoiser(section, mixture.model)
            config.certify.params_for(config.sigma_grid[0])
        except ConfigError:
            raise
        except KeyError as e:
            raise ConfigError(f"Missing config key: {e}") from e
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid config: {e}") from e
        return config

    def with_overrides(self, seed: Optional[int] = None, workers: Optional[int] = None) -> 'RunConfig':
        """Apply command-line overrides and record them in the snapshot."""
        raw = copy.deepcopy(self.raw)
        changes: Dict[str, Any] = {}
        if seed is not None:
            changes['seed'] = raw['seed'] = int(seed)
        if workers is not None:
            changes['workers'] = raw['workers'] = int(workers)
        if changes:
            raw.setdefault('overrides', {}).update(changes)
        return replace(self, raw=raw, **changes)

    def points(self) -> List[Point]:
        """
        The configured dataset.

        Raises:
            ConfigError: If an explicit point is malformed or has the wrong dimension
            EmptyDatasetError: If the dataset has no points
        """
        if self.dataset.points is not None:
            pts = [self._explicit_point(i, p) for i, p in enumerate(self.dataset.points)]
        else:
            pts = sample_points(self.mixture, self.dataset.size, self.dataset.seed)
        if not pts:
            raise EmptyDatasetError("Invalid dataset: the configuration yields no points")
        return pts

    def _explicit_point(self, index: int, entry: Dict[str, Any]) -> Point:
        point_id = str(entry.get('id', f"p{index:05d}"))
        try:
            point = Point(x=entry['x'], true_label=entry.get('label'), id=point_id)
        except KeyError as e:
            raise ConfigError(f"Missing config key for point {point_id!r}: {e}") from e
        except ValueError as e:
            raise ConfigError(f"Invalid point {point_id!r}: {e}") from e
        if point.x.shape[0] != self.mixture.d:
            raise ConfigError(
                f"Invalid point {point_id!r} dimension: {point.x.shape[0]}. Must be {self.mixture.d}"
            )
        return point

    def classifier(self) -> MixtureClassifier:
        return MixtureClassifier(self.mixture, self.classifier_kind)

    def smoothed(self, denoiser: Optional[DenoiserSpec] = None) -> SmoothedClassifier:
        return SmoothedClassifier(denoiser or self.denoiser, self.classifier(), self.schedule)

    def compare_denoisers(self) -> Dict[str, DenoiserSpec]:
        if not self.compare.denoisers:
            return {self.denoiser.kind: self.denoiser}
        return {name: build_denoiser(section, self.mixture.model)
                for name, section in self.compare.denoisers.items()}


def load_config(path: Union[str, Path]) -> RunConfig:
    """
    Read a run configuration from YAML (.yaml/.yml) or JSON (.json).

    Raises:
        ConfigError: If the file cannot be read, parsed or validated
    """
    path = Path(path)
    suffix = path.suffix.lower()
    try:
        text = path.read_text(encoding='utf-8')
        if suffix in ('.yaml', '.yml'):
            data = yaml.safe_load(text)
        elif suffix == '.json':
            data = json.loads(text)
        else:
            raise ConfigError(f"Unsupported config format: {suffix}. Must be .yaml, .yml or .json")
    except OSError as e:
        raise ConfigError(f"Failed to read config {path}: {e}") from e
    except (yaml.YAMLError, json.JSONDecodeError) as e:
        raise ConfigError(f"Failed to parse config {path}: {e}") from e
    logger.info(f"Loaded config {path}")
    return RunConfig.from_dict(data)
