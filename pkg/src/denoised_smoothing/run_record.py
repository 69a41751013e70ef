"""
Provenance record of one certification run.
"""
import json
import logging
import uuid
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from denoised_smoothing.errors import ConfigError, VerificationError
from denoised_smoothing.stats import ABSTAIN, CertificationResult

logger = logging.getLogger(__name__)

ARTIFACT_VERSION = '1.0.0'
TIMESTEP_ROUNDING = 'ceil'
SIGMA_CONVENTION = 'configured sigma and epsilon use the [0,1] input convention; sigma_pm1 = 2 * sigma'


@dataclass
class PointResult:
    """CERTIFY outcome for one point of the dataset."""

    id: str
    true_label: Optional[int]
    label: int
    p_lower: float
    radius_pm1: float
    radius_01: float
    counts: List[int] = field(default_factory=list)

    @classmethod
    def from_certification(cls, point_id: str, true_label: Optional[int],
                           result: CertificationResult) -> 'PointResult':
        return cls(
            id=point_id,
            true_label=true_label,
            label=result.label,
            p_lower=result.p_lower,
            radius_pm1=result.radius_pm1,
            radius_01=result.radius_01,
            counts=list(result.counts),
        )

    def certified_at(self, epsilon: float) -> bool:
        return (self.label != ABSTAIN and self.true_label is not None
                and self.label == self.true_label and self.radius_01 >= epsilon)


def accuracy_at(results: Sequence[PointResult], epsilon: float) -> float:
    """Certified accuracy in percent at l2 radius epsilon ([0,1] convention)."""
    if not results:
        return 0.0
    hits = sum(1 for r in results if r.certified_at(epsilon))
    return 100.0 * hits / len(results)


def accuracy_table(results: Sequence[PointResult], epsilons: Sequence[float]) -> List[float]:
    return [accuracy_at(results, eps) for eps in epsilons]


@dataclass
class SigmaRow:
    """All CERTIFY outcomes at one noise level plus their aggregates."""

    sigma: float
    sigma_pm1: float
    sigma_achieved_pm1: float
    t_continuous: float
    t_discrete: int
    n0: int
    n: int
    alpha_fail: float
    max_certifiable_radius_01: float
    clean_accuracy: float = 0.0
    certified_accuracy: List[float] = field(default_factory=list)
    results: List[PointResult] = field(default_factory=list)

    def aggregate(self, epsilons: Sequence[float]):
        """Fill clean and certified accuracy from the per-point results."""
        self.clean_accuracy = accuracy_at(self.results, 0.0)
        self.certified_accuracy = accuracy_table(self.results, epsilons)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SigmaRow':
        data = dict(data)
        data['results'] = [PointResult(**r) for r in data.get('results', [])]
        return cls(**data)


@dataclass
class RunRecord:
    """
    Full provenance of a certification run.
    """

    run_id: str = field(default_factory=lambda: str(uuid.uuid4()))
    created: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    artifact_version: str = ARTIFACT_VERSION
    config: Dict[str, Any] = field(default_factory=dict)
    master_seed: int = 0
    sigma_convention: str = SIGMA_CONVENTION
    timestep_rounding: str = TIMESTEP_ROUNDING
    epsilons: List[float] = field(default_factory=list)
    rows: List[SigmaRow] = field(default_factory=list)
    wall_clock_s: float = 0.0
    throughput: float = 0.0
    notes: str = ""

    def merge(self, other: 'RunRecord') -> 'RunRecord':
        """Append another record's sigma rows; both must share the epsilon grid."""
        if list(other.epsilons) != list(self.epsilons):
            raise VerificationError("Cannot merge run records with different epsilon grids")
        total_s = self.wall_clock_s + other.wall_clock_s
        samples = self.throughput * self.wall_clock_s + other.throughput * other.wall_clock_s
        self.rows.extend(other.rows)
        self.wall_clock_s = total_s
        self.throughput = samples / total_s if total_s > 0 else 0.0
        return self

    def verify_aggregates(self):
        """
        Recompute every aggregate from the per-point rows.

        Raises:
            VerificationError: If any stored aggregate differs from the recomputation
        """
        for row in self.rows:
            clean = accuracy_at(row.results, 0.0)
            table = accuracy_table(row.results, self.epsilons)
            if clean != row.clean_accuracy or table != list(row.certified_accuracy):
                raise VerificationError(
                    f"Aggregates for sigma={row.sigma:g} do not match the per-point results"
                )
        logger.debug(f"Aggregates verified for {len(self.rows)} sigma rows")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunRecord':
        data = dict(data)
        data['rows'] = [SigmaRow.from_dict(r) for r in data.get('rows', [])]
        return cls(**data)

    def save_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding='utf-8')
        logger.info(f"Run record written to {path}")
        return path

    @classmethod
    def load_json(cls, path: Union[str, Path]) -> 'RunRecord':
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding='utf-8'))
            return cls.from_dict(data)
        except (OSError, ValueError, TypeError) as e:
            raise ConfigError(f"Failed to load run record {path}: {e}") from e
