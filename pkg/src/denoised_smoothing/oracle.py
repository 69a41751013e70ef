"""
Exact reference computations on low-dimensional instances.

Smoothed class probabilities P[classify(denoise(x + delta)) = c] are computed
by integrating the Gaussian over the decision regions instead of sampling.
Along every line the decision breakpoints are located by a scan followed by
bisection, and the Gaussian mass between breakpoints is exact:

    d = 1   one line through x
    d = 2   lines along a rotated inner axis; the outer axis is cut wherever
            the sequence of labels met along the line changes, and every
            piece is integrated by Gauss-Legendre
    d = 3   nodes on a rotated leading axis, and the d = 2 construction on
            the remaining plane at every node

Straight decision boundaries are integrated to rounding accuracy in d <= 2.
Near a vertex where boundaries meet, segments narrower than the inner scan
spacing can be missed, and the error there shrinks with the square of the
spacing. Boundaries nearly parallel to the inner axis also converge more
slowly. quadrature_change reports the effect of doubling the resolution.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss
from scipy import special

from denoised_smoothing.data_model import Point
from denoised_smoothing.errors import DimensionMismatchError, DomainError
from denoised_smoothing.pipeline import SmoothedClassifier, certify
from denoised_smoothing.schedule import get_timestep
from denoised_smoothing.stats import ABSTAIN, P_LOWER_CAP, CertifyParams, certified_radius

logger = logging.getLogger(__name__)

QUADRATURE_SCHEMES = ('gauss_hermite', 'tensor_grid')
MIN_NODES = 32
MAX_DIM = 3

# Mass of a standard normal beyond 8.5 standard deviations is below 1e-16.
EXTENT = 8.5
BISECTION_STEPS = 48
EVAL_CHUNK = 1 << 17

# Fixed cuts of the outer axis, so no Gauss-Legendre piece is longer than 3.
PIECE_EDGES = (-6.0, -3.0, 0.0, 3.0, 6.0)

# Label changes on the outer scan whose interval carries less Gaussian mass
# than this are cut at the midpoint instead of bisected.
NEGLIGIBLE_MASS = 1e-13

# Integration axes are rotated away from the coordinate axes, along which
# mixture decision boundaries tend to lie.
PLANE_ANGLE = 0.5
FRAME_3D = ((1.0, 0.618, 0.382), (-0.5, 1.0, 0.3), (0.2, -0.4, 1.0))

EXACT_P_CAP = P_LOWER_CAP

# sigma_index slot used by repeated trials, kept apart from dataset runs
STAGE_TRIALS = 1 << 16

PointLike = Union[Point, np.ndarray, Sequence[float]]


@dataclass(frozen=True)
class QuadratureGrid:
    """
    Resolution of the exact integration.

    Attributes:
        scheme: Node placement on the leading axis of d = 3 instances,
            'gauss_hermite' or 'tensor_grid'
        nodes: Nodes on the leading axis. Every line is scanned at
            4 * nodes points, the outer axis of a plane at 2 * nodes points,
            and each outer piece gets nodes / 2 Gauss-Legendre nodes
        d: Dimension of the instance
    """

    scheme: str = 'gauss_hermite'
    nodes: int = 64
    d: int = 2

    def __post_init__(self):
        if self.scheme not in QUADRATURE_SCHEMES:
            raise DomainError(f"Invalid scheme: {self.scheme}. Must be one of {QUADRATURE_SCHEMES}")
        if self.nodes < MIN_NODES:
            raise DomainError(f"Invalid nodes: {self.nodes}. Must be at least {MIN_NODES}")
        if not 1 <= self.d <= MAX_DIM:
            raise DomainError(f"Invalid dimension: {self.d}. Must lie in [1, {MAX_DIM}]")

    @property
    def line_points(self) -> int:
        return 4 * self.nodes

    @property
    def plane_points(self) -> int:
        return 2 * self.nodes

    @property
    def piece_nodes(self) -> int:
        return self.nodes // 2

    def refined(self) -> 'QuadratureGrid':
        return replace(self, nodes=2 * self.nodes)

    def leading_nodes(self):
        """Standard-normal nodes and weights (summing to 1) for one leading axis."""
        if self.scheme == 'gauss_hermite':
            z, w = hermegauss(self.nodes)
        else:
            z = special.ndtri((np.arange(self.nodes) + 0.5) / self.nodes)
            w = np.ones(self.nodes)
        return z, w / w.sum()


def _evaluate(decide: Callable[[np.ndarray], np.ndarray], pts: np.ndarray) -> np.ndarray:
    out = np.empty(len(pts), dtype=np.int64)
    for start in range(0, len(pts), EVAL_CHUNK):
        out[start:start + EVAL_CHUNK] = decide(pts[start:start + EVAL_CHUNK])
    return out


def _line_masses(decide, origins: np.ndarray, directions: np.ndarray, scan_points: int,
                 n_classes: int, signatures: Optional[list] = None) -> np.ndarray:
    """
    Standard-normal mass of every class along lines origin + t * direction.

    t runs over [0, 2 * EXTENT] and t - EXTENT is the standard-normal
    coordinate. Every line starts with all of its mass on the label at t = 0;
    each breakpoint b moves the remaining mass ndtr(EXTENT - b) from the label
    before b to the label after it.

    When `signatures` is a list, the sequence of labels met along each line
    is appended to it as bytes.
    """
    t = np.linspace(0.0, 2.0 * EXTENT, scan_points + 1)
    n_lines, d = origins.shape
    masses = np.zeros((n_lines, n_classes))
    per_chunk = max(1, EVAL_CHUNK // len(t))

    for start in range(0, n_lines, per_chunk):
        o = origins[start:start + per_chunk]
        u = directions[start:start + per_chunk]
        rows = np.arange(start, start + len(o))

        pts = o[:, None, :] + t[None, :, None] * u[:, None, :]
        labels = _evaluate(decide, pts.reshape(-1, d)).reshape(len(o), len(t))
        masses[rows, labels[:, 0]] = 1.0
        changed = labels[:, 1:] != labels[:, :-1]
        if signatures is not None:
            keep = np.concatenate([np.ones((len(o), 1), dtype=bool), changed], axis=1)
            signatures.extend(labels[r, keep[r]].tobytes() for r in range(len(o)))

        line, j = np.nonzero(changed)
        if len(line) == 0:
            continue
        lo, hi = t[j], t[j + 1]
        label_lo, label_hi = labels[line, j], labels[line, j + 1]
        o_b, u_b = o[line], u[line]
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            same = _evaluate(decide, o_b + mid[:, None] * u_b) == label_lo
            lo = np.where(same, mid, lo)
            hi = np.where(same, hi, mid)
        mass = special.ndtr(EXTENT - 0.5 * (lo + hi))
        np.add.at(masses, (rows[line], label_lo), -mass)
        np.add.at(masses, (rows[line], label_hi), mass)
    return masses


def _plane_probabilities(decide, centers: np.ndarray, outer: np.ndarray, inner: np.ndarray,
                         grid: QuadratureGrid, n_classes: int) -> np.ndarray:
    """
    Class probabilities of centers + z_o * outer + z_i * inner, (z_o, z_i) ~ N(0, I).

    outer and inner are orthogonal and already scaled by the noise level.
    For fixed z_o the inner line is integrated exactly. The outer integrand
    is smooth between values of z_o where the labels met along the inner
    line change; those are located by bisection and become piece boundaries.
    """
    m = len(centers)

    def masses_at(owner, z, signatures=None):
        origins = centers[owner] + z[:, None] * outer - EXTENT * inner
        directions = np.broadcast_to(inner, origins.shape)
        return _line_masses(decide, origins, directions, grid.line_points, n_classes, signatures)

    z_scan = np.linspace(-EXTENT, EXTENT, grid.plane_points + 1)
    n_scan = len(z_scan)
    scan_sigs: list = []
    masses_at(np.repeat(np.arange(m), n_scan), np.tile(z_scan, m), scan_sigs)

    owner, k_lo, lo_sigs = [], [], []
    for c in range(m):
        row = scan_sigs[c * n_scan:(c + 1) * n_scan]
        for k in range(n_scan - 1):
            if row[k] != row[k + 1]:
                owner.append(c)
                k_lo.append(k)
                lo_sigs.append(row[k])
    owner = np.asarray(owner, dtype=np.int64)
    lo = z_scan[np.asarray(k_lo, dtype=np.int64)]
    hi = lo + (z_scan[1] - z_scan[0])

    active = np.nonzero(special.ndtr(hi) - special.ndtr(lo) > NEGLIGIBLE_MASS)[0]
    if len(active):
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo[active] + hi[active])
            mid_sigs: list = []
            masses_at(owner[active], mid, mid_sigs)
            same = np.array([s == lo_sigs[i] for s, i in zip(mid_sigs, active)])
            lo[active] = np.where(same, mid, lo[active])
            hi[active] = np.where(same, hi[active], mid)
    cuts = 0.5 * (lo + hi)
    bounds = np.searchsorted(owner, np.arange(m + 1))

    gl_z, gl_w = leggauss(grid.piece_nodes)
    node_owner, node_z, node_w = [], [], []
    for c in range(m):
        edges = np.unique(np.concatenate(
            [[-EXTENT, EXTENT], PIECE_EDGES, cuts[bounds[c]:bounds[c + 1]]]))
        half = 0.5 * (edges[1:] - edges[:-1])
        z = (edges[:-1] + half)[:, None] + half[:, None] * gl_z[None, :]
        w = half[:, None] * gl_w[None, :] * np.exp(-0.5 * z * z)
        node_owner.append(np.full(z.size, c))
        node_z.append(z.ravel())
        node_w.append(w.ravel())
    node_owner = np.concatenate(node_owner)
    node_w = np.concatenate(node_w)
    masses = masses_at(node_owner, np.concatenate(node_z))

    probs = np.zeros((m, n_classes))
    np.add.at(probs, node_owner, node_w[:, None] * masses)
    return probs / probs.sum(axis=1, keepdims=True)


def _frame(d: int) -> np.ndarray:
    """Orthonormal integration axes as rows: leading (d = 3 only), outer, inner."""
    if d == 2:
        c, s = math.cos(PLANE_ANGLE), math.sin(PLANE_ANGLE)
        return np.array([[c, s], [-s, c]])
    q, _ = np.linalg.qr(np.asarray(FRAME_3D).T)
    return q.T


def _as_array(point: PointLike) -> np.ndarray:
    return np.asarray(point.x if isinstance(point, Point) else point, dtype=np.float64)


def exact_class_probabilities_many(xs: np.ndarray, sigma: float, smoothed: SmoothedClassifier,
                                   grid: Optional[QuadratureGrid] = None) -> np.ndarray:
    """
    Exact smoothed class probabilities at many centers at once.

    Args:
        xs: Centers, shape (M, d) with d <= 3
        sigma: Requested noise level; the injected sigma_achieved is integrated
        smoothed: Base classifier with a deterministic denoiser
        grid: Integration resolution (defaults to 64 nodes)

    Returns:
        Array (M, n_classes) whose rows sum to 1

    Raises:
        UnsupportedDenoiserError: For stochastic denoisers
        DimensionMismatchError: If the grid dimension differs from the centers'
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    m, d = xs.shape
    grid = grid or QuadratureGrid(d=d)
    if grid.d != d:
        raise DimensionMismatchError(grid.d, d, 'center')
    decide = smoothed.decision_function(sigma)
    n_classes = smoothed.n_classes
    noise = get_timestep(smoothed.schedule, sigma).sigma_achieved

    if noise == 0.0:
        return np.eye(n_classes)[_evaluate(decide, xs)]

    if d == 1:
        probs = _line_masses(decide, xs - EXTENT * noise, np.full((m, 1), noise),
                             grid.line_points, n_classes)
    elif d == 2:
        outer, inner = noise * _frame(2)
        probs = _plane_probabilities(decide, xs, outer, inner, grid, n_classes)
    else:
        lead, outer, inner = noise * _frame(3)
        z, w = grid.leading_nodes()
        centers = (xs[:, None, :] + z[None, :, None] * lead).reshape(-1, d)
        plane = _plane_probabilities(decide, centers, outer, inner, grid, n_classes)
        probs = np.einsum('k,mkc->mc', w, plane.reshape(m, len(z), n_classes))
    return np.clip(probs, 0.0, 1.0)




def exact_class_probabilities(point: PointLike, sigma: float, smoothed: SmoothedClassifier,
                              grid: Optional[QuadratureGrid] = None) -> np.ndarray:
    """Exact smoothed class probabilities at one point."""
    return exact_class_probabilities_many(_as_array(point)[None, :], sigma, smoothed, grid)[0]


def exact_smoothed_label(point: PointLike, sigma: float, smoothed: SmoothedClassifier,
                         grid: Optional[QuadratureGrid] = None) -> int:
    """Smoothed label, ties to the lowest class index."""
    return int(np.argmax(exact_class_probabilities(point, sigma, smoothed, grid)))


def exact_certified_radius(p_top: float, sigma_achieved: float) -> float:
    """Certified radius ([-1,1] convention) from an exact top-class probability."""
    return certified_radius(sigma_achieved, min(float(p_top), EXACT_P_CAP))


def quadrature_change(point: PointLike, sigma: float, smoothed: SmoothedClassifier,
                      grid: QuadratureGrid) -> float:
    """Largest change of any class probability when the node count doubles."""
    coarse = exact_class_probabilities(point, sigma, smoothed, grid)
    fine = exact_class_probabilities(point, sigma, smoothed, grid.refined())
    return float(np.max(np.abs(fine - coarse)))


@dataclass
class Violation:
    """A perturbation inside the ball that changes the exact smoothed label."""

    delta: List[float]
    norm: float
    label: int
    margin: float


@dataclass
class SoundnessReport:
    """Outcome of a soundness search around one point."""

    point_id: str
    radius: float
    label: int
    evaluations: int = 0
    best_margin: float = -math.inf
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def _margins(xs: np.ndarray, label: int, sigma: float, smoothed: SmoothedClassifier,
             grid: QuadratureGrid, batch: int) -> np.ndarray:
    out = np.empty(len(xs))
    for start in range(0, len(xs), batch):
        probs = exact_class_probabilities_many(xs[start:start + batch], sigma, smoothed, grid)
        others = np.delete(probs, label, axis=1)
        runner_up = others.max(axis=1) if others.shape[1] else np.zeros(len(probs))
        out[start:start + batch] = runner_up - probs[:, label]
    return out


def soundness_search(point: PointLike, radius: float, smoothed: SmoothedClassifier,
                     sigma: float, grid: Optional[QuadratureGrid] = None,
                     label: Optional[int] = None, directions: int = 10_000,
                     ascent_steps: int = 100, starts: int = 3, step: Optional[float] = None,
                     tolerance: float = 1e-4, seed: int = 0, batch: int = 256) -> SoundnessReport:
    """
    Search the l2 ball of the given radius for a change of the exact smoothed label.

    Random directions on the sphere are tried first, then projected coordinate
    ascent on the runner-up margin starts from the most promising of them.
    A trial offset is a violation when some other class beats the original label
    by more than `tolerance`.

    Args:
        point: Center of the ball
        radius: Ball radius ([-1,1] convention)
        smoothed: Base classifier with a deterministic denoiser
        sigma: Requested noise level
        grid: Integration resolution
        label: Label to defend (defaults to the exact smoothed label at the center)
        directions: Number of random directions
        ascent_steps: Coordinate-ascent iterations per start
        starts: Number of ascent starts
        step: Ascent step (defaults to radius / 50)
        tolerance: Probability margin a violation must exceed
        seed: Seed of the direction sampler
        batch: Centers integrated per call

    Returns:
        SoundnessReport; empty violations on success
    """
    x = _as_array(point)
    point_id = point.id if isinstance(point, Point) else ''
    grid = grid or QuadratureGrid(d=len(x))
    if label is None:
        label = exact_smoothed_label(x, sigma, smoothed, grid)
    report = SoundnessReport(point_id=point_id, radius=float(radius), label=int(label))
    if radius <= 0:
        return report

    def record(delta: np.ndarray, margin: float):
        report.best_margin = max(report.best_margin, float(margin))
        if margin > tolerance:
            report.violations.append(Violation(delta.tolist(), float(np.linalg.norm(delta)),
                                               int(label), float(margin)))

    rng = np.random.default_rng(seed)
    u = rng.standard_normal((directions, len(x)))
    deltas = radius * u / np.linalg.norm(u, axis=1, keepdims=True)
    margins = _margins(x + deltas, label, sigma, smoothed, grid, batch)
    report.evaluations += len(deltas)
    for delta, margin in zip(deltas, margins):
        record(delta, margin)

    step0 = radius / 50.0 if step is None else step
    moves = np.concatenate([np.eye(len(x)), -np.eye(len(x))])
    for idx in np.argsort(-margins, kind='stable')[:starts]:
        delta, margin = deltas[idx], margins[idx]
        for _ in range(ascent_steps):
            candidates = delta + step0 * moves
            norms = np.linalg.norm(candidates, axis=1, keepdims=True)
            candidates = np.where(norms > radius, candidates * (radius / norms), candidates)
            cand_margins = _margins(x + candidates, label, sigma, smoothed, grid, batch)
            report.evaluations += len(candidates)
            best = int(np.argmax(cand_margins))
            if cand_margins[best] <= margin:
                break
            delta, margin = candidates[best], cand_margins[best]
            record(delta, margin)

    if report.violations:
        logger.warning(
            f"Point {point_id}: {len(report.violations)} violations within radius {radius:.6g}"
        )
    return report


@dataclass
class BoundValidityReport:
    """Monte-Carlo certificates compared with the exact ones over repeated trials."""

    trials: int
    covered: int
    p_exact: List[float]
    radius_exact: float
    radii: List[float] = field(default_factory=list)

    @property
    def fraction(self) -> float:
        return self.covered / self.trials if self.trials else 1.0


def bound_validity_trials(point: PointLike, params: CertifyParams, smoothed: SmoothedClassifier,
                          trials: int, master_seed: int = 0,
                          grid: Optional[QuadratureGrid] = None) -> BoundValidityReport:
    """
    Repeat CERTIFY with independent seeds and count the trials whose radius
    and lower bound do not exceed the exact values.
    """
    x = _as_array(point)
    pt = point if isinstance(point, Point) else Point(x=x)
    p_exact = exact_class_probabilities(x, params.sigma, smoothed, grid)
    noise = get_timestep(smoothed.schedule, params.sigma).sigma_achieved
    radius_exact = exact_certified_radius(float(p_exact.max()), noise)

    covered = 0
    radii = []
    for trial in range(trials):
        result = certify(pt, params, smoothed, master_seed, STAGE_TRIALS, trial)
        radii.append(result.radius_pm1)
        if result.label == ABSTAIN:
            covered += 1
        elif result.p_lower <= p_exact[result.label] and result.radius_pm1 <= radius_exact:
            covered += 1
    logger.info(f"Bound validity: {covered}/{trials} trials within the exact certificate")
    return BoundValidityReport(trials, covered, p_exact.tolist(), radius_exact, radii)

