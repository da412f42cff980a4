"""
Random perforated domains: unions of closed balls with radius below r_star
whose delta-dilations are pairwise disjoint, observed through a cubic window.

Two translation-invariant generators are provided (Bernoulli occupation of a
Bravais lattice, and sequential hard-core rejection), together with exact
continuum volume quantities used to check the density of the perforated set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from scipy import integrate
from scipy.spatial.distance import pdist, squareform

from errors import ParameterError
from utils.json_utils import json_read, json_write
from utils.log_utils import get_logger

logger = get_logger("geometry")

GENERATOR_KINDS = ("bernoulli-lattice", "hardcore-rejection", "empty")
LATTICES = ("cubic", "triangular")

# relative tolerance of the n=3 ball/box quadrature
QUADRATURE_RTOL = 1e-10


@dataclass(frozen=True)
class RealizationSeed:
    """
    Seed and parameters of one realization of a random perforated domain.

    Identical seed and parameters reproduce an identical ball list, bit-exact.
    `radius` is used by the lattice generator, `(r_min, r_max)` by the
    hard-core generator.
    """
    seed: int
    kind: str = "bernoulli-lattice"
    spacing: float = 1.0
    occupation_prob: float = 0.0
    radius: float = 0.0
    lattice: str = "cubic"
    intensity: float = 0.0
    r_min: float = 0.0
    r_max: float = 0.0

    def __post_init__(self):
        if self.kind not in GENERATOR_KINDS:
            raise ParameterError(f"unknown generator kind {self.kind!r}, expected one of {GENERATOR_KINDS}")
        if self.lattice not in LATTICES:
            raise ParameterError(f"unknown lattice {self.lattice!r}, expected one of {LATTICES}")

    def with_seed(self, seed: int) -> "RealizationSeed":
        return replace(self, seed=int(seed))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'seed': self.seed,
            'kind': self.kind,
            'spacing': self.spacing,
            'occupation_prob': self.occupation_prob,
            'radius': self.radius,
            'lattice': self.lattice,
            'intensity': self.intensity,
            'r_min': self.r_min,
            'r_max': self.r_max,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RealizationSeed":
        return cls(**data)


@dataclass(frozen=True)
class BallInclusion:
    center: Tuple[float, ...]
    radius: float

    def to_dict(self) -> Dict[str, Any]:
        return {'center': list(self.center), 'radius': self.radius}


@dataclass(frozen=True)
class PerforatedGeometry:
    """
    A realization of K(omega) observed in the window origin + [0, t]^n.

    Only balls whose delta-dilation meets the window are stored. Balls may be
    cut by the window boundary; `boundary_flags` marks every ball whose
    dilation is not contained in the open window.
    """
    n: int
    t: float
    balls: Tuple[BallInclusion, ...]
    delta: float
    r_star: float
    seed_record: RealizationSeed | None = None
    origin: Tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ParameterError(f"dimension must be 2 or 3, got {self.n}")
        if self.t <= 0 or self.delta <= 0 or self.r_star <= 0:
            raise ParameterError("window side, delta and r_star must be positive")
        if not self.origin:
            object.__setattr__(self, 'origin', (0.0,) * self.n)
        if len(self.origin) != self.n:
            raise ParameterError(f"origin has {len(self.origin)} components, expected {self.n}")
        object.__setattr__(self, 'balls', tuple(self.balls))
        for i, ball in enumerate(self.balls):
            if len(ball.center) != self.n:
                raise ParameterError(f"ball {i} center has wrong dimension")
            if not 0.0 < ball.radius < self.r_star:
                raise ParameterError(f"ball {i} radius {ball.radius} violates 0 < r < r_star={self.r_star}")

    @property
    def centers(self) -> np.ndarray:
        if not self.balls:
            return np.zeros((0, self.n))
        return np.array([b.center for b in self.balls], dtype=float)

    @property
    def radii(self) -> np.ndarray:
        return np.array([b.radius for b in self.balls], dtype=float)

    @property
    def window_volume(self) -> float:
        return self.t ** self.n

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return self.lower + self.t

    def boundary_flags(self, margin: float = 0.0) -> np.ndarray:
        """
        True for balls whose delta-dilation is not inside the window shrunk by `margin`.
        """
        if not self.balls:
            return np.zeros(0, dtype=bool)
        reach = (self.radii + self.delta)[:, None]
        inside = (self.centers - reach > self.lower + margin) & (self.centers + reach < self.upper - margin)
        return ~np.all(inside, axis=1)

    def translated(self, v: Sequence[float]) -> "PerforatedGeometry":
        v = np.asarray(v, dtype=float)
        balls = tuple(BallInclusion(tuple(np.asarray(b.center) + v), b.radius) for b in self.balls)
        return replace(self, balls=balls, origin=tuple(self.lower + v))

    def scaled(self, lam: float) -> "PerforatedGeometry":
        """Homothety about the coordinate origin, applied to window, balls, delta and r_star."""
        balls = tuple(BallInclusion(tuple(np.asarray(b.center) * lam), b.radius * lam) for b in self.balls)
        return replace(self, t=self.t * lam, balls=balls, delta=self.delta * lam,
                       r_star=self.r_star * lam, origin=tuple(self.lower * lam))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'n': self.n,
            't': self.t,
            'delta': self.delta,
            'r_star': self.r_star,
            'origin': list(self.origin),
            'balls': [b.to_dict() for b in self.balls],
            'seed_record': self.seed_record.to_dict() if self.seed_record else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PerforatedGeometry":
        seed = data.get('seed_record')
        return cls(
            n=int(data['n']),
            t=float(data['t']),
            balls=tuple(BallInclusion(tuple(float(c) for c in b['center']), float(b['radius'])) for b in data['balls']),
            delta=float(data['delta']),
            r_star=float(data['r_star']),
            seed_record=RealizationSeed.from_dict(seed) if seed else None,
            origin=tuple(float(c) for c in data.get('origin', [0.0] * int(data['n']))),
        )

    def __str__(self):
        return f"PerforatedGeometry(n={self.n}, t={self.t}, balls={len(self.balls)}, delta={self.delta})"


def write_geometry(path: str | Path, g: PerforatedGeometry):
    json_write(path, g.to_dict())


def read_geometry(path: str | Path) -> PerforatedGeometry:
    return PerforatedGeometry.from_dict(json_read(path))


def _window_origin(origin: Sequence[float] | None, n: int) -> np.ndarray:
    if origin is None:
        return np.zeros(n)
    origin = np.asarray(origin, dtype=float)
    if origin.shape != (n,):
        raise ParameterError(f"origin must have {n} components")
    return origin


def _meets_box(centers: np.ndarray, reach: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """True where the ball B(center, reach) meets the closed box [lower, upper]."""
    nearest = np.clip(centers, lower, upper)
    return np.sum((centers - nearest) ** 2, axis=1) <= reach ** 2


def _site_key(index: Sequence[int]) -> List[int]:
    # zigzag so negative lattice indices map to distinct non-negative seeds
    return [2 * k if k >= 0 else -2 * k - 1 for k in index]


def gen_bernoulli_lattice(seed: RealizationSeed, spacing: float, radius: float, occupation_prob: float,
                          window: float, *, n: int = 2, delta: float, r_star: float,
                          lattice: str = "cubic", origin: Sequence[float] | None = None) -> PerforatedGeometry:
    """
    Place a ball of fixed radius in the cell of every occupied lattice site.

    Each site runs its own Bernoulli trial keyed by (seed, site index), so the
    realization seen through a window shifted by a lattice vector is the
    shifted realization. Centers sit at the middle of the lattice cell,
    spacing * (k + 1/2) in lattice coordinates.

    Raises:
        ParameterError: if radius >= r_star or radius + delta >= spacing / 2
    """
    if lattice == "triangular" and n != 2:
        raise ParameterError("the triangular lattice is only defined for n = 2")
    if not 0.0 < radius < r_star:
        raise ParameterError(f"lattice radius {radius} must satisfy 0 < r < r_star={r_star}")
    if radius + delta >= spacing / 2:
        raise ParameterError(f"radius + delta = {radius + delta} >= spacing/2 = {spacing / 2}: separation impossible")
    if not 0.0 <= occupation_prob <= 1.0:
        raise ParameterError(f"occupation probability {occupation_prob} outside [0, 1]")

    lower = _window_origin(origin, n)
    upper = lower + window
    record = replace(seed, kind="bernoulli-lattice", spacing=spacing, radius=radius,
                     occupation_prob=occupation_prob, lattice=lattice)

    if lattice == "cubic":
        basis = np.eye(n) * spacing
    else:
        basis = np.array([[spacing, 0.0], [spacing / 2, spacing * math.sqrt(3) / 2]])
    inverse = np.linalg.inv(basis)

    # lattice index range covering the window enlarged by the ball reach
    reach = radius + delta
    corners = np.array(np.meshgrid(*[[lo - reach, hi + reach] for lo, hi in zip(lower, upper)])).reshape(n, -1).T
    coords = corners @ inverse
    k_lo = np.floor(coords.min(axis=0)).astype(int) - 1
    k_hi = np.ceil(coords.max(axis=0)).astype(int) + 1
    grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(k_lo, k_hi)], indexing='ij')
    sites = np.stack([g.ravel() for g in grids], axis=1)
    centers = (sites + 0.5) @ basis
    keep = _meets_box(centers, np.full(len(centers), reach), lower, upper)

    balls = []
    for site, center in zip(sites[keep], centers[keep]):
        rng = np.random.default_rng([seed.seed] + _site_key(site))
        if rng.random() < occupation_prob:
            balls.append(BallInclusion(tuple(float(c) for c in center), float(radius)))

    logger.debug(f"bernoulli lattice seed={seed.seed}: {len(balls)} balls in window {window}")
    return PerforatedGeometry(n=n, t=float(window), balls=tuple(balls), delta=float(delta),
                              r_star=float(r_star), seed_record=record, origin=tuple(lower))


def accepts_proposal(center: np.ndarray, radius: float, centers: np.ndarray, radii: np.ndarray,
                     delta: float) -> bool:
    """True if B(center, radius + delta) misses every B(centers[j], radii[j] + delta)."""
    if len(radii) == 0:
        return True
    gaps = np.sqrt(np.sum((np.asarray(centers) - center) ** 2, axis=1)) - np.asarray(radii) - radius
    return bool(np.all(gaps > 2 * delta))


def gen_hardcore_rejection(seed: RealizationSeed, intensity: float, radius_law: Tuple[float, float],
                           delta: float, window: float, *, n: int = 2, r_star: float,
                           origin: Sequence[float] | None = None) -> PerforatedGeometry:
    """
    Sequential hard-core rejection sampling of balls.

    Proposals (center uniform in the window enlarged by r_max + delta, radius
    uniform on (r_min, r_max)) are drawn in a fixed order from one generator.
    The number of proposals is intensity times the volume of the sampling box,
    so the window itself receives intensity * t^n proposals on average. A
    proposal is kept only if its delta-dilation misses every kept dilation.
    """
    r_min, r_max = radius_law
    if not 0.0 < r_min <= r_max < r_star:
        raise ParameterError(f"radius law ({r_min}, {r_max}) must satisfy 0 < r_min <= r_max < r_star={r_star}")
    if intensity < 0:
        raise ParameterError(f"intensity {intensity} must be nonnegative")

    lower = _window_origin(origin, n)
    upper = lower + window
    record = replace(seed, kind="hardcore-rejection", intensity=intensity, r_min=r_min, r_max=r_max)

    margin = r_max + delta
    box_lo, box_hi = lower - margin, upper + margin
    n_proposals = int(round(intensity * float(np.prod(box_hi - box_lo))))

    rng = np.random.default_rng(seed.seed)
    accepted_centers = np.zeros((0, n))
    accepted_radii = np.zeros(0)
    for _ in range(n_proposals):
        center = rng.uniform(box_lo, box_hi)
        r = rng.uniform(r_min, r_max) if r_max > r_min else r_min
        if not accepts_proposal(center, r, accepted_centers, accepted_radii, delta):
            continue
        accepted_centers = np.vstack([accepted_centers, center])
        accepted_radii = np.append(accepted_radii, r)

    keep = _meets_box(accepted_centers, accepted_radii + delta, lower, upper) if len(accepted_radii) else np.zeros(0, bool)
    balls = tuple(BallInclusion(tuple(float(c) for c in center), float(r))
                  for center, r in zip(accepted_centers[keep], accepted_radii[keep]))
    logger.debug(f"hardcore seed={seed.seed}: {len(balls)} of {n_proposals} proposals kept")
    return PerforatedGeometry(n=n, t=float(window), balls=balls, delta=float(delta),
                              r_star=float(r_star), seed_record=record, origin=tuple(lower))


def generate(seed: RealizationSeed, window: float, *, n: int, delta: float, r_star: float,
             origin: Sequence[float] | None = None) -> PerforatedGeometry:
    """Dispatch on seed.kind using the parameters stored in the seed record."""
    if seed.kind == "empty":
        return PerforatedGeometry(n=n, t=float(window), balls=(), delta=float(delta), r_star=float(r_star),
                                  seed_record=seed, origin=tuple(_window_origin(origin, n)))
    if seed.kind == "bernoulli-lattice":
        return gen_bernoulli_lattice(seed, seed.spacing, seed.radius, seed.occupation_prob, window,
                                     n=n, delta=delta, r_star=r_star, lattice=seed.lattice, origin=origin)
    return gen_hardcore_rejection(seed, seed.intensity, (seed.r_min, seed.r_max), delta, window,
                                  n=n, r_star=r_star, origin=origin)


def verify_separation(g: PerforatedGeometry) -> List[Tuple[int, int]]:
    """
    Return the index pairs (i, j), i < j, whose delta-dilated balls intersect.

    Exact distance arithmetic on the centers: a pair violates the separation
    when |theta_i - theta_j| <= r_i + r_j + 2 delta.
    """
    if len(g.balls) < 2:
        return []
    distances = squareform(pdist(g.centers))
    radii = g.radii
    limits = radii[:, None] + radii[None, :] + 2 * g.delta
    i, j = np.nonzero(np.triu(distances <= limits, k=1))
    return [(int(a), int(b)) for a, b in zip(i, j)]


def _segment_integral(x: np.ndarray | float, r: float) -> np.ndarray | float:
    """Antiderivative of sqrt(r^2 - s^2) on [-r, r], odd in x."""
    x = np.clip(x, -r, r)
    return 0.5 * (x * np.sqrt(np.maximum(r * r - x * x, 0.0)) + r * r * np.arcsin(x / r))


def _quadrant_area(a: float, b: float, r: float) -> float:
    """Area of {x >= a, y >= b} inside the disk of radius r centered at 0."""
    a = min(max(a, -r), r)
    b = min(max(b, -r), r)
    c = math.sqrt(max(r * r - b * b, 0.0))
    lo = max(a, -c)
    if b >= 0:
        if lo >= c:
            return 0.0
        return float(_segment_integral(c, r) - _segment_integral(lo, r) - b * (c - lo))
    full = 2.0 * (_segment_integral(r, r) - _segment_integral(a, r))
    inner = 0.0
    if lo < c:
        inner = _segment_integral(c, r) - _segment_integral(lo, r) + b * (c - lo)
    return float(full - inner)


def disk_box_area(center: Sequence[float], r: float, lower: Sequence[float], upper: Sequence[float]) -> float:
    """Exact area of a disk intersected with an axis-aligned rectangle."""
    x0, y0 = lower[0] - center[0], lower[1] - center[1]
    x1, y1 = upper[0] - center[0], upper[1] - center[1]
    if x1 <= -r or x0 >= r or y1 <= -r or y0 >= r:
        return 0.0
    if x0 <= -r and y0 <= -r and x1 >= r and y1 >= r:
        return math.pi * r * r
    area = (_quadrant_area(x0, y0, r) - _quadrant_area(x1, y0, r)
            - _quadrant_area(x0, y1, r) + _quadrant_area(x1, y1, r))
    return max(area, 0.0)


def ball_box_volume(center: Sequence[float], r: float, lower: Sequence[float], upper: Sequence[float]) -> float:
    """
    Volume of a ball intersected with an axis-aligned box, n = 2 or 3.

    n = 2 is closed form. n = 3 integrates the exact disk/rectangle area over
    slices with adaptive quadrature, breaking the interval where a slice
    radius crosses an edge or corner distance (relative error below 1e-6).
    """
    n = len(center)
    if n == 2:
        return disk_box_area(center, r, lower, upper)
    z0, z1 = lower[2] - center[2], upper[2] - center[2]
    lo, hi = max(z0, -r), min(z1, r)
    if hi <= lo:
        return 0.0
    if all(lower[d] <= center[d] - r and center[d] + r <= upper[d] for d in range(3)):
        return 4.0 / 3.0 * math.pi * r ** 3
    if disk_box_area(center[:2], r, lower[:2], upper[:2]) == math.pi * r * r:
        # box contains the whole xy-extent: spherical cap difference
        def cap(z):
            return math.pi * (r * r * z - z ** 3 / 3.0)
        return cap(hi) - cap(lo)

    def slice_area(z):
        rho = math.sqrt(max(r * r - z * z, 0.0))
        if rho == 0.0:
            return 0.0
        return disk_box_area(center[:2], rho, lower[:2], upper[:2])

    distances = [lower[0] - center[0], upper[0] - center[0], lower[1] - center[1], upper[1] - center[1]]
    squares = [d * d for d in distances]
    squares += [dx * dx + dy * dy for dx in distances[:2] for dy in distances[2:]]
    breaks = sorted({s for q in squares if q < r * r for s in (-math.sqrt(r * r - q), math.sqrt(r * r - q))
                     if lo < s < hi})
    volume, _ = integrate.quad(slice_area, lo, hi, points=breaks or None, epsabs=0.0,
                               epsrel=QUADRATURE_RTOL, limit=200)
    return volume


def _hole_volume(g: PerforatedGeometry, radii_extra: float = 0.0) -> np.ndarray:
    lower, upper = g.lower, g.upper
    return np.array([ball_box_volume(b.center, b.radius + radii_extra, lower, upper) for b in g.balls])


def empirical_density(g: PerforatedGeometry) -> float:
    """
    Fraction of the window outside the holes, vol(window minus K) / vol(window).

    The holes are disjoint, so the covered volume is the sum of the ball/box
    intersections.
    """
    if not g.balls:
        return 1.0
    covered = float(np.sum(_hole_volume(g)))
    return max(0.0, 1.0 - covered / g.window_volume)


def density_lower_bound(g: PerforatedGeometry) -> float:
    """
    Lower bound for the density from the delta-annuli around each hole.

    The annuli B(theta_i, r_i + delta) minus B(theta_i, r_i) are hole-free and
    pairwise disjoint, so their volume inside the window bounds the free
    volume from below. The bound is the larger of that sum and
    vol(window) - sum of full ball volumes, divided by vol(window).
    """
    if not g.balls:
        return 1.0
    annuli = _hole_volume(g, g.delta) - _hole_volume(g)
    unit_ball = math.pi ** (g.n / 2) / math.gamma(g.n / 2 + 1)
    complement = g.window_volume - float(np.sum(unit_ball * g.radii ** g.n))
    return max(float(np.sum(annuli)), complement) / g.window_volume


@dataclass(frozen=True)
class DensityLadder:
    windows: Tuple[float, ...]
    densities: Tuple[float, ...]
    lower_bounds: Tuple[float, ...]

    @property
    def cauchy_gaps(self) -> Tuple[float, ...]:
        return tuple(abs(b - a) for a, b in zip(self.densities, self.densities[1:]))

    def to_records(self) -> List[Dict[str, Any]]:
        return [{'t': t, 'density': d, 'lower_bound': lb}
                for t, d, lb in zip(self.windows, self.densities, self.lower_bounds)]


def density_ladder(seed: RealizationSeed, windows: Sequence[float], *, n: int, delta: float,
                   r_star: float) -> DensityLadder:
    """
    Empirical density of one realization over growing windows [0, t]^n.

    The lattice generator is site-keyed, so nested windows observe the same
    realization; the hard-core generator redraws per window.
    """
    densities, bounds = [], []
    for t in windows:
        g = generate(seed, t, n=n, delta=delta, r_star=r_star)
        densities.append(empirical_density(g))
        bounds.append(density_lower_bound(g))
    return DensityLadder(tuple(windows), tuple(densities), tuple(bounds))
