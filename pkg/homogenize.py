"""
Homogenized densities from t-ladders and k-ladders over seeded realizations.

Every (t, seed) pair is one job: the geometry is generated and rasterized
once, then the cell problem is solved for each hole weight 1/k in increasing
k, warm-starting from the previous minimizer. Each entry is the smaller of its
own solve and the previous minimizer's energy under the new weight, so the
table is nonincreasing in k by construction. The uncarried solve is kept as
`raw_energy` and is what the monotonicity check tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from discretize import (SurfaceIntegrand, VolumeIntegrand, metrication_error, rasterize, surface_energy,
                        volume_energy)
from errors import MonotonicityError, ParameterError
from geometry import RealizationSeed, generate
from solvers import solve_surface_cell, solve_volume_cell
from utils.async_utils import run_jobs
from utils.log_utils import get_logger

logger = get_logger("homogenize")

LADDER_COLUMNS = ['kind', 'param', 't', 'k', 'seed', 'normalized_energy', 'raw_energy', 'iterations', 'exact_flag',
                  'converged']
RAW_RTOL = 1e-6
INF = math.inf


def parse_k(k: Any) -> float:
    """Accept numbers and the strings 'inf' / '∞' (hole-masked)."""
    if isinstance(k, str):
        if k.strip().lower() in ("inf", "infinity", "∞"):
            return INF
        k = float(k)
    k = float(k)
    if not k > 0:
        raise ParameterError(f"k must be positive, got {k}")
    return k


def hole_weight(k: float) -> float:
    return 0.0 if math.isinf(k) else 1.0 / k


def format_k(k: float) -> str:
    return "inf" if math.isinf(k) else repr(float(k))


def format_param(v: Sequence[float]) -> str:
    return ",".join(repr(float(x)) for x in v)


@dataclass(frozen=True)
class WindowSetup:
    """Everything that fixes a window: generator template, geometry scales and resolution."""
    gen: RealizationSeed
    n: int
    delta: float
    r_star: float
    h_over_delta: float = 0.25
    frame_width: int = 1
    origin: Tuple[float, ...] | None = None

    def masks(self, seed: int, t: float):
        g = generate(self.gen.with_seed(seed), t, n=self.n, delta=self.delta, r_star=self.r_star, origin=self.origin)
        return rasterize(g, self.h_over_delta * self.delta, self.frame_width)


@dataclass
class LadderResult:
    kind: str
    param: Tuple[float, ...]
    t_values: Tuple[float, ...]
    k_values: Tuple[float, ...]
    table: pd.DataFrame
    warnings: List[str] = field(default_factory=list)

    @property
    def seeds(self) -> List[int]:
        return sorted(self.table['seed'].unique().tolist())

    def column(self, t: float, k: float) -> np.ndarray:
        """Per-seed normalized energies at (t, k), in seed order."""
        sel = self.table[(self.table['t'] == t) & (self.table['k'] == format_k(k))].sort_values('seed')
        return sel['normalized_energy'].to_numpy()

    def means(self) -> pd.DataFrame:
        return self.table.groupby(['t', 'k'], sort=False)['normalized_energy'].mean().reset_index()

    def stderr(self) -> pd.DataFrame:
        grouped = self.table.groupby(['t', 'k'], sort=False)['normalized_energy']
        return (grouped.std(ddof=1) / np.sqrt(grouped.count())).fillna(0.0).reset_index()

    def cauchy_gaps(self, k: float | None = None) -> List[float]:
        """|mean(t_{j+1}) - mean(t_j)| along the t ladder at k (default: largest k)."""
        k = self.k_values[-1] if k is None else k
        values = [float(np.mean(self.column(t, k))) for t in self.t_values]
        return [abs(b - a) for a, b in zip(values, values[1:])]

    def monotonicity_violations(self) -> List[Dict[str, Any]]:
        """
        Every (t, seed, k_i, k_{i+1}) where the energy increases with k.

        The carried column is checked exactly, the uncarried solves up to
        RAW_RTOL relative and only between converged solves.
        """
        violations = []
        for (t, seed), group in self.table.groupby(['t', 'seed'], sort=False):
            rows = group.set_index('k').loc[[format_k(k) for k in self.k_values]]
            converged = rows['converged'].to_numpy(dtype=bool)
            for column, rtol in (('normalized_energy', 0.0), ('raw_energy', RAW_RTOL)):
                energies = rows[column].to_numpy(dtype=float)
                for i, (k_a, k_b) in enumerate(zip(self.k_values, self.k_values[1:])):
                    if rtol and not (converged[i] and converged[i + 1]):
                        continue
                    e_a, e_b = energies[i], energies[i + 1]
                    if e_b > e_a + rtol * abs(e_a):
                        violations.append({'t': t, 'seed': seed, 'column': column, 'k': format_k(k_a),
                                           'k_next': format_k(k_b), 'energy': float(e_a), 'energy_next': float(e_b)})
        return violations

    def to_csv(self, path: str | Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.table.to_csv(path, index=False, float_format="%.17g", columns=LADDER_COLUMNS)


def _sorted_k(k_ladder: Sequence[Any]) -> Tuple[float, ...]:
    ks = sorted({parse_k(k) for k in k_ladder})
    if not ks:
        raise ParameterError("k ladder is empty")
    return tuple(ks)


def _check_t_ladder(t_ladder: Sequence[float]) -> Tuple[float, ...]:
    ts = tuple(float(t) for t in t_ladder)
    if not ts or any(b <= a for a, b in zip(ts, ts[1:])):
        raise ParameterError(f"t ladder must be nonempty and strictly increasing, got {list(t_ladder)}")
    return ts


def _volume_job(setup: WindowSetup, seed: int, t: float, q: VolumeIntegrand, xi: Tuple[float, ...],
                ks: Tuple[float, ...], tol: float) -> List[Dict[str, Any]]:
    _, masks = setup.masks(seed, t)
    rows, previous = [], None
    for k in ks:
        qk = q.with_hole_weight(hole_weight(k))
        result = solve_volume_cell(masks, qk, xi, tol=tol, initial=previous)
        minimizer, energy = result.minimizer, result.energy
        if previous is not None:
            carried = volume_energy(previous, qk, masks)
            if carried < energy:
                logger.debug(f"volume t={t} seed={seed} k={format_k(k)}: carried {carried:.17g} < raw {energy:.17g}")
                minimizer, energy = previous, carried
        previous = minimizer
        rows.append({'kind': 'volume', 'param': format_param(xi), 't': t, 'k': format_k(k), 'seed': seed,
                     'normalized_energy': energy / t ** setup.n, 'raw_energy': result.energy / t ** setup.n,
                     'iterations': result.iterations, 'exact_flag': result.exact, 'converged': result.converged})
    return rows


def _surface_job(setup: WindowSetup, seed: int, t: float, s: SurfaceIntegrand, nu: Tuple[float, ...],
                 ks: Tuple[float, ...], x_datum) -> List[Dict[str, Any]]:
    _, masks = setup.masks(seed, t)
    rows, previous = [], None
    for k in ks:
        sk = s.with_hole_weight(hole_weight(k))
        result = solve_surface_cell(masks, sk, nu, x_datum)
        minimizer, energy, normalized = result.minimizer, result.energy, result.normalized
        if previous is not None:
            carried = surface_energy(previous, sk, masks)
            if carried < energy:
                logger.debug(f"surface t={t} seed={seed} k={format_k(k)}: carried {carried:.17g} < raw {energy:.17g}")
                normalized = normalized * carried / energy if energy > 0 else 0.0
                minimizer, energy = previous, carried
        previous = minimizer
        rows.append({'kind': 'surface', 'param': format_param(nu), 't': t, 'k': format_k(k), 'seed': seed,
                     'normalized_energy': normalized, 'raw_energy': result.normalized,
                     'iterations': result.iterations, 'exact_flag': result.exact, 'converged': result.converged})
    return rows


def _run_ladder(kind: str, param: Tuple[float, ...], ts, ks, seeds, job, parallel: int) -> LadderResult:
    jobs = [lambda t=t, seed=seed: job(seed, t) for t in ts for seed in seeds]
    rows = [row for chunk in run_jobs(jobs, parallel=parallel, desc=f"{kind} ladder") for row in chunk]
    table = pd.DataFrame(rows, columns=LADDER_COLUMNS)
    warnings = [f"{kind} cell t={r['t']} k={r['k']} seed={r['seed']} did not converge"
                for r in rows if not r['converged']]
    for w in warnings:
        logger.warning(w)
    return LadderResult(kind=kind, param=param, t_values=ts, k_values=ks, table=table, warnings=warnings)


def _seed_list(n_seeds: int, seeds: Sequence[int] | None, base: int) -> List[int]:
    if seeds is not None:
        return [int(s) for s in seeds]
    if n_seeds < 1:
        raise ParameterError(f"need at least one seed, got {n_seeds}")
    return [base + i for i in range(n_seeds)]


def estimate_fhom(gen: RealizationSeed, q: VolumeIntegrand, xi: Sequence[float], t_ladder: Sequence[float],
                  k_ladder: Sequence[Any], n_seeds: int, *, n: int, delta: float, r_star: float,
                  h_over_delta: float = 0.25, frame_width: int = 1, seeds: Sequence[int] | None = None,
                  origin: Sequence[float] | None = None, tol: float = 1e-8, parallel: int = 1) -> LadderResult:
    """
    Normalized volume cell minima m(l_xi, Q_t) / t^n over a t ladder, a k ladder and seeds.

    Args:
        gen: Generator template; its seed is replaced by each ladder seed
        q: Volume integrand; its hole weight is replaced by 1/k
        xi: Macroscopic gradient
        t_ladder: Strictly increasing window sides
        k_ladder: Perturbation parameters, 'inf' for the hole-masked column
        n_seeds: Number of seeds gen.seed, gen.seed + 1, ... (ignored when seeds is given)
        n, delta, r_star: Dimension and geometry scales
        h_over_delta: Cell size in units of delta (below 1/2)
        origin: Window origin, default 0
        parallel: Concurrent (t, seed) jobs

    Returns:
        LadderResult: one row per (t, k, seed)
    """
    ts, ks = _check_t_ladder(t_ladder), _sorted_k(k_ladder)
    xi = tuple(float(x) for x in xi)
    if len(xi) != n:
        raise ParameterError(f"xi has {len(xi)} components, expected {n}")
    setup = WindowSetup(gen, n, delta, r_star, h_over_delta, frame_width, tuple(origin) if origin is not None else None)
    seed_list = _seed_list(n_seeds, seeds, gen.seed)
    return _run_ladder('volume', xi, ts, ks, seed_list,
                       lambda seed, t: _volume_job(setup, seed, t, q, xi, ks, tol), parallel)


def estimate_ghom(gen: RealizationSeed, s: SurfaceIntegrand, nu: Sequence[float], t_ladder: Sequence[float],
                  k_ladder: Sequence[Any], n_seeds: int, *, n: int, delta: float, r_star: float,
                  h_over_delta: float = 0.25, frame_width: int = 1, seeds: Sequence[int] | None = None,
                  origin: Sequence[float] | None = None, x_datum: Sequence[float] | None = None,
                  parallel: int = 1) -> LadderResult:
    """
    Normalized surface cell minima over a t ladder, a k ladder and seeds.

    The grid stays axis-aligned; only the datum plane through the window
    center (or x_datum) rotates with nu. Entries are exact min-cut values.
    """
    ts, ks = _check_t_ladder(t_ladder), _sorted_k(k_ladder)
    nu = np.asarray(nu, dtype=float)
    if len(nu) != n or not np.isclose(np.linalg.norm(nu), 1.0):
        raise ParameterError(f"nu must be a unit {n}-vector, got {nu.tolist()}")
    nu = tuple(float(x) for x in nu)
    setup = WindowSetup(gen, n, delta, r_star, h_over_delta, frame_width, tuple(origin) if origin is not None else None)
    seed_list = _seed_list(n_seeds, seeds, gen.seed)
    return _run_ladder('surface', nu, ts, ks, seed_list,
                       lambda seed, t: _surface_job(setup, seed, t, s, nu, ks, x_datum), parallel)


@dataclass(frozen=True)
class HomEstimate:
    kind: str
    param: Tuple[float, ...]
    value: float
    dispersion: float
    t_max: float
    k_max: float
    n_seeds: int
    mode: str
    perturbation_gaps: Tuple[Tuple[str, float], ...] = ()
    metrication_error: float | None = None
    masked_value: float | None = None
    masked_dispersion: float | None = None

    @property
    def perturbation_gap(self) -> float:
        return max((g for _, g in self.perturbation_gaps), default=0.0)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind,
            'param': list(self.param),
            'value': self.value,
            'dispersion': self.dispersion,
            't_max': self.t_max,
            'k_max': format_k(self.k_max),
            'n_seeds': self.n_seeds,
            'mode': self.mode,
            'perturbation_gap': self.perturbation_gap,
            'perturbation_gaps': {k: g for k, g in self.perturbation_gaps},
            'metrication_error': self.metrication_error,
            'masked_value': self.masked_value,
            'masked_dispersion': self.masked_dispersion,
        }


def _seed_stats(values: np.ndarray) -> Tuple[float, float]:
    dispersion = float(np.std(values, ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
    return float(np.mean(values)), dispersion


def k_extrapolate(ladder: LadderResult, mode: str | None = None) -> HomEstimate:
    """
    The limit in k is the infimum over the ladder: take the largest-k column at t_max.

    With a hole-masked ('inf') column the mode is 'hole-masked'; otherwise the
    last finite column is used ('k-extrapolated'). In 'soft' mode the value is
    the last finite column, the smallest weight of the schedule, and the
    hole-masked column, when present, is kept as masked_value for
    `check_soft_hole`. Gaps column_k - reference are reported per finite k,
    the reference being the hole-masked column when there is one.

    Raises:
        MonotonicityError: if any entry increases with k
        ParameterError: in soft mode without a finite column
    """
    violations = ladder.monotonicity_violations()
    if violations:
        raise MonotonicityError(f"{len(violations)} k-monotonicity violations, first: {violations[0]}")
    t_max = ladder.t_values[-1]
    masked = math.isinf(ladder.k_values[-1])
    if mode == 'soft':
        finite = [k for k in ladder.k_values if not math.isinf(k)]
        if not finite:
            raise ParameterError("a soft estimate needs at least one finite hole weight")
        k_value = finite[-1]
    else:
        k_value = ladder.k_values[-1]
        mode = mode or ('hole-masked' if masked else 'k-extrapolated')
    column = ladder.column(t_max, k_value)
    reference_k = INF if masked else k_value
    reference = ladder.column(t_max, reference_k)
    gaps = tuple((format_k(k), float(np.mean(ladder.column(t_max, k) - reference)))
                 for k in ladder.k_values if k != reference_k)
    value, dispersion = _seed_stats(column)
    masked_value = masked_dispersion = None
    if mode == 'soft' and masked:
        masked_value, masked_dispersion = _seed_stats(reference)
    metrication = metrication_error(ladder.param) if ladder.kind == 'surface' else None
    return HomEstimate(kind=ladder.kind, param=ladder.param, value=value, dispersion=dispersion,
                       t_max=t_max, k_max=k_value, n_seeds=len(column), mode=mode, perturbation_gaps=gaps,
                       metrication_error=metrication, masked_value=masked_value,
                       masked_dispersion=masked_dispersion)


@dataclass(frozen=True)
class CheckReport:
    name: str
    passed: bool
    skipped: bool = False
    details: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {'name': self.name, 'passed': self.passed, 'skipped': self.skipped, 'details': self.details}

    def __str__(self):
        mark = "-" if self.skipped else ("✓" if self.passed else "✗")
        return f"{mark} {self.name}: {self.details}"


def check_bounds(est: HomEstimate, *, c1: float = 1.0, c2: float = 1.0, c3: float = 1.0, c4: float = 1.0,
                 delta: float | None = None, n: int | None = None, p: float = 2.0) -> CheckReport:
    """
    0 < value <= c2 (1 + |xi|^p) for volume estimates, 0 < value <= c4 for surface ones.

    The lower constant depends on (n, delta) without an explicit value, so
    strict positivity is what is checked. xi = 0 skips the volume check.
    """
    if est.kind == 'volume':
        norm = float(np.linalg.norm(est.param))
        if norm == 0.0:
            return CheckReport('bounds', True, skipped=True, details={'value': est.value, 'reason': 'xi = 0'})
        upper = c2 * (1 + norm ** p)
    else:
        upper = c4
    lower_ok = est.value > 0
    upper_ok = est.value <= upper * (1 + 1e-12)
    return CheckReport('bounds', lower_ok and upper_ok,
                       details={'value': est.value, 'upper': upper, 'lower_ok': lower_ok, 'upper_ok': upper_ok,
                                'c1': c1, 'c3': c3, 'delta': delta, 'n': n})


def check_convexity_fhom(xis: Sequence[Sequence[float]], values: Sequence[float],
                         dispersions: Sequence[float] | None = None, p: float = 2.0) -> CheckReport:
    """
    Midpoint convexity along collinear samples and empirical Lipschitz ratios.

    For every triple where xi_j is the midpoint of xi_i and xi_k the violation
    is f(xi_j) - (f(xi_i) + f(xi_k)) / 2; it passes when the worst violation is
    at most twice the largest dispersion. Lipschitz ratios are
    |f1 - f2| / ((1 + |xi1|^(p-1) + |xi2|^(p-1)) |xi1 - xi2|) over consecutive samples.
    """
    xis = [np.asarray(x, dtype=float) for x in xis]
    if len(xis) < 3:
        raise ParameterError("convexity check needs at least 3 samples")
    values = [float(v) for v in values]
    dispersions = [0.0] * len(values) if dispersions is None else [float(d) for d in dispersions]
    tolerance = 2 * max(dispersions) + 1e-12 * max(1.0, max(abs(v) for v in values))

    worst, triples = -math.inf, 0
    for i in range(len(xis)):
        for k in range(i + 1, len(xis)):
            mid = (xis[i] + xis[k]) / 2
            for j in range(len(xis)):
                if j not in (i, k) and np.allclose(xis[j], mid, rtol=0, atol=1e-12):
                    worst = max(worst, values[j] - (values[i] + values[k]) / 2)
                    triples += 1
    ratios = []
    for a in range(len(xis) - 1):
        step = float(np.linalg.norm(xis[a] - xis[a + 1]))
        if step > 0:
            scale = 1 + np.linalg.norm(xis[a]) ** (p - 1) + np.linalg.norm(xis[a + 1]) ** (p - 1)
            ratios.append(abs(values[a] - values[a + 1]) / (scale * step))
    passed = triples == 0 or worst <= tolerance
    return CheckReport('convexity', passed, skipped=triples == 0,
                       details={'worst_violation': worst if triples else None, 'tolerance': tolerance,
                                'triples': triples, 'lipschitz_ratios': ratios,
                                'lipschitz_max': max(ratios) if ratios else None})


def check_symmetry(ladder: LadderResult, mirrored: LadderResult, tol: float = 1e-12) -> CheckReport:
    """Per-seed difference between the nu and -nu ladders."""
    a = ladder.table.sort_values(['t', 'k', 'seed'])['normalized_energy'].to_numpy()
    b = mirrored.table.sort_values(['t', 'k', 'seed'])['normalized_energy'].to_numpy()
    if a.shape != b.shape:
        raise ParameterError("ladders have different shapes")
    worst = float(np.max(np.abs(a - b))) if a.size else 0.0
    return CheckReport('symmetry', worst <= tol, details={'max_difference': worst, 'tolerance': tol})


def check_translation(ladder: LadderResult, shifted: LadderResult, n_sigma: float = 3.0) -> CheckReport:
    """Estimates at origin 0 and at a lattice-shifted origin agree within n_sigma combined standard errors."""
    a, b = k_extrapolate(ladder), k_extrapolate(shifted)
    spread = n_sigma * math.hypot(a.dispersion, b.dispersion)
    difference = abs(a.value - b.value)
    return CheckReport('translation', difference <= spread + 1e-12,
                       details={'value': a.value, 'shifted_value': b.value, 'difference': difference,
                                'allowed': spread})


def check_cauchy_decay(ladder: LadderResult) -> CheckReport:
    """Soft check: Cauchy gaps do not grow over the last two doublings of t."""
    gaps = ladder.cauchy_gaps()
    if len(gaps) < 2:
        return CheckReport('cauchy_decay', True, skipped=True, details={'gaps': gaps})
    passed = gaps[-1] <= gaps[-2] + 1e-15
    if not passed:
        logger.warning(f"Cauchy gaps grew over the last doubling: {gaps[-2]:.3e} -> {gaps[-1]:.3e}")
    return CheckReport('cauchy_decay', passed, details={'gaps': gaps})


def check_soft_hole(est: HomEstimate, rtol: float = 1e-2, n_sigma: float = 3.0) -> CheckReport:
    """
    A soft-hole estimate against the hole-masked column of its own ladder.

    Passes when they differ by at most n_sigma combined standard errors plus
    rtol relative to the hole-masked value.
    """
    if est.masked_value is None:
        return CheckReport('soft_hole', True, skipped=True, details={'value': est.value})
    difference = abs(est.value - est.masked_value)
    allowed = n_sigma * math.hypot(est.dispersion, est.masked_dispersion or 0.0) + rtol * abs(est.masked_value)
    return CheckReport('soft_hole', difference <= allowed + 1e-12,
                       details={'value': est.value, 'masked_value': est.masked_value, 'difference': difference,
                                'allowed': allowed})


def lattice_shift(gen: RealizationSeed, n: int, steps: int = 1) -> Tuple[float, ...]:
    """A translation by `steps` lattice vectors along the first axis (spacing for hard-core seeds)."""
    return (steps * gen.spacing,) + (0.0,) * (n - 1)
