"""
Extension of fields from the perforated domain into the holes.

Scalar values are filled by a discrete p-harmonic extension, staged down the
dyadic annulus schedule for thick balls. Binary labels are filled by a
minimal-perimeter (min-cut) fill of a reflected layer, followed by a search
for a sphere that no jump crosses; if the layer carries too much jump the
hole is filled with 0. The whole-domain SBV extension composes both per ball
and reports the MS^p energy before and after.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from discretize import (Grid, LabelField, Masks, SbvField, ScalarField, cell_gradients, msp_energy,
                        neighbour_pairs, rasterize)
from errors import GridMismatchError, ParameterError, ResolutionError
from geometry import BallInclusion, PerforatedGeometry, RealizationSeed, gen_hardcore_rejection
from solvers import mincut_labels, minimize_dirichlet
from utils.async_utils import run_jobs
from utils.log_utils import get_logger

logger = get_logger("extension")

DEFAULT_GAMMA = 4.0
BRANCH_ORDER = ("none", "clean_sphere", "mincut", "fallback")


@dataclass(frozen=True)
class DyadicSchedule:
    """
    Radii r * q^(1 - i), i = 0..N_delta, with q = 1 + delta / r_star.

    The empty schedule (N_delta = 0, no radii) covers balls thinner than delta.
    """
    N_delta: int
    radii: Tuple[float, ...]
    r_delta: float
    ratio: float

    @property
    def is_empty(self) -> bool:
        return self.N_delta == 0


def dyadic_schedule(r: float, delta: float, r_star: float) -> DyadicSchedule:
    """
    N_delta = floor(ln(r_star / delta) / ln(1 + delta / r_star)) + 1.

    Raises:
        ParameterError: unless 0 < r < r_star and delta > 0
    """
    if not 0 < r < r_star:
        raise ParameterError(f"radius {r} must satisfy 0 < r < r_star={r_star}")
    if delta <= 0:
        raise ParameterError(f"delta must be positive, got {delta}")
    q = 1.0 + delta / r_star
    if r < delta:
        return DyadicSchedule(0, (), r, q)
    N = int(math.floor(math.log(r_star / delta) / math.log(q))) + 1
    radii = tuple(r * q ** (1 - i) for i in range(N + 1))
    return DyadicSchedule(N, radii, r * q ** (-N), q)


def fill_nodes(masks: Masks, i: int) -> np.ndarray:
    """Nodes whose incident cells are all hole cells of ball i."""
    grid = masks.grid
    holes = np.pad(masks.hole_owner == i, 1, constant_values=False)
    result = np.ones(grid.node_shape, dtype=bool)
    for shift in np.ndindex(*(2,) * grid.n):
        index = tuple(slice(s, s + grid.m + 1) for s in shift)
        result &= holes[index]
    return result


def _node_lattice(grid: Grid) -> Grid:
    """Grid whose cells are centred on the nodes of `grid`."""
    h = grid.h
    return Grid(n=grid.n, t=grid.t + h, m=grid.m + 1, frame_width=grid.frame_width,
                origin=tuple(o - h / 2 for o in grid.origin))


def _cell_energy(grid: Grid, values: np.ndarray, p: float, cells: np.ndarray,
                 jump_edges: Sequence[np.ndarray] | None = None) -> float:
    grad = cell_gradients(values.reshape(grid.node_shape), grid, jump_edges)
    return float(np.sum(np.sum(grad ** 2, axis=0)[cells] ** (p / 2)) * grid.h ** grid.n)


def _staged_fill(grid: Grid, weight: np.ndarray, p: float, fill: np.ndarray, values: np.ndarray,
                 distance: np.ndarray, schedule: DyadicSchedule, edge_mask=None,
                 tol: float = 1e-10) -> Tuple[np.ndarray, int, bool, List[float]]:
    """
    p-harmonic fill of the `fill` nodes, one annulus of the schedule at a time.

    Each stage solves every node not yet frozen, then freezes the nodes outside
    the next schedule radius.
    """
    u = np.asarray(values, dtype=float).ravel().copy()
    remaining = np.asarray(fill, dtype=bool).ravel().copy()
    stages, iterations, converged = [], 0, True
    for rho in (*schedule.radii[1:], None):
        solved, it, _, ok = minimize_dirichlet(grid, weight, p, ~remaining, u, tol=tol, edge_mask=edge_mask)
        u, iterations, converged = solved.ravel(), iterations + it, converged and ok
        if rho is None:
            break
        remaining &= distance < rho
        stages.append(rho)
        if not remaining.any():
            break
    return u, iterations, converged, stages


@dataclass
class SobolevFillReport:
    ball: int
    fill_energy: float
    annulus_energy: float
    ratio: float | None
    density_ratio: float | None
    stages: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = True

    def to_dict(self) -> Dict[str, Any]:
        return {
            'ball': self.ball,
            'fill_energy': self.fill_energy,
            'annulus_energy': self.annulus_energy,
            'ratio': self.ratio,
            'density_ratio': self.density_ratio,
            'stages': self.stages,
            'iterations': self.iterations,
            'converged': self.converged,
        }


def _safe_ratio(a: float, b: float) -> float | None:
    if b > 0:
        return a / b
    return 0.0 if a == 0 else None


def extend_sobolev_ball(u: ScalarField, i: int, masks: Masks, p: float = 2.0,
                        tol: float = 1e-10) -> Tuple[ScalarField, SobolevFillReport]:
    """
    Fill the values of ball i by minimizing the discrete p-Dirichlet energy on
    its hole cells, with every other node fixed to u.

    Only nodes whose incident cells are all hole cells change, so the result
    agrees with u on the annulus and everywhere else. Values are clipped into
    the range of the ball's trace.

    Raises:
        ResolutionError: if the ball has no annulus cells at this resolution
    """
    g = masks.geometry
    if g is None:
        raise ParameterError("masks carry no geometry")
    grid = masks.grid
    ball = g.balls[i]
    annulus = masks.annulus_cells(i)
    if not annulus.any():
        raise ResolutionError(f"ball {i} has an empty annulus at h={grid.h}")
    hole = masks.ball_hole_cells(i)
    fill = fill_nodes(masks, i)
    distance = np.linalg.norm(grid.node_coords() - np.asarray(ball.center), axis=1)
    values = u.values.ravel()

    trace = ~fill.ravel() & (distance < ball.radius + g.delta)
    schedule = dyadic_schedule(ball.radius, g.delta, g.r_star)
    weight = (hole | annulus).astype(float)
    filled, iterations, converged, stages = _staged_fill(grid, weight, p, fill, values, distance, schedule, tol=tol)
    if trace.any() and fill.any():
        filled[fill.ravel()] = np.clip(filled[fill.ravel()], values[trace].min(), values[trace].max())

    fill_energy = _cell_energy(grid, filled, p, hole)
    annulus_energy = _cell_energy(grid, filled, p, annulus)
    density = _safe_ratio(fill_energy / max(hole.sum(), 1), annulus_energy / annulus.sum())
    report = SobolevFillReport(ball=i, fill_energy=fill_energy, annulus_energy=annulus_energy,
                               ratio=_safe_ratio(fill_energy, annulus_energy), density_ratio=density,
                               stages=stages, iterations=iterations, converged=converged)
    return ScalarField(grid, filled), report


@dataclass
class PartitionFillReport:
    branch: str
    layer_thickness: float
    layer_jump: float
    reflected_jump: float
    annulus_jump: float
    added_jump: float
    threshold: float
    sphere_radius: float | None = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'branch': self.branch,
            'layer_thickness': self.layer_thickness,
            'layer_jump': self.layer_jump,
            'reflected_jump': self.reflected_jump,
            'annulus_jump': self.annulus_jump,
            'added_jump': self.added_jump,
            'threshold': self.threshold,
            'sphere_radius': self.sphere_radius,
        }


def _trace_band(first: np.ndarray, second: np.ndarray, hole: np.ndarray, near: np.ndarray) -> np.ndarray:
    """Non-hole sites that are near the ball or neighbour a hole site."""
    band = near & ~hole
    touch_first = hole[second] & ~hole[first]
    touch_second = hole[first] & ~hole[second]
    band[first[touch_first]] = True
    band[second[touch_second]] = True
    return band


def _fill_partition(first: np.ndarray, second: np.ndarray, base: np.ndarray, centers: np.ndarray,
                    labels: np.ndarray, hole: np.ndarray, band: np.ndarray, theta: np.ndarray,
                    r: float, delta: float, r_star: float, gamma: float) -> Tuple[np.ndarray, PartitionFillReport]:
    """
    Fill the labels of the `hole` sites of one ball from the labels on `band`.

    1. Reflect band labels into the layer r_in < |x - theta| <= r through the
       radial map onto the annulus (diagnostic only).
    2. Replace the layer by its min-cut fill with the band as boundary data,
       pairs touching the core r_in ball ignored. J is its jump mass.
    3. If J <= gamma * s^(n-1), scan radii in (r_in + s/3, r_in + 2s/3) from
       the inside out for a sphere whose crossing pairs all have the same outer
       label m, and set every site inside it to m. Without such a sphere the
       whole hole gets its min-cut fill.
    4. Otherwise fill the hole with 0.

    r_in is r/2 for r < delta and r / (1 + delta/r_star) otherwise; s = r - r_in.
    """
    n = centers.shape[1]
    labels = np.asarray(labels, dtype=np.uint8).copy()
    touch = hole[first] | hole[second]
    f, s_idx, w = first[touch], second[touch], base[touch]
    r_in = r / 2 if r < delta else r / (1 + delta / r_star)
    thickness = r - r_in
    threshold = gamma * thickness ** (n - 1)
    distance = np.linalg.norm(centers - theta, axis=1)

    both_band = band[first] & band[second]
    annulus_jump = float(np.sum(base[both_band][labels[first[both_band]] != labels[second[both_band]]]))
    if not hole.any():
        return labels, PartitionFillReport('none', thickness, 0.0, 0.0, annulus_jump, 0.0, threshold)
    if not band.any():
        raise ResolutionError("ball has no trace sites at this resolution")

    layer = hole & (distance > r_in)
    core = hole & ~layer
    outside_core = ~core[f] & ~core[s_idx]

    def jump(lab: np.ndarray, select: np.ndarray) -> float:
        return float(np.sum(w[select & (lab[f] != lab[s_idx])]))

    reflected = labels.copy()
    if layer.any():
        band_index = np.flatnonzero(band)
        tree = cKDTree(centers[band_index])
        radial = distance[layer]
        directions = (centers[layer] - theta) / radial[:, None]
        mirrored = theta + directions * (r + (r - radial) * delta / thickness)[:, None]
        _, nearest = tree.query(mirrored)
        reflected[layer] = labels[band_index[nearest]]
    reflected_jump = jump(reflected, outside_core)

    layer_labels, _ = mincut_labels(f, s_idx, np.where(outside_core, w, 0.0), ~layer, labels)
    layer_jump = jump(layer_labels, outside_core)

    sphere = None
    if layer_jump <= threshold:
        lo, hi = r_in + thickness / 3, r_in + 2 * thickness / 3
        d_f, d_s = distance[f], distance[s_idx]
        inner, outer = np.minimum(d_f, d_s), np.maximum(d_f, d_s)
        outer_label = np.where(d_f > d_s, layer_labels[f], layer_labels[s_idx])
        for rho in np.unique(distance[hole & (distance > lo) & (distance < hi)]):
            crossing = (inner <= rho) & (outer > rho)
            trace = np.unique(outer_label[crossing])
            if len(trace) == 1:
                sphere = float(rho)
                out = layer_labels.copy()
                out[hole & (distance <= rho)] = trace[0]
                branch = 'clean_sphere'
                break
        if sphere is None:
            out, _ = mincut_labels(f, s_idx, w, ~hole, labels)
            branch = 'mincut'
    else:
        out = labels.copy()
        out[hole] = 0
        branch = 'fallback'

    report = PartitionFillReport(branch=branch, layer_thickness=thickness, layer_jump=layer_jump,
                                 reflected_jump=reflected_jump, annulus_jump=annulus_jump,
                                 added_jump=jump(out, np.ones(len(f), dtype=bool)), threshold=threshold,
                                 sphere_radius=sphere)
    return out, report


def extend_partition_ball(u: LabelField, i: int, masks: Masks,
                          gamma_threshold: float = DEFAULT_GAMMA) -> Tuple[LabelField, PartitionFillReport]:
    """
    Fill the labels of ball i's hole cells from its annulus labels.

    Raises:
        ResolutionError: if the ball has no annulus cells at this resolution
    """
    g = masks.geometry
    if g is None:
        raise ParameterError("masks carry no geometry")
    ball = g.balls[i]
    if not masks.annulus_cells(i).any():
        raise ResolutionError(f"ball {i} has an empty annulus at h={masks.grid.h}")
    pairs = neighbour_pairs(masks.grid)
    hole = masks.ball_hole_cells(i).ravel()
    band = _trace_band(pairs.first, pairs.second, hole, masks.annulus_cells(i).ravel())
    labels, report = _fill_partition(pairs.first, pairs.second, pairs.base, masks.grid.cell_centers(),
                                     u.labels.ravel(), hole, band, np.asarray(ball.center), ball.radius,
                                     g.delta, g.r_star, gamma_threshold)
    return LabelField(masks.grid, labels), report


def _axis_edges(grid: Grid, d: int) -> Tuple[np.ndarray, np.ndarray]:
    shape = list(grid.node_shape)
    shape[d] = grid.m
    index = np.indices(shape).reshape(grid.n, -1).T
    head = index.copy()
    head[:, d] += 1
    return np.ravel_multi_index(index.T, grid.node_shape), np.ravel_multi_index(head.T, grid.node_shape)


def _component_labels(grid: Grid, band: np.ndarray, jump_edges: Sequence[np.ndarray]) -> np.ndarray:
    """Label 0 on the largest jump-free component of the band nodes, 1 on the others."""
    size = int(np.prod(grid.node_shape))
    tails, heads = [], []
    for d in range(grid.n):
        tail, head = _axis_edges(grid, d)
        keep = band[tail] & band[head] & ~np.asarray(jump_edges[d]).ravel()
        tails.append(tail[keep])
        heads.append(head[keep])
    tail, head = np.concatenate(tails), np.concatenate(heads)
    adjacency = sparse.coo_matrix((np.ones(len(tail)), (tail, head)), shape=(size, size))
    _, component = connected_components(adjacency, directed=False)
    labels = np.zeros(size, dtype=np.uint8)
    if not band.any():
        return labels
    counts = np.bincount(component[band])
    labels[band] = (component[band] != int(np.argmax(counts))).astype(np.uint8)
    return labels


@dataclass
class BallFill:
    ball: int
    nodes: np.ndarray
    values: np.ndarray
    jumps: Tuple[np.ndarray, ...]
    branch: str
    sobolev: SobolevFillReport | None = None
    partition: PartitionFillReport | None = None


def _fill_ball(u: SbvField, i: int, masks: Masks, p: float, gamma: float, tol: float,
               value_range: Tuple[float, float]) -> BallFill:
    g = masks.geometry
    grid = masks.grid
    ball = g.balls[i]
    fill = fill_nodes(masks, i).ravel()
    values = u.values.ravel().copy()
    fill_index = np.flatnonzero(fill)
    if not fill.any():
        return BallFill(i, fill_index, np.zeros(0), tuple(np.zeros(0, bool) for _ in range(grid.n)), 'none')

    edges = [_axis_edges(grid, d) for d in range(grid.n)]
    if masks.boundary_ball_flags[i]:
        values[fill] = np.clip(0.0, *value_range)
        jumps = tuple((fill[t] | fill[h]) & (values[t] != values[h]) for t, h in edges)
        return BallFill(i, fill_index, values[fill], jumps, 'boundary')

    # labels on the node lattice, then the Sobolev fill with the new jumps removed
    lattice = _node_lattice(grid)
    pairs = neighbour_pairs(lattice)
    distance = np.linalg.norm(grid.node_coords() - np.asarray(ball.center), axis=1)
    band = _trace_band(pairs.first, pairs.second, fill, distance < ball.radius + g.delta)
    input_jumps = [np.where(fill[t] | fill[h], False, np.asarray(e).ravel())
                   for (t, h), e in zip(edges, u.jump_edges)]
    labels = _component_labels(grid, band, input_jumps)
    labels, partition = _fill_partition(pairs.first, pairs.second, pairs.base, lattice.cell_centers(), labels,
                                        fill, band, np.asarray(ball.center), ball.radius, g.delta, g.r_star, gamma)
    new_jumps = tuple((fill[t] | fill[h]) & (labels[t] != labels[h]) for t, h in edges)
    edge_mask = [~(old | new).reshape(e.shape) for old, new, e in zip(input_jumps, new_jumps, u.jump_edges)]

    hole = masks.ball_hole_cells(i)
    schedule = dyadic_schedule(ball.radius, g.delta, g.r_star)
    filled, iterations, converged, stages = _staged_fill(grid, hole.astype(float), p, fill, values, distance,
                                                         schedule, edge_mask=edge_mask, tol=tol)
    trace = band & ~fill
    filled[fill] = np.clip(filled[fill], values[trace].min(), values[trace].max())
    annulus = masks.annulus_cells(i)
    fill_energy = _cell_energy(grid, filled, p, hole, [~m for m in edge_mask])
    annulus_energy = _cell_energy(grid, filled, p, annulus, u.jump_edges)
    density = _safe_ratio(fill_energy / max(hole.sum(), 1), annulus_energy / max(annulus.sum(), 1))
    sobolev = SobolevFillReport(ball=i, fill_energy=fill_energy, annulus_energy=annulus_energy,
                                ratio=_safe_ratio(fill_energy, annulus_energy), density_ratio=density,
                                stages=stages, iterations=iterations, converged=converged)
    return BallFill(i, fill_index, filled[fill], new_jumps, partition.branch, sobolev, partition)


@dataclass
class ExtensionReport:
    """
    Energies of one whole-domain extension.

    `ratio` is energy_after / (energy_before + boundary_term), the boundary
    term counting only when some ball meets the frame. `interior_ratio`
    compares the energy away from the frame with energy_before, without a
    boundary term. `constant` is (energy_after - boundary term) / energy_before.
    """
    energy_before: float
    energy_after: float
    energy_after_interior: float
    boundary_term: float
    has_boundary_balls: bool
    branch: str
    branches: List[str] = field(default_factory=list)
    max_density_ratio: float | None = None
    homothety_check: float | None = None
    instance_id: str = ""

    @property
    def applied_boundary_term(self) -> float:
        return self.boundary_term if self.has_boundary_balls else 0.0

    @property
    def ratio(self) -> float | None:
        return _safe_ratio(self.energy_after, self.energy_before + self.applied_boundary_term)

    @property
    def interior_ratio(self) -> float | None:
        return _safe_ratio(self.energy_after_interior, self.energy_before)

    @property
    def constant(self) -> float | None:
        if self.energy_before <= 0:
            return None
        return (self.energy_after - self.applied_boundary_term) / self.energy_before

    def to_dict(self) -> Dict[str, Any]:
        return {
            'instance_id': self.instance_id,
            'energy_before': self.energy_before,
            'energy_after': self.energy_after,
            'energy_after_interior': self.energy_after_interior,
            'boundary_term': self.boundary_term,
            'has_boundary_balls': self.has_boundary_balls,
            'ratio': self.ratio,
            'interior_ratio': self.interior_ratio,
            'constant': self.constant,
            'branch': self.branch,
            'branches': self.branches,
            'max_density_ratio': self.max_density_ratio,
            'homothety_check': self.homothety_check,
        }


def extend_sbv_domain(u: SbvField, g: PerforatedGeometry, masks: Masks, p: float = 2.0,
                      gamma_threshold: float = DEFAULT_GAMMA, tol: float = 1e-10,
                      parallel: int = 1) -> Tuple[SbvField, ExtensionReport]:
    """
    Extend an SBV field given outside the holes to the whole window.

    Interior balls get a partition fill of their labels on the node lattice
    (labels come from the jump-free components of the trace) and a p-harmonic
    fill of the values with the new jump edges removed. Balls meeting the frame
    get the constant 0, clipped into the input range, with jumps wherever the
    values change. Nodes outside the holes and their edges are never touched.

    Raises:
        ResolutionError: if h >= delta/2
    """
    grid = masks.grid
    if grid.h >= g.delta / 2:
        raise ResolutionError(f"h={grid.h} must be below delta/2={g.delta / 2}")
    if u.grid != grid:
        raise GridMismatchError(f"field grid {u.grid} differs from mask grid {grid}")

    all_fill = np.zeros(int(np.prod(grid.node_shape)), dtype=bool)
    for i in range(len(g.balls)):
        all_fill |= fill_nodes(masks, i).ravel()
    known = u.values.ravel()[~all_fill]
    value_range = (float(known.min()), float(known.max())) if known.size else (0.0, 0.0)

    jobs = [lambda i=i: _fill_ball(u, i, masks, p, gamma_threshold, tol, value_range) for i in range(len(g.balls))]
    fills = run_jobs(jobs, parallel=parallel)

    values = u.values.ravel().copy()
    jumps = [np.asarray(e).ravel().copy() for e in u.jump_edges]
    edges = [_axis_edges(grid, d) for d in range(grid.n)]
    for ball_fill in fills:
        if not len(ball_fill.nodes):
            continue
        values[ball_fill.nodes] = ball_fill.values
        fill = np.zeros_like(all_fill)
        fill[ball_fill.nodes] = True
        for d, (t, h) in enumerate(edges):
            inside = fill[t] | fill[h]
            jumps[d] = np.where(inside, ball_fill.jumps[d], jumps[d])
    out = SbvField(grid, values, tuple(j.reshape(e.shape) for j, e in zip(jumps, u.jump_edges)))

    interior = [f for f in fills if f.branch not in ("none", "boundary")]
    densities = [f.sobolev.density_ratio for f in interior
                 if f.sobolev is not None and f.sobolev.density_ratio is not None]
    branch = max((f.branch for f in interior), key=BRANCH_ORDER.index, default="none")
    report = ExtensionReport(
        energy_before=msp_energy(u, p, masks, "non_hole"),
        energy_after=msp_energy(out, p, masks, "all"),
        energy_after_interior=msp_energy(out, p, masks, "interior"),
        boundary_term=2 * grid.n * grid.t ** (grid.n - 1),
        has_boundary_balls=bool(any(f.branch == "boundary" for f in fills)),
        branch=branch,
        branches=[f.branch for f in fills],
        max_density_ratio=max(densities) if densities else None,
    )
    return out, report


@dataclass(frozen=True, eq=False)
class ExtensionInstance:
    instance_id: str
    geometry: PerforatedGeometry
    h: float
    values: np.ndarray
    jump_edges: Tuple[np.ndarray, ...]
    p: float = 2.0
    frame_width: int = 1

    def build(self) -> Tuple[Grid, Masks, SbvField]:
        grid, masks = rasterize(self.geometry, self.h, self.frame_width)
        return grid, masks, SbvField(grid, self.values, self.jump_edges)

    def scaled(self, lam: float) -> "ExtensionInstance":
        """Homothety by lam; values scale by lam^(1 - 1/p) so MS^p scales by lam^(n-1)."""
        return replace(self, instance_id=f"{self.instance_id}@{lam:g}", geometry=self.geometry.scaled(lam),
                       h=self.h * lam, values=self.values * lam ** (1 - 1 / self.p))


def random_sbv_values(grid: Grid, rng: np.random.Generator, kind: str) -> Tuple[np.ndarray, Tuple[np.ndarray, ...]]:
    """
    Random node values and jump edges of one of the kinds
    'constant', 'affine', 'smooth', 'jump' (smooth plus a jump plane).
    """
    x = grid.node_coords(local=True)
    jumps = tuple(np.zeros(tuple(grid.m if e == d else grid.m + 1 for e in range(grid.n)), dtype=bool)
                  for d in range(grid.n))
    if kind == "constant":
        return np.full(grid.node_shape, rng.normal()), jumps
    if kind == "affine":
        return (x @ rng.normal(size=grid.n)).reshape(grid.node_shape), jumps
    if kind not in ("smooth", "jump"):
        raise ParameterError(f"unknown field kind {kind!r}")
    values = x @ rng.normal(size=grid.n)
    for _ in range(3):
        k = rng.normal(size=grid.n) * 2 * math.pi / grid.t
        values = values + rng.normal() * np.sin(x @ k + rng.uniform(0, 2 * math.pi))
    if kind == "jump":
        normal = rng.normal(size=grid.n)
        normal /= np.linalg.norm(normal)
        side = (x - rng.uniform(0, grid.t, size=grid.n)) @ normal > 0
        values = values + np.where(side, rng.uniform(0.5, 2.0), 0.0)
        side = side.reshape(grid.node_shape)
        jumps = tuple(np.diff(side.astype(np.int8), axis=d) != 0 for d in range(grid.n))
    return values.reshape(grid.node_shape), jumps


def random_extension_instance(seed: int, *, n: int = 2, t: float = 2.0, delta: float = 0.2, r_star: float = 0.5,
                              radius_law: Tuple[float, float] = (0.1, 0.45), intensity: float = 1.0,
                              h: float | None = None, p: float = 2.0, kind: str = "mixed") -> ExtensionInstance:
    """One seeded (geometry, field) pair; kind 'mixed' draws 'smooth' or 'jump'."""
    h = h if h is not None else delta / 4
    geometry = gen_hardcore_rejection(RealizationSeed(seed, kind="hardcore-rejection"), intensity, radius_law,
                                      delta, t, n=n, r_star=r_star)
    grid, _ = rasterize(geometry, h)
    rng = np.random.default_rng([seed, 1])
    if kind == "mixed":
        kind = "jump" if rng.random() < 0.5 else "smooth"
    values, jumps = random_sbv_values(grid, rng, kind)
    return ExtensionInstance(f"seed{seed}-{kind}", geometry, h, values, jumps, p)


def run_extension_instance(instance: ExtensionInstance, gamma_threshold: float = DEFAULT_GAMMA,
                           lambdas: Sequence[float] = (0.5, 2.0), tol: float = 1e-10) -> ExtensionReport:
    """Extend one instance and record the worst relative ratio change under homothety."""
    _, masks, u = instance.build()
    _, report = extend_sbv_domain(u, instance.geometry, masks, instance.p, gamma_threshold, tol)
    report.instance_id = instance.instance_id
    checks = []
    for lam in lambdas:
        scaled = instance.scaled(lam)
        _, masks_lam, u_lam = scaled.build()
        _, report_lam = extend_sbv_domain(u_lam, scaled.geometry, masks_lam, instance.p, gamma_threshold, tol)
        if report.ratio is not None and report_lam.ratio is not None and report.ratio > 0:
            checks.append(abs(report_lam.ratio - report.ratio) / report.ratio)
    report.homothety_check = max(checks) if checks else None
    return report


def extension_battery(instances: Sequence[ExtensionInstance], gamma_threshold: float = DEFAULT_GAMMA,
                      lambdas: Sequence[float] = (0.5, 2.0), parallel: int = 1) -> List[ExtensionReport]:
    jobs = [lambda x=x: run_extension_instance(x, gamma_threshold, lambdas) for x in instances]
    return run_jobs(jobs, parallel=parallel, desc="extension")


def extension_summary(reports: Sequence[ExtensionReport]) -> pd.DataFrame:
    """Per-instance table with columns instance_id, ratio, branch, lambda_check."""
    return pd.DataFrame([{
        'instance_id': r.instance_id,
        'ratio': r.ratio,
        'branch': r.branch,
        'lambda_check': r.homothety_check,
        'interior_ratio': r.interior_ratio,
        'constant': r.constant,
    } for r in reports], columns=['instance_id', 'ratio', 'branch', 'lambda_check', 'interior_ratio', 'constant'])


@dataclass(frozen=True)
class ExtensionConstant:
    value: float
    n_used: int
    n_skipped: int
    summary: Dict[str, float]

    def to_dict(self) -> Dict[str, Any]:
        return {'value': self.value, 'n_used': self.n_used, 'n_skipped': self.n_skipped, 'summary': self.summary}


def empirical_extension_constant(reports: Sequence[ExtensionReport]) -> ExtensionConstant:
    """
    Max over the batch of (energy_after - boundary term) / energy_before.

    Instances with energy_before = 0 are skipped.

    Raises:
        ParameterError: with fewer than 10 instances, or when every instance is skipped
    """
    if len(reports) < 10:
        raise ParameterError(f"need at least 10 instances, got {len(reports)}")
    constants = [r.constant for r in reports if r.constant is not None]
    skipped = len(reports) - len(constants)
    if not constants:
        raise ParameterError(f"all {skipped} instances have zero energy before extension")
    if skipped:
        logger.info(f"skipped {skipped} instances with zero energy before extension")
    described = pd.Series(constants).describe()
    summary = {key: float(described[key]) for key in ('mean', 'std', 'min', '50%', 'max') if not np.isnan(described[key])}
    return ExtensionConstant(value=float(max(constants)), n_used=len(constants), n_skipped=skipped, summary=summary)


def planar_cut_instance(offset: float, angle: float, *, r: float = 0.3, delta: float = 0.2, r_star: float = 0.5,
                        h: float = 0.025, n: int = 2) -> Tuple[LabelField, Masks]:
    """
    A single centred ball whose annulus labels are split by a plane at the given
    offset. The normal is (cos angle, sin angle) in the first two axes.
    """
    t = 2 * (r + delta) + 8 * h
    centre = (t / 2,) * n
    g = PerforatedGeometry(n=n, t=t, balls=(BallInclusion(centre, r),), delta=delta, r_star=r_star)
    grid, masks = rasterize(g, h)
    normal = np.array([math.cos(angle), math.sin(angle)] + [0.0] * (n - 2))
    side = (grid.cell_centers() - np.asarray(centre)) @ normal > offset
    return LabelField(grid, side.astype(np.uint8)), masks


def calibrate_gamma(n_instances: int = 40, seed: int = 0, quantile: float = 0.95, **kwargs) -> float:
    """
    Threshold under which `quantile` of planar-cut instances pass the small-jump test.

    Offsets and angles are drawn uniformly; the returned value is the quantile
    of layer_jump / layer_thickness^(n-1).
    """
    rng = np.random.default_rng(seed)
    r = kwargs.get('r', 0.3)
    scores = []
    for _ in range(n_instances):
        labels, masks = planar_cut_instance(rng.uniform(-r, r), rng.uniform(0, math.pi), **kwargs)
        _, report = extend_partition_ball(labels, 0, masks, gamma_threshold=math.inf)
        scores.append(report.layer_jump / report.layer_thickness ** (masks.grid.n - 1))
    return float(np.quantile(scores, quantile))
