"""
Discrete cell problems.

The volume problem minimizes the discrete p-Dirichlet energy with affine
boundary data on the frame; p = 2 is a sparse SPD system solved with a
Jacobi-preconditioned conjugate gradient, p != 2 is a preconditioned descent
warm-started from the quadratic solution. The surface problem is a binary
partition solved exactly by s-t minimum cut (PyMaxflow). Dense and exhaustive
oracles check both on small instances.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Any, Dict, Sequence, Tuple

import maxflow as pymaxflow
import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from discretize import (Grid, LabelField, Masks, ScalarField, SurfaceIntegrand, VolumeIntegrand,
                        datum_section_area, pair_weights, surface_energy, volume_energy)
from errors import OracleSizeError, ParameterError
from utils.log_utils import get_logger

logger = get_logger("solvers")

SOURCE = -1
SINK = -2

BRUTE_FORCE_MAX_FREE_CELLS = 20
BRUTE_FORCE_MAX_FREE_NODES = 400
STAGNATION_STEPS = 10


@dataclass(eq=False)
class CellProblemResult:
    kind: str
    minimizer: ScalarField | LabelField
    energy: float
    normalized: float
    iterations: int = 0
    residual: float = 0.0
    exact: bool = False
    converged: bool = True
    wall_time: float = 0.0
    method: str = ""

    def to_dict(self, timing: bool = False) -> Dict[str, Any]:
        data = {
            'kind': self.kind,
            'energy': self.energy,
            'normalized': self.normalized,
            'iterations': self.iterations,
            'residual': self.residual,
            'exact': self.exact,
            'converged': self.converged,
            'method': self.method,
        }
        if timing:
            data['wall_time'] = self.wall_time
        return data

    def __str__(self):
        flag = "exact" if self.exact else f"res={self.residual:.2e}"
        return f"{self.kind}[{self.method}] normalized={self.normalized:.12g} ({flag}, it={self.iterations})"


# ---------------------------------------------------------------------------
# volume problem
# ---------------------------------------------------------------------------

def _lower_corner_edges(grid: Grid) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """For every (cell, axis) pair: owning cell index, axis, tail node, head node (flat)."""
    cells = np.indices(grid.cell_shape).reshape(grid.n, -1).T
    owner, axis, tail, head = [], [], [], []
    for d in range(grid.n):
        shifted = cells.copy()
        shifted[:, d] += 1
        owner.append(np.arange(len(cells)))
        axis.append(np.full(len(cells), d))
        tail.append(np.ravel_multi_index(cells.T, grid.node_shape))
        head.append(np.ravel_multi_index(shifted.T, grid.node_shape))
    return np.concatenate(owner), np.concatenate(axis), np.concatenate(tail), np.concatenate(head)


def _edge_conductance(grid: Grid, cell_weight: np.ndarray, edge_mask: Sequence[np.ndarray] | None) -> np.ndarray:
    owner, axis, _, _ = _lower_corner_edges(grid)
    k = cell_weight.ravel()[owner] * grid.h ** (grid.n - 2)
    if edge_mask is not None:
        cells = np.indices(grid.cell_shape).reshape(grid.n, -1).T
        allowed = np.concatenate([np.asarray(edge_mask[d])[tuple(cells.T)] for d in range(grid.n)])
        k = np.where(allowed, k, 0.0)
    return k


def _assemble_laplacian(grid: Grid, conductance: np.ndarray) -> sparse.csr_matrix:
    _, _, tail, head = _lower_corner_edges(grid)
    size = int(np.prod(grid.node_shape))
    rows = np.concatenate([tail, head, tail, head])
    cols = np.concatenate([tail, head, head, tail])
    data = np.concatenate([conductance, conductance, -conductance, -conductance])
    return sparse.coo_matrix((data, (rows, cols)), shape=(size, size)).tocsr()


def _pcg(A: sparse.csr_matrix, b: np.ndarray, x0: np.ndarray, tol: float, max_iter: int) -> Tuple[np.ndarray, int, float]:
    """
    Jacobi-preconditioned conjugate gradient.

    Stops when ||r|| <= tol * ||b||. Returns (x, iterations, relative residual).
    """
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros_like(b), 0, 0.0
    inv_diag = 1.0 / A.diagonal()
    x = np.array(x0, dtype=float)
    r = b - A @ x
    z = inv_diag * r
    d = z.copy()
    rz = r @ z
    k = 0
    while np.linalg.norm(r) > tol * b_norm and k < max_iter:
        Ad = A @ d
        alpha = rz / (d @ Ad)
        x = x + alpha * d
        r = r - alpha * Ad
        z = inv_diag * r
        rz_next = r @ z
        d = z + (rz_next / rz) * d
        rz = rz_next
        k += 1
    return x, k, float(np.linalg.norm(r) / b_norm)


def _p_energy(grid: Grid, cell_weight: np.ndarray, p: float, tail, head, owner, u: np.ndarray) -> Tuple[float, np.ndarray]:
    """Energy sum_c w_c |grad u|^p h^n and its gradient with respect to the node values."""
    diff = u[head] - u[tail]
    sq = np.bincount(owner, weights=diff ** 2, minlength=cell_weight.size)
    scale = grid.h ** (grid.n - p)
    energy = float(np.sum(cell_weight.ravel() * sq ** (p / 2)) * scale)
    factor = cell_weight.ravel() * p * np.where(sq > 0, sq, 1.0) ** (p / 2 - 1) * np.where(sq > 0, 1.0, 0.0) * scale
    flux = factor[owner] * diff
    gradient = np.bincount(head, weights=flux, minlength=u.size) - np.bincount(tail, weights=flux, minlength=u.size)
    return energy, gradient


def minimize_dirichlet(grid: Grid, cell_weight: np.ndarray, p: float, fixed: np.ndarray, values: np.ndarray,
                       tol: float = 1e-8, edge_mask: Sequence[np.ndarray] | None = None,
                       initial: np.ndarray | None = None, max_iter: int | None = None) -> Tuple[np.ndarray, int, float, bool]:
    """
    Minimize sum_c w_c |grad u|^p h^n over node values, with u = values on fixed nodes.

    Free nodes that no weighted edge links to a fixed node (inside
    zero-weight holes, or cut off by masked edges) do not affect the energy.
    They are filled by an unweighted harmonic extension and then set to the
    mean of that fill over their component, which keeps the system nonsingular
    and the result deterministic.

    Args:
        grid: Grid of the problem
        cell_weight: Per-cell weight (hole weight times coefficient)
        p: Exponent
        fixed: Boolean per node, True where the value is prescribed
        values: Node values; entries on fixed nodes are the boundary data
        tol: Relative residual (p = 2) or relative energy stagnation (p != 2)
        edge_mask: Optional per-axis edge arrays; False removes the edge
        initial: Optional starting guess for the free nodes
        max_iter: Iteration cap, default 50 * sqrt(free nodes)

    Returns:
        (u, iterations, residual, converged)
    """
    fixed = np.asarray(fixed, dtype=bool).ravel()
    u = np.array(values, dtype=float).ravel()
    free = ~fixed
    n_free = int(free.sum())
    if max_iter is None:
        max_iter = max(1, int(50 * math.sqrt(max(n_free, 1))))
    if n_free == 0:
        return u.reshape(grid.node_shape), 0, 0.0, True

    _, _, tail, head = _lower_corner_edges(grid)
    conductance = _edge_conductance(grid, cell_weight, edge_mask)
    L = _assemble_laplacian(grid, conductance)

    active = conductance > 0
    size = u.size
    adjacency = sparse.coo_matrix((np.ones(int(active.sum())), (tail[active], head[active])), shape=(size, size))
    _, component = connected_components(adjacency, directed=False)
    anchored = np.zeros(component.max() + 1, dtype=bool)
    anchored[component[fixed]] = True
    solve = free & anchored[component]
    floating = free & ~anchored[component]

    iterations, residual = 0, 0.0
    if solve.any():
        A = L[solve][:, solve]
        b = -(L[solve][:, ~solve] @ u[~solve])
        x0 = initial.ravel()[solve] if initial is not None else np.zeros(int(solve.sum()))
        u[solve], iterations, residual = _pcg(A, b, x0, tol, max_iter)
    converged = residual <= tol

    if floating.any():
        unit = _assemble_laplacian(grid, np.ones_like(conductance))
        A = unit[floating][:, floating]
        b = -(unit[floating][:, ~floating] @ u[~floating])
        fill, _, _ = _pcg(A, b, np.zeros(int(floating.sum())), 1e-12, 10 * int(floating.sum()) + 10)
        u[floating] = fill
        for c in np.unique(component[floating]):
            members = floating & (component == c)
            u[members] = u[members].mean()

    if p != 2 and solve.any():
        u, steps, residual, converged = _descend(grid, cell_weight, p, solve, u, tail, head, tol,
                                                 max(max_iter, 500), edge_mask)
        iterations += steps
    return u.reshape(grid.node_shape), iterations, residual, converged


def _descend(grid, cell_weight, p, solve, u, tail, head, tol, max_iter, edge_mask):
    """Jacobi-preconditioned gradient descent with Armijo backtracking."""
    owner, _, _, _ = _lower_corner_edges(grid)
    weight = cell_weight
    if edge_mask is not None:
        # masked edges behave as jumps: drop their difference from the cell gradient
        keep = _edge_conductance(grid, np.ones(grid.cell_shape), edge_mask) > 0
        tail, head, owner = tail[keep], head[keep], owner[keep]
    energy, gradient = _p_energy(grid, weight, p, tail, head, owner, u)
    stagnant, steps, decrease = 0, 0, 0.0
    while steps < max_iter and stagnant < STAGNATION_STEPS:
        diff = u[head] - u[tail]
        sq = np.bincount(owner, weights=diff ** 2, minlength=weight.size)
        k = weight.ravel()[owner] * p * np.maximum(sq[owner], 1e-300) ** (p / 2 - 1) * grid.h ** (grid.n - p)
        diag = np.bincount(tail, weights=k, minlength=u.size) + np.bincount(head, weights=k, minlength=u.size)
        direction = np.zeros_like(u)
        direction[solve] = -gradient[solve] / np.maximum(diag[solve], 1e-300)
        slope = gradient @ direction
        if slope >= 0:
            break
        step = 1.0
        while True:
            trial = u + step * direction
            trial_energy, trial_gradient = _p_energy(grid, weight, p, tail, head, owner, trial)
            if trial_energy <= energy + 1e-4 * step * slope or step < 1e-12:
                break
            step *= 0.5
        if trial_energy > energy:
            break
        decrease = (energy - trial_energy) / max(energy, 1e-300)
        stagnant = stagnant + 1 if decrease < tol else 0
        u, energy, gradient = trial, trial_energy, trial_gradient
        steps += 1
    converged = stagnant >= STAGNATION_STEPS or energy == 0.0
    if not converged:
        logger.warning(f"p={p} descent stopped after {steps} steps, last relative decrease {decrease:.2e}")
    return u, steps, float(decrease), converged


def solve_volume_cell(masks: Masks, q: VolumeIntegrand, xi: Sequence[float], tol: float = 1e-8,
                      initial: ScalarField | None = None, max_iter: int | None = None) -> CellProblemResult:
    """
    Minimize the discrete volume energy with u = l_xi on the frame nodes.

    The returned energy never exceeds volume_energy(l_xi) or the energy of
    `initial`: the best of the computed minimizer and those feasible
    competitors is returned.
    """
    if tol <= 0:
        raise ParameterError(f"tolerance must be positive, got {tol}")
    start = time.perf_counter()
    grid = masks.grid
    affine = ScalarField.affine(grid, xi)
    weight = q.cell_weights(masks)
    values, iterations, residual, converged = minimize_dirichlet(
        grid, weight, q.p, masks.frame_nodes, affine.values, tol=tol,
        initial=initial.values if initial is not None else None, max_iter=max_iter)
    if not converged:
        logger.warning(f"volume cell xi={list(xi)} not converged: residual {residual:.2e} after {iterations} iterations")

    candidates = [ScalarField(grid, values), affine]
    if initial is not None:
        candidates.append(ScalarField(grid, np.where(masks.frame_nodes, affine.values, initial.values)))
    energies = [volume_energy(u, q, masks) for u in candidates]
    best = int(np.argmin(energies))
    volume = grid.t ** grid.n
    return CellProblemResult(
        kind='volume', minimizer=candidates[best], energy=energies[best], normalized=energies[best] / volume,
        iterations=iterations, residual=residual, exact=False, converged=converged,
        wall_time=time.perf_counter() - start, method='pcg' if q.p == 2 else 'descent')


def brute_force_volume(masks: Masks, q: VolumeIntegrand, xi: Sequence[float]) -> CellProblemResult:
    """
    Dense least-squares solve of the quadratic volume problem (p = 2 only).

    Raises:
        ParameterError: if p != 2
        OracleSizeError: above 400 free nodes
    """
    if q.p != 2:
        raise ParameterError(f"dense oracle only handles p = 2, got p = {q.p}")
    grid = masks.grid
    free = ~masks.frame_nodes.ravel()
    if free.sum() > BRUTE_FORCE_MAX_FREE_NODES:
        raise OracleSizeError(f"{int(free.sum())} free nodes exceeds {BRUTE_FORCE_MAX_FREE_NODES}")
    start = time.perf_counter()
    affine = ScalarField.affine(grid, xi)
    L = _assemble_laplacian(grid, _edge_conductance(grid, q.cell_weights(masks), None)).toarray()
    u = affine.values.ravel().copy()
    b = -L[np.ix_(free, ~free)] @ u[~free]
    u[free] = np.linalg.lstsq(L[np.ix_(free, free)], b, rcond=None)[0]
    minimizer = ScalarField(grid, u)
    energy = volume_energy(minimizer, q, masks)
    return CellProblemResult(kind='volume', minimizer=minimizer, energy=energy, normalized=energy / grid.t ** grid.n,
                             exact=True, wall_time=time.perf_counter() - start, method='dense')


# ---------------------------------------------------------------------------
# max-flow / min-cut
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class FlowGraph:
    """
    Directed graph on nodes 0..n_nodes-1 plus the terminals SOURCE and SINK.
    """
    n_nodes: int
    tails: np.ndarray
    heads: np.ndarray
    capacities: np.ndarray

    @classmethod
    def from_edges(cls, n_nodes: int, edges: Sequence[Tuple[int, int, float]]) -> "FlowGraph":
        if not edges:
            return cls(n_nodes, np.zeros(0, int), np.zeros(0, int), np.zeros(0))
        tails, heads, caps = zip(*edges)
        return cls(n_nodes, np.asarray(tails, int), np.asarray(heads, int), np.asarray(caps, float))


@dataclass(eq=False)
class FlowResult:
    value: float
    source_side: np.ndarray
    cut_capacity: float
    certified: bool


def maxflow(graph: FlowGraph) -> FlowResult:
    """
    Maximum s-t flow and a minimum cut.

    Edges into the source or out of the sink carry no s-t flow and are
    ignored. The result is certified when the flow value equals the capacity
    of the returned cut.
    """
    if np.any(graph.capacities < 0):
        raise ParameterError("capacities must be nonnegative")
    tails, heads, caps = graph.tails, graph.heads, graph.capacities
    g = pymaxflow.Graph[float]()
    if graph.n_nodes:
        g.add_nodes(graph.n_nodes)
    ids = np.arange(graph.n_nodes)

    direct = float(np.sum(caps[(tails == SOURCE) & (heads == SINK)]))
    from_source = (tails == SOURCE) & (heads >= 0)
    to_sink = (tails >= 0) & (heads == SINK)
    inner = (tails >= 0) & (heads >= 0)
    if graph.n_nodes:
        source_caps = np.bincount(heads[from_source], weights=caps[from_source], minlength=graph.n_nodes)
        sink_caps = np.bincount(tails[to_sink], weights=caps[to_sink], minlength=graph.n_nodes)
        g.add_grid_tedges(ids, source_caps, sink_caps)
        for u, v, c in zip(tails[inner], heads[inner], caps[inner]):
            if c > 0:
                g.add_edge(int(u), int(v), float(c), 0.0)
    value = (g.maxflow() if graph.n_nodes else 0.0) + direct
    # get_grid_segments is True on the sink side
    source_side = ~np.asarray(g.get_grid_segments(ids), dtype=bool) if graph.n_nodes else np.zeros(0, dtype=bool)

    side = np.concatenate([source_side, [True, False]])
    # terminals index the two trailing entries of `side`
    tail_side = side[np.where(tails == SOURCE, graph.n_nodes, np.where(tails == SINK, graph.n_nodes + 1, tails))]
    head_side = side[np.where(heads == SOURCE, graph.n_nodes, np.where(heads == SINK, graph.n_nodes + 1, heads))]
    cut_capacity = float(np.sum(caps[tail_side & ~head_side]))
    certified = math.isclose(value, cut_capacity, rel_tol=1e-12, abs_tol=1e-12)
    return FlowResult(value=float(value), source_side=source_side, cut_capacity=cut_capacity, certified=certified)


def mincut_labels(first: np.ndarray, second: np.ndarray, weight: np.ndarray, fixed: np.ndarray,
                  labels: np.ndarray) -> Tuple[np.ndarray, FlowResult]:
    """
    Binary labeling minimizing sum of weight over pairs with differing labels.

    Sites in `fixed` keep their entry of `labels`; free sites on the sink side
    of the minimum cut get label 1.

    Args:
        first, second: Site indices of each pair
        weight: Nonnegative pair weights
        fixed: Boolean per site
        labels: Labels per site, read on fixed sites

    Returns:
        (labels, flow result)
    """
    fixed = np.asarray(fixed, dtype=bool).ravel()
    labels = np.asarray(labels, dtype=np.uint8).ravel().copy()
    free_index = np.full(fixed.size, -1)
    free_index[~fixed] = np.arange(int((~fixed).sum()))

    both = ~fixed[first] & ~fixed[second]
    tails = [free_index[first[both]], free_index[second[both]]]
    heads = [free_index[second[both]], free_index[first[both]]]
    caps = [weight[both], weight[both]]
    # one fixed neighbour with label L: pay w when the free site takes 1 - L
    for mine, other in ((first, second), (second, first)):
        sel = ~fixed[mine] & fixed[other]
        ones = sel & (labels[other] == 1)
        zeros = sel & (labels[other] == 0)
        tails += [free_index[mine[ones]], np.full(int(zeros.sum()), SOURCE)]
        heads += [np.full(int(ones.sum()), SINK), free_index[mine[zeros]]]
        caps += [weight[ones], weight[zeros]]
    graph = FlowGraph(int((~fixed).sum()), np.concatenate(tails), np.concatenate(heads), np.concatenate(caps))
    result = maxflow(graph)
    labels[~fixed] = np.where(result.source_side, 0, 1)
    return labels, result


def solve_partition(masks: Masks, s: SurfaceIntegrand, fixed: np.ndarray,
                    boundary_labels: np.ndarray) -> Tuple[LabelField, FlowResult]:
    """
    Exact minimizer of surface_energy over labelings that agree with
    `boundary_labels` on `fixed` cells.
    """
    first, second, weight = pair_weights(masks, s)
    labels, result = mincut_labels(first, second, weight, fixed, boundary_labels)
    return LabelField(masks.grid, labels), result


def datum_labels(grid: Grid, nu: Sequence[float], x_datum: Sequence[float] | None = None) -> np.ndarray:
    """
    u_{x,1,nu} on cell centers: 1 where (y - x) . nu > 0.

    Cells exactly on the plane take 1 when the first nonzero component of nu is
    positive, so the datum for -nu is the complement of the datum for nu.
    """
    nu = np.asarray(nu, dtype=float)
    x = np.full(grid.n, grid.t / 2) + np.asarray(grid.origin) if x_datum is None else np.asarray(x_datum, float)
    side = (grid.cell_centers() - x) @ nu
    tie = 1 if nu[np.flatnonzero(nu)[0]] > 0 else 0
    return np.where(side > 0, 1, np.where(side < 0, 0, tie)).astype(np.uint8).reshape(grid.cell_shape)


def solve_surface_cell(masks: Masks, s: SurfaceIntegrand, nu: Sequence[float],
                       x_datum: Sequence[float] | None = None) -> CellProblemResult:
    """
    Minimize the discrete surface energy over binary labels equal to the datum on the frame.

    Solved exactly by minimum cut. The normalized energy divides by the
    measure of the datum plane inside the window, t^(n-1) for axis-aligned nu.
    """
    start = time.perf_counter()
    grid = masks.grid
    nu = np.asarray(nu, dtype=float)
    if not np.isclose(np.linalg.norm(nu), 1.0):
        raise ParameterError(f"nu must be a unit vector, got {nu.tolist()}")
    datum = LabelField(grid, datum_labels(grid, nu, x_datum))
    labels, flow = solve_partition(masks, s, masks.frame_cells, datum.labels)
    if not flow.certified:
        logger.warning(f"min-cut certificate failed: flow {flow.value} vs cut {flow.cut_capacity}")
    energy = surface_energy(labels, s, masks)
    datum_energy = surface_energy(datum, s, masks)
    minimizer = labels
    if datum_energy < energy:
        minimizer, energy = datum, datum_energy
    return CellProblemResult(
        kind='surface', minimizer=minimizer, energy=energy,
        normalized=energy / datum_section_area(nu, grid.t, grid.n), exact=True,
        wall_time=time.perf_counter() - start, method='mincut')


def brute_force_surface(masks: Masks, s: SurfaceIntegrand, boundary_labels: np.ndarray,
                        fixed: np.ndarray | None = None, chunk: int = 4096) -> CellProblemResult:
    """
    Exhaustive minimum of surface_energy over the free cells.

    Args:
        masks: Masks of the instance
        s: Surface integrand
        boundary_labels: Labels of the fixed cells (entries on free cells are ignored)
        fixed: Fixed cells, default the frame cells
        chunk: Labelings evaluated per vectorized batch

    Raises:
        OracleSizeError: above 20 free cells
    """
    start = time.perf_counter()
    grid = masks.grid
    fixed = (masks.frame_cells if fixed is None else np.asarray(fixed, dtype=bool)).ravel()
    free = np.flatnonzero(~fixed)
    if len(free) > BRUTE_FORCE_MAX_FREE_CELLS:
        raise OracleSizeError(f"{len(free)} free cells exceeds {BRUTE_FORCE_MAX_FREE_CELLS}")
    base = np.asarray(boundary_labels, dtype=np.uint8).ravel().copy()
    first, second, weight = pair_weights(masks, s)

    best_energy, best_code = math.inf, 0
    total = 1 << len(free)
    for lo in range(0, total, chunk):
        codes = np.arange(lo, min(lo + chunk, total))
        batch = np.broadcast_to(base, (len(codes), base.size)).copy()
        if len(free):
            batch[:, free] = (codes[:, None] >> np.arange(len(free))) & 1
        energies = np.sum(weight * (batch[:, first] != batch[:, second]), axis=1)
        i = int(np.argmin(energies))
        if energies[i] < best_energy:
            best_energy, best_code = float(energies[i]), int(codes[i])
    labels = base.copy()
    labels[free] = (best_code >> np.arange(len(free))) & 1
    minimizer = LabelField(grid, labels)
    energy = surface_energy(minimizer, s, masks)
    return CellProblemResult(kind='surface', minimizer=minimizer, energy=energy,
                             normalized=energy / grid.t ** (grid.n - 1), exact=True,
                             iterations=total, wall_time=time.perf_counter() - start, method='enumeration')


# ---------------------------------------------------------------------------
# randomized oracle comparisons
# ---------------------------------------------------------------------------

def random_surface_oracle(seed: int, hole_fraction: float = 0.3, c3: float = 0.5,
                          c4: float = 2.0) -> Dict[str, Any]:
    """
    Compare solve_partition against brute_force_surface on a random planar instance.

    The instance has at most 16 free cells, random holes, a random hole weight,
    random boundary labels on the frame and a spatially varying g in [c3, c4].
    """
    rng = np.random.default_rng([seed, 7])
    m = int(rng.integers(4, 7))
    grid = Grid(n=2, t=float(m), m=m)
    masks = Masks.blank(grid, rng.random(grid.cell_shape) < hole_fraction)
    freq, phase = rng.normal(size=2), rng.uniform(0, 2 * math.pi)

    def g(points, normals):
        return c3 + (c4 - c3) * (0.25 * (1 + np.sin(points @ freq + phase)) + 0.5 * np.abs(normals[:, 0]))

    s = SurfaceIntegrand(g, c3, c4, hole_weight=float(rng.choice([0.0, rng.uniform(0, 1)])))
    boundary = rng.integers(0, 2, size=grid.cell_shape).astype(np.uint8)
    labels, flow = solve_partition(masks, s, masks.frame_cells, boundary)
    cut_energy = surface_energy(labels, s, masks)
    brute = brute_force_surface(masks, s, boundary)
    difference = abs(cut_energy - brute.energy)
    return {
        'seed': seed,
        'free_cells': int((~masks.frame_cells).sum()),
        'mincut_energy': cut_energy,
        'brute_energy': brute.energy,
        'difference': difference,
        'certified': flow.certified,
        'passed': bool(flow.certified and difference <= 1e-12 * max(1.0, brute.energy)),
    }


def random_volume_oracle(seed: int, rtol: float = 1e-8, hole_fraction: float = 0.25) -> Dict[str, Any]:
    """Compare the PCG cell solve against the dense solve on a random p = 2 instance."""
    rng = np.random.default_rng([seed, 11])
    m = int(rng.integers(4, 13))
    grid = Grid(n=2, t=1.0, m=m)
    masks = Masks.blank(grid, rng.random(grid.cell_shape) < hole_fraction)
    q = VolumeIntegrand(p=2.0, a=rng.uniform(0.5, 2.0, size=grid.cell_shape), c1=0.5, c2=2.0,
                        hole_weight=float(rng.choice([0.0, rng.uniform(0.01, 1)])))
    xi = rng.normal(size=2)
    result = solve_volume_cell(masks, q, xi, tol=1e-12)
    dense = brute_force_volume(masks, q, xi)
    difference = abs(result.energy - dense.energy)
    return {
        'seed': seed,
        'free_nodes': int((~masks.frame_nodes).sum()),
        'pcg_energy': result.energy,
        'dense_energy': dense.energy,
        'difference': difference,
        'iterations': result.iterations,
        'passed': bool(difference <= rtol * max(dense.energy, 1e-300)),
    }
