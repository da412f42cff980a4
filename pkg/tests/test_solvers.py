import numpy as np
import pytest

from discretize import Grid, Masks, SurfaceIntegrand, VolumeIntegrand, rasterize
from errors import OracleSizeError, ParameterError
from solvers import (SINK, SOURCE, FlowGraph, brute_force_surface, brute_force_volume, datum_labels, maxflow,
                     random_surface_oracle, random_volume_oracle, solve_partition, solve_surface_cell,
                     solve_volume_cell)


def test_maxflow_single_edge():
    assert maxflow(FlowGraph.from_edges(0, [(SOURCE, SINK, 5.0)])).value == 5.0
    result = maxflow(FlowGraph.from_edges(1, [(SOURCE, 0, 5.0), (0, SINK, 7.0)]))
    assert result.value == 5.0
    assert result.certified


def test_maxflow_diamond():
    edges = [(SOURCE, 0, 3.0), (SOURCE, 1, 2.0), (0, 1, 1.0), (0, SINK, 2.0), (1, SINK, 3.0)]
    result = maxflow(FlowGraph.from_edges(2, edges))
    assert result.value == pytest.approx(5.0)
    assert result.cut_capacity == pytest.approx(5.0)
    assert result.certified


def test_maxflow_disconnected():
    result = maxflow(FlowGraph.from_edges(2, [(SOURCE, 0, 3.0), (1, SINK, 4.0)]))
    assert result.value == 0.0
    assert result.certified


def test_maxflow_rejects_negative_capacity():
    with pytest.raises(ParameterError):
        maxflow(FlowGraph.from_edges(1, [(SOURCE, 0, -1.0)]))


def three_by_three():
    grid = Grid(n=2, t=3.0, m=3)
    masks = Masks.blank(grid)
    fixed = np.zeros(grid.cell_shape, dtype=bool)
    fixed[:, 0] = fixed[:, 2] = True
    labels = np.zeros(grid.cell_shape, dtype=np.uint8)
    labels[:, 2] = 1
    return masks, fixed, labels


def test_three_by_three_partition():
    masks, fixed, labels = three_by_three()
    field, flow = solve_partition(masks, SurfaceIntegrand(), fixed, labels)
    assert flow.value == pytest.approx(3.0, abs=1e-12)
    assert flow.certified
    assert np.array_equal(field.labels[:, 0], [0, 0, 0])
    assert np.array_equal(field.labels[:, 2], [1, 1, 1])
    brute = brute_force_surface(masks, SurfaceIntegrand(), labels, fixed)
    assert brute.energy == pytest.approx(3.0, abs=1e-12)
    assert brute.iterations == 8


def test_flat_surface_cell(empty_geometry):
    _, masks = rasterize(empty_geometry(), 1 / 8)
    result = solve_surface_cell(masks, SurfaceIntegrand(), (0.0, 1.0))
    assert result.normalized == pytest.approx(1.0, abs=1e-12)
    assert result.exact and result.method == 'mincut'


def test_hole_on_datum_lowers_surface_energy(centered_ball):
    _, masks = rasterize(centered_ball(delta=0.1), 1 / 32)
    result = solve_surface_cell(masks, SurfaceIntegrand(hole_weight=0.0), (0.0, 1.0))
    assert result.normalized < 1.0
    full = solve_surface_cell(masks, SurfaceIntegrand(hole_weight=1.0), (0.0, 1.0))
    assert result.normalized <= full.normalized
    assert full.normalized == pytest.approx(1.0, abs=1e-12)


def test_surface_cell_requires_unit_normal(empty_geometry):
    _, masks = rasterize(empty_geometry(), 1 / 8)
    with pytest.raises(ParameterError):
        solve_surface_cell(masks, SurfaceIntegrand(), (0.0, 2.0))


def test_datum_labels_for_opposite_normals_are_complements():
    grid = Grid(n=2, t=1.0, m=5)
    up, down = datum_labels(grid, (1.0, 0.0)), datum_labels(grid, (-1.0, 0.0))
    assert np.array_equal(up + down, np.ones(grid.cell_shape, dtype=np.uint8))
    # the middle column sits on the plane
    assert np.array_equal(up[2], np.ones(5))


def test_volume_cell_without_holes(empty_geometry):
    _, masks = rasterize(empty_geometry(), 1 / 8)
    result = solve_volume_cell(masks, VolumeIntegrand(), (1.0, 0.0))
    assert result.normalized == pytest.approx(1.0, rel=1e-10)
    assert solve_volume_cell(masks, VolumeIntegrand(), (0.0, 0.0)).normalized == 0.0


def test_volume_cell_full_hole_weight(centered_ball):
    _, masks = rasterize(centered_ball(delta=0.1), 1 / 32)
    result = solve_volume_cell(masks, VolumeIntegrand(hole_weight=1.0), (0.6, 0.8))
    assert result.normalized == pytest.approx(1.0, rel=1e-10)


def test_volume_cell_p3(empty_geometry):
    _, masks = rasterize(empty_geometry(), 1 / 8)
    result = solve_volume_cell(masks, VolumeIntegrand(p=3.0), (1.0, 0.0))
    assert result.method == 'descent'
    assert result.normalized == pytest.approx(1.0, rel=1e-10)


def test_masked_hole_lowers_volume_energy(centered_ball):
    _, masks = rasterize(centered_ball(delta=0.1), 1 / 32)
    result = solve_volume_cell(masks, VolumeIntegrand(hole_weight=0.0), (1.0, 0.0))
    assert 0 < result.normalized < 1.0


def test_pcg_matches_dense_solve(centered_ball):
    _, masks = rasterize(centered_ball(r=0.2, delta=0.3), 1 / 8)
    q = VolumeIntegrand(hole_weight=0.0)
    pcg = solve_volume_cell(masks, q, (1.0, 0.5), tol=1e-12)
    dense = brute_force_volume(masks, q, (1.0, 0.5))
    assert pcg.energy == pytest.approx(dense.energy, rel=1e-8)
    assert dense.exact and not pcg.exact


def test_warm_start_never_raises_energy(centered_ball):
    _, masks = rasterize(centered_ball(delta=0.1), 1 / 32)
    first = solve_volume_cell(masks, VolumeIntegrand(hole_weight=0.5), (1.0, 0.0))
    second = solve_volume_cell(masks, VolumeIntegrand(hole_weight=0.25), (1.0, 0.0), initial=first.minimizer)
    assert second.energy <= first.energy + 1e-12


def test_oracle_size_limits(empty_geometry):
    _, masks = rasterize(empty_geometry(), 1 / 8)
    with pytest.raises(OracleSizeError):
        brute_force_surface(masks, SurfaceIntegrand(), np.zeros(masks.grid.cell_shape))
    _, fine = rasterize(empty_geometry(), 1 / 32)
    with pytest.raises(OracleSizeError):
        brute_force_volume(fine, VolumeIntegrand(), (1.0, 0.0))
    with pytest.raises(ParameterError):
        brute_force_volume(masks, VolumeIntegrand(p=3.0), (1.0, 0.0))


def test_result_records():
    masks, fixed, labels = three_by_three()
    record = brute_force_surface(masks, SurfaceIntegrand(), labels, fixed).to_dict()
    assert record['method'] == 'enumeration' and 'wall_time' not in record


@pytest.mark.parametrize("seed", range(20))
def test_random_surface_oracle(seed):
    record = random_surface_oracle(seed)
    assert record['passed'], record


@pytest.mark.parametrize("seed", range(20))
def test_random_volume_oracle(seed):
    record = random_volume_oracle(seed)
    assert record['passed'], record


@pytest.mark.slow
def test_surface_oracle_battery():
    failed = [r for r in map(random_surface_oracle, range(200)) if not r['passed']]
    assert failed == []


@pytest.mark.slow
def test_volume_oracle_battery():
    failed = [r for r in map(random_volume_oracle, range(50)) if not r['passed']]
    assert failed == []
