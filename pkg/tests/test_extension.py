import math

import numpy as np
import pytest

from discretize import Grid, LabelField, SbvField, ScalarField, msp_energy, neighbour_pairs, rasterize
from errors import GridMismatchError, ParameterError
from extension import (ExtensionReport, calibrate_gamma, dyadic_schedule, empirical_extension_constant,
                       extend_partition_ball, extend_sbv_domain, extend_sobolev_ball, extension_summary,
                       fill_nodes, planar_cut_instance, random_extension_instance, random_sbv_values,
                       run_extension_instance)


def test_dyadic_schedule_counts():
    schedule = dyadic_schedule(1.9, 1.0, 2.0)
    assert schedule.N_delta == 2
    assert schedule.ratio == 1.5
    assert schedule.radii == pytest.approx((2.85, 1.9, 1.9 / 1.5))
    assert schedule.r_delta == pytest.approx(1.9 / 1.5 ** 2)
    assert schedule.r_delta < 1.0


def test_dyadic_schedule_thin_ball_is_empty():
    schedule = dyadic_schedule(0.5, 1.0, 2.0)
    assert schedule.is_empty and schedule.radii == ()


def test_dyadic_schedule_is_scale_free():
    base = dyadic_schedule(0.3, 0.05, 0.5)
    scaled = dyadic_schedule(0.6, 0.1, 1.0)
    assert scaled.N_delta == base.N_delta
    assert scaled.radii == pytest.approx(tuple(2 * r for r in base.radii))


def test_dyadic_schedule_rejects_bad_radius():
    with pytest.raises(ParameterError):
        dyadic_schedule(0.6, 0.1, 0.5)
    with pytest.raises(ParameterError):
        dyadic_schedule(0.3, 0.0, 0.5)


@pytest.mark.slow
def test_dyadic_schedule_random_cases():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        r_star = rng.uniform(0.1, 10)
        delta = rng.uniform(1e-3, r_star)
        r = rng.uniform(delta, r_star)
        schedule = dyadic_schedule(r, delta, r_star)
        q = 1 + delta / r_star
        assert schedule.N_delta == math.floor(math.log(r_star / delta) / math.log(q)) + 1
        assert schedule.r_delta < delta
        radii = np.asarray(schedule.radii)
        assert len(radii) == schedule.N_delta + 1
        assert np.all(np.diff(radii) < 0)
        assert radii[1] == r
        assert radii[0] / schedule.r_delta == pytest.approx(q ** (schedule.N_delta + 1))


def test_sobolev_fill_of_constant_is_flat(centered_ball):
    grid, masks = rasterize(centered_ball(delta=0.1), 1 / 32)
    u = ScalarField(grid, np.full(grid.node_shape, 2.5))
    filled, report = extend_sobolev_ball(u, 0, masks)
    assert np.allclose(filled.values, 2.5)
    assert report.fill_energy == pytest.approx(0.0, abs=1e-18)
    assert report.ratio == 0.0


def test_sobolev_fill_of_affine_stays_affine(centered_ball):
    grid, masks = rasterize(centered_ball(delta=0.1), 1 / 32)
    u = ScalarField.affine(grid, (1.0, -0.5))
    fill = fill_nodes(masks, 0)
    scrambled = u.values.copy()
    scrambled[fill] = 7.0
    filled, report = extend_sobolev_ball(ScalarField(grid, scrambled), 0, masks, tol=1e-12)
    assert fill.any()
    assert np.allclose(filled.values, u.values, atol=1e-8)
    assert report.converged
    assert report.stages


def test_sobolev_fill_ratio_is_scale_free(centered_ball):
    g = centered_ball(delta=0.1)
    grid, masks = rasterize(g, 1 / 32)
    values = np.random.default_rng(2).normal(size=grid.node_shape)
    _, report = extend_sobolev_ball(ScalarField(grid, values), 0, masks, tol=1e-12)

    big = g.scaled(2.0)
    grid_big, masks_big = rasterize(big, 1 / 16)
    assert grid_big.m == grid.m
    assert np.array_equal(masks_big.hole_cells, masks.hole_cells)
    _, report_big = extend_sobolev_ball(ScalarField(grid_big, values * math.sqrt(2.0)), 0, masks_big, tol=1e-12)
    assert report.ratio > 0
    assert report_big.ratio == pytest.approx(report.ratio, rel=1e-10)


def test_partition_fill_of_constant_labels(centered_ball):
    grid, masks = rasterize(centered_ball(delta=0.1), 1 / 32)
    labels, report = extend_partition_ball(LabelField(grid, np.ones(grid.cell_shape)), 0, masks)
    assert report.added_jump == 0.0
    assert report.branch in ("clean_sphere", "mincut")
    assert labels.labels.min() == 1


def test_partition_fill_with_zero_threshold_falls_back():
    labels, masks = planar_cut_instance(0.0, 0.3)
    out, report = extend_partition_ball(labels, 0, masks, gamma_threshold=0.0)
    assert report.layer_jump > 0
    assert report.branch == "fallback"
    assert np.all(out.labels[masks.ball_hole_cells(0)] == 0)
    outside = ~masks.ball_hole_cells(0)
    assert np.array_equal(out.labels[outside], labels.labels[outside])


def test_partition_fill_keeps_outside_labels():
    labels, masks = planar_cut_instance(0.05, 1.0)
    out, report = extend_partition_ball(labels, 0, masks)
    outside = ~masks.ball_hole_cells(0)
    assert np.array_equal(out.labels[outside], labels.labels[outside])
    assert report.threshold == pytest.approx(4.0 * report.layer_thickness)



def test_partition_fill_continues_a_plane_through_the_center():
    labels, masks = planar_cut_instance(0.0, 0.0)
    r, h = 0.3, masks.grid.h
    out, report = extend_partition_ball(labels, 0, masks)
    assert report.branch == "mincut"
    assert report.layer_jump <= report.threshold
    assert np.array_equal(out.labels, labels.labels)
    assert report.added_jump == pytest.approx(2 * r, abs=3 * h)


def test_clean_sphere_has_no_jump_inside():
    # the cut line misses every candidate sphere
    labels, masks = planar_cut_instance(0.29, 0.7)
    out, report = extend_partition_ball(labels, 0, masks)
    assert report.branch == "clean_sphere"
    centre = np.asarray(masks.geometry.balls[0].center)
    inside = np.linalg.norm(masks.grid.cell_centers() - centre, axis=1) <= report.sphere_radius
    pairs = neighbour_pairs(masks.grid)
    flat = out.labels.ravel()
    both = inside[pairs.first] & inside[pairs.second]
    assert both.any()
    assert np.all(flat[pairs.first[both]] == flat[pairs.second[both]])

def test_sbv_extension_without_holes_is_identity(empty_geometry):
    g = empty_geometry()
    grid, masks = rasterize(g, 1 / 8)
    values, jumps = random_sbv_values(grid, np.random.default_rng(3), "jump")
    u = SbvField(grid, values, jumps)
    out, report = extend_sbv_domain(u, g, masks)
    assert np.array_equal(out.values, u.values)
    assert report.energy_after == pytest.approx(report.energy_before, rel=1e-14)
    assert report.branch == "none" and not report.has_boundary_balls


def test_sbv_extension_of_affine_field(centered_ball):
    g = centered_ball(delta=0.1)
    grid, masks = rasterize(g, 1 / 32)
    affine = SbvField(grid, ScalarField.affine(grid, (1.0, -0.5)).values)
    fill = fill_nodes(masks, 0)
    scrambled = affine.values.copy()
    scrambled[fill] = 3.0
    out, report = extend_sbv_domain(SbvField(grid, scrambled), g, masks)
    assert report.branches[0] in ("clean_sphere", "mincut")
    assert out.n_jumps == 0
    assert np.allclose(out.values, affine.values, atol=1e-8)
    # no extension can beat the affine field on the whole window
    assert report.energy_after / msp_energy(affine, 2.0, masks, "all") <= 1 + 1e-6


def test_sbv_extension_rejects_foreign_grid(empty_geometry):
    g = empty_geometry()
    _, masks = rasterize(g, 1 / 8)
    other = Grid(n=2, t=1.0, m=16)
    with pytest.raises(GridMismatchError):
        extend_sbv_domain(SbvField(other, np.zeros(other.node_shape)), g, masks)


@pytest.mark.parametrize("seed", range(4))
def test_sbv_extension_touches_only_holes(seed):
    instance = random_extension_instance(seed, t=1.5)
    _, masks, u = instance.build()
    out, report = extend_sbv_domain(u, instance.geometry, masks)
    fill = np.zeros(masks.grid.node_shape, dtype=bool)
    for i in range(len(instance.geometry.balls)):
        fill |= fill_nodes(masks, i)
    assert np.array_equal(out.values[~fill], u.values[~fill])
    known = u.values[~fill]
    assert out.values.min() >= known.min() - 1e-12
    assert out.values.max() <= known.max() + 1e-12
    assert len(report.branches) == len(instance.geometry.balls)
    if report.energy_before > 0:
        assert report.ratio is not None and report.constant is not None


def test_random_sbv_values_kinds():
    grid = Grid(n=2, t=1.0, m=8)
    rng = np.random.default_rng(0)
    values, jumps = random_sbv_values(grid, rng, "constant")
    assert np.ptp(values) == 0 and not any(j.any() for j in jumps)
    with pytest.raises(ParameterError):
        random_sbv_values(grid, rng, "noise")


def report(before, after, boundary=False):
    return ExtensionReport(energy_before=before, energy_after=after, energy_after_interior=after,
                           boundary_term=4.0, has_boundary_balls=boundary, branch="none")


def test_extension_constant():
    reports = [report(1.0, 1.0 + i / 10) for i in range(10)] + [report(0.0, 0.0)]
    constant = empirical_extension_constant(reports)
    assert constant.value == pytest.approx(1.9)
    assert constant.n_used == 10 and constant.n_skipped == 1
    assert report(1.0, 6.0, boundary=True).constant == pytest.approx(2.0)
    assert report(1.0, 6.0, boundary=True).ratio == pytest.approx(1.2)


def test_extension_constant_needs_a_batch():
    with pytest.raises(ParameterError):
        empirical_extension_constant([report(1.0, 1.0)] * 9)
    with pytest.raises(ParameterError):
        empirical_extension_constant([report(0.0, 0.0)] * 10)


def test_extension_summary_columns():
    frame = extension_summary([report(1.0, 2.0)])
    assert list(frame.columns[:4]) == ['instance_id', 'ratio', 'branch', 'lambda_check']
    assert frame.loc[0, 'ratio'] == 2.0


def test_calibrate_gamma():
    gamma = calibrate_gamma(n_instances=5, seed=1)
    assert math.isfinite(gamma) and gamma > 0


@pytest.mark.slow
def test_extension_battery_contract():
    reports = []
    for seed in range(50):
        instance = random_extension_instance(seed, t=1.5)
        _, masks, u = instance.build()
        out, _ = extend_sbv_domain(u, instance.geometry, masks)
        fill = np.zeros(masks.grid.node_shape, dtype=bool)
        for i in range(len(instance.geometry.balls)):
            fill |= fill_nodes(masks, i)
        assert np.array_equal(out.values[~fill], u.values[~fill])
        assert u.values[~fill].min() <= out.values.min() and out.values.max() <= u.values[~fill].max()

        result = run_extension_instance(instance)
        if result.ratio is not None:
            assert math.isfinite(result.ratio)
        if result.homothety_check is not None:
            assert result.homothety_check <= 1e-8, result.to_dict()
        reports.append(result)
    assert math.isfinite(empirical_extension_constant(reports).value)


@pytest.mark.parametrize("n, h", [(2, 0.025), (3, 0.05)])
def test_calibrated_gamma_admits_its_batch(n, h):
    gamma = calibrate_gamma(n_instances=3, seed=4, quantile=1.0, n=n, h=h)
    rng = np.random.default_rng(4)
    for _ in range(3):
        labels, masks = planar_cut_instance(rng.uniform(-0.3, 0.3), rng.uniform(0, math.pi), n=n, h=h)
        _, report = extend_partition_ball(labels, 0, masks, gamma_threshold=gamma)
        assert report.layer_jump <= report.threshold * (1 + 1e-12)
