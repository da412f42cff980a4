import math

import numpy as np
import pytest

from discretize import (Grid, LabelField, Masks, SbvField, ScalarField, SurfaceIntegrand, VolumeIntegrand,
                        cell_gradients, crofton_neighbourhood, datum_section_area, metrication_error, msp_energy,
                        neighbour_pairs, rasterize, read_field, surface_energy, volume_energy, write_field)
from errors import GridMismatchError, ParameterError, ResolutionError


def test_empty_geometry_has_no_holes(empty_geometry):
    grid, masks = rasterize(empty_geometry(), 1 / 8)
    assert grid.m == 8
    assert not masks.hole_cells.any()
    assert not (masks.annulus_owner >= 0).any()


def test_frame_counts(empty_geometry):
    _, masks = rasterize(empty_geometry(), 1 / 8)
    assert int(masks.frame_cells.sum()) == 28
    assert int(masks.frame_nodes.sum()) == 32


def test_hole_cell_area(centered_ball):
    grid, masks = rasterize(centered_ball(delta=0.1), 1 / 64)
    assert masks.hole_volume() == pytest.approx(math.pi / 16, rel=0.05)
    assert masks.annulus_cells(0).any()
    assert not (masks.hole_cells & (masks.annulus_owner >= 0)).any()
    assert not masks.boundary_ball_flags[0]


def test_rasterize_rejects_coarse_grids(centered_ball):
    with pytest.raises(ResolutionError):
        rasterize(centered_ball(delta=0.1), 0.05)
    with pytest.raises(ResolutionError):
        rasterize(centered_ball(delta=2.0), 0.5)
    with pytest.raises(ParameterError):
        rasterize(centered_ball(delta=0.1), 1 / 64, frame_width=20)


def test_frame_cells_are_never_holes():
    from geometry import BallInclusion, PerforatedGeometry
    g = PerforatedGeometry(2, 1.0, (BallInclusion((0.0, 0.5), 0.25),), 0.1, 0.5)
    _, masks = rasterize(g, 1 / 32)
    assert not (masks.hole_cells & masks.frame_cells).any()
    assert (masks.hole_owner[masks.frame_cells] == -1).all()
    assert masks.boundary_ball_flags[0]


def test_affine_volume_energy(empty_geometry):
    grid, masks = rasterize(empty_geometry(t=2.0, delta=0.3), 1 / 8)
    q = VolumeIntegrand()
    assert volume_energy(ScalarField.affine(grid, (1.0, 0.0)), q, masks) == pytest.approx(4.0, rel=1e-12)
    assert volume_energy(ScalarField(grid, np.full(grid.node_shape, 3.0)), q, masks) == 0.0


def test_affine_energy_misses_masked_hole(centered_ball):
    grid, masks = rasterize(centered_ball(delta=0.1), 1 / 32)
    u = ScalarField.affine(grid, (1.0, 0.0))
    energy = volume_energy(u, VolumeIntegrand(hole_weight=0.0), masks)
    assert energy == pytest.approx(1.0 - masks.hole_volume(), rel=1e-12)
    assert volume_energy(u, VolumeIntegrand(hole_weight=1.0), masks) == pytest.approx(1.0, rel=1e-12)


def test_volume_integrand_bounds():
    with pytest.raises(ParameterError):
        VolumeIntegrand(p=1.0)
    with pytest.raises(ParameterError):
        VolumeIntegrand(c1=2.0, c2=1.0)
    grid = Grid(n=2, t=1.0, m=4)
    with pytest.raises(ParameterError):
        VolumeIntegrand(a=3.0, c1=1.0, c2=2.0).coefficient(grid)


def test_crofton_weights_calibrate_axes():
    for n in (2, 3):
        offsets, weights = crofton_neighbourhood(n)
        assert np.all(weights > 0)
        for d in range(n):
            for sign in (1.0, -1.0):
                axis = sign * np.eye(n)[d]
                assert np.sum(weights * np.abs(offsets @ axis)) == pytest.approx(1.0, abs=1e-15)
                assert metrication_error(axis) == pytest.approx(0.0, abs=1e-15)


def test_crofton_diagonal_error():
    diagonal = np.array([1.0, 1.0]) / math.sqrt(2)
    offsets, weights = crofton_neighbourhood(2)
    assert np.sum(weights * np.abs(offsets @ diagonal)) == pytest.approx(1.0, abs=1e-15)
    # 18-connectivity cannot be exact on face diagonals with nonnegative weights
    expected = (2 + 3 * math.sqrt(2)) / (4 + math.sqrt(2)) - 1
    assert metrication_error((1.0, 1.0, 0.0)) == pytest.approx(expected, rel=1e-12)
    assert metrication_error((0.0, -1.0, 1.0)) == pytest.approx(expected, rel=1e-12)
    assert 0.153 < expected < 0.1531


def test_metrication_error_is_small():
    assert metrication_error((1.0, 0.0)) == pytest.approx(0.0, abs=1e-15)
    angles = np.linspace(0, math.pi / 2, 91)
    worst = max(abs(metrication_error((math.cos(a), math.sin(a)))) for a in angles)
    assert 0 < worst <= 0.0825


def test_datum_section_area():
    assert datum_section_area((1.0, 0.0), 2.0) == pytest.approx(2.0)
    assert datum_section_area((1.0, 1.0), 2.0) == pytest.approx(2.0 * math.sqrt(2))
    assert datum_section_area((0.0, 0.0, 1.0), 2.0) == pytest.approx(4.0)
    assert datum_section_area((1.0, 1.0, 0.0), 2.0) == pytest.approx(4.0 * math.sqrt(2))


def flat_labels(grid):
    centers = grid.cell_centers(local=True)
    return LabelField(grid, (centers[:, 1] > grid.t / 2).astype(np.uint8))


def test_constant_labels_cost_nothing(empty_geometry):
    grid, masks = rasterize(empty_geometry(), 1 / 8)
    assert surface_energy(LabelField(grid, np.ones(grid.cell_shape)), SurfaceIntegrand(), masks) == 0.0


def test_flat_interface_costs_its_length(empty_geometry):
    grid, masks = rasterize(empty_geometry(), 1 / 8)
    assert surface_energy(flat_labels(grid), SurfaceIntegrand(), masks) == pytest.approx(1.0, abs=1e-14)


def test_flat_interface_in_3d(empty_geometry):
    grid, masks = rasterize(empty_geometry(n=3), 1 / 8)
    centers = grid.cell_centers(local=True)
    labels = LabelField(grid, (centers[:, 2] > 0.5).astype(np.uint8))
    assert surface_energy(labels, SurfaceIntegrand(), masks) == pytest.approx(1.0, abs=1e-13)


@pytest.mark.parametrize("n, m", [(2, 8), (2, 11), (3, 10)])
def test_flat_interface_calibration_on_every_axis(empty_geometry, n, m):
    grid, masks = rasterize(empty_geometry(n=n), 1 / m)
    centers = grid.cell_centers(local=True)
    for d in range(n):
        for sign in (1.0, -1.0):
            labels = LabelField(grid, (sign * (centers[:, d] - 0.5) > 0).astype(np.uint8))
            assert surface_energy(labels, SurfaceIntegrand(), masks) == pytest.approx(1.0, abs=1e-12)


def test_energies_grow_with_hole_weight(centered_ball):
    grid, masks = rasterize(centered_ball(delta=0.1), 1 / 32)
    rng = np.random.default_rng(5)
    for _ in range(5):
        u = ScalarField(grid, rng.normal(size=grid.node_shape))
        labels = LabelField(grid, rng.integers(0, 2, size=grid.cell_shape))
        weights = np.sort(rng.uniform(0, 1, size=4))
        volume = [volume_energy(u, VolumeIntegrand(hole_weight=w), masks) for w in weights]
        surface = [surface_energy(labels, SurfaceIntegrand(hole_weight=w), masks) for w in weights]
        assert all(a <= b for a, b in zip(volume, volume[1:]))
        assert all(a <= b for a, b in zip(surface, surface[1:]))
        assert volume[0] < volume[-1] and surface[0] < surface[-1]


def test_surface_energy_ignores_relabeling(centered_ball):
    grid, masks = rasterize(centered_ball(delta=0.1), 1 / 32)
    rng = np.random.default_rng(8)
    for w in (0.0, 0.5, 1.0):
        s = SurfaceIntegrand(hole_weight=w)
        for u in (flat_labels(grid), LabelField(grid, rng.integers(0, 2, size=grid.cell_shape))):
            assert surface_energy(u.flipped(), s, masks) == pytest.approx(surface_energy(u, s, masks), rel=1e-12)


def test_flat_interface_through_masked_hole(centered_ball):
    grid, masks = rasterize(centered_ball(delta=0.1), 1 / 32)
    energy = surface_energy(flat_labels(grid), SurfaceIntegrand(hole_weight=0.0), masks)
    assert 0.5 < energy < 1.0


def test_neighbour_pairs_are_cached():
    grid = Grid(n=2, t=1.0, m=6)
    assert neighbour_pairs(grid) is neighbour_pairs(Grid(n=2, t=1.0, m=6))


def test_grid_mismatch(empty_geometry):
    _, masks = rasterize(empty_geometry(), 1 / 8)
    other = Grid(n=2, t=1.0, m=16)
    with pytest.raises(GridMismatchError):
        volume_energy(ScalarField.affine(other, (1.0, 0.0)), VolumeIntegrand(), masks)
    with pytest.raises(GridMismatchError):
        surface_energy(flat_labels(other), SurfaceIntegrand(), masks)


def test_cell_gradients_of_affine_field():
    grid = Grid(n=2, t=1.0, m=4)
    grad = cell_gradients(ScalarField.affine(grid, (2.0, -1.0)).values, grid)
    assert grad.shape == (2, 4, 4)
    assert np.allclose(grad[0], 2.0) and np.allclose(grad[1], -1.0)


def jump_plane(grid):
    x = grid.node_coords(local=True)[:, 0].reshape(grid.node_shape)
    values = (x > grid.t / 2).astype(float)
    jumps = tuple(np.diff(values, axis=d) != 0 for d in range(grid.n))
    return SbvField(grid, values, jumps)


def test_msp_energy_reference_values(empty_geometry):
    grid, masks = rasterize(empty_geometry(), 1 / 8)
    assert msp_energy(SbvField(grid, np.ones(grid.node_shape)), 2.0, masks) == 0.0
    assert msp_energy(jump_plane(grid), 2.0, masks) == pytest.approx(1.0, abs=1e-14)
    affine = SbvField(grid, ScalarField.affine(grid, (1.0, 0.0)).values)
    assert msp_energy(affine, 2.0, masks) == pytest.approx(1.0, rel=1e-12)
    assert msp_energy(affine, 2.0, masks) == pytest.approx(
        volume_energy(ScalarField.affine(grid, (1.0, 0.0)), VolumeIntegrand(), masks), rel=1e-14)


def test_msp_energy_regions(centered_ball):
    grid, masks = rasterize(centered_ball(delta=0.1), 1 / 32)
    u = jump_plane(grid)
    total = msp_energy(u, 2.0, masks, "all")
    assert msp_energy(u, 2.0, masks, "non_hole") <= total
    assert msp_energy(u, 2.0, masks, "interior") < total
    with pytest.raises(ParameterError):
        msp_energy(u, 2.0, masks, "holes")


def test_field_dumps(tmp_path, empty_geometry):
    grid, _ = rasterize(empty_geometry(), 1 / 8)
    for name, field in (("scalar", ScalarField.affine(grid, (0.3, 0.7))), ("labels", flat_labels(grid)),
                        ("sbv", jump_plane(grid))):
        write_field(tmp_path / name, field)
        back = read_field(tmp_path / name)
        assert type(back) is type(field)
        assert back.grid == grid
    assert np.array_equal(read_field(tmp_path / "scalar").values, ScalarField.affine(grid, (0.3, 0.7)).values)
    assert (tmp_path / "labels.bin").stat().st_size == grid.m ** 2
    back = read_field(tmp_path / "sbv")
    assert back.n_jumps == jump_plane(grid).n_jumps == grid.m + 1


def test_blank_masks_drop_frame_holes():
    grid = Grid(n=2, t=3.0, m=3)
    masks = Masks.blank(grid, np.ones(grid.cell_shape, dtype=bool))
    assert int(masks.hole_cells.sum()) == 1
    assert int(masks.frame_cells.sum()) == 8
