import math

import numpy as np
import pytest

from mono3d.geometry import Box2D, Box3D, backproject, box3d_to_box2d
from mono3d.grid import DEFAULT_GRID_SHAPE, Assignment, CellTarget, GridSpec, assign, background_target, decode, encode


@pytest.fixture
def grid():
    return GridSpec(39, 12, 1248.0, 384.0)


class TestGridSpec:
    def test_default_shape_matches_head_resolution(self):
        assert DEFAULT_GRID_SHAPE == (39, 12)

    def test_cell_centers_tile_the_image(self, grid):
        assert grid.cell_center(0, 0) == (16.0, 16.0)
        assert grid.cell_center(38, 11) == (1248.0 - 16.0, 384.0 - 16.0)
        centers = grid.centers()
        assert centers.shape == (12, 39, 2)
        assert centers[3, 7, 0] == pytest.approx((7 + 0.5) * 32.0)

    def test_default_sigma_is_twice_stride_diagonal(self, grid):
        assert grid.default_sigma_scope == pytest.approx(2 * math.hypot(32.0, 32.0))

    def test_rejects_empty_grid(self):
        with pytest.raises(ValueError):
            GridSpec(0, 12, 100.0, 100.0)


def _obj(u, v, z=10.0, w=40.0, h=30.0):
    return (Box2D(w, h, u, v), z)


class TestAssign:
    def test_object_on_cell_center_is_foreground(self, grid):
        u, v = grid.cell_center(5, 5)
        a = assign([_obj(u, v)], grid, sigma_scope=1.0)
        assert a.obj_index[5, 5] == 0
        assert ((5, 5), 0) in a.foreground_cells()

    def test_closer_object_wins_shared_cell(self, grid):
        u, v = grid.cell_center(10, 6)
        a = assign([_obj(u + 1, v, z=15.0), _obj(u - 1, v, z=7.0)], grid, sigma_scope=50.0)
        assert a.obj_index[6, 10] == 1

    def test_out_of_scope_object_leaves_all_background(self, grid):
        a = assign([_obj(-4000.0, -4000.0)], grid, sigma_scope=10.0)
        assert a.num_foreground == 0

    def test_empty_object_list(self, grid):
        a = assign([], grid)
        assert a.num_foreground == 0

    def test_depth_tie_goes_to_lowest_index(self, grid):
        u, v = grid.cell_center(3, 3)
        a = assign([_obj(u + 1, v, z=9.0), _obj(u - 1, v, z=9.0)], grid, sigma_scope=50.0)
        assert a.obj_index[3, 3] == 0

    def test_permutation_stability(self, grid, rng):
        objs = [_obj(rng.uniform(0, 1248), rng.uniform(0, 384), z=rng.uniform(5, 50)) for _ in range(8)]
        a = assign(objs, grid, sigma_scope=120.0)
        perm = rng.permutation(len(objs))
        b = assign([objs[i] for i in perm], grid, sigma_scope=120.0)
        remap = np.full(len(objs), -1)
        for new_idx, old_idx in enumerate(perm):
            remap[old_idx] = new_idx
        expected = np.where(a.obj_index >= 0, remap[a.obj_index], -1)
        assert np.array_equal(expected, b.obj_index)

    def test_enlarging_scope_never_shrinks_foreground(self, grid, rng):
        objs = [_obj(rng.uniform(0, 1248), rng.uniform(0, 384), z=rng.uniform(5, 50)) for _ in range(5)]
        small = assign(objs, grid, sigma_scope=40.0)
        large = assign(objs, grid, sigma_scope=160.0)
        fg_small = {c for c, _ in small.foreground_cells()}
        fg_large = {c for c, _ in large.foreground_cells()}
        assert fg_small <= fg_large

    def test_rejects_nonpositive_scope(self, grid):
        with pytest.raises(ValueError):
            assign([], grid, sigma_scope=0.0)


class TestEncodeDecode:
    def test_zero_residuals_on_cell_center(self, cam, grid):
        box = Box3D(tuple(backproject(grid.cell_center(5, 5), 12.0, cam)), (1.5, 1.5, 1.5), 0.3, class_id=0)
        t = encode(box, grid.cell_center(5, 5), cam, num_classes=2)
        # the projected center sits on the cell center by construction
        assert t.center_res == pytest.approx((0.0, 0.0))
        assert t.z == 12.0

    def test_box_center_residual_definition(self, cam, grid):
        u_g, v_g = grid.cell_center(4, 4)
        box = Box3D(tuple(backproject((u_g + 12.5, v_g), 10.0, cam)), (1.0, 1.0, 1.0), 0.0)
        t = encode(box, (u_g, v_g), cam, num_classes=1)
        assert t.center_res[0] == pytest.approx(12.5)
        # the 2D residual is measured from the projected box's own center
        b2d = box3d_to_box2d(box, cam)
        assert t.box2d[2] == pytest.approx(b2d.u - u_g)
        assert t.box2d[3] == pytest.approx(b2d.v - v_g)

    def test_round_trip_recovers_box(self, cam, grid, rng):
        for _ in range(50):
            i = int(rng.integers(0, 39))
            j = int(rng.integers(0, 12))
            cell = grid.cell_center(i, j)
            center = backproject(
                (cell[0] + rng.uniform(-30, 30), cell[1] + rng.uniform(-30, 30)), rng.uniform(6, 50), cam
            )
            box = Box3D(
                tuple(center),
                tuple(rng.uniform(0.5, 4.0, 3)),
                rng.uniform(-math.pi, math.pi),
                class_id=int(rng.integers(0, 3)),
            )
            t = encode(box, cell, cam, num_classes=3)
            back = decode(t, cell, cam)
            assert np.allclose(back.center, box.center, atol=1e-6)
            assert np.allclose(back.local_corners(), box.local_corners(), atol=1e-12)
            assert back.class_id == box.class_id

    def test_decode_examples(self, cam):
        corners = Box3D((0, 0, 5), (1, 1, 1)).local_corners()
        probs = np.array([1.0, 0.0])
        t = CellTarget(probs=probs, foreground=True, box2d=(10, 10, 0, 0), z=5.0, center_res=(0.0, 0.0), corners=corners)
        out = decode(t, (600.0, 180.0), cam)
        assert np.allclose(out.center, [0, 0, 5])

        t2 = CellTarget(
            probs=probs, foreground=True, box2d=(10, 10, 0, 0), z=14.0, center_res=(70.0, 35.0), corners=corners
        )
        out2 = decode(t2, (600.0, 180.0), cam)
        assert np.allclose(out2.center, [1.4, 0.7, 14.0])

        t3 = CellTarget(
            probs=probs,
            foreground=True,
            box2d=(10, 10, 0, 0),
            z=14.0,
            center_res=(70.0, 35.0),
            corners=corners,
            delta_center=np.array([0.1, 0.0, -0.2]),
        )
        out3 = decode(t3, (600.0, 180.0), cam)
        assert np.allclose(out3.center, [1.5, 0.7, 13.8])

    def test_decode_rejects_background_and_bad_depth(self, cam):
        with pytest.raises(ValueError):
            decode(background_target(2), (0.0, 0.0), cam)
        corners = Box3D((0, 0, 5), (1, 1, 1)).local_corners()
        t = CellTarget(
            probs=np.array([1.0, 0.0]), foreground=True, box2d=(1, 1, 0, 0), z=-3.0, center_res=(0, 0), corners=corners
        )
        with pytest.raises(ValueError):
            decode(t, (0.0, 0.0), cam)

    def test_score_is_max_class_probability(self, cam):
        corners = Box3D((0, 0, 5), (1, 1, 1)).local_corners()
        t = CellTarget(
            probs=np.array([0.2, 0.7, 0.1]),
            foreground=True,
            box2d=(1, 1, 0, 0),
            z=5.0,
            center_res=(0, 0),
            corners=corners,
        )
        out = decode(t, (600.0, 180.0), cam)
        assert out.class_id == 1
        assert out.score == pytest.approx(0.7)


class TestCellTarget:
    def test_background_cells_carry_no_regression(self):
        t = background_target(3)
        assert not t.foreground
        assert t.box2d is None and t.z is None and t.corners is None

    def test_probs_must_be_simplex(self):
        with pytest.raises(ValueError):
            CellTarget(probs=np.array([0.5, 0.2]))

    def test_foreground_requires_targets(self):
        with pytest.raises(ValueError):
            CellTarget(probs=np.array([1.0, 0.0]), foreground=True)

    def test_assignment_foreground_refs_valid_objects(self, rng):
        grid = GridSpec(10, 5, 500.0, 250.0)
        objs = [_obj(rng.uniform(0, 500), rng.uniform(0, 250)) for _ in range(4)]
        a = assign(objs, grid, sigma_scope=80.0)
        assert isinstance(a, Assignment)
        for _, k in a.foreground_cells():
            assert 0 <= k < len(objs)
