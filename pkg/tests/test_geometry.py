import numpy as np
import pytest

from slicereg.geometry import (InPlaneGrid, OutOfPlaneGrid, PlanePose,
                               bspline_basis, bspline_eval, displacement_field,
                               extract_slice, greville_abscissae, grid_for_image,
                               plane_to_world, plane_z_at, project_points,
                               warp_2d, world_to_plane)
from slicereg.imgcore import Image2D, Volume3D

from conftest import random_image


def rot_x(deg):
    a = np.deg2rad(deg)
    return np.array([[1, 0, 0], [0, np.cos(a), -np.sin(a)], [0, np.sin(a), np.cos(a)]])


def rot_y(deg):
    a = np.deg2rad(deg)
    return np.array([[np.cos(a), 0, np.sin(a)], [0, 1, 0], [-np.sin(a), 0, np.cos(a)]])


class TestPlanePose:
    def test_identity(self, rng):
        pose = PlanePose(0.0, 0.0, 0.0)
        pts = rng.uniform(-50, 50, (20, 3))
        np.testing.assert_allclose(plane_to_world(pose, pts), pts, atol=1e-12)

    def test_pure_translation(self):
        pose = PlanePose(5.0, 0.0, 0.0)
        out = plane_to_world(pose, [[2.0, 3.0, 0.0]])
        np.testing.assert_allclose(out, [[2.0, 3.0, 5.0]], atol=1e-12)

    def test_rx_z_component(self):
        pose = PlanePose(0.0, 10.0, 0.0, (0.0, 0.0))
        v = 7.25
        out = plane_to_world(pose, [[0.0, v, 0.0]])
        assert out[0, 2] == pytest.approx(v * np.sin(np.deg2rad(10.0)), abs=1e-12)

    def test_against_matrix_product_oracle(self, rng):
        pose = PlanePose(12.5, 8.0, -6.0, (3.0, -4.0))
        pts = rng.uniform(-30, 30, (50, 3))
        pivot = np.array([3.0, -4.0, 0.0])
        oracle = (rot_y(-6.0) @ rot_x(8.0) @ (pts - pivot).T).T + pivot + [0, 0, 12.5]
        np.testing.assert_allclose(plane_to_world(pose, pts), oracle, atol=1e-9)

    def test_roundtrip_inverse(self, rng):
        pose = PlanePose(-20.0, 25.0, 40.0, (5.0, 6.0))
        pts = rng.uniform(-100, 100, (40, 3))
        back = world_to_plane(pose, plane_to_world(pose, pts))
        assert np.abs(back - pts).max() < 1e-9

    def test_rotation_limits(self):
        with pytest.raises(ValueError):
            PlanePose(0.0, 91.0, 0.0)

    def test_plane_z_at(self):
        pose = PlanePose(10.0, 4.0, -3.0, (7.0, 8.0))
        xs = np.array([0.0, 5.0, 20.0])
        ys = np.array([1.0, 8.0, -2.0])
        zs = plane_z_at(pose, xs, ys)
        # oracle: intersect the vertical line with the transformed plane
        for x, y, z in zip(xs, ys, zs):
            uvw = world_to_plane(pose, [[x, y, z]])
            assert abs(uvw[0, 2]) < 1e-9


class TestBsplineBasis:
    def test_partition_of_unity(self, rng):
        for n in (4, 5, 7):
            t = rng.random(200)
            basis = bspline_basis(n, t)
            np.testing.assert_allclose(basis.sum(axis=1), 1.0, atol=1e-9)

    def test_matches_bernstein_for_4(self, rng):
        t = rng.random(50)
        basis = bspline_basis(4, t)
        bern = np.stack([(1 - t) ** 3, 3 * t * (1 - t) ** 2,
                         3 * t ** 2 * (1 - t), t ** 3], axis=1)
        np.testing.assert_allclose(basis, bern, atol=1e-12)

    def test_matches_scipy_basis_elements(self, rng):
        scipy_interp = pytest.importorskip("scipy.interpolate")
        for n in (5, 6):
            inner = np.linspace(0, 1, n - 2)
            knots = np.concatenate([[0, 0, 0], inner, [1, 1, 1]])
            t = rng.random(40)
            ours = bspline_basis(n, t)
            for i in range(n):
                spl = scipy_interp.BSpline.basis_element(knots[i:i + 5], extrapolate=False)
                ref = np.nan_to_num(spl(t))
                np.testing.assert_allclose(ours[:, i], ref, atol=1e-9)

    def test_endpoint_interpolation(self):
        basis = bspline_basis(6, np.array([0.0, 1.0]))
        np.testing.assert_allclose(basis[0], [1, 0, 0, 0, 0, 0], atol=1e-12)
        np.testing.assert_allclose(basis[1], [0, 0, 0, 0, 0, 1], atol=1e-12)


class TestBsplineEval:
    extent = ((0.0, 10.0), (0.0, 8.0))

    def test_zero_grid(self, rng):
        grid = OutOfPlaneGrid(np.zeros((4, 4)), self.extent)
        assert np.all(bspline_eval(grid, rng.random(10), rng.random(10)) == 0.0)

    def test_constant_reproduction(self, rng):
        grid = OutOfPlaneGrid(np.full((5, 4), 2.75), self.extent)
        out = bspline_eval(grid, rng.random(64), rng.random(64))
        np.testing.assert_allclose(out, 2.75, atol=1e-9)

    def test_single_control_point_against_basis_oracle(self, rng):
        for (iv, iu) in [(0, 0), (2, 1), (3, 3)]:
            values = np.zeros((4, 4))
            values[iv, iu] = 1.7
            grid = OutOfPlaneGrid(values, self.extent)
            u = rng.random(20)
            v = rng.random(20)
            out = bspline_eval(grid, u, v)
            bu = bspline_basis(4, u)
            bv = bspline_basis(4, v)
            expected = 1.7 * bv[:, iv] * bu[:, iu]
            np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_linearity_in_control_values(self, rng):
        a = rng.normal(size=(4, 4))
        b = rng.normal(size=(4, 4))
        u, v = rng.random(30), rng.random(30)
        ga = OutOfPlaneGrid(a, self.extent)
        gb = OutOfPlaneGrid(b, self.extent)
        gab = OutOfPlaneGrid(2.0 * a - 0.5 * b, self.extent)
        out = bspline_eval(gab, u, v)
        expected = 2.0 * bspline_eval(ga, u, v) - 0.5 * bspline_eval(gb, u, v)
        np.testing.assert_allclose(out, expected, atol=1e-9)

    def test_field_matches_point_eval(self, rng):
        grid = InPlaneGrid(rng.normal(size=(4, 4, 2)), self.extent)
        us = np.linspace(0, 10.0, 7)
        vs = np.linspace(0, 8.0, 5)
        field = displacement_field(grid, us, vs)
        uu, vv = np.meshgrid(us / 10.0, vs / 8.0)
        pts = bspline_eval(grid, uu.ravel(), vv.ravel()).reshape(5, 7, 2)
        np.testing.assert_allclose(field, pts, atol=1e-12)

    def test_greville_linear_precision(self, rng):
        g = greville_abscissae(5)
        values = np.outer(np.ones(5), 3.0 * g) + np.outer(2.0 * greville_abscissae(5), np.ones(5))
        grid = OutOfPlaneGrid(values, ((0.0, 1.0), (0.0, 1.0)))
        u, v = rng.random(25), rng.random(25)
        np.testing.assert_allclose(bspline_eval(grid, u, v), 3.0 * u + 2.0 * v, atol=1e-9)


class TestExtractSlice:
    def test_axis_aligned_copy(self, rng):
        vol = Volume3D(rng.random((6, 8, 9)), (1.0, 1.0, 1.0))
        for k in (0, 3, 5):
            sl = extract_slice(vol, PlanePose(float(k), 0, 0), None, (9, 8), (1.0, 1.0))
            assert np.array_equal(sl.data, vol.data[k])

    def test_linear_field_any_pose(self, rng):
        nz, ny, nx = 12, 11, 10
        sp = (1.5, 1.2, 2.0)
        zz, yy, xx = np.meshgrid(np.arange(nz) * sp[2], np.arange(ny) * sp[1],
                                 np.arange(nx) * sp[0], indexing="ij")
        a, b, c, d = 0.02, -0.015, 0.03, 0.5
        vol = Volume3D(a * xx + b * yy + c * zz + d, sp)
        pose = PlanePose(9.0, 7.0, -5.0, (6.0, 5.0))
        sl = extract_slice(vol, pose, None, (5, 4), (1.5, 1.2))
        us = np.arange(5) * 1.5
        vs = np.arange(4) * 1.2
        pts = np.stack(np.broadcast_arrays(us[None, :], vs[:, None], np.zeros((4, 5))),
                       axis=-1).reshape(-1, 3)
        world = plane_to_world(pose, pts)
        world[:, 0] = np.clip(world[:, 0], 0, (nx - 1) * sp[0])
        world[:, 1] = np.clip(world[:, 1], 0, (ny - 1) * sp[1])
        world[:, 2] = np.clip(world[:, 2], 0, (nz - 1) * sp[2])
        expected = (a * world[:, 0] + b * world[:, 1] + c * world[:, 2] + d).reshape(4, 5)
        np.testing.assert_allclose(sl.data, expected, atol=1e-6)

    def test_constant_surface_offsets_z(self):
        nz = 10
        data = np.broadcast_to((np.arange(nz) * 2.0)[:, None, None], (nz, 8, 8))
        vol = Volume3D(data, (1.0, 1.0, 2.0))
        surface = OutOfPlaneGrid(np.full((4, 4), 3.0), ((0.0, 7.0), (0.0, 7.0)))
        sl = extract_slice(vol, PlanePose(8.0, 0, 0), surface, (8, 8), (1.0, 1.0))
        np.testing.assert_allclose(sl.data, 11.0, atol=1e-6)

    def test_validation(self, rng):
        vol = Volume3D(rng.random((4, 4, 4)), (1.0, 1.0, 1.0))
        with pytest.raises(ValueError):
            extract_slice(vol, PlanePose(0, 0, 0), None, (0, 4), (1.0, 1.0))
        with pytest.raises(ValueError):
            extract_slice(vol, PlanePose(0, 0, 0), None, (4, 4), (0.0, 1.0))


class TestWarp2D:
    def test_zero_grid_bit_identical(self, rng):
        img = random_image(rng, 17, 13, spacing=(2.0, 1.5))
        grid = grid_for_image(img)
        assert np.array_equal(warp_2d(img, grid).data, img.data)

    def test_integer_translation(self, rng):
        img = random_image(rng, 16, 16, spacing=(2.0, 2.0))
        grid = grid_for_image(img, values=np.broadcast_to([2.0, 0.0], (4, 4, 2)))
        out = warp_2d(img, grid)
        np.testing.assert_allclose(out.data[:, :-1], img.data[:, 1:], atol=1e-6)

    def test_against_per_pixel_oracle(self, rng):
        img = random_image(rng, 32, 32, spacing=(1.0, 1.0))
        grid = grid_for_image(img, values=rng.uniform(-2.0, 2.0, (4, 4, 2)))
        out = warp_2d(img, grid)
        src = img.data.astype(np.float64)
        bu = bspline_basis(4, np.arange(32) / 31.0)
        bv = bspline_basis(4, np.arange(32) / 31.0)
        for j in range(0, 32, 5):
            for i in range(0, 32, 5):
                disp = np.zeros(2)
                for a in range(4):
                    for b in range(4):
                        disp += bv[j, a] * bu[i, b] * grid.values[a, b]
                x = np.clip(i + disp[0], 0, 31)
                y = np.clip(j + disp[1], 0, 31)
                x0 = int(min(np.floor(x), 30))
                y0 = int(min(np.floor(y), 30))
                fx, fy = x - x0, y - y0
                expected = ((1 - fy) * ((1 - fx) * src[y0, x0] + fx * src[y0, x0 + 1])
                            + fy * ((1 - fx) * src[y0 + 1, x0] + fx * src[y0 + 1, x0 + 1]))
                assert out.data[j, i] == pytest.approx(expected, abs=1e-6)

    def test_extent_must_cover_image(self, rng):
        img = random_image(rng, 16, 16)
        grid = InPlaneGrid(np.zeros((4, 4, 2)), ((0.0, 5.0), (0.0, 5.0)))
        with pytest.raises(ValueError):
            warp_2d(img, grid)


class TestProjectPoints:
    def test_flat_identity(self, rng):
        pts = rng.uniform(0, 10, (10, 2))
        out = project_points(pts, PlanePose(4.0, 0, 0))
        np.testing.assert_allclose(out[:, :2], pts, atol=1e-12)
        np.testing.assert_allclose(out[:, 2], 4.0, atol=1e-12)

    def test_composition_matches_manual(self, rng):
        extent = ((0.0, 10.0), (0.0, 10.0))
        surface = OutOfPlaneGrid(rng.normal(0, 2, (4, 4)), extent)
        inplane = InPlaneGrid(rng.normal(0, 1, (4, 4, 2)), extent)
        pose = PlanePose(5.0, 3.0, -2.0, (5.0, 5.0))
        pts = rng.uniform(0, 10, (15, 2))
        out = project_points(pts, pose, surface, inplane)
        for p, o in zip(pts, out):
            q = p + bspline_eval(inplane, p[0] / 10.0, p[1] / 10.0)[0]
            w = bspline_eval(surface, np.clip(q[0] / 10.0, 0, 1),
                             np.clip(q[1] / 10.0, 0, 1))[0]
            expected = plane_to_world(pose, [[q[0], q[1], w]])[0]
            np.testing.assert_allclose(o, expected, atol=1e-9)
