import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slicereg.disa import FeatureMap, FeatureVolume
from slicereg.imgcore import DegenerateDataWarning, Image2D
from slicereg.similarity import (MetricConfig, disa_similarity, fre,
                                 gradient_magnitude, lc2, lncc, read_fiducials,
                                 write_fiducials)

CFG = MetricConfig()


def lncc_oracle(a, b, radius, eps):
    """Direct double-loop windowed statistics."""
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    h, w = a.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            i0, i1 = max(0, i - radius), min(h - 1, i + radius)
            j0, j1 = max(0, j - radius), min(w - 1, j + radius)
            wa = a[i0:i1 + 1, j0:j1 + 1].ravel()
            wb = b[i0:i1 + 1, j0:j1 + 1].ravel()
            va, vb = wa.var(), wb.var()
            if va < eps or vb < eps:
                continue
            cov = ((wa - wa.mean()) * (wb - wb.mean())).mean()
            total += np.clip(cov / np.sqrt(va * vb), -1.0, 1.0)
    return total / (h * w)


def lc2_oracle(source, target, radius, eps):
    """Per-patch normal equations solved explicitly, variance-weighted sum."""
    s = source.astype(np.float64)
    t = target.astype(np.float64)
    gy, gx = np.gradient(s)
    g = np.sqrt(gx * gx + gy * gy)
    h, w = s.shape
    num = den = 0.0
    for i in range(h):
        for j in range(w):
            i0, i1 = max(0, i - radius), min(h - 1, i + radius)
            j0, j1 = max(0, j - radius), min(w - 1, j + radius)
            ps = s[i0:i1 + 1, j0:j1 + 1].ravel()
            pg = g[i0:i1 + 1, j0:j1 + 1].ravel()
            pt = t[i0:i1 + 1, j0:j1 + 1].ravel()
            tvar = pt.var()
            den += tvar
            if tvar < eps:
                continue
            amat = np.column_stack([ps, pg, np.ones(len(ps))])
            gram = amat.T @ amat
            rhs = amat.T @ pt
            coef = np.linalg.pinv(gram) @ rhs
            resid = pt - amat @ coef
            local = np.clip(1.0 - resid.var() / tvar, 0.0, 1.0)
            num += tvar * local
    return num / den if den > 0 else 0.0


def img(data, spacing=(1.0, 1.0)):
    return Image2D(np.asarray(data, dtype=np.float64), spacing)


class TestLncc:
    def test_self_similarity(self, rng):
        x = img(rng.random((24, 24)))
        assert lncc(x, x, CFG) == pytest.approx(1.0, abs=1e-9)

    def test_anticorrelation(self, rng):
        x = rng.random((24, 24))
        assert lncc(img(x), img(-x), CFG) == pytest.approx(-1.0, abs=1e-9)

    def test_against_window_oracle(self, rng):
        for trial in range(3):
            a = rng.random((32, 32))
            b = rng.random((32, 32))
            expected = lncc_oracle(a.astype(np.float32), b.astype(np.float32),
                                   CFG.lncc_radius, CFG.variance_epsilon)
            assert lncc(img(a), img(b), CFG) == pytest.approx(expected, abs=1e-9)

    def test_symmetric(self, rng):
        a, b = img(rng.random((20, 20))), img(rng.random((20, 20)))
        assert lncc(a, b, CFG) == pytest.approx(lncc(b, a, CFG), abs=1e-9)

    def test_affine_intensity_invariance(self, rng):
        a = rng.random((20, 20))
        b = rng.random((20, 20))
        remapped = img(2.5 * a + 0.75)
        assert lncc(img(a), img(b), CFG) == pytest.approx(
            lncc(remapped, img(b), CFG), abs=1e-6)

    def test_bounded(self, rng):
        for _ in range(10):
            a, b = rng.random((16, 16)), rng.random((16, 16))
            v = lncc(img(a), img(b), CFG)
            assert -1.0 <= v <= 1.0

    def test_dim_mismatch(self, rng):
        with pytest.raises(ValueError):
            lncc(img(rng.random((8, 8))), img(rng.random((8, 9))), CFG)


class TestLc2:
    def test_self_fit(self, rng):
        x = img(rng.random((24, 24)))
        assert lc2(x, x, CFG) == pytest.approx(1.0, abs=1e-9)

    def test_affine_target_fit(self, rng):
        x = rng.random((24, 24))
        assert lc2(img(x), img(2.0 * x + 3.0), CFG) == pytest.approx(1.0, abs=1e-9)

    def test_against_normal_equations_oracle(self, rng):
        for trial in range(2):
            s = rng.random((24, 24))
            t = rng.random((24, 24))
            expected = lc2_oracle(s.astype(np.float32), t.astype(np.float32),
                                  CFG.lc2_radius, CFG.variance_epsilon)
            assert lc2(img(s), img(t), CFG) == pytest.approx(expected, abs=1e-7)

    def test_source_affine_invariance(self, rng):
        s = rng.random((20, 20))
        t = rng.random((20, 20))
        base = lc2(img(s), img(t), CFG)
        remap = lc2(img(-1.7 * s + 0.3), img(t), CFG)
        assert base == pytest.approx(remap, abs=1e-6)

    def test_constant_target_degenerate(self, rng):
        s = img(rng.random((16, 16)))
        t = img(np.full((16, 16), 0.5))
        with pytest.warns(DegenerateDataWarning):
            assert lc2(s, t, CFG) == 0.0

    def test_bounded(self, rng):
        for _ in range(10):
            s, t = rng.random((14, 14)), rng.random((14, 14))
            assert 0.0 <= lc2(img(s), img(t), CFG) <= 1.0

    def test_constant_source_still_defined(self, rng):
        s = img(np.full((16, 16), 0.25))
        t = img(rng.random((16, 16)))
        v = lc2(s, t, CFG)
        assert 0.0 <= v <= 1.0


class TestDisaSimilarity:
    def make_feats(self, rng, c=8):
        fm = FeatureMap(rng.normal(size=(6, 7, c)), (4.0, 4.0))
        fv = FeatureVolume(rng.normal(size=(5, 6, 7, c)), (4.0, 4.0, 2.0))
        return fm, fv

    def test_constant_fields(self, rng):
        c = rng.normal(size=8)
        fm = FeatureMap(np.broadcast_to(c, (5, 5, 8)).copy(), (4.0, 4.0))
        fv = FeatureVolume(np.broadcast_to(c, (4, 6, 6, 8)).copy(), (4.0, 4.0, 2.0))
        t = np.eye(4)[:3]
        t[:, 3] = [3.0, -2.0, 1.0]
        assert disa_similarity(fm, fv, t) == pytest.approx(float(c @ c), abs=1e-5)

    def test_zero_moving(self, rng):
        _, fv = self.make_feats(rng)
        fm = FeatureMap(np.zeros((5, 5, 8)), (4.0, 4.0))
        assert disa_similarity(fm, fv, np.eye(4)) == 0.0

    def test_against_per_position_oracle(self, rng):
        fm, fv = self.make_feats(rng)
        ang = np.deg2rad(9.0)
        rot = np.array([[np.cos(ang), -np.sin(ang), 0],
                        [np.sin(ang), np.cos(ang), 0], [0, 0, 1.0]])
        t = np.column_stack([rot, [1.5, -2.0, 3.0]])
        got = disa_similarity(fm, fv, t)
        total = 0.0
        fd = fv.data.astype(np.float64)
        nzc, nyc, nxc, _ = fd.shape
        for j in range(6):
            for i in range(7):
                p = np.array([i * 4.0, j * 4.0, 0.0])
                q = rot @ p + [1.5, -2.0, 3.0]
                x = np.clip(q[0] / 4.0, 0, nxc - 1)
                y = np.clip(q[1] / 4.0, 0, nyc - 1)
                z = np.clip(q[2] / 2.0, 0, nzc - 1)
                x0, y0, z0 = (int(min(v, n - 2)) if n > 1 else 0
                              for v, n in ((x, nxc), (y, nyc), (z, nzc)))
                fx, fy, fz = x - x0, y - y0, z - z0
                val = np.zeros(8)
                for dz, wz in ((0, 1 - fz), (1, fz)):
                    for dy, wy in ((0, 1 - fy), (1, fy)):
                        for dx, wx in ((0, 1 - fx), (1, fx)):
                            val += wz * wy * wx * fd[z0 + dz, y0 + dy, x0 + dx]
                total += float(val @ fm.data[j, i].astype(np.float64))
        assert got == pytest.approx(total / (6 * 7), abs=1e-6)

    def test_linear_in_moving_features(self, rng):
        fm1, fv = self.make_feats(rng)
        fm2 = FeatureMap(rng.normal(size=fm1.data.shape), fm1.spacing)
        combo = FeatureMap(1.5 * fm1.data + 0.25 * fm2.data, fm1.spacing)
        t = np.eye(4)
        lhs = disa_similarity(combo, fv, t)
        rhs = 1.5 * disa_similarity(fm1, fv, t) + 0.25 * disa_similarity(fm2, fv, t)
        assert lhs == pytest.approx(rhs, abs=1e-5)

    def test_channel_mismatch(self, rng):
        fm, _ = self.make_feats(rng, c=8)
        fv = FeatureVolume(rng.normal(size=(4, 5, 5, 4)), (4.0, 4.0, 2.0))
        with pytest.raises(ValueError):
            disa_similarity(fm, fv, np.eye(4))


class TestFre:
    def test_identical(self, rng):
        pts = rng.uniform(0, 100, (10, 3))
        assert fre(pts, pts) == 0.0

    def test_345(self, rng):
        pts = rng.uniform(0, 100, (7, 3))
        assert fre(pts, pts + [3.0, 4.0, 0.0]) == pytest.approx(5.0, abs=1e-12)

    def test_against_mean_oracle(self, rng):
        a = rng.uniform(-50, 50, (20, 3))
        b = rng.uniform(-50, 50, (20, 3))
        expected = np.mean([np.sqrt(((p - q) ** 2).sum()) for p, q in zip(a, b)])
        assert fre(a, b) == pytest.approx(expected, abs=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1))
    def test_rigid_invariance(self, seed):
        r = np.random.default_rng(seed)
        a = r.uniform(-10, 10, (8, 3))
        b = r.uniform(-10, 10, (8, 3))
        ang = r.uniform(0, 2 * np.pi)
        rot = np.array([[np.cos(ang), -np.sin(ang), 0],
                        [np.sin(ang), np.cos(ang), 0], [0, 0, 1.0]])
        shift = r.uniform(-5, 5, 3)
        assert fre(a @ rot.T + shift, b @ rot.T + shift) == pytest.approx(
            fre(a, b), abs=1e-9)

    def test_errors(self, rng):
        with pytest.raises(ValueError):
            fre(np.zeros((0, 3)), np.zeros((0, 3)))
        with pytest.raises(ValueError):
            fre(np.zeros((3, 3)), np.zeros((4, 3)))


class TestFiducialIO:
    def test_roundtrip(self, tmp_path, rng):
        ids = ["a", "b", "c"]
        pts = rng.uniform(-10, 10, (3, 3))
        path = tmp_path / "fids.csv"
        write_fiducials(path, ids, pts)
        got_ids, got_pts = read_fiducials(path)
        assert got_ids == ids
        np.testing.assert_allclose(got_pts, pts, atol=0)

    def test_comments_and_2d(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("# header\np1, 1.5, 2.5\np2, 3, 4  # trailing\n")
        ids, pts = read_fiducials(path)
        assert ids == ["p1", "p2"]
        np.testing.assert_allclose(pts, [[1.5, 2.5], [3.0, 4.0]])

    def test_bad_line(self, tmp_path):
        path = tmp_path / "f.csv"
        path.write_text("p1, 1.0\n")
        with pytest.raises(ValueError):
            read_fiducials(path)
