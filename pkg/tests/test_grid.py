import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rdlab import rdf
from rdlab.grid import (
    GridSpec,
    SpaceTimeSlab,
    SpeciesField,
    ball_mask,
    ball_volume,
    boundary_mass_fraction,
    grad_sqrt_density,
    integrate,
    laplacian_fd,
)


class TestGridSpec:
    def test_center_is_origin(self):
        g = GridSpec(3, 16, 8.0)
        assert g.h == 0.5
        assert g.index_of((0.0, 0.0, 0.0)) == g.center_index == (8, 8, 8)

    @pytest.mark.parametrize("args", [(4, 16, 1.0), (2, 15, 1.0), (2, 2, 1.0), (1, 8, 0.0)])
    def test_rejects(self, args):
        with pytest.raises(ValueError):
            GridSpec(*args)

    def test_off_grid_point(self):
        with pytest.raises(ValueError):
            GridSpec(1, 8, 8.0).index_of(0.3)

    def test_periodic_radius(self):
        g = GridSpec(1, 8, 8.0)
        r = g.radius(3.0)
        # node -4 sits one unit from 3 across the seam
        assert r[0] == pytest.approx(1.0)


class TestIntegrate:
    def test_constant(self):
        g = GridSpec(3, 8, 2.0)
        assert integrate(g, np.full(g.shape, 3.0)) == pytest.approx(3.0 * 8.0, rel=1e-15)

    def test_half_box(self):
        g = GridSpec(2, 16, 4.0)
        f = np.zeros(g.shape)
        f[:8] = 1.0
        assert integrate(g, f) == pytest.approx(g.volume / 2)

    def test_gaussian(self):
        g = GridSpec(3, 64, 16.0)
        r2 = sum(x * x for x in g.coords())
        assert integrate(g, np.exp(-r2)) == pytest.approx(math.pi**1.5, rel=1e-10)

    def test_species_axis(self):
        g = GridSpec(2, 8, 1.0)
        f = np.stack([np.ones(g.shape), 2 * np.ones(g.shape)])
        np.testing.assert_allclose(integrate(g, f), [1.0, 2.0])

    @given(arrays(np.float64, (8, 8), elements=st.floats(-10, 10)), st.integers(0, 7), st.integers(0, 7))
    @settings(max_examples=100, deadline=None)
    def test_shift_invariant(self, f, i, j):
        g = GridSpec(2, 8, 3.0)
        shifted = np.roll(f, (i, j), axis=(0, 1))
        assert integrate(g, shifted) == pytest.approx(integrate(g, f), rel=1e-12, abs=1e-12)

    @given(arrays(np.float64, (16,), elements=st.floats(0, 10)), arrays(np.float64, (16,), elements=st.floats(0, 10)))
    @settings(max_examples=100, deadline=None)
    def test_monotone(self, f, d):
        g = GridSpec(1, 16, 2.0)
        assert integrate(g, f) <= integrate(g, f + d) + 1e-12


class TestGradSqrt:
    def test_constant(self):
        g = GridSpec(2, 16, 1.0)
        assert np.all(grad_sqrt_density(g, np.full(g.shape, 2.5)) == 0.0)

    def test_quadratic(self):
        g = GridSpec(1, 256, 2.0)
        x = g.axis()
        out = grad_sqrt_density(g, x**2)
        away = (np.abs(x) > 0.05) & (np.abs(x) < 0.9)
        np.testing.assert_allclose(out[away], 1.0, atol=1e-12)

    def test_sin_squared(self):
        for n in (128, 256):
            g = GridSpec(1, n, 1.0)
            x = g.axis()
            k = 2 * math.pi / g.L
            out = grad_sqrt_density(g, np.sin(k * x) ** 2)
            exact = k**2 * np.cos(k * x) ** 2
            away = np.abs(np.sin(k * x)) > 0.2
            err = np.max(np.abs(out - exact)[away])
            assert err <= 2.0 * k**4 * g.h**2

    @given(arrays(np.float64, (12,), elements=st.floats(0, 100)))
    @settings(max_examples=100, deadline=None)
    def test_nonnegative(self, a):
        assert np.all(grad_sqrt_density(GridSpec(1, 12, 1.0), a) >= 0)


class TestBall:
    def test_too_large(self):
        g = GridSpec(3, 16, 4.0)
        with pytest.raises(ValueError):
            ball_mask(g, (0, 0, 0), g.L)

    def test_single_cell(self):
        g = GridSpec(3, 16, 4.0)
        m = ball_mask(g, (0.0, 0.0, 0.0), g.h / 2)
        assert m.sum() == 1 and m[g.center_index] == 1

    @pytest.mark.parametrize("n", [32, 64])
    def test_volume(self, n):
        g = GridSpec(3, n, 4.0)
        vol = integrate(g, ball_mask(g, (0, 0, 0), 1.0))
        assert abs(vol - 4 * math.pi / 3) <= 3 * g.h * 4 * math.pi

    def test_ball_volume_formula(self):
        assert ball_volume(3) == pytest.approx(4 * math.pi / 3)
        assert ball_volume(2, 2.0) == pytest.approx(4 * math.pi)


class TestLaplacian:
    def test_single_mode(self):
        g = GridSpec(2, 64, 2 * math.pi)
        x, y = g.coords()
        f = np.cos(x) * np.cos(2 * y) + 0 * x
        lap = laplacian_fd(g, f)
        np.testing.assert_allclose(lap, -5 * f, atol=5 * 4 * g.h**2)


def test_boundary_mass_fraction():
    g = GridSpec(2, 8, 1.0)
    f = np.zeros(g.shape)
    f[4, 4] = 1.0
    assert boundary_mass_fraction(g, f) == 0.0
    f[0, 3] = 1.0
    assert boundary_mass_fraction(g, f) == 0.5


class TestSlab:
    def test_requires_increasing_times(self):
        g = GridSpec(1, 8, 1.0)
        a = SpeciesField(g, np.zeros((1, 8)), 0.0)
        b = SpeciesField(g, np.zeros((1, 8)), 0.0)
        with pytest.raises(ValueError):
            SpaceTimeSlab([a, b])

    def test_shape_check(self):
        with pytest.raises(ValueError):
            SpeciesField(GridSpec(1, 8, 1.0), np.zeros((2, 9)))


class TestRDF1:
    @given(st.sampled_from([(1, 8), (2, 4), (3, 4)]), st.integers(1, 4), st.floats(-1e3, 1e3), st.integers(0, 2**31))
    @settings(max_examples=50, deadline=None)
    def test_roundtrip_bit_exact(self, Nn, P, t, seed):
        N, n = Nn
        g = GridSpec(N, n, 3.5)
        data = np.random.default_rng(seed).standard_normal((P,) + g.shape) * 1e5
        f = SpeciesField(g, data, t)
        back, nu = rdf.decode(rdf.encode(f, 1.5))
        assert nu == 1.5 and back.t == t and back.grid == g
        assert back.data.tobytes() == data.tobytes()

    def test_header_layout(self):
        g = GridSpec(2, 4, 2.0)
        buf = rdf.encode(SpeciesField(g, np.ones((3, 4, 4)), 0.25), 1.5)
        assert buf[:12] == b"RDF1SNAPSHOT"
        assert len(buf) == 12 + 4 + 12 + 24 + 8 * 3 * 16

    def test_bad_magic(self):
        g = GridSpec(1, 4, 1.0)
        buf = bytearray(rdf.encode(SpeciesField(g, np.ones((1, 4))), 1.5))
        buf[0:4] = b"XXXX"
        with pytest.raises(rdf.FormatError):
            rdf.decode(bytes(buf))

    def test_truncated(self):
        g = GridSpec(1, 4, 1.0)
        buf = rdf.encode(SpeciesField(g, np.ones((1, 4))), 1.5)
        with pytest.raises(rdf.FormatError):
            rdf.decode(buf[:-8])

    def test_slab_directory(self, tmp_path):
        g = GridSpec(2, 8, 1.0)
        slab = SpaceTimeSlab([SpeciesField(g, np.full((2, 8, 8), float(i)), 0.1 * i) for i in range(3)], nu=1.5)
        paths = rdf.write_slab(tmp_path / "snapshots", slab)
        assert [p.name for p in paths] == ["snap_00000.rdf", "snap_00001.rdf", "snap_00002.rdf"]
        back = rdf.read_slab(tmp_path)
        assert len(back) == 3 and back.nu == 1.5
        np.testing.assert_array_equal(back[2].data, slab[2].data)

    def test_empty_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            rdf.read_slab(tmp_path)
