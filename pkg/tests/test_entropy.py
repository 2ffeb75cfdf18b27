import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdlab.config import make_initial, standard_config
from rdlab.entropy import (
    RECORD_KEYS,
    budget_check,
    budget_lhs,
    entropy_identity_check,
    entropy_monotonicity,
    fit_budget,
    from_ndjson,
    m0,
    record,
    to_csv,
    to_ndjson,
    trapezoid_cumulative,
    weighted_fisher,
    xlogx,
)
from rdlab.grid import GridSpec, SpaceTimeSlab, SpeciesField, ball_mask, integrate
from rdlab.model import FourSpeciesExchange, ZeroReaction
from rdlab.solver import diffusion_step


def heat_gaussian_1d(grid, M, D, s):
    x = grid.axis()
    return M / math.sqrt(4 * math.pi * D * s) * np.exp(-x * x / (4 * D * s))


def gaussian_entropy(M, D, s):
    # int a ln a for a = M * N(0, 2 D s)
    return M * math.log(M) - 0.5 * M * (1 + math.log(4 * math.pi * D * s))


class TestRecord:
    def test_constant_field(self):
        g = GridSpec(3, 8, 2.0)
        r = record(SpeciesField(g, np.ones((4,) + g.shape)), FourSpeciesExchange())
        assert r.entropy == 0.0 and r.fisher == 0.0 and r.dissipation == 0.0
        assert r.mass == pytest.approx(4 * 8.0)

    def test_box_of_height_e(self):
        g = GridSpec(2, 16, 4.0)
        a = np.zeros((4,) + g.shape)
        box = np.zeros(g.shape, bool)
        box[4:12, 2:10] = True
        a[0][box] = math.e
        r = record(SpeciesField(g, a), FourSpeciesExchange())
        V = box.sum() * g.cell_volume
        assert r.entropy == pytest.approx(math.e * V, rel=1e-14)
        assert r.abs_entropy == pytest.approx(math.e * V, rel=1e-14)

    def test_floor_convention(self):
        assert np.all(xlogx(np.array([0.0, 1e-300, -1.0])) == 0.0)

    def test_moment_of_point_mass(self):
        g = GridSpec(2, 8, 8.0)
        a = np.zeros((1,) + g.shape)
        a[0][g.index_of((1.0, 2.0))] = 1.0
        r = record(SpeciesField(g, a), ZeroReaction(1))
        assert r.moment == pytest.approx(math.sqrt(5.0))

    @pytest.mark.parametrize("key", ["mass", "entropy"])
    def test_refinement_oracle(self, key):
        vals = []
        for n in (64, 128):
            cfg = standard_config(**{"grid": {"N": 3, "n": n, "L": 8.0}})
            f = make_initial(cfg.initial, cfg.grid, 4, cfg.seed)
            vals.append(getattr(record(f, cfg.model), key))
        assert vals[0] == pytest.approx(vals[1], rel=1e-6)

    def test_fisher_converges_second_order(self):
        # the Fisher term uses centred differences, so the refinement error is O(h^2)
        vals = []
        for n in (32, 64, 128):
            cfg = standard_config(**{"grid": {"N": 3, "n": n, "L": 8.0}})
            vals.append(record(make_initial(cfg.initial, cfg.grid, 4, cfg.seed), cfg.model).fisher)
        ratio = (vals[1] - vals[0]) / (vals[2] - vals[1])
        assert 3.0 < ratio < 5.0

    def test_dissipation_nonnegative(self):
        rng = np.random.default_rng(5)
        g = GridSpec(2, 16, 4.0)
        r = record(SpeciesField(g, rng.uniform(0, 5, (4,) + g.shape)), FourSpeciesExchange())
        assert r.dissipation >= -1e-10 * r.mass
        assert r.fisher >= 0.0

    def test_weighted_fisher_is_four_times(self):
        g = GridSpec(1, 64, 8.0)
        f = SpeciesField(g, heat_gaussian_1d(g, 1.0, 1.0, 0.5)[None])
        r = record(f, ZeroReaction(1))
        assert weighted_fisher(f, [2.0]) == pytest.approx(8.0 * r.fisher)


class TestSerialization:
    def _records(self):
        g = GridSpec(1, 16, 4.0)
        return [record(SpeciesField(g, heat_gaussian_1d(g, 1.0, 1.0, s)[None], s), ZeroReaction(1))
                for s in (0.5, 0.75)]

    def test_ndjson_keys_and_roundtrip(self):
        recs = self._records()
        text = to_ndjson(recs)
        assert tuple(json.loads(text.splitlines()[0])) == RECORD_KEYS
        assert from_ndjson(text) == recs

    def test_csv_header(self):
        text = to_csv(self._records())
        assert text.splitlines()[0] == ",".join(RECORD_KEYS)
        assert len(text.splitlines()) == 3

    def test_rejects_wrong_keys(self):
        with pytest.raises(ValueError):
            from_ndjson('{"t": 0}\n')


class TestM0:
    def test_zero_data(self):
        g = GridSpec(3, 8, 2.0)
        assert m0(SpeciesField(g, np.zeros((4,) + g.shape))).M0 == 0.0

    def test_unit_ball(self):
        g = GridSpec(3, 128, 4.0)
        a = np.zeros((4,) + g.shape)
        a[0] = ball_mask(g, (0, 0, 0), 1.0)
        rep = m0(SpeciesField(g, a))
        assert rep.M0 == pytest.approx(4 * math.pi / 3 + math.pi + 1, rel=2e-2)
        assert rep.per_species[1] == 0.0

    @given(st.floats(0.1, 10.0))
    @settings(max_examples=40, deadline=None)
    def test_scaling_recomputation(self, c):
        g = GridSpec(1, 32, 8.0)
        base = heat_gaussian_1d(g, 1.0, 1.0, 0.3)
        rep = m0(SpeciesField(g, (c * base)[None]))
        x = np.abs(g.axis())
        direct = integrate(g, c * base * (1 + x + np.abs(np.log(np.maximum(c * base, 1e-300))))) + c * base.max()
        assert rep.M0 == pytest.approx(direct, rel=1e-12)


class TestMonotonicity:
    def test_flags_increase(self):
        g = GridSpec(1, 8, 1.0)
        recs = [record(SpeciesField(g, np.full((1, 8), v), t), ZeroReaction(1))
                for t, v in enumerate((2.0, 3.0))]
        rep = entropy_monotonicity(recs)
        assert not rep.passed and rep.max_rel_increase > 0.5

    def test_single_record(self):
        g = GridSpec(1, 8, 1.0)
        assert entropy_monotonicity([record(SpeciesField(g, np.ones((1, 8))), ZeroReaction(1))]).passed


class TestBudget:
    def test_trapezoid(self):
        t = np.linspace(0, 1, 11)
        assert trapezoid_cumulative(t, 2 * t)[-1] == pytest.approx(1.0)

    def test_constant_data_zero_reaction(self):
        g = GridSpec(2, 8, 4.0)
        f = SpeciesField(g, np.full((2,) + g.shape, 0.5))
        recs = [record(SpeciesField(g, f.data, t), ZeroReaction(2)) for t in (0.0, 0.5, 1.0)]
        t, lhs = budget_lhs(recs, 1.0)
        assert np.all(lhs == lhs[0])
        M0 = m0(f).M0
        rep = budget_check(recs, (1.0, 1.0), M0)
        assert rep.holds and rep.C1 == pytest.approx(0.0, abs=1e-12)
        assert rep.C0 == pytest.approx(lhs[0] / (M0 + 1), rel=1e-9)

    def test_given_constants(self):
        g = GridSpec(1, 8, 4.0)
        recs = [record(SpeciesField(g, np.ones((1, 8)), t), ZeroReaction(1)) for t in (0.0, 1.0)]
        assert not budget_check(recs, (1.0,), 1.0, C0=1e-6, C1=0.0).holds
        assert budget_check(recs, (1.0,), 1.0, C0=100.0, C1=0.0).holds

    def test_fitted_c1_near_diffusion_scale(self):
        # reaction-diffusion sweep: C1 should be of the order d_hi^2 / (2 d_lo)
        from rdlab.solver import run

        series = []
        for A in (2.0, 1.0, 0.5):
            bumps = {"n_bumps": 2, "amplitude": A, "width": 1.0, "spread": 0.5}
            cfg = standard_config(**{"grid": {"N": 3, "n": 32, "L": 10.0}, "dt": 1 / 256, "dt_store": 1 / 16,
                                     "initial": {"kind": "gaussian_bumps", "params": bumps}})
            res = run(cfg, weak_norms=False)
            series.append((res.records, m0(res.slab[0]).M0))
        rep = fit_budget(series, 0.5, 2.0)
        assert rep.holds and rep.C1_scale == 4.0
        assert rep.C1_scale / 10 <= rep.C1 <= 10 * rep.C1_scale

    def test_shared_fit_covers_all(self):
        g = GridSpec(1, 64, 8.0)
        series = []
        for M in (0.5, 1.0, 2.0):
            recs = [record(SpeciesField(g, heat_gaussian_1d(g, M, 1.0, s)[None], s - 0.2), ZeroReaction(1))
                    for s in np.linspace(0.2, 1.2, 11)]
            series.append((recs, m0(SpeciesField(g, heat_gaussian_1d(g, M, 1.0, 0.2)[None])).M0))
        rep = fit_budget(series, 1.0, 1.0)
        assert rep.holds and rep.n_scenarios == 3
        assert rep.worst_ratio == pytest.approx(1.0, rel=1e-9)

    def test_needs_two_records(self):
        g = GridSpec(1, 8, 1.0)
        with pytest.raises(ValueError):
            fit_budget([([record(SpeciesField(g, np.ones((1, 8))), ZeroReaction(1))], 1.0)], 1.0, 1.0)


class TestDeBruijn:
    """Pure diffusion of a 1-D Gaussian against the closed-form entropy flow."""

    D = 0.7

    def _slab(self, n=1024, L=24.0, s0=0.5, T=1.0, m=200):
        g = GridSpec(1, n, L)
        f = SpeciesField(g, heat_gaussian_1d(g, 1.3, self.D, s0)[None], 0.0)
        snaps = [f]
        dt = T / m
        for _ in range(m):
            f = diffusion_step(f, (self.D,), dt)
            snaps.append(f)
        return SpaceTimeSlab(snaps)

    def test_entropy_matches_closed_form(self):
        slab = self._slab()
        for s in slab[::50]:
            got = record(s, ZeroReaction(1)).entropy
            assert got == pytest.approx(gaussian_entropy(1.3, self.D, 0.5 + s.t), rel=1e-6)

    def test_entropy_decreasing(self):
        e = [record(s, ZeroReaction(1)).entropy for s in self._slab(m=20)]
        assert all(b < a for a, b in zip(e, e[1:]))

    def test_identity(self):
        rep = entropy_identity_check(self._slab(), ZeroReaction(1), (self.D,))
        assert rep.passed, rep
        # closed form: the entropy drops by (M/2) ln((s0 + T)/s0)
        assert rep.entropy_change == pytest.approx(-0.65 * math.log(3.0), rel=1e-6)
