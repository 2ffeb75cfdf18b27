import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdlab.model import (
    FROZEN_LAMBDA,
    LAMBDA_MARGIN,
    CallableReaction,
    FourSpeciesExchange,
    TwoSpeciesExchange,
    ZeroReaction,
    calibrate_lambda,
    certification_box,
    entropy_production,
    evaluate_phi,
    evaluate_phi_prime,
    evaluate_reaction,
    fd_jacobian,
    model_from_config,
    verify_hypotheses,
)

R2 = 2.0**0.75 * 2.0**0.75  # 4**0.75


class TestPhi:
    def test_negative_branch(self):
        assert evaluate_phi(1.5, -2.0) == 0.0

    def test_power_branch(self):
        assert evaluate_phi(1.5, 4.0) == pytest.approx(2.8284271, abs=1e-7)

    def test_bridge_midpoint(self):
        # the bridge is exactly 1/2 at z = 1/2 by symmetry of g(t)/(g(t)+g(1-t))
        assert evaluate_phi(1.5, 0.5) == pytest.approx(0.5**0.75 / 2, rel=1e-14)
        assert evaluate_phi(1.5, 0.5) == pytest.approx(0.2973018, abs=1e-7)

    def test_continuity_at_one(self):
        assert evaluate_phi(1.5, 1.0) == 1.0
        assert evaluate_phi(1.5, 1.0 - 1e-9) == pytest.approx(1.0, abs=1e-8)

    def test_monotone_on_grid(self):
        z = np.linspace(-1.0, 5.0, 10_000)
        assert np.all(np.diff(evaluate_phi(1.5, z)) >= 0.0)

    @given(st.floats(-1.0, 10.0), st.floats(-1.0, 10.0))
    @settings(max_examples=300, deadline=None)
    def test_monotone_pairs(self, z1, z2):
        lo, hi = min(z1, z2), max(z1, z2)
        assert evaluate_phi(1.5, lo) <= evaluate_phi(1.5, hi)

    @pytest.mark.parametrize("z", [0.05, 0.3, 0.5, 0.77, 0.99, 1.5, 7.0])
    def test_derivative_matches_difference_quotient(self, z):
        h = 1e-6
        fd = (evaluate_phi(1.5, z + h) - evaluate_phi(1.5, z - h)) / (2 * h)
        assert evaluate_phi_prime(1.5, z) == pytest.approx(fd, rel=1e-6, abs=1e-9)

    def test_exact_zero_below_product_threshold(self):
        z = FourSpeciesExchange.zero_product
        assert evaluate_phi(1.5, z) == 0.0
        assert evaluate_phi_prime(1.5, z) == 0.0

    def test_rejects_bad_exponent(self):
        with pytest.raises(ValueError):
            evaluate_phi(2.5, 1.0)


class TestFourSpeciesExchange:
    def test_equilibrium(self):
        m = FourSpeciesExchange()
        np.testing.assert_array_equal(evaluate_reaction(m, np.ones(4)), np.zeros(4))

    def test_known_state(self):
        m = FourSpeciesExchange()
        q = m.rate(np.array([2.0, 0.0, 2.0, 0.0]))
        np.testing.assert_allclose(q, [-2.8284271, 2.8284271, -2.8284271, 2.8284271], atol=1e-7)

    @given(st.lists(st.floats(0.0, 50.0), min_size=4, max_size=4))
    @settings(max_examples=200, deadline=None)
    def test_conserves(self, a):
        q = FourSpeciesExchange().rate(np.array(a))
        assert abs(np.sum(q)) <= 1e-12 * (1 + np.max(np.abs(q)))

    def test_jacobian_matches_fd(self):
        m = FourSpeciesExchange()
        rng = np.random.default_rng(3)
        a = rng.uniform(0.2, 3.0, size=(4, 50))
        np.testing.assert_allclose(m.jacobian(a), fd_jacobian(m.rate, a), rtol=1e-5, atol=1e-7)

    def test_active_mask_exact(self):
        m = FourSpeciesExchange()
        rng = np.random.default_rng(0)
        a = rng.uniform(0.0, 0.06, size=(4, 5000))
        mask = m.active_mask(a)
        assert np.any(~mask)
        assert np.all(m.rate(a)[:, ~mask] == 0.0)

    def test_log_monotone_structure(self):
        rng = np.random.default_rng(11)
        a = np.exp(rng.uniform(np.log(1e-3), np.log(1e2), size=(4, 10_000)))
        p13, p24 = a[0] * a[2], a[1] * a[3]
        s = (evaluate_phi(1.5, p13) - evaluate_phi(1.5, p24)) * (np.log(p13) - np.log(p24))
        assert np.all(s >= 0.0)


class TestEntropyProduction:
    def test_equilibrium(self):
        assert entropy_production(FourSpeciesExchange(), np.ones(4)) == 0.0

    def test_known_value(self):
        # (phi(4) - phi(1)) ln 4 with phi(1) = 1
        expected = (4.0**0.75 - 1.0) * np.log(4.0)
        val = entropy_production(FourSpeciesExchange(), np.array([2.0, 1.0, 2.0, 1.0]))
        assert val == pytest.approx(expected, rel=1e-14)
        assert val == pytest.approx(2.5347, abs=1e-4)

    def test_detailed_balance_manifold(self):
        a = np.array([2.0, 4.0, 3.0, 1.5])
        assert abs(entropy_production(FourSpeciesExchange(), a)) < 1e-14


class TestVerifyHypotheses:
    def test_four_species_passes(self):
        rep = verify_hypotheses(FourSpeciesExchange(1.5), 100_000, seed=0)
        assert rep.passed, rep.to_dict()
        assert all(r.n_violations == 0 for r in rep.results.values())

    def test_zero_reaction_passes(self):
        assert verify_hypotheses(ZeroReaction(4), 5000).passed

    def test_non_conservative_fails(self):
        def f(a):
            q = np.zeros_like(a)
            q[0] = a[0] ** 2
            return q

        rep = verify_hypotheses(CallableReaction(f, 4, 1.5, 1e6), 5000)
        assert not rep.results["conservation"].passed
        assert rep.results["conservation"].witness is not None

    def test_two_species(self):
        assert verify_hypotheses(TwoSpeciesExchange(1.0), 5000).passed

    def test_sample_count_checked(self):
        with pytest.raises(ValueError):
            verify_hypotheses(ZeroReaction(2), 0)

    def test_report_is_deterministic(self):
        a = verify_hypotheses(FourSpeciesExchange(), 2000, seed=4).to_dict()
        b = verify_hypotheses(FourSpeciesExchange(), 2000, seed=4).to_dict()
        assert a == b


class TestGrowthConstant:
    def test_frozen_value_reproduces(self):
        m = FourSpeciesExchange(1.5, Lambda=1.0)
        raw = calibrate_lambda(m, certification_box(1.5))
        assert LAMBDA_MARGIN * raw == pytest.approx(FROZEN_LAMBDA[1.5], rel=1e-6)

    def test_fd_bound_on_large_states(self):
        m = FourSpeciesExchange()
        rng = np.random.default_rng(2)
        a = np.exp(rng.uniform(0.0, np.log(1e3), size=(4, 20_000)))
        grad = np.sqrt(np.sum(fd_jacobian(m.rate, a) ** 2, axis=1)).max(axis=0)
        bound = m.Lambda * (1 + 1e-3) * np.linalg.norm(a, axis=0) ** (m.nu - 1)
        assert np.all(grad <= bound)


class TestConfigFragments:
    def test_families(self):
        assert isinstance(model_from_config({"family": "four_species_exchange"}), FourSpeciesExchange)
        assert model_from_config({"family": "two_species_exchange", "k": 2.0}).k == 2.0
        assert model_from_config({"family": "zero", "P": 3}).P == 3

    def test_unknown_family(self):
        with pytest.raises(ValueError):
            model_from_config({"family": "nope"})

    def test_wrong_species_count(self):
        with pytest.raises(ValueError):
            model_from_config({"family": "four_species_exchange", "P": 3})
