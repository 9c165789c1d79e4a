import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netfair.analytics import (
    SMALL_P,
    FrontrunQuery,
    NetworkParams,
    PropagationProfile,
    alpha_f,
    fail,
    frontrun_lower_bound,
    frontrun_probability,
    linear_propagation_profile,
    succeed,
)

BTC = NetworkParams.from_rate(1 / 600)


class TestNetworkParams:
    def test_rate_identity(self):
        p = NetworkParams(p=1e-6, hash_rate_H=2e5)
        assert p.lam == pytest.approx(0.2)
        NetworkParams(p=1e-6, hash_rate_H=2e5, lam=0.2)
        with pytest.raises(ValueError):
            NetworkParams(p=1e-6, hash_rate_H=2e5, lam=0.3)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"p": 0.0, "hash_rate_H": 1.0},
            {"p": 1.0, "hash_rate_H": 1.0},
            {"p": 0.1, "hash_rate_H": 0.0},
            {"p": 0.1, "hash_rate_H": 1.0, "round_seconds": 0.0},
            {"p": 0.1, "hash_rate_H": 1.0, "n_nodes": 0},
        ],
    )
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            NetworkParams(**kwargs)

    def test_query_validation(self):
        FrontrunQuery(0.5, 0.9, 11)
        for args in [(0.0, 0.9, 1), (0.5, 1.0, 1), (0.95, 0.9, 1), (0.5, 0.9, -1)]:
            with pytest.raises(ValueError):
                FrontrunQuery(*args)


class TestFail:
    def test_zero_time_and_zero_fraction(self):
        assert fail(BTC, 0.5, 0) == 1.0
        assert fail(BTC, 0.0, 100) == 1.0

    def test_half_network_one_interval(self):
        assert fail(BTC, 0.5, 600) == pytest.approx(math.exp(-0.5), abs=1e-4)
        assert fail(BTC, 0.5, 600) == pytest.approx(0.60653, abs=1e-4)

    def test_converges_to_exponential_as_p_shrinks(self):
        errs = []
        for p in (1e-2, 1e-4, 1e-6, 1e-9):
            params = NetworkParams.from_rate(1 / 600, p=p)
            errs.append(abs(fail(params, 0.5, 600) - math.exp(-0.5)))
        assert errs == sorted(errs, reverse=True)
        assert errs[-1] < 1e-9

    def test_no_underflow_for_huge_exponents(self):
        params = NetworkParams.from_rate(1e6)
        assert fail(params, 1.0, 1e6) == 0.0
        assert succeed(params, 1.0, 1e6) == 1.0
        tiny = NetworkParams.from_rate(1e-12)
        assert succeed(tiny, 1.0, 1.0) == pytest.approx(1e-12, rel=1e-6)

    def test_rejects_domain(self):
        for phi, t in [(-0.1, 1), (1.1, 1), (0.5, -1)]:
            with pytest.raises(ValueError):
                fail(BTC, phi, t)

    @given(
        st.floats(0.0, 1.0),
        st.floats(0.0, 1.0),
        st.floats(0.0, 1e4),
        st.floats(0.0, 1e4),
    )
    def test_monotone_and_memoryless(self, phi1, phi2, t1, t2):
        lo, hi = sorted((phi1, phi2))
        assert fail(BTC, hi, t1) <= fail(BTC, lo, t1)
        a, b = sorted((t1, t2))
        assert fail(BTC, phi1, b) <= fail(BTC, phi1, a)
        assert fail(BTC, 1.0, t1 + t2) == pytest.approx(fail(BTC, 1.0, t1) * fail(BTC, 1.0, t2), rel=1e-12)


class TestFrontrun:
    def test_bitcoin(self):
        q = FrontrunQuery(0.5, 0.9, 11)
        assert frontrun_probability(BTC, q) == pytest.approx(0.01, abs=0.005)
        assert frontrun_probability(BTC, q) == pytest.approx(-math.expm1(-0.5 * 11 / 600), rel=1e-8)
        x = 0.5 * 11 / 600
        assert frontrun_lower_bound(BTC, q) == pytest.approx(x - x * x / 2, abs=1e-15)
        assert frontrun_lower_bound(BTC, q) == pytest.approx(0.009125, abs=1e-6)

    def test_scaled_566(self):
        params = NetworkParams.from_rate(566 / 600)
        assert frontrun_probability(params, FrontrunQuery(0.5, 0.9, 11)) == pytest.approx(0.99, abs=0.005)

    def test_ethereum_13s_interval(self):
        params = NetworkParams.from_rate(1 / 13)
        assert frontrun_probability(params, FrontrunQuery(0.5, 0.9, 11)) == pytest.approx(0.36, abs=0.03)

    def test_no_head_start(self):
        q = FrontrunQuery(0.5, 0.9, 0)
        assert frontrun_probability(BTC, q) == 0.0
        assert frontrun_lower_bound(BTC, q) == 0.0

    def test_bound_goes_negative_but_stays_below(self):
        params = NetworkParams.from_rate(1.0)
        q = FrontrunQuery(0.9, 0.95, 5)
        assert frontrun_lower_bound(params, q) < 0 < frontrun_probability(params, q)

    @settings(max_examples=300)
    @given(
        st.floats(1e-3, 0.99),
        st.floats(-6, 1),
        st.floats(1e-3, 600),
        st.floats(1e-3, 1.0),
    )
    def test_bound_below_exact_and_monotone(self, M, log_lam, d, scale):
        params = NetworkParams.from_rate(10**log_lam)
        q = FrontrunQuery(M, 0.99, d)
        exact = frontrun_probability(params, q)
        assert frontrun_lower_bound(params, q) < exact
        smaller = [
            frontrun_probability(NetworkParams.from_rate(10**log_lam * scale), q),
            frontrun_probability(params, FrontrunQuery(M * scale, 0.99, d)),
            frontrun_probability(params, FrontrunQuery(M, 0.99, d * scale)),
        ]
        assert all(s <= exact for s in smaller)


class TestProfile:
    def test_symmetric_split(self):
        prof = linear_propagation_profile(5, 5)
        assert prof.at(5) == (0.5, 0.5)
        assert prof.at(100) == (0.5, 0.5)

    def test_five_fifteen_split(self):
        assert linear_propagation_profile(5, 15).at(15) == (0.75, 0.25)

    def test_one_nine_ramp(self):
        prof = linear_propagation_profile(1, 9)
        assert prof.phi_A[9] == pytest.approx(0.9)
        assert all(a <= b for a, b in zip(prof.phi_A, prof.phi_A[1:]))
        assert all(a + b <= 1 + 1e-12 for a, b in zip(prof.phi_A[:9], prof.phi_B[:9]))
        for i in range(10):
            assert prof.phi_A[i] == pytest.approx(min(i / 1, 0.9))
            assert prof.phi_B[i] == pytest.approx(min(i / 9, 0.1))

    def test_fronts_meet_at_harmonic_round(self):
        # Fronts from opposite ends meet at dA*dB/(dA+dB); here 2*6/8 = 1.5.
        prof = linear_propagation_profile(2, 6)
        assert prof.at(1) == pytest.approx((0.5, 1 / 6))
        assert prof.at(2) == pytest.approx((0.75, 0.25))
        assert sum(prof.at(2)) == pytest.approx(1.0)

    def test_rejects_bad_delays(self):
        for args in [(4, 2), (0, 3), (1.5, 3)]:
            with pytest.raises(ValueError):
                linear_propagation_profile(*args)

    def test_profile_invariants_checked(self):
        with pytest.raises(ValueError):
            PropagationProfile(1, 1, (0.0, 0.4), (0.0, 0.5))  # not at the final split
        with pytest.raises(ValueError):
            PropagationProfile(1, 2, (0.0, 0.7, 0.6), (0.0, 0.3, 0.4))  # decreasing
        with pytest.raises(ValueError):
            PropagationProfile(1, 2, (0.0,), (0.0,))  # too short

    @given(st.integers(1, 30), st.integers(0, 30))
    def test_generated_profiles_valid(self, a, extra):
        prof = linear_propagation_profile(a, a + extra)
        total = 2 * a + extra
        assert prof.at(a + extra) == pytest.approx(((a + extra) / total, a / total))


class TestAlpha:
    @pytest.mark.parametrize("lam", [0.01, 0.2, 1.0, 5.0])
    @pytest.mark.parametrize("delta", [1, 3, 8])
    def test_symmetry(self, lam, delta):
        res = alpha_f(NetworkParams.from_rate(lam), linear_propagation_profile(delta, delta))
        assert res.alpha_f == pytest.approx(1.0, abs=1e-6)
        assert res.psi_A == pytest.approx(res.psi_B, abs=1e-12)

    @pytest.mark.parametrize("lam", [0.001, 0.05, 0.2, 2.0, 20.0])
    @pytest.mark.parametrize("da,db", [(1, 2), (2, 4), (1, 9), (3, 11)])
    def test_mass_balance(self, lam, da, db):
        eps = 1e-12
        res = alpha_f(NetworkParams.from_rate(lam), linear_propagation_profile(da, db), epsilon=eps)
        assert res.converged
        assert res.psi_A + res.psi_B + res.residual == pytest.approx(1.0, abs=1e-9)
        assert res.residual < eps
        assert abs(res.psi_B - (1 - res.psi_A)) <= res.residual + 1e-15
        assert res.alpha_f >= 1.0
        assert res.alpha_f == pytest.approx(res.psi_A / (1 - res.psi_A), rel=1e-12)

    @pytest.mark.parametrize("lam", [0.01, 0.3, 3.0])
    def test_swap_antisymmetry(self, lam):
        params = NetworkParams.from_rate(lam)
        prof = linear_propagation_profile(2, 7)
        fwd = alpha_f(params, prof)
        back = alpha_f(params, prof.swapped())
        assert fwd.alpha_f * back.alpha_f == pytest.approx(1.0, abs=1e-6)

    def test_increasing_in_delta_b(self):
        params = NetworkParams.from_rate(0.1)
        values = [alpha_f(params, linear_propagation_profile(2, db)).alpha_f for db in range(2, 16)]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_increasing_in_lambda(self):
        prof = linear_propagation_profile(2, 4)
        lams = [10**e for e in (-3, -2.5, -2, -1.5, -1, -0.5, 0, 0.5, 1)]
        values = [alpha_f(NetworkParams.from_rate(l), prof).alpha_f for l in lams]
        assert all(b > a for a, b in zip(values, values[1:]))

    def test_known_values(self):
        params = NetworkParams.from_rate(0.2)
        assert alpha_f(params, linear_propagation_profile(2, 4)).alpha_f == pytest.approx(2.0665, abs=1e-4)

    def test_round_length_scales_rate(self):
        # Only lam * round_seconds matters.
        a = alpha_f(NetworkParams.from_rate(0.2, round_seconds=1.0), linear_propagation_profile(2, 4))
        b = alpha_f(NetworkParams.from_rate(0.1, round_seconds=2.0), linear_propagation_profile(2, 4))
        assert a.alpha_f == pytest.approx(b.alpha_f, rel=1e-9)

    def test_degenerate_rate_flags_nonconvergence(self):
        res = alpha_f(NetworkParams.from_rate(1e-14), linear_propagation_profile(2, 3))
        assert not res.converged
        assert res.notes
        assert res.residual > 0.9
        assert res.psi_A + res.psi_B + res.residual == pytest.approx(1.0, abs=1e-9)

    def test_rejects_epsilon(self):
        with pytest.raises(ValueError):
            alpha_f(BTC, linear_propagation_profile(1, 2), epsilon=0.0)

    def test_small_instance_against_race_simulation(self):
        from conftest import race_monte_carlo

        prof = linear_propagation_profile(2, 4)
        res = alpha_f(NetworkParams.from_rate(0.2), prof)
        trials = 200_000
        wa, wb, left = race_monte_carlo(0.2, prof, trials, seed=11)
        est = wa / trials
        sigma = math.sqrt(est * (1 - est) / trials)
        assert left == 0
        assert abs(res.psi_A - est) < 3 * sigma
