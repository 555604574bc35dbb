import re

import numpy as np
import pytest
from helpers import random_config, random_scheme, random_strictly_lower

from twoway.channel import ChannelConfig, run_exchange
from twoway.pam import Constellation
from twoway.scheme import (
    Combiners,
    ConvergenceError,
    DesignSolution,
    LinearScheme,
    TildeScheme,
    brute_force_decode_user1,
    brute_force_decode_user2,
    combiners,
    compute_q1,
    compute_q2,
    design_from_json,
    design_to_json,
    first_subdiagonal,
    is_restricted_f2,
    ml_decode_user1,
    ml_decode_user2,
    plain_to_tilde,
    per_use_powers,
    powers,
    restricted_f2_matrix,
    snr,
    spd_sqrt,
    tilde_to_plain,
    unit_lower_solve,
    weighted_power_quadratic,
)


class TestSchemeValidation:
    def test_rejects_non_strictly_lower(self):
        n = 3
        bad = np.eye(n)
        with pytest.raises(ValueError):
            LinearScheme(g1=np.ones(n), g2=np.ones(n), f1=bad, f2=np.zeros((n, n)))

    def test_rejects_restricted_flag_mismatch(self):
        f2 = np.zeros((4, 4))
        f2[2, 0] = 1.0
        with pytest.raises(ValueError):
            LinearScheme(
                g1=np.ones(4), g2=np.ones(4), f1=np.zeros((4, 4)), f2=f2, restricted_f2=True
            )

    def test_restricted_pattern(self):
        f2 = restricted_f2_matrix([0.5, -0.2], 4)
        assert is_restricted_f2(f2)
        np.testing.assert_array_equal(first_subdiagonal(f2), [0.5, -0.2, 0.0])
        assert f2[3, 2] == 0.0

    def test_restricted_small_blocks(self):
        np.testing.assert_array_equal(restricted_f2_matrix([], 2), np.zeros((2, 2)))
        np.testing.assert_array_equal(restricted_f2_matrix([], 1), np.zeros((1, 1)))

    def test_nilpotent_product(self):
        rng = np.random.default_rng(42)
        for n in (2, 4, 7):
            f1 = random_strictly_lower(rng, n)
            f2 = random_strictly_lower(rng, n)
            np.testing.assert_array_equal(np.linalg.matrix_power(f2 @ f1, n), np.zeros((n, n)))


class TestNoiseCovariances:
    def test_q2_no_feedback(self):
        rng = np.random.default_rng(0)
        scheme = LinearScheme(
            g1=np.ones(3), g2=np.ones(3), f1=random_strictly_lower(rng, 3), f2=np.zeros((3, 3))
        )
        cfg = ChannelConfig(sigma1_sq=2.0, sigma2_sq=0.3, n=3)
        np.testing.assert_allclose(compute_q2(scheme, cfg), 0.3 * np.eye(3))

    def test_q2_restricted_is_diagonal(self):
        vals = [0.8, -1.3, 0.4]
        n = 5
        scheme = LinearScheme(
            g1=np.ones(n),
            g2=np.ones(n),
            f1=np.zeros((n, n)),
            f2=restricted_f2_matrix(vals, n),
            restricted_f2=True,
        )
        cfg = ChannelConfig(sigma1_sq=1.7, sigma2_sq=0.2, n=n)
        sub = np.concatenate([vals, [0.0]])
        want = np.diag(np.concatenate([[0.2], sub**2 * 1.7 + 0.2]))
        np.testing.assert_allclose(compute_q2(scheme, cfg), want, atol=1e-14)

    def test_q1_no_feedback(self):
        scheme = LinearScheme(g1=np.ones(3), g2=np.ones(3), f1=np.zeros((3, 3)), f2=np.zeros((3, 3)))
        cfg = ChannelConfig(sigma1_sq=0.7, sigma2_sq=9.0, n=3)
        np.testing.assert_allclose(compute_q1(scheme, cfg), 0.7 * np.eye(3))

    def test_q1_two_uses_hand_case(self):
        a = 1.4
        f1 = np.array([[0.0, 0.0], [a, 0.0]])
        scheme = LinearScheme(g1=np.ones(2), g2=np.ones(2), f1=f1, f2=np.zeros((2, 2)))
        cfg = ChannelConfig(sigma1_sq=0.5, sigma2_sq=0.3, n=2)
        want = np.diag([0.5, 0.5 + a * a * 0.3])
        np.testing.assert_allclose(compute_q1(scheme, cfg), want)

    def test_q2_matches_sample_covariance(self):
        rng = np.random.default_rng(42)
        n = 4
        scheme = random_scheme(rng, n)
        cfg = ChannelConfig(sigma1_sq=0.9, sigma2_sq=0.4, n=n)
        draws = 10**6
        n1 = rng.normal(0.0, np.sqrt(cfg.sigma1_sq), (draws, n))
        n2 = rng.normal(0.0, np.sqrt(cfg.sigma2_sq), (draws, n))
        sample = np.cov((n1 @ scheme.f2.T + n2).T)
        q2 = compute_q2(scheme, cfg)
        np.testing.assert_allclose(sample, q2, rtol=0.02, atol=0.02 * np.abs(q2).max())

    def test_q1_matches_sample_covariance(self):
        rng = np.random.default_rng(43)
        n = 4
        scheme = random_scheme(rng, n)
        cfg = ChannelConfig(sigma1_sq=0.6, sigma2_sq=1.1, n=n)
        draws = 10**6
        n1 = rng.normal(0.0, np.sqrt(cfg.sigma1_sq), (draws, n))
        n2 = rng.normal(0.0, np.sqrt(cfg.sigma2_sq), (draws, n))
        eff = n1 @ (np.eye(n) + scheme.f1 @ scheme.f2).T + n2 @ scheme.f1.T
        sample = np.cov(eff.T)
        q1 = compute_q1(scheme, cfg)
        np.testing.assert_allclose(sample, q1, rtol=0.02, atol=0.02 * np.abs(q1).max())

    def test_spd_sqrt_squares_back(self):
        rng = np.random.default_rng(5)
        for n in (2, 5):
            scheme = random_scheme(rng, n)
            cfg = random_config(rng, n)
            for q in (compute_q1(scheme, cfg), compute_q2(scheme, cfg)):
                root = spd_sqrt(q)
                np.testing.assert_allclose(root @ root, q, atol=1e-10)
                np.testing.assert_allclose(root, root.T, atol=1e-14)

    def test_covariance_eigenvalue_floors(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            n = int(rng.integers(2, 7))
            scheme = random_scheme(rng, n)
            cfg = random_config(rng, n)
            q1 = compute_q1(scheme, cfg)
            q2 = compute_q2(scheme, cfg)
            assert np.linalg.eigvalsh(q2).min() >= cfg.sigma2_sq - 1e-10
            # Q1's floor is set by the smallest singular value of I + F1 F2;
            # that matrix has unit determinant, not singular values >= 1, so
            # the floor is sigma1^2 scaled by it (and Q1[0,0] = sigma1^2 exactly)
            smin = np.linalg.svd(np.eye(n) + scheme.f1 @ scheme.f2, compute_uv=False).min()
            lam1 = np.linalg.eigvalsh(q1).min()
            assert lam1 >= cfg.sigma1_sq * smin**2 - 1e-10
            assert lam1 > 0
            assert q1[0, 0] == pytest.approx(cfg.sigma1_sq, rel=1e-12)


class TestSnrAndPowers:
    def test_snr_no_feedback_last_tap(self):
        n = 4
        g1 = np.zeros(n)
        g1[-1] = 2.5
        scheme = LinearScheme(g1=g1, g2=np.ones(n), f1=np.zeros((n, n)), f2=np.zeros((n, n)))
        cfg = ChannelConfig(sigma1_sq=0.5, sigma2_sq=1.0, n=n)
        assert snr(scheme, cfg, 1) == pytest.approx(2.5**2 / 0.5)

    def test_snr_last_tap_with_restricted_feedback(self):
        # the final receive symbol carries no echo, so its noise is raw
        rng = np.random.default_rng(12)
        n = 6
        cfg = ChannelConfig(sigma1_sq=1.0, sigma2_sq=0.1, n=n)
        eta2 = 7.3
        g2 = np.zeros(n)
        g2[-1] = np.sqrt(eta2 * cfg.sigma2_sq)
        scheme = LinearScheme(
            g1=np.ones(n),
            g2=g2,
            f1=random_strictly_lower(rng, n),
            f2=restricted_f2_matrix(rng.normal(size=n - 2), n),
            restricted_f2=True,
        )
        assert snr(scheme, cfg, 2) == pytest.approx(eta2, rel=1e-12)

    def test_snr_matches_estimator_variance(self):
        rng = np.random.default_rng(44)
        n = 4
        scheme = random_scheme(rng, n)
        cfg = random_config(rng, n)
        comb = combiners(scheme, cfg)
        draws = 10**6
        n1 = rng.normal(0.0, np.sqrt(cfg.sigma1_sq), (draws, n))
        n2 = rng.normal(0.0, np.sqrt(cfg.sigma2_sq), (draws, n))
        err2 = (n1 @ scheme.f2.T + n2) @ comb.w2
        err1 = (n1 @ (np.eye(n) + scheme.f1 @ scheme.f2).T + n2 @ scheme.f1.T) @ comb.w1
        assert 1.0 / np.var(err2) == pytest.approx(snr(scheme, cfg, 2), rel=0.03)
        assert 1.0 / np.var(err1) == pytest.approx(snr(scheme, cfg, 1), rel=0.03)

    def test_powers_no_feedback(self):
        rng = np.random.default_rng(13)
        n = 5
        g1 = rng.normal(size=n)
        g2 = rng.normal(size=n)
        scheme = LinearScheme(g1=g1, g2=g2, f1=np.zeros((n, n)), f2=np.zeros((n, n)))
        cfg = random_config(rng, n)
        p1, p2 = powers(scheme, cfg)
        assert p1 == pytest.approx(np.sum(g1**2))
        assert p2 == pytest.approx(np.sum(g2**2))

    def test_power_term_drops_for_last_tap_message(self):
        rng = np.random.default_rng(14)
        n = 5
        g2 = np.zeros(n)
        g2[-1] = 3.0
        f1 = random_strictly_lower(rng, n)
        scheme_a = LinearScheme(g1=np.ones(n), g2=g2, f1=f1, f2=np.zeros((n, n)))
        scheme_b = LinearScheme(g1=np.ones(n), g2=np.zeros(n), f1=f1, f2=np.zeros((n, n)))
        cfg = random_config(rng, n)
        assert powers(scheme_a, cfg)[0] == pytest.approx(powers(scheme_b, cfg)[0])

    def test_per_use_powers_sum_to_totals(self):
        rng = np.random.default_rng(15)
        for n in (1, 2, 5, 8):
            scheme = random_scheme(rng, n)
            cfg = random_config(rng, n)
            v1, v2 = per_use_powers(scheme, cfg)
            p1, p2 = powers(scheme, cfg)
            assert v1.shape == (n,) and v2.shape == (n,)
            assert np.all(v1 >= 0.0) and np.all(v2 >= 0.0)
            assert np.sum(v1) == pytest.approx(p1, rel=1e-12)
            assert np.sum(v2) == pytest.approx(p2, rel=1e-12)

    def test_per_use_powers_against_simulated_symbols(self):
        rng = np.random.default_rng(16)
        n = 4
        scheme = random_scheme(rng, n)
        cfg = random_config(rng, n)
        draws = 200_000
        m1 = rng.choice([-1.0, 1.0], (draws, 1))
        m2 = rng.choice([-1.0, 1.0], (draws, 1))
        n1 = rng.normal(0.0, np.sqrt(cfg.sigma1_sq), (draws, n))
        n2 = rng.normal(0.0, np.sqrt(cfg.sigma2_sq), (draws, n))
        eye = np.eye(n)
        x1 = m1 * scheme.g1 + (m2 * scheme.g2 + n1 @ scheme.f2.T + n2) @ scheme.f1.T
        x2 = (
            m2 * ((eye + scheme.f2 @ scheme.f1) @ scheme.g2)
            + m1 * (scheme.f2 @ scheme.g1)
            + n1 @ (scheme.f2 @ (eye + scheme.f1 @ scheme.f2)).T
            + n2 @ (scheme.f2 @ scheme.f1).T
        )
        v1, v2 = per_use_powers(scheme, cfg)
        np.testing.assert_allclose(np.mean(x1**2, axis=0), v1, rtol=0.05, atol=1e-3)
        np.testing.assert_allclose(np.mean(x2**2, axis=0), v2, rtol=0.05, atol=1e-3)


class TestCombiners:
    def test_last_tap_combiner(self):
        n = 3
        g2 = np.zeros(n)
        g2[-1] = 4.0
        scheme = LinearScheme(g1=np.ones(n), g2=g2, f1=np.zeros((n, n)), f2=np.zeros((n, n)))
        cfg = ChannelConfig(sigma1_sq=1.0, sigma2_sq=0.2, n=n)
        comb = combiners(scheme, cfg)
        want = np.zeros(n)
        want[-1] = 0.25
        np.testing.assert_allclose(comb.w2, want, atol=1e-14)

    def test_unbiased_and_variance_identity(self):
        rng = np.random.default_rng(45)
        for _ in range(20):
            n = int(rng.integers(2, 8))
            scheme = random_scheme(rng, n)
            cfg = random_config(rng, n)
            comb = combiners(scheme, cfg)
            assert comb.w1 @ scheme.g1 == pytest.approx(1.0, abs=1e-10)
            assert comb.w2 @ scheme.g2 == pytest.approx(1.0, abs=1e-10)
            q1 = compute_q1(scheme, cfg)
            q2 = compute_q2(scheme, cfg)
            assert comb.w1 @ q1 @ comb.w1 == pytest.approx(1.0 / snr(scheme, cfg, 1), abs=1e-9)
            assert comb.w2 @ q2 @ comb.w2 == pytest.approx(1.0 / snr(scheme, cfg, 2), abs=1e-9)

    def test_zero_message_vector_rejected(self):
        n = 3
        scheme = LinearScheme(
            g1=np.zeros(n), g2=np.ones(n), f1=np.zeros((n, n)), f2=np.zeros((n, n))
        )
        cfg = ChannelConfig(sigma1_sq=1.0, sigma2_sq=1.0, n=n)
        with pytest.raises(ValueError, match="degenerate"):
            combiners(scheme, cfg)


def _scaled_scheme(rng, n, cfg, eta1=25.0, eta2=25.0, restricted=False):
    """Random scheme rescaled so both message SNRs are decodable."""
    base = random_scheme(rng, n, restricted=restricted)
    s1 = snr(base, cfg, 1)
    s2 = snr(base, cfg, 2)
    return LinearScheme(
        g1=base.g1 * np.sqrt(eta1 / s1),
        g2=base.g2 * np.sqrt(eta2 / s2),
        f1=base.f1,
        f2=base.f2,
        restricted_f2=restricted,
    )


class TestMlDecoding:
    def test_zero_noise_exact_recovery(self):
        rng = np.random.default_rng(46)
        c1 = Constellation.for_bits(2)
        c2 = Constellation.for_bits(1)
        for _ in range(10):
            n = int(rng.integers(2, 6))
            cfg = random_config(rng, n)
            scheme = _scaled_scheme(rng, n, cfg)
            for m1 in c1.levels:
                for m2 in c2.levels:
                    tr = run_exchange(scheme, m1, m2, np.zeros(n), np.zeros(n))
                    assert ml_decode_user1(scheme, cfg, tr.y1, m1, c2) == m2
                    assert ml_decode_user2(scheme, cfg, tr.y2, m2, c1) == m1

    def test_statistic_reduces_when_echo_product_vanishes(self):
        # f2 echoing only use 1 and f1 ignoring use 1 makes F2 F1 = 0
        n = 3
        f1 = np.zeros((n, n))
        f1[1, 0] = 0.9
        f2 = np.zeros((n, n))
        f2[2, 0] = -0.7
        scheme = LinearScheme(g1=np.array([1.0, 0.2, 0.1]), g2=np.ones(n), f1=f1, f2=f2)
        np.testing.assert_array_equal(scheme.f2 @ scheme.f1, np.zeros((n, n)))
        rng = np.random.default_rng(7)
        y1 = rng.normal(size=n)
        m1 = 0.37
        from twoway.scheme import _statistic_user1

        np.testing.assert_allclose(
            _statistic_user1(scheme, y1, m1), y1 - f2 @ scheme.g1 * m1, atol=1e-14
        )

    def test_agrees_with_statistic_domain_likelihood(self):
        # oracle: score candidates against the cleaned statistic's own law
        rng = np.random.default_rng(47)
        for k in (1, 2, 3):
            c = Constellation.for_bits(k)
            for _ in range(5):
                n = int(rng.integers(2, 6))
                cfg = random_config(rng, n)
                scheme = _scaled_scheme(rng, n, cfg, eta1=9.0, eta2=9.0)
                q2 = compute_q2(scheme, cfg)
                q1 = compute_q1(scheme, cfg)
                eye = np.eye(n)
                for _ in range(80):
                    m1 = float(rng.choice(c.levels))
                    m2 = float(rng.choice(c.levels))
                    n1 = rng.normal(0.0, np.sqrt(cfg.sigma1_sq), n)
                    n2 = rng.normal(0.0, np.sqrt(cfg.sigma2_sq), n)
                    tr = run_exchange(scheme, m1, m2, n1, n2)

                    r1 = np.linalg.solve(eye + scheme.f2 @ scheme.f1, tr.y1 - scheme.f2 @ scheme.g1 * m1)
                    scores = [
                        (r1 - scheme.g2 * lev) @ np.linalg.solve(q2, r1 - scheme.g2 * lev)
                        for lev in c.levels
                    ]
                    assert ml_decode_user1(scheme, cfg, tr.y1, m1, c) == c.levels[int(np.argmin(scores))]

                    r2 = tr.y2 - scheme.f1 @ scheme.g2 * m2
                    scores = [
                        (r2 - scheme.g1 * lev) @ np.linalg.solve(q1, r2 - scheme.g1 * lev)
                        for lev in c.levels
                    ]
                    assert ml_decode_user2(scheme, cfg, tr.y2, m2, c) == c.levels[int(np.argmin(scores))]

    def test_agrees_with_brute_force_on_raw_signals(self):
        rng = np.random.default_rng(48)
        c = Constellation.for_bits(2)
        for _ in range(4):
            n = int(rng.integers(2, 6))
            cfg = random_config(rng, n)
            scheme = _scaled_scheme(rng, n, cfg, eta1=9.0, eta2=9.0)
            for _ in range(50):
                m1 = float(rng.choice(c.levels))
                m2 = float(rng.choice(c.levels))
                n1 = rng.normal(0.0, np.sqrt(cfg.sigma1_sq), n)
                n2 = rng.normal(0.0, np.sqrt(cfg.sigma2_sq), n)
                tr = run_exchange(scheme, m1, m2, n1, n2)
                assert ml_decode_user1(scheme, cfg, tr.y1, m1, c) == brute_force_decode_user1(
                    scheme, cfg, tr.y1, m1, c
                )
                assert ml_decode_user2(scheme, cfg, tr.y2, m2, c) == brute_force_decode_user2(
                    scheme, cfg, tr.y2, m2, c
                )


class TestTildeConversions:
    def test_identity_when_no_feedback(self):
        n = 4
        t = TildeScheme(
            g1t=np.arange(1.0, 5.0), g2t=np.ones(n), f1t=np.zeros((n, n)), f2t=np.zeros((n, n))
        )
        s = tilde_to_plain(t)
        np.testing.assert_array_equal(s.g1, t.g1t)
        np.testing.assert_array_equal(s.g2, t.g2t)
        back = plain_to_tilde(s)
        np.testing.assert_array_equal(back.g1t, t.g1t)
        np.testing.assert_array_equal(back.f2t, t.f2t)

    def test_two_use_block_is_identity_mapping(self):
        rng = np.random.default_rng(8)
        t = TildeScheme(
            g1t=rng.normal(size=2),
            g2t=rng.normal(size=2),
            f1t=random_strictly_lower(rng, 2),
            f2t=random_strictly_lower(rng, 2),
        )
        s = tilde_to_plain(t)
        np.testing.assert_allclose(s.g2, t.g2t, atol=1e-14)
        np.testing.assert_allclose(s.f2, t.f2t, atol=1e-14)
        np.testing.assert_allclose(s.g1, t.g1t, atol=1e-14)
        np.testing.assert_allclose(s.f1, t.f1t, atol=1e-14)

    def test_fixed_point_equations_hold(self):
        rng = np.random.default_rng(49)
        for _ in range(10):
            n = int(rng.integers(2, 9))
            s = random_scheme(rng, n)
            t = plain_to_tilde(s, eps=1e-12)
            a, b = t.f1t, t.f2t - s.f2
            eye = np.eye(n)
            np.testing.assert_allclose((eye - s.f1 @ b) @ a, s.f1, atol=1e-8)
            np.testing.assert_allclose((eye - s.f2 @ a) @ (b + s.f2), s.f2, atol=1e-8)

    def test_round_trip_plain_tilde_plain(self):
        rng = np.random.default_rng(50)
        for _ in range(30):
            n = int(rng.integers(1, 9))
            s = random_scheme(rng, n)
            t = plain_to_tilde(s)
            back = tilde_to_plain(t)
            np.testing.assert_allclose(back.g1, s.g1, atol=1e-9)
            np.testing.assert_allclose(back.g2, s.g2, atol=1e-9)
            np.testing.assert_allclose(back.f1, s.f1, atol=1e-9)
            np.testing.assert_allclose(back.f2, s.f2, atol=1e-9)

    def test_round_trip_tilde_plain_tilde(self):
        rng = np.random.default_rng(51)
        for _ in range(30):
            n = int(rng.integers(1, 9))
            t = TildeScheme(
                g1t=rng.normal(size=n),
                g2t=rng.normal(size=n),
                f1t=random_strictly_lower(rng, n),
                f2t=random_strictly_lower(rng, n),
            )
            back = plain_to_tilde(tilde_to_plain(t))
            np.testing.assert_allclose(back.g1t, t.g1t, atol=1e-9)
            np.testing.assert_allclose(back.g2t, t.g2t, atol=1e-9)
            np.testing.assert_allclose(back.f1t, t.f1t, atol=1e-9)
            np.testing.assert_allclose(back.f2t, t.f2t, atol=1e-9)

    def test_iteration_cap_raises(self):
        rng = np.random.default_rng(52)
        s = random_scheme(rng, 6)
        with pytest.raises(ConvergenceError) as err:
            plain_to_tilde(s, max_iters=1)
        assert len(err.value.deltas) == 2


class TestWeightedPowerQuadratic:
    ALPHA_EDGE = 1.0 - 1e-6

    def test_bounds_on_fuzz(self):
        rng = np.random.default_rng(53)
        for _ in range(200):
            n = int(rng.integers(3, 8))
            cfg = random_config(rng, n)
            lo = cfg.sigma2_sq / (cfg.sigma1_sq + cfg.sigma2_sq)
            alpha = float(rng.uniform(lo, self.ALPHA_EDGE))
            scheme = random_scheme(rng, n, restricted=True)
            lam = np.linalg.eigvalsh(weighted_power_quadratic(scheme, cfg, alpha)).min()
            assert lam >= -1e-10
            assert lam <= (1.0 - alpha) * cfg.sigma2_sq + 1e-10

    def test_three_use_case_is_exact(self):
        rng = np.random.default_rng(54)
        for _ in range(50):
            cfg = random_config(rng, 3)
            lo = cfg.sigma2_sq / (cfg.sigma1_sq + cfg.sigma2_sq)
            alpha = float(rng.uniform(lo, self.ALPHA_EDGE))
            scheme = random_scheme(rng, 3, restricted=True)
            lam = np.linalg.eigvalsh(weighted_power_quadratic(scheme, cfg, alpha)).min()
            assert lam == pytest.approx((1.0 - alpha) * cfg.sigma2_sq, abs=1e-9)


class TestDesignJson:
    def _sample(self):
        rng = np.random.default_rng(55)
        n = 4
        cfg = ChannelConfig(sigma1_sq=1.0, sigma2_sq=0.1, n=n, k1=2, k2=2)
        scheme = _scaled_scheme(rng, n, cfg, restricted=True)
        comb = combiners(scheme, cfg)
        return DesignSolution(
            cfg=cfg,
            scheme=scheme,
            comb=comb,
            eta1=snr(scheme, cfg, 1),
            eta2=snr(scheme, cfg, 2),
            alpha=0.7,
            power1=powers(scheme, cfg)[0],
            power2=powers(scheme, cfg)[1],
            predicted_bler1=1e-3,
            predicted_bler2=2e-5,
            seed=99,
        )

    def test_round_trip_is_exact(self):
        sol = self._sample()
        text = design_to_json(sol)
        back = design_from_json(text)
        np.testing.assert_array_equal(back.scheme.g1, sol.scheme.g1)
        np.testing.assert_array_equal(back.scheme.f1, sol.scheme.f1)
        np.testing.assert_array_equal(back.scheme.f2, sol.scheme.f2)
        np.testing.assert_array_equal(back.comb.w2, sol.comb.w2)
        assert back.scheme.restricted_f2
        assert back.eta1 == sol.eta1
        assert back.alpha == sol.alpha
        assert back.cfg == sol.cfg
        assert back.seed == 99

    def test_numbers_carry_full_precision(self):
        text = design_to_json(self._sample())
        mantissas = re.findall(r"-?(\d)\.(\d+)e[+-]\d+", text)
        assert mantissas
        for lead, frac in mantissas:
            assert 1 + len(frac) >= 15

    def test_malformed_document_rejected(self):
        with pytest.raises(ValueError, match="malformed"):
            design_from_json("{not json")

    def test_missing_field_rejected(self):
        sol = self._sample()
        import json as _json

        doc = _json.loads(design_to_json(sol))
        del doc["g1"]
        with pytest.raises(ValueError, match="invalid"):
            design_from_json(_json.dumps(doc))


class TestUnitLowerSolve:
    def test_matches_dense_solve(self):
        rng = np.random.default_rng(56)
        for n in (1, 3, 6):
            a = np.eye(n) + random_strictly_lower(rng, n)
            b = rng.normal(size=n)
            np.testing.assert_allclose(unit_lower_solve(a, b), np.linalg.solve(a, b), atol=1e-12)

    def test_ignores_diagonal_values(self):
        # unit_diagonal solves must read the structure, not the stored diagonal
        a = np.array([[5.0, 0.0], [2.0, -3.0]])
        b = np.array([1.0, 1.0])
        np.testing.assert_allclose(unit_lower_solve(a, b), [1.0, -1.0])
