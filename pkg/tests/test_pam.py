import numpy as np
import pytest

from twoway.pam import Constellation, bler_theory, demodulate, modulate

# Expected error rates frozen from a Gaussian-tail oracle (scipy.stats.norm.sf),
# independent of the erfc-based implementation under test.
BLER_EXPECTED = {
    (1, 0.0): 0.5,
    (1, 4.0): 0.022750131948179195,
    (1, 100.0): 7.61985302416047e-24,
    (2, 0.0): 0.75,
    (2, 5.0): 0.2379828808971856,
    (2, 10.0): 0.11797440528771377,
    (2, 1000.0): 1.5663656878218418e-45,
    (3, 100.0): 0.02545929027359567,
}


class TestConstellation:
    def test_bpsk_levels(self):
        c = Constellation.for_bits(1)
        np.testing.assert_allclose(c.levels, [-1.0, 1.0])

    def test_four_level_amplitudes(self):
        c = Constellation.for_bits(2)
        np.testing.assert_allclose(c.levels, np.array([-3.0, -1.0, 1.0, 3.0]) / np.sqrt(5.0))

    def test_eight_level_spacing(self):
        c = Constellation.for_bits(3)
        np.testing.assert_allclose(np.diff(c.levels), 2.0 / np.sqrt(21.0))

    @pytest.mark.parametrize("k", range(1, 7))
    def test_zero_mean_unit_power(self, k):
        c = Constellation.for_bits(k)
        assert abs(np.mean(c.levels)) < 1e-12
        assert abs(np.mean(c.levels**2) - 1.0) < 1e-12

    @pytest.mark.parametrize("k", range(1, 7))
    def test_levels_strictly_increasing(self, k):
        c = Constellation.for_bits(k)
        assert np.all(np.diff(c.levels) > 0)

    @pytest.mark.parametrize("k", range(1, 7))
    def test_gray_adjacency(self, k):
        c = Constellation.for_bits(k)
        flips = np.abs(np.diff(c.words.astype(int), axis=0)).sum(axis=1)
        np.testing.assert_array_equal(flips, 1)

    def test_bit_map_is_bijective(self):
        c = Constellation.for_bits(3)
        bm = c.bit_map()
        assert len(bm) == 8
        assert len(set(bm.values())) == 8

    def test_rejects_zero_bits(self):
        with pytest.raises(ValueError):
            Constellation.for_bits(0)


class TestModulate:
    def test_bpsk(self):
        c = Constellation.for_bits(1)
        assert modulate([0], c) == -1.0
        assert modulate([1], c) == 1.0

    def test_lowest_word_most_negative(self):
        c = Constellation.for_bits(2)
        assert modulate([0, 0], c) == pytest.approx(-3.0 / np.sqrt(5.0))

    def test_word_length_mismatch(self):
        c = Constellation.for_bits(2)
        with pytest.raises(ValueError):
            modulate([0, 1, 1], c)

    @pytest.mark.parametrize("k", range(1, 7))
    def test_round_trip(self, k):
        c = Constellation.for_bits(k)
        for word in c.words:
            np.testing.assert_array_equal(demodulate(modulate(word, c), c), word)


class TestDemodulate:
    def test_nearest(self):
        c = Constellation.for_bits(1)
        np.testing.assert_array_equal(demodulate(0.9, c), [1])

    def test_midpoint_tie_goes_low(self):
        c = Constellation.for_bits(1)
        np.testing.assert_array_equal(demodulate(0.0, c), [0])

    def test_nearest_among_four(self):
        c = Constellation.for_bits(2)
        want = c.words[c.word_index(demodulate(-1.0 / np.sqrt(5.0), c))]
        np.testing.assert_array_equal(demodulate(-0.5, c), want)
        assert modulate(demodulate(-0.5, c), c) == pytest.approx(-1.0 / np.sqrt(5.0))

    def test_non_finite_rejected(self):
        c = Constellation.for_bits(1)
        with pytest.raises(ValueError):
            demodulate(float("nan"), c)
        with pytest.raises(ValueError):
            demodulate(float("inf"), c)

    def test_vectorized_ties(self):
        c = Constellation.for_bits(2)
        mids = c.midpoints
        idx = c.nearest_index(mids)
        np.testing.assert_array_equal(idx, [0, 1, 2])


class TestBlerTheory:
    @pytest.mark.parametrize("key,expected", sorted(BLER_EXPECTED.items()))
    def test_frozen_values(self, key, expected):
        k, snr = key
        assert bler_theory(k, snr) == pytest.approx(expected, rel=1e-12)

    def test_strictly_decreasing_in_snr(self):
        grid = np.linspace(0.0, 50.0, 200)
        for k in (1, 2, 3, 4):
            vals = bler_theory(k, grid)
            assert np.all(np.diff(vals) < 0)

    def test_negative_snr_rejected(self):
        with pytest.raises(ValueError):
            bler_theory(1, -0.1)

    @pytest.mark.parametrize("k,snr", [(1, 4.0), (2, 8.0), (3, 30.0)])
    def test_matches_monte_carlo_symbol_errors(self, k, snr):
        c = Constellation.for_bits(k)
        rng = np.random.default_rng(42)
        trials = 10**6
        sent = rng.integers(0, c.size, size=trials)
        est = c.levels[sent] + rng.standard_normal(trials) / np.sqrt(snr)
        got = c.nearest_index(est)
        p_hat = np.mean(got != sent)
        p = bler_theory(k, snr)
        stderr = np.sqrt(p * (1.0 - p) / trials)
        assert abs(p_hat - p) < 3.0 * stderr
