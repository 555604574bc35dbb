"""Pulse-amplitude modulation with Gray labeling, plus closed-form block error rates.

Messages are single PAM symbols drawn from a zero-mean, unit-power constellation
with 2**k equally spaced amplitudes. Gray labeling makes adjacent decision errors
cost one bit, which is what ties block error rates to bit error rates downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc


def _gray_words(k: int) -> np.ndarray:
    """Binary-reflected Gray words for ascending level index, shape (2**k, k)."""
    idx = np.arange(2**k)
    codes = idx ^ (idx >> 1)
    shifts = np.arange(k - 1, -1, -1)
    return ((codes[:, None] >> shifts[None, :]) & 1).astype(np.uint8)


@dataclass(frozen=True)
class Constellation:
    """A 2**k-ary PAM constellation with Gray-labeled levels.

    Attributes:
        k: Bits per symbol.
        levels: Strictly increasing amplitudes, zero mean and unit average power.
        words: Gray word per level, aligned with ``levels``; shape (2**k, k).
    """

    k: int
    levels: np.ndarray
    words: np.ndarray

    @classmethod
    def for_bits(cls, k: int) -> "Constellation":
        """Build the unit-power constellation for ``k`` bits per symbol.

        Args:
            k: Bits per symbol, at least 1.

        Returns:
            Constellation with levels (2j - (2**k - 1)) * d for j = 0..2**k - 1,
            where d normalizes the average symbol power to one.
        """
        if k < 1:
            raise ValueError(f"bits per symbol must be >= 1, got {k}")
        m = 2**k
        spacing = np.sqrt(3.0 / (m * m - 1.0))
        levels = (2.0 * np.arange(m) - (m - 1.0)) * spacing
        levels.flags.writeable = False
        words = _gray_words(k)
        words.flags.writeable = False
        return cls(k=k, levels=levels, words=words)

    @property
    def size(self) -> int:
        return 2**self.k

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.levels[1:] + self.levels[:-1])

    def bit_map(self) -> dict[tuple[int, ...], float]:
        """Word-to-level mapping as a plain dict."""
        return {tuple(int(b) for b in w): float(v) for w, v in zip(self.words, self.levels)}

    def word_index(self, bits) -> int:
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.shape != (self.k,):
            raise ValueError(f"expected a {self.k}-bit word, got shape {bits.shape}")
        matches = np.nonzero((self.words == bits).all(axis=1))[0]
        return int(matches[0])

    def nearest_index(self, estimates) -> np.ndarray:
        """Index of the nearest level for each estimate; midpoint ties go low.

        Args:
            estimates: Scalar or array of real-valued symbol estimates.

        Returns:
            Integer array (or 0-d array) of level indices.
        """
        est = np.asarray(estimates, dtype=float)
        if not np.all(np.isfinite(est)):
            raise ValueError("symbol estimates must be finite")
        # side="left" places an exact midpoint with the lower level
        return np.searchsorted(self.midpoints, est, side="left")


def modulate(bits, c: Constellation) -> float:
    """Map a k-bit word to its constellation level.

    Args:
        bits: Sequence of k bits (0/1).
        c: Constellation defining the Gray mapping.

    Returns:
        The amplitude mapped to the word.
    """
    return float(c.levels[c.word_index(bits)])


def demodulate(estimate: float, c: Constellation) -> np.ndarray:
    """Map a symbol estimate to the k-bit word of the nearest level.

    Args:
        estimate: Real-valued symbol estimate; must be finite.
        c: Constellation defining the Gray mapping.

    Returns:
        The Gray word of the nearest level, shape (k,), dtype uint8.
    """
    idx = int(c.nearest_index(estimate))
    return c.words[idx].copy()


def bler_theory(k: int, snr) -> np.ndarray | float:
    """Block (symbol) error probability of unit-power 2**k-PAM at a given SNR.

    Args:
        k: Bits per symbol, at least 1.
        snr: Post-processing signal-to-noise ratio(s), nonnegative.

    Returns:
        ((2**(k+1) - 2) / 2**k) * Q(sqrt(3 * snr / (2**(2k) - 1))), elementwise.
    """
    if k < 1:
        raise ValueError(f"bits per symbol must be >= 1, got {k}")
    s = np.asarray(snr, dtype=float)
    if np.any(s < 0):
        raise ValueError("snr must be nonnegative")
    coeff = (2.0 ** (k + 1) - 2.0) / 2.0**k
    arg = np.sqrt(3.0 * s / (4.0**k - 1.0))
    out = coeff * 0.5 * erfc(arg / np.sqrt(2.0))
    return float(out) if np.isscalar(snr) else out
