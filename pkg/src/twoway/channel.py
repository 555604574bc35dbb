"""Causal simulation of the two-way additive-Gaussian exchange."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from numpy.random import Generator, Philox

if TYPE_CHECKING:
    from .scheme import LinearScheme


@dataclass(frozen=True)
class ChannelConfig:
    """Noise variances, block length and per-use power budget for one exchange."""

    sigma1_sq: float
    sigma2_sq: float
    n: int
    p: float = 1.0
    k1: int | None = None
    k2: int | None = None

    def __post_init__(self):
        # zero variance is allowed for noiseless diagnostics
        if self.sigma1_sq < 0 or self.sigma2_sq < 0:
            raise ValueError("noise variances must be nonnegative")
        if self.n < 1:
            raise ValueError(f"block length must be >= 1, got {self.n}")
        if self.p <= 0:
            raise ValueError(f"power budget must be positive, got {self.p}")
        for k in (self.k1, self.k2):
            if k is not None and k < 1:
                raise ValueError(f"bits per message must be >= 1, got {k}")

    @property
    def snr_ch1(self) -> float:
        return self.p / self.sigma1_sq

    @property
    def snr_ch2(self) -> float:
        return self.p / self.sigma2_sq

    @classmethod
    def from_snr_db(
        cls,
        snr1_db: float,
        snr2_db: float,
        n: int,
        p: float = 1.0,
        k1: int | None = None,
        k2: int | None = None,
    ) -> "ChannelConfig":
        """Config whose per-link SNRs p/sigma_i^2 equal the given decibel values."""
        sigma1_sq = p * 10.0 ** (-snr1_db / 10.0)
        sigma2_sq = p * 10.0 ** (-snr2_db / 10.0)
        return cls(sigma1_sq=sigma1_sq, sigma2_sq=sigma2_sq, n=n, p=p, k1=k1, k2=k2)


@dataclass(frozen=True)
class ExchangeTrace:
    """All symbols of one exchange; y2 = x1 + n1 and y1 = x2 + n2 per use."""

    x1: np.ndarray
    x2: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    n1: np.ndarray
    n2: np.ndarray


def draw_noise(cfg: ChannelConfig, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """One pair of i.i.d. noise vectors from a counter-based stream keyed by seed."""
    rng = Generator(Philox(key=[seed % 2**64, 0]))
    n1 = rng.normal(0.0, np.sqrt(cfg.sigma1_sq), cfg.n)
    n2 = rng.normal(0.0, np.sqrt(cfg.sigma2_sq), cfg.n)
    return n1, n2


def run_exchange(scheme: "LinearScheme", m1: float, m2: float, n1, n2) -> ExchangeTrace:
    """Run the exchange causally, one channel use at a time.

    Per use k, User 1 sends x1[k] built from its message and the
    feedback-cleaned past receive signal, then User 2 sends x2[k] built
    from its message and its past receive signal.
    """
    n1 = np.asarray(n1, dtype=float)
    n2 = np.asarray(n2, dtype=float)
    n = scheme.n
    if n1.shape != (n,) or n2.shape != (n,):
        raise ValueError(f"noise vectors must have shape ({n},)")
    x1 = np.zeros(n)
    x2 = np.zeros(n)
    y1 = np.zeros(n)
    y2 = np.zeros(n)
    for k in range(n):
        cleaned = y1 - scheme.f2 @ x1
        x1[k] = scheme.g1[k] * m1 + scheme.f1[k] @ cleaned
        y2[k] = x1[k] + n1[k]
        x2[k] = scheme.g2[k] * m2 + scheme.f2[k] @ y2
        y1[k] = x2[k] + n2[k]
    return ExchangeTrace(x1=x1, x2=x2, y1=y1, y2=y2, n1=n1, n2=n2)


def run_exchange_batch(scheme: "LinearScheme", m1, m2, n1, n2) -> ExchangeTrace:
    """Same causal recursion as run_exchange, over a batch of exchanges.

    All inputs are arrays with leading batch dimension; returns stacked traces
    of shape (batch, n).
    """
    m1 = np.asarray(m1, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    n1 = np.asarray(n1, dtype=float)
    n2 = np.asarray(n2, dtype=float)
    n = scheme.n
    if n1.ndim != 2 or n1.shape[1] != n or n1.shape != n2.shape:
        raise ValueError(f"noise batches must have shape (batch, {n})")
    b = n1.shape[0]
    x1 = np.zeros((b, n))
    x2 = np.zeros((b, n))
    y1 = np.zeros((b, n))
    y2 = np.zeros((b, n))
    for k in range(n):
        cleaned = y1 - x1 @ scheme.f2.T
        x1[:, k] = scheme.g1[k] * m1 + cleaned @ scheme.f1[k]
        y2[:, k] = x1[:, k] + n1[:, k]
        x2[:, k] = scheme.g2[k] * m2 + y2 @ scheme.f2[k]
        y1[:, k] = x2[:, k] + n2[:, k]
    return ExchangeTrace(x1=x1, x2=x2, y1=y1, y2=y2, n1=n1, n2=n2)
