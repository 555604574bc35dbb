"""Weighted sum-power minimization for a fixed pair of target message SNRs.

Given targets (eta1, eta2) and a weight alpha, find restricted-feedback
encoding rules minimizing alpha E||x1||^2 + (1-alpha) E||x2||^2 subject to
SNR_i = eta_i. The second user sends its message only on the last channel use
(optimal for alpha at or above sigma2^2/(sigma1^2+sigma2^2)) and echoes only
the most recent receive symbol, with the final echo coefficient structurally
zero. Alternation: a shaped-direction/forward-matrix step solved through a
sum-of-ratios program on the simplex, then cyclic exact coordinate updates of
the echo coefficients.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox

from .channel import ChannelConfig
from .pam import bler_theory
from .scheme import (
    Combiners,
    DesignSolution,
    LinearScheme,
    combiners,
    restricted_f2_matrix,
    snr,
)

_OUTER_CAP = 200
_INNER_CAP = 500


@dataclass(frozen=True)
class WspProblem:
    """One weighted sum-power instance: channel, SNR targets, weight, controls."""

    cfg: ChannelConfig
    eta1: float
    eta2: float
    alpha: float
    eps: float = 1e-3
    n_inits: int = 30
    allow_low_alpha: bool = False

    def __post_init__(self):
        if self.cfg.sigma1_sq <= 0 or self.cfg.sigma2_sq <= 0:
            raise ValueError("design requires positive noise variances")
        if self.eta1 <= 0 or self.eta2 <= 0:
            raise ValueError("SNR targets must be positive")
        lo = self.cfg.sigma2_sq / (self.cfg.sigma1_sq + self.cfg.sigma2_sq)
        if not self.allow_low_alpha and not (lo <= self.alpha < 1.0):
            raise ValueError(
                f"alpha={self.alpha} outside [{lo}, 1); the last-use message "
                "placement is only known optimal there (set allow_low_alpha to override)"
            )
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.eps <= 0 or self.n_inits < 1:
            raise ValueError("eps must be positive and n_inits at least 1")


@dataclass(frozen=True)
class FractionalProgram:
    """min over the scaled simplex of sum_i (u_i . x) / (1 + m_i . x).

    Row layout for block length n: rows 0..n-3 are single-entry ratio terms
    coupling x through suffix denominators; the last row is the linear
    remainder (its m vector is zero). All coefficients are nonnegative.
    """

    u_vectors: np.ndarray
    m_vectors: np.ndarray
    eta1: float

    @property
    def n(self) -> int:
        return self.u_vectors.shape[1]

    def objective(self, x) -> np.ndarray | float:
        """Evaluate at one point (n,) or a batch (b, n)."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        pts = np.atleast_2d(x)
        num = pts @ self.u_vectors.T
        den = 1.0 + pts @ self.m_vectors.T
        vals = np.sum(num / den, axis=1)
        return float(vals[0]) if squeeze else vals


def _fp_arrays(f2_inner: np.ndarray, cfg: ChannelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Full (u, m) row arrays for one (n-2,) echo coefficient vector."""
    f2_inner = np.asarray(f2_inner, dtype=float)
    n = f2_inner.shape[0] + 2
    s1, s2 = cfg.sigma1_sq, cfg.sigma2_sq
    u = np.zeros((n - 1, n))
    m = np.zeros((n - 1, n))
    fsq = f2_inner**2
    beta = fsq * s1 + s2
    rows = np.arange(n - 2)
    u[rows, rows] = fsq * s1**2 / beta
    u[n - 2, : n - 2] = s1 * s2 / beta
    u[n - 2, n - 2 :] = s1
    for r in rows:
        m[r, r + 2 :] = 1.0
    return u, m


def build_fractional_program(f2_diag, cfg: ChannelConfig, eta1: float) -> FractionalProgram:
    """Shaped-direction power program for the given inner echo coefficients.

    ``f2_diag`` holds the echo weights of channel uses 2..n-1 (the last use
    never echoes). Minimizing the returned program over the simplex of squared
    shaped-direction masses x (sum = eta1) gives User 1's minimal transmit
    power once the forward matrix takes its closed form.
    """
    f2_diag = np.asarray(f2_diag, dtype=float)
    if f2_diag.ndim != 1:
        raise ValueError("f2_diag must be a vector")
    u, m = _fp_arrays(f2_diag, cfg)
    return FractionalProgram(u_vectors=u, m_vectors=m, eta1=float(eta1))


def _project_simplex(pts: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection of each row onto {x >= 0, sum x = total}."""
    srt = np.sort(pts, axis=1)[:, ::-1]
    csum = np.cumsum(srt, axis=1) - total
    ks = np.arange(1, pts.shape[1] + 1)
    cond = srt - csum / ks > 0
    rho = pts.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = csum[np.arange(pts.shape[0]), rho] / (rho + 1.0)
    return np.maximum(pts - theta[:, None], 0.0)


def _fp_struct(f2_inner: np.ndarray, cfg: ChannelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Structured coefficients (ratio numerators, linear row), batched."""
    f2_inner = np.atleast_2d(np.asarray(f2_inner, dtype=float))
    b, inner = f2_inner.shape
    n = inner + 2
    s1, s2 = cfg.sigma1_sq, cfg.sigma2_sq
    fsq = f2_inner**2
    beta = fsq * s1 + s2
    u_val = fsq * s1**2 / beta
    w = np.empty((b, n))
    w[:, : n - 2] = s1 * s2 / beta
    w[:, n - 2 :] = s1
    return u_val, w


def _fp_value_grad(x: np.ndarray, u_val: np.ndarray, w: np.ndarray):
    """Objective and gradient at x (batch, n); each ratio row r has its single
    numerator entry at coordinate r and denominator 1 + (suffix sum from r+2)."""
    n = x.shape[1]
    csum = np.cumsum(x[:, ::-1], axis=1)[:, ::-1]
    den = 1.0 + csum[:, 2:]
    ratio = u_val * x[:, : n - 2] / den
    val = np.sum(ratio, axis=1) + np.sum(w * x, axis=1)
    grad = w.copy()
    grad[:, : n - 2] += u_val / den
    grad[:, 2:] -= np.cumsum(ratio / den, axis=1)
    return val, grad


def _cd_refine(
    x: np.ndarray, u_val: np.ndarray, w: np.ndarray, eta1: float,
    max_sweeps: int = 500, tol: float = 1e-13,
) -> np.ndarray:
    """Exact cyclic coordinate descent in suffix-sum variables.

    With S_k the mass at or after coordinate k (S_0 pinned to eta1), each
    coordinate sees f(S_k) = A S_k + beta/(1+S_k) on [S_{k+1}, S_{k-1}],
    minimized in closed form. Coordinates three apart never share a term, so
    the three stride-3 classes update as vectorized blocks. A coordinate with
    a locally constant objective stays put, preserving start-order ties.
    """
    b, n = x.shape
    if n < 2:
        return x.copy()
    sp = np.zeros((b, n + 3))
    sp[:, 1 : n + 1] = np.cumsum(x[:, ::-1], axis=1)[:, ::-1]
    sp[:, 0] = eta1
    sp[:, 1] = eta1
    ua = np.zeros((b, n))
    ua[:, : n - 2] = u_val
    ub = np.zeros((b, n))
    ub[:, 2:n] = u_val
    classes = [np.arange(start, n, 3) for start in (1, 2, 3)]
    classes = [ks for ks in classes if ks.size]
    for _ in range(max_sweeps):
        biggest = 0.0
        for ks in classes:
            a_lin = (
                ua[:, ks] / (1.0 + sp[:, ks + 3])
                - ua[:, ks - 1] / (1.0 + sp[:, ks + 2])
                + w[:, ks]
                - w[:, ks - 1]
            )
            beta = np.maximum(ub[:, ks] * (sp[:, ks - 1] - sp[:, ks]), 0.0)
            lo = sp[:, ks + 2]
            hi = sp[:, ks]
            old = sp[:, ks + 1]
            pos = a_lin > 0
            sstar = np.sqrt(beta / np.where(pos, a_lin, 1.0)) - 1.0
            cand = np.minimum(np.maximum(sstar, lo), hi)
            new = np.where(
                pos,
                np.where(beta > 0, cand, lo),
                np.where((a_lin < 0) | (beta > 0), hi, old),
            )
            sp[:, ks + 1] = new
            biggest = max(biggest, float(np.max(np.abs(new - old), initial=0.0)))
        if biggest <= tol * (1.0 + eta1):
            break
    return sp[:, 1 : n + 1] - sp[:, 2 : n + 2]


def _solve_fp_batch(
    u_val: np.ndarray,
    w: np.ndarray,
    eta1: float,
    rng: Generator,
    n_random_starts: int = 20,
    warm: np.ndarray | None = None,
    max_steps: int = 30,
) -> tuple[np.ndarray, np.ndarray]:
    """Best simplex point per problem: multi-start projected gradient, then an
    exact coordinate-descent polish of every candidate.

    Starts are the simplex vertices first (so exact ties resolve to the
    lowest-index vertex), then Dirichlet draws, a coarse simplex grid for
    n <= 4, and optional warm starts. Returns (x, objective) per problem.
    """
    b, n = w.shape
    starts = [eta1 * np.eye(n)]
    if n >= 2:
        ramp = 2.0 ** np.arange(n)
        split = np.zeros(n)
        split[-2:] = 0.5
        starts.append(eta1 * np.stack([np.full(n, 1.0 / n), split, ramp / ramp.sum()]))
    if n_random_starts:
        starts.append(eta1 * rng.dirichlet(np.ones(n), size=n_random_starts))
    if n <= 4:
        starts.append(_simplex_grid(n, 8) * eta1)
    fixed = np.concatenate(starts, axis=0)
    per = np.broadcast_to(fixed, (b, fixed.shape[0], n))
    if warm is not None:
        per = np.concatenate([per, warm.reshape(b, 1, n)], axis=1)
    k = per.shape[1]

    x = per.reshape(b * k, n).copy()
    uu = np.repeat(u_val, k, axis=0)
    ww = np.repeat(w, k, axis=0)
    val, grad = _fp_value_grad(x, uu, ww)
    gnorm = np.linalg.norm(grad, axis=1)
    step = np.where(gnorm > 0, 0.1 * eta1 / np.maximum(gnorm, 1e-30), 1.0)
    best_x = x.copy()
    best = val.copy()
    # window of recent values for non-monotone acceptance of spectral steps
    window = np.tile(val[:, None], (1, 5))
    wpos = 0
    stall = np.zeros(x.shape[0], dtype=int)
    live = np.arange(x.shape[0])
    for _ in range(max_steps):
        sub = _project_simplex(x[live] - step[live, None] * grad[live], eta1)
        cval, cgrad = _fp_value_grad(sub, uu[live], ww[live])
        ref = np.max(window[live], axis=1)
        accept = cval <= ref - 1e-13 * (1.0 + np.abs(ref))
        dx = sub - x[live]
        dg = cgrad - grad[live]
        num = np.sum(dx * dx, axis=1)
        den = np.sum(dx * dg, axis=1)
        bb = np.where(den > 1e-30 * num, num / np.maximum(den, 1e-300), step[live] * 2.0)
        step[live] = np.where(accept, np.clip(bb, 1e-10 * eta1, 1e4 * eta1), step[live] * 0.3)
        upd = live[accept]
        x[upd] = sub[accept]
        val[upd] = cval[accept]
        grad[upd] = cgrad[accept]
        improved = cval < best[live] - 1e-9 * (1.0 + np.abs(cval))
        gained = live[accept & improved]
        best_x[gained] = sub[accept & improved]
        best[gained] = cval[accept & improved]
        window[upd, wpos] = cval[accept]
        wpos = (wpos + 1) % window.shape[1]
        stall[live] = np.where(accept & improved, 0, stall[live] + 1)
        live = live[stall[live] < 7]
        if live.size == 0:
            break
    refined = _cd_refine(best_x, uu, ww, eta1)
    rval, _ = _fp_value_grad(refined, uu, ww)
    keep = rval <= best
    best_x[keep] = refined[keep]
    best = np.minimum(best, rval)
    best = best.reshape(b, k)
    best_x = best_x.reshape(b, k, n)
    # earliest start within rounding dust of the minimum, so exact ties land
    # on the lowest-index vertex rather than whichever draw won the last bit
    vmin = best.min(axis=1, keepdims=True)
    pick = np.argmax(best <= vmin + 1e-11 * (1.0 + np.abs(vmin)), axis=1)
    rows = np.arange(b)
    return best_x[rows, pick], best[rows, pick]


def _simplex_grid(n: int, levels: int) -> np.ndarray:
    """All points with coordinates j/levels summing to 1, shape (count, n)."""
    pts = []
    for cuts in itertools.combinations(range(levels + n - 1), n - 1):
        prev = -1
        row = []
        for c in cuts:
            row.append(c - prev - 1)
            prev = c
        row.append(levels + n - 2 - prev)
        pts.append(row)
    return np.asarray(pts, dtype=float) / levels


def solve_fractional_program(fp: FractionalProgram, seed: int = 0) -> np.ndarray:
    """Minimize the program; deterministic for a given seed."""
    n = fp.n
    expected_m = np.zeros((n - 1, n))
    for r in range(n - 2):
        expected_m[r, r + 2 :] = 1.0
    diag_only = fp.u_vectors[: n - 2].copy()
    idx = np.arange(n - 2)
    u_val = diag_only[idx, idx].copy()
    diag_only[idx, idx] = 0.0
    if np.any(diag_only != 0.0) or not np.array_equal(fp.m_vectors, expected_m):
        raise ValueError("program does not have the expected row structure")
    rng = Generator(Philox(key=[seed % 2**64, 0x5F]))
    x, _ = _solve_fp_batch(u_val[None], fp.u_vectors[n - 2][None], fp.eta1, rng)
    return x[0]


def _f1_batch(q1: np.ndarray, f2_inner: np.ndarray, cfg: ChannelConfig) -> np.ndarray:
    """Optimal forward matrices, batched: q1 (b, n), f2_inner (b, n-2)."""
    b, n = q1.shape
    s1, s2 = cfg.sigma1_sq, cfg.sigma2_sq
    f1 = np.zeros((b, n, n))
    for c in range(1, n - 1):
        f2v = f2_inner[:, c - 1]
        h = q1[:, c + 1 :]
        ssq = np.sum(h * h, axis=1)
        coef = -(f2v * s1 / (f2v**2 * s1 + s2)) * (q1[:, c - 1] / (1.0 + ssq))
        f1[:, c + 1 :, c] = coef[:, None] * h
    return f1


def closed_form_f1(q1, f2_diag, cfg: ChannelConfig) -> np.ndarray:
    """Forward matrix minimizing User 1's power for fixed shaped masses.

    Column 1 is zero; column i scales the later shaped-mass pattern against
    the echo of use i, with denominators floored by sigma2^2.
    """
    q1 = np.asarray(q1, dtype=float)
    f2_diag = np.asarray(f2_diag, dtype=float)
    if q1.ndim != 1 or f2_diag.shape != (max(q1.shape[0] - 2, 0),):
        raise ValueError("expected q1 of length n and f2_diag of length n-2")
    return _f1_batch(q1[None], f2_diag[None], cfg)[0]


def _surrogate_batch(
    q1: np.ndarray,
    f1: np.ndarray,
    f2_inner: np.ndarray,
    p: np.ndarray,
    alpha: float,
    cfg: ChannelConfig,
    eta2: float,
) -> np.ndarray:
    """Weighted objective with the message vector held at p during echo updates."""
    b, n = q1.shape
    s1, s2 = cfg.sigma1_sq, cfg.sigma2_sq
    fsq = f2_inner**2
    f1sq = f1**2

    # user 1 power with the shaped masses fixed: sum of column terms
    t1 = np.einsum("bj,bj->b", q1[:, 1:], f1[:, 1:, 0])
    phi = s2 * (t1**2 + np.sum(f1sq[:, 1:, 0], axis=1))
    for c in range(1, n - 1):
        r = c - 1
        t = np.einsum("bj,bj->b", q1[:, c + 1 :], f1[:, c + 1 :, c])
        fn2 = np.sum(f1sq[:, c + 1 :, c], axis=1)
        phi = phi + (
            (q1[:, c - 1] + f2_inner[:, r] * t) ** 2 * s1
            + t**2 * s2
            + fn2 * (fsq[:, r] * s1 + s2)
        )
    p1 = phi + s1 * (q1[:, n - 2] ** 2 + q1[:, n - 1] ** 2) if n >= 2 else s1 * q1[:, 0] ** 2

    # user 2 power with message vector p fixed
    p2 = np.full(b, eta2 * s2)
    for c in range(1, n - 1):
        r = c - 1
        i = c + 1  # 1-indexed use echoing receive symbol c
        s1_coupling = np.einsum("bj,bj->b", f1sq[:, i - 2, 1:r], fsq[:, : r - 1]) if r >= 1 else 0.0
        row_mass = np.sum(f1sq[:, i - 2, :r], axis=1)
        p2 = p2 + fsq[:, r] * (p[:, i - 2] ** 2 + s1 * (1.0 + s1_coupling) + s2 * row_mass)
    return alpha * p1 + (1.0 - alpha) * p2


def mixed_power_surrogate(
    q1, f1, f2_diag, p_vector, alpha: float, cfg: ChannelConfig, eta2: float = 0.0
) -> float:
    """Single-instance view of the echo-update objective (p held fixed)."""
    q1 = np.asarray(q1, dtype=float)
    return float(
        _surrogate_batch(
            q1[None],
            np.asarray(f1, dtype=float)[None],
            np.asarray(f2_diag, dtype=float)[None],
            np.asarray(p_vector, dtype=float)[None],
            alpha,
            cfg,
            eta2,
        )[0]
    )


def _sweep_f2_batch(
    q1: np.ndarray,
    f1: np.ndarray,
    alpha: float,
    p: np.ndarray,
    f2_inner: np.ndarray,
    cfg: ChannelConfig,
    eps: float,
    eta2: float,
) -> np.ndarray:
    """Cyclic exact coordinate minimization of the echo coefficients."""
    b, n = q1.shape
    if n <= 2:
        return f2_inner.copy()
    s1, s2 = cfg.sigma1_sq, cfg.sigma2_sq
    f2 = f2_inner.copy()
    f1sq = f1**2
    t = np.zeros((b, n - 2))
    fn2 = np.zeros((b, n - 2))
    for c in range(1, n - 1):
        t[:, c - 1] = np.einsum("bj,bj->b", q1[:, c + 1 :], f1[:, c + 1 :, c])
        fn2[:, c - 1] = np.sum(f1sq[:, c + 1 :, c], axis=1)
    prev = _surrogate_batch(q1, f1, f2, p, alpha, cfg, eta2)
    for _ in range(_INNER_CAP):
        fsq = f2**2
        for r in range(n - 2):
            i = r + 2  # 1-indexed channel use being updated
            s1_coupling = (
                np.einsum("bj,bj->b", f1sq[:, i - 2, 1:r], fsq[:, : r - 1]) if r >= 1 else 0.0
            )
            later = (
                np.einsum("bj,bj->b", f1sq[:, r + 2 : n - 2, r + 1], fsq[:, r + 2 :])
                if r + 2 <= n - 3
                else 0.0
            )
            row_mass = np.sum(f1sq[:, i - 2, :r], axis=1)
            curv = (
                2.0 * alpha * s1 * (t[:, r] ** 2 + fn2[:, r])
                + 2.0 * (1.0 - alpha) * p[:, i - 2] ** 2
                + 2.0 * (1.0 - alpha) * s1 * (1.0 + s1_coupling + later)
                + 2.0 * (1.0 - alpha) * s2 * row_mass
            )
            f2[:, r] = -2.0 * alpha * s1 * q1[:, i - 2] * t[:, r] / curv
            fsq[:, r] = f2[:, r] ** 2
        cur = _surrogate_batch(q1, f1, f2, p, alpha, cfg, eta2)
        if np.all(np.abs(prev - cur) <= eps):
            break
        prev = cur
    return f2


def update_f2(q1, f1, alpha: float, p_vector, f2_diag, cfg: ChannelConfig, eps: float = 1e-3) -> np.ndarray:
    """Sweep the echo coefficients to a stationary point of the fixed-p objective.

    Sweeps run in channel-use order, each coordinate set to its exact
    minimizer given the others, until the objective moves by at most eps.
    The last use's coefficient stays structurally zero.
    """
    q1 = np.asarray(q1, dtype=float)
    return _sweep_f2_batch(
        q1[None],
        np.asarray(f1, dtype=float)[None],
        alpha,
        np.asarray(p_vector, dtype=float)[None],
        np.asarray(f2_diag, dtype=float)[None],
        cfg,
        eps,
        0.0,
    )[0]


def _q1_sqrt_batch(f1: np.ndarray, f2: np.ndarray, cfg: ChannelConfig) -> np.ndarray:
    """Symmetric roots of the first-user statistic covariances, batched."""
    n = f1.shape[1]
    eye = np.eye(n)
    a = eye + np.matmul(f1, f2)
    q1m = np.matmul(a, np.swapaxes(a, 1, 2)) * cfg.sigma1_sq + np.matmul(
        f1, np.swapaxes(f1, 1, 2)
    ) * cfg.sigma2_sq
    vals, vecs = np.linalg.eigh(q1m)
    vals = np.maximum(vals, 1e-14)
    return np.matmul(vecs * np.sqrt(vals)[:, None, :], np.swapaxes(vecs, 1, 2))


def _f2_mats(f2_inner: np.ndarray) -> np.ndarray:
    b, inner = f2_inner.shape
    n = inner + 2
    f2 = np.zeros((b, n, n))
    if n >= 3:
        rows = np.arange(1, n - 1)
        f2[:, rows, rows - 1] = f2_inner
    return f2


def _true_objective_batch(
    g1: np.ndarray, f1: np.ndarray, f2: np.ndarray, g2: np.ndarray, alpha: float, cfg: ChannelConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """alpha p1 + (1-alpha) p2 through the full power formulas, batched."""
    s1, s2 = cfg.sigma1_sq, cfg.sigma2_sq
    n = f1.shape[1]
    eye = np.eye(n)
    f1f2 = np.matmul(f1, f2)
    f2f1 = np.matmul(f2, f1)
    p1 = (
        np.sum(g1**2, axis=1)
        + np.sum(np.einsum("bij,j->bi", f1, g2) ** 2, axis=1)
        + np.sum(f1f2**2, axis=(1, 2)) * s1
        + np.sum(f1**2, axis=(1, 2)) * s2
    )
    p2 = (
        np.sum(np.einsum("bij,j->bi", eye + f2f1, g2) ** 2, axis=1)
        + np.sum(np.einsum("bij,bj->bi", f2, g1) ** 2, axis=1)
        + np.sum(np.matmul(f2, eye + f1f2) ** 2, axis=(1, 2)) * s1
        + np.sum(f2f1**2, axis=(1, 2)) * s2
    )
    return alpha * p1 + (1.0 - alpha) * p2, p1, p2


def _alternate(prob: WspProblem, seed: int):
    """Run all initializations in lockstep; return per-init terminal states."""
    cfg, n = prob.cfg, prob.cfg.n
    b = prob.n_inits
    g2 = np.zeros(n)
    g2[-1] = np.sqrt(prob.eta2 * cfg.sigma2_sq)
    inner = max(n - 2, 0)
    rng_init = Generator(Philox(key=[seed % 2**64, 0xF2]))
    rng_fp = Generator(Philox(key=[seed % 2**64, 0x01]))
    f2_inner = rng_init.uniform(0.0, 1.0, (b, inner))

    histories: list[list[float]] = [[] for _ in range(b)]
    active = np.arange(b)
    s_prev = np.full(b, np.inf)
    warm: np.ndarray | None = None

    for _ in range(_OUTER_CAP):
        fa = f2_inner[active]
        u_val, w = _fp_struct(fa, cfg)
        x, _ = _solve_fp_batch(
            u_val, w, prob.eta1, rng_fp,
            warm=None if warm is None else warm[active],
        )
        q1 = np.sqrt(np.maximum(x, 0.0))
        f1 = _f1_batch(q1, fa, cfg)
        p = np.einsum("bij,bj->bi", _q1_sqrt_batch(f1, _f2_mats(fa), cfg), q1)
        fa_new = _sweep_f2_batch(q1, f1, prob.alpha, p, fa, cfg, prob.eps, prob.eta2)
        g1 = np.einsum("bij,bj->bi", _q1_sqrt_batch(f1, _f2_mats(fa_new), cfg), q1)
        s, _, _ = _true_objective_batch(g1, f1, _f2_mats(fa_new), g2, prob.alpha, cfg)

        f2_inner[active] = fa_new
        if warm is None:
            warm = np.zeros((b, n))
        warm[active] = x
        for j, idx in enumerate(active):
            histories[idx].append(float(s[j]))
        done = np.abs(s - s_prev[active]) <= prob.eps
        s_prev[active] = s
        active = active[~done]
        if active.size == 0:
            break

    # final shaped-direction pass so the SNR targets are met exactly
    u_val, w = _fp_struct(f2_inner, cfg)
    x, _ = _solve_fp_batch(u_val, w, prob.eta1, rng_fp, warm=warm)
    q1 = np.sqrt(np.maximum(x, 0.0))
    f1 = _f1_batch(q1, f2_inner, cfg)
    f2m = _f2_mats(f2_inner)
    g1 = np.einsum("bij,bj->bi", _q1_sqrt_batch(f1, f2m, cfg), q1)
    s, p1, p2 = _true_objective_batch(g1, f1, f2m, g2, prob.alpha, cfg)
    return g1, f1, f2_inner, g2, s, p1, p2, histories


def _solution_from_state(prob, g1, f1, f2_inner, g2, p1, p2, seed) -> DesignSolution:
    cfg = prob.cfg
    scheme = LinearScheme(
        g1=g1, g2=g2, f1=f1, f2=restricted_f2_matrix(f2_inner, cfg.n), restricted_f2=True
    )
    got1 = snr(scheme, cfg, 1)
    got2 = snr(scheme, cfg, 2)
    if abs(got1 - prob.eta1) > 1e-6 * prob.eta1 or abs(got2 - prob.eta2) > 1e-6 * prob.eta2:
        raise RuntimeError(
            f"solution misses its SNR targets: got ({got1}, {got2}), "
            f"wanted ({prob.eta1}, {prob.eta2})"
        )
    comb = combiners(scheme, cfg)
    return DesignSolution(
        cfg=cfg,
        scheme=scheme,
        comb=comb,
        eta1=prob.eta1,
        eta2=prob.eta2,
        alpha=prob.alpha,
        power1=float(p1),
        power2=float(p2),
        predicted_bler1=bler_theory(cfg.k1, prob.eta1) if cfg.k1 else float("nan"),
        predicted_bler2=bler_theory(cfg.k2, prob.eta2) if cfg.k2 else float("nan"),
        seed=seed,
    )


def min_wsp(prob: WspProblem, seed: int = 0) -> DesignSolution:
    """Best design over all initializations (ties to the earliest)."""
    sol, _ = min_wsp_history(prob, seed)
    return sol


def min_wsp_history(prob: WspProblem, seed: int = 0) -> tuple[DesignSolution, list[np.ndarray]]:
    """Like min_wsp, also returning each initialization's objective trace."""
    if prob.cfg.n == 1:
        cfg = prob.cfg
        g1 = np.array([np.sqrt(prob.eta1 * cfg.sigma1_sq)])
        g2 = np.array([np.sqrt(prob.eta2 * cfg.sigma2_sq)])
        z = np.zeros((1, 1))
        scheme = LinearScheme(g1=g1, g2=g2, f1=z, f2=z, restricted_f2=True)
        sol = DesignSolution(
            cfg=cfg,
            scheme=scheme,
            comb=Combiners(w1=1.0 / g1, w2=1.0 / g2),
            eta1=prob.eta1,
            eta2=prob.eta2,
            alpha=prob.alpha,
            power1=float(g1[0] ** 2),
            power2=float(g2[0] ** 2),
            predicted_bler1=bler_theory(cfg.k1, prob.eta1) if cfg.k1 else float("nan"),
            predicted_bler2=bler_theory(cfg.k2, prob.eta2) if cfg.k2 else float("nan"),
            seed=seed,
        )
        obj = prob.alpha * sol.power1 + (1 - prob.alpha) * sol.power2
        return sol, [np.array([obj])] * prob.n_inits
    g1, f1, f2_final, g2, s, p1, p2, histories = _alternate(prob, seed)
    best = int(np.argmin(s))
    sol = _solution_from_state(
        prob, g1[best], f1[best], f2_final[best], g2, p1[best], p2[best], seed
    )
    return sol, [np.asarray(h) for h in histories]
