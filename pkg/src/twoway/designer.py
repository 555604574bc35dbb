"""Sum-error design search and block composition.

The search nests three one-dimensional passes: a grid over the second user's
message SNR target, a bisection on the first user's target against the power
budget, and a golden-section pass on the power weight inside every budget
evaluation. Long messages are scheduled as repeated pair designs, either
back to back or as two interleaved designs whose supports alternate.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .channel import ChannelConfig
from .pam import bler_theory
from .scheme import ConvergenceError, DesignSolution, per_use_powers
from .wsp import WspProblem, min_wsp

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

# complementary-use amplitude floor, relative to sqrt(per-use power)
SUPPORT_LEAK_REL = 1e-6


class InfeasibleDesignError(RuntimeError):
    """No power split meets the budget for the requested targets."""


class CompositionError(ValueError):
    """Designs lack the alternating support needed for interleaving."""


@dataclass(frozen=True)
class SearchConfig:
    """Knobs for the sum-error search.

    ``eta2_max`` and ``eta1_max`` default to NP/sigma2^2 and
    2NP(sigma1^2+sigma2^2)/sigma2^2 for the config in use; set them to
    override. ``n_inits`` is the per-call optimizer restart count inside the
    nested search (headline convergence checks use the optimizer default).
    """

    eta2_grid_size: int = 40
    eta2_max: float | None = None
    eta1_max: float | None = None
    bisect_tol: float = 1e-3
    golden_tol: float = 1e-3
    error_metric: str = "BLER"
    n_inits: int = 8

    def __post_init__(self):
        if self.eta2_grid_size < 2:
            raise ValueError("eta2 grid needs at least 2 points")
        if self.error_metric not in ("BLER", "BER"):
            raise ValueError("error_metric must be 'BLER' or 'BER'")
        if self.eta2_max is not None and self.eta2_max <= 0:
            raise ValueError("eta2_max must be positive")
        if self.eta1_max is not None and self.eta1_max <= 0:
            raise ValueError("eta1_max must be positive")
        if self.bisect_tol <= 0 or self.golden_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.n_inits < 1:
            raise ValueError("n_inits must be at least 1")

    def eta2_cap(self, cfg: ChannelConfig) -> float:
        if self.eta2_max is not None:
            return self.eta2_max
        return cfg.n * cfg.p / cfg.sigma2_sq

    def eta1_cap(self, cfg: ChannelConfig) -> float:
        if self.eta1_max is not None:
            return self.eta1_max
        return 2.0 * cfg.n * cfg.p * (cfg.sigma1_sq + cfg.sigma2_sq) / cfg.sigma2_sq


def golden_alpha(
    cfg: ChannelConfig,
    eta1: float,
    eta2: float,
    seed: int = 0,
    search: SearchConfig | None = None,
) -> tuple[float, DesignSolution]:
    """Weight minimizing the larger of the two transmit powers.

    Golden-section over [sigma2^2/(sigma1^2+sigma2^2), 1), assuming the
    max-power curve is unimodal in the weight; a violation yields a local
    minimum. Returns the best evaluated weight with its design.
    """
    search = search or SearchConfig()
    lo = cfg.sigma2_sq / (cfg.sigma1_sq + cfg.sigma2_sq)
    hi = 1.0 - 1e-6

    def evaluate(alpha: float) -> tuple[float, DesignSolution]:
        prob = WspProblem(
            cfg=cfg, eta1=eta1, eta2=eta2, alpha=alpha, n_inits=search.n_inits
        )
        sol = min_wsp(prob, seed)
        return max(sol.power1, sol.power2), sol

    if cfg.n == 1:
        # both powers are weight-independent closed forms
        alpha = 0.5 * (lo + hi)
        return alpha, evaluate(alpha)[1]

    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc, sc = evaluate(c)
    fd, sd = evaluate(d)
    best = (fc, c, sc) if fc <= fd else (fd, d, sd)
    while hi - lo > search.golden_tol:
        if fc <= fd:
            hi, d, fd, sd = d, c, fc, sc
            c = hi - _GOLDEN * (hi - lo)
            fc, sc = evaluate(c)
            if fc < best[0]:
                best = (fc, c, sc)
        else:
            lo, c, fc, sc = c, d, fd, sd
            d = lo + _GOLDEN * (hi - lo)
            fd, sd = evaluate(d)
            if fd < best[0]:
                best = (fd, d, sd)
    return best[1], best[2]


@dataclass(frozen=True)
class BisectResult:
    eta1: float
    alpha: float
    solution: DesignSolution
    residual: float  # max-power minus budget at the returned point
    saturated: bool  # even eta1_max stayed under budget


def bisect_eta1(
    cfg: ChannelConfig,
    eta2: float,
    seed: int = 0,
    search: SearchConfig | None = None,
) -> BisectResult:
    """Largest affordable first-user SNR target given the second user's.

    u(eta1) = max(p1, p2) - NP increases with the target, so bisection
    brackets the root; the limit eta1 -> 0 is analytic (user 1 silent,
    cooperation off). The residual stop is |u| <= bisect_tol * NP.
    """
    search = search or SearchConfig()
    budget = cfg.n * cfg.p
    u_lo = eta2 * cfg.sigma2_sq - budget
    if u_lo >= 0.0:
        raise InfeasibleDesignError(
            f"eta2={eta2:g} alone needs power {eta2 * cfg.sigma2_sq:g} "
            f"against budget {budget:g}"
        )
    hi = search.eta1_cap(cfg)
    tol = search.bisect_tol * budget

    alpha, sol = golden_alpha(cfg, hi, eta2, seed, search)
    u_hi = max(sol.power1, sol.power2) - budget
    if u_hi < 0.0:
        return BisectResult(eta1=hi, alpha=alpha, solution=sol, residual=u_hi, saturated=True)
    if u_hi <= tol:
        return BisectResult(eta1=hi, alpha=alpha, solution=sol, residual=u_hi, saturated=False)

    lo_val = 0.0
    fallback: BisectResult | None = None
    for _ in range(80):
        mid = 0.5 * (lo_val + hi)
        alpha, sol = golden_alpha(cfg, mid, eta2, seed, search)
        u_mid = max(sol.power1, sol.power2) - budget
        if abs(u_mid) <= tol:
            return BisectResult(eta1=mid, alpha=alpha, solution=sol, residual=u_mid, saturated=False)
        if u_mid > 0.0:
            hi = mid
        else:
            lo_val = mid
            fallback = BisectResult(
                eta1=mid, alpha=alpha, solution=sol, residual=u_mid, saturated=False
            )
        if hi - lo_val <= 1e-12 * search.eta1_cap(cfg):
            break
    if fallback is not None:
        # optimizer jitter can make the root unreachable at tolerance; the
        # best within-budget point keeps the power invariant
        return fallback
    raise ConvergenceError("eta1 bisection found no within-budget point")


def _error_term(k: int, eta: float, metric: str) -> float:
    b = bler_theory(k, eta)
    return b / k if metric == "BER" else b


def _grid_point(args) -> tuple[float, BisectResult] | None:
    cfg, eta2, seed, search = args
    try:
        res = bisect_eta1(cfg, eta2, seed, search)
    except InfeasibleDesignError:
        return None
    total = _error_term(cfg.k1, res.eta1, search.error_metric) + _error_term(
        cfg.k2, eta2, search.error_metric
    )
    return total, res


def worker_count(n_tasks: int) -> int:
    """Parallel width for independent tasks, capped by TWOWAY_THREADS."""
    workers = os.cpu_count() or 1
    cap = os.environ.get("TWOWAY_THREADS")
    if cap:
        workers = min(workers, max(1, int(cap)))
    return max(1, min(workers, n_tasks))


def design_sum_error(
    cfg: ChannelConfig,
    search: SearchConfig | None = None,
    seed: int = 0,
) -> DesignSolution:
    """Minimize the two users' summed error probabilities under the budget.

    Evaluates a log-spaced grid of second-user targets (in parallel), each
    through bisect_eta1, and keeps the smallest predicted sum error; exact
    ties go to the smaller second-user target. Raises InfeasibleDesignError
    only if every grid point fails.
    """
    search = search or SearchConfig()
    if not cfg.k1 or not cfg.k2:
        raise ValueError("sum-error design needs k1 and k2 on the config")
    cap = search.eta2_cap(cfg)
    grid = np.geomspace(1e-3 * cap, cap, search.eta2_grid_size)
    tasks = [
        (cfg, float(e2), (seed * 1_000_003 + i) % 2**63, search)
        for i, e2 in enumerate(grid)
    ]
    workers = worker_count(len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_grid_point, tasks))
    else:
        outcomes = [_grid_point(t) for t in tasks]
    best: tuple[float, BisectResult] | None = None
    for out in outcomes:  # grid order, so ties keep the lower eta2
        if out is not None and (best is None or out[0] < best[0]):
            best = out
    if best is None:
        raise InfeasibleDesignError("every eta2 grid point exceeded the power budget")
    return best[1].solution


def alternating_support_leak(design: DesignSolution) -> float:
    """Largest root-power the design places on its complementary uses.

    The asymmetric-channel pattern for odd block lengths: user 1 occupies
    odd uses (1-indexed), user 2 even uses plus the last. Returns the max
    RMS amplitude outside that pattern; compare against
    SUPPORT_LEAK_REL * sqrt(cfg.p).
    """
    cfg = design.cfg
    n = cfg.n
    v1, v2 = per_use_powers(design.scheme, cfg)
    use = np.arange(1, n + 1)
    off1 = v1[use % 2 == 0]
    off2 = v2[(use % 2 == 1) & (use < n)]
    leaks = np.concatenate([off1, off2])
    return float(np.sqrt(leaks.max())) if leaks.size else 0.0


@dataclass(frozen=True)
class CompositePlan:
    """Two pair designs interleaved over 2m channel uses.

    Slot tuples map each design's live uses (design order) to 0-indexed
    composite uses. Design A keeps its odd uses in place and its standalone
    last-use message moves to the final slot; design B shifts one slot right
    and its standalone message fills slot 0.
    """

    n_total: int
    per_use_power: float
    design_a: DesignSolution
    design_b: DesignSolution
    slots_u1_a: tuple[int, ...]
    slots_u2_a: tuple[int, ...]
    slots_u1_b: tuple[int, ...]
    slots_u2_b: tuple[int, ...]
    total_power: float


def compose_alternate(
    cfg_pair: ChannelConfig, design_a: DesignSolution, design_b: DesignSolution
) -> CompositePlan:
    """Interleave two odd-length alternating designs into 2m uses.

    Each design must span cfg_pair.n - 1 uses on matching noise variances,
    with per-pair budget half the composite's and the alternating support
    pattern in place; otherwise CompositionError.
    """
    if cfg_pair.n % 2 != 0 or cfg_pair.n < 2:
        raise CompositionError("composite length must be even and positive")
    n_design = cfg_pair.n - 1
    for name, d in (("A", design_a), ("B", design_b)):
        if d.cfg.n != n_design:
            raise CompositionError(
                f"design {name} spans {d.cfg.n} uses, composite needs {n_design}"
            )
        if (
            d.cfg.sigma1_sq != cfg_pair.sigma1_sq
            or d.cfg.sigma2_sq != cfg_pair.sigma2_sq
        ):
            raise CompositionError(f"design {name} built for different noise levels")
        budget = d.cfg.n * d.cfg.p
        want = cfg_pair.n * cfg_pair.p / 2.0
        if not math.isclose(budget, want, rel_tol=1e-6):
            raise CompositionError(
                f"design {name} budget {budget:g} is not half the composite's {2 * want:g}"
            )
        leak = alternating_support_leak(d)
        if leak >= SUPPORT_LEAK_REL * math.sqrt(d.cfg.p):
            raise CompositionError(
                f"design {name} leaks {leak:g} onto its complementary uses"
            )

    m = cfg_pair.n // 2
    # 0-indexed design uses: user 1 live on even i, user 2 live on odd i plus
    # the last use (its standalone message)
    u1_live = tuple(range(0, n_design, 2))
    u2_echo = tuple(range(1, n_design - 1, 2))
    slots_u1_a = u1_live
    slots_u2_a = u2_echo + (2 * m - 1,)
    slots_u1_b = tuple(i + 1 for i in u1_live)
    slots_u2_b = tuple(i + 1 for i in u2_echo) + (0,)
    total = design_a.power1 + design_a.power2 + design_b.power1 + design_b.power2
    return CompositePlan(
        n_total=cfg_pair.n,
        per_use_power=cfg_pair.p,
        design_a=design_a,
        design_b=design_b,
        slots_u1_a=slots_u1_a,
        slots_u2_a=slots_u2_a,
        slots_u1_b=slots_u1_b,
        slots_u2_b=slots_u2_b,
        total_power=total,
    )


def composite_use_powers(plan: CompositePlan) -> tuple[np.ndarray, np.ndarray]:
    """Per-composite-use expected powers (user 1, user 2) of the live symbols."""
    out1 = np.zeros(plan.n_total)
    out2 = np.zeros(plan.n_total)
    for design, s1, s2 in (
        (plan.design_a, plan.slots_u1_a, plan.slots_u2_a),
        (plan.design_b, plan.slots_u1_b, plan.slots_u2_b),
    ):
        v1, v2 = per_use_powers(design.scheme, design.cfg)
        live1 = [i for i in range(design.cfg.n) if i % 2 == 0]
        live2 = [i for i in range(design.cfg.n) if i % 2 == 1] + [design.cfg.n - 1]
        out1[list(s1)] += v1[live1]
        out2[list(s2)] += v2[live2]
    return out1, out2


@dataclass(frozen=True)
class PairSchedule:
    pair_index: int
    offset: int  # first channel use (0-indexed) of the pair's span
    n_uses: int  # design length for this pair
    power_budget: float
    role: str  # "solo" for successive mode, "first"/"second" for alternate
    group: int | None = None


@dataclass(frozen=True)
class TransmissionPlan:
    mode: str
    k1: int
    k2: int
    m_pairs: int
    pad1: int  # zero bits appended to user 1's stream
    pad2: int
    entries: tuple[PairSchedule, ...]


def plan_long_block(
    l1: int,
    l2: int,
    n_total: int,
    k1: int,
    k2: int,
    mode: str = "successive",
    per_use_power: float = 1.0,
) -> TransmissionPlan:
    """Schedule of per-pair design invocations for long bit streams.

    Both streams must split into the same number of K-bit words (short final
    words are zero-padded). Successive mode gives each pair n_total/M uses;
    alternate mode groups pairs in twos, each group spanning an even
    n_total/(M/2) uses with designs one use shorter at half the group budget.
    """
    if min(l1, l2, n_total, k1, k2) <= 0:
        raise ValueError("lengths and sizes must be positive")
    m1 = -(-l1 // k1)
    m2 = -(-l2 // k2)
    if m1 != m2:
        raise ValueError(
            f"streams split into different pair counts ({m1} vs {m2}); "
            "choose matching L/K ratios"
        )
    m_pairs = m1
    pad1 = m_pairs * k1 - l1
    pad2 = m_pairs * k2 - l2

    if mode == "successive":
        if n_total % m_pairs:
            raise ValueError(f"{n_total} uses do not divide into {m_pairs} pairs")
        n = n_total // m_pairs
        entries = tuple(
            PairSchedule(
                pair_index=i,
                offset=i * n,
                n_uses=n,
                power_budget=n * per_use_power,
                role="solo",
            )
            for i in range(m_pairs)
        )
    elif mode == "alternate":
        if m_pairs % 2:
            raise ValueError("alternate mode needs an even number of message pairs")
        groups = m_pairs // 2
        if n_total % groups:
            raise ValueError(f"{n_total} uses do not divide into {groups} pair groups")
        n_group = n_total // groups
        if n_group % 2:
            raise ValueError("alternate groups need an even use count per group")
        entries = tuple(
            PairSchedule(
                pair_index=2 * g + j,
                offset=g * n_group,
                n_uses=n_group - 1,
                power_budget=n_group * per_use_power / 2.0,
                role="first" if j == 0 else "second",
                group=g,
            )
            for g in range(groups)
            for j in (0, 1)
        )
    else:
        raise ValueError(f"unknown mode {mode!r}")

    return TransmissionPlan(
        mode=mode,
        k1=k1,
        k2=k2,
        m_pairs=m_pairs,
        pad1=pad1,
        pad2=pad2,
        entries=entries,
    )
