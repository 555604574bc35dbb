"""Linear two-way coding algebra.

A scheme is the tuple (g1, F1, g2, F2): each user transmits its PAM message
scaled by g_i plus a strictly-causal linear combination of what it has heard,

    x1 = g1 m1 + F1 (y1 - F2 x1),      x2 = g2 m2 + F2 y2,

with F1, F2 strictly lower triangular. Unrolling the recursion gives the
noise-shaped receive statistics, their covariances

    Q2 = F2 F2^T s1 + s2 I,
    Q1 = (I + F1 F2)(I + F1 F2)^T s1 + F1 F1^T s2,

(s_i short for sigma_i^2), the per-user transmit powers, and the minimum
variance unbiased combiners implemented here. The tilde form parameterizes
the same exchange in terms of raw (not self-interference-cleaned) receive
signals; conversions in both directions live here too.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from . import __version__
from .channel import ChannelConfig
from .pam import Constellation, bler_theory


class ConvergenceError(RuntimeError):
    """An iterative conversion failed to reach its tolerance under the cap."""

    def __init__(self, message: str, deltas: tuple[float, float]):
        super().__init__(f"{message} (last squared deltas: {deltas[0]:.3e}, {deltas[1]:.3e})")
        self.deltas = deltas


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


def _require_strictly_lower(mat: np.ndarray, name: str) -> None:
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square, got shape {mat.shape}")
    if np.any(np.triu(mat) != 0):
        raise ValueError(f"{name} must be strictly lower triangular")


def first_subdiagonal(mat: np.ndarray) -> np.ndarray:
    """Entries directly below the diagonal, length n-1."""
    return np.diagonal(mat, offset=-1).copy()


def restricted_f2_matrix(subdiag_inner, n: int) -> np.ndarray:
    """Feedback matrix that echoes only the latest receive symbol.

    ``subdiag_inner`` holds the first-subdiagonal entries for rows 1..n-2
    (0-indexed); the last row's entry is structurally zero, so the final
    transmission carries no echo.
    """
    vals = np.asarray(subdiag_inner, dtype=float)
    if vals.shape != (max(n - 2, 0),):
        raise ValueError(f"expected {max(n - 2, 0)} inner subdiagonal entries, got {vals.shape}")
    f2 = np.zeros((n, n))
    if n >= 3:
        rows = np.arange(1, n - 1)
        f2[rows, rows - 1] = vals
    return f2


def is_restricted_f2(mat: np.ndarray) -> bool:
    """True when nonzeros sit only on the first subdiagonal, last row zero."""
    n = mat.shape[0]
    allowed = np.zeros(mat.shape, dtype=bool)
    if n >= 3:
        rows = np.arange(1, n - 1)
        allowed[rows, rows - 1] = True
    return not np.any(mat[~allowed] != 0)


@dataclass(frozen=True)
class LinearScheme:
    """Encoding rules (g1, F1, g2, F2) for one message pair exchange."""

    g1: np.ndarray
    g2: np.ndarray
    f1: np.ndarray
    f2: np.ndarray
    restricted_f2: bool = False

    def __post_init__(self):
        object.__setattr__(self, "g1", _freeze(self.g1))
        object.__setattr__(self, "g2", _freeze(self.g2))
        object.__setattr__(self, "f1", _freeze(self.f1))
        object.__setattr__(self, "f2", _freeze(self.f2))
        n = self.g1.shape[0]
        if self.g1.ndim != 1 or self.g2.shape != (n,):
            raise ValueError("g1 and g2 must be vectors of equal length")
        _require_strictly_lower(self.f1, "f1")
        _require_strictly_lower(self.f2, "f2")
        if self.f1.shape != (n, n) or self.f2.shape != (n, n):
            raise ValueError("matrix dimensions must match the message vectors")
        if self.restricted_f2 and not is_restricted_f2(self.f2):
            raise ValueError("f2 is flagged restricted but has entries off the allowed pattern")

    @property
    def n(self) -> int:
        return self.g1.shape[0]


@dataclass(frozen=True)
class TildeScheme:
    """The same exchange written against raw receive signals."""

    g1t: np.ndarray
    g2t: np.ndarray
    f1t: np.ndarray
    f2t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "g1t", _freeze(self.g1t))
        object.__setattr__(self, "g2t", _freeze(self.g2t))
        object.__setattr__(self, "f1t", _freeze(self.f1t))
        object.__setattr__(self, "f2t", _freeze(self.f2t))
        _require_strictly_lower(self.f1t, "f1t")
        _require_strictly_lower(self.f2t, "f2t")

    @property
    def n(self) -> int:
        return self.g1t.shape[0]


@dataclass(frozen=True)
class NoiseShaping:
    """Receive-statistic covariances and their symmetric square roots."""

    q1: np.ndarray
    q2: np.ndarray
    q1_sqrt: np.ndarray
    q2_sqrt: np.ndarray

    @classmethod
    def from_scheme(cls, scheme: LinearScheme, cfg: ChannelConfig) -> "NoiseShaping":
        q1 = compute_q1(scheme, cfg)
        q2 = compute_q2(scheme, cfg)
        return cls(q1=q1, q2=q2, q1_sqrt=spd_sqrt(q1), q2_sqrt=spd_sqrt(q2))


@dataclass(frozen=True)
class Combiners:
    """Minimum variance unbiased combining vectors, w_i^T g_i = 1."""

    w1: np.ndarray
    w2: np.ndarray


def unit_lower_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a x = b by forward substitution; a must be unit lower triangular."""
    return solve_triangular(a, b, lower=True, unit_diagonal=True)


def spd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues below 1e-14 are clamped up to 1e-14: the covariances rooted
    here are positive definite in exact arithmetic, the clamp only guards
    round-off.
    """
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    vals = np.maximum(vals, 1e-14)
    root = (vecs * np.sqrt(vals)) @ vecs.T
    return 0.5 * (root + root.T)


def compute_q2(scheme: LinearScheme, cfg: ChannelConfig) -> np.ndarray:
    """Covariance F2 F2^T s1 + s2 I of the noise seen in User 1's statistic."""
    n = scheme.n
    return scheme.f2 @ scheme.f2.T * cfg.sigma1_sq + cfg.sigma2_sq * np.eye(n)


def compute_q1(scheme: LinearScheme, cfg: ChannelConfig) -> np.ndarray:
    """Covariance (I+F1F2)(I+F1F2)^T s1 + F1 F1^T s2 at User 2's statistic."""
    a = np.eye(scheme.n) + scheme.f1 @ scheme.f2
    return a @ a.T * cfg.sigma1_sq + scheme.f1 @ scheme.f1.T * cfg.sigma2_sq


def snr(scheme: LinearScheme, cfg: ChannelConfig, user: int) -> float:
    """Post-combining message SNR g_i^T Q_i^{-1} g_i for the given user."""
    if user == 1:
        q, g = compute_q1(scheme, cfg), scheme.g1
    elif user == 2:
        q, g = compute_q2(scheme, cfg), scheme.g2
    else:
        raise ValueError(f"user must be 1 or 2, got {user}")
    return float(g @ np.linalg.solve(q, g))


def powers(scheme: LinearScheme, cfg: ChannelConfig) -> tuple[float, float]:
    """Expected total transmit energies (E||x1||^2, E||x2||^2).

    p1 = ||g1||^2 + ||F1 g2||^2 + ||F1 F2||_F^2 s1 + ||F1||_F^2 s2
    p2 = ||(I+F2F1) g2||^2 + ||F2 g1||^2 + ||F2(I+F1F2)||_F^2 s1 + ||F2F1||_F^2 s2
    """
    g1, g2, f1, f2 = scheme.g1, scheme.g2, scheme.f1, scheme.f2
    s1, s2 = cfg.sigma1_sq, cfg.sigma2_sq
    eye = np.eye(scheme.n)
    f1f2 = f1 @ f2
    f2f1 = f2 @ f1
    p1 = (
        g1 @ g1
        + np.sum((f1 @ g2) ** 2)
        + np.sum(f1f2**2) * s1
        + np.sum(f1**2) * s2
    )
    p2 = (
        np.sum(((eye + f2f1) @ g2) ** 2)
        + np.sum((f2 @ g1) ** 2)
        + np.sum((f2 @ (eye + f1f2)) ** 2) * s1
        + np.sum(f2f1**2) * s2
    )
    return float(p1), float(p2)


def per_use_powers(scheme: LinearScheme, cfg: ChannelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Expected per-use transmit powers (E[x1[k]^2], E[x2[k]^2]) as length-n vectors.

    Same decomposition as ``powers`` before summing over uses; the totals of
    the returned vectors equal that function's outputs.
    """
    g1, g2, f1, f2 = scheme.g1, scheme.g2, scheme.f1, scheme.f2
    s1, s2 = cfg.sigma1_sq, cfg.sigma2_sq
    eye = np.eye(scheme.n)
    f1f2 = f1 @ f2
    f2f1 = f2 @ f1
    v1 = g1**2 + (f1 @ g2) ** 2 + np.sum(f1f2**2, axis=1) * s1 + np.sum(f1**2, axis=1) * s2
    v2 = (
        ((eye + f2f1) @ g2) ** 2
        + (f2 @ g1) ** 2
        + np.sum((f2 @ (eye + f1f2)) ** 2, axis=1) * s1
        + np.sum(f2f1**2, axis=1) * s2
    )
    return v1, v2


def combiners(scheme: LinearScheme, cfg: ChannelConfig) -> Combiners:
    """MVU combiners w_i = Q_i^{-1} g_i / (g_i^T Q_i^{-1} g_i)."""
    out = []
    for q, g in (
        (compute_q1(scheme, cfg), scheme.g1),
        (compute_q2(scheme, cfg), scheme.g2),
    ):
        if not np.any(g):
            raise ValueError("degenerate scheme: zero message vector")
        sol = np.linalg.solve(q, g)
        out.append(sol / (g @ sol))
    return Combiners(w1=out[0], w2=out[1])


def _statistic_user1(scheme: LinearScheme, y1: np.ndarray, m1: float) -> np.ndarray:
    # r1 = (I + F2 F1)^{-1} (y1 - F2 g1 m1), a forward substitution
    a = np.eye(scheme.n) + scheme.f2 @ scheme.f1
    return unit_lower_solve(a, y1 - scheme.f2 @ scheme.g1 * m1)


def _statistic_user2(scheme: LinearScheme, y2: np.ndarray, m2: float) -> np.ndarray:
    # r2 = y2 - F1 g2 m2
    return y2 - scheme.f1 @ scheme.g2 * m2


def ml_decode_user1(
    scheme: LinearScheme, cfg: ChannelConfig, y1, m1: float, c2: Constellation
) -> float:
    """Decode User 2's message at User 1 from the receive vector y1.

    Removes the own-message component, whitens causally to the sufficient
    statistic r1 = g2 m2 + F2 n1 + n2, combines with the MVU vector, and
    picks the nearest constellation point.
    """
    y1 = np.asarray(y1, dtype=float)
    if y1.shape != (scheme.n,):
        raise ValueError(f"y1 must have shape ({scheme.n},)")
    r1 = _statistic_user1(scheme, y1, m1)
    est = combiners(scheme, cfg).w2 @ r1
    return float(c2.levels[int(c2.nearest_index(est))])


def ml_decode_user2(
    scheme: LinearScheme, cfg: ChannelConfig, y2, m2: float, c1: Constellation
) -> float:
    """Decode User 1's message at User 2 from the receive vector y2."""
    y2 = np.asarray(y2, dtype=float)
    if y2.shape != (scheme.n,):
        raise ValueError(f"y2 must have shape ({scheme.n},)")
    r2 = _statistic_user2(scheme, y2, m2)
    est = combiners(scheme, cfg).w1 @ r2
    return float(c1.levels[int(c1.nearest_index(est))])


def brute_force_decode_user1(
    scheme: LinearScheme, cfg: ChannelConfig, y1, m1: float, c2: Constellation
) -> float:
    """Exhaustive Gaussian-likelihood decode of m2 from the raw y1.

    Scores every candidate message against the exact conditional law of y1,
    mean F2 g1 m1 + (I+F2F1) g2 m2 and covariance (I+F2F1) Q2 (I+F2F1)^T.
    Serves as the independent reference for ml_decode_user1.
    """
    y1 = np.asarray(y1, dtype=float)
    eye = np.eye(scheme.n)
    a = eye + scheme.f2 @ scheme.f1
    cov = a @ compute_q2(scheme, cfg) @ a.T
    base = scheme.f2 @ scheme.g1 * m1
    sig = a @ scheme.g2
    best, best_val = None, np.inf
    for level in c2.levels:
        resid = y1 - base - sig * level
        val = resid @ np.linalg.solve(cov, resid)
        if val < best_val:
            best, best_val = float(level), val
    return best


def brute_force_decode_user2(
    scheme: LinearScheme, cfg: ChannelConfig, y2, m2: float, c1: Constellation
) -> float:
    """Exhaustive Gaussian-likelihood decode of m1 from the raw y2.

    y2 given both messages is Gaussian with mean g1 m1 + F1 g2 m2 and
    covariance Q1.
    """
    y2 = np.asarray(y2, dtype=float)
    cov = compute_q1(scheme, cfg)
    base = scheme.f1 @ scheme.g2 * m2
    sig = scheme.g1
    best, best_val = None, np.inf
    for level in c1.levels:
        resid = y2 - base - sig * level
        val = resid @ np.linalg.solve(cov, resid)
        if val < best_val:
            best, best_val = float(level), val
    return best


def weighted_power_quadratic(scheme: LinearScheme, cfg: ChannelConfig, alpha: float) -> np.ndarray:
    """Quadratic form scoring a shaped message direction for User 2.

    For a unit-norm shaped direction q2 with g2 = Q2^{1/2} q2, the weighted
    sum power contributed by the message term is q2^T M q2 with

        M = alpha Q2s F1^T F1 Q2s + (1-alpha) Q2s (I+F2F1)^T (I+F2F1) Q2s,

    Q2s the symmetric root of Q2. Its smallest eigenvalue lies in
    [0, (1-alpha) s2] for restricted feedback.
    """
    q2s = spd_sqrt(compute_q2(scheme, cfg))
    eye = np.eye(scheme.n)
    a = eye + scheme.f2 @ scheme.f1
    m = alpha * q2s @ scheme.f1.T @ scheme.f1 @ q2s + (1.0 - alpha) * q2s @ a.T @ a @ q2s
    return 0.5 * (m + m.T)


def tilde_to_plain(t: TildeScheme) -> LinearScheme:
    """Rewrite a raw-receive-signal scheme in cleaned-feedback form."""
    n = t.n
    eye = np.eye(n)
    a = eye + t.f2t @ t.f1t
    g2 = unit_lower_solve(a, t.g2t)
    f2 = unit_lower_solve(a, t.f2t)
    d = eye - t.f1t @ (f2 - t.f2t)
    g1 = unit_lower_solve(d, t.g1t)
    f1 = unit_lower_solve(d, t.f1t)
    return LinearScheme(g1=g1, g2=g2, f1=f1, f2=f2)


def plain_to_tilde(s: LinearScheme, eps: float = 1e-10, max_iters: int | None = None) -> TildeScheme:
    """Rewrite a cleaned-feedback scheme in raw-receive-signal form.

    Alternates A <- (I - F1 B)^{-1} F1 and B <- (I - F2 A)^{-1} F2 - F2 from
    A = B = 0 until both squared Frobenius updates fall to eps. The maps are
    polynomial in nilpotent matrices, so the iteration settles exactly after
    a few rounds; the cap (default 10 n) guards pathologies.
    """
    n = s.n
    if max_iters is None:
        max_iters = 10 * n
    eye = np.eye(n)
    a = np.zeros((n, n))
    b = np.zeros((n, n))
    c1 = c2 = float("inf")
    for _ in range(max_iters):
        a_new = unit_lower_solve(eye - s.f1 @ b, s.f1)
        b_new = unit_lower_solve(eye - s.f2 @ a_new, s.f2) - s.f2
        c1 = float(np.sum((a_new - a) ** 2))
        c2 = float(np.sum((b_new - b) ** 2))
        a, b = a_new, b_new
        if c1 <= eps and c2 <= eps:
            break
    else:
        raise ConvergenceError("tilde-form conversion did not settle", (c1, c2))
    g1t = unit_lower_solve(eye - s.f1 @ b, s.g1)
    g2t = unit_lower_solve(eye - s.f2 @ a, s.g2)
    return TildeScheme(g1t=g1t, g2t=g2t, f1t=a, f2t=s.f2 + b)


@dataclass(frozen=True)
class DesignSolution:
    """A designed scheme with its operating point and decode vectors."""

    cfg: ChannelConfig
    scheme: LinearScheme
    comb: Combiners
    eta1: float
    eta2: float
    alpha: float
    power1: float
    power2: float
    predicted_bler1: float
    predicted_bler2: float
    seed: int | None = None


def _json_number(x: float) -> str:
    if not np.isfinite(x):
        raise ValueError(f"non-finite value cannot be serialized: {x}")
    return f"{x:.16e}"


def _json_text(obj, indent: int = 0) -> str:
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = ",\n".join(
            f'{pad}  "{k}": {_json_text(v, indent + 1)}' for k, v in obj.items()
        )
        return "{\n" + items + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_json_text(v, indent) for v in obj) + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _json_number(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if obj is None:
        return "null"
    raise TypeError(f"cannot serialize {type(obj)!r}")


def design_to_json(sol: DesignSolution) -> str:
    """Serialize a design to its JSON document (decimal, 17 significant digits)."""
    cfg, sch = sol.cfg, sol.scheme
    doc = {
        "n": sch.n,
        "k1": cfg.k1,
        "k2": cfg.k2,
        "sigma1_sq": cfg.sigma1_sq,
        "sigma2_sq": cfg.sigma2_sq,
        "p": cfg.p,
        "g1": list(sch.g1),
        "g2": list(sch.g2),
        "f1_rowmajor": list(sch.f1.ravel()),
        "f2_rowmajor": list(sch.f2.ravel()),
        "eta1": sol.eta1,
        "eta2": sol.eta2,
        "alpha": sol.alpha,
        "power1": sol.power1,
        "power2": sol.power2,
        "w1": list(sol.comb.w1),
        "w2": list(sol.comb.w2),
        "meta": {
            "tool_version": __version__,
            "seed": sol.seed,
            "restricted_f2": sch.restricted_f2,
        },
    }
    return _json_text(doc) + "\n"


def design_from_json(text: str) -> DesignSolution:
    """Parse and validate a design document produced by design_to_json."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed design document: {exc}") from exc
    try:
        n = int(doc["n"])
        cfg = ChannelConfig(
            sigma1_sq=float(doc["sigma1_sq"]),
            sigma2_sq=float(doc["sigma2_sq"]),
            n=n,
            p=float(doc["p"]),
            k1=None if doc["k1"] is None else int(doc["k1"]),
            k2=None if doc["k2"] is None else int(doc["k2"]),
        )
        f1 = np.asarray(doc["f1_rowmajor"], dtype=float).reshape(n, n)
        f2 = np.asarray(doc["f2_rowmajor"], dtype=float).reshape(n, n)
        meta = doc.get("meta", {})
        restricted = bool(meta.get("restricted_f2", is_restricted_f2(f2)))
        sch = LinearScheme(
            g1=np.asarray(doc["g1"], dtype=float),
            g2=np.asarray(doc["g2"], dtype=float),
            f1=f1,
            f2=f2,
            restricted_f2=restricted,
        )
        comb = Combiners(
            w1=_freeze(np.asarray(doc["w1"], dtype=float)),
            w2=_freeze(np.asarray(doc["w2"], dtype=float)),
        )
        if comb.w1.shape != (n,) or comb.w2.shape != (n,):
            raise ValueError("combiner lengths must match n")
        eta1 = float(doc["eta1"])
        eta2 = float(doc["eta2"])
        pred1 = bler_theory(cfg.k1, eta1) if cfg.k1 else float("nan")
        pred2 = bler_theory(cfg.k2, eta2) if cfg.k2 else float("nan")
        seed = meta.get("seed")
        return DesignSolution(
            cfg=cfg,
            scheme=sch,
            comb=comb,
            eta1=eta1,
            eta2=eta2,
            alpha=float(doc["alpha"]),
            power1=float(doc["power1"]),
            power2=float(doc["power2"]),
            predicted_bler1=pred1,
            predicted_bler2=pred2,
            seed=None if seed is None else int(seed),
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"invalid design document: {exc}") from exc
