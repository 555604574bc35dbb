"""Shared generators for randomized scheme tests."""

import numpy as np

from twoway.channel import ChannelConfig
from twoway.scheme import LinearScheme, restricted_f2_matrix


def random_strictly_lower(rng, n, scale=1.0):
    return np.tril(rng.normal(0.0, scale, (n, n)), -1)


def random_scheme(rng, n, scale=0.7, restricted=False):
    if restricted:
        f2 = restricted_f2_matrix(rng.normal(0.0, scale, max(n - 2, 0)), n)
    else:
        f2 = random_strictly_lower(rng, n, scale)
    return LinearScheme(
        g1=rng.normal(0.0, 1.0, n),
        g2=rng.normal(0.0, 1.0, n),
        f1=random_strictly_lower(rng, n, scale),
        f2=f2,
        restricted_f2=restricted,
    )


def random_config(rng, n):
    return ChannelConfig(
        sigma1_sq=float(rng.uniform(0.05, 2.0)),
        sigma2_sq=float(rng.uniform(0.05, 2.0)),
        n=n,
    )


def closed_form_trace(scheme, m1, m2, n1, n2):
    """Unrolled signal model: the non-recursive route to the same symbols."""
    eye = np.eye(scheme.n)
    g1, g2, f1, f2 = scheme.g1, scheme.g2, scheme.f1, scheme.f2
    x1 = g1 * m1 + f1 @ (g2 * m2 + f2 @ n1 + n2)
    x2 = (
        (eye + f2 @ f1) @ g2 * m2
        + f2 @ g1 * m1
        + f2 @ (eye + f1 @ f2) @ n1
        + f2 @ f1 @ n2
    )
    return x1, x2, x2 + n2, x1 + n1
