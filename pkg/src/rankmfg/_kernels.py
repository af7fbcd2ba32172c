"""Compiled inner loops for the threshold-based control solver."""
import math

import numpy as np
from numba import njit

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@njit(cache=True)
def log_w_and_slope(x, shift, sd, q, a, nodes, weights, half_width):
    """Gaussian-kernel quadrature of the transformed terminal cost.

    For Y = x + shift + sd*Z, Z ~ N(0, 1) and G(y) = a (y - q)^2 1{y < q}
    returns log E[exp(-G(Y))] and E[-G'(Y) exp(-G(Y))] / E[exp(-G(Y))].

    The integral is split at y = q.  Below q the integrand
    exp(-a(y-q)^2 - (y-mu)^2/(2 sd^2)) is Gaussian in y with centre ystar and
    width sp, so its window is anchored there; above q it is the plain
    kernel.  Both pieces use Gauss-Legendre nodes and a shared log-scale.
    """
    n = x.shape[0]
    m = nodes.shape[0]
    log_w = np.empty(n)
    slope = np.empty(n)
    c = 1.0 + 2.0 * a * sd * sd
    sp = sd / math.sqrt(c)
    inv2s2 = 0.5 / (sd * sd)
    e1 = np.empty(m)
    e2 = np.empty(m)
    y1 = np.empty(m)
    for i in range(n):
        mu = x[i] + shift
        ystar = q + (mu - q) / c
        hi1 = min(q, ystar + half_width * sp)
        lo1 = min(ystar, hi1) - half_width * sp
        h1 = 0.5 * (hi1 - lo1)
        c1 = 0.5 * (hi1 + lo1)
        lo2 = max(q, mu - half_width * sd)
        hi2 = max(q, mu) + half_width * sd
        h2 = 0.5 * (hi2 - lo2)
        c2 = 0.5 * (hi2 + lo2)
        emax = -np.inf
        for j in range(m):
            y = c1 + h1 * nodes[j]
            y1[j] = y
            d = y - q
            e = -a * d * d - (y - mu) * (y - mu) * inv2s2
            e1[j] = e
            if e > emax:
                emax = e
            y = c2 + h2 * nodes[j]
            e = -(y - mu) * (y - mu) * inv2s2
            e2[j] = e
            if e > emax:
                emax = e
        s_w = 0.0
        s_dw = 0.0
        for j in range(m):
            w1 = h1 * weights[j] * math.exp(e1[j] - emax)
            s_w += w1 + h2 * weights[j] * math.exp(e2[j] - emax)
            s_dw += w1 * 2.0 * a * (q - y1[j])
        log_w[i] = emax + math.log(s_w) - math.log(sd) - _LOG_SQRT_2PI
        slope[i] = s_dw / s_w
    return log_w, slope
