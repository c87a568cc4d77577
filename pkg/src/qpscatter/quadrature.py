"""Gauss--Legendre panels and product-integration weights for log singularities.

For a panel mapped to ``u in [-1, 1]`` and a singular point ``a`` (inside or
outside the panel) the weights ``W_j(a)`` satisfy

    sum_j W_j(a) f(u_j) = int_{-1}^{1} f(u) log|u - a| du

exactly for polynomials ``f`` of degree < n.  They are built from the
Legendre moments ``m_k(a) = int P_k(u) log|u - a| du`` which have the closed
form ``2 (Q_{k+1}(a) - Q_{k-1}(a)) / (2k + 1)`` in terms of Legendre functions
of the second kind.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre

PANEL_ORDER = 16


@lru_cache(maxsize=8)
def gauss_legendre(n: int = PANEL_ORDER):
    """Nodes and weights of the ``n``-point Gauss--Legendre rule on [-1, 1]."""
    u, w = legendre.leggauss(n)
    u.setflags(write=False)
    w.setflags(write=False)
    return u, w


def _legendre_q(a: float, nmax: int) -> np.ndarray:
    """``Q_0 .. Q_nmax`` at real ``a`` with ``|a| != 1``.

    Inside (-1, 1) these are the Ferrers functions, obtained by the (stable)
    forward recurrence.  Outside, ``Q_n`` decays with ``n`` and is computed by
    Miller's backward recurrence normalised against the closed form ``Q_0``.
    """
    q = np.empty(nmax + 1)
    if abs(a) < 1.0:
        q[0] = 0.5 * np.log((1.0 + a) / (1.0 - a))
        if nmax >= 1:
            q[1] = a * q[0] - 1.0
        for n in range(1, nmax):
            q[n + 1] = ((2 * n + 1) * a * q[n] - n * q[n - 1]) / (n + 1)
        return q
    x = abs(a)
    q0 = 0.5 * np.log((x + 1.0) / (x - 1.0))
    rho = x - np.sqrt(x * x - 1.0)  # asymptotic ratio Q_{n+1}/Q_n
    extra = int(np.ceil(40.0 / max(-np.log10(rho), 1e-3))) + 20
    ntop = nmax + min(extra, 200000)
    qp1, qn = 0.0, 1e-300
    vals = np.empty(nmax + 1)
    for n in range(ntop, 0, -1):
        # (n+1) Q_{n+1} = (2n+1) x Q_n - n Q_{n-1}  ->  Q_{n-1}
        qm1 = ((2 * n + 1) * x * qn - (n + 1) * qp1) / n
        qp1, qn = qn, qm1
        if n - 1 <= nmax:
            vals[n - 1] = qn
        if abs(qn) > 1e250:
            qp1 *= 1e-250
            qn *= 1e-250
            vals[max(n - 1, 0):] *= 1e-250
    vals *= q0 / vals[0]
    if a < 0:
        vals *= (-1.0) ** (np.arange(nmax + 1) + 1)
    return vals


def log_moments(a: float, n: int = PANEL_ORDER) -> np.ndarray:
    """``m_k(a) = int_{-1}^{1} P_k(u) log|u - a| du`` for ``k = 0 .. n-1``."""
    a = float(a)
    m = np.empty(n)

    def xlogx(t):
        return 0.0 if t == 0.0 else t * np.log(abs(t))

    m[0] = xlogx(1.0 - a) + xlogx(1.0 + a) - 2.0
    if n == 1:
        return m
    if abs(abs(a) - 1.0) < 1e-14:
        # Q_n is log-singular at +-1 but the differences stay finite.
        a = np.sign(a) * (1.0 - 1e-14)
    q = _legendre_q(a, n)
    k = np.arange(1, n)
    m[1:] = 2.0 * (q[k + 1] - q[k - 1]) / (2 * k + 1)
    return m


def log_weights(a: float, n: int = PANEL_ORDER) -> np.ndarray:
    """Product weights ``W_j(a)`` on the ``n``-point Gauss panel."""
    u, w = gauss_legendre(n)
    m = log_moments(a, n)
    k = np.arange(n)
    pk = legendre.legvander(u, n - 1)  # (n, n): P_k(u_j)
    coef = (2 * k + 1) / 2.0 * m
    return w * (pk @ coef)
