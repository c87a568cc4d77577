"""Bessel/Hankel functions of orders 0 and 1 and the 2-D Helmholtz kernels.

Three evaluation regimes are used for the Bessel functions:

* ``x < 2``: ascending power series (Neumann form for ``Y0``/``Y1``);
* ``2 <= x < 25``: Miller backward recurrence for ``J_n`` normalised by
  ``J0 + 2 sum J_2k = 1``, with ``Y0``/``Y1`` from the Neumann series;
* ``x >= 25``: Hankel asymptotic expansion.

All routines are vectorised over numpy arrays and pure.
"""
from __future__ import annotations

import numpy as np

EULER_GAMMA = 0.57721566490153286061
_SERIES_CUT = 2.0
_ASYMP_CUT = 25.0
_TWO_OVER_PI = 2.0 / np.pi


def _check_domain(x):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("Bessel Y and Hankel functions need x > 0")
    return x


def _series(x):
    q = 0.25 * x * x
    lg = np.log(0.5 * x) + EULER_GAMMA
    j0 = np.zeros_like(x)
    j1s = np.zeros_like(x)
    y0s = np.zeros_like(x)
    y1s = np.zeros_like(x)
    term = np.ones_like(x)  # q^k / (k!)^2
    hk = 0.0
    for k in range(30):
        if k > 0:
            term = term * (-q) / (k * k)
            hk += 1.0 / k
        hk1 = hk + 1.0 / (k + 1)
        j0 += term
        t1 = term / (k + 1)  # (-q)^k / (k! (k+1)!)
        j1s += t1
        y0s += -hk * term
        y1s += (hk + hk1) * t1
    j1 = 0.5 * x * j1s
    y0 = _TWO_OVER_PI * (lg * j0 + y0s)
    # regular part of Y1, i.e. Y1 + 2/(pi x)
    y1r = _TWO_OVER_PI * (np.log(0.5 * x) * j1) - (0.5 * x / np.pi) * (y1s - 2 * EULER_GAMMA * j1s)
    return j0, j1, y0, y1r


def _miller(x):
    nstart = 2 * int((float(x.max()) + 40.0) // 2) + 2
    jp1 = np.zeros_like(x)
    jk = np.full_like(x, 1e-300)
    norm = np.zeros_like(x)
    s0 = np.zeros_like(x)  # sum_{k>=1} (-1)^k J_2k / k
    s1 = np.zeros_like(x)  # sum_{k>=1} (-1)^k (J_{2k-1} - J_{2k+1}) / k
    j1 = None
    # jk holds J_n, jp1 holds J_{n+1}; downward: J_{n-1} = 2n/x J_n - J_{n+1}
    n = nstart
    while n > 0:
        jm1 = (2.0 * n / x) * jk - jp1
        jp1, jk = jk, jm1
        n -= 1
        # jk is now J_n
        if n % 2 == 0 and n > 0:
            k = n // 2
            norm += 2.0 * jk
            s0 += (-1) ** k * jk / k
        if n % 2 == 1:
            # J_n with n = 2k+1 contributes to term k (as J_{2k+1}) and k+1 (as J_{2k-1})
            kp = (n + 1) // 2  # as J_{2kp-1}
            km = (n - 1) // 2  # as J_{2km+1}
            s1 += (-1) ** kp * jk / kp
            if km >= 1:
                s1 -= (-1) ** km * jk / km
            if n == 1:
                j1 = jk.copy()
        big = np.abs(jk) > 1e250
        if np.any(big):
            scale = np.where(big, 1e-250, 1.0)
            jk = jk * scale
            jp1 = jp1 * scale
            norm = norm * scale
            s0 = s0 * scale
            s1 = s1 * scale
            if j1 is not None:
                j1 = j1 * scale
    j0u = jk
    norm = norm + j0u
    j0 = j0u / norm
    j1 = j1 / norm
    s0 = s0 / norm
    s1 = s1 / norm
    lg = np.log(0.5 * x) + EULER_GAMMA
    y0 = _TWO_OVER_PI * lg * j0 - 2 * _TWO_OVER_PI * s0
    y1 = -_TWO_OVER_PI * j0 / x + _TWO_OVER_PI * lg * j1 + _TWO_OVER_PI * s1
    return j0, j1, y0, y1 + _TWO_OVER_PI / x


def _asymptotic(x):
    out = []
    for nu in (0, 1):
        mu = 4.0 * nu * nu
        total = np.ones(x.shape, dtype=complex)
        ak = np.ones_like(x)
        for k in range(1, 40):
            ak = ak * (mu - (2 * k - 1) ** 2) / (8.0 * k * x)
            total = total + (1j ** k) * ak
        h = np.sqrt(_TWO_OVER_PI / x) * np.exp(1j * x) * np.exp(-1j * (0.5 * nu + 0.25) * np.pi) * total
        out.append(h)
    h0, h1 = out
    return h0.real, h1.real, h0.imag, h1.imag + _TWO_OVER_PI / x


def bessel01(x):
    """Return ``(J0, J1, Y0, Y1reg)`` at ``x > 0`` where ``Y1reg = Y1 + 2/(pi x)``.

    The regularised ``Y1`` is returned because the ``2/(pi x)`` pole is
    independent of the wave number and cancels in every difference kernel.
    """
    x = _check_domain(x)
    shape = x.shape
    x = x.ravel()
    j0 = np.empty_like(x)
    j1 = np.empty_like(x)
    y0 = np.empty_like(x)
    y1r = np.empty_like(x)
    for mask, fn in (
        (x < _SERIES_CUT, _series),
        ((x >= _SERIES_CUT) & (x < _ASYMP_CUT), _miller),
        (x >= _ASYMP_CUT, _asymptotic),
    ):
        if np.any(mask):
            a, b, c, d = fn(x[mask])
            j0[mask], j1[mask], y0[mask], y1r[mask] = a, b, c, d
    return tuple(v.reshape(shape) for v in (j0, j1, y0, y1r))


def hankel01(x):
    """Hankel functions of the first kind, ``(H0(x), H1(x))``, for ``x > 0``."""
    j0, j1, y0, y1r = bessel01(x)
    x = np.asarray(x, dtype=float)
    return j0 + 1j * y0, j1 + 1j * (y1r - _TWO_OVER_PI / x)


def bessel_j2(x, j0=None, j1=None):
    """``J2(x)``; series below 0.5 to avoid the ``2 J1/x - J0`` cancellation."""
    x = np.asarray(x, dtype=float)
    if j0 is None or j1 is None:
        j0, j1, _, _ = bessel01(x)
    small = x < 0.5
    xs = np.where(small, x, 1.0)
    q = 0.25 * xs * xs
    ser = np.zeros_like(xs)
    term = 0.125 * xs * xs
    for k in range(10):
        if k > 0:
            term = term * (-q) / (k * (k + 2))
        ser = ser + term
    xl = np.where(small, 1.0, x)
    return np.where(small, ser, 2.0 * j1 / xl - j0)


def greens(omega, x, y):
    """Free-space Helmholtz Green's function ``(i/4) H0(omega |x - y|)``."""
    r = np.linalg.norm(np.asarray(x, float) - np.asarray(y, float), axis=-1)
    if np.any(r == 0):
        raise ValueError("Green's function evaluated at coincident points")
    h0, _ = hankel01(omega * r)
    return 0.25j * h0


def kernel_values(kind, omega, x, y, nu_x=None, nu_y=None):
    """Single-frequency kernel value for ``kind`` in ``{"S", "D", "Dstar", "T"}``.

    ``D`` differentiates along ``nu_y`` (source), ``Dstar`` along ``nu_x``
    (target), ``T`` along both.  Inputs broadcast over leading axes.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    d = x - y
    r = np.sqrt(np.sum(d * d, axis=-1))
    if np.any(r == 0):
        raise ValueError("kernel evaluated at coincident points")
    h0, h1 = hankel01(omega * r)
    if kind == "S":
        return 0.25j * h0
    if kind == "D":
        return 0.25j * omega * h1 * np.sum(d * nu_y, axis=-1) / r
    if kind == "Dstar":
        return -0.25j * omega * h1 * np.sum(d * nu_x, axis=-1) / r
    if kind == "T":
        rx = np.sum(d * nu_x, axis=-1)
        ry = np.sum(d * nu_y, axis=-1)
        nn = np.sum(np.asarray(nu_x) * np.asarray(nu_y), axis=-1)
        return 0.25j * (omega**2 * h0 - 2 * omega * h1 / r) * rx * ry / r**2 + 0.25j * omega * h1 / r * nn
    raise ValueError(f"unknown kernel kind {kind!r}")
