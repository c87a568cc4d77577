"""Kernel matrices for the layer potentials, with singular corrections.

All matrices use the interleaved unknown ordering: source node ``s`` carries
``(sigma_s, tau_s)`` in columns ``(2s, 2s+1)`` and target node ``t`` has a
value row ``2t`` and a flux (normal-derivative) row ``2t+1``.  The 2x2 block
for a target/source pair is therefore

    [[ S   D ],
     [ D*  T ]]

Interface matrices are scaled to L^2 form, ``sqrt(w_t) K sqrt(w_s)``, so that
the identity terms of the jump relations stay identities.

Self-interaction blocks only ever involve *differences* of kernels at two wave
numbers.  The wave-number independent Laplace parts (the ``1/r`` pole of
``H1`` and the hypersingular ``1/r^2`` part of ``T``) cancel identically, so
they are dropped through the regularised ``Y1 + 2/(pi x)``.  The remaining
``log r`` singularities are integrated with Gauss product weights on the
self panel and its two parametric neighbours.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import Discretization, ProxyCircle
from .quadrature import PANEL_ORDER, gauss_legendre, log_weights
from .specfun import EULER_GAMMA, bessel01, bessel_j2

_CHUNK = 1 << 21  # max target-source pairs evaluated at once


class KernelCounter:
    """Counts kernel evaluations (target/source pairs times wave numbers)."""

    def __init__(self):
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)

    def reset(self) -> None:
        self.count = 0


COUNTER = KernelCounter()


# ---------------------------------------------------------------------------
# pairwise kernels
# ---------------------------------------------------------------------------


def _single(omega, d, r, nx, ny, regular):
    """The four kernels at one wave number for separations ``d`` (r > 0)."""
    z = omega * r
    j0, j1, y0, y1r = bessel01(z)
    h0 = j0 + 1j * y0
    h1 = j1 + 1j * y1r
    if not regular:
        h1 = h1 - 2j / (np.pi * z)
    rx = np.sum(d * nx, axis=-1)
    ry = np.sum(d * ny, axis=-1)
    nn = np.sum(nx * ny, axis=-1)
    S = 0.25j * h0
    a = 0.25j * omega * h1 / r
    D = a * ry
    Ds = -a * rx
    T = 0.25j * (omega**2 * h0 - 2 * omega * h1 / r) * rx * ry / r**2 + a * nn
    return S, D, Ds, T


def _pair_geometry(tx, sx, tn, sn):
    d = tx[:, None, :] - sx[None, :, :]
    r = np.sqrt(np.sum(d * d, axis=-1))
    nx = np.broadcast_to(tn[:, None, :], d.shape)
    ny = np.broadcast_to(sn[None, :, :], d.shape)
    return d, r, nx, ny


def _interleave(S, D, Ds, T):
    nt, ns = S.shape
    out = np.empty((2 * nt, 2 * ns), dtype=complex)
    out[0::2, 0::2] = S
    out[0::2, 1::2] = D
    out[1::2, 0::2] = Ds
    out[1::2, 1::2] = T
    return out


def _chunks(nt, ns):
    step = max(1, _CHUNK // max(ns, 1))
    for a in range(0, nt, step):
        yield slice(a, min(nt, a + step))


def node_block(omega, tx, tn, sx, sn, coincident_ok: bool = False) -> np.ndarray:
    """Unweighted interleaved ``2T x 2S`` kernel block at one wave number.

    Coincident target/source pairs raise ``ValueError`` unless
    ``coincident_ok`` (then those entries are set to zero).
    """
    tx, tn, sx, sn = (np.asarray(a, float).reshape(-1, 2) for a in (tx, tn, sx, sn))
    out = np.empty((2 * len(tx), 2 * len(sx)), dtype=complex)
    for sl in _chunks(len(tx), len(sx)):
        d, r, nx, ny = _pair_geometry(tx[sl], sx, tn[sl], sn)
        zero = r == 0
        if zero.any() and not coincident_ok:
            raise ValueError("kernel evaluated at coincident points")
        rr = np.where(zero, 1.0, r)
        parts = _single(omega, d, rr, nx, ny, regular=False)
        parts = [np.where(zero, 0.0, p) for p in parts]
        out[2 * sl.start:2 * sl.stop] = _interleave(*parts)
    COUNTER.add(len(tx) * len(sx))
    return out


def difference_block(w1, w2, tx, tn, sx, sn) -> np.ndarray:
    """Interleaved block of ``K^{w1} - K^{w2}``; coincident pairs give zero."""
    tx, tn, sx, sn = (np.asarray(a, float).reshape(-1, 2) for a in (tx, tn, sx, sn))
    out = np.zeros((2 * len(tx), 2 * len(sx)), dtype=complex)
    if w1 == w2:
        return out
    for sl in _chunks(len(tx), len(sx)):
        d, r, nx, ny = _pair_geometry(tx[sl], sx, tn[sl], sn)
        zero = r == 0
        rr = np.where(zero, 1.0, r)
        p1 = _single(w1, d, rr, nx, ny, regular=True)
        p2 = _single(w2, d, rr, nx, ny, regular=True)
        parts = [np.where(zero, 0.0, a - b) for a, b in zip(p1, p2)]
        out[2 * sl.start:2 * sl.stop] = _interleave(*parts)
    COUNTER.add(2 * len(tx) * len(sx))
    return out


def log_coefficients(omega, d, r, nx, ny):
    """Coefficients ``K_L`` of ``log r`` in ``K = K_L log r + K_S`` (r > 0)."""
    z = omega * r
    j0, j1, _, _ = bessel01(z)
    j2 = bessel_j2(z, j0, j1)
    rx = np.sum(d * nx, axis=-1)
    ry = np.sum(d * ny, axis=-1)
    nn = np.sum(nx * ny, axis=-1)
    c = 1.0 / (2 * np.pi)
    SL = -c * j0
    DL = -c * omega * j1 * ry / r
    DsL = c * omega * j1 * rx / r
    TL = c * omega**2 * j2 * rx * ry / r**2 - c * omega * j1 / r * nn
    return SL, DL, DsL, TL


def diagonal_limits(omega):
    """``(K_L(x,x), K_S(x,x))`` for S, D, D*, T on a smooth curve.

    ``K_S`` excludes the wave-number independent Laplace parts, so only
    differences of these values are meaningful.
    """
    c = 1.0 / (2 * np.pi)
    lg = np.log(omega / 2.0)
    KL = (-c, 0.0, 0.0, -omega**2 / (4 * np.pi))
    KS = (0.25j - c * (lg + EULER_GAMMA), 0.0, 0.0,
          0.125j * omega**2 - omega**2 / (4 * np.pi) * lg + omega**2 * (1 - 2 * EULER_GAMMA) / (8 * np.pi))
    return KL, KS


# ---------------------------------------------------------------------------
# near-panel corrections
# ---------------------------------------------------------------------------


@lru_cache(maxsize=4096)
def _cached_log_weights(a_key: float):
    return log_weights(a_key)


def _weights_at(a: float) -> np.ndarray:
    return _cached_log_weights(round(float(a), 13))


@dataclass
class NearTable:
    """Corrections for target panel ``p`` and source panel ``p + o``.

    ``delta[p, o + 1]`` is the ``32 x 32`` interleaved L^2 correction to the
    plain (zero-on-diagonal) difference kernel, including the jump identity
    terms on the diagonal; ``src[p, o + 1]`` and ``shift[p, o + 1]`` give the
    source panel index and the copy (-1, 0, +1) that it belongs to.
    """

    delta: np.ndarray
    src: np.ndarray
    shift: np.ndarray


def near_table(disc: Discretization, w1: float, w2: float) -> NearTable:
    """Product-integration corrections for the ``w1 - w2`` difference kernels."""
    npan = disc.n_panels
    q = PANEL_ORDER
    u, gw = gauss_legendre(q)
    delta = np.zeros((npan, 3, 2 * q, 2 * q), dtype=complex)
    src = np.zeros((npan, 3), dtype=int)
    shift = np.zeros((npan, 3), dtype=int)
    d = disc.geom.period
    KL1, KS1 = diagonal_limits(w1)
    KL2, KS2 = diagonal_limits(w2)
    sw = disc.sqrt_w
    for p in range(npan):
        tsl = disc.panel_nodes(p)
        tx, tn, tt = disc.nodes[tsl], disc.normals[tsl], disc.t[tsl]
        for o in (-1, 0, 1):
            qi = p + o
            sh = 0
            if qi < 0:
                qi, sh = npan - 1, -1
            elif qi >= npan:
                qi, sh = 0, 1
            src[p, o + 1], shift[p, o + 1] = qi, sh
            ssl = disc.panel_nodes(qi)
            sx = disc.nodes[ssl] + np.array([sh * d, 0.0])
            sn = disc.normals[ssl]
            a0, b0 = disc.panels[qi]
            c0, hh = 0.5 * (a0 + b0) + sh, 0.5 * (b0 - a0)
            avals = (tt - c0) / hh  # target positions in source-panel coordinates
            dd, r, nx, ny = _pair_geometry(tx, sx, tn, sn)
            diag = r == 0
            rr = np.where(diag, 1.0, r)
            if w1 != w2:
                L1 = log_coefficients(w1, dd, rr, nx, ny)
                L2 = log_coefficients(w2, dd, rr, nx, ny)
                KL = [a - b for a, b in zip(L1, L2)]
                COUNTER.add(2 * q * q)
            else:
                KL = [np.zeros((q, q))] * 4
            corr = np.empty((q, q))
            for i, a in enumerate(avals):
                W = _weights_at(a)
                with np.errstate(divide="ignore"):
                    corr[i] = W / gw - np.log(np.abs(u - a))
            blocks = []
            for k in range(4):
                kl = np.where(diag, 0.0, KL[k])
                m = kl * np.where(diag, 0.0, corr)
                if diag.any():
                    i, j = np.nonzero(diag)
                    kld = KL1[k] - KL2[k]
                    ksd = KS1[k] - KS2[k]
                    lg = np.log(disc.speeds[ssl][j] * hh)
                    m = m.astype(complex)
                    W_over_w = np.array([_weights_at(avals[ii])[jj] / gw[jj] for ii, jj in zip(i, j)])
                    m[i, j] = ksd + kld * lg + kld * W_over_w
                blocks.append(m)
            blk = _interleave(*blocks) * np.repeat(np.outer(sw[tsl], sw[ssl]), 2, 0).repeat(2, 1)
            if o == 0:
                idx = np.arange(q)
                blk[2 * idx, 2 * idx + 1] -= 1.0
                blk[2 * idx + 1, 2 * idx] += 1.0
            delta[p, o + 1] = blk
    return NearTable(delta, src, shift)


# ---------------------------------------------------------------------------
# entry oracle for the diagonal blocks
# ---------------------------------------------------------------------------


class SelfOracle:
    """Entries of ``A^s_ii`` (shift 0) and of ``A^p_ii``/``A^m_ii`` (shift +-1).

    All are L^2-scaled difference-kernel matrices of interface ``disc`` for
    wave numbers ``w_top`` (layer above) and ``w_bot`` (layer below); the
    shifted ones use the copy translated by ``shift * d``.
    """

    def __init__(self, disc: Discretization, w_top: float, w_bot: float):
        self.disc = disc
        self.w_top = float(w_top)
        self.w_bot = float(w_bot)
        self.near = near_table(disc, w_top, w_bot)
        self.n = 2 * disc.n_nodes

    def block(self, rows, cols, shift: int = 0) -> np.ndarray:
        disc = self.disc
        rows = np.asarray(rows, dtype=int)
        cols = np.asarray(cols, dtype=int)
        tn_idx, ti = np.unique(rows // 2, return_inverse=True)
        sn_idx, si = np.unique(cols // 2, return_inverse=True)
        sx = disc.nodes[sn_idx] + np.array([shift * disc.geom.period, 0.0])
        full = difference_block(self.w_top, self.w_bot, disc.nodes[tn_idx], disc.normals[tn_idx],
                                sx, disc.normals[sn_idx])
        sw = disc.sqrt_w
        full *= np.repeat(sw[tn_idx], 2)[:, None]
        full *= np.repeat(sw[sn_idx], 2)[None, :]
        out = full[(2 * ti + rows % 2)[:, None], (2 * si + cols % 2)[None, :]]
        self._correct(out, rows, cols, shift)
        return out

    def _correct(self, out, rows, cols, shift):
        q2 = 2 * PANEL_ORDER
        rp = rows // q2
        cp = cols // q2
        nt = self.near
        col_panels = np.unique(cp)
        for p in np.unique(rp):
            for o in range(3):
                if nt.shift[p, o] != shift:
                    continue
                qsrc = nt.src[p, o]
                if qsrc not in col_panels:
                    continue
                ri = np.nonzero(rp == p)[0]
                ci = np.nonzero(cp == qsrc)[0]
                out[np.ix_(ri, ci)] += nt.delta[p, o][np.ix_(rows[ri] - q2 * p, cols[ci] - q2 * qsrc)]

    def full(self, shift: int = 0) -> np.ndarray:
        idx = np.arange(self.n)
        return self.block(idx, idx, shift)


def self_difference_block(disc: Discretization, omega_top: float, omega_bot: float) -> np.ndarray:
    """Dense L^2-scaled ``A^s_ii`` including the jump identity terms."""
    return SelfOracle(disc, omega_top, omega_bot).full(0)


# ---------------------------------------------------------------------------
# other operators
# ---------------------------------------------------------------------------


def interface_matrix(omega, tx, tn, src: Discretization, shift: int = 0,
                     row_scale=None) -> np.ndarray:
    """Weighted kernel block from interface ``src`` (copy ``shift``) to targets.

    Columns carry ``sqrt(w_s)`` (L^2 densities); rows are multiplied by
    ``row_scale`` (per target point) when given.
    """
    sx = src.nodes + np.array([shift * src.geom.period, 0.0])
    m = node_block(omega, tx, tn, sx, src.normals)
    m *= np.repeat(src.sqrt_w, 2)[None, :]
    if row_scale is not None:
        m *= np.repeat(np.asarray(row_scale, float), 2)[:, None]
    return m


def potential_matrix(kind: str, omega, targets, tnormals, src: Discretization, shift: int = 0) -> np.ndarray:
    """Single-kernel matrix (``kind`` in S, D, Dstar, T) with L^2 weights on both sides
    when targets are the nodes of ``src`` itself, plain quadrature weights otherwise."""
    m = interface_matrix(omega, targets, tnormals, src, shift)
    pick = {"S": (0, 0), "D": (0, 1), "Dstar": (1, 0), "T": (1, 1)}[kind]
    return m[pick[0]::2, pick[1]::2]


def proxy_basis_matrix(circle: ProxyCircle, omega, tx, tn=None, with_normal_derivative: bool = True) -> np.ndarray:
    """Combined-field proxy basis ``phi_j = dG/dn_j + i omega G`` at targets.

    With ``with_normal_derivative`` the rows are interleaved (value, d/dnu).
    """
    tx = np.asarray(tx, float).reshape(-1, 2)
    tn = np.zeros_like(tx) if tn is None else np.asarray(tn, float).reshape(-1, 2)
    d, r, nx, ny = _pair_geometry(tx, circle.points, tn, circle.normals)
    if np.any(r < 1e-14 * max(circle.radius, 1.0)):
        raise ValueError("target lies on the proxy circle")
    S, D, Ds, T = _single(omega, d, r, nx, ny, regular=False)
    COUNTER.add(r.size)
    val = D + 1j * omega * S
    if not with_normal_derivative:
        return val
    out = np.empty((2 * len(tx), len(circle.points)), dtype=complex)
    out[0::2] = val
    out[1::2] = T + 1j * omega * Ds
    return out


def source_proxy_matrix(centers_pts, centers_nrm, omega, tx, tn) -> np.ndarray:
    """Columns ``G(x, p)`` and ``dG/dn_p(x, p)`` for compression proxies; rows
    interleaved (value, d/dnu_x).  Returns ``2T x 2P``."""
    return node_block(omega, tx, tn, centers_pts, centers_nrm)
