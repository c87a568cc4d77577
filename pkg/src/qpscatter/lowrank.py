"""Interpolatory decompositions and proxy compression of the coupling blocks.

Every block of ``A_hat = A - A0`` (neighbour-copy blocks ``A^p_ii``, ``A^m_ii``
and the vertical couplings ``A_ij``) is factored as ``L R`` where ``L``
interpolates from skeleton rows and ``R`` *is* the corresponding rows of the
block.  Because ``R`` consists of matrix rows, the Bloch phase only enters
through scalar weights of stored phase-free row blocks.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .kernels import SelfOracle, node_block

SIDES = {"plus": 1, "minus": -1}


@dataclass(frozen=True)
class CompressionParams:
    n_max: int = 45
    n_proxy: int = 80
    near_radius_factor: float = 1.75
    tol: float = 1e-12
    recompress_lump: int = 2
    far_radius_factor: float = 0.95
    lump_threshold: int = 800

    def __post_init__(self):
        if min(self.n_max, self.n_proxy, self.recompress_lump) <= 0 or self.tol <= 0:
            raise ValueError("compression parameters must be positive")


@dataclass
class SkeletonFactor:
    """Row interpolative decomposition ``M ~= P M[J]``."""

    P: np.ndarray
    J: np.ndarray
    tol_used: float

    @property
    def k(self) -> int:
        return len(self.J)


def interpolatory_decomposition(M: np.ndarray, tol: float) -> SkeletonFactor:
    """Row ID by column-pivoted QR of ``M^T``; rank from the pivot threshold."""
    M = np.asarray(M)
    n = M.shape[0]
    if M.size == 0 or not np.any(M):
        return SkeletonFactor(np.zeros((n, 0), dtype=M.dtype), np.zeros(0, int), tol)
    _, R, piv = sla.qr(M.T, mode="economic", pivoting=True)
    dg = np.abs(np.diag(R))
    k = int(np.sum(dg > tol * dg[0]))
    J = piv[:k]
    P = np.zeros((n, k), dtype=np.result_type(M.dtype, float))
    P[J, np.arange(k)] = 1.0
    if k < n:
        T = sla.solve_triangular(R[:k, :k], R[:k, k:])
        P[piv[k:]] = T.T
    return SkeletonFactor(P, J, tol)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def circle_proxies(center, radius: float, n: int):
    th = 2 * np.pi * np.arange(n) / n
    nrm = np.stack([np.cos(th), np.sin(th)], axis=1)
    return np.asarray(center, float) + radius * nrm, nrm, np.sqrt(2 * np.pi * radius / n)


def proxy_columns(omegas, tx, tn, row_sw, pts, nrm, col_w) -> np.ndarray:
    """``[G, dG/dn_p]`` proxy columns at each wave number, rows interleaved."""
    blocks = [node_block(w, tx, tn, pts, nrm) for w in omegas]
    m = np.hstack(blocks) * col_w
    return m * np.repeat(row_sw, 2)[:, None]


def node_dofs(nodes: np.ndarray) -> np.ndarray:
    nodes = np.asarray(nodes, int)
    return np.stack([2 * nodes, 2 * nodes + 1], axis=1).ravel()


def dyadic_segments(n: int, side: int, n_max: int):
    """Node ranges halving toward the end facing the copy (``side=+1``: high end)."""
    segs = []
    lo, hi = 0, n
    while hi - lo >= n_max:
        mid = (lo + hi) // 2
        if side > 0:
            segs.append((lo, mid))
            lo = mid
        else:
            segs.append((mid, hi))
            hi = mid
    segs.append((lo, hi))
    return segs  # the last one touches the copy


def _recompress(L0: np.ndarray, J0: np.ndarray, rows_fn, tol: float, groups=None):
    """ID of the skeleton rows; returns ``(L, J, R_rows)``."""
    if groups is None:
        groups = [np.arange(len(J0))]
    Ls, Js, Rs = [], [], []
    for g in groups:
        Rg = rows_fn(J0[g])
        f = interpolatory_decomposition(Rg, tol)
        Ls.append(L0[:, g] @ f.P)
        Js.append(J0[g][f.J])
        Rs.append(Rg[f.J])
    return np.hstack(Ls), np.concatenate(Js), np.vstack(Rs)


# ---------------------------------------------------------------------------
# neighbour-copy blocks
# ---------------------------------------------------------------------------


@dataclass
class NeighborFactor:
    """``A^{side}_ii ~= L R`` with ``R = A^{side}_ii[J, :]`` (phase free)."""

    side: int
    L: np.ndarray
    J: np.ndarray
    R: np.ndarray
    k_orig: int
    n_segments: int

    @property
    def k(self) -> int:
        return len(self.J)


def compress_neighbor(oracle: SelfOracle, side: str | int, params: CompressionParams | None = None) -> NeighborFactor:
    """Dyadic proxy compression of the ``side`` copy interaction of one interface."""
    params = params or CompressionParams()
    s = SIDES.get(side, side) if isinstance(side, str) else int(side)
    disc = oracle.disc
    N = disc.n_nodes
    d = disc.geom.period
    omegas = (oracle.w_top, oracle.w_bot)
    copy_pts = disc.nodes + np.array([s * d, 0.0])
    segs = dyadic_segments(N, s, params.n_max)
    all_dofs = np.arange(2 * N)
    blocks, J0 = [], []
    for k, (lo, hi) in enumerate(segs):
        idx = np.arange(lo, hi)
        rows = node_dofs(idx)
        tx, tn = disc.nodes[idx], disc.normals[idx]
        ctr = 0.5 * (tx.min(axis=0) + tx.max(axis=0))
        circ = np.max(np.linalg.norm(tx - ctr, axis=1))
        touching = k == len(segs) - 1
        if not touching:
            rad = params.far_radius_factor * np.min(np.linalg.norm(copy_pts - ctr, axis=1))
            if rad <= 1.02 * circ:
                touching = True  # cannot separate: treat with explicit columns
        if touching:
            rad = params.near_radius_factor * max(circ, 1e-300)
            near_nodes = np.nonzero(np.linalg.norm(copy_pts - ctr, axis=1) <= rad * 1.0001)[0]
            # include the panels that carry singular corrections
            nt = oracle.near
            for p in np.unique(idx // 16):
                for o in range(3):
                    if nt.shift[p, o] == s:
                        q = nt.src[p, o]
                        near_nodes = np.union1d(near_nodes, np.arange(16 * q, 16 * q + 16))
            mats = [oracle.block(rows, node_dofs(near_nodes), s)] if near_nodes.size else []
        else:
            mats = []
        pts, nrm, cw = circle_proxies(ctr, rad, params.n_proxy)
        mats.append(proxy_columns(omegas, tx, tn, disc.sqrt_w[idx], pts, nrm, cw))
        f = interpolatory_decomposition(np.hstack(mats), params.tol)
        blocks.append((rows, f.P))
        J0.append(rows[f.J])
    J0 = np.concatenate(J0)
    L0 = np.zeros((2 * N, len(J0)), dtype=complex)
    c0 = 0
    for rows, P in blocks:
        L0[rows, c0:c0 + P.shape[1]] = P
        c0 += P.shape[1]
    k_orig = len(J0)

    def rows_fn(J):
        return oracle.block(J, all_dofs, s)

    groups = None
    if k_orig > params.lump_threshold:
        groups, start = [], 0
        sizes = [b[1].shape[1] for b in blocks]
        for g0 in range(0, len(sizes), params.recompress_lump):
            n = sum(sizes[g0:g0 + params.recompress_lump])
            groups.append(np.arange(start, start + n))
            start += n
    L, J, R = _recompress(L0, J0, rows_fn, params.tol, groups)
    return NeighborFactor(s, L, J, R, k_orig, len(segs))


# ---------------------------------------------------------------------------
# vertical couplings
# ---------------------------------------------------------------------------


@dataclass
class VerticalFactor:
    """``A_ij(alpha) ~= L (R0 + alpha Rp + alpha^-1 Rm)`` with ``R* = A*_ij[J, :]``."""

    L: np.ndarray
    J: np.ndarray
    R0: np.ndarray
    Rp: np.ndarray
    Rm: np.ndarray
    k_orig: int
    dense_fallback: bool = False

    @property
    def k(self) -> int:
        return len(self.J)

    def R(self, alpha: complex) -> np.ndarray:
        return self.R0 + alpha * self.Rp + self.Rm / alpha


def shielding_ellipse(tgt_nodes, src_nodes_all, a: float):
    """Ellipse ``((x/a)^2 + ((y - yc)/b)^2 = 1)`` separating targets from sources.

    Returns ``(yc, b)`` or ``None`` if no such ellipse exists.
    """
    yc = 0.5 * (tgt_nodes[:, 1].min() + tgt_nodes[:, 1].max())

    def scaled(p):
        q = 1.0 - (p[:, 0] / a) ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(q > 0, np.abs(p[:, 1] - yc) / np.sqrt(np.maximum(q, 1e-300)), np.inf)

    b_in = np.max(scaled(tgt_nodes))
    if not np.isfinite(b_in):
        return None
    b_out = np.min(scaled(src_nodes_all))
    if not b_out > 1.05 * b_in:
        return None
    return yc, 0.5 * (b_in + b_out)


def compress_vertical(voracle, params: CompressionParams | None = None,
                      horizontal_semi_axis: float = 0.75) -> VerticalFactor:
    """Proxy-ellipse compression of ``A_ij`` (targets on interface ``i``)."""
    params = params or CompressionParams()
    t, s = voracle.tgt, voracle.src
    d = t.geom.period
    a = horizontal_semi_axis * d
    src_all = np.vstack([s.nodes + np.array([k * d, 0.0]) for k in (-1, 0, 1)])
    ell = shielding_ellipse(t.nodes, src_all, a)
    cols = np.arange(2 * s.n_nodes)
    rows_all = np.arange(2 * t.n_nodes)

    def rows_fn(J):
        return np.hstack([voracle.block(J, cols, sh) for sh in (0, 1, -1)])

    if ell is None:
        warnings.warn("interfaces too close for a shielding ellipse; compressing the dense block",
                      RuntimeWarning, stacklevel=2)
        f = interpolatory_decomposition(rows_fn(rows_all), params.tol)
        Rf = rows_fn(rows_all[f.J])
        n2 = 2 * s.n_nodes
        return VerticalFactor(f.P, rows_all[f.J], Rf[:, :n2], Rf[:, n2:2 * n2], Rf[:, 2 * n2:], f.k, True)
    yc, b = ell
    th = 2 * np.pi * np.arange(params.n_proxy) / params.n_proxy
    pts = np.stack([a * np.cos(th), yc + b * np.sin(th)], axis=1)
    nrm = np.stack([b * np.cos(th), a * np.sin(th)], axis=1)
    speed = np.linalg.norm(nrm, axis=1)
    nrm /= speed[:, None]
    cw = np.repeat(np.sqrt(2 * np.pi * speed / params.n_proxy), 2)[None, :]
    Pm = proxy_columns((voracle.omega,), t.nodes, t.normals, t.sqrt_w, pts, nrm, cw)
    f = interpolatory_decomposition(Pm, params.tol)
    L, J, R = _recompress(f.P, rows_all[f.J], rows_fn, params.tol)
    n2 = 2 * s.n_nodes
    return VerticalFactor(L, J, R[:, :n2], R[:, n2:2 * n2], R[:, 2 * n2:], f.k)


# ---------------------------------------------------------------------------
# global factors
# ---------------------------------------------------------------------------


@dataclass
class LowRankFactors:
    """All factors of ``A_hat``; per interface ``i`` the column blocks of ``L_i``
    are ordered ``[L_{i,i-1}, L^p_ii, L^m_ii, L_{i,i+1}]``."""

    plus: list
    minus: list
    vertical: dict  # (i, j) -> VerticalFactor

    @property
    def n_interfaces(self) -> int:
        return len(self.plus)

    def parts(self, i: int):
        """``[(name, L, k)]`` for interface ``i`` in the column order of ``L_i``."""
        out = []
        if (i, i - 1) in self.vertical:
            out.append(("lower", self.vertical[(i, i - 1)]))
        out.append(("plus", self.plus[i]))
        out.append(("minus", self.minus[i]))
        if (i, i + 1) in self.vertical:
            out.append(("upper", self.vertical[(i, i + 1)]))
        return out

    def L_block(self, i: int) -> np.ndarray:
        return np.hstack([f.L for _, f in self.parts(i)])

    def ranks(self) -> dict:
        r = {}
        for i in range(self.n_interfaces):
            r[f"pm_{i}"] = self.plus[i].k + self.minus[i].k
        for (i, j), f in self.vertical.items():
            r[f"v_{i}_{j}"] = f.k
        return r

    def block_sizes(self):
        return [sum(f.k for _, f in self.parts(i)) for i in range(self.n_interfaces)]


def R_rows(factors: LowRankFactors, i: int, alpha: complex):
    """Row blocks of ``R(alpha)`` for interface ``i``: list of ``(col_interface, matrix, row_slice)``."""
    out = []
    r0 = 0
    for name, f in factors.parts(i):
        k = f.k
        sl = slice(r0, r0 + k)
        if name == "lower":
            out.append((i - 1, f.R(alpha), sl))
        elif name == "plus":
            out.append((i, alpha * f.R, sl))
        elif name == "minus":
            out.append((i, f.R / alpha, sl))
        else:
            out.append((i + 1, f.R(alpha), sl))
        r0 += k
    return out


def assemble_global_LR(factors: LowRankFactors, alpha: complex, sizes):
    """Dense ``(L, R(alpha))`` with ``A_hat(alpha) ~= L R(alpha)`` (tests / small problems)."""
    off = np.concatenate([[0], np.cumsum(sizes)])
    ks = factors.block_sizes()
    koff = np.concatenate([[0], np.cumsum(ks)])
    L = np.zeros((off[-1], koff[-1]), dtype=complex)
    R = np.zeros((koff[-1], off[-1]), dtype=complex)
    for i in range(factors.n_interfaces):
        L[off[i]:off[i + 1], koff[i]:koff[i + 1]] = factors.L_block(i)
        for j, M, sl in R_rows(factors, i, alpha):
            R[koff[i] + sl.start:koff[i] + sl.stop, off[j]:off[j + 1]] = M
    return L, R, {"k_total": int(koff[-1]), "block_sizes": ks}
