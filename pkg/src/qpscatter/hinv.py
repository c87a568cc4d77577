"""Fast inversion of the self-interaction blocks ``A^s_ii``.

Hierarchical inverses use recursive skeletonization on a binary tree of
contiguous node ranges.  Each box is compressed with a joint row/column
interpolatory decomposition of its interactions with the rest of the active
degrees of freedom (near ones explicitly, far ones through a proxy circle),
after which the telescoping inverse formula

    A^-1 = E (A_parent + D_hat)^-1 F + G

is applied level by level.  Because the unknowns are interleaved (value and
flux rows of one node are adjacent) a single skeleton serves both rows and
columns.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .lowrank import circle_proxies, interpolatory_decomposition, node_dofs, proxy_columns

DENSE_THRESHOLD = 512
SATURATION = 0.9


class MatrixOracle:
    """Entry oracle around an explicit matrix (no geometry available)."""

    def __init__(self, A: np.ndarray):
        A = np.asarray(A)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("block must be square")
        self.A = A
        self.n = A.shape[0]
        self.disc = None

    def block(self, rows, cols, shift: int = 0):
        return self.A[np.ix_(np.asarray(rows, int), np.asarray(cols, int))]


@dataclass
class _Box:
    idx: np.ndarray      # active DOFs (global)
    J: np.ndarray        # skeleton DOFs (global, subset of idx)
    E: np.ndarray
    F: np.ndarray
    G: np.ndarray


@dataclass
class BlockInverse:
    """Inverse of one square block, dense (LU) or hierarchical."""

    n: int
    method: str
    tol: float
    leaf_size: int
    lu: tuple | None = None
    levels: list = field(default_factory=list)  # leaf level first
    root_idx: np.ndarray | None = None
    root_lu: tuple | None = None
    ranks: list = field(default_factory=list)

    def apply(self, X: np.ndarray) -> np.ndarray:
        return apply_inverse(self, X)


def _as_oracle(A_s):
    if hasattr(A_s, "block") and hasattr(A_s, "n"):
        return A_s
    return MatrixOracle(A_s)


def build_block_inverse(A_s, method: str = "auto", tol: float = 1e-12, leaf_size: int = 128,
                        n_proxy: int = 80, proxy_factor: float = 1.5,
                        dense_threshold: int = DENSE_THRESHOLD) -> BlockInverse:
    """Factor ``A_s`` (matrix or entry oracle) for fast repeated solves.

    ``method="auto"`` uses a dense LU when the block has at most
    ``dense_threshold`` nodes (``2 * dense_threshold`` unknowns).
    """
    oracle = _as_oracle(A_s)
    n = oracle.n
    if method not in ("auto", "dense", "hierarchical"):
        raise ValueError(f"unknown method {method!r}")
    if method == "auto":
        method = "dense" if n <= 2 * dense_threshold else "hierarchical"
    if method == "hierarchical" and n > leaf_size:
        inv = _build_hierarchical(oracle, tol, leaf_size, n_proxy, proxy_factor)
        if inv is not None:
            return inv
        warnings.warn("hierarchical compression ineffective; using a dense factorization",
                      RuntimeWarning, stacklevel=2)
    full = oracle.block(np.arange(n), np.arange(n))
    return BlockInverse(n, "dense", tol, leaf_size, lu=sla.lu_factor(full, check_finite=False))


def _box_geometry(disc, idx):
    nodes = np.unique(idx // 2)
    pts = disc.nodes[nodes]
    ctr = 0.5 * (pts.min(axis=0) + pts.max(axis=0))
    return ctr, float(np.max(np.linalg.norm(pts - ctr, axis=1)))


def _proxy_rows(oracle, idx, ctr, radius, n_proxy):
    disc = oracle.disc
    un, inv = np.unique(idx // 2, return_inverse=True)
    pts, nrm, cw = circle_proxies(ctr, radius, n_proxy)
    m = proxy_columns((oracle.w_top, oracle.w_bot), disc.nodes[un], disc.normals[un],
                      disc.sqrt_w[un], pts, nrm, cw)
    return m[2 * inv + idx % 2]


def _pair_closure(I, P, jloc):
    """Extend a skeleton so that it keeps both unknowns of every selected node.

    The jump terms couple the value row of a node with its flux unknown and
    vice versa; skeletons holding only half of a node lose that identity
    structure and give badly conditioned reduced matrices.
    """
    nodes = np.unique(I[jloc] // 2)
    keep = np.nonzero(np.isin(I // 2, nodes))[0]
    if len(keep) == len(jloc):
        return P, I[jloc]
    Pn = np.zeros((len(I), len(keep)), dtype=P.dtype)
    pos = {j: c for c, j in enumerate(keep)}
    for c, j in enumerate(jloc):
        Pn[:, pos[j]] = P[:, c]
    extra = np.setdiff1d(keep, jloc)
    Pn[extra] = 0.0
    Pn[extra, [pos[j] for j in extra]] = 1.0
    return Pn, I[keep]


def _build_hierarchical(oracle, tol, leaf_size, n_proxy, proxy_factor):
    n = oracle.n
    n_nodes = n // 2
    n_leaves = 1
    while -(-n // n_leaves) > leaf_size:
        n_leaves *= 2
    ranges = np.array_split(np.arange(n_nodes), n_leaves)
    active = [node_dofs(r) for r in ranges]
    geo = [(_box_geometry(oracle.disc, a) if oracle.disc is not None else None) for a in active]
    Dm = [oracle.block(a, a) for a in active]
    levels, ranks = [], []
    while len(active) > 1:
        boxes = []
        nb = len(active)
        for b in range(nb):
            I = active[b]
            others = [c for c in range(nb) if c != b]
            if geo[b] is None:
                near = np.concatenate([active[c] for c in others])
                far_mat = None
            else:
                ctr, rad = geo[b]
                prad = proxy_factor * max(rad, 1e-14)
                near_list = []
                for c in others:
                    if abs(c - b) == 1:
                        near_list.append(active[c])
                        continue
                    pts = oracle.disc.nodes[active[c] // 2]
                    inside = np.linalg.norm(pts - ctr, axis=1) <= prad
                    if inside.any():
                        near_list.append(active[c][inside])
                near = np.concatenate(near_list) if near_list else np.zeros(0, int)
                far_mat = _proxy_rows(oracle, I, ctr, prad, n_proxy)
            mats = []
            if near.size:
                mats += [oracle.block(I, near), oracle.block(near, I).T]
            if far_mat is not None:
                mats.append(far_mat)
            f = interpolatory_decomposition(np.hstack(mats), tol)
            P, J = _pair_closure(I, f.P, f.J)
            Dinv = np.linalg.inv(Dm[b])
            Dh = np.linalg.inv(P.T @ Dinv @ P)
            E = Dinv @ P @ Dh
            F = Dh @ P.T @ Dinv
            G = Dinv - E @ (P.T @ Dinv)
            boxes.append((_Box(I, J, E, F, G), Dh))
        ranks.append([len(bx.J) for bx, _ in boxes])
        levels.append([bx for bx, _ in boxes])
        new_active, new_D, new_geo = [], [], []
        for c in range(0, nb, 2):
            (ba, Da), (bb, Db) = boxes[c], boxes[c + 1]
            Ja, Jb = ba.J, bb.J
            D = np.block([[Da, oracle.block(Ja, Jb)], [oracle.block(Jb, Ja), Db]])
            new_active.append(np.concatenate([Ja, Jb]))
            new_D.append(D)
            if oracle.disc is not None:
                r = np.concatenate([ranges[c], ranges[c + 1]])
                new_geo.append(_box_geometry(oracle.disc, node_dofs(r)))
            else:
                new_geo.append(None)
        ranges = [np.concatenate([ranges[c], ranges[c + 1]]) for c in range(0, nb, 2)]
        active, Dm, geo = new_active, new_D, new_geo
    if len(active[0]) > SATURATION * n:
        return None
    return BlockInverse(n, "hierarchical", tol, leaf_size, levels=levels, root_idx=active[0],
                        root_lu=sla.lu_factor(Dm[0], check_finite=False), ranks=ranks)


def apply_inverse(inv: BlockInverse, X: np.ndarray) -> np.ndarray:
    """Return ``A_s^{-1} X`` for a vector or a matrix of right-hand sides."""
    X = np.asarray(X)
    if X.shape[0] != inv.n:
        raise ValueError(f"expected {inv.n} rows, got {X.shape[0]}")
    if inv.method == "dense":
        return sla.lu_solve(inv.lu, X.astype(complex, copy=False), check_finite=False)
    v = np.array(X, dtype=complex)
    stash = []
    for level in inv.levels:
        gs = []
        for bx in level:
            u = v[bx.idx]
            gs.append(bx.G @ u)
            v[bx.J] = bx.F @ u
        stash.append(gs)
    x = np.zeros_like(v)
    x[inv.root_idx] = sla.lu_solve(inv.root_lu, v[inv.root_idx], check_finite=False)
    for level, gs in zip(reversed(inv.levels), reversed(stash)):
        for bx, g in zip(level, gs):
            x[bx.idx] = bx.E @ x[bx.J] + g
    return x
