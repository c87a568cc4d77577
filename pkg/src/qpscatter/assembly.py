"""Blocks of the rectangular unit-cell system

    [ A  B  0 ] [sigma]   [f]
    [ C  Q  0 ] [  c  ] = [0]
    [ Z  V  W ] [  a  ]   [0]

Every block is built from phase-free pieces; the Bloch phase ``alpha`` only
enters through scalar weights:

* ``A_ii(alpha)  = A^s_ii + alpha A^p_ii + alpha^-1 A^m_ii``
* ``A_ij(alpha)  = A0_ij + alpha Ap_ij + alpha^-1 Am_ij`` for ``|i - j| = 1``
* ``C(alpha)     = alpha^-2 C^R - alpha C^L``
* ``Q(alpha)     = alpha^-1 Q^R - Q^L``
* ``Z(alpha)     = Z0 + alpha Zp + alpha^-1 Zm``

Indices are 0-based: interface ``i`` separates layer ``i`` (above, wave
number ``omega[i]``) from layer ``i + 1`` (below).  Unknowns are ordered
``[sigma_hat (interleaved per node, interface by interface), c (P per layer),
a^U, a^D]``; rows are ``[interface equations, wall equations per layer, top
rows, bottom rows]`` with (value, derivative) interleaved per collocation
point.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Discretization, IncidentWave, LayerStack, UnitCellLayout
from .kernels import SelfOracle, interface_matrix, node_block, proxy_basis_matrix

SHIFTS = (0, 1, -1)


def phase_weight(alpha: complex, shift: int) -> complex:
    return alpha ** shift


# ---------------------------------------------------------------------------
# layout of unknowns
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UnknownLayout:
    """Offsets of ``sigma_hat``, ``c`` and ``a`` in the unknown vector."""

    n_nodes: tuple
    P: int
    n_rb: int  # Rayleigh--Bloch orders per side

    @property
    def n_interfaces(self) -> int:
        return len(self.n_nodes)

    @property
    def n_layers(self) -> int:
        return len(self.n_nodes) + 1

    @property
    def sigma_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([2 * n for n in self.n_nodes])])

    @property
    def n_sigma(self) -> int:
        return int(self.sigma_offsets[-1])

    @property
    def n_c(self) -> int:
        return self.P * self.n_layers

    @property
    def n_a(self) -> int:
        return 2 * self.n_rb

    @property
    def n_total(self) -> int:
        return self.n_sigma + self.n_c + self.n_a

    def sigma_slice(self, i: int) -> slice:
        o = self.sigma_offsets
        return slice(int(o[i]), int(o[i + 1]))

    def c_slice(self, l: int) -> slice:
        return slice(l * self.P, (l + 1) * self.P)

    def dof(self, i: int, n: int, which: str = "sigma") -> int:
        """Position of ``sigma_{i,n}`` or ``tau_{i,n}`` in ``sigma_hat``."""
        return int(self.sigma_offsets[i]) + 2 * n + (0 if which == "sigma" else 1)


# ---------------------------------------------------------------------------
# A blocks
# ---------------------------------------------------------------------------


class VerticalOracle:
    """Entries of the phase-free pieces of ``A_ij``, ``|i - j| = 1``.

    ``A_{i,i+1}`` carries ``-K^{omega[i+1]}`` and ``A_{i,i-1}`` carries
    ``+K^{omega[i]}`` from the sources on interface ``j``.
    """

    def __init__(self, tgt: Discretization, src: Discretization, omega: float, sign: float):
        self.tgt, self.src = tgt, src
        self.omega, self.sign = float(omega), float(sign)

    def block(self, rows, cols, shift: int = 0) -> np.ndarray:
        rows = np.asarray(rows, int)
        cols = np.asarray(cols, int)
        tn_idx, ti = np.unique(rows // 2, return_inverse=True)
        sn_idx, si = np.unique(cols // 2, return_inverse=True)
        t, s = self.tgt, self.src
        sx = s.nodes[sn_idx] + np.array([shift * s.geom.period, 0.0])
        m = node_block(self.omega, t.nodes[tn_idx], t.normals[tn_idx], sx, s.normals[sn_idx])
        m *= self.sign * np.repeat(t.sqrt_w[tn_idx], 2)[:, None]
        m *= np.repeat(s.sqrt_w[sn_idx], 2)[None, :]
        return m[(2 * ti + rows % 2)[:, None], (2 * si + cols % 2)[None, :]]

    def full(self, shift: int = 0) -> np.ndarray:
        return self.block(np.arange(2 * self.tgt.n_nodes), np.arange(2 * self.src.n_nodes), shift)

    @property
    def shape(self):
        return (2 * self.tgt.n_nodes, 2 * self.src.n_nodes)


def vertical_oracle(stack: LayerStack, discs, i: int, j: int) -> VerticalOracle:
    if j == i + 1:
        return VerticalOracle(discs[i], discs[j], stack.wavenumbers[i + 1], -1.0)
    if j == i - 1:
        return VerticalOracle(discs[i], discs[j], stack.wavenumbers[i], 1.0)
    raise ValueError("vertical blocks couple adjacent interfaces only")


def self_oracle(stack: LayerStack, discs, i: int) -> SelfOracle:
    return SelfOracle(discs[i], stack.wavenumbers[i], stack.wavenumbers[i + 1])


@dataclass
class AParts:
    """Entry oracles for all A pieces (diagonal and vertical)."""

    selfs: list
    verticals: dict

    @property
    def n_interfaces(self) -> int:
        return len(self.selfs)


def assemble_A_parts(stack: LayerStack, discs) -> AParts:
    I = stack.n_interfaces
    selfs = [self_oracle(stack, discs, i) for i in range(I)]
    vert = {}
    for i in range(I):
        for j in (i - 1, i + 1):
            if 0 <= j < I:
                vert[(i, j)] = vertical_oracle(stack, discs, i, j)
    return AParts(selfs, vert)


def dense_A(parts: AParts, alpha: complex) -> np.ndarray:
    """Materialise ``A(alpha)`` (small problems and tests only)."""
    sizes = [o.n for o in parts.selfs]
    off = np.concatenate([[0], np.cumsum(sizes)])
    A = np.zeros((off[-1], off[-1]), dtype=complex)
    for i, o in enumerate(parts.selfs):
        blk = o.full(0) + alpha * o.full(1) + o.full(-1) / alpha
        A[off[i]:off[i + 1], off[i]:off[i + 1]] = blk
    for (i, j), o in parts.verticals.items():
        blk = sum(phase_weight(alpha, s) * o.full(s) for s in SHIFTS)
        A[off[i]:off[i + 1], off[j]:off[j + 1]] = blk
    return A


def dense_A_hat(parts: AParts, alpha: complex) -> np.ndarray:
    """``A(alpha) - A0`` with ``A0 = blockdiag(A^s_ii)``."""
    A = dense_A(parts, alpha)
    off = np.concatenate([[0], np.cumsum([o.n for o in parts.selfs])])
    for i, o in enumerate(parts.selfs):
        A[off[i]:off[i + 1], off[i]:off[i + 1]] -= o.full(0)
    return A


# ---------------------------------------------------------------------------
# periodizing blocks
# ---------------------------------------------------------------------------


def wall_targets(layout: UnitCellLayout, l: int, x: float):
    w = layout.walls[l]
    pts = np.stack([np.full_like(w.y, x), w.y], axis=1)
    nrm = np.tile([1.0, 0.0], (len(w.y), 1))
    return pts, nrm, np.sqrt(w.weights)


def top_targets(layout: UnitCellLayout, which: str):
    y = layout.y_U if which == "U" else layout.y_D
    pts = np.stack([layout.top_x, np.full_like(layout.top_x, y)], axis=1)
    nrm = np.tile([0.0, 1.0], (len(layout.top_x), 1))
    return pts, nrm, np.sqrt(layout.top_w)


def build_B(disc: Discretization, layout: UnitCellLayout, layer: int, omega: float, sign: float) -> np.ndarray:
    """``sign * [phi; dphi/dnu]`` of the proxies of ``layer`` on ``disc`` (L^2 rows)."""
    m = proxy_basis_matrix(layout.proxies[layer], omega, disc.nodes, disc.normals)
    return sign * m * np.repeat(disc.sqrt_w, 2)[:, None]


def build_C_pair(disc: Discretization, layout: UnitCellLayout, layer: int, omega: float):
    """``(C^R, C^L)``: sources of ``disc`` at ``R + d`` and ``L - d`` of ``layer``."""
    d = layout.period
    out = []
    for x in (layout.R + d, layout.L - d):
        pts, nrm, sw = wall_targets(layout, layer, x)
        out.append(interface_matrix(omega, pts, nrm, disc, 0, row_scale=sw))
    return tuple(out)


def build_Q_pair(layout: UnitCellLayout, layer: int, omega: float):
    """``(Q^R, Q^L)``: proxies of ``layer`` on its right and left walls."""
    out = []
    for x in (layout.R, layout.L):
        pts, nrm, sw = wall_targets(layout, layer, x)
        m = proxy_basis_matrix(layout.proxies[layer], omega, pts, nrm)
        out.append(m * np.repeat(sw, 2)[:, None])
    return tuple(out)


def build_Z(disc: Discretization, layout: UnitCellLayout, which: str, omega: float) -> dict:
    """Shift-split ``Z_U`` / ``Z_D``: ``{shift: block}``."""
    pts, nrm, sw = top_targets(layout, which)
    return {s: interface_matrix(omega, pts, nrm, disc, s, row_scale=sw) for s in SHIFTS}


def build_V(layout: UnitCellLayout, which: str, layer: int, omega: float) -> np.ndarray:
    pts, nrm, sw = top_targets(layout, which)
    m = proxy_basis_matrix(layout.proxies[layer], omega, pts, nrm)
    return m * np.repeat(sw, 2)[:, None]


def rb_wavenumbers(kappa: np.ndarray, omega: float) -> np.ndarray:
    """``sqrt(omega^2 - kappa^2)`` on the positive real / positive imaginary branch."""
    q = omega**2 - np.asarray(kappa, float) ** 2
    return np.where(q >= 0, np.sqrt(np.abs(q)) + 0j, 1j * np.sqrt(np.abs(q)))


def rb_orders(K: int, extra_orders: int = 0) -> np.ndarray:
    return np.arange(-K, K + extra_orders + 1)


def assemble_W(rep_theta: float, omega1: float, omega_bot: float, d: float, K: int,
               extra_orders: int, layout: UnitCellLayout) -> np.ndarray:
    """Rayleigh--Bloch block for orders ``-K .. K + extra_orders``."""
    if extra_orders < 0:
        raise ValueError("extra_orders must be nonnegative")
    n = rb_orders(K, extra_orders)
    kappa = omega1 * np.cos(rep_theta) + 2 * np.pi * n / d
    kU = rb_wavenumbers(kappa, omega1)
    kD = rb_wavenumbers(kappa, omega_bot)
    e = np.exp(1j * np.outer(layout.top_x, kappa))
    sw = np.sqrt(layout.top_w)[:, None]
    M = len(layout.top_x)
    nb = len(n)
    W = np.zeros((4 * M, 2 * nb), dtype=complex)
    W[0:2 * M:2, :nb] = -e * sw
    W[1:2 * M:2, :nb] = -1j * kU * e * sw
    W[2 * M::2, nb:] = -e * sw
    W[2 * M + 1::2, nb:] = 1j * kD * e * sw
    return W


@dataclass
class PeriodizingParts:
    """Phase-free pieces of ``B, C, Q, Z, V``.

    ``B[(i, l)]``: interface ``i`` rows, layer ``l`` proxy columns (``l in {i, i+1}``).
    ``CR/CL[(l, i)]``: layer ``l`` wall rows, interface ``i`` columns.
    ``QR/QL[l]``; ``ZU/ZD[shift]``; ``VU``, ``VD``.
    """

    B: dict = field(default_factory=dict)
    CR: dict = field(default_factory=dict)
    CL: dict = field(default_factory=dict)
    QR: dict = field(default_factory=dict)
    QL: dict = field(default_factory=dict)
    ZU: dict = field(default_factory=dict)
    ZD: dict = field(default_factory=dict)
    VU: np.ndarray | None = None
    VD: np.ndarray | None = None


def assemble_periodizing_parts(stack: LayerStack, discs, layout: UnitCellLayout) -> PeriodizingParts:
    I = stack.n_interfaces
    om = stack.wavenumbers
    pp = PeriodizingParts()
    for i in range(I):
        pp.B[(i, i)] = build_B(discs[i], layout, i, om[i], 1.0)
        pp.B[(i, i + 1)] = build_B(discs[i], layout, i + 1, om[i + 1], -1.0)
    for l in range(I + 1):
        for i in (l - 1, l):
            if 0 <= i < I:
                pp.CR[(l, i)], pp.CL[(l, i)] = build_C_pair(discs[i], layout, l, om[l])
        pp.QR[l], pp.QL[l] = build_Q_pair(layout, l, om[l])
    pp.ZU = build_Z(discs[0], layout, "U", om[0])
    pp.ZD = build_Z(discs[-1], layout, "D", om[-1])
    pp.VU = build_V(layout, "U", 0, om[0])
    pp.VD = build_V(layout, "D", I, om[-1])
    return pp


def C_alpha(pp: PeriodizingParts, key, alpha: complex) -> np.ndarray:
    return pp.CR[key] / alpha**2 - alpha * pp.CL[key]


def Q_alpha(pp: PeriodizingParts, l: int, alpha: complex) -> np.ndarray:
    return pp.QR[l] / alpha - pp.QL[l]


def Z_alpha(parts: dict, alpha: complex) -> np.ndarray:
    return sum(phase_weight(alpha, s) * parts[s] for s in SHIFTS)


def lower_blocks(pp: PeriodizingParts, alpha: complex, n_nodes, P: int, M_w: int, M: int):
    """Dense ``[C; Z]`` (rows x 2N) and ``[Q 0; V 0]`` proxy part (rows x P_tot)."""
    I = len(n_nodes)
    off = np.concatenate([[0], np.cumsum([2 * n for n in n_nodes])])
    nrow = 2 * (I + 1) * M_w + 4 * M
    CZ = np.zeros((nrow, off[-1]), dtype=complex)
    QV = np.zeros((nrow, (I + 1) * P), dtype=complex)
    for l in range(I + 1):
        r = slice(2 * M_w * l, 2 * M_w * (l + 1))
        for i in (l - 1, l):
            if 0 <= i < I:
                CZ[r, off[i]:off[i + 1]] = C_alpha(pp, (l, i), alpha)
        QV[r, l * P:(l + 1) * P] = Q_alpha(pp, l, alpha)
    r0 = 2 * (I + 1) * M_w
    CZ[r0:r0 + 2 * M, off[0]:off[1]] = Z_alpha(pp.ZU, alpha)
    CZ[r0 + 2 * M:, off[I - 1]:off[I]] = Z_alpha(pp.ZD, alpha)
    QV[r0:r0 + 2 * M, 0:P] = pp.VU
    QV[r0 + 2 * M:, I * P:] = pp.VD
    return CZ, QV


def dense_B(pp: PeriodizingParts, n_nodes, P: int) -> np.ndarray:
    I = len(n_nodes)
    off = np.concatenate([[0], np.cumsum([2 * n for n in n_nodes])])
    B = np.zeros((off[-1], (I + 1) * P), dtype=complex)
    for (i, l), blk in pp.B.items():
        B[off[i]:off[i + 1], l * P:(l + 1) * P] = blk
    return B


def dense_system(aparts: AParts, pp: PeriodizingParts, W: np.ndarray, alpha: complex,
                 n_nodes, P: int, M_w: int, M: int) -> np.ndarray:
    """The full rectangular matrix (small problems only)."""
    A = dense_A(aparts, alpha)
    B = dense_B(pp, n_nodes, P)
    CZ, QV = lower_blocks(pp, alpha, n_nodes, P, M_w, M)
    n2 = A.shape[0]
    na = W.shape[1]
    top = np.hstack([A, B, np.zeros((n2, na))])
    WW = np.zeros((CZ.shape[0], na), dtype=complex)
    WW[2 * (len(n_nodes) + 1) * M_w:] = W
    bot = np.hstack([CZ, QV, WW])
    return np.vstack([top, bot])


def incident_rhs(discs, inc: IncidentWave) -> np.ndarray:
    """``f``: ``(-u_inc, -du_inc/dnu)`` on the top interface, zero elsewhere (L^2 rows)."""
    n = sum(2 * d.n_nodes for d in discs)
    f = np.zeros(n, dtype=complex)
    d0 = discs[0]
    f[0:2 * d0.n_nodes:2] = -inc.value(d0.nodes) * d0.sqrt_w
    f[1:2 * d0.n_nodes:2] = -np.sum(inc.gradient(d0.nodes) * d0.normals, axis=1) * d0.sqrt_w
    return f
