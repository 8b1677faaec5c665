"""Energy function for lossless power flow, with gradient, Hessian and the
edge-coordinate block decomposition, plus the constant-ratio lossy variant.

The state lives in log-voltage coordinates rho = log V. With every fixed
voltage normalized to 1 (see network.absorb_setpoints), the lossless energy
is

    E(rho, theta) = - sum_ns P_i theta_i - sum_pq Q_i rho_i
                    + sum_lines b * ((e^{2 rho_i} + e^{2 rho_j}) / 2
                                     - e^{rho_i + rho_j} cos(theta_i - theta_j))

and its stationary points are exactly the power-flow solutions: the theta
derivatives recover the active balances and the rho derivatives the
reactive ones.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotConstantRatio, SingularReduction, UnsupportedTopology
from .linalg import SymMatrix
from .network import Network

HALF_PI = 0.5 * np.pi


@dataclass
class PFState:
    """Per-bus log-voltage and phase, with slack/PV entries pinned to zero."""

    rho: np.ndarray
    theta: np.ndarray

    @staticmethod
    def flat(n: Network) -> "PFState":
        return PFState(np.zeros(n.n_bus), np.zeros(n.n_bus))

    def copy(self) -> "PFState":
        return PFState(self.rho.copy(), self.theta.copy())

    def voltages(self) -> np.ndarray:
        return np.exp(self.rho)


def check_state(n: Network, s: PFState) -> None:
    if s.rho.shape != (n.n_bus,) or s.theta.shape != (n.n_bus,):
        raise ValueError("state arrays do not match network size")
    if not (np.all(np.isfinite(s.rho)) and np.all(np.isfinite(s.theta))):
        raise ValueError("state has non-finite entries")
    pinned = np.concatenate((n.pv, [n.slack_index]))
    if np.any(s.rho[pinned] != 0.0) or s.theta[n.slack_index] != 0.0:
        raise ValueError("pinned state entries must be exactly zero")


def pack(n: Network, s: PFState) -> np.ndarray:
    """Free variables in solver order: rho at PQ buses, then theta at
    non-slack buses (both in bus order)."""
    return np.concatenate((s.rho[n.pq], s.theta[n.ns]))


def unpack(n: Network, x: np.ndarray) -> PFState:
    s = PFState(np.zeros(n.n_bus), np.zeros(n.n_bus))
    npq = len(n.pq)
    s.rho[n.pq] = x[:npq]
    s.theta[n.ns] = x[npq:]
    return s


@dataclass
class EnergyEval:
    value: float
    grad_theta: np.ndarray  # dE/dtheta at non-slack buses
    grad_rho: np.ndarray  # dE/drho at PQ buses

    def as_vector(self) -> np.ndarray:
        return np.concatenate((self.grad_rho, self.grad_theta))


def _edge_terms(n: Network, s: PFState):
    f, t = n.edges[:, 0], n.edges[:, 1]
    te = s.theta[f] - s.theta[t]
    exy = np.exp(s.rho[f] + s.rho[t])
    return f, t, te, exy


def energy_value(n: Network, s: PFState) -> float:
    """Evaluate the energy function; exactly 0 at the flat start."""
    check_state(n, s)
    f, t, te, exy = _edge_terms(n, s)
    e2 = np.exp(2.0 * s.rho)
    quad = 0.5 * (e2[f] + e2[t]) - exy * np.cos(te)
    return float(np.dot(n.b, quad)
                 - np.dot(n.p_inj[n.ns], s.theta[n.ns])
                 - np.dot(n.q_inj[n.pq], s.rho[n.pq]))


def energy_gradient(n: Network, s: PFState) -> EnergyEval:
    """Analytic gradient of the energy (equal to minus the PF residuals)."""
    check_state(n, s)
    f, t, te, exy = _edge_terms(n, s)
    sin_t = np.sin(te)
    cos_t = np.cos(te)
    e2 = np.exp(2.0 * s.rho)
    g_theta = np.zeros(n.n_bus)
    g_rho = np.zeros(n.n_bus)
    flow = n.b * exy * sin_t
    np.add.at(g_theta, f, flow)
    np.add.at(g_theta, t, -flow)
    np.add.at(g_rho, f, n.b * (e2[f] - exy * cos_t))
    np.add.at(g_rho, t, n.b * (e2[t] - exy * cos_t))
    g_theta -= n.p_inj
    g_rho -= n.q_inj
    return EnergyEval(energy_value(n, s), g_theta[n.ns], g_rho[n.pq])


def pf_residuals(n: Network, s: PFState) -> tuple[np.ndarray, np.ndarray]:
    """Power-flow residuals (P at non-slack buses, Q at PQ buses).

    Deliberately computed through complex phasor arithmetic rather than by
    differentiating the energy, so the gradient identity can be checked
    between independent code paths.
    """
    check_state(n, s)
    if not n.is_lossless:
        raise ValueError("lossless network required; use lossy_residuals")
    inj = _phasor_injections(n, s, n.b)
    rp = n.p_inj[n.ns] - inj.real[n.ns]
    rq = n.q_inj[n.pq] - inj.imag[n.pq]
    return rp, rq


def _phasor_injections(n: Network, s: PFState, beff: np.ndarray) -> np.ndarray:
    v = np.exp(s.rho + 1j * s.theta)
    f, t = n.edges[:, 0], n.edges[:, 1]
    # Purely inductive line k: current from i into k is -j*b*(V_i - V_j).
    y = -1j * beff
    cur = np.zeros(n.n_bus, dtype=complex)
    np.add.at(cur, f, y * (v[f] - v[t]))
    np.add.at(cur, t, y * (v[t] - v[f]))
    return v * np.conj(cur)


def _hessian_full(n: Network, s: PFState, beff: np.ndarray) -> np.ndarray:
    """Hessian of the quadratic+cosine part over all (rho, theta) bus pairs."""
    f, t, te, exy = _edge_terms(n, s)
    e2 = np.exp(2.0 * s.rho)
    w = beff * exy * np.cos(te)
    sv = beff * exy * np.sin(te)
    nb = n.n_bus
    h = np.zeros((2 * nb, 2 * nb))

    def acc(ii, jj, val):
        np.add.at(h, (ii, jj), val)
        if not np.array_equal(ii, jj):
            np.add.at(h, (jj, ii), val)

    acc(f, f, 2.0 * beff * e2[f] - w)
    acc(t, t, 2.0 * beff * e2[t] - w)
    acc(f, t, -w)
    acc(f, nb + f, sv)
    acc(t, nb + f, sv)
    acc(f, nb + t, -sv)
    acc(t, nb + t, -sv)
    acc(nb + f, nb + f, w)
    acc(nb + t, nb + t, w)
    acc(nb + f, nb + t, -w)
    return h


def hessian(n: Network, s: PFState) -> SymMatrix:
    """Analytic Hessian over the free variables (rho_pq, theta_ns)."""
    check_state(n, s)
    h = _hessian_full(n, s, n.b)
    keep = np.concatenate((n.pq, n.n_bus + n.ns))
    return SymMatrix(h[np.ix_(keep, keep)])


@dataclass
class HessianBlocks:
    """Edge-coordinate Hessian blocks of the energy.

    m is the rho-rho block over PQ buses, n_block the rho/edge-phase cross
    block, r the diagonal edge block, theta_edges the per-edge phase
    differences. o (the Schur complement m - n r^-1 n^T) and l (o rescaled
    by e^{-rho} on both sides) exist only when every |theta_edge| < pi/2.
    All PQ-indexed blocks are None on networks without PQ buses.
    """

    m: SymMatrix | None
    n_block: np.ndarray
    r: np.ndarray
    theta_edges: np.ndarray
    o: SymMatrix | None
    l: SymMatrix | None

    def require_schur(self) -> tuple[SymMatrix, SymMatrix]:
        if self.o is None or self.l is None:
            raise SingularReduction(
                "an edge phase reached 90 degrees; o/l blocks unavailable")
        return self.o, self.l


def hessian_blocks(n: Network, s: PFState) -> HessianBlocks:
    check_state(n, s)
    f, t, te, exy = _edge_terms(n, s)
    e2 = np.exp(2.0 * s.rho)
    w = n.b * exy * np.cos(te)
    sv = n.b * exy * np.sin(te)
    npq = len(n.pq)
    m_mat = np.zeros((npq, npq))
    pq_of = n.pq_index_of
    diag = 2.0 * n.b_total * e2
    for k in range(len(n.lines)):
        pf, pt = pq_of[f[k]], pq_of[t[k]]
        if pf >= 0:
            m_mat[pf, pf] -= w[k]
        if pt >= 0:
            m_mat[pt, pt] -= w[k]
        if pf >= 0 and pt >= 0:
            m_mat[pf, pt] -= w[k]
            m_mat[pt, pf] -= w[k]
    m_mat[np.arange(npq), np.arange(npq)] += diag[n.pq]

    n_block = np.zeros((npq, len(n.lines)))
    for k in range(len(n.lines)):
        for p in (pq_of[f[k]], pq_of[t[k]]):
            if p >= 0:
                n_block[p, k] += sv[k]

    blocks = HessianBlocks(m=SymMatrix(m_mat) if npq else None,
                           n_block=n_block, r=w.copy(), theta_edges=te.copy(),
                           o=None, l=None)
    if npq == 0:
        return blocks
    if np.all(np.abs(te) < HALF_PI):
        o_mat = m_mat - (n_block / w) @ n_block.T
        d = np.exp(-s.rho[n.pq])
        blocks.o = SymMatrix(o_mat)
        blocks.l = SymMatrix(d[:, None] * o_mat * d[None, :])
    return blocks


# ---------------------------------------------------------------------------
# constant-ratio lossy variant

def _require_lossy(n: Network):
    if len(n.pv) > 0:
        raise UnsupportedTopology(
            "constant-ratio lossy model requires all non-slack buses to be PQ")
    if n.lossy_ratio is None:
        raise NotConstantRatio("line g/b ratios are not uniform")
    return n.lossy_ratio


def lossy_targets(n: Network, kappa: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-bus combined injections: (P + kappa Q, Q - kappa P).

    These pair with the (kappa^2+1)-scaled sine and cosine sums so that
    kappa = 0 reproduces the lossless equations exactly.
    """
    return n.p_inj + kappa * n.q_inj, n.q_inj - kappa * n.p_inj


def lossy_energy_value(n: Network, s: PFState) -> float:
    kappa = _require_lossy(n)
    check_state(n, s)
    f, t, te, exy = _edge_terms(n, s)
    e2 = np.exp(2.0 * s.rho)
    beff = (kappa * kappa + 1.0) * n.b
    quad = 0.5 * (e2[f] + e2[t]) - exy * np.cos(te)
    tp, tq = lossy_targets(n, kappa)
    return float(np.dot(beff, quad)
                 - np.dot(tp[n.ns], s.theta[n.ns])
                 - np.dot(tq[n.pq], s.rho[n.pq]))


def lossy_gradient(n: Network, s: PFState) -> EnergyEval:
    kappa = _require_lossy(n)
    check_state(n, s)
    f, t, te, exy = _edge_terms(n, s)
    e2 = np.exp(2.0 * s.rho)
    beff = (kappa * kappa + 1.0) * n.b
    g_theta = np.zeros(n.n_bus)
    g_rho = np.zeros(n.n_bus)
    flow = beff * exy * np.sin(te)
    np.add.at(g_theta, f, flow)
    np.add.at(g_theta, t, -flow)
    np.add.at(g_rho, f, beff * (e2[f] - exy * np.cos(te)))
    np.add.at(g_rho, t, beff * (e2[t] - exy * np.cos(te)))
    tp, tq = lossy_targets(n, kappa)
    g_theta -= tp
    g_rho -= tq
    return EnergyEval(lossy_energy_value(n, s), g_theta[n.ns], g_rho[n.pq])


def lossy_residuals(n: Network, s: PFState) -> tuple[np.ndarray, np.ndarray]:
    """Residuals of the kappa-combined balance equations, via phasors."""
    kappa = _require_lossy(n)
    check_state(n, s)
    beff = (kappa * kappa + 1.0) * n.b
    inj = _phasor_injections(n, s, beff)
    tp, tq = lossy_targets(n, kappa)
    rp = tp[n.ns] - inj.real[n.ns]
    rq = tq[n.pq] - inj.imag[n.pq]
    return rp, rq


def lossy_hessian(n: Network, s: PFState) -> SymMatrix:
    # Injections are linear in the state, so the lossy Hessian is just the
    # lossless one scaled by kappa^2 + 1.
    kappa = _require_lossy(n)
    check_state(n, s)
    h = _hessian_full(n, s, (kappa * kappa + 1.0) * n.b)
    keep = np.concatenate((n.pq, n.n_bus + n.ns))
    return SymMatrix(h[np.ix_(keep, keep)])
