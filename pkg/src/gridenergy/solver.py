"""Power-flow solving.

Two routes: a classic damped Newton-Raphson iteration on the balance
residuals, and the convex route that minimizes the energy function over the
convexity domain with a log-barrier interior method. Inside the domain the
energy is strictly convex, so the convex route either returns the unique
solution there or certifies that the constrained minimum sits on the
boundary with a nonzero gradient, i.e. that no solution exists in the
domain.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import energy as en
from .convexity import (ConvexityCertificate, PhaseVoltageBox, _assemble_lmi,
                        in_domain_C, lossy_in_domain)
from .energy import HALF_PI, PFState, pack, unpack
from .errors import InfeasibleStart, NotConstantRatio, NotPositiveDefinite
from .linalg import SymMatrix, solve_spd
from .network import Network, scale_injections


class SolveStatus(enum.Enum):
    SOLUTION_FOUND = "SolutionFound"
    NO_SOLUTION_IN_C = "NoSolutionInC"
    MAX_ITERATIONS = "MaxIterations"


@dataclass
class SolveOutcome:
    status: SolveStatus
    state: PFState
    grad_norm: float
    boundary_active: bool
    iterations: int
    certificate: ConvexityCertificate
    trace: list | None = None


@dataclass
class SolveOptions:
    grad_tol: float = 1e-8
    mu0: float = 1.0
    mu_decay: float = 0.2
    mu_min: float = 1e-9
    max_inner: int = 80
    max_total: int = 4000
    armijo: float = 1e-4
    box: PhaseVoltageBox | None = None
    polish: bool = True
    collect_trace: bool = False


def _model(n: Network):
    """Pick the lossless or constant-ratio lossy evaluation functions."""
    if n.lossy_ratio is None:
        raise NotConstantRatio("network has non-uniform line ratios")
    if n.is_lossless:
        def residual_vec(s):
            rp, rq = en.pf_residuals(n, s)
            return np.concatenate((rq, rp))
        return en.energy_value, en.energy_gradient, en.hessian, residual_vec

    def residual_vec(s):
        rp, rq = en.lossy_residuals(n, s)
        return np.concatenate((rq, rp))
    return en.lossy_energy_value, en.lossy_gradient, en.lossy_hessian, residual_vec


def _ridge_solve(h: np.ndarray, rhs: np.ndarray) -> np.ndarray | None:
    scale = 1.0 + float(np.max(np.abs(np.diag(h))))
    reg = 0.0
    for _ in range(8):
        try:
            return solve_spd(SymMatrix(h + reg * np.eye(h.shape[0])), rhs)
        except NotPositiveDefinite:
            reg = 1e-10 * scale if reg == 0.0 else reg * 100.0
    return None


def solve_newton(n: Network, s0: PFState | None = None, tol: float = 1e-10,
                 max_iter: int = 50) -> SolveOutcome:
    """Damped Newton-Raphson on the balance residuals.

    Works for lossless networks and for constant-ratio lossy ones (where
    the residuals are the ratio-combined balances). SolutionFound means the
    residual infinity norm reached tol; it does not imply membership in the
    convexity domain.
    """
    _, _, hess_fn, residual_vec = _model(n)
    s = s0.copy() if s0 is not None else PFState.flat(n)
    en.check_state(n, s)
    x = pack(n, s)
    r = residual_vec(s)
    iterations = 0
    for _ in range(max_iter):
        if np.linalg.norm(r, np.inf) <= tol:
            break
        h = hess_fn(n, s).entries
        dx = _ridge_solve(h, r)
        if dx is None:
            break
        merit = float(r @ r)
        alpha = 1.0
        accepted = False
        while alpha >= 1e-12:
            xn = x + alpha * dx
            if np.max(np.abs(xn)) > 30.0:  # runaway trial, reject cheaply
                alpha *= 0.5
                continue
            sn = unpack(n, xn)
            rn = residual_vec(sn)
            if float(rn @ rn) <= (1.0 - 1e-4 * alpha) * merit:
                x = xn
                s, r = sn, rn
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        iterations += 1
    grad_norm = float(np.linalg.norm(r, np.inf))
    cert = _certificate(n, s)
    status = (SolveStatus.SOLUTION_FOUND if grad_norm <= tol
              else SolveStatus.MAX_ITERATIONS)
    return SolveOutcome(status=status, state=s, grad_norm=grad_norm,
                        boundary_active=False, iterations=iterations,
                        certificate=cert)


def _certificate(n: Network, s: PFState) -> ConvexityCertificate:
    if n.is_lossless or len(n.pv) > 0:
        return in_domain_C(n, s)
    return lossy_in_domain(n, s)


# ---------------------------------------------------------------------------
# log-barrier machinery

class _Barrier:
    """Value/gradient/Hessian of the domain barrier in packed coordinates.

    Barrier = -sum_lines log cos(theta_ij) - log det(domain matrix), plus
    optional per-line operating-box terms. The domain matrix is assembled
    over PQ buses; its log-det derivatives are accumulated per line through
    the inverse.
    """

    def __init__(self, n: Network, box: PhaseVoltageBox | None = None):
        self.n = n
        self.box = box
        npq = len(n.pq)
        nns = len(n.ns)
        self.nv = npq + nns
        self.npq = npq
        f, t = n.edges[:, 0], n.edges[:, 1]
        self.f, self.t = f, t
        pq_of = n.pq_index_of
        ns_of = np.full(n.n_bus, -1, dtype=int)
        ns_of[n.ns] = np.arange(nns)
        self.pf, self.pt = pq_of[f], pq_of[t]
        # Packed-variable columns for each line end (-1 when pinned).
        self.rho_col_f = np.where(self.pf >= 0, self.pf, -1)
        self.rho_col_t = np.where(self.pt >= 0, self.pt, -1)
        self.th_col_f = np.where(ns_of[f] >= 0, npq + ns_of[f], -1)
        self.th_col_t = np.where(ns_of[t] >= 0, npq + ns_of[t], -1)
        self.active = np.flatnonzero((self.pf >= 0) | (self.pt >= 0))
        # Padded PQ index pairs for the 2x2 derivative stencils.
        idx = np.zeros((len(self.active), 2), dtype=int)
        for row, k in enumerate(self.active):
            a, b = self.pf[k], self.pt[k]
            idx[row, 0] = a if a >= 0 else b
            idx[row, 1] = b if b >= 0 else a
        self.idx = idx
        # Flattened sparse-entry ("atom") index lists for the pair traces:
        # two diagonal atoms per line for the ratio direction, four atoms
        # (two diagonal, two off-diagonal) for the phase direction.
        self.d_rows = idx.reshape(-1)
        self.t_rows = idx[:, (0, 1, 0, 1)].reshape(-1)
        self.t_cols = idx[:, (0, 1, 1, 0)].reshape(-1)
        self.log_brho = math.log(box.b_rho) if box is not None else None

    # -- state-dependent pieces ------------------------------------------

    def edge_vars(self, s: PFState):
        d = s.rho[self.t] - s.rho[self.f]
        tau = s.theta[self.f] - s.theta[self.t]
        return d, tau

    def matrix(self, s: PFState, tau=None) -> np.ndarray:
        d, tau_ = self.edge_vars(s)
        if tau is None:
            tau = tau_
        return _assemble_lmi(self.n, d, 1.0 / np.cos(tau))

    def feasible(self, s: PFState) -> bool:
        return math.isfinite(self.value(s))

    def value(self, s: PFState) -> float:
        """Barrier value; +inf outside the strict interior of the domain."""
        d, tau = self.edge_vars(s)
        if np.any(np.abs(tau) >= HALF_PI - 1e-12):
            return math.inf
        val = -float(np.sum(np.log(np.cos(tau))))
        if self.box is not None:
            if np.any(np.abs(tau) >= self.box.b_theta):
                return math.inf
            var = (self.rho_col_f >= 0) | (self.rho_col_t >= 0)
            if np.any(np.abs(d[var]) >= self.log_brho):
                return math.inf
            bt = self.box.b_theta
            val -= float(np.sum(np.log(bt - tau) + np.log(bt + tau)))
            br = self.log_brho
            val -= float(np.sum(np.log(br - d[var]) + np.log(br + d[var])))
        if self.npq == 0:
            return val
        lm = self.matrix(s, tau)
        try:
            chol = np.linalg.cholesky(lm)
        except np.linalg.LinAlgError:
            return math.inf
        return val - 2.0 * float(np.sum(np.log(np.diag(chol))))

    def grad_hess(self, s: PFState):
        """Gradient and Hessian of the barrier in packed coordinates.

        Assumes feasibility was already established.
        """
        n = self.n
        d, tau = self.edge_vars(s)
        m = len(n.lines)
        nv = self.nv
        g = np.zeros(nv)
        h = np.zeros((nv, nv))

        # Phase-cone part: -log cos on every line, diagonal in tau.
        tn = np.tan(tau)
        sec2 = 1.0 + tn * tn
        g_tau = tn.copy()
        h_tau = sec2.copy()

        # Optional operating box, also separable per line.
        g_d_box = np.zeros(m)
        h_d_box = np.zeros(m)
        if self.box is not None:
            bt = self.box.b_theta
            g_tau += 1.0 / (bt - tau) - 1.0 / (bt + tau)
            h_tau += 1.0 / (bt - tau) ** 2 + 1.0 / (bt + tau) ** 2
            var = (self.rho_col_f >= 0) | (self.rho_col_t >= 0)
            br = self.log_brho
            g_d_box[var] = 1.0 / (br - d[var]) - 1.0 / (br + d[var])
            h_d_box[var] = 1.0 / (br - d[var]) ** 2 + 1.0 / (br + d[var]) ** 2

        # Log-det part over the active lines.
        if self.npq > 0 and len(self.active) > 0:
            act = self.active
            ma = len(act)
            lm = self.matrix(s, tau)
            k_inv = np.linalg.inv(lm)
            bseg = n.b[act]
            ic = 1.0 / np.cos(tau[act])
            tnn = tn[act]
            ed = np.exp(d[act])
            emd = np.exp(-d[act])
            has_f = (self.pf[act] >= 0).astype(float)
            has_t = (self.pt[act] >= 0).astype(float)
            both = has_f * has_t
            idx = self.idx

            kaa = k_inv[idx[:, 0], idx[:, 0]]
            kbb = k_inv[idx[:, 1], idx[:, 1]]
            kab = k_inv[idx[:, 0], idx[:, 1]]

            # dL/dd has -b e^d/c at the from diagonal, +b e^{-d}/c at the to
            # diagonal; the tau derivative scales the variable part by tan.
            cd = np.stack((-bseg * ed * ic * has_f,
                           bseg * emd * ic * has_t), axis=1).reshape(-1)
            ct = np.stack((-bseg * ed * ic * has_f,
                           -bseg * emd * ic * has_t,
                           -bseg * ic * both,
                           -bseg * ic * both), axis=1) * tnn[:, None]
            ct = ct.reshape(-1)

            # Gradient pieces: -tr(K dL/dv).
            g_d_act = bseg * ic * (ed * kaa * has_f - emd * kbb * has_t)
            trkc = -(bseg * ic) * (ed * kaa * has_f + emd * kbb * has_t
                                   + 2.0 * kab * both)
            g_tau_act = -tnn * trkc

            # Pair terms tr(K S K S'): with S = c e_p e_q^T and
            # S' = c' e_r e_s^T they reduce to c c' K[q,r] K[s,p], summed
            # over the sparse entries ("atoms") of each line's stencil.
            dr, tr_, tc = self.d_rows, self.t_rows, self.t_cols

            def pair(ca, pa, qa, na, cb, pb, qb, nb):
                t_ab = (np.outer(ca, cb) * k_inv[np.ix_(qa, pb)]
                        * k_inv[np.ix_(pa, qb)])
                return t_ab.reshape(ma, na, ma, nb).sum(axis=(1, 3))

            hdd = pair(cd, dr, dr, 2, cd, dr, dr, 2)
            hdt = pair(cd, dr, dr, 2, ct, tr_, tc, 4)
            htt = pair(ct, tr_, tc, 4, ct, tr_, tc, 4)

            # Same-line curvature of L itself.
            diag_dd = bseg * ic * (ed * kaa * has_f + emd * kbb * has_t)
            hdd[np.arange(ma), np.arange(ma)] += diag_dd
            hdt[np.arange(ma), np.arange(ma)] += tnn * g_d_act
            sec2a = 1.0 + tnn * tnn
            htt[np.arange(ma), np.arange(ma)] += (2.0 * sec2a - 1.0) * (-trkc)

            # Chain the edge-variable blocks into packed coordinates.
            jmat = np.zeros((2 * ma, nv))
            rows = np.arange(ma)
            for cols, sign, rset in ((self.rho_col_t[act], 1.0, rows),
                                     (self.rho_col_f[act], -1.0, rows),
                                     (self.th_col_f[act], 1.0, ma + rows),
                                     (self.th_col_t[act], -1.0, ma + rows)):
                mwhere = cols >= 0
                jmat[rset[mwhere], cols[mwhere]] += sign
            hedge = np.block([[hdd, hdt], [hdt.T, htt]])
            h += jmat.T @ hedge @ jmat
            g += jmat.T @ np.concatenate((g_d_act, g_tau_act))

        # Scatter the separable per-line pieces.
        for cols, sign, vals in ((self.th_col_f, 1.0, g_tau),
                                 (self.th_col_t, -1.0, g_tau)):
            mwhere = cols >= 0
            np.add.at(g, cols[mwhere], sign * vals[mwhere])
        for cols, sign, vals in ((self.rho_col_t, 1.0, g_d_box),
                                 (self.rho_col_f, -1.0, g_d_box)):
            mwhere = cols >= 0
            np.add.at(g, cols[mwhere], sign * vals[mwhere])

        for k in range(m):
            cf, ct = self.th_col_f[k], self.th_col_t[k]
            for ca, sa in ((cf, 1.0), (ct, -1.0)):
                if ca < 0:
                    continue
                for cb, sb in ((cf, 1.0), (ct, -1.0)):
                    if cb >= 0:
                        h[ca, cb] += sa * sb * h_tau[k]
            if h_d_box[k] != 0.0:
                rf, rt = self.rho_col_f[k], self.rho_col_t[k]
                for ca, sa in ((rt, 1.0), (rf, -1.0)):
                    if ca < 0:
                        continue
                    for cb, sb in ((rt, 1.0), (rf, -1.0)):
                        if cb >= 0:
                            h[ca, cb] += sa * sb * h_d_box[k]
        return g, h


def _phase_slack(n: Network, s: PFState) -> float:
    f, t = n.edges[:, 0], n.edges[:, 1]
    te = s.theta[f] - s.theta[t]
    return float(HALF_PI - np.max(np.abs(te))) if len(te) else math.inf


def _classify(n: Network, s: PFState, grad_norm: float, opts: SolveOptions,
              iterations: int, ran_out: bool, trace) -> SolveOutcome:
    cert = _certificate(n, s)
    # tol_abs is tol*(1 + max |diag|) with tol = 1e-9, so this recovers the
    # matrix scale the boundary threshold should follow.
    lmi_scale = cert.tol_abs / 1e-9 if cert.tol_abs > 0 else 1.0
    boundary = (cert.lmi_min_eig < 1e-6 * lmi_scale) or (_phase_slack(n, s) < 1e-5)
    interior = (cert.lmi_min_eig > cert.tol_abs) and (_phase_slack(n, s) > 1e-6)
    if grad_norm <= opts.grad_tol and interior:
        status = SolveStatus.SOLUTION_FOUND
        boundary = False
    elif ran_out:
        status = SolveStatus.MAX_ITERATIONS
    else:
        status = SolveStatus.NO_SOLUTION_IN_C
    return SolveOutcome(status=status, state=s, grad_norm=grad_norm,
                        boundary_active=boundary, iterations=iterations,
                        certificate=cert, trace=trace)


def solve_convex(n: Network, s0: PFState | None = None,
                 opts: SolveOptions | None = None) -> SolveOutcome:
    """Minimize the energy over the convexity domain by a log-barrier method.

    Returns SolutionFound with the unique interior stationary point when
    one exists; otherwise the minimizer is pinned to the domain boundary
    with a nonzero gradient and the outcome is NoSolutionInC. Networks with
    a uniform nonzero loss ratio run through the lossy energy, like
    solve_newton does.
    """
    return _solve_barrier(n, s0, opts or SolveOptions())


def solve_convex_lossy(n: Network, s0: PFState | None = None,
                       opts: SolveOptions | None = None) -> SolveOutcome:
    """Convex solve with the constant-ratio lossy energy (lossless at 0)."""
    if n.lossy_ratio is None:
        raise NotConstantRatio("network has non-uniform line ratios")
    return _solve_barrier(n, s0, opts or SolveOptions())


def _solve_barrier(n: Network, s0: PFState | None,
                   opts: SolveOptions) -> SolveOutcome:
    value_fn, grad_fn, hess_fn, _ = _model(n)
    barrier = _Barrier(n, opts.box)
    s = s0.copy() if s0 is not None else PFState.flat(n)
    en.check_state(n, s)
    if not barrier.feasible(s):
        raise InfeasibleStart("initial state is not strictly inside the domain")

    x = pack(n, s)
    iterations = 0
    trace: list | None = [] if opts.collect_trace else None
    mu = opts.mu0
    ran_out = False
    while True:
        # Stages only need to track the central path; the polish pass after
        # the schedule drives the raw gradient below grad_tol.
        stage_tol = max(mu * 1e-2, opts.grad_tol * 0.5)
        for _ in range(opts.max_inner):
            ev = grad_fn(n, s)
            bg, bh = barrier.grad_hess(s)
            g = ev.as_vector() + mu * bg
            if np.linalg.norm(g, np.inf) <= stage_tol:
                break
            h = hess_fn(n, s).entries + mu * bh
            dx = _ridge_solve(h, -g)
            if dx is None:
                ran_out = True
                break
            f0 = ev.value + mu * barrier.value(s)
            slope = float(g @ dx)
            if abs(slope) <= 64.0 * np.finfo(float).eps * (1.0 + abs(f0)):
                # Predicted decrease is below the resolution of the
                # objective; the stage is converged to working precision.
                break
            alpha, accepted = 1.0, False
            while alpha >= 1e-14:
                sn = unpack(n, x + alpha * dx)
                bval = barrier.value(sn)
                if math.isfinite(bval):
                    fnew = value_fn(n, sn) + mu * bval
                    if fnew <= f0 + opts.armijo * alpha * slope:
                        x = x + alpha * dx
                        s = sn
                        if trace is not None:
                            trace.append((mu, fnew))
                        accepted = True
                        break
                alpha *= 0.5
            if not accepted:
                ran_out = True
                break
            iterations += 1
            if iterations >= opts.max_total:
                ran_out = True
                break
        if ran_out or mu <= opts.mu_min:
            break
        mu *= opts.mu_decay

    grad_norm = float(np.linalg.norm(grad_fn(n, s).as_vector(), np.inf))
    if opts.polish and not ran_out:
        s, grad_norm, extra = _polish(n, s, barrier, grad_fn, hess_fn, opts)
        iterations += extra
    return _classify(n, s, grad_norm, opts, iterations, ran_out, trace)


def _polish(n: Network, s: PFState, barrier: _Barrier, grad_fn, hess_fn,
            opts: SolveOptions):
    """Newton steps on the raw gradient, staying strictly feasible.

    The barrier leaves an O(mu) offset from the interior stationary point;
    a few guarded Newton steps remove it when the point is interior.
    """
    x = pack(n, s)
    g = grad_fn(n, s).as_vector()
    best = float(np.linalg.norm(g, np.inf))
    extra = 0
    target = min(opts.grad_tol * 1e-3, 1e-11)
    for _ in range(40):
        if best <= target:
            break
        h = hess_fn(n, s).entries
        dx = _ridge_solve(h, -g)
        if dx is None:
            break
        alpha, accepted = 1.0, False
        while alpha >= 1e-10:
            sn = unpack(n, x + alpha * dx)
            if barrier.feasible(sn):
                gn = grad_fn(n, sn).as_vector()
                norm = float(np.linalg.norm(gn, np.inf))
                if norm < best:
                    x, s, g, best = x + alpha * dx, sn, gn, norm
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            break
        extra += 1
    return s, best, extra


# ---------------------------------------------------------------------------
# load-scaling sweeps

@dataclass(frozen=True)
class SweepRecord:
    kappa: float
    delta: float
    status: SolveStatus
    grad_norm: float
    lmi_min_eig: float
    boundary_active: bool
    iterations: int


def sweep_load(n: Network, delta: float, kappa_grid, opts: SolveOptions | None = None,
               warm_start: bool = True) -> list[SweepRecord]:
    """Convex solves along the loading path P -> kappa P (non-slack),
    Q -> delta kappa Q (PQ buses), in ascending kappa order.

    The domain does not depend on the injections, so the previous solution
    stays strictly feasible and warm-starts the next solve.
    """
    opts = opts or SolveOptions()
    records = []
    prev: PFState | None = None
    for kappa in sorted(float(k) for k in kappa_grid):
        nk = scale_injections(n, kappa, delta)
        s0 = prev if (warm_start and prev is not None) else None
        try:
            out = solve_convex(nk, s0, opts)
        except InfeasibleStart:
            out = solve_convex(nk, None, opts)
        records.append(SweepRecord(kappa=kappa, delta=delta, status=out.status,
                                   grad_norm=out.grad_norm,
                                   lmi_min_eig=out.certificate.lmi_min_eig,
                                   boundary_active=out.boundary_active,
                                   iterations=out.iterations))
        prev = out.state if out.status is SolveStatus.SOLUTION_FOUND else None
    return records
