"""Membership tests for the convexity domain of the energy function.

The domain C is cut out by two conditions: every line phase difference at
most pi/2, and positive semidefiniteness of a PQ-by-PQ matrix built from
per-line terms B/cos(theta_ij) weighted by voltage ratios e^{rho_j-rho_i}.
C is an inner approximation of the true convexity region for meshed
networks and is exact on trees.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .energy import HALF_PI, PFState, check_state, hessian
from .errors import (DomainError, NotConstantRatio, PhaseOutOfRange,
                     UnsupportedTopology)
from .linalg import DEFAULT_PSD_TOL, SymMatrix, cholesky_psd, sym_eigen
from .network import Network


@dataclass(frozen=True)
class ConvexityCertificate:
    in_c: bool
    phase_ok: bool
    lmi_min_eig: float
    tol_abs: float
    in_d_sampled: bool | None = None
    d_samples: int = 0


@dataclass(frozen=True)
class PhaseVoltageBox:
    """Per-line operating box: voltage ratios up to b_rho, phase differences
    up to b_theta radians."""

    b_rho: float
    b_theta: float

    def __post_init__(self):
        if not self.b_rho >= 1.0:
            raise DomainError(f"b_rho must be >= 1, got {self.b_rho}")
        if not (0.0 <= self.b_theta < HALF_PI):
            raise DomainError(f"b_theta must lie in [0, pi/2), got {self.b_theta}")


def _active_mask(n: Network) -> np.ndarray:
    """Lines with at least one PQ endpoint; only these enter the matrix."""
    f, t = n.edges[:, 0], n.edges[:, 1]
    return (n.pq_index_of[f] >= 0) | (n.pq_index_of[t] >= 0)


def _assemble_lmi(n: Network, d_edge: np.ndarray, inv_cos: np.ndarray) -> np.ndarray:
    """Build the PQ-by-PQ domain matrix from per-line voltage-ratio exponents
    d_edge (rho_to - rho_from) and per-line 1/cos(theta) values."""
    npq = len(n.pq)
    f, t = n.edges[:, 0], n.edges[:, 1]
    pf, pt = n.pq_index_of[f], n.pq_index_of[t]
    lm = np.zeros((npq, npq))
    lm[np.arange(npq), np.arange(npq)] = 2.0 * n.b_total[n.pq]
    mf, mt = pf >= 0, pt >= 0
    np.subtract.at(lm, (pf[mf], pf[mf]), n.b[mf] * np.exp(d_edge[mf]) * inv_cos[mf])
    np.subtract.at(lm, (pt[mt], pt[mt]), n.b[mt] * np.exp(-d_edge[mt]) * inv_cos[mt])
    both = mf & mt
    np.subtract.at(lm, (pf[both], pt[both]), n.b[both] * inv_cos[both])
    np.subtract.at(lm, (pt[both], pf[both]), n.b[both] * inv_cos[both])
    return lm


def convexity_matrix(n: Network, s: PFState) -> SymMatrix:
    """The domain matrix at a state. Requires every line phase strictly
    inside (-pi/2, pi/2)."""
    check_state(n, s)
    f, t = n.edges[:, 0], n.edges[:, 1]
    te = s.theta[f] - s.theta[t]
    if np.any(np.abs(te) >= HALF_PI):
        raise PhaseOutOfRange("a line phase difference reached 90 degrees")
    if len(n.pq) == 0:
        raise UnsupportedTopology("network has no PQ buses; the matrix is empty")
    d_edge = s.rho[t] - s.rho[f]
    return SymMatrix(_assemble_lmi(n, d_edge, 1.0 / np.cos(te)))


def in_domain_C(n: Network, s: PFState, tol: float = DEFAULT_PSD_TOL) -> ConvexityCertificate:
    """Certificate of membership in the convexity domain.

    Out-of-range phases yield in_c=False rather than an error. The matrix
    test uses the closed-set convention: smallest eigenvalue down to
    -tol*(1 + max diagonal) still passes.
    """
    check_state(n, s)
    f, t = n.edges[:, 0], n.edges[:, 1]
    te = s.theta[f] - s.theta[t]
    phase_ok = bool(np.all(np.abs(te) <= HALF_PI))
    if len(n.pq) == 0:
        return ConvexityCertificate(in_c=phase_ok, phase_ok=phase_ok,
                                    lmi_min_eig=math.inf, tol_abs=0.0)
    active = _active_mask(n)
    if np.any(np.abs(te[active]) >= HALF_PI):
        return ConvexityCertificate(in_c=False, phase_ok=phase_ok,
                                    lmi_min_eig=-math.inf, tol_abs=0.0)
    inv_cos = np.ones(len(n.lines))
    inv_cos[active] = 1.0 / np.cos(te[active])
    lm = _assemble_lmi(n, s.rho[t] - s.rho[f], inv_cos)
    w, _ = sym_eigen(SymMatrix(lm))
    lmi_min = float(w[0])
    tol_abs = tol * (1.0 + float(np.max(np.abs(np.diag(lm)))))
    return ConvexityCertificate(in_c=phase_ok and lmi_min >= -tol_abs,
                                phase_ok=phase_ok, lmi_min_eig=lmi_min,
                                tol_abs=tol_abs)


def strictly_interior(n: Network, s: PFState, tol: float = DEFAULT_PSD_TOL,
                      phase_margin: float = 1e-6) -> bool:
    """Interior test: matrix eigenvalue clearly positive and every phase
    clearly below 90 degrees."""
    cert = in_domain_C(n, s, tol)
    f, t = n.edges[:, 0], n.edges[:, 1]
    te = s.theta[f] - s.theta[t]
    if np.any(np.abs(te) >= HALF_PI - phase_margin):
        return False
    return cert.lmi_min_eig > cert.tol_abs


@dataclass(frozen=True)
class DomainDSample:
    in_d: bool
    samples: int
    alphas: np.ndarray
    min_eigs: np.ndarray  # smallest Hessian eigenvalue at each checked alpha


def in_domain_D_sampled(n: Network, s: PFState, samples: int = 64,
                        tol: float = DEFAULT_PSD_TOL) -> DomainDSample:
    """Sampled test of the scaled-segment Hessian condition.

    Checks positive semidefiniteness of the full Hessian at alpha*(rho,
    theta) for alpha = k/samples, k = 0..samples, stopping at the first
    failure. This is a necessary check by sampling, not a certificate; on
    trees the matrix-domain test decides membership exactly instead.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    check_state(n, s)
    alphas = []
    min_eigs = []
    ok = True
    for k in range(samples + 1):
        alpha = k / samples
        sa = PFState(alpha * s.rho, alpha * s.theta)
        h = hessian(n, sa)
        w, _ = sym_eigen(h)
        scale = 1.0 + float(np.max(np.abs(np.diag(h.entries))))
        alphas.append(alpha)
        min_eigs.append(float(w[0]))
        if w[0] < -tol * scale:
            ok = False
            break
    return DomainDSample(in_d=ok, samples=samples,
                         alphas=np.array(alphas), min_eigs=np.array(min_eigs))


def lossy_in_domain(n: Network, s: PFState, tol: float = DEFAULT_PSD_TOL) -> ConvexityCertificate:
    """Domain certificate for a constant-ratio lossy network.

    The lossy Hessian is the lossless one scaled by kappa^2 + 1, so the
    domain conditions coincide with the lossless ones on the same
    susceptances; only the all-PQ topology requirement is extra.
    """
    if len(n.pv) > 0:
        raise UnsupportedTopology(
            "constant-ratio lossy model requires all non-slack buses to be PQ")
    if n.lossy_ratio is None:
        raise NotConstantRatio("line g/b ratios are not uniform")
    return in_domain_C(n, s, tol)


def matrix_convexity_gap(x1: float, y1: float, x2: float, y2: float,
                         lam: float) -> SymMatrix:
    """Loewner convexity gap of f(x, y) = (1/cos y) [[e^x, 1], [1, e^-x]].

    Returns lam*f(x1,y1) + (1-lam)*f(x2,y2) - f at the combined point;
    the matrix is positive semidefinite whenever |y1|, |y2| < pi/2.
    """
    for y in (y1, y2):
        if abs(y) > HALF_PI - 1e-6:
            raise PhaseOutOfRange("y arguments must stay below 90 degrees")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must lie in [0, 1]")

    def f(x, y):
        return np.array([[math.exp(x), 1.0], [1.0, math.exp(-x)]]) / math.cos(y)

    xm = lam * x1 + (1.0 - lam) * x2
    ym = lam * y1 + (1.0 - lam) * y2
    return SymMatrix(lam * f(x1, y1) + (1.0 - lam) * f(x2, y2) - f(xm, ym))


# ---------------------------------------------------------------------------
# operating-box phase bounds

@dataclass(frozen=True)
class PhaseBound:
    b_theta: float  # radians
    b_rho: float
    mode: str  # "exact-vertices" or "sampled"
    certified: bool
    samples: int = 0
    seed: int = 0

    @property
    def b_theta_deg(self) -> float:
        return math.degrees(self.b_theta)


def _box_samples(n: Network, log_ratio: float, samples: int,
                 seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Probe points of the operating box for the sampled estimate.

    Each sample is (d, phi): per-line ratio exponents d_e = rho_to -
    rho_from and per-line phase fractions phi_e in [-1, 1] of the phase
    budget under test. The deterministic battery worst-cases one line at a
    time (both ratio directions, that line's phase at the budget, the rest
    nominal); the random points draw bus profiles and rescale them onto
    the box boundary.
    """
    f, t = n.edges[:, 0], n.edges[:, 1]
    active = np.flatnonzero(_active_mask(n))
    out: list[tuple[np.ndarray, np.ndarray]] = []
    m = len(n.lines)
    for k in active:
        for sgn in (1.0, -1.0):
            d = np.zeros(m)
            d[k] = sgn * log_ratio
            phi = np.zeros(m)
            phi[k] = 1.0
            out.append((d, phi))
    rng = np.random.default_rng(seed)
    npq = len(n.pq)
    nns = len(n.ns)
    while len(out) < samples:
        rho = np.zeros(n.n_bus)
        rho[n.pq] = rng.uniform(-log_ratio, log_ratio, npq)
        d = rho[t] - rho[f]
        worst = float(np.max(np.abs(d))) if m else 0.0
        if worst > log_ratio > 0:
            d *= log_ratio / worst
        th = np.zeros(n.n_bus)
        th[n.ns] = rng.uniform(-1.0, 1.0, nns)
        phi = th[f] - th[t]
        top = float(np.max(np.abs(phi))) if m else 0.0
        if top > 0:
            phi /= top
        out.append((d, phi))
    return out


def _diag_line_ok(n: Network, d: np.ndarray, phi: np.ndarray,
                  b_theta: float) -> bool:
    """Fixed-neighbor diagonal test at a box sample.

    For every PQ bus: 2 B_i >= sum over its lines of B_e e^{u}/cos(theta).
    This is the domain condition when no two PQ buses are adjacent; on
    meshed networks it is the per-line operational criterion behind the
    sampled (non-certifying) phase budgets.
    """
    f, t = n.edges[:, 0], n.edges[:, 1]
    inv_cos = 1.0 / np.cos(phi * b_theta)
    load = np.zeros(n.n_bus)
    np.add.at(load, f, n.b * np.exp(d) * inv_cos)
    np.add.at(load, t, n.b * np.exp(-d) * inv_cos)
    return bool(np.all(load[n.pq] <= 2.0 * n.b_total[n.pq]))


def max_phase_bound(n: Network, b_rho: float, mode: str = "auto",
                    samples: int = 10000, seed: int = 0,
                    resolution_deg: float = 0.1,
                    tol: float = DEFAULT_PSD_TOL) -> PhaseBound:
    """Phase budget b_theta for the per-line operating box at ratio b_rho.

    Exact mode is a certificate: the domain matrix is Loewner-concave in
    the box variables and monotone in each per-line 1/cos(theta), so
    checking positive semidefiniteness at every ratio sign pattern with all
    phases at the budget covers the whole box (conservative on meshes,
    exact on trees). It is only feasible up to 12 matrix-relevant lines.

    Sampled mode is a non-certifying operational estimate: one line at a
    time is pushed to its ratio/phase corner (plus random box profiles) and
    judged by the fixed-neighbor diagonal criterion. Full box certification
    is hopeless at practical ratios - a single bus sagged b_rho below all
    its neighbors already leaves the domain at zero phase difference on
    realistic networks - so the estimate deliberately measures per-line
    headroom around the nominal profile instead, and says so via
    certified=False.
    """
    if b_rho < 1.0:
        raise DomainError(f"b_rho must be >= 1, got {b_rho}")
    if mode not in ("auto", "exact-vertices", "sampled"):
        raise ValueError(f"unknown mode {mode!r}")
    if len(n.pq) == 0:
        # No matrix condition at all; any phases below 90 degrees qualify.
        return PhaseBound(b_theta=HALF_PI - math.radians(resolution_deg),
                          b_rho=b_rho, mode="exact-vertices", certified=True)

    active = np.flatnonzero(_active_mask(n))
    log_ratio = math.log(b_rho)
    if mode == "auto":
        mode = "exact-vertices" if len(active) <= 12 else "sampled"

    if mode == "exact-vertices":
        if len(active) > 20:
            raise DomainError("too many matrix-relevant lines for exact mode")
        patterns = []
        for bits in range(1 << len(active)):
            d = np.zeros(len(n.lines))
            for pos, k in enumerate(active):
                d[k] = log_ratio if bits >> pos & 1 else -log_ratio
            patterns.append(d)
        n_used = len(patterns)

        def box_ok(b_theta: float) -> bool:
            inv_cos = np.full(len(n.lines), 1.0 / math.cos(b_theta))
            for d in patterns:
                if not cholesky_psd(SymMatrix(_assemble_lmi(n, d, inv_cos)),
                                    tol).psd:
                    return False
            return True

        certified = True
    else:
        probe = _box_samples(n, log_ratio, samples, seed)
        n_used = len(probe)

        def box_ok(b_theta: float) -> bool:
            return all(_diag_line_ok(n, d, phi, b_theta) for d, phi in probe)

        certified = False

    res = math.radians(resolution_deg)
    lo, hi = 0.0, HALF_PI - 1e-9
    if not box_ok(lo):
        return PhaseBound(b_theta=0.0, b_rho=b_rho, mode=mode,
                          certified=certified, samples=n_used, seed=seed)
    if box_ok(hi):
        lo = hi
    while hi - lo > res:
        mid = 0.5 * (lo + hi)
        if box_ok(mid):
            lo = mid
        else:
            hi = mid
    return PhaseBound(b_theta=lo, b_rho=b_rho, mode=mode, certified=certified,
                      samples=n_used, seed=seed)
