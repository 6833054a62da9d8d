"""Closed-loop analysis of the horizon-1 unconstrained controller.

With ``Delta^k`` the vector of broadcast slot-1 deviations, the network evolves as

    Delta^{k+1}     = (I - h^2 a/2 Lrw) Delta^k + (h - h^2 b/2) Delta_dot^k + (h^2 a/2 - 1) alpha^{k+1}
    Delta_dot^{k+1} = -h a Lrw Delta^k      + (1 - h b) Delta_dot^k     + h a alpha^{k+1}

where ``Lrw = D^{-1} L``.  In eigenvector coordinates each Laplacian mode
decouples into a 2x2 recursion driven by ``Q_i`` and ``B``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import SpectralDecomposition
from .mission import GammaBounds
from .solver import GainPair, gains as compute_gains

GELFAND_KMAX = 10_000
DEFAULT_MARGIN = 1e-3


class CertificateError(ValueError):
    """Raised when a quantity requires a valid certificate and none is available."""


@dataclass(frozen=True)
class ModeMatrix:
    q: np.ndarray
    b: np.ndarray
    lam: float


def mode_matrix(g: GainPair, h: float, lam: float) -> ModeMatrix:
    a, b = g.a, g.b
    q = np.array([
        [1.0 - 0.5 * h * h * a * lam, h - 0.5 * h * h * b],
        [-h * a * lam, 1.0 - h * b],
    ])
    B = np.array([0.5 * a * h * h - 1.0, a * h])
    return ModeMatrix(q, B, float(lam))


def mode_matrices(g: GainPair, h: float, spectral: SpectralDecomposition) -> list[ModeMatrix]:
    """One mode matrix per Laplacian eigenvalue, ascending."""
    return [mode_matrix(g, h, lam) for lam in spectral.eigenvalues]


def trace_formula(g: GainPair, h: float, lam: float) -> float:
    return 2.0 - h * g.b - 0.5 * h * h * g.a * lam


def det_formula(g: GainPair, h: float, lam: float) -> float:
    return 1.0 - h * g.b + 0.5 * h * h * g.a * lam


def det_formula_weights(weights, h: float, lam: float) -> float:
    """Determinant written directly in the cost weights."""
    w1, w2, w3 = weights
    return (w3 + w1 * h ** 4 / 4.0 * (lam - 1.0)) / (w3 + w2 * h * h + w1 * h ** 4 / 4.0)


def spectral_radius(m: ModeMatrix) -> float:
    """Closed-form spectral radius of a 2x2 mode matrix."""
    tr = m.q[0, 0] + m.q[1, 1]
    det = m.q[0, 0] * m.q[1, 1] - m.q[0, 1] * m.q[1, 0]
    # tr^2 - 4 det without the cancellation of two numbers near 4
    disc = (m.q[0, 0] - m.q[1, 1]) ** 2 + 4.0 * m.q[0, 1] * m.q[1, 0]
    if disc < 0.0:
        return math.sqrt(det)
    return 0.5 * (abs(tr) + math.sqrt(disc))


def zero_mode_rate(g: GainPair, h: float) -> float:
    """``q = 1 - h b``, the decay factor of the common rate mode."""
    return 1.0 - h * g.b


def gelfand_constant(Q: np.ndarray, r: float, kmax: int = GELFAND_KMAX) -> float:
    """``max_{0 <= k <= kmax} ||Q^k||_inf / r^k`` by renormalized powers."""
    M = np.eye(Q.shape[0])
    best = 1.0
    Qs = Q / r
    for _ in range(kmax):
        M = Qs @ M
        nrm = np.abs(M).sum(axis=1).max()
        if nrm > best:
            best = nrm
        elif nrm < 1.0:
            # submultiplicativity: every later power is bounded by nrm^m * best
            break
    return float(best)


def inf_norm(M: np.ndarray) -> float:
    M = np.atleast_2d(M)
    return float(np.abs(M).sum(axis=1).max())


@dataclass
class ConvergenceCertificate:
    valid: bool
    h: float
    nu: float
    gains: GainPair
    eigenvalues: np.ndarray
    rho: np.ndarray
    r_h: float
    C: np.ndarray
    C_inf: float
    q: float
    P: np.ndarray
    F: np.ndarray
    V_norm: float
    V_inv_norm: float
    B_norm: float
    offending: list = field(default_factory=list)
    message: str = ""

    def to_json(self) -> dict:
        return {
            "valid": self.valid,
            "h": self.h,
            "nu": self.nu,
            "a_h": self.gains.a,
            "b_h": self.gains.b,
            "eigenvalues": [float(x) for x in self.eigenvalues],
            "rho": [float(x) for x in self.rho],
            "r_h": self.r_h,
            "C": [float(x) if math.isfinite(x) else None for x in self.C],
            "C_inf": self.C_inf,
            "q": self.q,
            "offending": self.offending,
            "message": self.message,
        }


def _zero_mode_split(Q1: np.ndarray, q: float) -> tuple[np.ndarray, np.ndarray]:
    I = np.eye(2)
    P = (Q1 - q * I) / (1.0 - q)
    F = (I - Q1) / (1.0 - q)
    return P, F


def certify(spectral: SpectralDecomposition, g: GainPair, h: float, nu: float,
            margin: float = DEFAULT_MARGIN, kmax: int = GELFAND_KMAX) -> ConvergenceCertificate:
    """Certify exponential convergence of the horizon-1 loop at step ``h``.

    Invalid when a nonzero mode has ``rho >= 1`` or when ``q = 1 - h b`` is
    not in ``(0, 1)``; offending modes are listed with their eigenvalue.
    """
    if nu <= 0:
        raise ValueError(f"disturbance decay rate nu must be positive, got {nu}")
    mats = mode_matrices(g, h, spectral)
    rho = np.array([spectral_radius(m) for m in mats])
    lam = spectral.eigenvalues
    q = zero_mode_rate(g, h)
    offending = []
    for i in range(1, len(lam)):
        if rho[i] >= 1.0:
            offending.append({"mode": i, "lambda": float(lam[i]), "rho": float(rho[i])})
    if not (0.0 < q < 1.0):
        offending.append({"mode": 0, "lambda": 0.0, "rho": float(abs(q)), "q": float(q)})
    V = spectral.eigenvectors
    Vn, Vin = inf_norm(V), inf_norm(spectral.inverse_eigenvectors)
    Bn = inf_norm(mats[0].b[:, None])
    P, F = _zero_mode_split(mats[0].q, q) if q != 1.0 else (np.eye(2), np.zeros((2, 2)))
    if offending:
        names = ", ".join(
            f"mode {o['mode']} (lambda={o['lambda']:.6g})" for o in offending
        )
        return ConvergenceCertificate(
            False, h, nu, g, lam, rho, math.nan, np.full(len(lam), math.nan), math.nan, q, P, F,
            Vn, Vin, Bn, offending,
            f"step h={h:g} not certified: {names}; try a smaller h",
        )
    lower = max(rho[1:].max(initial=0.0), math.exp(-nu * h), q)
    r = lower + margin
    if r >= 1.0:
        r = 0.5 * (lower + 1.0)
    C = np.ones(len(lam))
    C[0] = math.nan
    for i in range(1, len(lam)):
        C[i] = gelfand_constant(mats[i].q, r, kmax)
    C_inf = float(np.nanmax(C)) if len(lam) > 1 else 1.0
    return ConvergenceCertificate(True, h, nu, g, lam, rho, r, C, C_inf, q, P, F, Vn, Vin, Bn)


def _stability_predicate(spectral: SpectralDecomposition, weights, h: float) -> bool:
    g = compute_gains(*weights, h)
    for lam in spectral.eigenvalues[1:]:
        if spectral_radius(mode_matrix(g, h, lam)) >= 1.0:
            return False
    q = zero_mode_rate(g, h)
    return 0.0 < q < 1.0


def h_max(spectral: SpectralDecomposition, weights, nu: float = 1.0, tolerance: float = 1e-6) -> float:
    """Largest step for which the certificate hypotheses hold, by bisection.

    ``nu`` does not enter the predicate (any ``r_h`` above ``exp(-nu h)`` works)
    and is accepted for interface symmetry with :func:`certify`.
    """
    lo = 1e-6
    if not _stability_predicate(spectral, weights, lo):
        raise CertificateError(f"stability predicate fails already at h={lo}")
    hi = 2.0 * lo
    while _stability_predicate(spectral, weights, hi):
        lo, hi = hi, 2.0 * hi
        if hi > 1e9:
            raise CertificateError("no upper stability limit found below h=1e9")
    while hi - lo > tolerance * lo:
        mid = 0.5 * (lo + hi)
        if _stability_predicate(spectral, weights, mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def h_max_closed_form(weights) -> float:
    """``(4 w3 / w1)^{1/4}``: the step at which ``1 - h b`` reaches zero."""
    w1, _, w3 = weights
    return (4.0 * w3 / w1) ** 0.25


def closed_loop_matrix(spectral: SpectralDecomposition, g: GainPair, h: float) -> tuple[np.ndarray, np.ndarray]:
    """``(A, E)`` with ``x^{k+1} = A x^k + E alpha^{k+1}`` and ``x = [Delta; Delta_dot]``."""
    Lrw = spectral.random_walk_laplacian
    N = Lrw.shape[0]
    I = np.eye(N)
    a, b = g.a, g.b
    A = np.block([
        [I - 0.5 * h * h * a * Lrw, (h - 0.5 * h * h * b) * I],
        [-h * a * Lrw, (1.0 - h * b) * I],
    ])
    E = np.vstack([(0.5 * h * h * a - 1.0) * I, a * h * I])
    return A, E


@dataclass
class ClosedLoopRun:
    delta: np.ndarray
    rate: np.ndarray
    delta_modal: np.ndarray
    rate_modal: np.ndarray


def propagate_closed_loop(spectral: SpectralDecomposition, g: GainPair, h: float, delta0, rate0,
                          alpha=None, steps: int = 100) -> ClosedLoopRun:
    """Iterate the network recursion for ``steps`` steps.

    ``alpha[k - 1]`` is the correction injected on the transition to step ``k``;
    ``None`` means no correction.  Row ``k`` of the outputs holds step ``k``.
    """
    A, E = closed_loop_matrix(spectral, g, h)
    N = spectral.n
    if alpha is None:
        alpha = np.zeros((steps, N))
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape[0] < steps:
        raise ValueError(f"alpha sequence has {alpha.shape[0]} rows, need {steps}")
    x = np.concatenate([np.asarray(delta0, dtype=float), np.asarray(rate0, dtype=float)])
    out = np.empty((steps + 1, 2 * N))
    out[0] = x
    for k in range(steps):
        x = A @ x + E @ alpha[k]
        out[k + 1] = x
    Vinv = spectral.inverse_eigenvectors
    d, r = out[:, :N], out[:, N:]
    return ClosedLoopRun(d, r, d @ Vinv.T, r @ Vinv.T)


@dataclass
class FeasibilityMargins:
    valid: bool
    S1: float
    S2: float
    rhs_u: np.ndarray
    rhs_rate: np.ndarray
    margin_u: np.ndarray
    margin_rate: np.ndarray
    nu_h: float
    d_h: float
    message: str = ""

    @property
    def certified_box(self) -> tuple[float, float]:
        """Initial-norm and disturbance bounds that are jointly sufficient."""
        return 0.5 * self.nu_h, 0.5 * self.d_h

    def to_json(self) -> dict:
        return {
            "valid": self.valid,
            "S1": self.S1,
            "S2": self.S2,
            "rhs_u": [float(x) for x in self.rhs_u],
            "rhs_rate": [float(x) for x in self.rhs_rate],
            "margin_u": [float(x) for x in self.margin_u],
            "margin_rate": [float(x) for x in self.margin_rate],
            "nu_h": self.nu_h,
            "d_h": self.d_h,
            "certified_box": list(self.certified_box),
            "message": self.message,
        }


def feasibility_margins(cert: ConvergenceCertificate, bounds: GammaBounds, d: float, init_norm: float,
                        n_agents: int | None = None) -> FeasibilityMargins:
    """Sufficient conditions under which the unconstrained law never meets a bound.

    ``init_norm`` is ``max(||Delta^0||_inf, ||Delta_dot^0||_inf)`` and ``d`` the
    disturbance amplitude.  The intercepts ``nu_h`` and ``d_h`` are each
    sufficient alone; together use :attr:`FeasibilityMargins.certified_box`.
    """
    if not cert.valid:
        raise CertificateError("feasibility margins need a valid convergence certificate")
    n = n_agents if n_agents is not None else len(cert.eigenvalues)
    a, b = cert.gains.a, cert.gains.b
    A1 = cert.C_inf * cert.V_inv_norm
    decay = math.exp(-cert.nu * cert.h)
    A2 = cert.C_inf * cert.B_norm * cert.V_inv_norm * decay / (cert.r_h - decay)
    S1 = 2.0 * cert.V_norm * A1
    S2 = 2.0 * cert.V_norm * A2
    dmin, dmax = bounds.delta_rate_min, bounds.delta_rate_max
    rate_bar = max(abs(dmin), dmax)
    R_u = bounds.accel_max - b * rate_bar
    R_r = b * min(dmax, -dmin)
    eta = a * (S1 * init_norm + S2 * d)
    rhs_u = np.full(n, R_u - a * d)
    rhs_r = np.full(n, R_r - a * d)
    margin_u = rhs_u - eta
    margin_r = rhs_r - eta
    R = min(R_u, R_r)
    if R <= 0.0:
        return FeasibilityMargins(
            False, S1, S2, rhs_u, rhs_r, margin_u, margin_r, 0.0, 0.0,
            f"sufficient-condition right-hand side {R:.6g} <= 0; h too large for the bounds",
        )
    nu_h = R / (a * S1)
    d_h = R / (a * (S2 + 1.0))
    ok = bool(margin_u.min() > 0.0 and margin_r.min() > 0.0)
    msg = "" if ok else "given initial norm and disturbance exceed the certified region"
    return FeasibilityMargins(ok, S1, S2, rhs_u, rhs_r, margin_u, margin_r, nu_h, d_h, msg)


def fit_decay_rate(values, tail_fraction: float = 0.5) -> float:
    """Least-squares slope of ``log(values)`` per step over the tail of the sequence."""
    v = np.asarray(values, dtype=float)
    start = int(len(v) * (1.0 - tail_fraction))
    k = np.arange(start, len(v))
    y = v[start:]
    mask = y > 0
    if mask.sum() < 2:
        raise ValueError("need at least two positive samples in the tail to fit a rate")
    slope, _ = np.polyfit(k[mask], np.log(y[mask]), 1)
    return float(slope)


def fitted_envelope(values, r: float) -> float:
    """Smallest ``M`` with ``values[k] <= M r^k`` for every recorded ``k``."""
    v = np.abs(np.asarray(values, dtype=float))
    k = np.arange(len(v))
    return float(np.max(v / r ** k))
