"""Lyapunov constants and probabilistic model-error bounds for the controller.

Everything here works on plain arrays and scalars estimated elsewhere:
inertia eigenvalue bounds, Coriolis gain, gain-schedule floors/ceilings,
desired-trajectory bounds, and the GP quantities (information gain, kernel
norms) that enter the high-probability error bound.
"""

import math

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import NumericalError


@dataclass(frozen=True)
class SystemBounds:
    """Constants the convergence analysis consumes.

    h1/h2 bound the inertia eigenvalues, k_c the Coriolis gain
    (||C(q, qd)|| <= k_c ||qd||). k_d1/k_p1 are gain floors, k_d2/k_p2 gain
    ceilings. qd_max / qd_dot_max bound the desired trajectory and its
    velocity, delta_bar the model-error bound over the operating domain.
    """

    h1: float
    h2: float
    k_c: float
    k_d1: float = 0.0
    k_d2: float = 0.0
    k_p1: float = 0.0
    k_p2: float = 0.0
    qd_max: float = 0.0
    qd_dot_max: float = 0.0
    delta_bar: float = 0.0


@dataclass(frozen=True)
class ErrorBoundParams:
    """Inputs of the high-probability bound: per-output kernel norms and
    information gains, the training sample count, and the risk delta."""

    rkhs_norms: np.ndarray
    info_gains: np.ndarray
    sample_count: int
    delta: float

    def __post_init__(self):
        norms = np.atleast_1d(np.asarray(self.rkhs_norms, dtype=float))
        gains = np.atleast_1d(np.asarray(self.info_gains, dtype=float))
        object.__setattr__(self, "rkhs_norms", norms)
        object.__setattr__(self, "info_gains", gains)
        if norms.shape != gains.shape:
            raise ValueError("rkhs_norms and info_gains must have matching shapes")
        if np.any(norms < 0.0) or np.any(gains < 0.0):
            raise ValueError("rkhs_norms and info_gains must be non-negative")
        if self.sample_count < 0:
            raise ValueError("sample_count must be non-negative")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")


@dataclass(frozen=True)
class EpsilonInterval:
    """Open interval (lower, upper) of feasible epsilon values."""

    lower: float
    upper: float

    @property
    def is_empty(self):
        return not self.upper > self.lower

    def contains(self, eps):
        return self.lower < eps < self.upper

    @property
    def midpoint(self):
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True)
class LyapunovConstants:
    """Constants of the ultimate-boundedness certificate."""

    epsilon: float
    epsilon2: float
    rho: float
    v1: float
    v2: float
    xi: float
    varrho: float
    v0: float
    c_lower: float
    ultimate_radius: float

    def to_dict(self):
        return {
            "epsilon": self.epsilon,
            "epsilon2": self.epsilon2,
            "rho": self.rho,
            "v1": self.v1,
            "v2": self.v2,
            "xi": self.xi,
            "varrho": self.varrho,
            "v0": self.v0,
            "c_lower": self.c_lower,
            "ultimate_radius": self.ultimate_radius,
        }


def information_gain(gram, noise_variance):
    """0.5 * log det(I + gram / noise_variance) for a PSD Gram matrix."""
    if not noise_variance > 0.0:
        raise ValueError("noise_variance must be positive")
    gram = np.asarray(gram, dtype=float)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1]:
        raise ValueError("gram must be square")
    if not np.allclose(gram, gram.T, atol=1e-10):
        raise ValueError("gram must be symmetric")
    m = gram.shape[0]
    sign, logdet = np.linalg.slogdet(np.eye(m) + gram / noise_variance)
    if sign <= 0.0 or not np.isfinite(logdet):
        raise NumericalError("information gain: I + K/sigma^2 is not positive definite")
    return 0.5 * float(logdet)


def greedy_information_gain(params, candidates, size, noise_variance, kernel_matrix):
    """Upper estimate of the maximum information gain over ``candidates``.

    Greedily grows a subset of ``size`` points, always adding the candidate
    with the largest current posterior variance; returns the accumulated
    0.5 * sum log(1 + var / noise_variance). ``kernel_matrix(a, b, params)``
    supplies the covariance function.
    """
    if not noise_variance > 0.0:
        raise ValueError("noise_variance must be positive")
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    b = candidates.shape[0]
    if size < 1 or size > b:
        raise ValueError("size must lie in [1, len(candidates)]")
    prior = kernel_matrix(candidates, candidates, params).diagonal().copy()
    var = prior.copy()
    solved = np.zeros((size, b))  # rows of L^{-1} K(selected, candidates)
    taken = np.zeros(b, dtype=bool)
    gain = 0.0
    for round_idx in range(size):
        pick = int(np.argmax(var))
        gain += 0.5 * math.log(1.0 + max(var[pick], 0.0) / noise_variance)
        cross = kernel_matrix(candidates[pick : pick + 1], candidates, params)[0]
        if round_idx == 0:
            diag = math.sqrt(prior[pick] + noise_variance)
            solved[0] = cross / diag
        else:
            head = solved[:round_idx, pick]
            diag_sq = prior[pick] + noise_variance - float(head @ head)
            diag = math.sqrt(max(diag_sq, 1e-300))
            solved[round_idx] = (cross - head @ solved[:round_idx]) / diag
        taken[pick] = True
        var = prior - np.sum(solved[: round_idx + 1] ** 2, axis=0)
        var[taken] = -np.inf  # grow a proper subset: no repeats
    return gain


def compute_beta(params):
    """Per-output scale of the high-probability model-error bound.

    beta_j = sqrt(2 ||kappa_j||_k^2
                  + 300 gamma_j ln^3((m + 1) / delta)).
    """
    log_term = math.log((params.sample_count + 1) / params.delta)
    return np.sqrt(
        2.0 * params.rkhs_norms**2 + 300.0 * params.info_gains * log_term**3
    )


def model_error_bound(beta, variance):
    """||beta^T Var^{1/2}||: Euclidean norm of (beta_j sqrt(var_j))_j."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    variance = np.atleast_1d(np.asarray(variance, dtype=float))
    if beta.shape != variance.shape:
        raise ValueError("beta and variance must have matching shapes")
    if np.any(beta < 0.0) or np.any(variance < 0.0):
        raise ValueError("beta and variance must be non-negative")
    return math.sqrt(float(np.sum(beta**2 * variance)))


def model_error_bound_batch(beta, variances):
    """Vectorized ``model_error_bound`` over rows of ``variances`` (b, n)."""
    beta = np.asarray(beta, dtype=float)
    variances = np.atleast_2d(np.asarray(variances, dtype=float))
    return np.sqrt(np.clip(variances, 0.0, None) @ beta**2)


def lyapunov_decrease_matrix(eps, kd, kp, inertia, coriolis):
    """Quadratic-form matrix whose negative definiteness certifies decay.

    A = [[-K_d + eps H,            (eps/2) (-K_d^T + C)],
         [(eps/2) (-K_d + C^T),    -eps K_p            ]]
    """
    kd = np.asarray(kd, dtype=float)
    kp = np.asarray(kp, dtype=float)
    inertia = np.asarray(inertia, dtype=float)
    coriolis = np.asarray(coriolis, dtype=float)
    top = np.hstack([-kd + eps * inertia, 0.5 * eps * (-kd.T + coriolis)])
    bottom = np.hstack([0.5 * eps * (-kd + coriolis.T), -eps * kp])
    return np.vstack([top, bottom])


def decrease_matrix_negative_definite(eps, kd, kp, inertia, coriolis):
    """(is_negative_definite, largest eigenvalue of the symmetric part)."""
    a = lyapunov_decrease_matrix(eps, kd, kp, inertia, coriolis)
    lam_max = float(np.linalg.eigvalsh(0.5 * (a + a.T))[-1])
    return lam_max < 0.0, lam_max


def decrease_matrix_negative_definite_schur(eps, kd, kp, inertia, coriolis):
    """Independent route: top-left block and its Schur complement.

    A < 0 iff -K_d + eps H < 0 and
    -eps K_p + (eps^2/4)(K_d - C^T)(K_d - eps H)^{-1}(K_d^T - C) < 0.
    """
    kd = np.asarray(kd, dtype=float)
    kp = np.asarray(kp, dtype=float)
    inertia = np.asarray(inertia, dtype=float)
    coriolis = np.asarray(coriolis, dtype=float)
    top_left = -kd + eps * inertia
    if float(np.linalg.eigvalsh(0.5 * (top_left + top_left.T))[-1]) >= 0.0:
        return False
    gap = kd - eps * inertia
    cross = kd.T - coriolis
    schur = -eps * kp + 0.25 * eps**2 * (cross.T @ np.linalg.solve(gap, cross))
    return float(np.linalg.eigvalsh(0.5 * (schur + schur.T))[-1]) < 0.0


def _check_bounds(bounds):
    if not 0.0 < bounds.h1 <= bounds.h2:
        raise ValueError("need 0 < h1 <= h2")
    if bounds.k_c < 0.0:
        raise ValueError("k_c must be non-negative")
    if not 0.0 < bounds.k_p1 <= bounds.k_p2:
        raise ValueError("need 0 < k_p1 <= k_p2")
    if not 0.0 < bounds.k_d1 <= bounds.k_d2:
        raise ValueError("need 0 < k_d1 <= k_d2")
    if bounds.qd_dot_max < 0.0:
        raise ValueError("qd_dot_max must be non-negative")


def epsilon_feasible(bounds, v0, eps2, max_iter=100, tol=1e-13):
    """Feasible open interval (0, eps_max) for the Lyapunov cross-term weight.

    eps must satisfy eps < k_p1/h2, eps < h1/h2 and
    eps < 2 k_d1 / (2 h2 + 2 k_p1 rho^2/(1+eps2)
                    + (8/3) k_c sqrt(2 V0 / (k_p1 - eps h2))),
    whose right side shrinks as eps grows. The boundary is resolved by a
    damped fixed-point iteration started at eps = 0; a non-convergent
    iteration yields the empty interval. When k_c = 0 or V0 = 0 the
    self-reference vanishes and the iteration settles immediately.
    """
    _check_bounds(bounds)
    if v0 < 0.0:
        raise ValueError("v0 must be non-negative")
    if not eps2 > 0.0:
        raise ValueError("eps2 must be positive")
    cap = min(bounds.k_p1 / bounds.h2, bounds.h1 / bounds.h2)
    rho = (1.0 + eps2) * (bounds.k_c * bounds.qd_dot_max + bounds.k_d2) / (
        2.0 * bounds.k_p1
    )
    denom_base = 2.0 * bounds.h2 + 2.0 * bounds.k_p1 * rho**2 / (1.0 + eps2)

    def shrink(eps):
        margin = bounds.k_p1 - eps * bounds.h2
        if margin <= 0.0:
            return 0.0
        extra = (8.0 / 3.0) * bounds.k_c * math.sqrt(2.0 * v0 / margin)
        return min(cap, 2.0 * bounds.k_d1 / (denom_base + extra))

    eps = 0.0
    for _ in range(max_iter):
        new = 0.5 * (eps + shrink(eps))
        if abs(new - eps) <= tol * max(1.0, abs(new)):
            return EpsilonInterval(0.0, new)
        eps = new
    return EpsilonInterval(0.0, 0.0)


def lyapunov_value(edot, e, inertia, kp_of_q, q_d, eps, tol=1e-8):
    """Lyapunov function value at tracking error (edot, e).

    V = 0.5 edot^T H edot + integral_0^e z^T K_p(z + q_d) dz
        + eps e^T H edot,
    with the integral taken along the straight segment from 0 to e;
    ``kp_of_q`` maps a joint position to the K_p diagonal there.
    """
    e = np.asarray(e, dtype=float)
    edot = np.asarray(edot, dtype=float)
    inertia = np.asarray(inertia, dtype=float)
    q_d = np.asarray(q_d, dtype=float)
    e_sq = e * e

    def integrand(s):
        return s * float(kp_of_q(q_d + s * e) @ e_sq)

    path_integral, _ = quad(integrand, 0.0, 1.0, epsabs=tol, epsrel=tol, limit=200)
    kinetic = 0.5 * float(edot @ inertia @ edot)
    cross = eps * float(e @ inertia @ edot)
    return kinetic + path_integral + cross


def convergence_constants(bounds, eps, eps2, v0, delta_bar):
    """Ultimate-boundedness constants for a fixed feasible eps.

    Raises ValueError when eps is infeasible for the given bounds (v1 <= 0,
    v2 <= 0, non-positive decay rate, or a non-positive lower quadratic
    bound).
    """
    _check_bounds(bounds)
    if not eps > 0.0:
        raise ValueError("eps must be positive")
    if not eps2 > 0.0:
        raise ValueError("eps2 must be positive")
    if v0 < 0.0 or delta_bar < 0.0:
        raise ValueError("v0 and delta_bar must be non-negative")
    margin = bounds.k_p1 - eps * bounds.h2
    if margin <= 0.0:
        raise ValueError("infeasible eps: k_p1 - eps h2 <= 0")
    drive = bounds.k_c * bounds.qd_dot_max + bounds.k_d2
    rho = (1.0 + eps2) * drive / (2.0 * bounds.k_p1)
    v1 = -eps * bounds.h2 + bounds.k_d1 - 0.5 * eps * rho * drive
    v2 = bounds.k_p1 * eps2 / (1.0 + eps2)
    if v1 <= 0.0 or v2 <= 0.0:
        raise ValueError("infeasible eps: v1 and v2 must be positive")
    sweep = math.sqrt(2.0 * v0 / margin)
    decay_num = min(eps * v2, v1 - (4.0 / 3.0) * eps * bounds.k_c * sweep)
    decay_den = max(eps * bounds.h2 + bounds.k_p2, (1.0 + eps) * bounds.h2)
    xi = (2.0 / 3.0) * decay_num / decay_den
    c_lower = min(bounds.k_p1 - eps * bounds.h2, bounds.h1 - eps * bounds.h2)
    if xi <= 0.0 or c_lower <= 0.0:
        raise ValueError("infeasible eps: non-positive decay rate or lower bound")
    varrho = delta_bar**2 / v1 + eps * delta_bar**2 / v2
    radius = math.sqrt(2.0 * varrho / (xi * c_lower))
    return LyapunovConstants(
        epsilon=eps,
        epsilon2=eps2,
        rho=rho,
        v1=v1,
        v2=v2,
        xi=xi,
        varrho=varrho,
        v0=v0,
        c_lower=c_lower,
        ultimate_radius=radius,
    )
