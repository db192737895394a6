"""Rigid-body dynamics of a planar two-link arm plus unknown-torque models.

Joint angles are measured from the positive x-axis, gravity acts along -y.
The equations of motion are H(q) qdd + C(q, qd) qd + g(q) + kappa(x) = tau,
where kappa is an optional unknown torque acting on the joints and
x = (qdd, qd, q) is the stacked state-acceleration vector. The Coriolis
matrix uses the Christoffel parameterization, so dH/dt - 2C is
skew-symmetric and C(q, a) b = C(q, b) a.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import gp
from .errors import NumericalError
from .stability import SystemBounds


class TwoLinkPlanarArm:
    """Point masses at the link centers, massless frictionless joints."""

    n = 2

    def __init__(self, m1=1.0, m2=1.0, l1=1.0, l2=1.0, lc1=0.5, lc2=0.5, gravity=10.0):
        self.m1 = float(m1)
        self.m2 = float(m2)
        self.l1 = float(l1)
        self.l2 = float(l2)
        self.lc1 = float(lc1)
        self.lc2 = float(lc2)
        self.gravity = float(gravity)
        if min(self.m1, self.m2, self.l1, self.l2, self.lc1, self.lc2) <= 0.0:
            raise ValueError("masses and lengths must be positive")

    def inertia(self, q):
        """Inertia matrix H(q), symmetric positive definite, shape (2, 2)."""
        c2 = np.cos(q[1])
        h11 = self.lc1**2 * self.m1 + self.m2 * (
            self.l1**2 + 2.0 * self.l1 * self.lc2 * c2 + self.lc2**2
        )
        h12 = self.lc2 * self.m2 * (self.l1 * c2 + self.lc2)
        h22 = self.lc2**2 * self.m2
        return np.array([[h11, h12], [h12, h22]])

    def coriolis(self, q, qd):
        """Coriolis/centrifugal matrix C(q, qd), shape (2, 2)."""
        h = -self.m2 * self.l1 * self.lc2 * np.sin(q[1])
        return np.array([[h * qd[1], h * (qd[0] + qd[1])], [-h * qd[0], 0.0]])

    def gravity_torque(self, q):
        """Gravity torque g(q), shape (2,)."""
        c1 = np.cos(q[0])
        c12 = np.cos(q[0] + q[1])
        g1 = self.gravity * (
            self.lc1 * self.m1 * c1 + self.m2 * (self.l1 * c1 + self.lc2 * c12)
        )
        g2 = self.gravity * self.lc2 * self.m2 * c12
        return np.array([g1, g2])

    # Batched variants used by the sampling-based bound estimator.

    def inertia_batch(self, q):
        q = np.atleast_2d(q)
        c2 = np.cos(q[:, 1])
        h11 = self.lc1**2 * self.m1 + self.m2 * (
            self.l1**2 + 2.0 * self.l1 * self.lc2 * c2 + self.lc2**2
        )
        h12 = self.lc2 * self.m2 * (self.l1 * c2 + self.lc2)
        h22 = np.full_like(c2, self.lc2**2 * self.m2)
        out = np.empty((q.shape[0], 2, 2))
        out[:, 0, 0] = h11
        out[:, 0, 1] = h12
        out[:, 1, 0] = h12
        out[:, 1, 1] = h22
        return out

    def coriolis_batch(self, q, qd):
        q = np.atleast_2d(q)
        qd = np.atleast_2d(qd)
        h = -self.m2 * self.l1 * self.lc2 * np.sin(q[:, 1])
        out = np.zeros((q.shape[0], 2, 2))
        out[:, 0, 0] = h * qd[:, 1]
        out[:, 0, 1] = h * (qd[:, 0] + qd[:, 1])
        out[:, 1, 0] = -h * qd[:, 0]
        return out

    def params_array(self):
        """Plant constants packed for the compiled simulation kernel."""
        return np.array(
            [self.m1, self.m2, self.l1, self.l2, self.lc1, self.lc2, self.gravity]
        )


@dataclass(frozen=True)
class UnknownDynamics:
    """Unknown joint torque kappa(x), x = (qdd, qd, q) stacked, shape (3n,).

    ``provenance`` records how the torque was constructed (for reports only).
    ``rkhs_norms`` is set when the construction admits an exact reproducing
    kernel norm per output, else None.
    """

    func: Callable[[np.ndarray], np.ndarray]
    n: int
    provenance: str
    rkhs_norms: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=float))


def zero_dynamics(n):
    """kappa identically zero."""
    zero = np.zeros(n)
    return UnknownDynamics(func=lambda x: zero, n=n, provenance="zero")


def sine_abs_torque(qd, q):
    """Benchmark nonlinearity: mixes viscous, sinusoidal and kink terms."""
    return np.array(
        [-qd[0] + 2.0 * np.sin(q[1]) + abs(q[0]), -qd[1] + 2.0 * np.sin(q[1])]
    )


def sine_abs_dynamics(n=2):
    """kappa given by the analytic benchmark nonlinearity (depends on qd, q)."""
    if n != 2:
        raise ValueError("the benchmark nonlinearity is defined for n = 2")

    def func(x):
        qd = x[n : 2 * n]
        q = x[2 * n :]
        return sine_abs_torque(qd, q)

    return UnknownDynamics(func=func, n=n, provenance="sine_abs")


def gp_mean_dynamics(
    source,
    n,
    qdot_box,
    q_box,
    n_points=50,
    seed=7,
    noise_variance=1e-8,
    hyperparameters=None,
    n_restarts=5,
    max_iter=100,
):
    """kappa as the posterior mean of a GP fitted to samples of ``source``.

    ``source(qd, q) -> (n,)`` is sampled at ``n_points`` inputs drawn
    uniformly from the (qd, q) box; an SE-ARD GP is conditioned on the
    samples and its posterior mean becomes the unknown torque. With
    ``hyperparameters`` given (one Hyperparameters, or one per output) the
    kernel is fixed, which controls how wiggly the resulting torque is;
    otherwise the kernel is likelihood-optimized. The construction is
    deterministic per seed, depends only on (qd, q), and has an exactly
    computable reproducing kernel norm per output: sqrt(alpha^T K alpha)
    with alpha the cached interpolation coefficients and K the noise-free
    Gram matrix.
    """
    qdot_box = np.asarray(qdot_box, dtype=float)
    q_box = np.asarray(q_box, dtype=float)
    if qdot_box.shape != (n, 2) or q_box.shape != (n, 2):
        raise ValueError("qdot_box and q_box must have shape (n, 2)")
    rng = np.random.default_rng(seed)
    lows = np.concatenate([qdot_box[:, 0], q_box[:, 0]])
    highs = np.concatenate([qdot_box[:, 1], q_box[:, 1]])
    inputs = rng.uniform(lows, highs, size=(n_points, 2 * n))
    outputs = np.array([source(row[:n], row[n:]) for row in inputs])
    data = gp.TrainingSet(inputs=inputs, outputs=outputs)
    if hyperparameters is not None:
        if isinstance(hyperparameters, gp.Hyperparameters):
            hyperparameters = [hyperparameters] * n
        params = list(hyperparameters)
        if len(params) != n or any(p.input_dim != 2 * n for p in params):
            raise ValueError("need one set of 2n-dimensional hyperparameters per output")
    else:
        init = gp.Hyperparameters(
            signal_variance=max(float(np.var(outputs)), 1e-2),
            lengthscales=np.ones(2 * n),
            noise_variance=noise_variance,
        )
        params = [
            gp.optimize_hyperparameters(
                data, init, i, n_restarts=n_restarts, seed=seed + i, max_iter=max_iter
            )
            for i in range(n)
        ]
    model = gp.GPModel(data, params)
    norms = np.zeros(n)
    for i, p in enumerate(params):
        gram = gp.kernel_matrix(inputs, inputs, p)
        alpha = model._alpha[i]
        norms[i] = np.sqrt(max(float(alpha @ gram @ alpha), 0.0))

    def func(x):
        return model.predict(x[n:]).mean

    return UnknownDynamics(
        func=func,
        n=n,
        provenance="gp_mean",
        rkhs_norms=norms,
        metadata={
            "model": model,
            "seed": int(seed),
            "n_points": int(n_points),
            "hyperparameters": [p.to_dict() for p in params],
        },
    )


def forward_dynamics(model, q, qd, tau, kappa=None, qdd_prev=None):
    """Joint accelerations qdd = H^{-1} (tau - C qd - g - kappa).

    ``kappa`` takes the stacked (qdd, qd, q) vector; its acceleration slot is
    filled with ``qdd_prev`` (zeros when absent) because the instantaneous
    acceleration is not known before solving.
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    tau = np.asarray(tau, dtype=float)
    rhs = tau - model.coriolis(q, qd) @ qd - model.gravity_torque(q)
    if kappa is not None:
        pad = np.zeros_like(q) if qdd_prev is None else np.asarray(qdd_prev, dtype=float)
        rhs = rhs - kappa(np.concatenate([pad, qd, q]))
    try:
        return np.linalg.solve(model.inertia(q), rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"inertia matrix is singular at q = {q}") from exc


def residual_torque(model, q, qd, qdd, tau):
    """Torque unexplained by the nominal model: tau - (H qdd + C qd + g)."""
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    qdd = np.asarray(qdd, dtype=float)
    return (
        np.asarray(tau, dtype=float)
        - model.inertia(q) @ qdd
        - model.coriolis(q, qd) @ qd
        - model.gravity_torque(q)
    )


def estimate_bounds(model, q_box, qdot_box, n_grid=21, n_random=10000, seed=0):
    """Sampled inertia eigenvalue bounds and Coriolis gain over a box.

    Scans a per-joint grid (n_grid per axis) plus ``n_random`` uniform
    samples of (q, qd) and returns a SystemBounds with h1, h2 and k_c set
    to the sampled extrema: h1 <= eig(H) <= h2 and ||C(q, qd)|| <= k_c
    ||qd|| (spectral norm). Gain and trajectory fields stay zero; callers
    fill them via dataclasses.replace.
    """
    q_box = np.asarray(q_box, dtype=float)
    qdot_box = np.asarray(qdot_box, dtype=float)
    n = q_box.shape[0]
    axes = [np.linspace(q_box[i, 0], q_box[i, 1], n_grid) for i in range(n)]
    mesh = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
    rng = np.random.default_rng(seed)
    q_rand = rng.uniform(q_box[:, 0], q_box[:, 1], size=(n_random, n))
    q_all = np.vstack([mesh, q_rand])
    qd_rand = rng.uniform(qdot_box[:, 0], qdot_box[:, 1], size=(q_all.shape[0], n))
    # unit velocity directions: C is linear in qd, so ||C(q, u)|| bounds k_c
    norms = np.linalg.norm(qd_rand, axis=1)
    norms[norms == 0.0] = 1.0
    qd_unit = qd_rand / norms[:, None]

    if hasattr(model, "inertia_batch"):
        h_stack = model.inertia_batch(q_all)
        c_stack = model.coriolis_batch(q_all, qd_unit)
    else:
        h_stack = np.array([model.inertia(qi) for qi in q_all])
        c_stack = np.array(
            [model.coriolis(qi, ui) for qi, ui in zip(q_all, qd_unit)]
        )
    eigs = np.linalg.eigvalsh(h_stack)
    h1 = float(eigs[:, 0].min())
    h2 = float(eigs[:, -1].max())
    k_c = float(np.linalg.svd(c_stack, compute_uv=False)[:, 0].max())
    return SystemBounds(h1=h1, h2=h2, k_c=k_c)
