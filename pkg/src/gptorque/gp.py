"""Exact Gaussian process regression with squared-exponential ARD kernels.

Vector-valued targets are modelled as independent scalar GPs that share one
training set; each output dimension carries its own hyperparameters and its
own Cholesky factor of the regularized Gram matrix. Besides the usual
posterior mean/variance, the model exposes a variance marginalized onto a
subset of the input coordinates: the cross-covariance vector and the prior
term are evaluated with the reduced kernel (lengthscale subset), while the
factorized full-input Gram matrix is reused unchanged.
"""

import csv
import json
import math

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky
from scipy.linalg.lapack import dpotri
from scipy.optimize import minimize

from .errors import NumericalError

_LOG_2PI = math.log(2.0 * math.pi)

# Jitter ladder, relative to the signal variance: start tiny, escalate
# tenfold, give up at 1e-4 * sigma_f^2.
_JITTER_FIRST = 1e-10
_JITTER_LAST = 1e-4

# Box constraints for the optimizer, in log space.
_LOG_SIGNAL_BOUNDS = (math.log(1e-8), math.log(1e8))
_LOG_LENGTH_BOUNDS = (math.log(1e-3), math.log(1e3))
_LOG_NOISE_BOUNDS = (math.log(1e-10), math.log(1e4))


@dataclass(frozen=True)
class Hyperparameters:
    """SE-ARD kernel parameters for a single output dimension.

    Attributes
    ----------
    signal_variance : float
        Prior variance sigma_f^2, strictly positive.
    lengthscales : ndarray, shape (d,)
        Per-input-dimension lengthscales, strictly positive.
    noise_variance : float
        Observation noise variance sigma_n^2, non-negative.
    """

    signal_variance: float
    lengthscales: np.ndarray
    noise_variance: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        ls.setflags(write=False)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        if not self.signal_variance > 0.0:
            raise ValueError("signal_variance must be positive")
        if ls.ndim != 1 or ls.size == 0 or not np.all(ls > 0.0):
            raise ValueError("lengthscales must be a 1-D array of positive values")
        if self.noise_variance < 0.0:
            raise ValueError("noise_variance must be non-negative")

    @property
    def input_dim(self):
        return self.lengthscales.size

    def to_dict(self):
        return {
            "signal_variance": self.signal_variance,
            "lengthscales": [float(v) for v in self.lengthscales],
            "noise_variance": self.noise_variance,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            signal_variance=d["signal_variance"],
            lengthscales=np.asarray(d["lengthscales"], dtype=float),
            noise_variance=d["noise_variance"],
        )


@dataclass(frozen=True)
class TrainingSet:
    """Immutable regression data: one row per sample.

    ``inputs`` has shape (m, d), ``outputs`` shape (m, n). All entries must
    be finite. m = 0 is allowed and yields a prior-only model.
    """

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.inputs, dtype=float)).copy()
        y = np.atleast_2d(np.asarray(self.outputs, dtype=float)).copy()
        if x.shape[0] != y.shape[0]:
            raise ValueError(
                "inputs and outputs must have the same number of rows, got "
                f"{x.shape[0]} and {y.shape[0]}"
            )
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise ValueError("training data must be finite")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "outputs", y)

    @property
    def sample_count(self):
        return self.inputs.shape[0]

    @property
    def input_dim(self):
        return self.inputs.shape[1]

    @property
    def output_dim(self):
        return self.outputs.shape[1]

    def save_csv(self, path):
        """Write the set as CSV: input columns x0..x{d-1}, then y0..y{n-1}."""
        header = [f"x{i}" for i in range(self.input_dim)]
        header += [f"y{i}" for i in range(self.output_dim)]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for xi, yi in zip(self.inputs, self.outputs):
                writer.writerow([repr(float(v)) for v in xi] + [repr(float(v)) for v in yi])

    @classmethod
    def load_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            d = sum(1 for name in header if name.startswith("x"))
            n = len(header) - d
            if d == 0 or n == 0:
                raise ValueError(f"{path}: header must list x* columns then y* columns")
            rows = [[float(v) for v in row] for row in reader]
        data = np.asarray(rows, dtype=float).reshape(len(rows), d + n)
        return cls(inputs=data[:, :d], outputs=data[:, d:])


@dataclass(frozen=True)
class Prediction:
    """Posterior mean and variance per output dimension, both shape (n,)."""

    mean: np.ndarray
    variance: np.ndarray


def kernel(x, z, params):
    """SE-ARD covariance between two points.

    k(x, z) = sigma_f^2 * exp(-0.5 * sum_i (x_i - z_i)^2 / l_i^2)
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != z.shape or x.ndim != 1 or x.size != params.input_dim:
        raise ValueError("kernel arguments must be 1-D and match the lengthscale count")
    r = (x - z) / params.lengthscales
    return params.signal_variance * math.exp(-0.5 * float(r @ r))


def kernel_matrix(a, b, params):
    """Covariance matrix between row sets ``a`` (p, d) and ``b`` (q, d)."""
    a = np.atleast_2d(np.asarray(a, dtype=float)) / params.lengthscales
    b = np.atleast_2d(np.asarray(b, dtype=float)) / params.lengthscales
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return params.signal_variance * np.exp(-0.5 * sq)


def _inverse_from_cholesky(low, output_index):
    """Symmetric inverse of L L^T from its lower factor (LAPACK dpotri)."""
    inv, info = dpotri(low, lower=1)
    if info != 0:
        raise NumericalError(
            f"inversion from the Cholesky factor failed for output {output_index}",
            output_index=output_index,
        )
    return inv + np.tril(inv, -1).T


def _chol_jittered(k_reg, signal_variance, output_index):
    """Lower Cholesky factor of ``k_reg``, adding escalating jitter on failure.

    Returns (L, jitter_used). Raises NumericalError once the ladder tops out.
    """
    m = k_reg.shape[0]
    jitter = 0.0
    while True:
        try:
            ka = k_reg if jitter == 0.0 else k_reg + jitter * np.eye(m)
            return cholesky(ka, lower=True), jitter
        except np.linalg.LinAlgError:
            pass
        if jitter == 0.0:
            jitter = _JITTER_FIRST * signal_variance
        elif jitter >= _JITTER_LAST * signal_variance * (1.0 - 1e-12):
            raise NumericalError(
                f"Gram matrix factorization failed for output {output_index} "
                f"even with jitter {jitter:g}",
                output_index=output_index,
            )
        else:
            jitter *= 10.0


class GPModel:
    """Exact GP conditioned on a shared training set, independent per output.

    Parameters
    ----------
    data : TrainingSet
    params : sequence of Hyperparameters, one per output dimension

    The constructor factorizes K + sigma_n^2 I once per output; predictions
    reuse the cached factors. With an empty training set every prediction
    falls back to the prior (zero mean, sigma_f^2 variance).
    """

    def __init__(self, data, params):
        params = tuple(params)
        if len(params) != data.output_dim and data.sample_count > 0:
            raise ValueError(
                f"need one Hyperparameters per output, got {len(params)} "
                f"for {data.output_dim} outputs"
            )
        if data.sample_count > 0:
            for i, p in enumerate(params):
                if p.input_dim != data.input_dim:
                    raise ValueError(
                        f"output {i}: lengthscale count {p.input_dim} does not "
                        f"match input dimension {data.input_dim}"
                    )
        self.data = data
        self.params = params
        self._chol = []
        self._alpha = []
        self._kinv = []
        x = data.inputs
        for i, p in enumerate(params):
            if data.sample_count == 0:
                self._chol.append(None)
                self._alpha.append(None)
                self._kinv.append(None)
                continue
            k_reg = kernel_matrix(x, x, p)
            k_reg[np.diag_indices_from(k_reg)] += p.noise_variance
            low, _ = _chol_jittered(k_reg, p.signal_variance, i)
            self._chol.append(low)
            self._alpha.append(cho_solve((low, True), data.outputs[:, i]))
            self._kinv.append(None)  # built lazily for batched paths

    @property
    def output_dim(self):
        return len(self.params)

    @property
    def input_dim(self):
        return self.params[0].input_dim

    def _precision(self, i):
        if self._kinv[i] is None and self._chol[i] is not None:
            self._kinv[i] = _inverse_from_cholesky(self._chol[i], i)
        return self._kinv[i]

    def _check_point(self, x, expected):
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.size != expected:
            raise ValueError(f"expected a 1-D point of dimension {expected}")
        return x

    def predict(self, x):
        """Posterior mean and variance at a single input point."""
        x = self._check_point(x, self.input_dim)
        n = self.output_dim
        mean = np.zeros(n)
        var = np.zeros(n)
        for i, p in enumerate(self.params):
            if self._chol[i] is None:
                var[i] = p.signal_variance
                continue
            k_vec = kernel_matrix(x[None, :], self.data.inputs, p)[0]
            mean[i] = k_vec @ self._alpha[i]
            quad = float(k_vec @ (self._precision(i) @ k_vec))
            var[i] = max(p.signal_variance - quad, 0.0)
        return Prediction(mean=mean, variance=var)

    def predict_batch(self, x):
        """Vectorized ``predict`` over rows of ``x`` (b, d).

        Returns (means, variances), each of shape (b, n).
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.input_dim:
            raise ValueError(f"expected points of dimension {self.input_dim}")
        b = x.shape[0]
        n = self.output_dim
        means = np.zeros((b, n))
        variances = np.zeros((b, n))
        for i, p in enumerate(self.params):
            if self._chol[i] is None:
                variances[:, i] = p.signal_variance
                continue
            k_mat = kernel_matrix(x, self.data.inputs, p)
            means[:, i] = k_mat @ self._alpha[i]
            quad = np.sum((k_mat @ self._precision(i)) * k_mat, axis=1)
            variances[:, i] = np.maximum(p.signal_variance - quad, 0.0)
        return means, variances

    def _subset_indices(self, subset):
        idx = np.asarray(subset, dtype=int)
        if idx.ndim != 1 or idx.size == 0:
            raise ValueError("subset must be a non-empty 1-D index list")
        if np.unique(idx).size != idx.size:
            raise ValueError("subset indices must be unique")
        if np.any(idx < 0) or np.any(idx >= self.input_dim):
            raise ValueError("subset indices out of range")
        return idx

    def _marginal_params(self, i, idx):
        p = self.params[i]
        return Hyperparameters(
            signal_variance=p.signal_variance,
            lengthscales=p.lengthscales[idx],
            noise_variance=p.noise_variance,
        )

    def predict_marginal(self, x_sub, subset):
        """Mean/variance marginalized onto the input coordinates in ``subset``.

        ``x_sub`` holds only the retained coordinates, in ``subset`` order.
        The reduced kernel keeps the lengthscale subset and the full signal
        variance; the regularized Gram factorization of the full-input kernel
        is reused as-is. With ``subset`` equal to the full index range this
        reduces to ``predict``.
        """
        idx = self._subset_indices(subset)
        x_sub = self._check_point(x_sub, idx.size)
        n = self.output_dim
        mean = np.zeros(n)
        var = np.zeros(n)
        for i, p in enumerate(self.params):
            if self._chol[i] is None:
                var[i] = p.signal_variance
                continue
            p_sub = self._marginal_params(i, idx)
            k_vec = kernel_matrix(x_sub[None, :], self.data.inputs[:, idx], p_sub)[0]
            mean[i] = k_vec @ self._alpha[i]
            quad = float(k_vec @ (self._precision(i) @ k_vec))
            var[i] = max(p.signal_variance - quad, 0.0)
        return Prediction(mean=mean, variance=var)

    def predict_marginal_batch(self, x_sub, subset):
        """Vectorized ``predict_marginal`` over rows of ``x_sub`` (b, len(subset))."""
        idx = self._subset_indices(subset)
        x_sub = np.atleast_2d(np.asarray(x_sub, dtype=float))
        if x_sub.shape[1] != idx.size:
            raise ValueError(f"expected points of dimension {idx.size}")
        b = x_sub.shape[0]
        n = self.output_dim
        means = np.zeros((b, n))
        variances = np.zeros((b, n))
        for i, p in enumerate(self.params):
            if self._chol[i] is None:
                variances[:, i] = p.signal_variance
                continue
            p_sub = self._marginal_params(i, idx)
            k_mat = kernel_matrix(x_sub, self.data.inputs[:, idx], p_sub)
            means[:, i] = k_mat @ self._alpha[i]
            quad = np.sum((k_mat @ self._precision(i)) * k_mat, axis=1)
            variances[:, i] = np.maximum(p.signal_variance - quad, 0.0)
        return means, variances

    def save(self, path):
        """Persist data and hyperparameters as JSON; factors are rebuilt on load."""
        payload = {
            "inputs": [[float(v) for v in row] for row in self.data.inputs],
            "outputs": [[float(v) for v in row] for row in self.data.outputs],
            "hyperparameters": [p.to_dict() for p in self.params],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            payload = json.load(fh)
        data = TrainingSet(
            inputs=np.asarray(payload["inputs"], dtype=float),
            outputs=np.asarray(payload["outputs"], dtype=float),
        )
        params = [Hyperparameters.from_dict(d) for d in payload["hyperparameters"]]
        return cls(data, params)


def fit(data, params):
    """Condition a GP on ``data`` with fixed hyperparameters (one per output)."""
    return GPModel(data, params)


def log_marginal_likelihood(data, params, output_index):
    """Log marginal likelihood of output column ``output_index`` under ``params``.

    Returns -0.5 y^T (K + sigma_n^2 I)^{-1} y - 0.5 log|K + sigma_n^2 I|
    - (m/2) log 2 pi.
    """
    if data.sample_count == 0:
        raise ValueError("log marginal likelihood requires a non-empty training set")
    if not 0 <= output_index < data.output_dim:
        raise ValueError(f"output_index {output_index} out of range")
    if params.input_dim != data.input_dim:
        raise ValueError("lengthscale count does not match input dimension")
    x = data.inputs
    y = data.outputs[:, output_index]
    k_reg = kernel_matrix(x, x, params)
    k_reg[np.diag_indices_from(k_reg)] += params.noise_variance
    low, _ = _chol_jittered(k_reg, params.signal_variance, output_index)
    alpha = cho_solve((low, True), y)
    return float(
        -0.5 * (y @ alpha)
        - np.sum(np.log(np.diag(low)))
        - 0.5 * y.size * _LOG_2PI
    )


def _lml_value_and_grad(theta, sq_dists, y, output_index):
    """Objective for the optimizer: lml and gradient w.r.t. log parameters.

    theta = [log sigma_f^2, log l_1 .. log l_d, log sigma_n^2];
    sq_dists is the (d, m, m) stack of per-dimension squared differences.
    """
    d = sq_dists.shape[0]
    m = y.size
    sf2 = math.exp(theta[0])
    inv_l2 = np.exp(-2.0 * theta[1 : 1 + d])
    sn2 = math.exp(theta[-1])
    expo = np.tensordot(inv_l2, sq_dists, axes=(0, 0))
    corr = np.exp(-0.5 * expo)
    k_sig = sf2 * corr
    k_reg = k_sig + sn2 * np.eye(m)
    low, _ = _chol_jittered(k_reg, sf2, output_index)
    alpha = cho_solve((low, True), y)
    kinv = _inverse_from_cholesky(low, output_index)
    lml = float(-0.5 * (y @ alpha) - np.sum(np.log(np.diag(low))) - 0.5 * m * _LOG_2PI)
    inner = np.outer(alpha, alpha) - kinv
    grad = np.empty(d + 2)
    grad[0] = 0.5 * np.sum(inner * k_sig)
    for j in range(d):
        grad[1 + j] = 0.5 * np.sum(inner * (k_sig * (sq_dists[j] * inv_l2[j])))
    grad[-1] = 0.5 * sn2 * np.trace(inner)
    return lml, grad


def optimize_hyperparameters(
    data, init, output_index, n_restarts=5, seed=0, max_iter=100
):
    """Maximize the log marginal likelihood for one output dimension.

    Multi-start L-BFGS-B in log-parameter space with analytic gradients:
    restart 0 starts at ``init``, the remaining starts perturb it with
    seeded log-uniform offsets. The best candidate never scores below the
    likelihood of ``init`` itself.

    Returns the optimized Hyperparameters.
    """
    if data.sample_count == 0:
        raise ValueError("cannot optimize hyperparameters on an empty training set")
    if not 0 <= output_index < data.output_dim:
        raise ValueError(f"output_index {output_index} out of range")
    if init.input_dim != data.input_dim:
        raise ValueError("lengthscale count does not match input dimension")
    if n_restarts < 1:
        raise ValueError("n_restarts must be at least 1")
    x = data.inputs
    y = data.outputs[:, output_index]
    d = data.input_dim
    diffs = x[:, None, :] - x[None, :, :]
    sq_dists = np.ascontiguousarray(np.transpose(diffs * diffs, (2, 0, 1)))

    noise_floor = max(init.noise_variance, math.exp(_LOG_NOISE_BOUNDS[0]))
    theta_init = np.concatenate(
        [
            [math.log(init.signal_variance)],
            np.log(init.lengthscales),
            [math.log(noise_floor)],
        ]
    )
    bounds = (
        [_LOG_SIGNAL_BOUNDS] + [_LOG_LENGTH_BOUNDS] * d + [_LOG_NOISE_BOUNDS]
    )
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    theta_init = np.clip(theta_init, lo, hi)

    def objective(theta):
        try:
            lml, grad = _lml_value_and_grad(theta, sq_dists, y, output_index)
        except NumericalError:
            return np.inf, np.zeros(d + 2)
        return -lml, -grad

    rng = np.random.default_rng(seed)
    best_theta = theta_init
    best_value = objective(theta_init)[0]
    for restart in range(n_restarts):
        if restart == 0:
            start = theta_init
        else:
            start = np.clip(theta_init + rng.uniform(-1.5, 1.5, size=d + 2), lo, hi)
        result = minimize(
            objective,
            start,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": max_iter},
        )
        if np.isfinite(result.fun) and result.fun < best_value:
            best_value = result.fun
            best_theta = result.x
    return Hyperparameters(
        signal_variance=math.exp(best_theta[0]),
        lengthscales=np.exp(best_theta[1 : 1 + d]),
        noise_variance=math.exp(best_theta[-1]),
    )
