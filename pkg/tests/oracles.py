"""Hand-rolled reference implementations the tests compare the package to.

Everything here is deliberately naive (explicit loops, full matrix
inversion) and shares no code with the package.
"""

import math

import numpy as np


def se_kernel(x, z, signal_variance, lengthscales):
    s = 0.0
    for xi, zi, li in zip(np.atleast_1d(x), np.atleast_1d(z), np.atleast_1d(lengthscales)):
        s += ((xi - zi) / li) ** 2
    return signal_variance * math.exp(-0.5 * s)


def conditioned_moments(train_x, train_y, query, signal_variance, lengthscales, noise_variance):
    """Joint-Gaussian conditioning through a full matrix inverse.

    train_x: (m, d); train_y: (m,); query: (d,). Returns (mean, variance).
    """
    m = len(train_x)
    if m == 0:
        return 0.0, signal_variance
    gram = np.empty((m, m))
    for i in range(m):
        for j in range(m):
            gram[i, j] = se_kernel(train_x[i], train_x[j], signal_variance, lengthscales)
    gram = gram + noise_variance * np.eye(m)
    k_vec = np.array(
        [se_kernel(query, xi, signal_variance, lengthscales) for xi in train_x]
    )
    inv = np.linalg.inv(gram)
    mean = float(k_vec @ inv @ np.asarray(train_y, dtype=float))
    var = float(signal_variance - k_vec @ inv @ k_vec)
    return mean, var


def gaussian_log_density(y, cov):
    """log N(y; 0, cov) via slogdet and a full inverse."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    m = y.size
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    return float(
        -0.5 * y @ np.linalg.inv(cov) @ y - 0.5 * logdet - 0.5 * m * math.log(2.0 * math.pi)
    )


def finite_difference_inertia_rate(plant, q, qdot, step=1e-6):
    """dH/dt along qdot by central differences."""
    n = q.size
    rate = np.zeros((n, n))
    for k in range(n):
        dq = np.zeros(n)
        dq[k] = step
        rate += (plant.inertia(q + dq) - plant.inertia(q - dq)) / (2.0 * step) * qdot[k]
    return rate
