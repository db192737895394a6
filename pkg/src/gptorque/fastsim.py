"""Compiled fast path for the two-link closed-loop simulation.

Mirrors the reference loop in ``simulate.integrate`` for the common case:
two-link plant, sinusoidal reference, SE-ARD GP compensation, diagonal
variance-scheduled gains, and an unknown torque that is zero, the analytic
benchmark nonlinearity, or a GP posterior mean over (qd, q). Pure float64
arithmetic in a fixed order, so repeated runs are bit-identical.

Falls back to plain Python transparently when numba is unavailable.
"""

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(func):
            return func

        return wrap


KAPPA_NONE = 0
KAPPA_GP_MEAN = 1
KAPPA_SINE_ABS = 2


@njit(cache=True)
def _accel(pp, q1, q2, qd1, qd2, tau1, tau2, kap_kind, kxs, kils, kalpha, ksf2):
    """Forward dynamics of the two-link arm under an unknown torque."""
    m1 = pp[0]
    m2 = pp[1]
    l1 = pp[2]
    lc1 = pp[4]
    lc2 = pp[5]
    g0 = pp[6]
    c2 = np.cos(q2)
    h11 = lc1 * lc1 * m1 + m2 * (l1 * l1 + 2.0 * l1 * lc2 * c2 + lc2 * lc2)
    h12 = lc2 * m2 * (l1 * c2 + lc2)
    h22 = lc2 * lc2 * m2
    hc = -m2 * l1 * lc2 * np.sin(q2)
    c11 = hc * qd2
    c12 = hc * (qd1 + qd2)
    c21 = -hc * qd1
    g1 = g0 * (lc1 * m1 * np.cos(q1) + m2 * (l1 * np.cos(q1) + lc2 * np.cos(q1 + q2)))
    g2 = g0 * lc2 * m2 * np.cos(q1 + q2)

    kap1 = 0.0
    kap2 = 0.0
    if kap_kind == 1:
        mk = kxs.shape[1]
        for j in range(2):
            s0 = qd1 * kils[j, 0]
            s1 = qd2 * kils[j, 1]
            s2 = q1 * kils[j, 2]
            s3 = q2 * kils[j, 3]
            acc = 0.0
            for r in range(mk):
                d0 = s0 - kxs[j, r, 0]
                d1 = s1 - kxs[j, r, 1]
                d2 = s2 - kxs[j, r, 2]
                d3 = s3 - kxs[j, r, 3]
                acc += kalpha[j, r] * np.exp(
                    -0.5 * (d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3)
                )
            if j == 0:
                kap1 = ksf2[0] * acc
            else:
                kap2 = ksf2[1] * acc
    elif kap_kind == 2:
        kap1 = -qd1 + 2.0 * np.sin(q2) + abs(q1)
        kap2 = -qd2 + 2.0 * np.sin(q2)

    r1 = tau1 - (c11 * qd1 + c12 * qd2) - g1 - kap1
    r2 = tau2 - c21 * qd1 - g2 - kap2
    det = h11 * h22 - h12 * h12
    return (h22 * r1 - h12 * r2) / det, (h11 * r2 - h12 * r1) / det


@njit(cache=True)
def _simulate(
    pp,
    q_init,
    qd_init,
    amp,
    omega,
    offset,
    phase,
    dt,
    nsteps,
    xs,
    ils,
    alpha,
    kinv,
    sf2,
    base_p,
    w_p,
    ceil_p,
    base_d,
    w_d,
    ceil_d,
    kap_kind,
    kxs,
    kils,
    kalpha,
    ksf2,
    tr_q,
    tr_qd,
    tr_qdes,
    tr_qddes,
    tr_tau,
    tr_kp,
    tr_kd,
    tr_vp,
    tr_vd,
):
    m = xs.shape[1]
    q1 = q_init[0]
    q2 = q_init[1]
    qd1 = qd_init[0]
    qd2 = qd_init[1]
    # column 0: kernel vector on (qd, q); column 1: kernel vector on q alone
    k2 = np.empty((m, 2))

    for k in range(nsteps + 1):
        t = k * dt
        qdes1 = offset[0] + amp[0] * np.sin(omega[0] * t + phase[0])
        qdes2 = offset[1] + amp[1] * np.sin(omega[1] * t + phase[1])
        qddes1 = amp[0] * omega[0] * np.cos(omega[0] * t + phase[0])
        qddes2 = amp[1] * omega[1] * np.cos(omega[1] * t + phase[1])
        qdddes1 = -amp[0] * omega[0] * omega[0] * np.sin(omega[0] * t + phase[0])
        qdddes2 = -amp[1] * omega[1] * omega[1] * np.sin(omega[1] * t + phase[1])
        e1 = q1 - qdes1
        e2 = q2 - qdes2
        ed1 = qd1 - qddes1
        ed2 = qd2 - qddes2

        mean1 = 0.0
        mean2 = 0.0
        vp1 = 0.0
        vp2 = 0.0
        vd1 = 0.0
        vd2 = 0.0
        if m > 0:
            for j in range(2):
                s0 = qdddes1 * ils[j, 0]
                s1 = qdddes2 * ils[j, 1]
                s2 = qd1 * ils[j, 2]
                s3 = qd2 * ils[j, 3]
                s4 = q1 * ils[j, 4]
                s5 = q2 * ils[j, 5]
                mean_acc = 0.0
                for r in range(m):
                    d4 = s4 - xs[j, r, 4]
                    d5 = s5 - xs[j, r, 5]
                    a_pos = d4 * d4 + d5 * d5
                    d2 = s2 - xs[j, r, 2]
                    d3 = s3 - xs[j, r, 3]
                    a_mid = d2 * d2 + d3 * d3
                    d0 = s0 - xs[j, r, 0]
                    d1 = s1 - xs[j, r, 1]
                    a_top = d0 * d0 + d1 * d1
                    kp_r = sf2[j] * np.exp(-0.5 * a_pos)
                    kv_r = kp_r * np.exp(-0.5 * a_mid)
                    kf_r = kv_r * np.exp(-0.5 * a_top)
                    k2[r, 0] = kv_r
                    k2[r, 1] = kp_r
                    mean_acc += kf_r * alpha[j, r]
                y2 = np.dot(kinv[j], k2)
                quad_vd = 0.0
                quad_pos = 0.0
                for r in range(m):
                    quad_vd += k2[r, 0] * y2[r, 0]
                    quad_pos += k2[r, 1] * y2[r, 1]
                v_d = sf2[j] - quad_vd
                if v_d < 0.0:
                    v_d = 0.0
                v_p = sf2[j] - quad_pos
                if v_p < 0.0:
                    v_p = 0.0
                if j == 0:
                    mean1 = mean_acc
                    vd1 = v_d
                    vp1 = v_p
                else:
                    mean2 = mean_acc
                    vd2 = v_d
                    vp2 = v_p

        kp1 = min(base_p[0] + w_p[0] * vp1, ceil_p[0])
        kp2 = min(base_p[1] + w_p[1] * vp2, ceil_p[1])
        kd1 = min(base_d[0] + w_d[0] * vd1, ceil_d[0])
        kd2 = min(base_d[1] + w_d[1] * vd2, ceil_d[1])

        c2q = np.cos(q2)
        h11 = pp[4] * pp[4] * pp[0] + pp[1] * (
            pp[2] * pp[2] + 2.0 * pp[2] * pp[5] * c2q + pp[5] * pp[5]
        )
        h12 = pp[5] * pp[1] * (pp[2] * c2q + pp[5])
        h22 = pp[5] * pp[5] * pp[1]
        hc = -pp[1] * pp[2] * pp[5] * np.sin(q2)
        c11 = hc * qd2
        c12 = hc * (qd1 + qd2)
        c21 = -hc * qd1
        g1 = pp[6] * (
            pp[4] * pp[0] * np.cos(q1)
            + pp[1] * (pp[2] * np.cos(q1) + pp[5] * np.cos(q1 + q2))
        )
        g2 = pp[6] * pp[5] * pp[1] * np.cos(q1 + q2)
        tau1 = (
            h11 * qdddes1
            + h12 * qdddes2
            + c11 * qddes1
            + c12 * qddes2
            + g1
            + mean1
            - kd1 * ed1
            - kp1 * e1
        )
        tau2 = (
            h12 * qdddes1
            + h22 * qdddes2
            + c21 * qddes1
            + g2
            + mean2
            - kd2 * ed2
            - kp2 * e2
        )

        tr_q[k, 0] = q1
        tr_q[k, 1] = q2
        tr_qd[k, 0] = qd1
        tr_qd[k, 1] = qd2
        tr_qdes[k, 0] = qdes1
        tr_qdes[k, 1] = qdes2
        tr_qddes[k, 0] = qddes1
        tr_qddes[k, 1] = qddes2
        tr_tau[k, 0] = tau1
        tr_tau[k, 1] = tau2
        tr_kp[k, 0] = kp1
        tr_kp[k, 1] = kp2
        tr_kd[k, 0] = kd1
        tr_kd[k, 1] = kd2
        tr_vp[k, 0] = vp1
        tr_vp[k, 1] = vp2
        tr_vd[k, 0] = vd1
        tr_vd[k, 1] = vd2

        if k == nsteps:
            break

        a1, b1 = _accel(pp, q1, q2, qd1, qd2, tau1, tau2, kap_kind, kxs, kils, kalpha, ksf2)
        q1a = q1 + 0.5 * dt * qd1
        q2a = q2 + 0.5 * dt * qd2
        qd1a = qd1 + 0.5 * dt * a1
        qd2a = qd2 + 0.5 * dt * b1
        a2, b2 = _accel(pp, q1a, q2a, qd1a, qd2a, tau1, tau2, kap_kind, kxs, kils, kalpha, ksf2)
        q1b = q1 + 0.5 * dt * qd1a
        q2b = q2 + 0.5 * dt * qd2a
        qd1b = qd1 + 0.5 * dt * a2
        qd2b = qd2 + 0.5 * dt * b2
        a3, b3 = _accel(pp, q1b, q2b, qd1b, qd2b, tau1, tau2, kap_kind, kxs, kils, kalpha, ksf2)
        q1c = q1 + dt * qd1b
        q2c = q2 + dt * qd2b
        qd1c = qd1 + dt * a3
        qd2c = qd2 + dt * b3
        a4, b4 = _accel(pp, q1c, q2c, qd1c, qd2c, tau1, tau2, kap_kind, kxs, kils, kalpha, ksf2)
        q1 = q1 + dt * (qd1 + 2.0 * qd1a + 2.0 * qd1b + qd1c) / 6.0
        q2 = q2 + dt * (qd2 + 2.0 * qd2a + 2.0 * qd2b + qd2c) / 6.0
        qd1 = qd1 + dt * (a1 + 2.0 * a2 + 2.0 * a3 + a4) / 6.0
        qd2 = qd2 + dt * (b1 + 2.0 * b2 + 2.0 * b3 + b4) / 6.0
        if not (
            np.isfinite(q1) and np.isfinite(q2) and np.isfinite(qd1) and np.isfinite(qd2)
        ):
            return k + 1
    return -1


def pack_gp(model):
    """(xs, ils, alpha, kinv, sf2) arrays for the compiled kernel, or empties."""
    if model is None or model.data.sample_count == 0:
        d = 6 if model is None else model.input_dim
        return (
            np.zeros((2, 0, d)),
            np.ones((2, d)),
            np.zeros((2, 0)),
            np.zeros((2, 0, 0)),
            np.zeros(2),
        )
    m = model.data.sample_count
    d = model.input_dim
    n = model.output_dim
    xs = np.empty((n, m, d))
    ils = np.empty((n, d))
    alpha = np.empty((n, m))
    kinv = np.empty((n, m, m))
    sf2 = np.empty(n)
    for j, p in enumerate(model.params):
        ils[j] = 1.0 / p.lengthscales
        xs[j] = model.data.inputs * ils[j]
        alpha[j] = model._alpha[j]
        kinv[j] = model._precision(j)
        sf2[j] = p.signal_variance
    return xs, ils, alpha, kinv, sf2
