import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gptorque import (
    ComputedTorqueController,
    GainSchedule,
    GPModel,
    Hyperparameters,
    TrainingSet,
    forward_dynamics,
    gains_from_variance,
    sine_abs_dynamics,
    tracking_error,
)


def reference_schedule(**overrides):
    kwargs = dict(
        base_p=[10.0, 10.0],
        base_d=[10.0, 10.0],
        weight_p=[30.0, 30.0],
        weight_d=[30.0, 30.0],
        signal_variances=[2.0, 2.0],
    )
    kwargs.update(overrides)
    return GainSchedule.affine(**kwargs)


def residual_model(rng, n=2, m=40):
    """Small GP trained on the analytic disturbance for controller tests."""
    kappa = sine_abs_dynamics()
    x = rng.uniform(-1.0, 1.0, size=(m, 3 * n))
    y = np.array([kappa(row) for row in x])
    params = [
        Hyperparameters(
            signal_variance=2.0, lengthscales=np.full(3 * n, 1.0), noise_variance=1e-4
        )
        for _ in range(n)
    ]
    return GPModel(TrainingSet(inputs=x, outputs=y), params)


class ExactDisturbanceModel:
    """Stub whose posterior mean reproduces kappa exactly, variance zero."""

    def __init__(self, kappa, n):
        self.kappa = kappa
        self.input_dim = 3 * n
        self.n = n

    def predict(self, x):
        from gptorque.gp import Prediction

        return Prediction(mean=self.kappa(x), variance=np.zeros(self.n))

    def predict_marginal(self, x_sub, subset):
        from gptorque.gp import Prediction

        return Prediction(mean=np.zeros(self.n), variance=np.zeros(self.n))


# ------------------------------------------------------------------- gains

def test_zero_variance_returns_base_gains():
    kp, kd = gains_from_variance(reference_schedule(), np.zeros(2), np.zeros(2))
    np.testing.assert_array_equal(kp, np.diag([10.0, 10.0]))
    np.testing.assert_array_equal(kd, np.diag([10.0, 10.0]))


def test_unit_variance_adds_weight():
    kp, _ = gains_from_variance(reference_schedule(), np.ones(2), np.zeros(2))
    np.testing.assert_allclose(np.diag(kp), [40.0, 40.0])


def test_variance_above_ceiling_is_clamped():
    schedule = reference_schedule()
    kp, kd = gains_from_variance(schedule, np.full(2, 100.0), np.full(2, 100.0))
    np.testing.assert_allclose(np.diag(kp), schedule.ceiling_p)
    np.testing.assert_allclose(np.diag(kd), schedule.ceiling_d)
    # default ceiling: base + weight * signal variance
    np.testing.assert_allclose(schedule.ceiling_p, [70.0, 70.0])


def test_gains_accept_diagonal_matrices():
    kp_a, _ = gains_from_variance(reference_schedule(), np.diag([0.5, 0.25]), np.zeros(2))
    kp_b, _ = gains_from_variance(reference_schedule(), np.array([0.5, 0.25]), np.zeros(2))
    np.testing.assert_array_equal(kp_a, kp_b)


def test_negative_variance_rejected():
    with pytest.raises(ValueError):
        gains_from_variance(reference_schedule(), np.array([-0.1, 0.0]), np.zeros(2))


def test_gain_matrices_exactly_diagonal():
    kp, kd = gains_from_variance(reference_schedule(), np.array([0.3, 0.7]), np.array([0.2, 0.9]))
    assert kp[0, 1] == 0.0 and kp[1, 0] == 0.0
    assert kd[0, 1] == 0.0 and kd[1, 0] == 0.0


def test_static_schedule_freezes_gains():
    static = reference_schedule().static()
    np.testing.assert_array_equal(static.weight_p, np.zeros(2))
    np.testing.assert_array_equal(static.weight_d, np.zeros(2))
    kp, kd = gains_from_variance(static, np.full(2, 5.0), np.full(2, 5.0))
    np.testing.assert_array_equal(np.diag(kp), static.base_p)
    np.testing.assert_array_equal(np.diag(kd), static.base_d)


def test_schedule_validation():
    with pytest.raises(ValueError):
        reference_schedule(base_p=[0.0, 10.0])
    with pytest.raises(ValueError):
        reference_schedule(weight_p=[-1.0, 0.0])
    with pytest.raises(ValueError):
        GainSchedule.affine(
            base_p=[10.0, 10.0], base_d=[10.0, 10.0],
            weight_p=[30.0, 30.0], weight_d=[30.0, 30.0],
            ceiling_p=[5.0, 5.0], ceiling_d=[70.0, 70.0],
        )


def test_schedule_json_round_trip(tmp_path):
    schedule = reference_schedule()
    path = tmp_path / "schedule.json"
    schedule.save(path)
    loaded = GainSchedule.load(path)
    np.testing.assert_array_equal(loaded.base_p, schedule.base_p)
    np.testing.assert_array_equal(loaded.weight_d, schedule.weight_d)
    np.testing.assert_array_equal(loaded.ceiling_p, schedule.ceiling_p)
    assert set(schedule.to_dict()) == {
        "base_p", "base_d", "weight_p", "weight_d", "ceiling_p", "ceiling_d"
    }


@settings(max_examples=50, deadline=None)
@given(
    va=st.floats(min_value=0.0, max_value=10.0),
    vb=st.floats(min_value=0.0, max_value=10.0),
)
def test_property_gain_schedule_lipschitz_and_bounded(va, vb):
    schedule = reference_schedule()
    ka = schedule.kp_diag(np.full(2, va))
    kb = schedule.kp_diag(np.full(2, vb))
    assert np.all(np.abs(ka - kb) <= schedule.weight_p * abs(va - vb) + 1e-12)
    for k in (ka, kb):
        assert np.all(k >= schedule.base_p)
        assert np.all(k <= schedule.ceiling_p)


# -------------------------------------------------------------- tracking error

def test_tracking_error_zero_at_reference():
    e, edot = tracking_error(np.ones(2), np.ones(2), np.ones(2), np.ones(2))
    np.testing.assert_array_equal(e, np.zeros(2))
    np.testing.assert_array_equal(edot, np.zeros(2))


def test_tracking_error_constant_offset():
    e, _ = tracking_error(np.array([1.3, 2.3]), np.zeros(2), np.array([0.3, 1.3]), np.zeros(2))
    np.testing.assert_allclose(e, np.ones(2))


def test_tracking_error_matches_subtraction(rng):
    q, qd, qdes, qddes = (rng.normal(size=2) for _ in range(4))
    e, edot = tracking_error(q, qd, qdes, qddes)
    np.testing.assert_array_equal(e, q - qdes)
    np.testing.assert_array_equal(edot, qd - qddes)


# ----------------------------------------------------------------- controller

def test_pure_feedforward_without_model(arm, rng):
    controller = ComputedTorqueController(arm, reference_schedule(), model=None)
    q = rng.uniform(-1.0, 1.0, size=2)
    qd = rng.uniform(-1.0, 1.0, size=2)
    qdd_des = rng.uniform(-1.0, 1.0, size=2)
    out = controller(q, qd, q, qd, qdd_des)
    expected = arm.inertia(q) @ qdd_des + arm.coriolis(q, qd) @ qd + arm.gravity_torque(q)
    np.testing.assert_allclose(out.tau, expected, atol=1e-13)
    np.testing.assert_array_equal(out.kp, np.full(2, 10.0))
    np.testing.assert_array_equal(out.var_p, np.zeros(2))


def test_static_schedule_matches_textbook_law_bitwise(arm, rng):
    model = residual_model(rng)
    controller = ComputedTorqueController(arm, reference_schedule().static(), model=model)
    q = rng.uniform(-1.0, 1.0, size=2)
    qd = rng.uniform(-1.0, 1.0, size=2)
    q_des = rng.uniform(-1.0, 1.0, size=2)
    qd_des = rng.uniform(-1.0, 1.0, size=2)
    qdd_des = rng.uniform(-1.0, 1.0, size=2)
    out = controller(q, qd, q_des, qd_des, qdd_des)
    mu = model.predict(np.concatenate([qdd_des, qd, q])).mean
    textbook = (
        arm.inertia(q) @ qdd_des
        + arm.coriolis(q, qd) @ qd_des
        + arm.gravity_torque(q)
        + mu
        - 10.0 * (qd - qd_des)
        - 10.0 * (q - q_des)
    )
    assert np.abs(out.tau - textbook).max() <= 1e-12


def test_exact_compensation_recovers_desired_acceleration(arm):
    kappa = sine_abs_dynamics()
    controller = ComputedTorqueController(
        arm, reference_schedule(), model=ExactDisturbanceModel(kappa, 2)
    )
    q = np.array([0.4, -0.2])
    qd = np.array([0.5, 0.1])
    qdd_des = np.array([0.7, -0.3])
    out = controller(q, qd, q, qd, qdd_des)  # e = edot = 0
    qdd = forward_dynamics(arm, q, qd, out.tau, kappa=kappa, qdd_prev=qdd_des)
    np.testing.assert_allclose(qdd, qdd_des, atol=1e-12)


def test_controller_uses_marginal_variances(arm, rng):
    model = residual_model(rng)
    controller = ComputedTorqueController(arm, reference_schedule(), model=model)
    q = rng.uniform(-1.0, 1.0, size=2)
    qd = rng.uniform(-1.0, 1.0, size=2)
    qdd_des = rng.uniform(-1.0, 1.0, size=2)
    out = controller(q, qd, q, qd, qdd_des)
    var_d = model.predict_marginal(np.concatenate([qd, q]), np.arange(2, 6)).variance
    var_p = model.predict_marginal(q, np.arange(4, 6)).variance
    np.testing.assert_array_equal(out.var_d, var_d)
    np.testing.assert_array_equal(out.var_p, var_p)
    np.testing.assert_array_equal(out.kp, 10.0 + 30.0 * var_p)


def test_controller_rejects_mismatched_model(arm, rng):
    bad = GPModel(
        TrainingSet(inputs=rng.normal(size=(3, 4)), outputs=rng.normal(size=(3, 2))),
        [
            Hyperparameters(signal_variance=1.0, lengthscales=np.ones(4), noise_variance=0.1)
            for _ in range(2)
        ],
    )
    with pytest.raises(ValueError):
        ComputedTorqueController(arm, reference_schedule(), model=bad)
