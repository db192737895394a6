"""Computed-torque control with variance-scheduled feedback gains.

The control law combines nominal-model feedforward, the GP posterior mean of
the residual torque, and diagonal PD feedback whose gains grow affinely with
the GP posterior variance marginalized onto the gain-relevant coordinates:
position-only for K_p, velocity-and-position for K_d. Zero weights reduce
the law to classical computed torque with fixed gains.
"""

import json

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class GainSchedule:
    """Affine-in-variance diagonal gains, clipped at per-joint ceilings.

    K_{p,ii} = min(base_p_i + weight_p_i * var_p_i, ceiling_p_i), same for
    K_d with var_d. Bases must be positive, weights non-negative, ceilings
    at least the bases.
    """

    base_p: np.ndarray
    base_d: np.ndarray
    weight_p: np.ndarray
    weight_d: np.ndarray
    ceiling_p: np.ndarray
    ceiling_d: np.ndarray

    def __post_init__(self):
        for name in ("base_p", "base_d", "weight_p", "weight_d", "ceiling_p", "ceiling_d"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float)).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.base_p.size
        for name in ("base_d", "weight_p", "weight_d", "ceiling_p", "ceiling_d"):
            if getattr(self, name).size != n:
                raise ValueError("all schedule fields must have the same length")
        if np.any(self.base_p <= 0.0) or np.any(self.base_d <= 0.0):
            raise ValueError("gain bases must be positive")
        if np.any(self.weight_p < 0.0) or np.any(self.weight_d < 0.0):
            raise ValueError("gain weights must be non-negative")
        if np.any(self.ceiling_p < self.base_p) or np.any(self.ceiling_d < self.base_d):
            raise ValueError("gain ceilings must not undercut the bases")

    @property
    def n(self):
        return self.base_p.size

    @classmethod
    def affine(cls, base_p, base_d, weight_p, weight_d, ceiling_p=None, ceiling_d=None,
               signal_variances=None):
        """Build a schedule; absent ceilings default to base + weight * sigma_f^2.

        The SE kernel posterior variance never exceeds the prior signal
        variance, so that default ceiling is never active; it still caps the
        schedule for the analysis constants. ``signal_variances`` supplies
        the per-joint sigma_f^2 (scalar or length-n); it defaults to 1.
        """
        base_p = np.atleast_1d(np.asarray(base_p, dtype=float))
        base_d = np.atleast_1d(np.asarray(base_d, dtype=float))
        weight_p = np.atleast_1d(np.asarray(weight_p, dtype=float))
        weight_d = np.atleast_1d(np.asarray(weight_d, dtype=float))
        if signal_variances is None:
            signal_variances = 1.0
        sig = np.broadcast_to(np.asarray(signal_variances, dtype=float), base_p.shape)
        if ceiling_p is None:
            ceiling_p = base_p + weight_p * sig
        if ceiling_d is None:
            ceiling_d = base_d + weight_d * sig
        return cls(base_p, base_d, weight_p, weight_d, ceiling_p, ceiling_d)

    def static(self):
        """Variance-independent variant: zero weights, gains pinned at the bases."""
        return replace(
            self,
            weight_p=np.zeros(self.n),
            weight_d=np.zeros(self.n),
            ceiling_p=self.base_p,
            ceiling_d=self.base_d,
        )

    def kp_diag(self, var_p):
        return np.minimum(self.base_p + self.weight_p * var_p, self.ceiling_p)

    def kd_diag(self, var_d):
        return np.minimum(self.base_d + self.weight_d * var_d, self.ceiling_d)

    def to_dict(self):
        return {
            "base_p": [float(v) for v in self.base_p],
            "base_d": [float(v) for v in self.base_d],
            "weight_p": [float(v) for v in self.weight_p],
            "weight_d": [float(v) for v in self.weight_d],
            "ceiling_p": [float(v) for v in self.ceiling_p],
            "ceiling_d": [float(v) for v in self.ceiling_d],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            base_p=np.asarray(d["base_p"], dtype=float),
            base_d=np.asarray(d["base_d"], dtype=float),
            weight_p=np.asarray(d["weight_p"], dtype=float),
            weight_d=np.asarray(d["weight_d"], dtype=float),
            ceiling_p=np.asarray(d["ceiling_p"], dtype=float),
            ceiling_d=np.asarray(d["ceiling_d"], dtype=float),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def gains_from_variance(schedule, var_p, var_d):
    """Diagonal gain matrices (K_p, K_d) for the given marginal variances.

    Accepts the variances as diagonal vectors or diagonal matrices; negative
    entries are rejected. The returned matrices are exactly diagonal.
    """
    var_p = _as_diag_vector(var_p, schedule.n, "var_p")
    var_d = _as_diag_vector(var_d, schedule.n, "var_d")
    return np.diag(schedule.kp_diag(var_p)), np.diag(schedule.kd_diag(var_d))


def _as_diag_vector(var, n, name):
    var = np.asarray(var, dtype=float)
    if var.ndim == 2:
        var = np.diag(var)
    if var.shape != (n,):
        raise ValueError(f"{name} must be a length-{n} diagonal")
    if np.any(var < 0.0):
        raise ValueError(f"{name} must be non-negative")
    return var


def tracking_error(q, qdot, q_des, qdot_des):
    """e = q - q_d and edot = qdot - qdot_d."""
    e = np.asarray(q, dtype=float) - np.asarray(q_des, dtype=float)
    edot = np.asarray(qdot, dtype=float) - np.asarray(qdot_des, dtype=float)
    return e, edot


@dataclass(frozen=True)
class ControlOutput:
    """Torque command plus the quantities that produced it."""

    tau: np.ndarray
    kp: np.ndarray          # K_p diagonal
    kd: np.ndarray          # K_d diagonal
    var_p: np.ndarray
    var_d: np.ndarray
    compensation: np.ndarray  # GP posterior mean of the residual torque


class ComputedTorqueController:
    """Nominal-model feedforward + GP residual mean + scheduled PD feedback.

    tau = H(q) qdd_d + C(q, qd) qd_d + g(q) + mean(x) - K_d edot - K_p e,
    with the GP evaluated at x = (qdd_d, qd, q): the desired acceleration
    stands in for the unknown instantaneous one, keeping the law causal.
    ``model`` may be None, which drops the compensation term and pins the
    gains at the schedule bases (variances read as zero).
    """

    def __init__(self, plant, schedule, model=None):
        self.plant = plant
        self.schedule = schedule
        self.model = model
        n = plant.n
        if schedule.n != n:
            raise ValueError("schedule joint count does not match the plant")
        if model is not None and model.input_dim != 3 * n:
            raise ValueError("model input dimension must be 3n (qdd, qd, q)")
        self._vel_pos = np.arange(n, 3 * n)
        self._pos = np.arange(2 * n, 3 * n)

    def __call__(self, q, qdot, q_des, qdot_des, qdd_des):
        q = np.asarray(q, dtype=float)
        qdot = np.asarray(qdot, dtype=float)
        q_des = np.asarray(q_des, dtype=float)
        qdot_des = np.asarray(qdot_des, dtype=float)
        qdd_des = np.asarray(qdd_des, dtype=float)
        n = self.plant.n
        e, edot = tracking_error(q, qdot, q_des, qdot_des)
        if self.model is None:
            compensation = np.zeros(n)
            var_p = np.zeros(n)
            var_d = np.zeros(n)
        else:
            x = np.concatenate([qdd_des, qdot, q])
            compensation = self.model.predict(x).mean
            var_d = self.model.predict_marginal(x[self._vel_pos], self._vel_pos).variance
            var_p = self.model.predict_marginal(x[self._pos], self._pos).variance
        kp = self.schedule.kp_diag(var_p)
        kd = self.schedule.kd_diag(var_d)
        tau = (
            self.plant.inertia(q) @ qdd_des
            + self.plant.coriolis(q, qdot) @ qdot_des
            + self.plant.gravity_torque(q)
            + compensation
            - kd * edot
            - kp * e
        )
        return ControlOutput(
            tau=tau, kp=kp, kd=kd, var_p=var_p, var_d=var_d, compensation=compensation
        )
