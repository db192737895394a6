"""Closed-loop simulation, training-data generation, and the comparison pipeline.

The integrator is fixed-step RK4 with zero-order-hold control: the torque is
computed once per step from the pre-step state and held through the four
stages. A compiled fast path covers the standard two-link configuration and
is bit-for-bit reproducible; the plain-Python reference loop handles
everything else and doubles as the correctness baseline.
"""

import csv
import math

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import control, dynamics, fastsim, gp, stability
from .errors import DivergenceError


@dataclass(frozen=True)
class TrajectorySpec:
    """Desired joint trajectory.

    kind "sinusoid": q_d,i(t) = offset_i + amplitude_i sin(frequency_i t
    + phase_i). kind "hold": constant offset. kind "table": linear
    interpolation of sampled positions/velocities/accelerations.
    """

    kind: str = "sinusoid"
    amplitude: tuple = (1.0, 1.0)
    frequency: tuple = (1.0, 1.0)
    offset: tuple = (0.0, 0.0)
    phase: tuple = (0.0, 0.0)
    duration: float = 20.0
    times: Optional[tuple] = None
    positions: Optional[tuple] = None
    velocities: Optional[tuple] = None
    accelerations: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ("sinusoid", "hold", "table"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")
        if self.kind == "table" and (
            self.times is None
            or self.positions is None
            or self.velocities is None
            or self.accelerations is None
        ):
            raise ValueError("table trajectories need times/positions/velocities/accelerations")
        if self.kind != "table":
            sizes = {
                len(self.amplitude), len(self.frequency), len(self.offset), len(self.phase)
            }
            if len(sizes) != 1:
                raise ValueError(
                    "amplitude, frequency, offset, and phase must have equal lengths"
                )

    @property
    def n(self):
        if self.kind == "table":
            return len(self.positions[0])
        return len(self.amplitude)

    def desired(self, t):
        """(q_d, qd_d, qdd_d) at time t."""
        if self.kind == "sinusoid":
            amp = np.asarray(self.amplitude, dtype=float)
            om = np.asarray(self.frequency, dtype=float)
            off = np.asarray(self.offset, dtype=float)
            ph = np.asarray(self.phase, dtype=float)
            arg = om * t + ph
            return (
                off + amp * np.sin(arg),
                amp * om * np.cos(arg),
                -amp * om * om * np.sin(arg),
            )
        if self.kind == "hold":
            off = np.asarray(self.offset, dtype=float)
            zero = np.zeros_like(off)
            return off, zero.copy(), zero.copy()
        ts = np.asarray(self.times, dtype=float)
        pos = np.asarray(self.positions, dtype=float)
        vel = np.asarray(self.velocities, dtype=float)
        acc = np.asarray(self.accelerations, dtype=float)
        q_d = np.array([np.interp(t, ts, pos[:, i]) for i in range(pos.shape[1])])
        qd_d = np.array([np.interp(t, ts, vel[:, i]) for i in range(vel.shape[1])])
        qdd_d = np.array([np.interp(t, ts, acc[:, i]) for i in range(acc.shape[1])])
        return q_d, qd_d, qdd_d

    def bounds(self, n_samples=2001):
        """(sup ||q_d||, sup ||qd_d||) over a dense time sample."""
        ts = np.linspace(0.0, self.duration, n_samples)
        qmax = 0.0
        qdmax = 0.0
        for t in ts:
            q_d, qd_d, _ = self.desired(t)
            qmax = max(qmax, float(np.linalg.norm(q_d)))
            qdmax = max(qdmax, float(np.linalg.norm(qd_d)))
        return qmax, qdmax


@dataclass(frozen=True)
class SimulationResult:
    """Uniformly sampled closed-loop traces; all arrays share length N+1."""

    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    q_des: np.ndarray
    qdot_des: np.ndarray
    tau: np.ndarray
    kp: np.ndarray
    kd: np.ndarray
    var_p: np.ndarray
    var_d: np.ndarray

    @property
    def e(self):
        return self.q - self.q_des

    @property
    def edot(self):
        return self.qdot - self.qdot_des

    @property
    def gain_norm(self):
        return np.sqrt(np.sum(self.kp**2, axis=1) + np.sum(self.kd**2, axis=1))


def rk4_step(deriv, t, state, dt):
    """One classical Runge-Kutta step for ``state' = deriv(t, state)``."""
    k1 = deriv(t, state)
    k2 = deriv(t + 0.5 * dt, state + 0.5 * dt * k1)
    k3 = deriv(t + 0.5 * dt, state + 0.5 * dt * k2)
    k4 = deriv(t + dt, state + dt * k3)
    return state + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def _fast_applicable(plant, trajectory, controller, kappa):
    if not fastsim.HAVE_NUMBA:
        return False
    if not isinstance(plant, dynamics.TwoLinkPlanarArm):
        return False
    if trajectory.kind != "sinusoid":
        return False
    if controller is None or controller.plant is not plant:
        return False
    if kappa is not None and kappa.provenance not in ("zero", "gp_mean", "sine_abs"):
        return False
    return True


def _integrate_fast(plant, trajectory, controller, kappa, q0, qd0, dt, nsteps):
    xs, ils, alpha, kinv, sf2 = fastsim.pack_gp(controller.model)
    kap_kind = fastsim.KAPPA_NONE
    kxs = np.zeros((2, 0, 4))
    kils = np.ones((2, 4))
    kalpha = np.zeros((2, 0))
    ksf2 = np.zeros(2)
    if kappa is not None and kappa.provenance == "gp_mean":
        kap_kind = fastsim.KAPPA_GP_MEAN
        kxs, kils, kalpha, _, ksf2 = fastsim.pack_gp(kappa.metadata["model"])
        kxs = np.ascontiguousarray(kxs)
    elif kappa is not None and kappa.provenance == "sine_abs":
        kap_kind = fastsim.KAPPA_SINE_ABS
    shape = (nsteps + 1, 2)
    traces = [np.empty(shape) for _ in range(9)]
    status = fastsim._simulate(
        plant.params_array(),
        np.asarray(q0, dtype=float),
        np.asarray(qd0, dtype=float),
        np.asarray(trajectory.amplitude, dtype=float),
        np.asarray(trajectory.frequency, dtype=float),
        np.asarray(trajectory.offset, dtype=float),
        np.asarray(trajectory.phase, dtype=float),
        dt,
        nsteps,
        np.ascontiguousarray(xs),
        np.ascontiguousarray(ils),
        np.ascontiguousarray(alpha),
        np.ascontiguousarray(kinv),
        np.ascontiguousarray(sf2),
        controller.schedule.base_p.copy(),
        controller.schedule.weight_p.copy(),
        controller.schedule.ceiling_p.copy(),
        controller.schedule.base_d.copy(),
        controller.schedule.weight_d.copy(),
        controller.schedule.ceiling_d.copy(),
        kap_kind,
        kxs,
        np.ascontiguousarray(kils),
        np.ascontiguousarray(kalpha),
        np.ascontiguousarray(ksf2),
        *traces,
    )
    if status >= 0:
        raise DivergenceError(
            f"state became non-finite at t = {status * dt:.6g} s", time=status * dt
        )
    t = np.arange(nsteps + 1) * dt
    q, qd, qdes, qddes, tau, kp, kd, vp, vd = traces
    return SimulationResult(
        t=t, q=q, qdot=qd, q_des=qdes, qdot_des=qddes, tau=tau,
        kp=kp, kd=kd, var_p=vp, var_d=vd,
    )


def integrate(
    plant, trajectory, q0, qd0, dt, duration=None, controller=None, kappa=None,
    fast="auto",
):
    """Simulate the closed loop and return uniformly sampled traces.

    The control law is evaluated once per step (zero-order hold). ``kappa``
    is an optional UnknownDynamics acting on the plant; its acceleration slot
    is padded with the previous step's stage-one acceleration. ``fast``
    selects the compiled path: "auto" uses it whenever the configuration
    supports it, False forces the reference loop.

    Raises DivergenceError when the state leaves the finite range.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if duration is None:
        duration = trajectory.duration
    nsteps = int(round(duration / dt))
    if nsteps < 1:
        raise ValueError("duration must cover at least one step")
    q0 = np.asarray(q0, dtype=float)
    qd0 = np.asarray(qd0, dtype=float)
    n = q0.size

    if fast in ("auto", True) and _fast_applicable(plant, trajectory, controller, kappa):
        return _integrate_fast(plant, trajectory, controller, kappa, q0, qd0, dt, nsteps)

    t_grid = np.arange(nsteps + 1) * dt
    tr = {
        name: np.zeros((nsteps + 1, n))
        for name in ("q", "qdot", "q_des", "qdot_des", "tau", "kp", "kd", "var_p", "var_d")
    }
    state = np.concatenate([q0, qd0])
    qdd_prev = np.zeros(n)

    for k in range(nsteps + 1):
        t = t_grid[k]
        q = state[:n]
        qd = state[n:]
        q_d, qd_d, qdd_d = trajectory.desired(t)
        if controller is not None:
            out = controller(q, qd, q_d, qd_d, qdd_d)
            tau = out.tau
            tr["kp"][k] = out.kp
            tr["kd"][k] = out.kd
            tr["var_p"][k] = out.var_p
            tr["var_d"][k] = out.var_d
        else:
            tau = np.zeros(n)
        tr["q"][k] = q
        tr["qdot"][k] = qd
        tr["q_des"][k] = q_d
        tr["qdot_des"][k] = qd_d
        tr["tau"][k] = tau
        if k == nsteps:
            break

        def deriv(_t, x, pad=qdd_prev):
            return np.concatenate(
                [x[n:], dynamics.forward_dynamics(plant, x[:n], x[n:], tau, kappa, pad)]
            )

        qdd_step = dynamics.forward_dynamics(plant, q, qd, tau, kappa, qdd_prev)
        state = rk4_step(deriv, t, state, dt)
        qdd_prev = qdd_step
        if not np.all(np.isfinite(state)):
            raise DivergenceError(
                f"state became non-finite at t = {t + dt:.6g} s", time=t + dt
            )
    return SimulationResult(
        t=t_grid,
        q=tr["q"], qdot=tr["qdot"], q_des=tr["q_des"], qdot_des=tr["qdot_des"],
        tau=tr["tau"], kp=tr["kp"], kd=tr["kd"], var_p=tr["var_p"], var_d=tr["var_d"],
    )


def metrics(result):
    """Scalar summaries of one run: error and gain statistics."""
    err = np.linalg.norm(result.e, axis=1)
    tail = max(1, int(math.ceil(0.1 * err.size)))
    gains = result.gain_norm
    return {
        "rms_error": float(np.sqrt(np.mean(err**2))),
        "max_error": float(err.max()),
        "steady_state_error": float(np.mean(err[-tail:])),
        "mean_gain_norm": float(np.mean(gains)),
        "max_gain_norm": float(gains.max()),
    }


def write_trace_csv(result, path):
    """Full per-step trace; columns t, q_i, qdot_i, q_d_i, e_i, tau_i,
    Kp_ii, Kd_ii, var_p_i, var_d_i."""
    n = result.q.shape[1]
    cols = ["t"]
    for name in ("q", "qdot", "q_d", "e", "tau"):
        cols += [f"{name}_{i + 1}" for i in range(n)]
    cols += [f"Kp_{i + 1}{i + 1}" for i in range(n)]
    cols += [f"Kd_{i + 1}{i + 1}" for i in range(n)]
    for name in ("var_p", "var_d"):
        cols += [f"{name}_{i + 1}" for i in range(n)]
    e = result.e
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for k in range(result.t.size):
            row = [result.t[k]]
            row += list(result.q[k]) + list(result.qdot[k]) + list(result.q_des[k])
            row += list(e[k]) + list(result.tau[k])
            row += list(result.kp[k]) + list(result.kd[k])
            row += list(result.var_p[k]) + list(result.var_d[k])
            writer.writerow([repr(float(v)) for v in row])


def write_phase_csv(result, path):
    """First-joint phase-plane trace with the feedback-gain norm."""
    gains = result.gain_norm
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["q1", "qdot1", "gain_norm"])
        for k in range(result.t.size):
            writer.writerow(
                [repr(float(result.q[k, 0])), repr(float(result.qdot[k, 0])),
                 repr(float(gains[k]))]
            )


def generate_training_data(
    plant_true,
    plant_est,
    kappa,
    qddot_box,
    qdot_box,
    q_box,
    m,
    seed=0,
    sampling="uniform",
    noise_std=0.0,
):
    """Residual-torque training set sampled from a state-acceleration box.

    Each sample x = (qdd, qd, q) is drawn from the box; the true plant
    supplies the consistent torque tau = H qdd + C qd + g + kappa(x), and
    the target is the residual w.r.t. the estimated plant (equal to
    kappa(x) when the estimate is exact). ``sampling`` is "uniform" or
    "grid" (per-axis ceil(m**(1/dim)) points, first m kept).
    """
    n = plant_true.n
    lows = np.concatenate(
        [np.asarray(b, dtype=float)[:, 0] for b in (qddot_box, qdot_box, q_box)]
    )
    highs = np.concatenate(
        [np.asarray(b, dtype=float)[:, 1] for b in (qddot_box, qdot_box, q_box)]
    )
    dim = 3 * n
    rng = np.random.default_rng(seed)
    if sampling == "uniform":
        inputs = rng.uniform(lows, highs, size=(m, dim))
    elif sampling == "grid":
        per_axis = int(math.ceil(m ** (1.0 / dim)))
        axes = [np.linspace(lows[i], highs[i], per_axis) for i in range(dim)]
        mesh = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
        inputs = mesh[:m]
    else:
        raise ValueError(f"unknown sampling mode {sampling!r}")
    outputs = np.zeros((inputs.shape[0], n))
    for i, x in enumerate(inputs):
        qdd = x[:n]
        qd = x[n : 2 * n]
        q = x[2 * n :]
        tau = (
            plant_true.inertia(q) @ qdd
            + plant_true.coriolis(q, qd) @ qd
            + plant_true.gravity_torque(q)
        )
        if kappa is not None:
            tau = tau + kappa(x)
        outputs[i] = dynamics.residual_torque(plant_est, q, qd, qdd, tau)
    if noise_std > 0.0:
        outputs = outputs + noise_std * rng.standard_normal(outputs.shape)
    return gp.TrainingSet(inputs=inputs, outputs=outputs)


def train_model(cfg, seed=None, kappa=None):
    """Generate residual data per the config and fit the GP.

    Returns (model, report) where the report records per-output initial and
    final log marginal likelihoods and the selected hyperparameters.
    ``kappa`` short-circuits the disturbance construction when the caller
    already built it.
    """
    if seed is None:
        seed = cfg.seed
    plant = cfg.build_plant()
    if kappa is None:
        kappa = cfg.build_disturbance()
    data = generate_training_data(
        plant,
        plant,
        kappa,
        cfg.training.qddot_box,
        cfg.training.qdot_box,
        cfg.training.q_box,
        cfg.training.m,
        seed=seed,
        sampling=cfg.training.sampling,
        noise_std=cfg.training.noise_std,
    )
    n = data.output_dim
    params = []
    report_outputs = []
    for j in range(n):
        sig0 = cfg.gp.init_signal_variance
        if sig0 is None:
            sig0 = max(float(np.var(data.outputs[:, j])), 1e-2)
        init = gp.Hyperparameters(
            signal_variance=sig0,
            lengthscales=np.full(data.input_dim, cfg.gp.init_lengthscale),
            noise_variance=cfg.gp.init_noise_variance,
        )
        best = gp.optimize_hyperparameters(
            data,
            init,
            j,
            n_restarts=cfg.gp.restarts,
            seed=seed + 1000 * (j + 1),
            max_iter=cfg.gp.max_iter,
        )
        params.append(best)
        report_outputs.append(
            {
                "initial_log_likelihood": gp.log_marginal_likelihood(data, init, j),
                "final_log_likelihood": gp.log_marginal_likelihood(data, best, j),
                "hyperparameters": best.to_dict(),
            }
        )
    model = gp.GPModel(data, params)
    report = {
        "seed": int(seed),
        "sample_count": data.sample_count,
        "input_dim": data.input_dim,
        "outputs": report_outputs,
    }
    return model, report


def _kp_of_q(model, schedule, n):
    pos = np.arange(2 * n, 3 * n)

    def kp_fn(q):
        var_p = model.predict_marginal(q, pos).variance
        return schedule.kp_diag(var_p)

    return kp_fn


def stability_report(cfg, plant, kappa, model, trajectory, schedule):
    """Error-bound and convergence constants for the adaptive law.

    Assembles system bounds, per-output information gain and kernel norms,
    the probabilistic model-error bound over the analysis domain, the
    feasible epsilon interval (iterating the initial Lyapunov value with the
    chosen epsilon), and the ultimate-boundedness constants. Falls back to
    constants = None with a reason when the interval is empty.
    """
    n = plant.n
    ana = cfg.analysis
    bounds = dynamics.estimate_bounds(
        plant,
        np.asarray(ana.q_box, dtype=float),
        np.asarray(ana.qdot_box, dtype=float),
        seed=cfg.seed,
    )
    qd_max, qd_dot_max = trajectory.bounds()
    bounds = replace(
        bounds,
        k_p1=float(schedule.base_p.min()),
        k_p2=float(schedule.ceiling_p.max()),
        k_d1=float(schedule.base_d.min()),
        k_d2=float(schedule.ceiling_d.max()),
        qd_max=qd_max,
        qd_dot_max=qd_dot_max,
    )

    info_gains = [
        stability.information_gain(
            gp.kernel_matrix(model.data.inputs, model.data.inputs, p), p.noise_variance
        )
        for p in model.params
    ]
    if kappa is not None and kappa.rkhs_norms is not None:
        rkhs = np.asarray(kappa.rkhs_norms, dtype=float)
    elif ana.rkhs_norms is not None:
        rkhs = np.asarray(ana.rkhs_norms, dtype=float)
    else:
        raise ValueError(
            "kernel norms unavailable: configure analysis.rkhs_norms or use a "
            "gp_mean disturbance"
        )
    err_params = stability.ErrorBoundParams(
        rkhs_norms=rkhs,
        info_gains=np.asarray(info_gains, dtype=float),
        sample_count=model.data.sample_count,
        delta=ana.delta,
    )
    beta = stability.compute_beta(err_params)

    rng = np.random.default_rng([cfg.seed, 3])
    lows = np.concatenate(
        [np.asarray(b, dtype=float)[:, 0] for b in (ana.qddot_box, ana.qdot_box, ana.q_box)]
    )
    highs = np.concatenate(
        [np.asarray(b, dtype=float)[:, 1] for b in (ana.qddot_box, ana.qdot_box, ana.q_box)]
    )
    samples = rng.uniform(lows, highs, size=(ana.n_domain_samples, 3 * n))
    _, variances = model.predict_batch(samples)
    delta_bar = float(stability.model_error_bound_batch(beta, variances).max())
    bounds = replace(bounds, delta_bar=delta_bar)

    q0, qd0 = cfg.initial_state_arrays()
    q_d0, qd_d0, _ = trajectory.desired(0.0)
    e0, ed0 = control.tracking_error(q0, qd0, q_d0, qd_d0)
    kp_fn = _kp_of_q(model, schedule, n)
    inertia0 = plant.inertia(q0)

    eps = 0.0
    interval = stability.EpsilonInterval(0.0, 0.0)
    v0 = 0.0
    for _ in range(3):
        v0 = stability.lyapunov_value(ed0, e0, inertia0, kp_fn, q_d0, eps)
        interval = stability.epsilon_feasible(bounds, v0, ana.epsilon2)
        if interval.is_empty:
            break
        eps = interval.midpoint
    constants = None
    reason = None
    if interval.is_empty:
        reason = "empty epsilon interval"
    else:
        v0 = stability.lyapunov_value(ed0, e0, inertia0, kp_fn, q_d0, eps)
        try:
            constants = stability.convergence_constants(
                bounds, eps, ana.epsilon2, v0, delta_bar
            )
        except ValueError as exc:
            reason = str(exc)

    report = {
        "bounds": {
            "h1": bounds.h1,
            "h2": bounds.h2,
            "k_c": bounds.k_c,
            "k_p1": bounds.k_p1,
            "k_p2": bounds.k_p2,
            "k_d1": bounds.k_d1,
            "k_d2": bounds.k_d2,
            "qd_max": bounds.qd_max,
            "qd_dot_max": bounds.qd_dot_max,
            "delta_bar": bounds.delta_bar,
        },
        "info_gains": [float(v) for v in info_gains],
        "rkhs_norms": [float(v) for v in rkhs],
        "beta": [float(v) for v in beta],
        "delta": ana.delta,
        "epsilon_interval": [interval.lower, interval.upper],
        "epsilon": eps if not interval.is_empty else None,
        "v0": v0,
        "constants": constants.to_dict() if constants is not None else None,
        "constants_unavailable_reason": reason,
    }
    return report, bounds, constants


@dataclass(frozen=True)
class ComparisonResult:
    """Static and adaptive runs of the same experiment plus the report."""

    static: SimulationResult
    adaptive: SimulationResult
    static_metrics: dict
    adaptive_metrics: dict
    report: dict
    model: object
    schedule: object


def run_comparison(cfg, model=None, fast="auto"):
    """Run the bundled experiment in static and adaptive modes.

    Both runs share the plant, the unknown torque, the trajectory, and the
    trained GP; the static run zeroes the variance weights so its gains sit
    at the schedule bases. Returns a ComparisonResult whose report includes
    the stability constants and in-region gain statistics.
    """
    plant = cfg.build_plant()
    kappa = cfg.build_disturbance()
    trajectory = cfg.build_trajectory()
    if model is None:
        model, _ = train_model(cfg, kappa=kappa)
    sig = np.array([p.signal_variance for p in model.params])
    schedule = cfg.build_schedule(signal_variances=sig)
    q0, qd0 = cfg.initial_state_arrays()
    dt = cfg.integrator.dt

    runs = {}
    for mode, sched in (("static", schedule.static()), ("adaptive", schedule)):
        controller = control.ComputedTorqueController(plant, sched, model=model)
        runs[mode] = integrate(
            plant, trajectory, q0, qd0, dt,
            duration=trajectory.duration, controller=controller, kappa=kappa,
            fast=fast,
        )
    report, _, _ = stability_report(cfg, plant, kappa, model, trajectory, schedule)

    in_region = _in_region_mask(
        runs["adaptive"], cfg.training.qdot_box, cfg.training.q_box
    )
    static_norm = float(np.sqrt(np.sum(schedule.base_p**2) + np.sum(schedule.base_d**2)))
    adaptive_gains = runs["adaptive"].gain_norm
    report["gain_comparison"] = {
        "in_region_fraction": float(np.mean(in_region)),
        "static_gain_norm": static_norm,
        "adaptive_mean_gain_norm_in_region": (
            float(np.mean(adaptive_gains[in_region])) if np.any(in_region) else None
        ),
        "adaptive_mean_gain_norm": float(np.mean(adaptive_gains)),
        "adaptive_max_gain_norm": float(adaptive_gains.max()),
    }
    return ComparisonResult(
        static=runs["static"],
        adaptive=runs["adaptive"],
        static_metrics=metrics(runs["static"]),
        adaptive_metrics=metrics(runs["adaptive"]),
        report=report,
        model=model,
        schedule=schedule,
    )


def _in_region_mask(result, qdot_box, q_box):
    qdot_box = np.asarray(qdot_box, dtype=float)
    q_box = np.asarray(q_box, dtype=float)
    ok_qd = np.all(
        (result.qdot >= qdot_box[:, 0]) & (result.qdot <= qdot_box[:, 1]), axis=1
    )
    ok_q = np.all((result.q >= q_box[:, 0]) & (result.q <= q_box[:, 1]), axis=1)
    return ok_qd & ok_q
