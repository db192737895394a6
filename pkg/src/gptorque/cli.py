"""Command-line front end: train a residual model, simulate, analyze.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure,
4 simulation divergence.
"""

import argparse
import json
import sys

from pathlib import Path

import numpy as np

from . import control, gp, simulate, stability
from .config import ExperimentConfig
from .errors import ConfigError, DivergenceError, NumericalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_DIVERGENCE = 4


def _load_model(path):
    if path is None:
        raise ConfigError("this mode requires --model")
    try:
        return gp.GPModel.load(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"model file not found: {path}") from exc
    except (json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"{path}: not a valid model file ({exc})") from exc


def _write_json(payload, path):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def cmd_train(cfg, out_dir):
    model, report = simulate.train_model(cfg)
    model_path = out_dir / "model.json"
    model.save(model_path)

    info_gains = [
        stability.information_gain(
            gp.kernel_matrix(model.data.inputs, model.data.inputs, p), p.noise_variance
        )
        for p in model.params
    ]
    report["info_gains"] = [float(v) for v in info_gains]
    kappa = cfg.build_disturbance()
    rkhs = None
    if kappa is not None and kappa.rkhs_norms is not None:
        rkhs = [float(v) for v in kappa.rkhs_norms]
    elif cfg.analysis.rkhs_norms is not None:
        rkhs = [float(v) for v in cfg.analysis.rkhs_norms]
    report["rkhs_norms"] = rkhs
    if rkhs is not None:
        params = stability.ErrorBoundParams(
            rkhs_norms=np.asarray(rkhs, dtype=float),
            info_gains=np.asarray(info_gains, dtype=float),
            sample_count=model.data.sample_count,
            delta=cfg.analysis.delta,
        )
        report["beta"] = [float(v) for v in stability.compute_beta(params)]
    else:
        report["beta"] = None
    _write_json(report, out_dir / "train_report.json")

    print(f"trained {model.output_dim}-output model on {model.data.sample_count} samples")
    for j, entry in enumerate(report["outputs"]):
        print(
            f"  output {j}: log likelihood {entry['initial_log_likelihood']:.3f} "
            f"-> {entry['final_log_likelihood']:.3f}"
        )
    print(f"wrote {model_path} and {out_dir / 'train_report.json'}")
    return EXIT_OK


def _run_single(cfg, model, mode, out_dir):
    plant = cfg.build_plant()
    kappa = cfg.build_disturbance()
    trajectory = cfg.build_trajectory()
    sig = None
    if model is not None:
        sig = np.array([p.signal_variance for p in model.params])
    schedule = cfg.build_schedule(signal_variances=sig)
    if mode == "static":
        schedule = schedule.static()
    controller = control.ComputedTorqueController(plant, schedule, model=model)
    q0, qd0 = cfg.initial_state_arrays()
    result = simulate.integrate(
        plant, trajectory, q0, qd0, cfg.integrator.dt,
        duration=trajectory.duration, controller=controller, kappa=kappa,
    )
    simulate.write_trace_csv(result, out_dir / f"trace_{mode}.csv")
    simulate.write_phase_csv(result, out_dir / f"phase_{mode}.csv")
    payload = {mode: simulate.metrics(result)}
    if model is not None:
        report, _, _ = simulate.stability_report(
            cfg, plant, kappa, model, trajectory, schedule
        )
        payload["constants_report"] = report
    _write_json(payload, out_dir / "metrics.json")
    print(f"{mode}: rms error {payload[mode]['rms_error']:.6f}")
    print(f"wrote trace_{mode}.csv, phase_{mode}.csv, metrics.json in {out_dir}")
    return EXIT_OK


def cmd_simulate(cfg, model_path, mode, out_dir):
    if mode == "static":
        model = gp.GPModel.load(model_path) if model_path else None
        return _run_single(cfg, model, "static", out_dir)
    model = _load_model(model_path)
    if mode == "adaptive":
        return _run_single(cfg, model, "adaptive", out_dir)

    comparison = simulate.run_comparison(cfg, model=model)
    simulate.write_trace_csv(comparison.static, out_dir / "trace_static.csv")
    simulate.write_trace_csv(comparison.adaptive, out_dir / "trace_adaptive.csv")
    simulate.write_phase_csv(comparison.static, out_dir / "phase_static.csv")
    simulate.write_phase_csv(comparison.adaptive, out_dir / "phase_adaptive.csv")
    _write_json(
        {
            "static": comparison.static_metrics,
            "adaptive": comparison.adaptive_metrics,
            "constants_report": comparison.report,
        },
        out_dir / "metrics.json",
    )
    print(f"static:   rms error {comparison.static_metrics['rms_error']:.6f}")
    print(f"adaptive: rms error {comparison.adaptive_metrics['rms_error']:.6f}")
    print(f"wrote trace/phase CSVs and metrics.json in {out_dir}")
    return EXIT_OK


def cmd_analyze(cfg, model_path, out_dir, n_states=100):
    model = _load_model(model_path)
    plant = cfg.build_plant()
    kappa = cfg.build_disturbance()
    trajectory = cfg.build_trajectory()
    sig = np.array([p.signal_variance for p in model.params])
    schedule = cfg.build_schedule(signal_variances=sig)
    report, _, constants = simulate.stability_report(
        cfg, plant, kappa, model, trajectory, schedule
    )

    check = None
    if report["epsilon"] is not None:
        eps = report["epsilon"]
        n = plant.n
        ana = cfg.analysis
        rng = np.random.default_rng([cfg.seed, 4])
        q_box = np.asarray(ana.q_box, dtype=float)
        qd_box = np.asarray(ana.qdot_box, dtype=float)
        qs = rng.uniform(q_box[:, 0], q_box[:, 1], size=(n_states, n))
        qds = rng.uniform(qd_box[:, 0], qd_box[:, 1], size=(n_states, n))
        var_d = model.predict_marginal_batch(
            np.hstack([qds, qs]), np.arange(n, 3 * n)
        )[1]
        var_p = model.predict_marginal_batch(qs, np.arange(2 * n, 3 * n))[1]
        neg = 0
        agree = 0
        lam_max = -np.inf
        for i in range(n_states):
            kp = np.diag(schedule.kp_diag(var_p[i]))
            kd = np.diag(schedule.kd_diag(var_d[i]))
            ok, lam = stability.decrease_matrix_negative_definite(
                eps, kd, kp, plant.inertia(qs[i]), plant.coriolis(qs[i], qds[i])
            )
            ok_schur = stability.decrease_matrix_negative_definite_schur(
                eps, kd, kp, plant.inertia(qs[i]), plant.coriolis(qs[i], qds[i])
            )
            neg += ok
            agree += ok == ok_schur
            lam_max = max(lam_max, lam)
        check = {
            "n_states": n_states,
            "all_negative_definite": neg == n_states,
            "negative_definite_count": int(neg),
            "schur_agreement": agree == n_states,
            "max_eigenvalue": float(lam_max),
        }
    report["decrease_check"] = check
    _write_json(report, out_dir / "analysis.json")

    lo, hi = report["epsilon_interval"]
    if report["constants"] is not None:
        print(f"epsilon interval ({lo:.6g}, {hi:.6g}), using {report['epsilon']:.6g}")
        print(f"ultimate radius {report['constants']['ultimate_radius']:.6g}")
    else:
        print(f"constants unavailable: {report['constants_unavailable_reason']}")
    if check is not None:
        verdict = "pass" if check["all_negative_definite"] and check["schur_agreement"] else "fail"
        print(
            f"decrease matrix negative definite at {check['negative_definite_count']}"
            f"/{check['n_states']} sampled states ({verdict})"
        )
    print(f"wrote {out_dir / 'analysis.json'}")
    return EXIT_OK


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="gptorque",
        description="GP-compensated computed-torque control experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default=None, help="override the output directory")

    p_train = sub.add_parser("train", help="generate data and fit the residual model")
    common(p_train)

    p_sim = sub.add_parser("simulate", help="run the closed-loop simulation")
    common(p_sim)
    p_sim.add_argument("--model", default=None, help="trained model JSON")
    p_sim.add_argument(
        "--mode", choices=("static", "adaptive", "compare"), default="compare"
    )

    p_ana = sub.add_parser("analyze", help="compute stability constants and bounds")
    common(p_ana)
    p_ana.add_argument("--model", default=None, help="trained model JSON")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.from_json(args.config)
        cfg = cfg.with_overrides(seed=args.seed, output_dir=args.out)
        out_dir = Path(cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "train":
            return cmd_train(cfg, out_dir)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.model, args.mode, out_dir)
        return cmd_analyze(cfg, args.model, out_dir)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
