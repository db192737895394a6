"""Experiment configuration: a JSON file describing one complete run.

The tree covers the plant, the unknown torque acting on it, residual
training-data generation, GP fitting, the gain schedule, the desired
trajectory, the integrator, and the stability-analysis inputs. Parsing is
strict (unknown keys are rejected) and parse -> serialize -> parse is the
identity.
"""

import json

from dataclasses import dataclass, field, fields
from importlib import resources
from typing import Optional

import numpy as np

from . import control, dynamics
from .errors import ConfigError
from .simulate import TrajectorySpec

_N = 2  # two_link is the only supported plant kind


def bundled_config_path(name="paper_sec5"):
    """Filesystem path of a reference config shipped with the package."""
    path = resources.files(__package__) / "configs" / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return path


def _tuplify(value):
    if isinstance(value, (list, tuple)):
        return tuple(_tuplify(v) for v in value)
    return value


def _listify(value):
    if isinstance(value, tuple):
        return [_listify(v) for v in value]
    return value


def _build(cls, payload, where):
    if payload is None:
        return cls()
    if not isinstance(payload, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in fields(cls)}
    unknown = set(payload) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**{k: _tuplify(v) for k, v in payload.items()})
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _check_box(box, n, where):
    box = _tuplify(box)
    if len(box) != n or any(len(pair) != 2 for pair in box):
        raise ConfigError(f"{where} must be {n} [low, high] pairs")
    for low, high in box:
        if not low <= high:
            raise ConfigError(f"{where}: low > high in {[low, high]}")
    return box


@dataclass(frozen=True)
class PlantConfig:
    kind: str = "two_link"
    m1: float = 1.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    lc1: float = 0.5
    lc2: float = 0.5
    gravity: float = 10.0

    def __post_init__(self):
        if self.kind != "two_link":
            raise ConfigError(f"plant.kind must be 'two_link', got {self.kind!r}")
        for name in ("m1", "m2", "l1", "l2", "lc1", "lc2"):
            if not getattr(self, name) > 0.0:
                raise ConfigError(f"plant.{name} must be positive")

    def build(self):
        return dynamics.TwoLinkPlanarArm(
            m1=self.m1, m2=self.m2, l1=self.l1, l2=self.l2,
            lc1=self.lc1, lc2=self.lc2, gravity=self.gravity,
        )


@dataclass(frozen=True)
class DisturbanceConfig:
    """Unknown-torque specification: an analytic formula or a fitted GP mean.

    For kind "gp_mean", ``signal_variance`` and ``lengthscale`` fix the
    kernel of the ground-truth construction (short lengthscales make the
    torque wiggle on the domain scale, as a sample path would); leaving them
    null optimizes the kernel by likelihood instead, which tends to produce
    a much smoother torque.
    """

    kind: str = "gp_mean"
    source: str = "sine_abs"
    n_points: int = 50
    seed: int = 7
    noise_variance: float = 1e-8
    signal_variance: Optional[float] = None
    lengthscale: Optional[float] = None
    qdot_box: tuple = ((-1.0, 1.0), (-1.0, 1.0))
    q_box: tuple = ((0.0, 1.0), (0.0, 1.0))

    def __post_init__(self):
        if self.kind not in ("zero", "sine_abs", "gp_mean"):
            raise ConfigError(f"disturbance.kind {self.kind!r} not recognized")
        if self.source != "sine_abs":
            raise ConfigError(f"disturbance.source {self.source!r} not recognized")
        if self.n_points < 1:
            raise ConfigError("disturbance.n_points must be >= 1")
        if self.noise_variance < 0.0:
            raise ConfigError("disturbance.noise_variance must be non-negative")
        if (self.signal_variance is None) != (self.lengthscale is None):
            raise ConfigError(
                "disturbance.signal_variance and lengthscale must be set together"
            )
        if self.signal_variance is not None and not self.signal_variance > 0.0:
            raise ConfigError("disturbance.signal_variance must be positive")
        if self.lengthscale is not None and not self.lengthscale > 0.0:
            raise ConfigError("disturbance.lengthscale must be positive")
        object.__setattr__(self, "qdot_box", _check_box(self.qdot_box, _N, "disturbance.qdot_box"))
        object.__setattr__(self, "q_box", _check_box(self.q_box, _N, "disturbance.q_box"))

    def build(self):
        if self.kind == "zero":
            return None
        if self.kind == "sine_abs":
            return dynamics.sine_abs_dynamics(_N)
        from . import gp

        hyper = None
        if self.signal_variance is not None:
            hyper = gp.Hyperparameters(
                signal_variance=self.signal_variance,
                lengthscales=np.full(2 * _N, self.lengthscale),
                noise_variance=self.noise_variance,
            )
        return dynamics.gp_mean_dynamics(
            dynamics.sine_abs_torque,
            _N,
            np.asarray(self.qdot_box, dtype=float),
            np.asarray(self.q_box, dtype=float),
            n_points=self.n_points,
            seed=self.seed,
            noise_variance=self.noise_variance,
            hyperparameters=hyper,
        )


@dataclass(frozen=True)
class TrainingConfig:
    """Residual training-set generation: domain box, size, sampling mode."""

    m: int = 225
    qddot_box: tuple = ((-1.0, 1.0), (-1.0, 1.0))
    qdot_box: tuple = ((-1.0, 1.0), (-1.0, 1.0))
    q_box: tuple = ((0.0, 1.0), (0.0, 1.0))
    sampling: str = "uniform"
    noise_std: float = 0.0

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError("training.m must be >= 1")
        if self.sampling not in ("uniform", "grid"):
            raise ConfigError(f"training.sampling {self.sampling!r} not recognized")
        if self.noise_std < 0.0:
            raise ConfigError("training.noise_std must be non-negative")
        for name in ("qddot_box", "qdot_box", "q_box"):
            object.__setattr__(self, name, _check_box(getattr(self, name), _N, f"training.{name}"))


@dataclass(frozen=True)
class GPConfig:
    restarts: int = 5
    max_iter: int = 100
    init_signal_variance: Optional[float] = None
    init_lengthscale: float = 1.0
    init_noise_variance: float = 1e-6

    def __post_init__(self):
        if self.restarts < 1:
            raise ConfigError("gp.restarts must be >= 1")
        if self.max_iter < 1:
            raise ConfigError("gp.max_iter must be >= 1")
        if self.init_signal_variance is not None and not self.init_signal_variance > 0.0:
            raise ConfigError("gp.init_signal_variance must be positive or null")
        if not self.init_lengthscale > 0.0:
            raise ConfigError("gp.init_lengthscale must be positive")
        if self.init_noise_variance < 0.0:
            raise ConfigError("gp.init_noise_variance must be non-negative")


@dataclass(frozen=True)
class GainConfig:
    base_p: tuple = (10.0, 10.0)
    base_d: tuple = (10.0, 10.0)
    weight_p: tuple = (30.0, 30.0)
    weight_d: tuple = (30.0, 30.0)
    ceiling_p: Optional[tuple] = None
    ceiling_d: Optional[tuple] = None

    def __post_init__(self):
        for name in ("base_p", "base_d", "weight_p", "weight_d"):
            vec = _tuplify(getattr(self, name))
            object.__setattr__(self, name, vec)
            if len(vec) != _N:
                raise ConfigError(f"gains.{name} must have {_N} entries")
        for name in ("base_p", "base_d"):
            if any(not v > 0.0 for v in getattr(self, name)):
                raise ConfigError(f"gains.{name} entries must be positive")
        for name in ("weight_p", "weight_d"):
            if any(v < 0.0 for v in getattr(self, name)):
                raise ConfigError(f"gains.{name} entries must be non-negative")
        for name in ("ceiling_p", "ceiling_d"):
            vec = getattr(self, name)
            if vec is None:
                continue
            vec = _tuplify(vec)
            object.__setattr__(self, name, vec)
            base = getattr(self, name.replace("ceiling", "base"))
            if len(vec) != _N:
                raise ConfigError(f"gains.{name} must have {_N} entries")
            if any(c < b for c, b in zip(vec, base)):
                raise ConfigError(f"gains.{name} must dominate the base gains")

    def build(self, signal_variances=None):
        return control.GainSchedule.affine(
            base_p=self.base_p,
            base_d=self.base_d,
            weight_p=self.weight_p,
            weight_d=self.weight_d,
            ceiling_p=None if self.ceiling_p is None else np.asarray(self.ceiling_p, dtype=float),
            ceiling_d=None if self.ceiling_d is None else np.asarray(self.ceiling_d, dtype=float),
            signal_variances=signal_variances,
        )


@dataclass(frozen=True)
class InitialStateConfig:
    q: tuple = (0.0, 0.0)
    qdot: tuple = (0.0, 0.0)

    def __post_init__(self):
        for name in ("q", "qdot"):
            vec = _tuplify(getattr(self, name))
            object.__setattr__(self, name, vec)
            if len(vec) != _N:
                raise ConfigError(f"initial_state.{name} must have {_N} entries")


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-3

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ConfigError("integrator.dt must be positive")


@dataclass(frozen=True)
class AnalysisConfig:
    """Inputs of the stability analysis that are not derivable from the run."""

    delta: float = 0.1
    epsilon2: float = 1.0
    n_domain_samples: int = 2000
    qddot_box: tuple = ((-1.0, 1.0), (-1.0, 1.0))
    qdot_box: tuple = ((-1.0, 1.0), (-1.0, 1.0))
    q_box: tuple = ((0.0, 1.0), (0.0, 1.0))
    rkhs_norms: Optional[tuple] = None

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ConfigError("analysis.delta must lie in (0, 1)")
        if not self.epsilon2 > 0.0:
            raise ConfigError("analysis.epsilon2 must be positive")
        if self.n_domain_samples < 1:
            raise ConfigError("analysis.n_domain_samples must be >= 1")
        for name in ("qddot_box", "qdot_box", "q_box"):
            object.__setattr__(self, name, _check_box(getattr(self, name), _N, f"analysis.{name}"))
        if self.rkhs_norms is not None:
            vec = _tuplify(self.rkhs_norms)
            object.__setattr__(self, "rkhs_norms", vec)
            if len(vec) != _N or any(v < 0.0 for v in vec):
                raise ConfigError(f"analysis.rkhs_norms must be {_N} non-negative values")


@dataclass(frozen=True)
class ExperimentConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    disturbance: DisturbanceConfig = field(default_factory=DisturbanceConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    gp: GPConfig = field(default_factory=GPConfig)
    gains: GainConfig = field(default_factory=GainConfig)
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    initial_state: InitialStateConfig = field(default_factory=InitialStateConfig)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    seed: int = 0
    output_dir: str = "runs"

    def __post_init__(self):
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        if self.trajectory.n != _N:
            raise ConfigError(f"trajectory must describe {_N} joints")

    # builders

    def build_plant(self):
        return self.plant.build()

    def build_disturbance(self):
        return self.disturbance.build()

    def build_trajectory(self):
        return self.trajectory

    def build_schedule(self, signal_variances=None):
        return self.gains.build(signal_variances=signal_variances)

    def initial_state_arrays(self):
        return (
            np.asarray(self.initial_state.q, dtype=float),
            np.asarray(self.initial_state.qdot, dtype=float),
        )

    # serialization

    @classmethod
    def from_dict(cls, payload):
        if not isinstance(payload, dict):
            raise ConfigError("config root must be an object")
        known = {
            "plant": PlantConfig,
            "disturbance": DisturbanceConfig,
            "training": TrainingConfig,
            "gp": GPConfig,
            "gains": GainConfig,
            "trajectory": TrajectorySpec,
            "initial_state": InitialStateConfig,
            "integrator": IntegratorConfig,
            "analysis": AnalysisConfig,
        }
        unknown = set(payload) - set(known) - {"seed", "output_dir"}
        if unknown:
            raise ConfigError(f"config: unknown keys {sorted(unknown)}")
        kwargs = {
            name: _build(sub, payload.get(name), name) for name, sub in known.items()
        }
        kwargs["seed"] = payload.get("seed", 0)
        kwargs["output_dir"] = payload.get("output_dir", "runs")
        return cls(**kwargs)

    def to_dict(self):
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if hasattr(value, "__dataclass_fields__"):
                out[f.name] = {
                    sub.name: _listify(getattr(value, sub.name))
                    for sub in fields(value)
                }
            else:
                out[f.name] = value
        return out

    @classmethod
    def from_json(cls, path):
        try:
            with open(path) as fh:
                payload = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(payload)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    def with_overrides(self, seed=None, output_dir=None):
        changes = {}
        if seed is not None:
            changes["seed"] = seed
        if output_dir is not None:
            changes["output_dir"] = output_dir
        if not changes:
            return self
        from dataclasses import replace

        return replace(self, **changes)
