"""Closed-loop orchestration and success evaluation.

One simulation step runs: controller on the current estimate, plant
step, measurement, filter prediction, attacker (from the attack start),
filter update with the received output, detector.  Everything is driven
by independent child streams of one seeded generator, so a scenario and
seed pin the run bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import models
from ..attack import (
    AnalyticLtiAttacker,
    DfnnGenerator,
    FnnGenerator,
    FrozenAttacker,
    OnlineAttackTrainer,
    SensorSupport,
    TrainingConfig,
)
from ..detection import DetectorConfig
from ..estimation import ExtendedKalmanFilter, SingularityError
from .controllers import CurvyRoad, LtiRegulator, QuadrotorController, StraightRoad, VehicleLaneKeeping
from .scenario import Scenario, ScenarioError

__all__ = [
    "RunRecord",
    "RunSummary",
    "SuccessReport",
    "ClosedLoop",
    "build_model",
    "build_controller",
    "build_generator",
    "make_loop",
    "run_scenario",
    "rollout_frozen",
    "evaluate_success",
]

# estimator initialization: P0 = I, x_hat0 = x0 + N(0, INIT_STD^2)
INIT_STD = 0.1
# one-sided 95% normal quantile for the empirical-alarm-rate allowance
STEALTH_Z = 1.645
# offset between a training seed and the fresh evaluation-rollout seed
EVAL_SEED_OFFSET = 10_000


@dataclass
class RunSummary:
    max_error: float
    first_crossing: int | None
    alarm_rate_before: float | None
    alarm_rate_after: float | None
    n_attacked: int


@dataclass
class SuccessReport:
    """Outcome of the error/stealth success test on one run."""

    success: bool
    error_reached: bool
    stealthy: bool
    max_error: float
    first_crossing: int | None
    alarm_rate: float
    stealth_threshold: float
    alpha: float
    epsilon: float
    n_attacked: int


@dataclass
class RunRecord:
    """Per-step log of one closed-loop run plus its configuration."""

    model_id: str
    dt: float
    t0: int
    eta: float
    epsilon: float
    alpha: float
    t: np.ndarray
    x: np.ndarray
    xhat: np.ndarray
    xpred: np.ndarray
    u: np.ndarray
    y: np.ndarray
    a: np.ndarray
    yc: np.ndarray
    z: np.ndarray
    g: np.ndarray
    alarm: np.ndarray
    S: np.ndarray
    escaped: bool = False

    @property
    def n(self):
        return self.x.shape[1]

    @property
    def m(self):
        return self.u.shape[1]

    @property
    def p(self):
        return self.y.shape[1]

    def __len__(self):
        return self.t.shape[0]

    def error_norms(self) -> np.ndarray:
        return np.linalg.norm(self.x - self.xhat, axis=1)

    def attacked_mask(self) -> np.ndarray:
        return self.t >= self.t0

    def summary(self) -> RunSummary:
        err = self.error_norms()
        att = self.attacked_mask()
        crossing = None
        if self.alpha >= 0 and att.any():
            idx = np.nonzero(att & (err >= self.alpha))[0]
            crossing = int(self.t[idx[0]]) if idx.size else None
        return RunSummary(
            max_error=float(err.max()) if len(self) else 0.0,
            first_crossing=crossing,
            alarm_rate_before=float(np.mean(self.alarm[~att])) if (~att).any() else None,
            alarm_rate_after=float(np.mean(self.alarm[att])) if att.any() else None,
            n_attacked=int(att.sum()),
        )


def evaluate_success(record: RunRecord, alpha: float, epsilon: float) -> SuccessReport:
    """Error-above-alpha and alarm-rate-below-epsilon test over the attack window.

    The empirical alarm rate is allowed a one-sided binomial 95% margin
    at the recorded sample size, since the stealth condition is a
    probability statement evaluated from finitely many steps.
    """
    att = record.attacked_mask()
    n_att = int(att.sum())
    if n_att == 0:
        raise ValueError("record has no steps in the attack window")
    err = record.error_norms()[att]
    alarms = record.alarm[att]
    max_error = float(err.max())
    reached = np.nonzero(err >= alpha)[0]
    error_reached = reached.size > 0
    first_crossing = int(record.t[att][reached[0]]) if error_reached else None
    rate = float(np.mean(alarms))
    threshold = epsilon + STEALTH_Z * np.sqrt(epsilon * (1.0 - epsilon) / n_att)
    stealthy = rate <= threshold
    return SuccessReport(
        success=bool(error_reached and stealthy),
        error_reached=bool(error_reached),
        stealthy=bool(stealthy),
        max_error=max_error,
        first_crossing=first_crossing,
        alarm_rate=rate,
        stealth_threshold=float(threshold),
        alpha=float(alpha),
        epsilon=float(epsilon),
        n_attacked=n_att,
    )


class ClosedLoop:
    """Plant + controller + filter + detector wiring for one run."""

    def __init__(self, model, controller, detector: DetectorConfig, x0, seed, t0=0, model_id="", alpha=0.0):
        self.model = model
        self.controller = controller
        self.detector = detector
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.t0 = int(t0)
        self.model_id = model_id
        self.alpha = float(alpha)
        master = np.random.default_rng(seed)
        self._rng_init, self._rng_gen_init, self._rng_plant, self._rng_meas, self._rng_attack = master.spawn(5)
        self.xhat0 = self.x0 + INIT_STD * self._rng_init.standard_normal(model.n)
        self.ekf = ExtendedKalmanFilter(model, self.xhat0, P0=np.eye(model.n))

    def generator_rng(self):
        """Stream reserved for attack-generator weight initialization."""
        return self._rng_gen_init

    def run(self, steps: int, attacker=None) -> RunRecord:
        model, ekf = self.model, self.ekf
        state = models.PlantState(x=self.x0.copy(), t=0)
        rows = {k: [] for k in ("t", "x", "xhat", "xpred", "u", "y", "a", "yc", "z", "g", "alarm", "S")}
        escaped = False
        for t in range(1, steps + 1):
            u = self.controller.u(ekf.x_hat, (t - 1) * model.dt)
            u = np.asarray(u, dtype=np.float64).reshape(model.m)
            if not np.all(np.isfinite(u)):
                escaped = True
                break
            try:
                state = models.step(model, state, u, self._rng_plant)
            except models.NumericEscapeError:
                escaped = True
                break
            y = models.observe(model, state, self._rng_meas)
            try:
                ekf.predict(u)
            except SingularityError:
                # a blown-up estimate can destroy the covariance recursion;
                # treat it like a plant escape and return the partial record
                escaped = True
                break
            if attacker is not None and t >= self.t0:
                a = np.asarray(attacker(t, y, u, ekf, self._rng_attack), dtype=np.float64)
            else:
                a = np.zeros(model.p)
            y_c = y + a
            res = ekf.update(y_c)
            rows["t"].append(t)
            rows["x"].append(state.x.copy())
            rows["xhat"].append(ekf.x_hat.copy())
            rows["xpred"].append(ekf.x_pred.copy())
            rows["u"].append(u.copy())
            rows["y"].append(y)
            rows["a"].append(a)
            rows["yc"].append(y_c)
            rows["z"].append(res.z.copy())
            rows["g"].append(res.g)
            rows["alarm"].append(self.detector.evaluate(res.g))
            rows["S"].append(res.S)
        empty = len(rows["t"]) == 0

        def stack(key, width):
            if empty:
                return np.zeros((0, width))
            return np.stack(rows[key])

        return RunRecord(
            model_id=self.model_id,
            dt=model.dt,
            t0=self.t0,
            eta=self.detector.eta,
            epsilon=self.detector.epsilon,
            alpha=self.alpha,
            t=np.asarray(rows["t"], dtype=np.int64),
            x=stack("x", model.n),
            xhat=stack("xhat", model.n),
            xpred=stack("xpred", model.n),
            u=stack("u", model.m),
            y=stack("y", model.p),
            a=stack("a", model.p),
            yc=stack("yc", model.p),
            z=stack("z", model.p),
            g=np.asarray(rows["g"], dtype=np.float64),
            alarm=np.asarray(rows["alarm"], dtype=bool),
            S=stack("S", model.p).reshape(-1, model.p, model.p) if not empty else np.zeros((0, model.p, model.p)),
            escaped=escaped,
        )


# ---------------------------------------------------------------------------
# scenario -> objects
# ---------------------------------------------------------------------------


def build_model(sc: Scenario):
    from ..models import BicyclePlant, LtiPlant, QuadrotorPlant

    if sc.model_type == "lti_track":
        eye = np.eye(2)
        model = LtiPlant(A=eye, B=eye, C=eye, Q=0.01 * sc.q_scale * eye, R=0.01 * sc.r_scale * eye)
        x0 = np.zeros(2)
    elif sc.model_type == "lti_unstable":
        model = LtiPlant(
            A=[[1.1]], B=[[1.0]], C=[[1.0]],
            Q=[[0.01 * sc.q_scale]], R=[[0.01 * sc.r_scale]],
        )
        x0 = np.zeros(1)
    elif sc.model_type == "vehicle":
        model = BicyclePlant(Q=0.001 * sc.q_scale * np.eye(4), R=0.01 * sc.r_scale * np.eye(2))
        x0 = np.array([0.0, 0.0, 0.0, sc.v_ref])
    elif sc.model_type == "quadrotor":
        model = QuadrotorPlant(Q=0.001 * sc.q_scale * np.eye(12), R=0.05 * sc.r_scale * np.eye(9))
        x0 = np.zeros(12)
    else:  # pragma: no cover - guarded by Scenario.validate
        raise ScenarioError(f"model.type: unknown model {sc.model_type!r}")
    return model, x0


def build_controller(sc: Scenario, model):
    if sc.model_type == "lti_track":
        return LtiRegulator(K=0.5 * np.eye(2))
    if sc.model_type == "lti_unstable":
        return LtiRegulator(K=np.array([[0.4]]))
    if sc.model_type == "vehicle":
        road = StraightRoad() if sc.task == "straight" else CurvyRoad()
        return VehicleLaneKeeping(v_ref=sc.v_ref, road=road)
    return QuadrotorController(
        model,
        z_ref=sc.z_ref,
        ramp_rate=sc.ramp_rate if sc.task == "ramp" else None,
    )


def _support(sc: Scenario, p: int) -> SensorSupport:
    if sc.support is None:
        return SensorSupport.full(p)
    try:
        return SensorSupport.from_one_based(sc.support, p)
    except ValueError as exc:
        raise ScenarioError(f"attack.support: {exc}") from exc


def build_generator(sc: Scenario, model, rng):
    support = _support(sc, model.p)
    if sc.est_features is None:
        est_features = tuple(range(model.n))
    else:
        if any(i > model.n for i in sc.est_features):
            raise ScenarioError(f"train.est_features: state indices exceed n={model.n}")
        est_features = tuple(i - 1 for i in sc.est_features)
    if sc.attack_kind == "fnn":
        din = model.p + len(est_features)
        gen = FnnGenerator(
            model.p, sc.hidden, est_features, support,
            input_center=_normalizer(sc.input_center, din, "train.input_center"),
            input_scale=_normalizer(sc.input_scale, din, "train.input_scale", default=1.0),
            rng=rng,
        )
    elif sc.attack_kind == "dfnn":
        din = model.p + sc.latent
        center = _pad_latent(_normalizer(sc.input_center, model.p, "train.input_center"), sc.latent, 0.0)
        scale = _pad_latent(_normalizer(sc.input_scale, model.p, "train.input_scale", default=1.0), sc.latent, 1.0)
        gen = DfnnGenerator(
            model.p, sc.hidden, sc.latent, support,
            input_center=center, input_scale=scale, rng=rng,
        )
    else:
        raise ScenarioError(f"attack.kind: no generator for kind {sc.attack_kind!r}")
    return gen


def _normalizer(values, dim, key, default=0.0):
    if values is None:
        return np.full(dim, default)
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (dim,):
        raise ScenarioError(f"{key}: expected {dim} values, got {arr.shape[0]}")
    return arr


def _pad_latent(arr, latent, fill):
    return np.concatenate([arr, np.full(latent, fill)])


def training_config(sc: Scenario) -> TrainingConfig:
    return TrainingConfig(
        delta=sc.delta, lam=sc.lam, beta=sc.beta, horizon_T=sc.horizon_T,
        inner_max=sc.inner_max, inner_tol=sc.inner_tol, eps_smooth=sc.eps_smooth,
        grad_clip=sc.grad_clip,
    ).validate()


def make_loop(sc: Scenario, seed=None) -> ClosedLoop:
    model, x0 = build_model(sc)
    controller = build_controller(sc, model)
    detector = DetectorConfig.calibrate(sc.epsilon, model.p)
    return ClosedLoop(
        model, controller, detector, x0,
        seed=sc.seed if seed is None else seed,
        t0=sc.t0, model_id=sc.model_type, alpha=sc.alpha,
    )


@dataclass
class RunResult:
    record: RunRecord
    generator: object | None = None
    trainer: object | None = None

    def report(self) -> SuccessReport:
        return evaluate_success(self.record, self.record.alpha, self.record.epsilon)


def run_scenario(sc: Scenario, seed=None, duration=None) -> RunResult:
    """Execute a scenario as configured.

    For the learned attack kinds this is the online-training run: the
    generator trains inside the loop from the attack start for the
    configured horizon, then continues frozen.
    """
    loop = make_loop(sc, seed=seed)
    steps = sc.duration if duration is None else int(duration)
    attacker = None
    trainer = None
    generator = None
    if sc.attack_kind == "analytic":
        attacker = AnalyticLtiAttacker(loop.model, phi_scale=sc.phi_scale)
        support = _support(sc, loop.model.p)
        if support.indices != tuple(range(loop.model.p)):
            raise ScenarioError("attack.support: the analytic attack rewrites every sensor channel")
    elif sc.attack_kind in ("fnn", "dfnn"):
        generator = build_generator(sc, loop.model, loop.generator_rng())
        trainer = OnlineAttackTrainer(generator, training_config(sc), loop.model)
        attacker = trainer
    return RunResult(record=loop.run(steps, attacker=attacker), generator=generator, trainer=trainer)


def rollout_frozen(sc: Scenario, generator, seed=None, duration=None) -> RunResult:
    """Fresh closed-loop rollout applying a trained generator unchanged."""
    loop = make_loop(sc, seed=sc.seed + EVAL_SEED_OFFSET if seed is None else seed)
    steps = sc.duration if duration is None else int(duration)
    record = loop.run(steps, attacker=FrozenAttacker(generator))
    return RunResult(record=record, generator=generator)
