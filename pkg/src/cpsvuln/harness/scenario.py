"""Flat key/value scenario files.

Format: one ``section.key = value`` pair per line, ``#`` comments and
blank lines ignored.  Unknown keys are hard errors so typos cannot
silently change an experiment.  Lists are comma-separated; sensor and
state indices are 1-based in files and converted internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["ScenarioError", "Scenario", "parse_scenario", "load_scenario"]

MODEL_TYPES = ("lti_track", "lti_unstable", "vehicle", "quadrotor")
TASKS = {
    "lti_track": ("none",),
    "lti_unstable": ("none",),
    "vehicle": ("straight", "curvy"),
    "quadrotor": ("altitude", "ramp"),
}
ATTACK_KINDS = ("none", "analytic", "fnn", "dfnn")


class ScenarioError(ValueError):
    """Scenario file is malformed or inconsistent."""


def _to_int(v):
    return int(v)


def _to_float(v):
    return float(v)


def _to_str(v):
    return str(v)


def _to_int_list(v):
    return tuple(int(x.strip()) for x in str(v).split(",") if x.strip())


def _to_float_list(v):
    return tuple(float(x.strip()) for x in str(v).split(",") if x.strip())


# key -> (converter, default); None default means "unset"
_SCHEMA = {
    "model.type": (_to_str, None),
    "model.task": (_to_str, None),
    "model.q_scale": (_to_float, 1.0),
    "model.r_scale": (_to_float, 1.0),
    "controller.v_ref": (_to_float, 10.0),
    "controller.z_ref": (_to_float, 20.0),
    "controller.ramp_rate": (_to_float, 0.2),
    "detector.epsilon": (_to_float, 0.05),
    "attack.kind": (_to_str, "none"),
    "attack.t0": (_to_int, 0),
    "attack.support": (_to_int_list, None),
    "attack.phi_scale": (_to_float, 0.5),
    "train.delta": (_to_float, 0.2),
    "train.lambda": (_to_float, 0.05),
    "train.beta": (_to_float, 1e-3),
    "train.T": (_to_int, 1000),
    "train.inner_max": (_to_int, 20),
    "train.inner_tol": (_to_float, 1e-4),
    "train.eps_smooth": (_to_float, 1e-12),
    "train.grad_clip": (_to_float, None),
    "train.hidden": (_to_int_list, (15, 15)),
    "train.latent": (_to_int, 3),
    "train.est_features": (_to_int_list, None),
    "train.input_center": (_to_float_list, None),
    "train.input_scale": (_to_float_list, None),
    "run.seed": (_to_int, 0),
    "run.duration": (_to_int, 1000),
    "run.alpha": (_to_float, 0.0),
}


@dataclass
class Scenario:
    """Validated scenario configuration."""

    name: str = "scenario"
    model_type: str = "lti_track"
    task: str = "none"
    q_scale: float = 1.0
    r_scale: float = 1.0
    v_ref: float = 10.0
    z_ref: float = 20.0
    ramp_rate: float = 0.2
    epsilon: float = 0.05
    attack_kind: str = "none"
    t0: int = 0
    support: tuple | None = None  # 1-based sensor indices, None = all
    phi_scale: float = 0.5
    delta: float = 0.2
    lam: float = 0.05
    beta: float = 1e-3
    horizon_T: int = 1000
    inner_max: int = 20
    inner_tol: float = 1e-4
    eps_smooth: float = 1e-12
    grad_clip: float | None = None
    hidden: tuple = (15, 15)
    latent: int = 3
    est_features: tuple | None = None  # 1-based state indices, None = all
    input_center: tuple | None = None
    input_scale: tuple | None = None
    seed: int = 0
    duration: int = 1000
    alpha: float = 0.0

    def validate(self) -> "Scenario":
        if self.model_type not in MODEL_TYPES:
            raise ScenarioError(f"model.type: unknown model {self.model_type!r} (expected one of {MODEL_TYPES})")
        allowed = TASKS[self.model_type]
        if self.task not in allowed:
            raise ScenarioError(f"model.task: {self.task!r} invalid for {self.model_type} (expected one of {allowed})")
        if self.attack_kind not in ATTACK_KINDS:
            raise ScenarioError(f"attack.kind: unknown kind {self.attack_kind!r} (expected one of {ATTACK_KINDS})")
        if not 0.0 < self.epsilon < 1.0:
            raise ScenarioError(f"detector.epsilon: must lie in (0, 1), got {self.epsilon}")
        if self.t0 < 0:
            raise ScenarioError(f"attack.t0: must be nonnegative, got {self.t0}")
        if self.duration <= 0:
            raise ScenarioError(f"run.duration: must be positive, got {self.duration}")
        if self.alpha < 0:
            raise ScenarioError(f"run.alpha: must be nonnegative, got {self.alpha}")
        if self.attack_kind == "analytic" and not self.model_type.startswith("lti"):
            raise ScenarioError("attack.kind: the analytic attack requires an LTI model")
        if self.support is not None and any(i < 1 for i in self.support):
            raise ScenarioError(f"attack.support: sensor indices are 1-based, got {self.support}")
        if self.est_features is not None and any(i < 1 for i in self.est_features):
            raise ScenarioError(f"train.est_features: state indices are 1-based, got {self.est_features}")
        return self


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _SCHEMA:
            raise ScenarioError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ScenarioError(f"line {lineno}: duplicate key {key!r}")
        conv, _default = _SCHEMA[key]
        try:
            values[key] = conv(val)
        except ValueError as exc:
            raise ScenarioError(f"line {lineno}: {key}: cannot parse {val!r} ({exc})") from exc

    def get(key):
        return values.get(key, _SCHEMA[key][1])

    model_type = get("model.type")
    if model_type is None:
        raise ScenarioError("missing required key 'model.type'")
    task = get("model.task")
    if task is None:
        task = TASKS.get(model_type, ("none",))[0]
    sc = Scenario(
        name=name,
        model_type=model_type,
        task=task,
        q_scale=get("model.q_scale"),
        r_scale=get("model.r_scale"),
        v_ref=get("controller.v_ref"),
        z_ref=get("controller.z_ref"),
        ramp_rate=get("controller.ramp_rate"),
        epsilon=get("detector.epsilon"),
        attack_kind=get("attack.kind"),
        t0=get("attack.t0"),
        support=get("attack.support"),
        phi_scale=get("attack.phi_scale"),
        delta=get("train.delta"),
        lam=get("train.lambda"),
        beta=get("train.beta"),
        horizon_T=get("train.T"),
        inner_max=get("train.inner_max"),
        inner_tol=get("train.inner_tol"),
        eps_smooth=get("train.eps_smooth"),
        grad_clip=get("train.grad_clip"),
        hidden=get("train.hidden"),
        latent=get("train.latent"),
        est_features=get("train.est_features"),
        input_center=get("train.input_center"),
        input_scale=get("train.input_scale"),
        seed=get("run.seed"),
        duration=get("run.duration"),
        alpha=get("run.alpha"),
    )
    return sc.validate()


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from exc
    return parse_scenario(text, name=path.stem)
