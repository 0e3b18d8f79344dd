"""Neural attack generators and their on-disk format.

Two architectures, both plain affine+ReLU stacks with a linear output
layer:

* :class:`FnnGenerator` maps the current measurement and (a configurable
  subset of) the previous state estimate straight to an attack vector.
* :class:`DfnnGenerator` carries a latent vector across steps -- the
  network advances the latent from the current measurement, and a linear
  read-out matrix produces the attack -- for attackers without access to
  the estimate.

Generated attacks are always masked to the compromised-sensor support.
Inputs pass through a fixed per-channel affine normalizer (set from the
scenario) so raw road/altitude coordinates do not destabilize training.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad

__all__ = ["SensorSupport", "FnnGenerator", "DfnnGenerator", "fnn_generate", "dfnn_generate", "save_generator", "load_generator"]

_FORMAT = "cpsvuln-generator"
_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SensorSupport:
    """Indices (0-based) of sensors the attacker can corrupt."""

    indices: tuple
    p: int

    def __post_init__(self):
        idx = tuple(sorted(set(int(i) for i in self.indices)))
        if any(i < 0 or i >= self.p for i in idx):
            raise ValueError(f"support indices {idx} outside sensor range 0..{self.p - 1}")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def full(cls, p: int) -> "SensorSupport":
        return cls(indices=tuple(range(p)), p=p)

    @classmethod
    def from_one_based(cls, indices, p: int) -> "SensorSupport":
        return cls(indices=tuple(int(i) - 1 for i in indices), p=p)

    def mask(self) -> np.ndarray:
        m = np.zeros(self.p)
        m[list(self.indices)] = 1.0
        return m


def _init_layers(sizes, rng):
    """Uniform +-sqrt(1/fan_in) weights, zero biases."""
    layers = []
    for din, dout in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(1.0 / din)
        W = ad.Tensor(rng.uniform(-bound, bound, size=(din, dout)), requires_grad=True)
        b = ad.Tensor(np.zeros(dout), requires_grad=True)
        layers.append((W, b))
    return layers


def _mlp_forward(layers, x: np.ndarray) -> np.ndarray:
    """Plain numpy forward pass; ReLU on hidden layers, linear output."""
    z = x
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        z = z @ W.data + b.data
        if i != last:
            z = np.maximum(z, 0.0)
    return z


def _mlp_forward_tape(layers, x) -> ad.Tensor:
    """Same forward pass built from tape primitives (x may be a Tensor)."""
    z = x
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        z = ad.add(ad.matmul(z, W), b)
        if i != last:
            z = ad.relu(z)
    return z


class _GeneratorBase:
    def __init__(self, sizes, support, input_center=None, input_scale=None, rng=None):
        self.sizes = tuple(int(s) for s in sizes)
        self.support = support
        din = self.sizes[0]
        self.input_center = np.zeros(din) if input_center is None else np.asarray(input_center, dtype=np.float64)
        self.input_scale = np.ones(din) if input_scale is None else np.asarray(input_scale, dtype=np.float64)
        if self.input_center.shape != (din,) or self.input_scale.shape != (din,):
            raise ValueError(f"normalizer shape must be ({din},)")
        rng = np.random.default_rng(0) if rng is None else rng
        self.layers = _init_layers(self.sizes, rng)

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.input_center) * self.input_scale

    def parameters(self):
        params = []
        for W, b in self.layers:
            params.extend((W, b))
        return params


class FnnGenerator(_GeneratorBase):
    """Feedforward attack generator on (measurement, previous estimate).

    ``est_features`` selects which state-estimate entries feed the input
    (default: all).  The input layout is ``[y, x_hat_prev[est_features]]``.
    """

    kind = "fnn"

    def __init__(self, p, hidden, est_features, support, input_center=None, input_scale=None, rng=None):
        self.p = int(p)
        self.est_features = tuple(int(i) for i in est_features)
        sizes = (self.p + len(self.est_features),) + tuple(hidden) + (self.p,)
        super().__init__(sizes, support, input_center, input_scale, rng)

    def input_vector(self, y, x_hat_prev) -> np.ndarray:
        raw = np.concatenate([np.asarray(y, dtype=np.float64), np.asarray(x_hat_prev, dtype=np.float64)[list(self.est_features)]])
        return self.normalize(raw)

    def forward(self, y, x_hat_prev) -> np.ndarray:
        out = _mlp_forward(self.layers, self.input_vector(y, x_hat_prev))
        return out * self.support.mask()


class DfnnGenerator(_GeneratorBase):
    """Latent-state attack generator on measurements only.

    The network maps ``[y, r_prev]`` to the next latent ``r``; the attack
    is the masked read-out ``r @ W_out``.  The latent is reset to zero
    when an attack starts.
    """

    kind = "dfnn"

    def __init__(self, p, hidden, latent_dim, support, input_center=None, input_scale=None, rng=None):
        self.p = int(p)
        self.latent_dim = int(latent_dim)
        sizes = (self.p + self.latent_dim,) + tuple(hidden) + (self.latent_dim,)
        rng = np.random.default_rng(0) if rng is None else rng
        super().__init__(sizes, support, input_center, input_scale, rng)
        bound = np.sqrt(1.0 / self.latent_dim)
        self.W_out = ad.Tensor(rng.uniform(-bound, bound, size=(self.latent_dim, self.p)), requires_grad=True)
        self.r = np.zeros(self.latent_dim)

    def reset_latent(self):
        self.r = np.zeros(self.latent_dim)

    def input_vector(self, y, r_prev) -> np.ndarray:
        raw = np.concatenate([np.asarray(y, dtype=np.float64), np.asarray(r_prev, dtype=np.float64)])
        return self.normalize(raw)

    def advance(self, y, r_prev):
        """One latent transition; returns (attack, next latent)."""
        r_next = _mlp_forward(self.layers, self.input_vector(y, r_prev))
        a = (r_next @ self.W_out.data) * self.support.mask()
        return a, r_next

    def parameters(self):
        return super().parameters() + [self.W_out]


def fnn_generate(gen: FnnGenerator, y, x_hat_prev, support: SensorSupport | None = None) -> np.ndarray:
    """Generate one attack vector, masked to the given support."""
    out = _mlp_forward(gen.layers, gen.input_vector(y, x_hat_prev))
    mask = (support or gen.support).mask()
    return out * mask


def dfnn_generate(gen: DfnnGenerator, y, support: SensorSupport | None = None):
    """Generate one attack vector from the carried latent; advances ``gen.r``."""
    r_next = _mlp_forward(gen.layers, gen.input_vector(y, gen.r))
    mask = (support or gen.support).mask()
    a = (r_next @ gen.W_out.data) * mask
    gen.r = r_next
    return a, r_next


# ---------------------------------------------------------------------------
# serialization: JSON with hex-encoded floats, bitwise round-trip
# ---------------------------------------------------------------------------


def _enc(arr: np.ndarray):
    return {"shape": list(arr.shape), "hex": [v.hex() for v in np.asarray(arr, dtype=np.float64).ravel()]}


def _dec(obj) -> np.ndarray:
    data = np.array([float.fromhex(h) for h in obj["hex"]], dtype=np.float64)
    return data.reshape(obj["shape"])


def save_generator(gen, path, model_id: str = "", training_config: dict | None = None):
    """Write a generator (weights, support, normalizer, metadata) to disk."""
    doc = {
        "format": _FORMAT,
        "version": _FORMAT_VERSION,
        "kind": gen.kind,
        "model_id": model_id,
        "p": gen.p,
        "sizes": list(gen.sizes),
        "support": [i + 1 for i in gen.support.indices],
        "input_center": _enc(gen.input_center),
        "input_scale": _enc(gen.input_scale),
        "training_config": training_config or {},
        "weights": [_enc(W.data) for W, _ in gen.layers],
        "biases": [_enc(b.data) for _, b in gen.layers],
    }
    if gen.kind == "fnn":
        doc["est_features"] = list(gen.est_features)
    else:
        doc["latent_dim"] = gen.latent_dim
        doc["W_out"] = _enc(gen.W_out.data)
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_generator(path):
    """Load a generator saved by :func:`save_generator` (bitwise exact)."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != _FORMAT:
        raise ValueError(f"{path}: not a generator artifact")
    if doc.get("version") != _FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported artifact version {doc.get('version')}")
    p = int(doc["p"])
    support = SensorSupport.from_one_based(doc["support"], p)
    sizes = [int(s) for s in doc["sizes"]]
    hidden = tuple(sizes[1:-1])
    if doc["kind"] == "fnn":
        gen = FnnGenerator(
            p, hidden, doc["est_features"], support,
            input_center=_dec(doc["input_center"]), input_scale=_dec(doc["input_scale"]),
        )
    elif doc["kind"] == "dfnn":
        gen = DfnnGenerator(
            p, hidden, int(doc["latent_dim"]), support,
            input_center=_dec(doc["input_center"]), input_scale=_dec(doc["input_scale"]),
        )
        gen.W_out.data = _dec(doc["W_out"])
    else:
        raise ValueError(f"{path}: unknown generator kind {doc['kind']!r}")
    for (W, b), Wd, bd in zip(gen.layers, doc["weights"], doc["biases"]):
        W.data = _dec(Wd)
        b.data = _dec(bd)
    return gen, doc.get("model_id", ""), doc.get("training_config", {})
