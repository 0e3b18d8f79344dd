"""Replay-engine equivalence: compiled kernels against the tape graph."""

import os

import numpy as np
import pytest

from cpsvuln import autodiff as ad
from cpsvuln.attack import engine
from cpsvuln.attack.generators import DfnnGenerator, FnnGenerator, SensorSupport
from cpsvuln.estimation import ExtendedKalmanFilter
from cpsvuln.models import BicyclePlant


class LinearObsModel:
    """Minimal stand-in exposing only what the engine needs."""

    def __init__(self, n, p, rng):
        H = np.zeros((p, n))
        H[:, :p] = np.eye(p)
        self.h_matrix = H
        self.n, self.p = n, p

    def h(self, x):
        return self.h_matrix @ x

    def dhdx(self, x):
        return self.h_matrix


def make_replay_data(model, N, rng):
    n, p = model.n, model.p
    L = 0.3 * rng.normal(size=(N, n, p))
    A = 0.2 * rng.normal(size=(N, p, p))
    Sinv = np.einsum("nij,nkj->nik", A, A) + 0.8 * np.eye(p)[None]
    XP = rng.normal(size=(N, n))
    return engine.ReplayData(
        Y=rng.normal(size=(N, p)),
        HXP=XP @ model.h_matrix.T,
        XP=XP,
        L=np.ascontiguousarray(L),
        Sinv=np.ascontiguousarray(Sinv),
        HL=np.ascontiguousarray(np.einsum("qk,nkp->nqp", model.h_matrix, L)),
        model=model,
    )


def grads_with(backend_pure, fn):
    if backend_pure:
        os.environ["CPSVULN_PURE_PYTHON"] = "1"
    try:
        return fn()
    finally:
        os.environ.pop("CPSVULN_PURE_PYTHON", None)


needs_compiled = pytest.mark.skipif(not engine.compiled_available(), reason="compiled kernels not built")


@needs_compiled
@pytest.mark.parametrize("support_idx", [(0, 1), (0,)])
def test_fnn_kernel_matches_tape(support_idx):
    rng = np.random.default_rng(42)
    model = LinearObsModel(4, 2, rng)
    data = make_replay_data(model, 57, rng)
    gen = FnnGenerator(2, (7, 5), est_features=(0, 1, 2),
                       support=SensorSupport(indices=support_idx, p=2),
                       rng=np.random.default_rng(7))
    data.X = np.ascontiguousarray(rng.normal(size=(57, gen.sizes[0])))
    w = np.full(57, 0.05)
    w[-1] = 1.0
    w /= w.sum()

    j_fast, g_fast = engine.fnn_objective_and_grads(gen, data, 0.2, 1e-12, w)
    j_tape, g_tape = grads_with(True, lambda: engine.fnn_objective_and_grads(gen, data, 0.2, 1e-12, w))
    assert j_fast == pytest.approx(j_tape, rel=1e-12, abs=1e-12)
    for a, b in zip(g_fast, g_tape):
        assert np.allclose(a, b, rtol=1e-9, atol=1e-12)


@needs_compiled
def test_dfnn_kernel_matches_tape():
    rng = np.random.default_rng(17)
    model = LinearObsModel(4, 2, rng)
    data = make_replay_data(model, 41, rng)
    data.Yn = np.ascontiguousarray(rng.normal(size=(41, 2)))
    gen = DfnnGenerator(2, (7, 6), latent_dim=3, support=SensorSupport.full(2),
                        rng=np.random.default_rng(9))
    w = np.full(41, 0.05)
    w[-1] = 1.0
    w /= w.sum()
    j_fast, g_fast = engine.dfnn_objective_and_grads(gen, data, 0.2, 1e-12, w)
    j_tape, g_tape = grads_with(True, lambda: engine.dfnn_objective_and_grads(gen, data, 0.2, 1e-12, w))
    assert j_fast == pytest.approx(j_tape, rel=1e-12, abs=1e-12)
    for a, b in zip(g_fast, g_tape):
        assert np.allclose(a, b, rtol=1e-9, atol=1e-12)


def test_fnn_tape_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    model = LinearObsModel(3, 2, rng)
    data = make_replay_data(model, 9, rng)
    gen = FnnGenerator(2, (5,), est_features=(0, 1), support=SensorSupport.full(2),
                       rng=np.random.default_rng(5))
    data.X = np.ascontiguousarray(rng.normal(size=(9, gen.sizes[0])))
    w = np.full(9, 0.1)
    w[-1] = 1.0
    w /= w.sum()

    def objective():
        j, _ = grads_with(True, lambda: engine.fnn_objective_and_grads(gen, data, 0.3, 1e-12, w))
        return j

    _, grads = grads_with(True, lambda: engine.fnn_objective_and_grads(gen, data, 0.3, 1e-12, w))
    params = gen.parameters()
    h = 1e-6
    for param, grad in zip(params, grads):
        flat = param.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            jp = objective()
            flat[i] = orig - h
            jm = objective()
            flat[i] = orig
            fd = (jp - jm) / (2 * h)
            assert grad.reshape(-1)[i] == pytest.approx(fd, rel=1e-4, abs=1e-7)


def test_dfnn_bptt_gradient_matches_finite_differences():
    rng = np.random.default_rng(13)
    model = LinearObsModel(3, 2, rng)
    data = make_replay_data(model, 6, rng)
    data.Yn = np.ascontiguousarray(rng.normal(size=(6, 2)))
    gen = DfnnGenerator(2, (4,), latent_dim=2, support=SensorSupport.full(2),
                        rng=np.random.default_rng(23))
    w = np.full(6, 0.2)
    w[-1] = 1.0
    w /= w.sum()

    def objective():
        j, _ = grads_with(True, lambda: engine.dfnn_objective_and_grads(gen, data, 0.3, 1e-12, w))
        return j

    _, grads = grads_with(True, lambda: engine.dfnn_objective_and_grads(gen, data, 0.3, 1e-12, w))
    params = gen.parameters()
    h = 1e-6
    for param, grad in zip(params, grads):
        flat = param.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            jp = objective()
            flat[i] = orig - h
            jm = objective()
            flat[i] = orig
            fd = (jp - jm) / (2 * h)
            assert grad.reshape(-1)[i] == pytest.approx(fd, rel=1e-4, abs=1e-7)


def test_nonlinear_observation_falls_back_to_tape():
    """A plant with nonlinear h must route through the tape engine."""

    class PolarObs:
        def __init__(self):
            self.n, self.p = 2, 2
            self.h_matrix = None

        def h(self, x):
            return np.array([np.hypot(x[0], x[1]), np.arctan2(x[1], x[0])])

        def dhdx(self, x):
            r = np.hypot(x[0], x[1])
            return np.array([
                [x[0] / r, x[1] / r],
                [-x[1] / r**2, x[0] / r**2],
            ])

    model = PolarObs()
    rng = np.random.default_rng(31)
    N = 5
    L = 0.2 * rng.normal(size=(N, 2, 2))
    Sinv = np.stack([np.eye(2)] * N)
    XP = rng.normal(size=(N, 2)) + 3.0  # away from the origin
    data = engine.ReplayData(
        Y=rng.normal(size=(N, 2)),
        HXP=np.stack([model.h(x) for x in XP]),
        XP=XP,
        L=np.ascontiguousarray(L),
        Sinv=np.ascontiguousarray(Sinv),
        HL=None,
        model=model,
    )
    gen = FnnGenerator(2, (4,), est_features=(0, 1), support=SensorSupport.full(2),
                       rng=np.random.default_rng(5))
    data.X = np.ascontiguousarray(rng.normal(size=(N, 4)))
    w = np.ones(N) / N
    j, grads = engine.fnn_objective_and_grads(gen, data, 0.3, 1e-12, w)
    assert np.isfinite(j)

    h = 1e-6
    W0 = gen.layers[0][0]
    flat = W0.data.reshape(-1)
    g0 = grads[0].reshape(-1)
    for i in range(0, flat.size, 5):
        orig = flat[i]
        flat[i] = orig + h
        jp, _ = engine.fnn_objective_and_grads(gen, data, 0.3, 1e-12, w)
        flat[i] = orig - h
        jm, _ = engine.fnn_objective_and_grads(gen, data, 0.3, 1e-12, w)
        flat[i] = orig
        assert g0[i] == pytest.approx((jp - jm) / (2 * h), rel=1e-3, abs=1e-7)


def test_instantaneous_cost_structure():
    """delta = 0 reduces to the detection value; the error term subtracts."""
    m = BicyclePlant()
    ekf = ExtendedKalmanFilter(m, x0_hat=np.array([0.0, 0.0, 0.0, 10.0]), P0=np.eye(4))
    ekf.predict(np.zeros(2))
    y = ekf.hx_pred + np.array([0.1, -0.05])
    h_fn = engine.tape_observation(m)
    with ad.Tape():
        xh_a, g_a = ekf.update_differentiable(ad.Tensor(y), ad.Tensor(np.zeros(2)))
        j0 = engine.instantaneous_cost(g_a, ad.Tensor(y), xh_a, h_fn, delta=0.0, eps=1e-12)
        j1 = engine.instantaneous_cost(g_a, ad.Tensor(y), xh_a, h_fn, delta=0.5, eps=1e-12)
    assert j0.item() == pytest.approx(g_a.item())
    err = y - m.h(xh_a.data)
    assert j1.item() == pytest.approx(g_a.item() - 0.5 * np.sqrt(err @ err + 1e-12))


def test_instantaneous_cost_gradient_vs_finite_differences():
    m = BicyclePlant()
    ekf = ExtendedKalmanFilter(m, x0_hat=np.array([0.0, 0.0, 0.05, 10.0]), P0=np.eye(4))
    ekf.predict(np.array([0.0, 0.01]))
    y = ekf.hx_pred + np.array([0.1, -0.05])
    h_fn = engine.tape_observation(m)
    a0 = np.array([0.02, -0.01])

    def j_of(a_val):
        z = y + a_val - ekf.hx_pred
        g = z @ ekf.S_inv @ z
        xh = ekf.x_pred + ekf.L_gain @ z
        err = y - m.h(xh)
        return g - 0.2 * np.sqrt(err @ err + 1e-12)

    a = ad.Tensor(a0, requires_grad=True)
    with ad.Tape() as tape:
        xh_a, g_a = ekf.update_differentiable(ad.Tensor(y), a)
        j = engine.instantaneous_cost(g_a, ad.Tensor(y), xh_a, h_fn, delta=0.2, eps=1e-12)
    grads = ad.backward(j, tape)
    h = 1e-6
    for i in range(2):
        d = np.zeros(2)
        d[i] = h
        fd = (j_of(a0 + d) - j_of(a0 - d)) / (2 * h)
        assert grads[a][i] == pytest.approx(fd, rel=1e-5)


def test_backend_env_override():
    assert engine.backend_name() in ("compiled", "python")
    os.environ["CPSVULN_PURE_PYTHON"] = "1"
    try:
        assert engine.backend_name() == "python"
    finally:
        del os.environ["CPSVULN_PURE_PYTHON"]
