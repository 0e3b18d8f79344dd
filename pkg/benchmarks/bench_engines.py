#!/usr/bin/env python3
"""Compare the compiled replay kernels against the pure-Python tape engine.

Times one objective+gradient evaluation of the history-replay loss at
several buffer lengths, for the vehicle-sized and UAV-sized generators.
Run after `python setup.py build_ext --inplace` (or an editable install):

    python benchmarks/bench_engines.py
"""

import os
import time

import numpy as np

from cpsvuln.attack import engine
from cpsvuln.attack.generators import DfnnGenerator, FnnGenerator, SensorSupport


class LinearObsModel:
    def __init__(self, n, p):
        H = np.zeros((p, n))
        H[:, :p] = np.eye(p)
        self.h_matrix = H
        self.n, self.p = n, p

    def h(self, x):
        return self.h_matrix @ x

    def dhdx(self, x):
        return self.h_matrix


def make_data(model, N, rng, input_dim=None, dfnn=False):
    n, p = model.n, model.p
    L = 0.3 * rng.normal(size=(N, n, p))
    A = 0.2 * rng.normal(size=(N, p, p))
    Sinv = np.einsum("nij,nkj->nik", A, A) + 0.8 * np.eye(p)[None]
    XP = rng.normal(size=(N, n))
    data = engine.ReplayData(
        Y=rng.normal(size=(N, p)),
        HXP=XP @ model.h_matrix.T,
        XP=XP,
        L=np.ascontiguousarray(L),
        Sinv=np.ascontiguousarray(Sinv),
        HL=np.ascontiguousarray(np.einsum("qk,nkp->nqp", model.h_matrix, L)),
        model=model,
    )
    if dfnn:
        data.Yn = np.ascontiguousarray(rng.normal(size=(N, p)))
    else:
        data.X = np.ascontiguousarray(rng.normal(size=(N, input_dim)))
    return data


def time_call(fn, min_repeat=3, budget=3.0):
    best = np.inf
    t_start = time.perf_counter()
    reps = 0
    while reps < min_repeat or time.perf_counter() - t_start < budget / 10:
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
        reps += 1
        if time.perf_counter() - t_start > budget:
            break
    return best


def bench(label, gen, data, weights, dfnn=False):
    call = (engine.dfnn_objective_and_grads if dfnn else engine.fnn_objective_and_grads)
    times = {}
    for backend in ("compiled", "python"):
        if backend == "compiled" and not engine.compiled_available():
            times[backend] = float("nan")
            continue
        os.environ["CPSVULN_PURE_PYTHON"] = "0" if backend == "compiled" else "1"
        times[backend] = time_call(lambda: call(gen, data, 0.2, 1e-12, weights))
    os.environ.pop("CPSVULN_PURE_PYTHON", None)
    speedup = times["python"] / times["compiled"] if times["compiled"] == times["compiled"] else float("nan")
    print(f"{label:<36} compiled {times['compiled']*1e3:9.2f} ms   python {times['python']*1e3:9.2f} ms   speedup {speedup:6.1f}x")


def main():
    print(f"compiled kernels available: {engine.compiled_available()}")
    rng = np.random.default_rng(0)

    vehicle = LinearObsModel(4, 2)
    uav = LinearObsModel(12, 9)

    for N in (250, 1000):
        w = np.full(N, 0.05)
        w[-1] = 1.0
        w /= w.sum()
        gen = FnnGenerator(2, (15, 15), est_features=(0, 1, 2), support=SensorSupport.full(2),
                           rng=np.random.default_rng(1))
        bench(f"vehicle fnn 5x15x15x2, buffer {N}", gen, make_data(vehicle, N, rng, gen.sizes[0]), w)
        gen = DfnnGenerator(2, (15, 15), latent_dim=3, support=SensorSupport.full(2),
                            rng=np.random.default_rng(2))
        bench(f"vehicle dfnn 5x15x15x3, buffer {N}", gen, make_data(vehicle, N, rng, dfnn=True), w, dfnn=True)

    for N in (250, 1000):
        w = np.full(N, 0.05)
        w[-1] = 1.0
        w /= w.sum()
        gen = FnnGenerator(9, (50, 100, 100, 100), est_features=tuple(range(12)),
                           support=SensorSupport.full(9), rng=np.random.default_rng(3))
        bench(f"uav fnn 21x50x100^3x9, buffer {N}", gen, make_data(uav, N, rng, gen.sizes[0]), w)
        gen = DfnnGenerator(9, (50, 100, 100, 100), latent_dim=20, support=SensorSupport.full(9),
                            rng=np.random.default_rng(4))
        bench(f"uav dfnn 29x50x100^3x20, buffer {N}", gen, make_data(uav, N, rng, dfnn=True), w, dfnn=True)


if __name__ == "__main__":
    main()
