"""Attack generators: masking, forward passes, serialization round-trip."""

import numpy as np
import pytest

from cpsvuln.attack.generators import (
    DfnnGenerator,
    FnnGenerator,
    SensorSupport,
    dfnn_generate,
    fnn_generate,
    load_generator,
    save_generator,
)


class TestSensorSupport:
    def test_full(self):
        s = SensorSupport.full(3)
        assert s.indices == (0, 1, 2)
        assert np.array_equal(s.mask(), [1.0, 1.0, 1.0])

    def test_one_based_conversion(self):
        s = SensorSupport.from_one_based((2,), 2)
        assert s.indices == (1,)
        assert np.array_equal(s.mask(), [0.0, 1.0])

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            SensorSupport(indices=(3,), p=2)


class TestFnnGenerator:
    def make(self, support=None, rng_seed=0):
        sup = support or SensorSupport.full(2)
        return FnnGenerator(2, (15, 15), est_features=(0, 1, 2), support=sup,
                            rng=np.random.default_rng(rng_seed))

    def test_architecture_sizes(self):
        gen = self.make()
        assert gen.sizes == (5, 15, 15, 2)
        shapes = [W.data.shape for W, _ in gen.layers]
        assert shapes == [(5, 15), (15, 15), (15, 2)]

    def test_zero_weights_give_zero_attack(self):
        gen = self.make()
        for W, b in gen.layers:
            W.data[:] = 0.0
            b.data[:] = 0.0
        a = fnn_generate(gen, np.array([1.0, 2.0]), np.arange(4.0))
        assert np.array_equal(a, [0.0, 0.0])

    def test_empty_support_masks_everything(self):
        gen = self.make(support=SensorSupport(indices=(), p=2))
        a = fnn_generate(gen, np.array([1.0, 2.0]), np.arange(4.0))
        assert np.array_equal(a, [0.0, 0.0])

    def test_half_support_masks_exactly(self):
        gen = self.make(support=SensorSupport(indices=(0,), p=2))
        rng = np.random.default_rng(5)
        for _ in range(20):
            a = fnn_generate(gen, rng.normal(size=2), rng.normal(size=4))
            assert a[1] == 0.0

    def test_untrained_attack_differs_from_zero(self):
        gen = self.make()
        a = fnn_generate(gen, np.array([0.5, -0.5]), np.array([1.0, 2.0, 0.1, 10.0]))
        assert np.any(a != 0.0)

    def test_normalizer_applied(self):
        gen = FnnGenerator(2, (4,), est_features=(0,), support=SensorSupport.full(2),
                           input_center=np.array([100.0, 0.0, 0.0]),
                           input_scale=np.array([0.01, 1.0, 1.0]),
                           rng=np.random.default_rng(1))
        v = gen.input_vector(np.array([300.0, 1.0]), np.array([2.0, 9.9]))
        assert np.allclose(v, [2.0, 1.0, 2.0])


class TestDfnnGenerator:
    def make(self, rng_seed=0):
        return DfnnGenerator(2, (15, 15), latent_dim=3, support=SensorSupport.full(2),
                             rng=np.random.default_rng(rng_seed))

    def test_architecture_sizes(self):
        gen = self.make()
        assert gen.sizes == (5, 15, 15, 3)
        assert gen.W_out.data.shape == (3, 2)

    def test_zero_readout_gives_zero_attack(self):
        gen = self.make()
        gen.W_out.data[:] = 0.0
        a, r = dfnn_generate(gen, np.array([0.3, -0.1]))
        assert np.array_equal(a, [0.0, 0.0])
        assert r.shape == (3,)

    def test_zero_network_weights_give_zero_latent(self):
        gen = self.make()
        for W, b in gen.layers:
            W.data[:] = 0.0
            b.data[:] = 0.0
        a, r = dfnn_generate(gen, np.array([0.3, -0.1]))
        assert np.array_equal(r, np.zeros(3))
        assert np.array_equal(a, np.zeros(2))

    def test_latent_carried_and_reset(self):
        gen = self.make()
        _, r1 = dfnn_generate(gen, np.array([0.3, -0.1]))
        assert np.array_equal(gen.r, r1)
        _, r2 = dfnn_generate(gen, np.array([0.3, -0.1]))
        assert not np.array_equal(r1, r2)  # latent evolved
        gen.reset_latent()
        assert np.array_equal(gen.r, np.zeros(3))

    def test_latent_replay_deterministic(self):
        gen = self.make()
        ys = np.random.default_rng(3).normal(size=(10, 2))

        def rollout():
            gen.reset_latent()
            return [dfnn_generate(gen, y)[0] for y in ys]

        a1, a2 = rollout(), rollout()
        assert all(np.array_equal(x, y) for x, y in zip(a1, a2))


class TestSerialization:
    def test_fnn_round_trip_bitwise(self, tmp_path):
        gen = FnnGenerator(2, (15, 15), est_features=(0, 1, 2),
                           support=SensorSupport(indices=(0,), p=2),
                           input_center=np.array([1.0, 0.0, 0.0, 0.0, 0.5]),
                           input_scale=np.array([1e-3, 1.0, 1.0, 1.0, 2.0]),
                           rng=np.random.default_rng(7))
        path = tmp_path / "gen.json"
        save_generator(gen, path, model_id="vehicle", training_config={"delta": 0.2})
        loaded, model_id, cfg = load_generator(path)
        assert model_id == "vehicle"
        assert cfg == {"delta": 0.2}
        assert loaded.sizes == gen.sizes
        assert loaded.support.indices == gen.support.indices
        assert loaded.est_features == gen.est_features
        assert np.array_equal(loaded.input_center, gen.input_center)
        assert np.array_equal(loaded.input_scale, gen.input_scale)
        for (W1, b1), (W2, b2) in zip(gen.layers, loaded.layers):
            assert np.array_equal(W1.data, W2.data)
            assert np.array_equal(b1.data, b2.data)
        # identical outputs bit for bit
        y, xh = np.array([0.123, -4.5]), np.array([1.0, 2.0, 3.0, 4.0])
        assert np.array_equal(fnn_generate(gen, y, xh), fnn_generate(loaded, y, xh))

    def test_dfnn_round_trip_bitwise(self, tmp_path):
        gen = DfnnGenerator(2, (15, 15), latent_dim=3, support=SensorSupport.full(2),
                            rng=np.random.default_rng(11))
        path = tmp_path / "gen.json"
        save_generator(gen, path, model_id="vehicle")
        loaded, _, _ = load_generator(path)
        assert np.array_equal(loaded.W_out.data, gen.W_out.data)
        y = np.array([0.25, -0.75])
        a1, _ = dfnn_generate(gen, y)
        a2, _ = dfnn_generate(loaded, y)
        assert np.array_equal(a1, a2)

    def test_rejects_foreign_files(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text('{"format": "something-else"}')
        with pytest.raises(ValueError):
            load_generator(path)
