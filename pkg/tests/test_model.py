import numpy as np
import pytest

from ynet.autodiff import zero_grad
from ynet.autodiff.gradcheck import numerical_grad, relative_error
from ynet.errors import ConfigError, ShapeError
from ynet.heatmaps import encode_conditioning
from ynet.model import ModelConfig, YNet


def tiny(**kw):
    base = dict(n_p=3, n_f=4, n_classes=2, waypoint_frames=(5,), encoder_channels=(4, 4), center_channels=4)
    base.update(kw)
    return ModelConfig(**base)


def conditioning(cfg, shape, batch=1, goal=(5, 5), wps=((3, 3),)):
    c = encode_conditioning(goal, list(wps)[: cfg.n_waypoints], shape, cfg.n_blocks, 2.0)
    return [np.repeat(x[None], batch, axis=0) for x in c]


class TestConfig:
    def test_decoder_mirrors_encoder(self):
        assert ModelConfig().decoder_channels == (64, 64, 64, 32, 32)

    def test_waypoints_strictly_increasing(self):
        with pytest.raises(ConfigError):
            ModelConfig(n_p=8, n_f=12, waypoint_frames=(12, 10))

    def test_waypoints_inside_future(self):
        with pytest.raises(ConfigError):
            ModelConfig(n_p=8, n_f=12, waypoint_frames=(20,))
        with pytest.raises(ConfigError):
            ModelConfig(n_p=8, n_f=12, waypoint_frames=(8,))

    def test_json_round_trip(self, tmp_path):
        cfg = tiny(temperature=1.8)
        cfg.save(tmp_path / "c.json")
        assert ModelConfig.load(tmp_path / "c.json") == cfg

    def test_future_index(self):
        assert ModelConfig(n_p=5, n_f=30, waypoint_frames=(20,)).future_index(20) == 14


class TestEncoder:
    def test_shape_trace_default_channels(self):
        model = YNet(ModelConfig(n_p=5, n_f=2))
        pyr = model.encode(np.zeros((10, 64, 64), np.float32))
        assert [s.shape[-2:] for s in pyr.skips] == [(64, 64), (32, 32), (16, 16), (8, 8), (4, 4)]
        assert [s.shape[1] for s in pyr.skips] == [32, 32, 64, 64, 64]
        # every block ends in a pool, so the deepest map is H / 2**5
        assert pyr.deepest.shape == (1, 64, 2, 2)
        assert pyr.scales == [1, 2, 4, 8, 16, 32]

    def test_levels_halve(self):
        model = YNet(tiny(encoder_channels=(4, 4, 4)))
        pyr = model.encode(np.ones((5, 32, 32)))
        sizes = [t.shape[-1] for t in pyr.levels]
        assert all(a == 2 * b for a, b in zip(sizes, sizes[1:]))

    def test_pure(self):
        model = YNet(tiny())
        x = np.random.default_rng(0).random((5, 16, 16))
        a = model.encode(x).deepest.data
        assert np.array_equal(a, model.encode(x).deepest.data)

    def test_zero_input_zero_activations(self):
        model = YNet(tiny())
        pyr = model.encode(np.zeros((5, 16, 16)))
        assert all(not t.data.any() for t in pyr.levels)

    def test_indivisible_rejected(self):
        with pytest.raises(ShapeError, match="divisible"):
            YNet(tiny()).encode(np.zeros((5, 18, 16)))

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            YNet(tiny()).encode(np.zeros((4, 16, 16)))


class TestDecoders:
    def test_goal_map_counts(self):
        cfg = tiny()
        model = YNet(cfg)
        pyr = model.encode(np.random.default_rng(0).random((5, 16, 16)))
        infer = model.decode_goal(pyr, "infer")
        train = model.decode_goal(pyr, "train")
        assert infer.shape == (1, 2, 16, 16)
        assert train.shape == (1, 2 + cfg.n_f, 16, 16)
        assert np.all((infer.data > 0) & (infer.data < 1))

    def test_temperature_only_in_infer_and_only_goal_maps(self):
        x = np.random.default_rng(1).random((5, 16, 16))
        cold, hot = YNet(tiny()), YNet(tiny(temperature=3.0))
        pc, ph = cold.encode(x), hot.encode(x)
        assert np.array_equal(cold.decode_goal(pc, "train").data, hot.decode_goal(ph, "train").data)
        lc = cold.goal_logits(pc).data[:, :2]
        assert np.allclose(hot.decode_goal(ph, "infer").data, 1 / (1 + np.exp(-lc / 3.0)), atol=1e-6)
        c = conditioning(cold.config, (16, 16))
        assert np.array_equal(cold.decode_trajectory(pc, c).data, hot.decode_trajectory(ph, c).data)

    @pytest.mark.parametrize("n_f", [12, 30])
    def test_trajectory_map_count(self, n_f):
        cfg = tiny(n_f=n_f, waypoint_frames=())
        model = YNet(cfg)
        pyr = model.encode(np.zeros((5, 16, 16)))
        out = model.decode_trajectory(pyr, conditioning(cfg, (16, 16)))
        assert out.shape == (1, n_f, 16, 16)

    def test_missing_conditioning_level_rejected(self):
        cfg = tiny()
        model = YNet(cfg)
        pyr = model.encode(np.zeros((5, 16, 16)))
        with pytest.raises(ShapeError, match="resolutions"):
            model.decode_trajectory(pyr, conditioning(cfg, (16, 16))[:-1])

    def test_conditioning_reaches_output(self):
        cfg = tiny()
        model = YNet(cfg)
        pyr = model.encode(np.random.default_rng(2).random((5, 16, 16)))
        a = model.decode_trajectory(pyr, conditioning(cfg, (16, 16), goal=(12, 12))).data
        b = model.decode_trajectory(pyr, conditioning(cfg, (16, 16), goal=(2, 12))).data
        assert np.abs(a - b).max() > 0


class TestFullyConvolutional:
    def test_any_divisible_size(self):
        cfg = tiny()
        model = YNet(cfg)
        n = model.parameter_count()
        for shape in [(16, 16), (32, 48), (64, 16)]:
            g, t = model.forward(np.zeros((1, 5) + shape), conditioning(cfg, shape), "train")
            assert g.shape[-2:] == shape and t.shape[-2:] == shape
        assert model.parameter_count() == n


class TestGradients:
    def test_every_parameter_receives_gradient(self):
        cfg = tiny()
        model = YNet(cfg)
        x = np.random.default_rng(0).random((2, 5, 16, 16))
        g, t = model.forward(x, conditioning(cfg, (16, 16), batch=2), "train")
        g.backward(np.ones_like(g.data))
        t.backward(np.ones_like(t.data))
        for name, p in model.params.items():
            assert p.grad is not None, name
        assert np.linalg.norm(model.params["enc0.conv0.weight"].grad) > 0

    def test_full_model_finite_differences(self):
        cfg = tiny(n_p=2, n_f=3, waypoint_frames=(3,), encoder_channels=(4, 4), center_channels=4)
        model = YNet(cfg, dtype=np.float64)
        rng = np.random.default_rng(0)
        x = rng.random((1, 4, 16, 16))
        cond = conditioning(cfg, (16, 16), goal=(10, 4), wps=((6, 8),))
        pg = rng.standard_normal((1, 2 + 3, 16, 16))
        pt = rng.standard_normal((1, 3, 16, 16))

        def value():
            g, t = model.forward(x, cond, "train")
            return float((g.data * pg).sum() + (t.data * pt).sum())

        zero_grad(model.parameters())
        g, t = model.forward(x, cond, "train")
        g.backward(pg)
        t.backward(pt)
        names = sorted(model.params)
        picks = [(names[i], int(rng.integers(model.params[names[i]].data.size)))
                 for i in rng.choice(len(names), 20, replace=True)]
        analytic, numeric = [], []
        for name, k in picks:
            p = model.params[name]
            analytic.append(p.grad.reshape(-1)[k])
            numeric.append(numerical_grad(value, p.data, 1e-6, [k]).reshape(-1)[k])
        assert relative_error(np.array(analytic), np.array(numeric)) < 1e-3


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path):
        model = YNet(tiny(seed=3))
        model.save(tmp_path / "m.ckpt")
        back = YNet.load(tmp_path / "m.ckpt")
        assert back.config == model.config
        for k, p in model.params.items():
            assert np.array_equal(p.data, back.params[k].data)

    def test_missing_config_rejected(self, tmp_path):
        model = YNet(tiny())
        model.save(tmp_path / "m.ckpt")
        (tmp_path / "m.json").unlink()
        with pytest.raises(ConfigError):
            YNet.load(tmp_path / "m.ckpt")

    def test_seeded_init(self):
        a, b = YNet(tiny(seed=1)), YNet(tiny(seed=1))
        assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)
