import numpy as np
import pytest

from tspn import autograd as ag
from tspn import model
from tspn.autograd import ParamSet, Tensor
from tspn.data import RelationInstance
from tspn.features import FeatureBundle, SyntheticDescriptor
from tspn.model import Batch, PairCandidate, TSPNConfig

from conftest import make_video, static_traj


def const_params(**values):
    return ParamSet({k: Tensor(v, requires_grad=True, name=k) for k, v in values.items()})


def zero_params(cfg):
    return ParamSet({k: Tensor(np.zeros(s), requires_grad=True, name=k)
                     for k, s in model.param_shapes(cfg).items()})


def random_batch(cfg, n=8, seed=0):
    rng = np.random.default_rng(seed)
    r = (np.arange(n) % 2).astype(float)
    t = (rng.random((n, cfg.m * cfg.k)) < 0.3).astype(float)
    return Batch(*(rng.normal(size=(n, cfg.d_j)) for _ in range(3)), r, t)


class TestJointFeatures:
    def test_concatenation(self):
        a, b, c = np.array([1.0, 2]), np.array([0.0, 0, 1, 1]), np.array([1.0, 0])
        fb = FeatureBundle(a, a, a, b, b, b, c, c)
        js, jo, ju = model.build_joint_features(fb, 2, 2)
        assert js.tolist() == [1, 2, 0, 0, 1, 1, 1, 0]
        assert ju.tolist() == [1, 2, 0, 0, 1, 1, 2, 0]

    def test_zero(self):
        z = np.zeros
        js, _, _ = model.build_joint_features(FeatureBundle(z(3), z(3), z(3), z(4), z(4), z(4),
                                                            z(2), z(2)))
        assert js.tolist() == [0.0] * 9

    def test_order_sensitive(self):
        a, b, c = np.array([1.0, 2]), np.array([0.0, 0, 1, 1]), np.array([1.0, 0])
        s, _, _ = model.build_joint_features(FeatureBundle(a, a, a, b, b, b, c, c))
        p, _, _ = model.build_joint_features(FeatureBundle(a[::-1], a, a, b, b, b, c, c))
        assert s.tolist() != p.tolist()

    def test_dimension_check(self):
        a, b, c = np.ones(3), np.ones(4), np.ones(2)
        with pytest.raises(ValueError):
            model.build_joint_features(FeatureBundle(a, a, a, b, b, b, c, c), d_a=2)


class TestRelationness:
    def test_zero_network(self):
        cfg = TSPNConfig(n_cls=2, m=2)
        j = np.ones(cfg.d_j)
        assert model.relationness_forward(zero_params(cfg), j, j, j).item() == 0.5

    def test_closed_form(self):
        p = const_params(W_s=[[1.0]], W_o=[[1.0]], W_u=[[1.0]], B_h=[0.0], W_r=[[1.0]],
                         B_r=[0.0])
        s = model.relationness_forward(p, [1.0], [1.0], [1.0]).item()
        assert s == pytest.approx(1 / (1 + np.exp(-1)))
        assert round(s, 4) == 0.7311

    def test_range(self):
        cfg = TSPNConfig(n_cls=2, m=2)
        p = model.init_params(cfg, seed=4)
        x = np.random.default_rng(0).normal(size=(20, cfg.d_j))
        s = model.relationness_forward(p, x, x, x).values
        assert s.shape == (20,) and np.all((s > 0) & (s < 1))
        # the cubic head saturates to exactly 0 or 1 in float64 on huge inputs
        s = model.relationness_forward(p, 100 * x, 100 * x, 100 * x).values
        assert np.all((s >= 0) & (s <= 1))


class TestSpanHead:
    def test_zero_network(self):
        cfg = TSPNConfig(n_cls=2, m=3, k=4)
        j = np.ones(cfg.d_j)
        z = model.span_relation_forward(zero_params(cfg), j, j, j, cfg)
        assert z.shape == (12,) and np.all(z.values == 0.5)

    def test_closed_form(self):
        cfg = TSPNConfig(n_cls=1, m=1, k=1, d_a=0)
        dj = cfg.d_j
        w = np.zeros((3 * dj, 1))
        w[0, 0] = w[dj, 0] = 1.0
        p = const_params(W_z=w, B_z=[0.0])
        z = model.span_relation_forward(p, np.ones(dj), np.ones(dj), np.ones(dj), cfg)
        assert round(z.values[0], 4) == 0.8808

    @pytest.mark.parametrize("mode", ["direct", "rank1"])
    def test_shape(self, mode):
        cfg = TSPNConfig(n_cls=2, m=3, k=5, z_mode=mode)
        x = np.zeros((7, cfg.d_j))
        z = model.span_relation_forward(model.init_params(cfg), x, x, x, cfg)
        assert model.prediction_matrices(z, cfg).shape == (7, 3, 5)


class TestPairsOfInterest:
    def cands(self, scores):
        return [PairCandidate(i, i + 1, s, (0, 10)) for i, s in enumerate(scores)]

    def test_fewer_than_p(self):
        out = model.select_pairs_of_interest(self.cands([0.1, 0.9, 0.5]), 64)
        assert [c.score for c in out] == [0.9, 0.5, 0.1]

    def test_order_statistic(self):
        scores = np.random.default_rng(0).random(100)
        out = model.select_pairs_of_interest(self.cands(scores), 64)
        kept = {c.subject_id for c in out}
        dropped = [s for i, s in enumerate(scores) if i not in kept]
        assert len(out) == 64 and min(c.score for c in out) >= max(dropped)

    def test_ties_by_id(self):
        out = model.select_pairs_of_interest(self.cands([0.5] * 5)[::-1], 3)
        assert [c.subject_id for c in out] == [0, 1, 2]


class TestLoss:
    def test_chance_level(self):
        cfg = TSPNConfig(n_cls=2, m=2, k=2)
        batch = random_batch(cfg)
        total, l_r, l_t = model.loss_terms(zero_params(cfg), batch, cfg)
        assert l_r.item() == pytest.approx(np.log(2))
        assert l_t.item() == pytest.approx(np.log(2))
        assert round(total.item(), 4) == 1.3863

    def test_perfect(self):
        cfg = TSPNConfig(n_cls=2, m=2, k=2)
        batch = random_batch(cfg)
        batch.r[:] = 1.0
        batch.t[:] = 1.0
        p = zero_params(cfg)
        p["B_r"].values[:] = 50.0
        p["B_z"].values[:] = 50.0
        assert model.total_loss(p, batch, cfg).item() < 1e-6

    def test_no_relationness_covers_all_rows(self):
        cfg = TSPNConfig(n_cls=2, m=2, k=2, use_relationness=False)
        batch = random_batch(cfg)
        _, l_r, l_t = model.loss_terms(model.init_params(cfg), batch, cfg)
        assert l_r.item() == 0.0 and l_t.item() > 0

    @pytest.mark.parametrize("mode", ["direct", "rank1"])
    def test_grad_check(self, mode):
        cfg = TSPNConfig(n_cls=3, m=2, k=3, d_a=4, d_h=5, z_mode=mode)
        batch = random_batch(cfg, seed=2)
        rep = ag.grad_check(lambda p: model.total_loss(p, batch, cfg), model.init_params(cfg))
        assert rep.passed, rep.max_rel_error


class TestTraining:
    def test_zero_epochs(self, small_benchmark):
        train, _ = small_benchmark
        cfg = TSPNConfig(n_cls=5, m=4, epochs=0)
        params, log = model.train(train[:3], cfg)
        assert params.equal(model.init_params(cfg)) and len(log.epochs) == 1

    def test_deterministic(self, small_benchmark, tmp_path):
        train, _ = small_benchmark
        cfg = TSPNConfig(n_cls=5, m=4, epochs=2)
        for name in ("a", "b"):
            p, _ = model.train(train[:4], cfg)
            ag.save_checkpoint(p, tmp_path / f"{name}.json", {"config": cfg.to_dict()})
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_loss_decreases(self, small_benchmark):
        train, _ = small_benchmark
        _, log = model.train(train, TSPNConfig(n_cls=5, m=4, epochs=5))
        assert log.epochs[5]["loss"] < log.epochs[0]["loss"]

    def test_balance_caps_negatives(self, small_benchmark):
        train, _ = small_benchmark
        cfg = TSPNConfig(n_cls=5, m=4)
        samples, _ = model.pair_samples(train[:5], cfg, SyntheticDescriptor(cfg.d_a))
        kept = model.balance(samples, 1.0, np.random.default_rng(0))
        for vid in {s.video_id for s in samples}:
            pos = sum(s.relationness > 0.5 for s in kept if s.video_id == vid)
            neg = sum(s.relationness <= 0.5 for s in kept if s.video_id == vid)
            assert neg <= max(pos, 1)
            assert pos == sum(s.relationness > 0.5 for s in samples if s.video_id == vid)


class TestPredict:
    cfg = TSPNConfig(n_cls=3, m=2, k=4, top_n=5)

    def video(self, n):
        trajs = [static_traj(i, i % 3, 0, 40, (10 + 40 * i, 10, 30 + 40 * i, 30))
                 for i in range(n)]
        return make_video(trajs, frames=40)

    def test_single_trajectory(self):
        assert model.predict(self.video(1), model.init_params(self.cfg), self.cfg) == []

    def test_top_n_and_order(self):
        p = zero_params(self.cfg)
        p["B_z"].values[:] = 2.0
        out = model.predict(self.video(4), p, self.cfg)
        assert len(out) == 5
        assert [r.score for r in out] == sorted((r.score for r in out), reverse=True)

    def test_single_pair_of_interest(self):
        cfg = TSPNConfig(n_cls=3, m=2, k=4, p=1)
        p = zero_params(cfg)
        p["B_z"].values[:] = 2.0
        out = model.predict(self.video(3), p, cfg)
        assert {(r.subject_id, r.object_id) for r in out} == {(0, 1)}

    def test_short_pair_falls_back_to_one_sector(self):
        a = static_traj(0, 0, 0, 3, (0, 0, 10, 10))
        b = static_traj(1, 1, 0, 3, (20, 0, 30, 10))
        p = zero_params(self.cfg)
        p["B_z"].values[:] = 2.0
        out = model.predict(make_video([a, b], frames=3), p, self.cfg)
        assert {(r.begin, r.end) for r in out} == {(0, 3)}

    def test_config_round_trip(self):
        cfg = TSPNConfig(n_cls=3, m=2, k=8, z_mode="rank1")
        assert TSPNConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("bad", [dict(p=0), dict(k=0), dict(threshold=1.0),
                                     dict(z_mode="x")])
    def test_invalid_config(self, bad):
        with pytest.raises(ValueError):
            TSPNConfig(n_cls=2, m=2, **bad)
