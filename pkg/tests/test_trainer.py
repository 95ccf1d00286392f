"""Tests for the episode objective, its reverse pass, and the training loop."""

import numpy as np
import pytest

from protograph.data import Episode, generate_synthetic
from protograph.gradcheck import check_episode_objective, random_episode
from protograph.graph import build_knn_graph
from protograph.likelihood import EncoderParams
from protograph.numerics import RngStream
from protograph.prior import GnnParams
from protograph.sampler import SamplerConfig
from protograph.trainer import (
    ModelParams,
    TrainConfig,
    episode_loss,
    episode_objective_and_grads,
    init_params,
    param_arrays,
    params_to_vector,
    read_checkpoint,
    train,
    write_checkpoint,
    write_training_log,
)


def tiny_world(seed=0, d=3, n_rel=6):
    gen = RngStream(seed).generator()
    emb = gen.standard_normal((n_rel, d))
    graph = build_knn_graph(emb, 2)
    params = init_params(d, d, RngStream(seed + 1), encoder_mode="linear", encoder_input_dim=d)
    return gen, graph, params


class TestEpisodeObjective:
    def test_single_class_zero_loss_zero_grads(self):
        gen, graph, params = tiny_world()
        ep = Episode(
            targets=[2],
            support_x=gen.standard_normal((1, 3)),
            support_y=np.zeros(1, dtype=int),
            query_x=gen.standard_normal((3, 3)),
            query_y=np.zeros(3, dtype=int),
        )
        loss, grads = episode_objective_and_grads(
            ep, graph, params, SamplerConfig(chains=2, steps=2), RngStream(5)
        )
        assert loss == 0.0
        for g in grads.values():
            np.testing.assert_array_equal(g, np.zeros_like(g))

    @pytest.mark.parametrize("measure", ["dot", "euclidean"])
    def test_gradients_match_oracle(self, measure):
        err = check_episode_objective(
            seed=3, case=0, d=3, n_way=2, k_shot=1, q_per=2,
            chains=2, steps=2, measure=measure, tau=10.0,
        )
        assert err < 1e-4

    def test_gradients_match_oracle_tanh_two_hop_decayed(self):
        # the remaining gradient paths: tanh summary activation, two
        # propagation hops, and a decaying step-size schedule
        from protograph.numerics import finite_difference_gradient, max_relative_error
        from protograph.trainer import set_params_from_vector

        gen = RngStream(31).generator()
        d = 3
        emb = gen.standard_normal((6, d))
        graph = build_knn_graph(emb, 2)
        params = init_params(
            d, d, RngStream(32), encoder_mode="linear", encoder_input_dim=d,
            activation="tanh", hops=2,
        )
        ep = random_episode(gen, 2, 1, 2, d, 6)
        cfg = SamplerConfig(chains=2, steps=3, step_decay=0.7, measure="euclidean")
        rng = RngStream(33)

        _, grads = episode_objective_and_grads(ep, graph, params, cfg, rng)
        analytic = np.concatenate([grads[k].ravel() for k in param_arrays(params)])

        def loss_at(vec):
            set_params_from_vector(params, vec)
            return episode_loss(ep, graph, params, cfg, rng)

        base = params_to_vector(params)
        fd = finite_difference_gradient(loss_at, base)
        set_params_from_vector(params, base)
        assert max_relative_error(analytic, fd) < 1e-4

    def test_duplicated_queries_double_the_loss(self):
        gen, graph, params = tiny_world(seed=2)
        ep = random_episode(gen, 3, 1, 2, 3, 6)
        cfg = SamplerConfig(chains=2, steps=2)
        base = episode_loss(ep, graph, params, cfg, RngStream(9))
        dup = Episode(
            targets=ep.targets,
            support_x=ep.support_x,
            support_y=ep.support_y,
            query_x=np.vstack([ep.query_x, ep.query_x]),
            query_y=np.concatenate([ep.query_y, ep.query_y]),
        )
        doubled = episode_loss(dup, graph, params, cfg, RngStream(9))
        assert doubled == pytest.approx(2.0 * base, abs=1e-12)

    def test_target_permutation_invariance(self):
        gen, graph, params = tiny_world(seed=4)
        cfg = SamplerConfig(chains=3, steps=3, noise_enabled=True)
        for case in range(100):
            ep = random_episode(gen, 3, 2, 2, 3, 6)
            perm = gen.permutation(3)
            inv = np.argsort(perm)
            ep_p = Episode(
                targets=[ep.targets[p] for p in perm],
                support_x=ep.support_x,
                support_y=inv[ep.support_y],
                query_x=ep.query_x,
                query_y=inv[ep.query_y],
            )
            rng = RngStream(100 + case)
            a = episode_loss(ep, graph, params, cfg, rng)
            b = episode_loss(ep_p, graph, params, cfg, rng)
            assert abs(a - b) < 1e-10

    def test_target_outside_graph_raises(self):
        gen, graph, params = tiny_world()
        ep = random_episode(gen, 2, 1, 1, 3, 6)
        ep.targets[0] = 99
        with pytest.raises(ValueError, match="not in the graph"):
            episode_loss(ep, graph, params, SamplerConfig(), RngStream(0))

    def test_underflowing_query_probability_raises(self):
        gen, graph, params_unused = tiny_world()
        params = ModelParams(
            gnn=GnnParams(weight=np.zeros((3, 3)), bias=np.zeros(3)),
            encoder=EncoderParams(mode="identity"),
        )
        # query of class 0 sits 1e5 away from its prototype: averaged
        # probability underflows to exactly zero
        ep = Episode(
            targets=[0, 1],
            support_x=np.array([[1e5, 0.0, 0.0], [-1e5, 0.0, 0.0]]),
            support_y=np.array([0, 1]),
            query_x=np.array([[-1e5, 0.0, 0.0]]),
            query_y=np.array([0]),
        )
        cfg = SamplerConfig(chains=1, steps=0, tau=1.0)
        with pytest.raises(RuntimeError, match="replay"):
            episode_loss(ep, graph, params, cfg, RngStream(7))


class TestForwardConsistency:
    def test_training_forward_matches_inference_pipeline(self):
        # the recorded training forward and the plain sampler pipeline must
        # produce identical query probabilities, or train and eval drift apart
        from protograph.prior import summary_rows
        from protograph.sampler import posterior_predict
        from protograph.trainer import _episode_forward

        gen, graph, params = tiny_world(seed=6)
        cfg = SamplerConfig(chains=4, steps=3)
        for case in range(20):
            ep = random_episode(gen, 3, 2, 2, 3, 6)
            rng = RngStream(800).child(case)
            cache = _episode_forward(ep, graph, params, cfg, rng)
            probs, _ = posterior_predict(
                ep.support_x, ep.support_y, ep.targets, ep.query_x,
                summary_rows(graph, params.gnn, ep.targets),
                cfg, params.encoder, rng,
            )
            np.testing.assert_array_equal(cache.mean_probs, probs)


class TestTrain:
    def make_world(self, tmp_path=None, episodes=30, seed=201, **cfg_kw):
        ds, emb = generate_synthetic(
            12, 6, 4.0, 1.5, 10, RngStream(200), split_counts=(6, 3, 3)
        )
        graph = build_knn_graph(emb, 4)
        cfg = TrainConfig(
            episodes_total=episodes,
            n_way=3,
            q_per=3,
            seed=seed,
            eval_every=cfg_kw.pop("eval_every", 10),
            val_episodes=4,
            sampler=SamplerConfig(chains=3, steps=2),
            **cfg_kw,
        )
        return ds, graph, cfg

    def test_zero_episodes_returns_initial_params(self):
        ds, graph, cfg = self.make_world(episodes=0)
        params, rows = train(ds, graph, cfg)
        fresh = init_params(
            graph_dim=graph.feature_dim, output_dim=ds.d,
            rng=RngStream(cfg.seed).child(0), encoder_mode="identity",
        )
        np.testing.assert_array_equal(params.gnn.weight, fresh.gnn.weight)
        assert rows == []

    def test_loss_decreases_on_separable_data(self):
        # harder-than-trivial separable regime so the first episodes carry loss
        ds, emb = generate_synthetic(
            25, 8, 10.0, 1.0, 20, RngStream(100), split_counts=(10, 5, 10)
        )
        graph = build_knn_graph(emb, 10)
        cfg = TrainConfig(episodes_total=500, seed=101, eval_every=0)
        _, rows = train(ds, graph, cfg)
        first = float(np.mean([r.loss for r in rows[:50]]))
        last = float(np.mean([r.loss for r in rows[-50:]]))
        assert last < first

    def test_same_seed_identical_log(self):
        ds, graph, cfg = self.make_world()
        _, rows_a = train(ds, graph, cfg)
        _, rows_b = train(ds, graph, cfg)
        assert [r.as_csv() for r in rows_a] == [r.as_csv() for r in rows_b]

    def test_val_accuracy_recorded_at_interval(self):
        ds, graph, cfg = self.make_world(episodes=20, eval_every=10)
        _, rows = train(ds, graph, cfg)
        assert rows[9].val_accuracy is not None and rows[19].val_accuracy is not None
        assert all(r.val_accuracy is None for i, r in enumerate(rows) if i not in (9, 19))

    def test_wall_ms_blank_without_timing(self, tmp_path):
        ds, graph, cfg = self.make_world(episodes=3, eval_every=0)
        _, rows = train(ds, graph, cfg)
        write_training_log(rows, tmp_path / "log.csv")
        lines = (tmp_path / "log.csv").read_text().splitlines()
        assert lines[0] == "episode_index,loss,val_accuracy,wall_ms"
        assert all(line.endswith(",,") for line in lines[1:])

    def test_checkpoint_written(self, tmp_path):
        ds, graph, cfg = self.make_world(episodes=5, eval_every=0)
        cfg.checkpoint_path = tmp_path / "model.ckpt"
        params, _ = train(ds, graph, cfg)
        loaded, _ = read_checkpoint(cfg.checkpoint_path)
        np.testing.assert_array_equal(loaded.gnn.weight, params.gnn.weight)
        np.testing.assert_array_equal(loaded.gnn.bias, params.gnn.bias)


class TestCheckpoint:
    def test_round_trip_linear_encoder(self, tmp_path):
        params = init_params(4, 3, RngStream(9), encoder_mode="linear", encoder_input_dim=3)
        write_checkpoint(params, tmp_path / "m.ckpt", {"seed": "9", "tau": "10.0"})
        loaded, echo = read_checkpoint(tmp_path / "m.ckpt")
        assert echo == {"seed": "9", "tau": "10.0"}
        for name, arr in param_arrays(params).items():
            np.testing.assert_array_equal(param_arrays(loaded)[name], arr)

    def test_round_trip_is_exact_decimal(self, tmp_path):
        params = init_params(3, 3, RngStream(10))
        write_checkpoint(params, tmp_path / "m.ckpt")
        loaded, _ = read_checkpoint(tmp_path / "m.ckpt")
        assert np.array_equal(params_to_vector(loaded), params_to_vector(params))

    def test_rejects_other_files(self, tmp_path):
        (tmp_path / "bad.ckpt").write_text("something else\n")
        with pytest.raises(ValueError, match="checkpoint"):
            read_checkpoint(tmp_path / "bad.ckpt")
