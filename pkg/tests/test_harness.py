"""Synthetic data, the token-wise MLP and the training loop."""

import numpy as np
import pytest

from src.base_selection import lp_l1_select
from src.errors import ConfigError, DivergenceError, LbpError
from src.flops import flops_exact, flops_lora
from src.harness import (
    Dataset, Linear, MeanPool, build_model, evaluate, load_weights, make_synthetic_dataset,
    marginal_accuracy, run_experiment, run_sweep, save_weights, train,
)
from src.harness.network import Gelu, softmax_cross_entropy
from src.harness.trainer import _apply_updates
from src.harness.optim import AdamLite, Sgd, make_optimizer
from src.lbp import LbpWhtMode, LoraMode
from src.models import DatasetSpec, ModeSpec, SweepConfig, config_from_dict
from src.tensor_core import Rng
from src.wht import make_plan, spectrum

SMALL = {
    "epochs": 2,
    "batch_size": 32,
    "learning_rate": 1e-3,
    "model": {"hidden": [8], "activation": "gelu"},
    "dataset": {"n_samples": 160, "tokens": 49, "channels": 8, "classes": 4, "seed": 3},
}


def small_config(**overrides):
    data = dict(SMALL)
    data.update(overrides)
    return config_from_dict(data)


def _weights(model):
    return {layer.name: np.array(layer.state.w) for layer in model.linears}


class TestDataset:

    def test_deterministic(self):
        spec = DatasetSpec(n_samples=100, tokens=16, channels=4, classes=4, seed=9)
        (a, _), (b, _) = make_synthetic_dataset(spec), make_synthetic_dataset(spec)
        np.testing.assert_array_equal(a.samples, b.samples)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_split_and_balance(self):
        spec = DatasetSpec(n_samples=200, tokens=49, channels=4, classes=4)
        tr, ev = make_synthetic_dataset(spec)
        assert (len(tr), len(ev)) == (160, 40)
        assert tr.samples.shape == (160, 49, 4)
        labels = np.concatenate([tr.labels, ev.labels])
        assert np.bincount(labels).tolist() == [50, 50, 50, 50]

    def test_zero_difficulty_means_samples_equal_prototypes(self):
        spec = DatasetSpec(n_samples=40, tokens=16, channels=3, classes=2, difficulty=0.0)
        tr, _ = make_synthetic_dataset(spec)
        for label in range(2):
            group = tr.samples[tr.labels == label]
            np.testing.assert_allclose(group, np.broadcast_to(group[0], group.shape), atol=1e-12)

    def test_energy_concentrates_in_low_frequencies(self):
        spec = DatasetSpec(n_samples=50, tokens=64, channels=8, classes=4)
        tr, _ = make_synthetic_dataset(spec)
        plan = make_plan(64)
        energy = spectrum(tr.rows(np.arange(len(tr))), plan)
        low = sum(energy[i, j] for i, j in lp_l1_select(4, plan.n).indices)
        assert low / energy.sum() > 0.8

    def test_hidden_layer_gradients_concentrate_in_low_frequencies(self):
        cfg = config_from_dict({})
        tr, _ = make_synthetic_dataset(cfg.dataset)
        model = build_model(cfg, tr.channels, tr.tokens, tr.classes, Rng(cfg.seed).split(1))
        x, labels = next(tr.batches(64))
        _, _, g = softmax_cross_entropy(model.forward(x), labels)
        upstream = {}
        for layer in reversed(model.layers):
            if isinstance(layer, Linear):
                upstream[layer.name] = g
            g = layer.backward(g)

        plan = make_plan(tr.tokens)
        low = lp_l1_select(4, plan.n).indices

        def low_share(m):
            energy = spectrum(m, plan)
            return sum(energy[i, j] for i, j in low) / energy.sum()

        for name in ("linear0", "linear1"):
            assert low_share(upstream[name]) > 0.8, name
        noise = Rng(99).normal(upstream["linear0"].shape)
        assert low_share(noise) < 0.3

    def test_batches_cover_every_sample(self):
        tr, _ = make_synthetic_dataset(DatasetSpec(n_samples=50, tokens=4, channels=2))
        seen = [len(labels) for _, labels in tr.batches(16)]
        assert seen == [16, 16, 8]

    def test_invalid_spec(self):
        with pytest.raises(ConfigError):
            make_synthetic_dataset(DatasetSpec(classes=1))
        with pytest.raises(ConfigError):
            make_synthetic_dataset(DatasetSpec(difficulty=-1.0))


class TestLayers:

    def test_mean_pool_round_trip_shapes(self):
        pool = MeanPool(3)
        x = np.arange(12, dtype=float).reshape(6, 2)
        np.testing.assert_allclose(pool.forward(x), [[2.0, 3.0], [8.0, 9.0]])
        np.testing.assert_allclose(pool.backward(np.ones((2, 2))), np.full((6, 2), 1 / 3))

    def test_gelu_derivative(self):
        gelu = Gelu()
        x = np.linspace(-3, 3, 25).reshape(5, 5)
        gelu.forward(x)
        h = 1e-6
        numeric = (Gelu().forward(x + h) - Gelu().forward(x - h)) / (2 * h)
        np.testing.assert_allclose(gelu.backward(np.ones_like(x)), numeric, atol=1e-7)

    def test_softmax_cross_entropy_gradient_sums_to_zero(self):
        logits = Rng(0).normal((4, 3))
        loss, correct, grad = softmax_cross_entropy(logits, np.array([0, 1, 2, 0]))
        assert loss > 0 and 0 <= correct <= 4
        np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-12)


class TestOptimizers:

    def test_sgd_momentum(self):
        opt = Sgd(0.1, momentum=0.9)
        x = opt.update("p", np.array([3.0]), np.array([6.0]))
        np.testing.assert_allclose(x, [2.4])
        x = opt.update("p", x, np.array([4.8]))
        np.testing.assert_allclose(x, [1.38])

    def test_adam_first_step_moves_by_lr(self):
        opt = AdamLite(0.01)
        x = opt.update("p", np.array([1.0, -1.0]), np.array([0.5, -2.0]))
        np.testing.assert_allclose(x, [0.99, -0.99], atol=1e-7)

    def test_unknown_optimizer(self):
        class Spec:
            name = "rmsprop"

        with pytest.raises(ConfigError):
            make_optimizer(Spec(), 0.1)


class TestModel:

    def test_layout(self):
        model = build_model(small_config(), 8, 49, 4, Rng(0))
        assert [layer.kind for layer in model.layers] == [
            "linear", "gelu", "mean_pool", "linear",
        ]

    def test_frozen_prefix_must_leave_a_layer(self):
        with pytest.raises(ConfigError):
            build_model(small_config(frozen_prefix=4), 8, 49, 4, Rng(0))

    def test_lp_l1_4_halves_backward_cost(self):
        shape = {"model": {"hidden": [32, 32]}}
        exact = build_model(small_config(**shape), 32, 49, 4, Rng(0))
        lbp = build_model(
            small_config(default_mode={"mode": "lbp_wht", "strategy": "lp_l1", "param": 4}, **shape),
            32, 49, 4, Rng(0),
        )
        cost_exact = sum(layer.backward_flops(1) for layer in exact.linears)
        cost_lbp = sum(layer.backward_flops(1) for layer in lbp.linears)
        assert cost_lbp < 0.5 * cost_exact

    def test_weights_round_trip(self, tmp_path):
        model = build_model(small_config(), 8, 49, 4, Rng(0))
        save_weights(model, tmp_path)
        other = build_model(small_config(), 8, 49, 4, Rng(99))
        load_weights(other, tmp_path)
        for layer, loaded in zip(model.linears, other.linears):
            expected = layer.state.w.astype(np.float32).astype(np.float64)
            np.testing.assert_array_equal(loaded.state.w, expected)


class TestTraining:

    def test_same_seed_same_log(self):
        _, a = run_experiment(small_config())
        _, b = run_experiment(small_config())
        assert a.epochs == b.epochs
        assert a.cum_flops == b.cum_flops

    def test_zero_learning_rate_keeps_weights(self):
        cfg = small_config(learning_rate=0.0)
        data = make_synthetic_dataset(cfg.dataset)
        model = build_model(cfg, 8, 49, 4, Rng(cfg.seed).split(1))
        before = _weights(model)
        train(model, cfg, *data)
        for name, w in _weights(model).items():
            np.testing.assert_array_equal(w, before[name])

    def test_full_rank_matches_exact(self):
        data = make_synthetic_dataset(small_config().dataset)
        _, exact = run_experiment(small_config(), dataset=data)
        _, full = run_experiment(
            small_config(default_mode={"mode": "lbp_wht", "strategy": "full"}), dataset=data
        )
        np.testing.assert_allclose(full.losses, exact.losses, rtol=0, atol=1e-6)
        assert full.final_eval_acc == exact.final_eval_acc

    def test_frozen_layers_do_not_change(self):
        cfg = small_config(frozen_prefix=2)
        data = make_synthetic_dataset(cfg.dataset)
        model = build_model(cfg, 8, 49, 4, Rng(cfg.seed).split(1))
        before = _weights(model)
        train(model, cfg, *data)
        after = _weights(model)
        np.testing.assert_array_equal(after["linear0"], before["linear0"])
        assert not np.array_equal(after["head"], before["head"])

    def test_one_sgd_step_lowers_batch_loss(self):
        cfg = small_config(model={"hidden": []}, optimizer={"name": "sgd", "momentum": 0.0})
        tr, _ = make_synthetic_dataset(cfg.dataset)
        model = build_model(cfg, 8, 49, 4, Rng(0))
        x, labels = next(tr.batches(32))
        loss, _, g = softmax_cross_entropy(model.forward(x), labels)
        model.backward(g)
        _apply_updates(model, make_optimizer(cfg.optimizer, 1e-3))
        after, _, _ = softmax_cross_entropy(model.forward(x, cache=False), labels)
        assert after < loss

    def test_lhe_switches_to_low_rank_after_profiling(self):
        cfg = small_config(default_mode={
            "mode": "lbp_wht", "strategy": "lhe", "param": 6, "profile_steps": 2,
        })
        model, tlog = run_experiment(cfg)
        layer = model.linears[0]
        assert isinstance(layer.state.mode, LbpWhtMode)
        assert layer.state.mode.rank == 6
        assert "r=6" in tlog.layer_modes[0]

    def test_lora_keeps_base_weight_frozen(self):
        cfg = small_config(default_mode={"mode": "lora", "lora_rank": 2})
        data = make_synthetic_dataset(cfg.dataset)
        model = build_model(cfg, 8, 49, 4, Rng(cfg.seed).split(1))
        before = _weights(model)
        train(model, cfg, *data)
        layer = model.linears[0]
        assert isinstance(layer.state.mode, LoraMode)
        np.testing.assert_array_equal(layer.state.w, before["linear0"])
        assert np.linalg.norm(layer.state.mode.w_b) > 0

    def test_difficulty_zero_linear_probe(self):
        cfg = small_config(
            epochs=60,
            learning_rate=0.05,
            model={"hidden": []},
            dataset={"n_samples": 400, "tokens": 49, "channels": 32, "classes": 4,
                     "difficulty": 0.0},
        )
        _, tlog = run_experiment(cfg)
        assert tlog.final_eval_acc >= 0.99

    def test_divergence_is_reported(self):
        samples = np.full((8, 4, 2), np.nan)
        data = Dataset(samples, np.zeros(8, dtype=int), 2)
        cfg = small_config(model={"hidden": [2]})
        model = build_model(cfg, 2, 4, 2, Rng(0))
        with pytest.raises(DivergenceError) as info:
            train(model, cfg, data, data)
        assert (info.value.epoch, info.value.step) == (1, 1)

    def test_evaluate_rejects_empty_dataset(self):
        model = build_model(small_config(), 8, 49, 4, Rng(0))
        empty = Dataset(np.zeros((0, 49, 8)), np.zeros(0, dtype=int), 4)
        with pytest.raises(LbpError):
            evaluate(model, empty)

    def test_untrained_two_class_model_is_at_chance(self):
        accs = []
        for seed in range(10):
            cfg = small_config(seed=seed, dataset={
                "n_samples": 400, "tokens": 49, "channels": 8, "classes": 2, "seed": seed,
            })
            _, ev = make_synthetic_dataset(cfg.dataset)
            model = build_model(cfg, 8, 49, 2, Rng(seed).split(1))
            accs.append(evaluate(model, ev))
        assert all(0.0 <= a <= 1.0 for a in accs)
        assert abs(np.mean(accs) - 0.5) <= 0.1

    def test_memorization_set_matches_train_accuracy(self):
        cfg = small_config(
            epochs=60,
            learning_rate=0.05,
            model={"hidden": []},
            dataset={"n_samples": 400, "tokens": 49, "channels": 32, "classes": 4,
                     "difficulty": 0.0},
        )
        tr, _ = make_synthetic_dataset(cfg.dataset)
        model, tlog = run_experiment(cfg, dataset=(tr, tr))
        before = _weights(model)
        acc = evaluate(model, tr)
        assert acc == tlog.final_eval_acc == tlog.epochs[-1].train_acc == 1.0
        for name, w in _weights(model).items():
            np.testing.assert_array_equal(w, before[name])

    def test_sweep_adds_lora_rows_costed_by_lora_flops(self):
        cfg = small_config(epochs=1)
        result = run_sweep(SweepConfig(base=cfg, params=(2, 4), lora_ranks=(1, 4)))
        assert [r.label for r in result.rows] == ["exact", "lp_l1-2", "lp_l1-4", "lora-1", "lora-4"]
        assert [r.kind for r in result.rows] == ["exact", "lbp_wht", "lbp_wht", "lora", "lora"]
        lora = result.lora_rows()
        assert [r.rank for r in lora] == [1, 4]
        n_train = len(make_synthetic_dataset(cfg.dataset)[0])
        for row in lora:
            per_sample = flops_lora(8, 8, 49, row.rank) + flops_exact(8, 4, 1)
            assert row.cum_mflops == pytest.approx(per_sample * n_train / 1e6)
        assert len(result.slopes) == 1 and len(result.lora_slopes) == 1
        assert [r.label for r in result.lbp_rows()] == ["lp_l1-2", "lp_l1-4"]


class TestMarginalAccuracy:

    def test_slopes_sorted_by_compute(self):
        slopes = marginal_accuracy([(1.0, 0.5), (3.0, 0.7), (2.0, 0.6)])
        np.testing.assert_allclose(slopes, [0.1, 0.1])

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            marginal_accuracy([(1.0, 0.5)])

    def test_duplicate_compute(self):
        with pytest.raises(ValueError):
            marginal_accuracy([(1.0, 0.5), (1.0, 0.6)])


@pytest.mark.slow
class TestDeskScale:
    """Default synthetic task: 2,000 samples, L=49, C=32, k=4."""

    def test_full_rank_parity(self):
        base = config_from_dict({})
        data = make_synthetic_dataset(base.dataset)
        _, exact = run_experiment(base, dataset=data)
        _, full = run_experiment(
            base.with_mode(ModeSpec(mode="lbp_wht", strategy="full")), dataset=data
        )
        np.testing.assert_allclose(full.losses, exact.losses, rtol=0, atol=1e-6)
        assert abs(full.final_eval_acc - exact.final_eval_acc) <= 0.005

    def test_lp_l1_sweep(self):
        result = run_sweep(SweepConfig(base=config_from_dict({}), params=(1, 2, 4, 8)))
        exact = result.rows[0]
        lbp = result.lbp_rows()
        assert [r.rank for r in lbp] == [1, 3, 10, 36]
        accs = [r.final_eval_acc for r in lbp]
        flops = [r.cum_mflops for r in lbp]
        assert all(b >= a - 0.01 for a, b in zip(accs, accs[1:]))
        assert all(b > a for a, b in zip(flops, flops[1:]))
        assert lbp[2].cum_mflops < 0.5 * exact.cum_mflops
        assert len(result.slopes) == 3
