"""Architecture shapes, attention semantics, loss composition, and short training runs."""

import numpy as np
import pytest

from scannability import tensor as T
from scannability.dataset import SynthConfig, split_by_user, synth_generate
from scannability.features import fit_norm
from scannability.model import (
    ModelConfig,
    ScannabilityNet,
    attention,
    attention_mask_correlation,
    model_loss,
    prepare_examples,
    train,
)
from scannability.tensor import AdamState, Tensor, adam_step

TOY = dict(page_size=64, target_size=16, page_blocks=3, target_blocks=4)


def toy_config(**kw):
    base = dict(TOY)
    base.update(kw)
    return ModelConfig(**base)


def attention_oracle(I, Tvec):
    g = I.shape[0]
    A = np.zeros((g, g))
    for i in range(g):
        for j in range(g):
            for k in range(I.shape[2]):
                A[i, j] += I[i, j, k] * Tvec[k]
    return A


class TestShapes:
    def test_default_shape_chain(self):
        cfg = ModelConfig()
        net = ScannabilityNet(cfg, seed=0)
        rng = np.random.default_rng(0)
        I = net.encode_page(rng.random((512, 512, 3), dtype=np.float32))
        assert I.shape == (64, 64, 4)
        tv = net.encode_target(rng.random((64, 64, 3), dtype=np.float32))
        assert tv.shape == (1, 1, 4)
        assert cfg.fused_width == 4096 + 50 == 4146

    def test_zero_page_zero_embedding(self):
        net = ScannabilityNet(toy_config(), seed=1)
        I = net.encode_page(np.zeros((64, 64, 3), dtype=np.float32), mode="eval")
        np.testing.assert_allclose(I.data, 0.0, atol=1e-7)

    def test_wrong_input_shape(self):
        net = ScannabilityNet(toy_config(), seed=2)
        with pytest.raises(T.ShapeError):
            net.encode_page(np.zeros((32, 32, 3)))

    def test_identical_targets_identical_embeddings(self):
        net = ScannabilityNet(toy_config(), seed=3)
        x = np.random.default_rng(4).random((16, 16, 3), dtype=np.float32)
        a = net.encode_target(x.copy()).data
        b = net.encode_target(x.copy()).data
        np.testing.assert_array_equal(a, b)

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            ModelConfig(target_size=48, target_blocks=4)
        with pytest.raises(ValueError):
            ModelConfig(attention_variant="fancy")


class TestAttention:
    def test_all_ones_gives_constant_4(self):
        A = attention(np.ones((64, 64, 4)), np.ones(4))
        np.testing.assert_allclose(A.data, 4.0)

    def test_zero_target_gives_zero(self):
        A = attention(np.random.default_rng(5).random((8, 8, 4)), np.zeros(4))
        np.testing.assert_allclose(A.data, 0.0)

    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            I = rng.normal(size=(8, 8, 4))
            tv = rng.normal(size=4)
            A = attention(I, tv)
            np.testing.assert_allclose(A.data, attention_oracle(I, tv), atol=1e-6)

    def test_softmax_variant_sums_to_one(self):
        rng = np.random.default_rng(7)
        A = attention(rng.normal(size=(8, 8, 4)), rng.normal(size=4), variant="softmax")
        assert A.data.sum() == pytest.approx(1.0, abs=1e-6)
        assert A.shape == (8, 8)

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            attention(np.zeros((4, 4, 4)), np.zeros(4), variant="bogus")

    def test_cosine_normalization_bounds(self):
        rng = np.random.default_rng(8)
        A = attention(rng.normal(size=(8, 8, 4)), rng.normal(size=4), cosine=True)
        assert np.all(np.abs(A.data) <= 1.0 + 1e-6)


@pytest.fixture(scope="module")
def toy_examples(tmp_path_factory):
    out = tmp_path_factory.mktemp("toydata")
    recs, _ = synth_generate(SynthConfig(n_users=4, trials_per_user=4, out_dir=str(out)), seed=9)
    cfg = toy_config()
    norm = fit_norm(recs)
    return prepare_examples(recs, out, cfg, norm), cfg


class TestForwardAndLoss:
    def test_eval_mode_deterministic(self, toy_examples):
        ex, cfg = toy_examples
        net = ScannabilityNet(cfg, seed=10)
        out1, _ = net.forward(ex["pages"][:2], ex["targets"][:2], ex["numeric"][:2], ex["type_ids"][:2], mode="eval", head="regression")
        out2, _ = net.forward(ex["pages"][:2], ex["targets"][:2], ex["numeric"][:2], ex["type_ids"][:2], mode="eval", head="regression")
        np.testing.assert_array_equal(out1.data, out2.data)

    def test_class_probabilities_sum_to_one(self, toy_examples):
        ex, cfg = toy_examples
        net = ScannabilityNet(cfg, seed=11)
        out, _ = net.forward(ex["pages"][:3], ex["targets"][:3], ex["numeric"][:3], ex["type_ids"][:3], mode="eval", head="classification")
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-6)

    def test_mask_term_zero_when_attention_equals_mask(self, toy_examples):
        ex, cfg = toy_examples
        net = ScannabilityNet(cfg, seed=12)
        batch = {k: ex[k][:4] for k in ("pages", "targets", "masks", "numeric", "type_ids")}
        batch["labels"] = ex["norm_times"][:4]
        _, out, A = model_loss(net, batch, train=False, l2_weight=0.0)
        perfect = dict(batch)
        perfect["labels"] = out.data.copy()
        perfect["masks"] = A.data.copy()
        loss, _, _ = model_loss(net, perfect, train=False, l2_weight=0.0)
        assert float(loss.data) == pytest.approx(0.0, abs=1e-10)

    def test_mask_gradient_nonzero_when_attention_differs(self, toy_examples):
        ex, cfg = toy_examples
        net = ScannabilityNet(cfg, seed=13)
        batch = {k: ex[k][:2] for k in ("pages", "targets", "masks", "numeric", "type_ids")}
        batch["labels"] = ex["norm_times"][:2]
        loss, out, A = model_loss(net, batch, train=False, l2_weight=0.0)
        assert not np.allclose(A.data, batch["masks"])
        loss.backward()
        assert A.grad is not None and np.any(A.grad != 0)

    def test_empty_batch_rejected(self, toy_examples):
        ex, cfg = toy_examples
        net = ScannabilityNet(cfg, seed=14)
        empty = {k: ex[k][:0] for k in ("pages", "targets", "masks", "numeric", "type_ids")}
        empty["labels"] = np.zeros(0)
        with pytest.raises(ValueError, match="empty"):
            model_loss(net, empty)

    def test_denormalize_time(self, toy_examples):
        ex, cfg = toy_examples
        net = ScannabilityNet(cfg, seed=15)
        from scannability.features import FeatureNorm

        net.feature_norm = FeatureNorm(means=np.zeros(7), stds=np.ones(7), time_mean=4.0, time_std=2.0)
        assert net.denormalize_time(0.0) == 4.0
        assert net.denormalize_time(1.0) == 6.0


class TestOverfitRun:
    def run_overfit(self, ex, cfg, seed, steps=50):
        net = ScannabilityNet(cfg, seed=seed)
        rng = np.random.default_rng(seed)
        state = AdamState()
        batch = {k: ex[k][:8] for k in ("pages", "targets", "masks", "numeric", "type_ids")}
        batch["labels"] = ex["norm_times"][:8]
        losses = []
        corrs = []
        trainable = net.trainable_params("regression")
        for _ in range(steps):
            net.zero_grad()
            loss, out, A = model_loss(net, batch, train=True, rng=rng)
            losses.append(float(loss.data))
            corrs.append(attention_mask_correlation(A.data, batch["masks"]))
            loss.backward()
            for p in trainable.values():
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
            adam_step(trainable, state, lr=cfg.lr)
        return net, losses, corrs

    def test_50_steps_reduce_loss_and_align_attention(self, toy_examples):
        ex, _ = toy_examples
        # mask_weight large enough that the alignment term, not incidental
        # drift of the regression loss, drives the attention map
        cfg = toy_config(lr=1e-3, dropout_rate=0.0, mask_weight=0.05)
        _, losses, corrs = self.run_overfit(ex, cfg, seed=18)
        assert losses[-1] < losses[0]
        assert corrs[-1] > corrs[0]

    def test_deterministic_given_seed(self, toy_examples):
        ex, _ = toy_examples
        cfg = toy_config(lr=1e-3)
        net_a, losses_a, _ = self.run_overfit(ex, cfg, seed=17, steps=10)
        net_b, losses_b, _ = self.run_overfit(ex, cfg, seed=17, steps=10)
        assert losses_a == losses_b
        for k in net_a.params:
            np.testing.assert_array_equal(net_a.params[k].data, net_b.params[k].data)


class TestTrainLoop:
    def test_train_returns_history_and_is_deterministic(self, tmp_path):
        recs, _ = synth_generate(SynthConfig(n_users=6, trials_per_user=5, out_dir=str(tmp_path)), seed=18)
        split = split_by_user(recs, fractions=(0.5, 0.25, 0.25), seed=0)
        cfg = toy_config(max_epochs=3, lr=1e-3)
        norm = fit_norm(split.train)
        tr = prepare_examples(split.train, tmp_path, cfg, norm)
        va = prepare_examples(split.validation, tmp_path, cfg, norm)

        def run():
            net = ScannabilityNet(cfg, seed=19)
            net.feature_norm = norm
            history = train(net, tr, va, seed=19)
            return net, history

        net_a, hist_a = run()
        net_b, hist_b = run()
        assert hist_a == hist_b
        assert len(hist_a) >= 1 and {"epoch", "train_loss", "val_loss"} <= set(hist_a[0])
        for k in net_a.params:
            np.testing.assert_array_equal(net_a.params[k].data, net_b.params[k].data)


class TestTrainingQuality:
    def test_recovers_linear_oracle_on_clean_data(self, tmp_path):
        """With no clutter or noise the oracle is linear in the structured
        features, so a trained model should track it closely on held-out users."""
        from scannability.evaluation import r2_cross
        from scannability.model import predict_examples

        recs, _ = synth_generate(SynthConfig(n_users=30, trials_per_user=15, out_dir=str(tmp_path)), seed=50)
        split = split_by_user(recs, seed=0)
        cfg = toy_config(lr=3e-3, dropout_rate=0.0, max_epochs=25, patience=25)
        norm = fit_norm(split.train)
        tr = prepare_examples(split.train, tmp_path, cfg, norm)
        va = prepare_examples(split.validation, tmp_path, cfg, norm)
        te = prepare_examples(split.test, tmp_path, cfg, norm)
        net = ScannabilityNet(cfg, seed=51)
        net.feature_norm = norm
        train(net, tr, va, seed=51)
        preds = np.array([net.denormalize_time(p) for p in predict_examples(net, te)])
        truths = np.array([r.search_time_s for r in split.test])
        assert r2_cross(preds, truths) >= 0.8

        # the learned y effect is positive, so a vertical placement sweep
        # should predict faster search near the top of the page
        from PIL import Image
        from scannability.service import whatif_grid

        rec = split.test[0]
        img = Image.open(tmp_path / rec.screenshot)
        grid = whatif_grid(net, img, rec.bbox, rec.target_type, rec.n_candidates, rows=6, cols=3)
        seconds = np.array(grid["seconds"])
        assert seconds[0].mean() < seconds[-1].mean()


class TestFullModelGradients:
    def test_full_loss_gradcheck(self, toy_examples):
        ex, _ = toy_examples
        cfg = ModelConfig(
            page_size=16, target_size=8, page_blocks=3, target_blocks=3, dropout_rate=0.0, l2_weight=1e-2
        )
        rng = np.random.default_rng(20)
        batch = {
            "pages": rng.random((2, 16, 16, 3)),
            "targets": rng.random((2, 8, 8, 3)),
            "masks": (rng.random((2, 2, 2)) > 0.5).astype(float),
            "numeric": rng.normal(size=(2, 7)),
            "type_ids": np.array([1, 3]),
            "labels": rng.normal(size=2),
        }

        for mode, labels in (("regression", batch["labels"]), ("classification", np.array([0, 4]))):
            net = ScannabilityNet(cfg, seed=21, dtype=np.float64)
            b = dict(batch, labels=labels)
            param_arrays = {k: p.data.copy() for k, p in net.trainable_params(mode).items()}
            for k, a in param_arrays.items():
                # zero-initialized biases have a degenerate zero gradient; shift them
                if a.std() == 0:
                    param_arrays[k] = a + rng.normal(0, 0.3, size=a.shape)

            def builder(tensors):
                for k, t in tensors.items():
                    net.params[k] = t
                loss, _, _ = model_loss(net, b, mode=mode, train=True)
                return loss

            report = T.grad_check(builder, param_arrays, n_samples=8, eps=1e-6, seed=22)
            assert report["max_rel_error"] < 1e-4, report
