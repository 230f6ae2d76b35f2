import numpy as np
import pytest

from hnmc import metrics as mm
from hnmc.data import embed_corpus, synth_corpus
from hnmc.layers import ArchitectureSpec, build_model
from hnmc.tensor import Tensor
from hnmc.training import (Adam, Sgd, TrainConfig, TrainingDiverged, evaluate,
                           load_checkpoint, model_from_checkpoint,
                           save_checkpoint, train)


def make_data(seed=0, size=30, kind="hmm_sampled"):
    corpus, table = synth_corpus(kind, seed, size)
    return embed_corpus(corpus, table), corpus, table


def tiny_model(kind="rnn", arch=1, n_labels=3, dim=3, hidden=4, seed=0):
    spec = ArchitectureSpec(kind, arch, n_labels, dim, hidden_size=hidden)
    return build_model(spec, np.random.default_rng(seed))


class TestAdam:
    def test_zero_gradient_leaves_params_t_incremented(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        opt = Adam([([p], 0.1)])
        before = p.data.copy()
        opt.step()
        assert opt.t == 1
        assert np.array_equal(p.data, before)

    def test_first_step_magnitude_is_learning_rate(self):
        # bias correction makes the first update lr * g/(|g| + eps) per component
        p = Tensor(np.array([0.0, 0.0]), requires_grad=True)
        p.grad[...] = [0.5, -2.0]
        opt = Adam([([p], 0.01)])
        opt.step()
        assert np.allclose(np.abs(p.data), 0.01, rtol=1e-6)
        assert p.data[0] < 0 < p.data[1]

    def test_sgd_update_rule(self):
        p = Tensor(np.array(1.0), requires_grad=True)
        p.grad[...] = 0.5
        opt = Sgd([([p], 0.1)])
        opt.step()
        assert p.data == pytest.approx(0.95)

    def test_zero_grad_clears(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad[...] = 3.0
        Adam([([p], 0.1)]).zero_grad()
        assert np.all(p.grad == 0.0)


class TestTrain:
    def test_memorizes_single_sequence(self):
        data, corpus, _ = make_data(size=1)
        model = tiny_model("rnn")
        config = TrainConfig(epochs=200, batch_size=1, lr_model=0.05, seed=0)
        train(model, data, None, config)
        assert evaluate(model, data, "accuracy") == 1.0

    def test_zero_learning_rate_freezes_loss(self):
        data, _, _ = make_data(size=10)
        model = tiny_model("rnn")
        config = TrainConfig(epochs=3, lr_model=0.0, seed=0)
        result = train(model, data, None, config)
        losses = [e.mean_loss for e in result.log]
        assert losses[0] == pytest.approx(losses[1]) == pytest.approx(losses[2])

    def test_fixed_seed_identical_loss_curves(self):
        data, _, _ = make_data(size=20)
        curves = []
        for _ in range(2):
            model = tiny_model("hnmc", seed=3)
            result = train(model, data, None, TrainConfig(epochs=3, seed=11))
            curves.append([e.mean_loss for e in result.log])
        assert curves[0] == curves[1]

    def test_loss_decreases(self):
        data, _, _ = make_data(size=60)
        model = tiny_model("rnn", seed=1)
        result = train(model, data, None, TrainConfig(epochs=5, lr_model=0.01, seed=2))
        assert result.log[-1].mean_loss < result.log[0].mean_loss

    def test_per_group_learning_rates_freeze_correct_group(self):
        data, _, _ = make_data(size=12)
        for frozen_group, lrs in ((1, (0.05, 0.0)), (0, (0.0, 0.005))):
            model = tiny_model("rnn", arch=2, hidden=4, seed=5)
            before = [[p.data.copy() for p in g] for g in model.parameter_groups()]
            train(model, data, None, TrainConfig(epochs=2, lr_layers=lrs, seed=6))
            after = model.parameter_groups()
            for p_before, p_after in zip(before[frozen_group], after[frozen_group]):
                assert np.array_equal(p_before, p_after.data)
            moving = 1 - frozen_group
            assert any(not np.array_equal(b, a.data)
                       for b, a in zip(before[moving], after[moving]))

    def test_non_finite_loss_aborts_with_diagnostics(self):
        data, _, _ = make_data(size=5)
        model = tiny_model("rnn")
        model.parameters()[0].data[...] = np.nan
        with pytest.raises(TrainingDiverged, match="epoch 1"):
            train(model, data, None, TrainConfig(epochs=1, seed=0))

    def test_best_dev_checkpoint_returned(self):
        data, corpus, table = make_data(size=40)
        dev, _, _ = make_data(seed=1, size=15)
        model = tiny_model("hnmc", seed=7)
        result = train(model, data, dev, TrainConfig(epochs=4, seed=8))
        assert result.best_score == max(e.dev_score for e in result.log)
        # the model is left holding the best parameters
        assert evaluate(model, dev, "accuracy") == pytest.approx(result.best_score)

    def test_early_stop_on_dev_target(self):
        data, _, _ = make_data(size=40)
        dev, _, _ = make_data(seed=1, size=15)
        model = tiny_model("rnn", seed=9)
        result = train(model, data, dev, TrainConfig(epochs=30, stop_at_dev=0.2, seed=10))
        assert len(result.log) < 30

    def test_empty_training_set(self):
        with pytest.raises(ValueError):
            train(tiny_model(), [], None, TrainConfig())


class TestEvaluate:
    def test_perfect_predictions(self):
        data, _, _ = make_data(size=1)
        model = tiny_model("rnn")
        train(model, data, None, TrainConfig(epochs=200, batch_size=1, lr_model=0.05, seed=0))
        assert evaluate(model, data, "accuracy") == 1.0

    def test_constant_predictor_on_balanced_labels(self):
        # zero weights make all logits equal; ties resolve to the first label
        model = tiny_model("rnn", n_labels=4, dim=2)
        for p in model.parameters():
            p.data[...] = 0.0
        from hnmc.data import LabeledSequence
        data = [LabeledSequence(embeddings=np.zeros((4, 2)), labels=[0, 1, 2, 3],
                                tokens=list("abcd"))]
        assert evaluate(model, data, "accuracy") == 0.25
        assert model.predict(data[0].embeddings) == [0, 0, 0, 0]

    def test_span_f1_matches_metrics_module(self):
        labels = ["O", "B-NP", "I-NP"]
        model = tiny_model("rnn", n_labels=3, dim=2)
        from hnmc.data import LabeledSequence
        rng = np.random.default_rng(0)
        data = [LabeledSequence(embeddings=rng.normal(size=(5, 2)),
                                labels=[0, 1, 2, 0, 1], tokens=list("vwxyz"))]
        got = evaluate(model, data, "span_f1", label_names=labels)
        pred = [labels[i] for i in model.predict(data[0].embeddings)]
        gold = [labels[i] for i in data[0].labels]
        assert got == pytest.approx(mm.span_f1([pred], [gold])[2])

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            evaluate(tiny_model(), [], "accuracy")

    def test_unknown_metric(self):
        data, _, _ = make_data(size=2)
        with pytest.raises(ValueError):
            evaluate(tiny_model(), data, "bleu")


class TestCheckpoints:
    def test_roundtrip_reproduces_forward_bits(self, tmp_path):
        data, corpus, table = make_data(size=10)
        model = tiny_model("hnmc-cn", arch=2, hidden=4, seed=11)
        train(model, data, None, TrainConfig(epochs=1, seed=12))
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, {"labels": corpus.label_names,
                                      "embedding": {"type": "one-hot", "vocab": ["w0", "w1", "w2"]}})
        restored = model_from_checkpoint(load_checkpoint(path))
        emb = data[0].embeddings
        assert np.array_equal(model.forward(emb).data, restored.forward(emb).data)

    def test_config_echo_preserved(self, tmp_path):
        model = tiny_model("rnn")
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, {"labels": ["a"], "note": 7})
        ckpt = load_checkpoint(path)
        assert ckpt.config["note"] == 7
        assert ckpt.config["model"]["model_kind"] == "rnn"
        assert ckpt.config["format_version"] == 1

    def test_shape_mismatch_rejected(self, tmp_path):
        model = tiny_model("rnn")
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, {})
        ckpt = load_checkpoint(path)
        name = next(iter(ckpt.params))
        ckpt.params[name] = np.zeros((1, 1))
        with pytest.raises(ValueError, match="shape|match"):
            model_from_checkpoint(ckpt)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk"
        path.write_bytes(b"definitely not a checkpoint")
        with pytest.raises(ValueError):
            load_checkpoint(path)

    def test_two_identical_runs_identical_bytes(self, tmp_path):
        data, corpus, _ = make_data(size=15)
        blobs = []
        for run in range(2):
            model = tiny_model("hnmc", seed=21)
            result = train(model, data, None, TrainConfig(epochs=2, seed=22))
            path = tmp_path / f"run{run}.ckpt"
            save_checkpoint(path, model, {"labels": corpus.label_names,
                                          "rng_state": result.rng_state})
            blobs.append(path.read_bytes())
        assert blobs[0] == blobs[1]
