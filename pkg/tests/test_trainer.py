import math

import numpy as np
import pytest

from lrpath.errors import EmptyEval, InvalidConfig, ShapeMismatch
from lrpath.lineage import derive_seed
from lrpath.paradigm import Paradigm, build_plan, uniform_spec
from lrpath.schedule import ScheduleConfig, ScheduleKind
from lrpath.trainer import (
    AdamState,
    ModelState,
    ToyModelConfig,
    adam_step,
    backward,
    evaluate_ppl,
    forward_loss,
    init_adam,
    init_model,
    make_corpus,
    sample_windows,
    train_phase,
)

TINY = ToyModelConfig(vocab_size=16, context_len=4, embed_dim=8, hidden_dim=12, batch_size=8)


def tiny_batch(rng, cfg, count=8):
    return rng.integers(0, cfg.vocab_size, size=(count, cfg.context_len + 1), dtype=np.int64)


class TestModelSetup:
    def test_config_validation(self):
        with pytest.raises(InvalidConfig):
            ToyModelConfig(vocab_size=0, context_len=4, embed_dim=8, hidden_dim=8, batch_size=8)

    def test_init_deterministic(self):
        a = init_model(TINY, seed=3)
        b = init_model(TINY, seed=3)
        np.testing.assert_array_equal(a.flat, b.flat)
        c = init_model(TINY, seed=4)
        assert not np.array_equal(a.flat, c.flat)

    def test_param_views_alias_flat(self):
        model = init_model(TINY, seed=0)
        model.params["b1"][:] = 7.5
        start = TINY.vocab_size * TINY.embed_dim + TINY.context_len * TINY.embed_dim * TINY.hidden_dim
        assert model.flat[start] == 7.5


class TestForwardBackward:
    def test_fresh_loss_near_uniform(self):
        model = init_model(TINY, seed=1)
        rng = np.random.default_rng(0)
        loss, _ = forward_loss(model, tiny_batch(rng, TINY))
        assert loss == pytest.approx(math.log(TINY.vocab_size), rel=0.02)

    def test_loss_is_batch_mean(self):
        model = init_model(TINY, seed=1)
        rng = np.random.default_rng(5)
        batch = tiny_batch(rng, TINY, count=6)
        whole, _ = forward_loss(model, batch)
        parts = [forward_loss(model, batch[i : i + 1])[0] for i in range(6)]
        assert whole == pytest.approx(float(np.mean(parts)), rel=1e-12)

    def test_shape_mismatch(self):
        model = init_model(TINY, seed=1)
        bad = np.zeros((4, TINY.context_len), dtype=np.int64)  # missing the target column
        with pytest.raises(ShapeMismatch):
            forward_loss(model, bad)

    def test_gradcheck(self):
        model = init_model(TINY, seed=2)
        rng = np.random.default_rng(11)
        batch = tiny_batch(rng, TINY, count=4)
        loss, cache = forward_loss(model, batch)
        grads = backward(model, cache)
        eps = 1e-5
        check_rng = np.random.default_rng(99)
        for name, g in grads.items():
            flatg = g.ravel()
            p = model.params[name].ravel()
            idx = check_rng.choice(p.size, size=min(25, p.size), replace=False)
            for i in idx:
                old = p[i]
                p[i] = old + eps
                up, _ = forward_loss(model, batch)
                p[i] = old - eps
                down, _ = forward_loss(model, batch)
                p[i] = old
                numeric = (up - down) / (2 * eps)
                denom = max(abs(numeric), abs(flatg[i]), 1e-6)
                assert abs(numeric - flatg[i]) / denom < 1e-4, (name, i)


class TestAdam:
    def test_zero_grad_no_motion(self):
        model = init_model(TINY, seed=0)
        adam = init_adam(model)
        zeros = {k: np.zeros_like(v) for k, v in model.params.items()}
        new_model, _ = adam_step(model, adam, zeros, lr=1e-3)
        np.testing.assert_array_equal(new_model.flat, model.flat)

    def test_zero_lr_no_motion_but_state_moves(self):
        model = init_model(TINY, seed=0)
        adam = init_adam(model)
        grads = {k: np.ones_like(v) for k, v in model.params.items()}
        new_model, new_adam = adam_step(model, adam, grads, lr=0.0)
        np.testing.assert_array_equal(new_model.flat, model.flat)
        assert new_adam.t == 1
        assert np.any(new_adam.m_flat != 0.0)

    def test_first_step_closed_form(self):
        # with constant gradient g, step 1 moves by -lr * g/(|g| + eps*sqrt(1-b2))
        model = init_model(TINY, seed=0)
        adam = init_adam(model)
        g = 0.25
        grads = {k: np.full_like(v, g) for k, v in model.params.items()}
        lr = 1e-3
        new_model, _ = adam_step(model, adam, grads, lr=lr)
        mhat = g
        vhat = g * g
        expected = -lr * mhat / (math.sqrt(vhat) + adam.eps)
        np.testing.assert_allclose(new_model.flat - model.flat, expected, rtol=1e-12)

    def test_functional_purity(self):
        model = init_model(TINY, seed=0)
        adam = init_adam(model)
        before = model.flat.copy()
        grads = {k: np.ones_like(v) for k, v in model.params.items()}
        adam_step(model, adam, grads, lr=1e-2)
        np.testing.assert_array_equal(model.flat, before)
        assert adam.t == 0


SCHED = ScheduleConfig(ScheduleKind.COSINE, 1e-3, 1e-4, 5, 40)


class TestTrainPhase:
    def plan(self):
        return build_plan(Paradigm.ptfs(), uniform_spec(1, 40, SCHED, seed=12))

    def test_deterministic(self):
        plan = self.plan()
        phase = plan.phases[0]
        data = make_corpus(5, 40 * 64 + TINY.context_len + 1) % TINY.vocab_size
        results = []
        for _ in range(2):
            model = init_model(TINY, seed=12)
            adam = init_adam(model)
            out_model, out_adam, trace = train_phase(model, adam, phase, data, run_seed=12)
            results.append((out_model.flat.copy(), out_adam.m_flat.copy(), trace))
        np.testing.assert_array_equal(results[0][0], results[1][0])
        np.testing.assert_array_equal(results[0][1], results[1][1])
        assert results[0][2] == results[1][2]

    def test_trace_lrs_match_schedule(self):
        plan = self.plan()
        phase = plan.phases[0]
        data = make_corpus(5, 40 * 64 + TINY.context_len + 1) % TINY.vocab_size
        model = init_model(TINY, seed=12)
        adam = init_adam(model)
        _, _, trace = train_phase(model, adam, phase, data, run_seed=12, log_stride=10)
        steps = [row[0] for row in trace]
        assert steps == [0, 10, 20, 30, 39]
        for step, lr, _loss in trace:
            assert lr == pytest.approx(phase.lr_profile.lr(step), rel=1e-12)

    def test_loss_decreases(self):
        spec = uniform_spec(1, 300, SCHED.replace(horizon=300), seed=9)
        phase = build_plan(Paradigm.ptfs(), spec).phases[0]
        data = make_corpus(9, 300 * 64 + TINY.context_len + 1) % TINY.vocab_size
        model = init_model(TINY, seed=9)
        adam = init_adam(model)
        _, _, trace = train_phase(model, adam, phase, data, run_seed=9)
        assert trace[-1][2] < trace[0][2] - 0.1


class TestEvaluate:
    def test_uniform_model_ppl(self):
        model = init_model(TINY, seed=0)
        # zero out everything: logits are exactly uniform
        model.flat[:] = 0.0
        data = make_corpus(3, 5000)
        report = evaluate_ppl(model, data % TINY.vocab_size)
        assert report.ppl == pytest.approx(TINY.vocab_size, rel=1e-9)

    def test_ppl_is_exp_nll(self):
        model = init_model(TINY, seed=4)
        data = make_corpus(3, 3000) % TINY.vocab_size
        report = evaluate_ppl(model, data)
        assert report.ppl == pytest.approx(math.exp(report.nll), rel=1e-12)
        assert report.tokens_evaluated == 3000 // (TINY.context_len + 1)

    def test_empty(self):
        model = init_model(TINY, seed=4)
        with pytest.raises(EmptyEval):
            evaluate_ppl(model, np.zeros(TINY.context_len, dtype=np.int64))


class TestCorpus:
    def test_deterministic(self):
        np.testing.assert_array_equal(make_corpus(8, 10_000), make_corpus(8, 10_000))

    def test_seed_sensitivity(self):
        assert not np.array_equal(make_corpus(8, 10_000), make_corpus(9, 10_000))

    def test_range_and_dtype(self):
        data = make_corpus(1, 5000)
        assert data.dtype == np.int64
        assert data.min() >= 0 and data.max() < 256

    def test_structure_beats_uniform(self):
        # consecutive-pair entropy should be far below the 16-bit uniform bound
        data = make_corpus(2, 200_000)
        pairs = data[:-1] * 256 + data[1:]
        _, counts = np.unique(pairs, return_counts=True)
        p = counts / counts.sum()
        entropy = -np.sum(p * np.log2(p))
        assert entropy < 13.0

    def test_file_mode(self, tmp_path):
        path = tmp_path / "corpus.bin"
        path.write_bytes(bytes(range(256)) * 40)
        data = make_corpus(0, 5000, path=str(path))
        assert data.size == 5000
        assert data[257] == 1

    def test_file_too_small(self, tmp_path):
        path = tmp_path / "corpus.bin"
        path.write_bytes(b"abc")
        with pytest.raises(Exception):
            make_corpus(0, 5000, path=str(path))

    def test_sample_windows(self):
        data = make_corpus(4, 2000)
        rng = np.random.default_rng(derive_seed(4, "w"))
        batch = sample_windows(data, rng, count=32, width=9)
        assert batch.shape == (32, 9)
        # every row must be a verbatim slice of the corpus
        for row in batch[:4]:
            starts = np.flatnonzero(data[: data.size - 9] == row[0])
            assert any(np.array_equal(data[s : s + 9], row) for s in starts)
