import math

import numpy as np
import pytest
import torch

from helpers import perturb_params, random_document, rng, tiny_model
from seq2bf.corpus import Document, make_documents, train_bpe
from seq2bf.errors import ConfigurationError
from seq2bf.model import ModelConfig, event_cross_entropy, loss
from seq2bf.schedule import SEQ2BF_STRATEGIES
from seq2bf.synth import synthesize
from seq2bf import training
from seq2bf.training import (EarlyStopping, TrainConfig, bucketed_batches, inverse_sqrt_schedule,
                             make_control_code_batch, make_left_to_right_batch, make_seq2bf_batch, perplexity,
                             remove_phrase, train)


class TestSeq2BFBatch:
    def test_counts(self):
        doc = random_document(rng(0), 2, 1, 2)
        batch = make_seq2bf_batch([doc], "seq-b")
        assert batch.dec_ids.shape == (1, 5)
        assert batch.n_events == 6
        assert sorted(batch.targets[0].tolist()).count(3) == 1  # one BOH
        assert sorted(batch.targets[0].tolist()).count(4) == 1  # one EOH

    def test_markers_only(self):
        assert make_seq2bf_batch([random_document(rng(0), 0, 1, 0)], "tok-f").n_events == 2

    def test_padded_mixed_sizes(self):
        r = rng(1)
        docs = [random_document(r, 1, 1, 0), random_document(r, 3, 2, 4)]
        batch = make_seq2bf_batch(docs, "tok-b")
        assert batch.dec_ids.shape == (2, 9)
        assert batch.valid.sum(1).tolist() == [3, 9]
        # padding slots only see themselves and are never seen
        assert batch.dec_mask[0, 2:, :].sum(-1).tolist() == [1] * 7
        assert not batch.dec_mask[0, :2, 2:].any()

    @pytest.mark.parametrize("strategy", SEQ2BF_STRATEGIES)
    def test_targets_reassemble_reference(self, strategy):
        r = rng(2)
        for _ in range(20):
            doc = random_document(r, int(r.integers(0, 6)), int(r.integers(1, 4)), int(r.integers(0, 6)))
            batch = make_seq2bf_batch([doc], strategy)
            sched = batch.schedules[0]
            rebuilt = dict(zip(sched.layout.phrase_positions, doc.phrase_ids))
            for pos, tgt in zip(sched.target_positions(), batch.targets[0].tolist()):
                if pos is not None:
                    rebuilt[pos] = tgt
            assert [rebuilt[p] for p in sorted(rebuilt)] == list(doc.headline_ids)
            assert batch.dec_ids[0].tolist() == list(doc.headline_ids)

    def test_overlong_side_skipped(self):
        r = rng(3)
        docs = [random_document(r, 5, 1, 0), random_document(r, 1, 1, 1)]
        assert len(make_seq2bf_batch(docs, "seq-b", max_side_len=4)) == 1


class TestControlCode:
    doc = Document((10, 11, 12, 13, 11, 12), (11, 12, 14), (0, 2))

    def test_no_drop(self):
        batch = make_control_code_batch([self.doc], 0.0, rng(0))
        assert batch.src_ids[0].tolist() == [11, 12, 5, 10, 11, 12, 13, 11, 12]

    def test_full_drop(self):
        for seed in range(5):
            batch = make_control_code_batch([self.doc], 1.0, rng(seed))
            assert batch.src_ids[0].tolist() == [11, 12, 5, 10, 13]

    def test_seeded_drop_repeatable(self):
        a = [remove_phrase(range(20), [3, 4], 0.5, rng(7)) for _ in range(2)]
        assert a[0] == a[1]
        pattern = [remove_phrase([1, 3, 4, 3, 4, 3, 4, 2], [3, 4], 0.5, rng(s)) for s in range(20)]
        assert len({tuple(p) for p in pattern}) > 1

    def test_source_starts_with_phrase_and_sep(self):
        r = rng(4)
        docs = [random_document(r, 1, 2, 1) for _ in range(5)]
        batch = make_control_code_batch(docs, 0.5, r)
        for doc, src in zip(docs, batch.src_ids.tolist()):
            assert src[:doc.L + 1] == [*doc.phrase_ids, 5]

    def test_causal_targets(self):
        batch = make_left_to_right_batch([[7, 8]], [[9, 10]])
        assert batch.dec_ids[0].tolist() == [2, 9, 10]
        assert batch.targets[0].tolist() == [9, 10, 4]
        assert batch.heads[0].tolist() == [1, 1, 1]


class TestEarlyStopping:
    def run(self, trace, patience=3):
        stop = EarlyStopping(patience)
        for value in trace:
            stop.update(value)
            if stop.should_stop:
                break
        return stop

    def test_worked_sequence(self):
        stop = self.run([10, 9, 9.5, 9.4, 9.6])
        assert stop.epoch == 5 and stop.best_epoch == 2 and stop.best == 9

    def test_equal_value_is_not_an_update(self):
        stop = self.run([5, 5, 5, 5, 1])
        assert stop.epoch == 4 and stop.best_epoch == 1

    def test_keeps_going_while_improving(self):
        stop = self.run([5, 4, 4.5, 4.6, 3, 3.5, 3.4, 3.3, 2])
        assert stop.epoch == 8 and stop.best_epoch == 5

    def test_patience_validated(self):
        with pytest.raises(ConfigurationError):
            EarlyStopping(0)


def test_warmup_schedule():
    assert inverse_sqrt_schedule(1, 4) == pytest.approx(0.25)
    assert inverse_sqrt_schedule(4, 4) == pytest.approx(1.0)
    assert inverse_sqrt_schedule(16, 4) == pytest.approx(0.5)


def test_bucketing_preserves_examples():
    r = rng(5)
    docs = [random_document(r, int(r.integers(0, 5)), 1, int(r.integers(0, 5))) for _ in range(50)]
    batches = bucketed_batches(docs, 8, rng(0), 2)
    flat = [d for b in batches for d in b]
    assert sorted(map(id, flat)) == sorted(map(id, docs))
    assert all(len(b) <= 8 for b in batches)


class TestPerplexity:
    def test_uniform(self):
        model = tiny_model(vocab_size=30)
        with torch.no_grad():
            for head in model.heads:
                head.weight.zero_()
                head.bias.zero_()
        docs = [random_document(rng(0), 2, 1, 1, 30)]
        assert perplexity(model, docs, "tok-b") == pytest.approx(30, rel=1e-6)

    def test_perfect(self):
        model = tiny_model(vocab_size=30)
        with torch.no_grad():
            for head, target in zip(model.heads, (3, 4)):
                head.weight.zero_()
                head.bias.zero_()
                head.bias[target] = 60.0
        assert perplexity(model, [random_document(rng(0), 0, 2, 0, 30)], "seq-f") == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("method", ["tok-f", "vanilla", "control-code"])
    def test_matches_single_batch_loss(self, method):
        model = perturb_params(tiny_model(), 1)
        r = rng(1)
        docs = [random_document(r, int(r.integers(0, 4)), 1, int(r.integers(0, 4))) for _ in range(7)]
        batch = training.make_batch(docs, method, drop_prob=0.0)
        expected = math.exp(loss(model, batch).item())
        assert perplexity(model, docs, method, batch_size=3) == pytest.approx(expected, rel=1e-6)


def small_setup(n=40, seed=0):
    rows = synthesize(n, seed)
    bpe = train_bpe([e.article for e in rows] + [e.headline for e in rows], 400)
    docs = make_documents(rows, bpe, rng(seed))
    mcfg = ModelConfig(vocab_size=bpe.vocab_size, d_model=32, n_heads=2, n_enc_layers=1, n_dec_layers=1, d_ff=64,
                       dropout_rate=0.1, max_side_len=16)
    return bpe, docs, mcfg


def test_training_is_deterministic(tmp_path):
    bpe, docs, mcfg = small_setup()
    tcfg = TrainConfig(strategy="seq-f", batch_size=8, max_epochs=3, warmup_steps=10)
    a = train(docs[:30], docs[30:], tcfg, mcfg, bpe.specials, run_dir=tmp_path / "a")
    b = train(docs[:30], docs[30:], tcfg, mcfg, bpe.specials, run_dir=tmp_path / "b")
    assert a.best_val_ppl == b.best_val_ppl
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
    assert (tmp_path / "a" / "best.ckpt").exists()


def test_train_returns_minimum_checkpoint(monkeypatch):
    bpe, docs, mcfg = small_setup(20)
    trace = iter([10, 9, 9.5, 9.4, 9.6, 1.0])
    snapshots = []

    def fake_perplexity(model, *args, **kwargs):
        snapshots.append({k: v.clone() for k, v in model.state_dict().items()})
        return next(trace)

    monkeypatch.setattr(training, "perplexity", fake_perplexity)
    result = train(docs[:15], docs[15:], TrainConfig(strategy="tok-b", batch_size=4, max_epochs=10,
                                                      warmup_steps=5), mcfg, bpe.specials)
    assert result.stopped_epoch == 5 and result.best_epoch == 2 and result.best_val_ppl == 9
    assert [h[2] for h in result.history] == [10, 9, 9.5, 9.4, 9.6]
    for k, v in result.model.state_dict().items():
        assert torch.equal(v, snapshots[1][k])


def test_divergence_keeps_last_good_model(monkeypatch):
    bpe, docs, mcfg = small_setup(20)
    trace = iter([5.0, float("nan")])
    monkeypatch.setattr(training, "perplexity", lambda *a, **k: next(trace))
    result = train(docs[:15], docs[15:], TrainConfig(strategy="tok-b", batch_size=4, max_epochs=10,
                                                      warmup_steps=5), mcfg, bpe.specials)
    assert result.diverged and result.best_epoch == 1 and result.best_val_ppl == 5.0


def test_memorizes_single_example():
    bpe, docs, mcfg = small_setup(1)
    mcfg.dropout_rate = 0.0
    result = train(docs, docs, TrainConfig(strategy="tok-b", batch_size=1, max_epochs=150, warmup_steps=10,
                                           lr=3e-3, patience=150), mcfg, bpe.specials)
    assert result.best_val_ppl < 1.1 and result.history[0][2] > 2.0
