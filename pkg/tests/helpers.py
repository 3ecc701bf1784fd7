"""Shared builders and independent oracles for the test suite."""

import numpy as np
import torch

from seq2bf.corpus import DEFAULT_SPECIALS, Document
from seq2bf.model import ModelConfig, Seq2BFTransformer
from seq2bf.schedule import BACKWARD, build_decoder_mask, build_schedule, read_anchor

N_SPECIALS = len(DEFAULT_SPECIALS)


def tiny_model(vocab_size=24, d_model=16, n_heads=2, seed=0, dtype=torch.float32, layers=2, max_side_len=8):
    cfg = ModelConfig(vocab_size=vocab_size, d_model=d_model, n_heads=n_heads, n_enc_layers=layers,
                      n_dec_layers=layers, d_ff=2 * d_model, dropout_rate=0.0, max_side_len=max_side_len, seed=seed)
    model = Seq2BFTransformer(cfg).to(dtype)
    model.eval()
    return model


def perturb_params(model, seed, scale=0.5):
    """Randomize every parameter (init zeros biases, which hides bugs)."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(scale * torch.randn(p.shape, generator=gen, dtype=torch.float64).to(p.dtype))
    return model


def random_document(rng, M, L, N, vocab_size=24, article_len=None):
    article_len = article_len or int(rng.integers(1, 8))
    ids = lambda n: tuple(int(x) for x in rng.integers(N_SPECIALS, vocab_size, size=n))
    headline = ids(M + L + N)
    return Document(ids(article_len), headline, (M, M + L))


@torch.no_grad()
def incremental_event_logits(model, doc, strategy, specials=DEFAULT_SPECIALS):
    """Per-event logits from separate decoder runs on the observed partial headline only."""
    schedule = build_schedule(strategy, doc.M, doc.N, doc.L)
    layout = schedule.layout
    src = torch.tensor([doc.article_ids])
    memory = model.encode(src, torch.zeros_like(src, dtype=torch.bool))
    full = dict(zip(layout.positions, doc.headline_ids))
    observed = {p: 0 for p in layout.phrase_positions}
    out, count = [], 0
    for t, event in enumerate(schedule.events, 1):
        positions = sorted(observed)
        ids = torch.tensor([[full[p] for p in positions]])
        allowed = torch.from_numpy(build_decoder_mask(observed)).unsqueeze(0)
        hidden = model.decode(ids, torch.tensor([positions]), allowed, memory,
                              torch.zeros(1, memory.shape[1], dtype=torch.bool))
        anchor = positions.index(read_anchor(schedule, t))
        out.append(model.head_logits(event.direction, hidden[0, anchor]))
        if not event.marker:
            count += 1
            observed[layout.side_position(event.direction, event.k)] = count
    targets = []
    for e in schedule.events:
        if e.marker:
            targets.append(specials["BOH"] if e.direction == BACKWARD else specials["EOH"])
        else:
            targets.append(full[layout.side_position(e.direction, e.k)])
    return torch.stack(out), torch.tensor(targets)


def rng(seed=0):
    return np.random.default_rng(seed)


CRITERIA_LOG = []


def criterion(number, ok, detail, gating=True):
    """Record one pass/fail line for the acceptance summary; fail the test when a gating check fails."""
    status = "PASS" if ok else ("FAIL" if gating else "NOTE")
    line = f"criterion {number:>2}: {status}  {detail}"
    CRITERIA_LOG.append(line)
    print(line)
    if gating:
        assert ok, line
