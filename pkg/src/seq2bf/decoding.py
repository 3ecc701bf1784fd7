"""Beam search: outward from a fixed phrase, and plain left-to-right for baselines.

The phrase is never part of the search space. Hypotheses only carry the
tokens generated on each side, so every output contains the phrase verbatim
no matter what the model predicts.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import torch

from .corpus import DEFAULT_SPECIALS
from .schedule import BACKWARD, FORWARD, Strategy, causal_mask, side_order


@dataclass
class DecodeConfig:
    strategy: str = "tok-b"
    beam_size: int = 3
    max_side_len: int = 32
    alpha: float = 0.0
    max_len: int = 64  # left-to-right only

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")


@dataclass(frozen=True)
class Hypothesis:
    backward: tuple = ()  # outward from the phrase, nearest first
    forward: tuple = ()
    backward_done: bool = False
    forward_done: bool = False
    logprob: float = 0.0
    order: tuple = ()  # direction of each real token, in generation order

    @property
    def n_real(self) -> int:
        return len(self.backward) + len(self.forward)

    def done(self, direction: int) -> bool:
        return self.backward_done if direction == BACKWARD else self.forward_done

    def side(self, direction: int) -> tuple:
        return self.backward if direction == BACKWARD else self.forward

    def finish(self, direction: int, logp: float = 0.0) -> "Hypothesis":
        key = "backward_done" if direction == BACKWARD else "forward_done"
        return replace(self, **{key: True}, logprob=self.logprob + logp)

    def extend(self, direction: int, token: int, logp: float) -> "Hypothesis":
        key = "backward" if direction == BACKWARD else "forward"
        return replace(self, **{key: self.side(direction) + (token,)}, logprob=self.logprob + logp,
                       order=self.order + (direction,))

    def headline(self, phrase) -> list:
        return [*reversed(self.backward), *phrase, *self.forward]


def score(hyp: Hypothesis, alpha: float = 0.0) -> float:
    """Cumulative log-probability over (generated real tokens + 1) ** alpha."""
    return hyp.logprob / (hyp.n_real + 1) ** alpha


def hypothesis_inputs(hyp: Hypothesis, phrase: Sequence[int]):
    """Decoder slots, signed positions and order stamps of a partial headline."""
    L = len(phrase)
    center = (L + 1) // 2
    left, right = 1 - center, L - center
    stamps_b = [0] * len(hyp.backward)
    stamps_f = [0] * len(hyp.forward)
    nb = nf = 0
    for t, d in enumerate(hyp.order, 1):
        if d == BACKWARD:
            stamps_b[nb] = t
            nb += 1
        else:
            stamps_f[nf] = t
            nf += 1
    ids = [*reversed(hyp.backward), *phrase, *hyp.forward]
    positions = list(range(left - len(hyp.backward), right + len(hyp.forward) + 1))
    stamps = [*reversed(stamps_b), *([0] * L), *stamps_f]
    return ids, positions, stamps


def hypothesis_anchor(hyp: Hypothesis, phrase: Sequence[int], direction: int) -> int:
    """Slot index (into :func:`hypothesis_inputs` order) predicting the next token."""
    nb = len(hyp.backward)
    if hyp.order:
        last = hyp.order[-1]
        if last == BACKWARD:
            return 0  # the outermost backward token is the newest one
        return nb + len(phrase) + len(hyp.forward) - 1
    return nb if direction == BACKWARD else nb + len(phrase) - 1


def _banned(specials, keep: int):
    return [specials[n] for n in ("PAD", "BOS", "BOH", "EOH", "SEP") if specials[n] != keep]


@torch.no_grad()
def _step_logprobs(model, memory, memory_pad, rows, phrases, specials):
    """Log-probabilities for a list of (example index, hypothesis, direction) rows."""
    ids, pos, masks, anchors = [], [], [], []
    for ex, hyp, d in rows:
        i, p, s = hypothesis_inputs(hyp, phrases[ex])
        ids.append(i)
        pos.append(p)
        s = np.asarray(s)
        masks.append(s[None, :] <= s[:, None])
        anchors.append(hypothesis_anchor(hyp, phrases[ex], d))
    S = max(len(i) for i in ids)
    R = len(rows)
    slot_ids = torch.full((R, S), specials["PAD"], dtype=torch.long)
    slot_pos = torch.zeros((R, S), dtype=torch.long)
    allowed = torch.eye(S, dtype=torch.bool).repeat(R, 1, 1)
    for r in range(R):
        n = len(ids[r])
        slot_ids[r, :n] = torch.tensor(ids[r])
        slot_pos[r, :n] = torch.tensor(pos[r])
        allowed[r, :n, :n] = torch.from_numpy(masks[r])
    ex_idx = torch.tensor([ex for ex, _, _ in rows])
    hidden = model.decode(slot_ids, slot_pos, allowed, memory[ex_idx], memory_pad[ex_idx])
    h = hidden[torch.arange(R), torch.tensor(anchors)]
    dirs = torch.tensor([d for _, _, d in rows])
    logits = torch.where((dirs == BACKWARD).unsqueeze(-1), model.heads[0](h), model.heads[1](h))
    for d, marker in ((BACKWARD, specials["BOH"]), (FORWARD, specials["EOH"])):
        sel = dirs == d
        if sel.any():
            logits[sel.nonzero(as_tuple=True)[0].unsqueeze(-1), torch.tensor(_banned(specials, marker))] = -torch.inf
    return torch.log_softmax(logits.double(), dim=-1)


def _encode_sources(model, sources, pad_id):
    S = max(len(s) for s in sources)
    src = torch.full((len(sources), S), pad_id, dtype=torch.long)
    pad = torch.ones((len(sources), S), dtype=torch.bool)
    for i, s in enumerate(sources):
        s = list(s)[: model.cfg.max_article_len]
        src[i, : len(s)] = torch.tensor(s)
        pad[i, : len(s)] = False
    return model.encode(src, pad), pad


@dataclass
class DecodeResult:
    ids: list
    score: float
    hypothesis: Optional[Hypothesis] = None
    events: int = 0


@torch.no_grad()
def decode_seq2bf_batch(model, articles, phrases, config: DecodeConfig, specials=DEFAULT_SPECIALS):
    """Beam-search headlines for several (article, phrase) pairs in lockstep.

    All examples walk the same event list: the strategy's interleaving over
    ``max_side_len + 1`` steps per side. A hypothesis skips events of a
    direction it has already finished; a side that reaches ``max_side_len``
    tokens is closed without a marker.
    """
    strategy = Strategy.parse(config.strategy)
    if any(len(p) == 0 for p in phrases):
        raise ValueError("phrase must be non-empty")
    if any(len(a) == 0 for a in articles):
        raise ValueError("article must be non-empty")
    model.eval()
    cap, K = config.max_side_len, config.beam_size
    memory, memory_pad = _encode_sources(model, articles, specials["PAD"])
    beams = [[Hypothesis()] for _ in articles]
    n_events = 0
    for d, _ in side_order(strategy, cap + 1, cap + 1):
        if all(h.backward_done and h.forward_done for beam in beams for h in beam):
            break
        n_events += 1
        rows, carried = [], [[] for _ in beams]
        for ex, beam in enumerate(beams):
            for rank, h in enumerate(beam):
                if not h.done(d) and len(h.side(d)) >= cap:
                    h = h.finish(d)
                if h.done(d):
                    carried[ex].append((rank, h))
                else:
                    rows.append((ex, h, d, rank))
        logp = _step_logprobs(model, memory, memory_pad, [r[:3] for r in rows], phrases, specials) if rows else None
        cands = [[((-score(h, config.alpha)), rank, -1, h) for rank, h in c] for c in carried]
        marker = specials["BOH"] if d == BACKWARD else specials["EOH"]
        for r, (ex, h, _, rank) in enumerate(rows):
            top = torch.topk(logp[r], min(K, logp.shape[1]))
            for lp, tok in zip(top.values.tolist(), top.indices.tolist()):
                if lp == -np.inf:
                    continue
                new = h.finish(d, lp) if tok == marker else h.extend(d, tok, lp)
                cands[ex].append((-score(new, config.alpha), rank, tok, new))
        beams = [[c[3] for c in sorted(cs, key=lambda c: c[:3])[:K]] for cs in cands]
    results = []
    for ex, beam in enumerate(beams):
        best = min(beam, key=lambda h: -score(h, config.alpha))
        results.append(DecodeResult(best.headline(phrases[ex]), score(best, config.alpha), best, n_events))
    return results


def decode_seq2bf(model, article_ids, phrase_ids, config: DecodeConfig, specials=DEFAULT_SPECIALS):
    """Headline ids (backward side + phrase + forward side) and their score."""
    res = decode_seq2bf_batch(model, [list(article_ids)], [list(phrase_ids)], config, specials)[0]
    return res.ids, res.score


@torch.no_grad()
def decode_left_to_right_batch(model, sources, config: DecodeConfig, specials=DEFAULT_SPECIALS):
    """Causal beam search from BOS until EOH or ``config.max_len`` tokens."""
    if any(len(s) == 0 for s in sources):
        raise ValueError("source must be non-empty")
    model.eval()
    K = config.beam_size
    memory, memory_pad = _encode_sources(model, sources, specials["PAD"])
    # (tokens, logprob, done)
    beams = [[((), 0.0, False)] for _ in sources]
    banned = torch.tensor(_banned(specials, specials["EOH"]))
    lp_score = lambda toks, lp: lp / (len(toks) + 1) ** config.alpha
    for _ in range(config.max_len + 1):
        rows = [(ex, rank, t) for ex, beam in enumerate(beams) for rank, (t, _, done) in enumerate(beam) if not done]
        if not rows:
            break
        S = max(len(t) for _, _, t in rows) + 1
        R = len(rows)
        ids = torch.full((R, S), specials["PAD"], dtype=torch.long)
        allowed = torch.eye(S, dtype=torch.bool).repeat(R, 1, 1)
        anchors = []
        for r, (_, _, t) in enumerate(rows):
            n = len(t) + 1
            ids[r, :n] = torch.tensor([specials["BOS"], *t])
            allowed[r, :n, :n] = torch.from_numpy(causal_mask(n))
            anchors.append(n - 1)
        pos = torch.arange(S).expand(R, S)
        ex_idx = torch.tensor([ex for ex, _, _ in rows])
        hidden = model.decode(ids, pos, allowed, memory[ex_idx], memory_pad[ex_idx])
        logits = model.heads[FORWARD](hidden[torch.arange(R), torch.tensor(anchors)])
        logits[:, banned] = -torch.inf
        logp = torch.log_softmax(logits.double(), dim=-1)
        cands = [[(-lp_score(t, lp), rank, -1, (t, lp, True)) for rank, (t, lp, done) in enumerate(beam) if done]
                 for beam in beams]
        for r, (ex, rank, t) in enumerate(rows):
            _, base, _ = beams[ex][rank]
            top = torch.topk(logp[r], min(K, logp.shape[1]))
            for lp, tok in zip(top.values.tolist(), top.indices.tolist()):
                if tok == specials["EOH"]:
                    new = (t, base + lp, True)
                else:
                    new = (t + (tok,), base + lp, len(t) + 1 >= config.max_len)
                cands[ex].append((-lp_score(new[0], new[1]), rank, tok, new))
        beams = [[c[3] for c in sorted(cs, key=lambda c: c[:3])[:K]] for cs in cands]
    results = []
    for beam in beams:
        t, lp, _ = min(beam, key=lambda b: -lp_score(b[0], b[1]))
        results.append(DecodeResult(list(t), lp_score(t, lp)))
    return results


def decode_left_to_right(model, source_ids, config: DecodeConfig, specials=DEFAULT_SPECIALS):
    res = decode_left_to_right_batch(model, [list(source_ids)], config, specials)[0]
    return res.ids, res.score
