"""Batch construction, optimization loop and validation-perplexity early stopping."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .corpus import DEFAULT_SPECIALS, Document
from .errors import ConfigurationError, TrainingError
from .model import Batch, ModelConfig, Seq2BFTransformer, event_cross_entropy, loss, save_checkpoint
from .schedule import BACKWARD, FORWARD, Strategy, build_decoder_mask, build_schedule, causal_mask

log = logging.getLogger(__name__)

# Training "methods": the four backward/forward strategies plus two left-to-right baselines.
METHODS = ("seq-b", "seq-f", "tok-b", "tok-f", "vanilla", "control-code")


def is_baseline(method: str) -> bool:
    return method in ("vanilla", "control-code")


@dataclass
class TrainConfig:
    strategy: str = "tok-b"
    batch_size: int = 32
    lr: float = 1e-3  # peak step size, reached at the end of warmup
    warmup_steps: int = 400
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    patience: int = 3
    max_epochs: int = 50
    seed: int = 0
    drop_prob: float = 0.5
    bucket_factor: int = 8

    def __post_init__(self):
        if self.strategy not in METHODS:
            raise ConfigurationError(f"unknown strategy {self.strategy!r}; expected one of {METHODS}")
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ConfigurationError("drop_prob must lie in [0, 1]")


def _pad(rows, value, dtype=torch.long):
    width = max((len(r) for r in rows), default=0)
    out = torch.full((len(rows), max(width, 1)), value, dtype=dtype)
    for i, r in enumerate(rows):
        if len(r):
            out[i, : len(r)] = torch.as_tensor(list(r), dtype=dtype)
    return out


def _collate(sources, slot_ids, slot_pos, masks, events, pad_id, schedules=()):
    """Pad per-example pieces into a :class:`Batch`.

    ``events`` holds per-example lists of (anchor slot index, head, target).
    Padded decoder slots attend only to themselves.
    """
    B = len(sources)
    src_ids = _pad(sources, pad_id)
    src_pad = _pad([[False] * len(s) for s in sources], True, torch.bool)
    dec_ids = _pad(slot_ids, pad_id)
    dec_pos = _pad(slot_pos, 0)
    S = dec_ids.shape[1]
    dec_mask = torch.eye(S, dtype=torch.bool).repeat(B, 1, 1)
    for i, m in enumerate(masks):
        n = m.shape[0]
        dec_mask[i, :n, :n] = torch.from_numpy(np.ascontiguousarray(m))
    E = max(max((len(e) for e in events), default=0), 1)
    anchors = torch.zeros(B, E, dtype=torch.long)
    heads = torch.zeros(B, E, dtype=torch.long)
    targets = torch.full((B, E), pad_id, dtype=torch.long)
    valid = torch.zeros(B, E, dtype=torch.bool)
    for i, evs in enumerate(events):
        for j, (a, h, t) in enumerate(evs):
            anchors[i, j], heads[i, j], targets[i, j], valid[i, j] = a, h, t, True
    return Batch(src_ids, src_pad, dec_ids, dec_pos, dec_mask, anchors, heads, targets, valid, list(schedules))


def _truncate(ids, max_len):
    if len(ids) > max_len:
        log.warning("article of %d tokens truncated to %d", len(ids), max_len)
        return list(ids[:max_len])
    return list(ids)


def seq2bf_example(doc: Document, strategy, specials=DEFAULT_SPECIALS):
    """Schedule, decoder mask and (anchor, head, target) events for one document."""
    schedule = build_schedule(strategy, doc.M, doc.N, doc.L)
    layout = schedule.layout
    mask = build_decoder_mask(schedule.stamps)
    events = []
    for e, anchor in zip(schedule.events, schedule.anchors):
        if e.marker:
            target = specials["BOH"] if e.direction == BACKWARD else specials["EOH"]
        else:
            target = doc.headline_ids[layout.slot_index(layout.side_position(e.direction, e.k))]
        events.append((layout.slot_index(anchor), e.direction, target))
    return schedule, mask, events


def make_seq2bf_batch(documents: Sequence[Document], strategy, specials=DEFAULT_SPECIALS,
                      max_side_len: Optional[int] = None, max_article_len: Optional[int] = None) -> Batch:
    """Teacher-forced batch: decoder slots hold the reference headline in layout order."""
    sources, slot_ids, slot_pos, masks, events, schedules = [], [], [], [], [], []
    for doc in documents:
        if max_side_len is not None and max(doc.M, doc.N) > max_side_len:
            log.warning("skipping example with sides M=%d N=%d > max_side_len=%d", doc.M, doc.N, max_side_len)
            continue
        schedule, mask, evs = seq2bf_example(doc, strategy, specials)
        src = doc.article_ids if max_article_len is None else _truncate(doc.article_ids, max_article_len)
        sources.append(src)
        slot_ids.append(doc.headline_ids)
        slot_pos.append(schedule.layout.positions)
        masks.append(mask)
        events.append(evs)
        schedules.append(schedule)
    if not sources:
        raise ConfigurationError("no usable examples in batch")
    return _collate(sources, slot_ids, slot_pos, masks, events, specials["PAD"], schedules)


def make_left_to_right_batch(sources, headlines, specials=DEFAULT_SPECIALS,
                             max_article_len: Optional[int] = None) -> Batch:
    """Causal batch: input [BOS] + headline, targets headline + [EOH], forward head."""
    slot_ids, slot_pos, masks, events = [], [], [], []
    for h in headlines:
        n = len(h) + 1
        slot_ids.append([specials["BOS"], *h])
        slot_pos.append(list(range(n)))
        masks.append(causal_mask(n))
        events.append([(i, FORWARD, t) for i, t in enumerate([*h, specials["EOH"]])])
    if max_article_len is not None:
        sources = [_truncate(s, max_article_len) for s in sources]
    return _collate(list(sources), slot_ids, slot_pos, masks, events, specials["PAD"])


def remove_phrase(article_ids, phrase_ids, drop_prob: float, rng: np.random.Generator) -> list:
    """Drop each non-overlapping occurrence of ``phrase_ids`` with probability ``drop_prob``."""
    article, phrase = list(article_ids), list(phrase_ids)
    out, i, L = [], 0, len(phrase)
    while i < len(article):
        if L and article[i:i + L] == phrase:
            if rng.random() < drop_prob:
                i += L
                continue
            out.extend(phrase)
            i += L
            continue
        out.append(article[i])
        i += 1
    return out


def control_code_source(phrase_ids, article_ids, specials=DEFAULT_SPECIALS) -> list:
    return [*phrase_ids, specials["SEP"], *article_ids]


def make_control_code_batch(documents: Sequence[Document], drop_prob: float, rng: np.random.Generator,
                            specials=DEFAULT_SPECIALS, max_article_len: Optional[int] = None) -> Batch:
    """Left-to-right batch whose source is phrase + SEP + article (phrase randomly dropped)."""
    if not 0.0 <= drop_prob <= 1.0:
        raise ConfigurationError("drop_prob must lie in [0, 1]")
    sources = []
    for doc in documents:
        article = remove_phrase(doc.article_ids, doc.phrase_ids, drop_prob, rng)
        if max_article_len is not None:
            article = _truncate(article, max(max_article_len - doc.L - 1, 1))
        sources.append(control_code_source(doc.phrase_ids, article, specials))
    return make_left_to_right_batch(sources, [d.headline_ids for d in documents], specials)


def make_batch(documents, method: str, specials=DEFAULT_SPECIALS, rng=None, drop_prob=0.0,
               max_side_len=None, max_article_len=None) -> Batch:
    if method == "vanilla":
        return make_left_to_right_batch([d.article_ids for d in documents], [d.headline_ids for d in documents],
                                        specials, max_article_len)
    if method == "control-code":
        return make_control_code_batch(documents, drop_prob, rng if rng is not None else np.random.default_rng(0),
                                       specials, max_article_len)
    return make_seq2bf_batch(documents, Strategy.parse(method), specials, max_side_len, max_article_len)


def decoder_length(doc: Document) -> int:
    return len(doc.headline_ids)


def bucketed_batches(documents, batch_size: int, rng: np.random.Generator, bucket_factor: int = 8):
    """Shuffle, sort within chunks by decoder length, cut batches, shuffle batch order."""
    order = rng.permutation(len(documents))
    chunk = batch_size * max(bucket_factor, 1)
    batches = []
    for start in range(0, len(order), chunk):
        idx = sorted(order[start:start + chunk], key=lambda i: decoder_length(documents[i]))
        batches.extend(idx[i:i + batch_size] for i in range(0, len(idx), batch_size))
    perm = rng.permutation(len(batches))
    return [[documents[i] for i in batches[p]] for p in perm]


@torch.no_grad()
def perplexity(model: Seq2BFTransformer, documents, method: str, specials=DEFAULT_SPECIALS,
               batch_size: int = 64) -> float:
    """exp of the mean per-event cross-entropy under teacher forcing (phrase kept in the source)."""
    if not documents:
        raise ConfigurationError("perplexity needs a non-empty dataset")
    was_training = model.training
    model.eval()
    total, count = 0.0, 0
    for start in range(0, len(documents), batch_size):
        chunk = documents[start:start + batch_size]
        batch = make_batch(chunk, method, specials, np.random.default_rng(0), 0.0,
                           model.cfg.max_side_len, model.cfg.max_article_len)
        ce = event_cross_entropy(model(batch), batch.targets, batch.valid)
        total += float(ce.sum())
        count += batch.n_events
    model.train(was_training)
    return math.exp(total / count)


class EarlyStopping:
    """Stop after ``patience`` consecutive epochs without a new minimum."""

    def __init__(self, patience: int = 3):
        if patience < 1:
            raise ConfigurationError("patience must be >= 1")
        self.patience = patience
        self.best = math.inf
        self.best_epoch = None
        self.bad_epochs = 0
        self.epoch = 0

    def update(self, value: float) -> bool:
        """Record one epoch's validation value; True if it is a new minimum."""
        self.epoch += 1
        if value < self.best:
            self.best, self.best_epoch, self.bad_epochs = value, self.epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def inverse_sqrt_schedule(step: int, warmup: int) -> float:
    """Multiplier on the peak step size: linear warmup, then 1/sqrt decay."""
    step = max(step, 1)
    warmup = max(warmup, 1)
    return min(step / warmup, math.sqrt(warmup / step))


@dataclass
class TrainResult:
    model: Seq2BFTransformer
    best_val_ppl: float
    best_epoch: int
    history: list = field(default_factory=list)  # (epoch, train_loss, val_ppl)
    stopped_epoch: int = 0
    diverged: bool = False


def train(train_docs: Sequence[Document], val_docs: Sequence[Document], config: TrainConfig,
          model_config: ModelConfig, specials=DEFAULT_SPECIALS, run_dir=None, vocab_hash: str = "",
          model: Optional[Seq2BFTransformer] = None) -> TrainResult:
    """Train until validation perplexity stops improving; return the best model.

    When ``run_dir`` is given, writes ``metrics.csv`` and ``best.ckpt`` there.
    """
    if not train_docs or not val_docs:
        raise ConfigurationError("train and validation sets must be non-empty")
    torch.manual_seed(config.seed)
    model = model if model is not None else Seq2BFTransformer(model_config)
    method = config.strategy
    if not is_baseline(method):
        keep = [d for d in train_docs if max(d.M, d.N) <= model_config.max_side_len]
        if len(keep) < len(train_docs):
            log.warning("skipping %d training examples longer than max_side_len", len(train_docs) - len(keep))
        train_docs = keep
        val_docs = [d for d in val_docs if max(d.M, d.N) <= model_config.max_side_len]
        if not train_docs or not val_docs:
            raise ConfigurationError("no examples fit within max_side_len")

    opt = torch.optim.Adam(model.parameters(), lr=config.lr, betas=(config.beta1, config.beta2), eps=config.eps)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: inverse_sqrt_schedule(s + 1, config.warmup_steps))
    stopper = EarlyStopping(config.patience)
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    result = TrainResult(model, math.inf, 0)

    run_dir = Path(run_dir) if run_dir is not None else None
    metrics_file = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        metrics_file = open(run_dir / "metrics.csv", "w", newline="")
        writer = csv.writer(metrics_file)
        writer.writerow(["epoch", "train_loss", "val_ppl"])

    step = 0
    try:
        for epoch in range(1, config.max_epochs + 1):
            rng = np.random.default_rng([config.seed, epoch])
            model.train()
            total, count = 0.0, 0
            for batch_id, docs in enumerate(bucketed_batches(train_docs, config.batch_size, rng,
                                                             config.bucket_factor)):
                batch = make_batch(docs, method, specials, rng, config.drop_prob,
                                   model_config.max_side_len, model_config.max_article_len)
                try:
                    value = loss(model, batch, batch_id=f"epoch {epoch} batch {batch_id}")
                except TrainingError:
                    result.diverged = True
                    raise
                opt.zero_grad()
                value.backward()
                opt.step()
                sched.step()
                step += 1
                total += value.item() * batch.n_events
                count += batch.n_events
            train_loss = total / count
            val_ppl = perplexity(model, val_docs, method, specials)
            if not math.isfinite(val_ppl):
                result.diverged = True
                raise TrainingError(f"non-finite validation perplexity at epoch {epoch}")
            result.history.append((epoch, train_loss, val_ppl))
            log.info("epoch %d train_loss %.4f val_ppl %.4f", epoch, train_loss, val_ppl)
            if metrics_file is not None:
                writer.writerow([epoch, f"{train_loss:.6f}", f"{val_ppl:.6f}"])
                metrics_file.flush()
            if stopper.update(val_ppl):
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
                if run_dir is not None:
                    model.load_state_dict(best_state)
                    save_checkpoint(run_dir / "best.ckpt", model, vocab_hash,
                                    {"strategy": method, "epoch": epoch, "val_ppl": val_ppl})
            result.stopped_epoch = epoch
            if stopper.should_stop:
                break
    except TrainingError as e:
        log.error("training aborted: %s; keeping last good checkpoint", e)
    finally:
        if metrics_file is not None:
            metrics_file.close()

    model.load_state_dict(best_state)
    model.eval()
    result.best_val_ppl = stopper.best
    result.best_epoch = stopper.best_epoch or 0
    return result


def train_config_fields() -> dict:
    return {f.name: f.default for f in dataclasses.fields(TrainConfig)}
