"""Encoder-decoder Transformer with signed decoder positions and two output heads.

The decoder takes an arbitrary boolean self-attention mask, so the same
network serves the four backward/forward strategies and the left-to-right
baselines. Predictions are read per *event*: the hidden state of the event's
anchor slot goes through the backward or forward head.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, DataError, TrainingError

CHECKPOINT_MAGIC = b"S2BFCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    d_ff: int = 256
    dropout_rate: float = 0.1
    max_article_len: int = 256
    max_side_len: int = 32
    label_smoothing: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigurationError("d_model must be divisible by n_heads")
        for name in ("vocab_size", "d_model", "n_heads", "n_enc_layers", "n_dec_layers", "d_ff",
                     "max_article_len", "max_side_len"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class Batch:
    """Padded tensors for one optimization or evaluation step.

    Decoder slots are in ascending signed-position order, i.e. the headline
    read left to right. Events index into slots via ``anchors``; ``heads``
    selects the backward (0) or forward (1) head; ``valid`` masks padding.
    """

    src_ids: torch.Tensor  # (B, S_src) long
    src_pad: torch.Tensor  # (B, S_src) bool, True at padding
    dec_ids: torch.Tensor  # (B, S) long
    dec_pos: torch.Tensor  # (B, S) long signed positions
    dec_mask: torch.Tensor  # (B, S, S) bool, True where attention is allowed
    anchors: torch.Tensor  # (B, E) long slot index
    heads: torch.Tensor  # (B, E) long
    targets: torch.Tensor  # (B, E) long
    valid: torch.Tensor  # (B, E) bool
    schedules: list = dataclasses.field(default_factory=list)

    def __len__(self):
        return self.src_ids.shape[0]

    @property
    def n_events(self) -> int:
        return int(self.valid.sum())


def positional_encoding(positions, d_model: int, dtype=torch.float32) -> torch.Tensor:
    """Sinusoidal encoding of (possibly negative) integer positions.

    Even components are sines, odd components cosines, so the encoding of
    ``-p`` flips the sines of ``p`` and keeps the cosines.
    """
    pos = torch.as_tensor(positions, dtype=torch.float64)
    i = torch.arange(0, d_model, 2, dtype=torch.float64)
    freq = torch.exp(-math.log(10000.0) * i / d_model)
    angles = pos.unsqueeze(-1) * freq
    pe = torch.zeros(*pos.shape, d_model, dtype=torch.float64)
    pe[..., 0::2] = torch.sin(angles)
    pe[..., 1::2] = torch.cos(angles)[..., : d_model // 2]
    return pe.to(dtype)


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model, n_heads, dropout):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, memory, allowed):
        # allowed: (B, Sq, Sk) bool, True where attention is permitted
        B, Sq, _ = x.shape
        Sk = memory.shape[1]
        split = lambda t, S: t.view(B, S, self.n_heads, self.d_head).transpose(1, 2)
        q = split(self.q_proj(x), Sq)
        k = split(self.k_proj(memory), Sk)
        v = split(self.v_proj(memory), Sk)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        scores = scores.masked_fill(~allowed.unsqueeze(1), float("-inf"))
        attn = self.dropout(torch.softmax(scores, dim=-1))
        out = (attn @ v).transpose(1, 2).reshape(B, Sq, -1)
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, d_model, d_ff, dropout):
        super().__init__()
        self.lin1 = nn.Linear(d_model, d_ff)
        self.lin2 = nn.Linear(d_ff, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x):
        return self.lin2(self.dropout(F.relu(self.lin1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout_rate)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout_rate)
        self.dropout = nn.Dropout(cfg.dropout_rate)

    def forward(self, x, allowed):
        h = self.norm1(x)
        x = x + self.dropout(self.self_attn(h, h, allowed))
        return x + self.dropout(self.ff(self.norm2(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout_rate)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout_rate)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff, cfg.dropout_rate)
        self.dropout = nn.Dropout(cfg.dropout_rate)

    def forward(self, x, self_allowed, memory, cross_allowed):
        h = self.norm1(x)
        x = x + self.dropout(self.self_attn(h, h, self_allowed))
        x = x + self.dropout(self.cross_attn(self.norm2(x), memory, cross_allowed))
        return x + self.dropout(self.ff(self.norm3(x)))


class Seq2BFTransformer(nn.Module):
    """Shared-embedding encoder-decoder with separate backward and forward heads."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.encoder = nn.ModuleList([EncoderLayer(cfg) for _ in range(cfg.n_enc_layers)])
        self.enc_norm = nn.LayerNorm(cfg.d_model)
        self.decoder = nn.ModuleList([DecoderLayer(cfg) for _ in range(cfg.n_dec_layers)])
        self.dec_norm = nn.LayerNorm(cfg.d_model)
        self.heads = nn.ModuleList([nn.Linear(cfg.d_model, cfg.vocab_size) for _ in range(2)])
        self.emb_dropout = nn.Dropout(cfg.dropout_rate)
        self.reset_parameters(cfg.seed)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for name, p in self.named_parameters():
            if p.dim() >= 2:
                nn.init.xavier_uniform_(p, generator=gen)
            elif "norm" in name and name.endswith("weight"):
                nn.init.ones_(p)
            else:
                nn.init.zeros_(p)

    @property
    def dtype(self):
        return self.embed.weight.dtype

    def _inputs(self, ids, positions):
        x = self.embed(ids) * math.sqrt(self.cfg.d_model)
        return self.emb_dropout(x + positional_encoding(positions, self.cfg.d_model, self.dtype))

    def encode(self, src_ids, src_pad):
        """``src_pad`` is True at padding. Returns (B, S, d_model) memory."""
        S = src_ids.shape[1]
        x = self._inputs(src_ids, torch.arange(S).expand_as(src_ids))
        allowed = (~src_pad).unsqueeze(1).expand(-1, S, -1)
        for layer in self.encoder:
            x = layer(x, allowed)
        return self.enc_norm(x)

    def decode(self, slot_ids, positions, allowed, memory, memory_pad):
        """Decoder hidden states; ``allowed`` is the (B, S, S) self-attention mask."""
        if allowed.shape[-1] != slot_ids.shape[1] or allowed.shape[-2] != slot_ids.shape[1]:
            raise DataError(f"mask shape {tuple(allowed.shape)} does not match {slot_ids.shape[1]} slots")
        x = self._inputs(slot_ids, positions)
        cross = (~memory_pad).unsqueeze(1).expand(-1, slot_ids.shape[1], -1)
        for layer in self.decoder:
            x = layer(x, allowed, memory, cross)
        return self.dec_norm(x)

    def head_logits(self, direction: int, hidden):
        return self.heads[direction](hidden)

    def event_logits(self, hidden, anchors, heads):
        """Logits per event: anchor hidden state through the selected head -> (B, E, V)."""
        h = torch.gather(hidden, 1, anchors.unsqueeze(-1).expand(-1, -1, hidden.shape[-1]))
        back = self.heads[0](h)
        fwd = self.heads[1](h)
        return torch.where(heads.unsqueeze(-1) == 0, back, fwd)

    def forward(self, batch):
        memory = self.encode(batch.src_ids, batch.src_pad)
        hidden = self.decode(batch.dec_ids, batch.dec_pos, batch.dec_mask, memory, batch.src_pad)
        return self.event_logits(hidden, batch.anchors, batch.heads)


def event_cross_entropy(logits, targets, valid, label_smoothing=0.0):
    """Per-event cross-entropy, zeroed where ``valid`` is False."""
    ce = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1),
                         reduction="none", label_smoothing=label_smoothing).view(targets.shape)
    return ce * valid.to(ce.dtype)


def loss(model: Seq2BFTransformer, batch, batch_id=None, label_smoothing: Optional[float] = None):
    """Mean cross-entropy over the batch's valid events (markers included)."""
    ls = model.cfg.label_smoothing if label_smoothing is None else label_smoothing
    ce = event_cross_entropy(model(batch), batch.targets, batch.valid, ls)
    value = ce.sum() / batch.valid.sum().clamp(min=1)
    if not torch.isfinite(value):
        raise TrainingError("non-finite loss", batch_id)
    return value


def grad(model: Seq2BFTransformer, batch) -> dict:
    """Reverse-mode gradients of :func:`loss` for every named parameter."""
    params = dict(model.named_parameters())
    value = loss(model, batch)
    grads = torch.autograd.grad(value, list(params.values()), allow_unused=True)
    return {n: torch.zeros_like(p) if g is None else g for (n, p), g in zip(params.items(), grads)}


def save_checkpoint(path, model: Seq2BFTransformer, vocab_hash: str, extra: Optional[dict] = None) -> None:
    """Write JSON header + raw little-endian float32 tensors in manifest order."""
    state = model.state_dict()
    manifest = [{"name": k, "shape": list(v.shape)} for k, v in state.items()]
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "vocab_hash": vocab_hash,
        "tensors": manifest,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for v in state.values():
            f.write(v.detach().cpu().numpy().astype("<f4").tobytes())


def read_checkpoint_header(path) -> dict:
    with open(path, "rb") as f:
        if f.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise DataError(f"{path} is not a checkpoint file")
        (n,) = struct.unpack("<Q", f.read(8))
        return json.loads(f.read(n).decode("utf-8"))


def load_checkpoint(path) -> tuple[Seq2BFTransformer, dict]:
    path = Path(path)
    with open(path, "rb") as f:
        if f.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise DataError(f"{path} is not a checkpoint file")
        (n,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(n).decode("utf-8"))
        if header.get("format_version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {header.get('format_version')}")
        model = Seq2BFTransformer(ModelConfig(**header["config"]))
        state = {}
        for entry in header["tensors"]:
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            raw = f.read(4 * count)
            if len(raw) != 4 * count:
                raise DataError(f"{path}: truncated tensor data for {entry['name']}")
            state[entry["name"]] = torch.from_numpy(np.frombuffer(raw, dtype="<f4").astype(np.float32)
                                                    .reshape(entry["shape"]))
    model.load_state_dict(state)
    model.eval()
    return model, header
