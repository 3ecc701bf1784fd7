"""ROUGE-1/2/L, success rate, average length difference and phrase-position histograms."""

from __future__ import annotations

import collections
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class EvalPair:
    reference: tuple
    hypothesis: tuple
    phrase: tuple = ()

    def __post_init__(self):
        if not self.reference:
            raise ValueError("reference must be non-empty")
        object.__setattr__(self, "reference", tuple(self.reference))
        object.__setattr__(self, "hypothesis", tuple(self.hypothesis))
        object.__setattr__(self, "phrase", tuple(self.phrase))


def _prf(overlap: float, hyp_total: int, ref_total: int):
    p = overlap / hyp_total if hyp_total else 0.0
    r = overlap / ref_total if ref_total else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def ngrams(tokens: Sequence, n: int) -> collections.Counter:
    return collections.Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(reference: Sequence, hypothesis: Sequence, n: int):
    """Clipped n-gram precision, recall and F."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ref, hyp = ngrams(reference, n), ngrams(hypothesis, n)
    overlap = sum((ref & hyp).values())
    return _prf(overlap, sum(hyp.values()), sum(ref.values()))


def lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(reference: Sequence, hypothesis: Sequence):
    return _prf(lcs_length(reference, hypothesis), len(hypothesis), len(reference))


def find_sublist(seq: Sequence, sub: Sequence) -> int:
    """Index of the first contiguous occurrence of ``sub`` in ``seq``, or -1."""
    seq, sub = list(seq), list(sub)
    if not sub:
        return 0
    for i in range(len(seq) - len(sub) + 1):
        if seq[i:i + len(sub)] == sub:
            return i
    return -1


def success_rate(pairs: Sequence[EvalPair]) -> float:
    if not pairs:
        raise ValueError("success_rate needs at least one pair")
    return sum(find_sublist(p.hypothesis, p.phrase) >= 0 for p in pairs) / len(pairs)


def ald(pairs: Sequence[EvalPair]) -> float:
    """Mean of (generated length - reference length)."""
    if not pairs:
        raise ValueError("ald needs at least one pair")
    return float(np.mean([len(p.hypothesis) - len(p.reference) for p in pairs]))


@dataclass
class Histogram:
    n_bins: int
    generated: list
    reference: list
    skipped: int = 0

    def first_bins_mass(self, which: str, n: int) -> float:
        counts = np.asarray(getattr(self, which), dtype=float)
        return float(counts[:n].sum() / counts.sum()) if counts.sum() else 0.0


def position_bin(tokens: Sequence, phrase: Sequence, n_bins: int) -> Optional[int]:
    start = find_sublist(tokens, phrase)
    if start < 0 or not tokens:
        return None
    return min(int(n_bins * start / len(tokens)), n_bins - 1)


def phrase_position_histogram(pairs: Sequence[EvalPair], n_bins: int = 20) -> Histogram:
    """Token-level start offset of the phrase, normalized by headline length and binned."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    gen, ref = [0] * n_bins, [0] * n_bins
    skipped = 0
    for p in pairs:
        g = position_bin(p.hypothesis, p.phrase, n_bins)
        r = position_bin(p.reference, p.phrase, n_bins)
        if g is None or r is None:
            skipped += 1
            continue
        gen[g] += 1
        ref[r] += 1
    return Histogram(n_bins, gen, ref, skipped)


def strip_phrase(tokens: Sequence, phrase: Sequence) -> list:
    i = find_sublist(tokens, phrase)
    if i < 0 or not phrase:
        return list(tokens)
    return list(tokens[:i]) + list(tokens[i + len(phrase):])


@dataclass
class EvalReport:
    rouge1: tuple
    rouge2: tuple
    rougeL: tuple
    success_rate: float
    ald: float
    histogram: Histogram
    n: int
    rouge_without_phrase: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "rouge1": dict(zip("prf", self.rouge1)),
            "rouge2": dict(zip("prf", self.rouge2)),
            "rougeL": dict(zip("prf", self.rougeL)),
            "success_rate": self.success_rate,
            "ald": self.ald,
            "histogram": {"n_bins": self.histogram.n_bins, "generated": self.histogram.generated,
                          "reference": self.histogram.reference, "skipped": self.histogram.skipped},
            "rouge_without_phrase": {k: dict(zip("prf", v)) for k, v in self.rouge_without_phrase.items()},
            "notes": self.notes,
        }

    def table(self, name: str = "system") -> str:
        fmt = lambda t: "/".join(f"{100 * x:.1f}" for x in t)
        head = f"{'':<16}{'SR':>7}  {'ROUGE-1 P/R/F':>16}  {'ROUGE-2 P/R/F':>16}  {'ROUGE-L P/R/F':>16}  {'ALD':>7}"
        row = (f"{name:<16}{100 * self.success_rate:>7.1f}  {fmt(self.rouge1):>16}  {fmt(self.rouge2):>16}  "
               f"{fmt(self.rougeL):>16}  {self.ald:>7.2f}")
        return head + "\n" + row


def _macro(scores):
    return tuple(float(x) for x in np.mean(np.asarray(scores, dtype=float), axis=0)) if scores else (0.0, 0.0, 0.0)


def evaluate(pairs: Sequence[EvalPair], n_bins: int = 20) -> EvalReport:
    """Per-pair P/R/F macro-averaged over pairs, plus SR, ALD and the position histogram."""
    if not pairs:
        raise ValueError("evaluate needs at least one pair")
    r1 = [rouge_n(p.reference, p.hypothesis, 1) for p in pairs]
    r2 = [rouge_n(p.reference, p.hypothesis, 2) for p in pairs]
    rl = [rouge_l(p.reference, p.hypothesis) for p in pairs]
    stripped = [(strip_phrase(p.reference, p.phrase), strip_phrase(p.hypothesis, p.phrase)) for p in pairs]
    without = {
        "rouge1": _macro([rouge_n(r, h, 1) for r, h in stripped]),
        "rouge2": _macro([rouge_n(r, h, 2) for r, h in stripped]),
        "rougeL": _macro([rouge_l(r, h) for r, h in stripped]),
    }
    return EvalReport(_macro(r1), _macro(r2), _macro(rl), success_rate(pairs), ald(pairs),
                      phrase_position_histogram(pairs, n_bins), len(pairs), without)
