"""Corpus handling: BPE tokenization, phrase sampling and dataset splits.

Pre-tokenization splits text into words that keep their trailing whitespace
(``"xy xz"`` -> ``["xy ", "xz"]``), so decoding is plain concatenation and
round-trips exactly for any string over the training alphabet.
"""

from __future__ import annotations

import collections
import functools
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DataError

PRETOKEN_RE = re.compile(r"\S+\s*|\s+")

SPECIAL_NAMES = ("PAD", "UNK", "BOS", "BOH", "EOH", "SEP")
DEFAULT_SPECIALS = {name: i for i, name in enumerate(SPECIAL_NAMES)}


def pretokenize(text: str) -> list[str]:
    return PRETOKEN_RE.findall(text)


@dataclass(frozen=True)
class RawExample:
    article: str
    headline: str
    phrase: Optional[str] = None

    def __post_init__(self):
        if not self.article or not self.headline:
            raise DataError("article and headline must be non-empty")
        if self.phrase is not None:
            if not self.phrase.strip():
                raise DataError("phrase must be non-empty when given")
            if self.phrase not in self.headline:
                raise DataError(f"phrase {self.phrase!r} does not occur in headline {self.headline!r}")


@dataclass(frozen=True)
class BpeModel:
    """Learned merges plus vocabulary.

    Ids ``0..5`` are the specials (PAD, UNK, BOS, BOH, EOH, SEP); learned
    tokens (alphabet symbols, then merge products in learning order) follow.
    """

    merges: tuple[tuple[str, str], ...]
    tokens: tuple[str, ...]
    specials: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_SPECIALS))

    def __post_init__(self):
        ids = list(self.specials.values())
        if len(set(ids)) != len(ids):
            raise DataError("special ids must be distinct")
        if any(i >= self.n_specials for i in ids):
            raise DataError("special ids must precede learned token ids")
        object.__setattr__(self, "_token_to_id", {t: i + self.n_specials for i, t in enumerate(self.tokens)})
        object.__setattr__(self, "_ranks", {pair: r for r, pair in enumerate(self.merges)})

    @property
    def n_specials(self) -> int:
        return len(self.specials)

    @property
    def vocab_size(self) -> int:
        return self.n_specials + len(self.tokens)

    @property
    def vocab(self) -> list[str]:
        names = {i: n for n, i in self.specials.items()}
        return [f"<{names[i].lower()}>" for i in range(self.n_specials)] + list(self.tokens)

    pad_id = property(lambda self: self.specials["PAD"])
    unk_id = property(lambda self: self.specials["UNK"])
    bos_id = property(lambda self: self.specials["BOS"])
    boh_id = property(lambda self: self.specials["BOH"])
    eoh_id = property(lambda self: self.specials["EOH"])
    sep_id = property(lambda self: self.specials["SEP"])

    def is_special(self, idx: int) -> bool:
        return 0 <= idx < self.n_specials

    def token_id(self, token: str) -> int:
        return self._token_to_id.get(token, self.unk_id)

    def _segment(self, word: str) -> tuple[str, ...]:
        return _segment_cached(self, word)

    def encode(self, text: str) -> list[int]:
        ids = []
        for word in pretokenize(text):
            ids.extend(self.token_id(t) for t in self._segment(word))
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        out = []
        for i in ids:
            i = int(i)
            if i < 0 or i >= self.vocab_size:
                raise DataError(f"token id {i} out of range for vocab of size {self.vocab_size}")
            if i >= self.n_specials:
                out.append(self.tokens[i - self.n_specials])
        return "".join(out)

    def hash(self) -> str:
        return vocab_hash(self)

    def to_json(self) -> dict:
        return {"merges": [list(m) for m in self.merges], "vocab": self.vocab, "specials": dict(self.specials)}

    @classmethod
    def from_json(cls, obj: dict) -> "BpeModel":
        specials = {str(k): int(v) for k, v in obj["specials"].items()}
        n = len(specials)
        return cls(merges=tuple(tuple(m) for m in obj["merges"]), tokens=tuple(obj["vocab"][n:]), specials=specials)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "BpeModel":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def __hash__(self):
        return hash((self.merges, self.tokens))

    def __eq__(self, other):
        return isinstance(other, BpeModel) and (self.merges, self.tokens, self.specials) == (
            other.merges, other.tokens, other.specials)


@functools.lru_cache(maxsize=1 << 16)
def _segment_cached(model: BpeModel, word: str) -> tuple[str, ...]:
    symbols = list(word)
    ranks = model._ranks
    while len(symbols) > 1:
        best = None
        for i in range(len(symbols) - 1):
            r = ranks.get((symbols[i], symbols[i + 1]))
            if r is not None and (best is None or r < best[0]):
                best = (r, i)
        if best is None:
            break
        a, b = model.merges[best[0]]
        merged = []
        i = 0
        while i < len(symbols):
            if i < len(symbols) - 1 and symbols[i] == a and symbols[i + 1] == b:
                merged.append(a + b)
                i += 2
            else:
                merged.append(symbols[i])
                i += 1
        symbols = merged
    return tuple(symbols)


def vocab_hash(model: BpeModel) -> str:
    blob = json.dumps(model.to_json(), ensure_ascii=False, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def train_bpe(corpus: Sequence[str], num_merges: int, max_vocab: Optional[int] = None) -> BpeModel:
    """Learn up to ``num_merges`` merges; ties on pair count go to the smaller pair."""
    if not corpus:
        raise ConfigurationError("cannot train BPE on an empty corpus")
    if num_merges < 0:
        raise ConfigurationError("num_merges must be >= 0")

    word_counts = collections.Counter()
    for text in corpus:
        word_counts.update(pretokenize(text))
    words = {tuple(w): c for w, c in word_counts.items()}
    alphabet = sorted({ch for w in words for ch in w})
    tokens = list(alphabet)
    merges = []

    budget = num_merges
    if max_vocab is not None:
        budget = min(budget, max_vocab - len(SPECIAL_NAMES) - len(alphabet))
    for _ in range(max(budget, 0)):
        pairs = collections.Counter()
        for w, c in words.items():
            for pair in zip(w, w[1:]):
                pairs[pair] += c
        if not pairs:
            break
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))
        if best[1] < 2:
            break
        a, b = best[0]
        merges.append((a, b))
        tokens.append(a + b)
        new_words = {}
        for w, c in words.items():
            if len(w) < 2:
                new_words[w] = new_words.get(w, 0) + c
                continue
            out = []
            i = 0
            while i < len(w):
                if i < len(w) - 1 and w[i] == a and w[i + 1] == b:
                    out.append(a + b)
                    i += 2
                else:
                    out.append(w[i])
                    i += 1
            key = tuple(out)
            new_words[key] = new_words.get(key, 0) + c
        words = new_words

    # A merge product can coincide with an alphabet symbol or an earlier product.
    seen = set()
    unique = [t for t in tokens if not (t in seen or seen.add(t))]
    return BpeModel(merges=tuple(merges), tokens=tuple(unique))


def encode(model: BpeModel, text: str) -> list[int]:
    return model.encode(text)


def decode_tokens(model: BpeModel, ids: Iterable[int]) -> str:
    return model.decode(ids)


def encode_phrase(model: BpeModel, phrase: str) -> list[int]:
    """Encode a free-standing phrase the way it is tokenized inside a headline.

    Inside running text a word carries its trailing space, so the phrase is
    encoded with one appended; callers strip trailing whitespace from output.
    """
    phrase = phrase.strip()
    if not phrase:
        raise DataError("phrase must be non-empty")
    return model.encode(phrase + " ")


@dataclass(frozen=True)
class Document:
    article_ids: tuple[int, ...]
    headline_ids: tuple[int, ...]
    phrase_span: tuple[int, int]

    def __post_init__(self):
        a, b = self.phrase_span
        if not (0 <= a < b <= len(self.headline_ids)):
            raise DataError(f"invalid phrase span {self.phrase_span} for headline of length {len(self.headline_ids)}")

    @property
    def M(self) -> int:
        return self.phrase_span[0]

    @property
    def L(self) -> int:
        return self.phrase_span[1] - self.phrase_span[0]

    @property
    def N(self) -> int:
        return len(self.headline_ids) - self.phrase_span[1]

    @property
    def phrase_ids(self) -> tuple[int, ...]:
        return self.headline_ids[self.phrase_span[0]:self.phrase_span[1]]

    @property
    def backward_ids(self) -> tuple[int, ...]:
        """Backward side, ordered outward from the phrase (nearest first)."""
        return tuple(reversed(self.headline_ids[:self.phrase_span[0]]))

    @property
    def forward_ids(self) -> tuple[int, ...]:
        return self.headline_ids[self.phrase_span[1]:]


def sample_phrase(headline_ids: Sequence[int], rng: np.random.Generator, min_len: int = 1,
                  max_len: int = 4) -> tuple[int, int]:
    n = len(headline_ids)
    if n < 1:
        raise DataError("cannot sample a phrase from an empty headline")
    if not 1 <= min_len <= max_len:
        raise ConfigurationError("need 1 <= min_len <= max_len")
    hi = min(max_len, n)
    lo = min(min_len, hi)
    length = int(rng.integers(lo, hi + 1))
    start = int(rng.integers(0, n - length + 1))
    return start, start + length


def locate_phrase(model: BpeModel, headline: str, phrase: str) -> tuple[list[int], tuple[int, int]]:
    """Tokenize ``headline`` and return the smallest token span covering ``phrase``."""
    start = headline.find(phrase)
    if start < 0:
        raise DataError(f"phrase {phrase!r} not in headline {headline!r}")
    end = start + len(phrase)
    ids, offsets = [], []
    pos = 0
    for word in pretokenize(headline):
        for tok in model._segment(word):
            ids.append(model.token_id(tok))
            offsets.append((pos, pos + len(tok)))
            pos += len(tok)
    a = max(i for i, (s, _) in enumerate(offsets) if s <= start)
    b = min(i for i, (_, e) in enumerate(offsets) if e >= end) + 1
    return ids, (a, b)


def make_documents(examples: Sequence[RawExample], model: BpeModel, rng: np.random.Generator,
                   min_len: int = 1, max_len: int = 4, phrases_per_example: int = 1) -> list[Document]:
    """Tokenize examples; given phrases are located, missing ones sampled."""
    docs = []
    for ex in examples:
        article = tuple(model.encode(ex.article))
        if ex.phrase is not None:
            ids, span = locate_phrase(model, ex.headline, ex.phrase)
            docs.append(Document(article, tuple(ids), span))
            continue
        headline = tuple(model.encode(ex.headline))
        for _ in range(phrases_per_example):
            docs.append(Document(article, headline, sample_phrase(headline, rng, min_len, max_len)))
    return docs


def split_corpus(examples: Sequence, ratios=(0.98, 0.01, 0.01), seed: int = 0):
    ratios = np.asarray(ratios, dtype=float)
    if ratios.shape != (3,) or np.any(ratios <= 0):
        raise ConfigurationError("ratios must be three positive numbers")
    ratios = ratios / ratios.sum()
    n = len(examples)
    if n < 3:
        raise ConfigurationError(f"need at least 3 examples to split, got {n}")
    n_val = max(1, int(round(n * ratios[1])))
    n_test = max(1, int(round(n * ratios[2])))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise ConfigurationError(f"{n} examples are too few for ratios {tuple(ratios)}")
    order = np.random.default_rng(seed).permutation(n)
    pick = lambda idx: [examples[i] for i in idx]
    return pick(order[:n_train]), pick(order[n_train:n_train + n_val]), pick(order[n_train + n_val:])


def read_jsonl(path) -> list[RawExample]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(RawExample(obj["article"], obj["headline"], obj.get("phrase")))
            except (KeyError, json.JSONDecodeError) as e:
                raise DataError(f"{path}:{lineno}: {e}") from e
    return out


def write_jsonl(path, rows: Iterable) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            if isinstance(row, RawExample):
                row = {k: v for k, v in (("article", row.article), ("headline", row.headline),
                                         ("phrase", row.phrase)) if v is not None}
            f.write(json.dumps(row, ensure_ascii=False) + "\n")
