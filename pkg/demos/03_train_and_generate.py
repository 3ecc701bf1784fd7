"""Train a small Tok-B model on synthetic data and generate around a phrase.

Takes a few seconds on one CPU core. The phrase always appears in the
output because the decoder never generates it; it only grows the two sides.
"""

import numpy as np
import torch

from seq2bf.corpus import encode_phrase, make_documents, split_corpus, train_bpe
from seq2bf.decoding import DecodeConfig, decode_seq2bf
from seq2bf.model import ModelConfig
from seq2bf.synth import synthesize
from seq2bf.training import TrainConfig, train

torch.set_num_threads(1)
rows = synthesize(600, seed=3)
train_rows, val_rows, test_rows = split_corpus(rows, (0.8, 0.1, 0.1), seed=3)
bpe = train_bpe([r.article for r in train_rows] + [r.headline for r in train_rows], 300)
rng = np.random.default_rng(3)
train_docs, val_docs = (make_documents(part, bpe, rng) for part in (train_rows, val_rows))

model_cfg = ModelConfig(vocab_size=bpe.vocab_size, d_model=32, n_heads=2, n_enc_layers=1, n_dec_layers=1, d_ff=64,
                        max_side_len=16)
result = train(train_docs, val_docs, TrainConfig(strategy="tok-b", lr=3e-3, warmup_steps=60, max_epochs=20),
               model_cfg, bpe.specials)
print(f"best validation perplexity {result.best_val_ppl:.2f} at epoch {result.best_epoch}")

cfg = DecodeConfig(strategy="tok-b", beam_size=3, max_side_len=16)
for row in test_rows[:5]:
    ids, score = decode_seq2bf(result.model, bpe.encode(row.article), encode_phrase(bpe, row.phrase), cfg,
                               bpe.specials)
    print(f"\nphrase:    {row.phrase}\nreference: {row.headline}\ngenerated: {bpe.decode(ids).strip()}  ({score:.2f})")

# Any phrase works, even one the article never mentions.
ids, _ = decode_seq2bf(result.model, bpe.encode(test_rows[0].article), encode_phrase(bpe, "purple"), cfg, bpe.specials)
print("\nforced phrase 'purple':", bpe.decode(ids).strip())
