"""From raw text to training documents.

Synthesizes a few article/headline pairs, learns a small BPE vocabulary and
shows how a headline splits into backward side, phrase and forward side.
"""

import numpy as np

from seq2bf.corpus import encode_phrase, make_documents, train_bpe
from seq2bf.synth import synthesize

rows = synthesize(200, seed=0)
bpe = train_bpe([r.article for r in rows] + [r.headline for r in rows], num_merges=300)
print(f"vocabulary: {bpe.vocab_size} entries ({bpe.n_specials} specials), hash {bpe.hash()}")

example = rows[0]
print("\narticle: ", example.article)
print("headline:", example.headline)
print("phrase:  ", example.phrase)
print("pieces:  ", [bpe.vocab[i] for i in bpe.encode(example.headline)])
print("phrase pieces:", [bpe.vocab[i] for i in encode_phrase(bpe, example.phrase)])

doc = make_documents([example], bpe, np.random.default_rng(0))[0]
show = lambda ids: [bpe.vocab[i] for i in ids]
print(f"\nM={doc.M} L={doc.L} N={doc.N}")
print("backward (nearest first):", show(doc.backward_ids))
print("phrase:                  ", show(doc.phrase_ids))
print("forward:                 ", show(doc.forward_ids))
