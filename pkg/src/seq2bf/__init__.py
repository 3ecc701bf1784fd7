"""Headline generation outward from a mandatory phrase with an encoder-decoder Transformer."""

from .corpus import (BpeModel, Document, RawExample, decode_tokens, encode, encode_phrase, make_documents, sample_phrase,
                     split_corpus, train_bpe)
from .decoding import DecodeConfig, decode_left_to_right, decode_seq2bf
from .evaluation import ald, evaluate, phrase_position_histogram, rouge_l, rouge_n, success_rate
from .model import ModelConfig, Seq2BFTransformer
from .schedule import Strategy, assign_positions, build_decoder_mask, build_schedule, order_stamps, read_anchor
from .training import TrainConfig, make_control_code_batch, make_seq2bf_batch, perplexity, train
from .synth import synthesize

__version__ = "0.1.0"
