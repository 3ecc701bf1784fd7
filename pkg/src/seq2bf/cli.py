"""Command line: ``seq2bf {synth,train,generate,evaluate,inspect-mask}``.

Configuration is a flat JSON object with dotted keys (``"model.d_model": 64``).
Every key is also a flag (``--model.d_model 64``); flags override the file,
which overrides the defaults.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import corpus as corpus_mod
from .corpus import BpeModel, RawExample, encode_phrase, make_documents, read_jsonl, split_corpus, train_bpe
from .decoding import DecodeConfig, decode_left_to_right_batch, decode_seq2bf_batch
from .errors import ConfigurationError, DataError, Seq2BFError
from .evaluation import EvalPair, evaluate
from .model import ModelConfig, load_checkpoint, read_checkpoint_header
from .schedule import SEQ2BF_STRATEGIES, Strategy, build_decoder_mask, build_schedule, render_mask, render_schedule
from .synth import synthesize
from .training import METHODS, TrainConfig, control_code_source, is_baseline, train

log = logging.getLogger("seq2bf")


def default_config() -> dict:
    cfg = {
        "seed": 0,
        "threads": 1,
        "output": "run",
        "corpus.path": None,
        "corpus.train": None,
        "corpus.valid": None,
        "corpus.split": [0.98, 0.01, 0.01],
        "corpus.num_merges": 10000,
        "corpus.max_vocab": None,
        "corpus.phrase_min": 1,
        "corpus.phrase_max": 4,
        "corpus.phrases_per_example": 1,
    }
    for f in dataclasses.fields(ModelConfig):
        if f.name != "vocab_size":
            cfg[f"model.{f.name}"] = f.default
    for f in dataclasses.fields(TrainConfig):
        if f.name != "seed":
            cfg[f"train.{f.name}"] = f.default
    return cfg


def _parse_value(raw: str, default):
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, list):
        return [float(x) for x in raw.strip("[]").split(",")]
    if default is None:
        try:
            return json.loads(raw)
        except json.JSONDecodeError:
            return raw
    return raw


def resolve_config(config_path, overrides: dict) -> dict:
    cfg = default_config()
    if config_path:
        with open(config_path, encoding="utf-8") as f:
            file_cfg = json.load(f)
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    if cfg["train.strategy"] not in METHODS:
        raise ConfigurationError(f"unknown strategy {cfg['train.strategy']!r}")
    return cfg


def _section(cfg: dict, prefix: str) -> dict:
    return {k[len(prefix) + 1:]: v for k, v in cfg.items() if k.startswith(prefix + ".")}


def cmd_synth(args) -> int:
    rows = synthesize(args.n, args.seed)
    corpus_mod.write_jsonl(args.output, rows)
    print(f"wrote {len(rows)} examples to {args.output}")
    return 0


def cmd_train(args) -> int:
    overrides = {k: v for k, v in vars(args).items() if "." in k}
    for key in ("seed", "threads", "output"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    cfg = resolve_config(args.config, overrides)
    torch.set_num_threads(cfg["threads"])
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)

    if cfg["corpus.train"]:
        train_ex = read_jsonl(cfg["corpus.train"])
        if not cfg["corpus.valid"]:
            raise ConfigurationError("corpus.train requires corpus.valid")
        val_ex = read_jsonl(cfg["corpus.valid"])
        test_ex = []
    elif cfg["corpus.path"]:
        train_ex, val_ex, test_ex = split_corpus(read_jsonl(cfg["corpus.path"]), cfg["corpus.split"], cfg["seed"])
    else:
        raise ConfigurationError("set corpus.path or corpus.train/corpus.valid")
    for name, rows in (("train", train_ex), ("valid", val_ex), ("test", test_ex)):
        corpus_mod.write_jsonl(out / f"{name}.jsonl", rows)

    bpe = train_bpe([e.article for e in train_ex] + [e.headline for e in train_ex],
                    cfg["corpus.num_merges"], cfg["corpus.max_vocab"])
    bpe.save(out / "bpe.json")
    rng = np.random.default_rng(cfg["seed"])
    phrase_args = (cfg["corpus.phrase_min"], cfg["corpus.phrase_max"], cfg["corpus.phrases_per_example"])
    train_docs = make_documents(train_ex, bpe, rng, *phrase_args)
    val_docs = make_documents(val_ex, bpe, rng, *phrase_args)

    model_cfg = ModelConfig(vocab_size=bpe.vocab_size, **{**_section(cfg, "model"), "seed": cfg["seed"]})
    train_cfg = TrainConfig(**_section(cfg, "train"), seed=cfg["seed"])
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    result = train(train_docs, val_docs, train_cfg, model_cfg, bpe.specials, run_dir=out, vocab_hash=bpe.hash())
    print(f"best val ppl {result.best_val_ppl:.4f} at epoch {result.best_epoch}; "
          f"stopped after epoch {result.stopped_epoch}; checkpoint {out / 'best.ckpt'}")
    return 1 if result.diverged else 0


def cmd_generate(args) -> int:
    torch.set_num_threads(args.threads)
    ckpt = Path(args.checkpoint)
    header = read_checkpoint_header(ckpt)
    bpe = BpeModel.load(args.bpe or ckpt.parent / "bpe.json")
    if header["vocab_hash"] != bpe.hash():
        raise DataError(f"vocabulary hash mismatch: checkpoint expects {header['vocab_hash']}, "
                        f"{args.bpe or ckpt.parent / 'bpe.json'} has {bpe.hash()}; use the run's bpe.json")
    model, header = load_checkpoint(ckpt)
    method = args.strategy or header["extra"].get("strategy", "tok-b")
    cfg = DecodeConfig(strategy=method if not is_baseline(method) else "tok-b", beam_size=args.beam,
                       max_side_len=args.max_side_len or model.cfg.max_side_len, alpha=args.alpha,
                       max_len=args.max_len)

    rows = []
    with open(args.input, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if line.strip():
                obj = json.loads(line)
                if "article" not in obj:
                    raise DataError(f"{args.input}:{lineno}: missing 'article'")
                rows.append(obj)

    outputs = []
    for start in range(0, len(rows), args.batch):
        chunk = rows[start:start + args.batch]
        articles = [bpe.encode(r["article"]) for r in chunk]
        if method == "vanilla":
            results = decode_left_to_right_batch(model, articles, cfg, bpe.specials)
        else:
            if any(not r.get("phrase") for r in chunk):
                raise DataError(f"strategy {method} needs a 'phrase' on every input line")
            phrases = [encode_phrase(bpe, r["phrase"]) for r in chunk]
            if method == "control-code":
                sources = [control_code_source(p, a, bpe.specials) for p, a in zip(phrases, articles)]
                results = decode_left_to_right_batch(model, sources, cfg, bpe.specials)
            else:
                results = decode_seq2bf_batch(model, articles, phrases, cfg, bpe.specials)
        for res in results:
            outputs.append({"headline": bpe.decode(res.ids).strip(), "score": res.score, "strategy": method})

    with open(args.output, "w", encoding="utf-8") as f:
        for o in outputs:
            f.write(json.dumps(o, ensure_ascii=False) + "\n")
    print(f"wrote {len(outputs)} headlines to {args.output}")
    return 0


def _read_objects(path):
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def evaluate_files(ref_path, hyp_path, n_bins=20, seed=0):
    refs, hyps = _read_objects(ref_path), _read_objects(hyp_path)
    if len(refs) != len(hyps):
        raise DataError(f"line count mismatch: {len(refs)} references vs {len(hyps)} hypotheses")
    if not refs:
        raise DataError("no evaluation pairs")
    rng = np.random.default_rng(seed)
    pairs, sampled, contained = [], 0, 0
    for r, h in zip(refs, hyps):
        ref = r["headline"].split()
        phrase = r.get("phrase")
        if phrase:
            phrase_tokens = phrase.split()
        else:
            a, b = corpus_mod.sample_phrase(ref, rng)
            phrase_tokens = ref[a:b]
            sampled += 1
        pairs.append(EvalPair(ref, h["headline"].split(), phrase_tokens))
        contained += (phrase.strip() if phrase else " ".join(phrase_tokens)) in h["headline"]
    report = evaluate(pairs, n_bins)
    # Subword pieces can glue onto the phrase, so inclusion is checked on characters.
    report.success_rate = contained / len(pairs)
    if sampled:
        report.notes.append(f"{sampled} references had no phrase; success rate uses phrases sampled "
                            f"from the reference (seed {seed})")
    if report.histogram.skipped:
        report.notes.append(f"{report.histogram.skipped} pairs skipped in the histogram (phrase absent)")
    return report


def cmd_evaluate(args) -> int:
    report = evaluate_files(args.references, args.hypotheses, args.bins, args.seed)
    Path(args.output).write_text(json.dumps(report.to_dict(), indent=2))
    if args.histogram_csv:
        with open(args.histogram_csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["bin", "generated", "reference"])
            for i, (g, r) in enumerate(zip(report.histogram.generated, report.histogram.reference)):
                w.writerow([i, g, r])
    print(report.table(args.name))
    for note in report.notes:
        print("note:", note)
    return 0


def cmd_inspect_mask(args) -> int:
    strategies = SEQ2BF_STRATEGIES if args.strategy == "all" else (Strategy.parse(args.strategy),)
    for i, strategy in enumerate(strategies):
        schedule = build_schedule(strategy, args.M, args.N, args.L)
        if i:
            print()
        print(f"{strategy.value}  M={args.M} L={args.L} N={args.N}")
        print(render_mask(build_decoder_mask(schedule.stamps), sorted(schedule.stamps)))
        print(render_schedule(schedule))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seq2bf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic article/headline/phrase corpus")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model; writes config, bpe, metrics.csv, best.ckpt")
    p.add_argument("--config", help="JSON file with dotted keys")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--output", help="run directory")
    p.add_argument("--strategy", dest="train.strategy", choices=METHODS)
    for key, default in default_config().items():
        if "." in key and key != "train.strategy":
            kind = (lambda d: (lambda raw: _parse_value(raw, d)))(default)
            p.add_argument(f"--{key}", dest=key, type=kind, metavar=key.split(".")[1].upper())
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="decode headlines for JSONL {article, phrase}")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--bpe", help="BPE model (default: bpe.json next to the checkpoint)")
    p.add_argument("--strategy", choices=METHODS, help="override the strategy stored in the checkpoint")
    p.add_argument("--beam", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--max-side-len", type=int)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score hypothesis JSONL against reference JSONL")
    p.add_argument("references")
    p.add_argument("hypotheses")
    p.add_argument("--output", default="report.json")
    p.add_argument("--histogram-csv")
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--name", default="system")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect-mask", help="print decoder attention masks and event schedules")
    p.add_argument("--strategy", default="all", choices=["all", *(s.value for s in SEQ2BF_STRATEGIES)])
    # a length-5 headline with a one-token phrase in the middle
    p.add_argument("--M", type=int, default=2)
    p.add_argument("--L", type=int, default=1)
    p.add_argument("--N", type=int, default=2)
    p.set_defaults(func=cmd_inspect_mask)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (Seq2BFError, OSError, ValueError, KeyError) as e:
        print(f"seq2bf: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
