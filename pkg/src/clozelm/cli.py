"""Command line entry point: ``clozelm <subcommand> ...``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or numeric error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from . import data_io
from .config import CONFIG_ENV, RunConfig, load_config
from .decode import beam_search, sample_lr
from .errors import ClozeLMError, DataError
from .finetune import (ClassifierHead, Mode, SpanHead, classify_pack, train_classifier,
                       train_seq2seq, train_span)
from .masks import LMObjective, Objective, build_mask
from .metrics import METRICS, corpus_score
from .model import component_counts, read_checkpoint, save_checkpoint
from .pretrain import Corpus, pretrain_loop
from .tokenizer import EOS, Vocab, build_vocab, decode, encode

logger = logging.getLogger("clozelm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _config(path: Optional[str]) -> RunConfig:
    try:
        return load_config(path)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _replace(obj, **changes):
    changes = {k: v for k, v in changes.items() if v is not None}
    try:
        return dataclasses.replace(obj, **changes)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _checkpoint_vocab(ckpt, path) -> Vocab:
    tokens = ckpt.meta.get("vocab")
    if tokens is None:
        raise DataError(f"{path}: checkpoint carries no vocabulary")
    return Vocab(tokens)


def _write_lines(lines: Sequence[str], out: Optional[str]) -> None:
    text = "".join(line + "\n" for line in lines)
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _fit_pair(src: List[int], tgt: List[int], max_len: int, max_src_len: Optional[int]):
    """Trim source first, then target, so that ⟨SOS⟩ src ⟨EOS⟩ tgt ⟨EOS⟩ fits."""
    if max_src_len is not None:
        src = src[:max_src_len]
    room = max_len - 3
    if len(src) + len(tgt) > room:
        src = src[:max(1, room - len(tgt))]
        tgt = tgt[:room - len(src)]
    return src, tgt


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_build_vocab(args) -> int:
    vocab = build_vocab(data_io.read_lines(args.corpus), args.size)
    vocab.save(args.out)
    logger.info("wrote %d entries to %s", len(vocab), args.out)
    return 0


def cmd_pretrain(args) -> int:
    cfg = _config(args.config)
    vocab = Vocab.load(args.vocab)
    corpus = Corpus.from_lines(data_io.read_lines(args.corpus), vocab)
    model_cfg = _replace(cfg.model, vocab_size=len(vocab))
    settings = _replace(cfg.pretrain, batch_size=args.batch_size)
    opt = cfg.optimizer
    if opt.total_steps != args.steps:
        opt = _replace(opt, total_steps=args.steps, warmup_steps=min(opt.warmup_steps, args.steps))
    res = pretrain_loop(corpus, vocab, model_cfg, opt, args.steps, seed=args.seed, out_dir=args.out,
                        policy=cfg.corruption, schedule=cfg.mix, settings=settings, resume=not args.no_resume)
    if res.history:
        logger.info("step %d loss %.4f", res.history[-1]["step"], res.history[-1]["loss"])
    print(res.checkpoint)
    return 0


def cmd_finetune(args) -> int:
    cfg = _config(args.config)
    ft = _replace(cfg.finetune, mode=Mode(args.mode), steps=args.steps, lr=args.lr, batch_size=args.batch_size,
                  dropout=args.dropout, target_mask_prob=args.mask_prob, label_smoothing=args.label_smoothing)
    ckpt = read_checkpoint(args.init)
    vocab = _checkpoint_vocab(ckpt, args.init)
    params, model_cfg = ckpt.params, ckpt.config
    max_len = model_cfg.max_len
    meta = {"mode": ft.mode.value, "vocab": vocab.id_to_token, "seed": args.seed, "finetune": ft.to_dict()}
    head = None

    if ft.mode is Mode.SEQ2SEQ:
        pairs = []
        for src, tgt in data_io.read_seq2seq_tsv(args.train):
            s, t = encode(vocab, src).ids, encode(vocab, tgt).ids
            if not s or not t:
                raise DataError(f"{args.train}: empty source or target after encoding")
            pairs.append(_fit_pair(s, t, max_len, args.max_src_len))
        losses = train_seq2seq(params, pairs, ft, seed=args.seed)
    elif ft.mode is Mode.CLASSIFY:
        texts, labels = data_io.read_classify_tsv(args.train)
        names = sorted(set(labels))
        if len(names) < 2:
            raise DataError(f"{args.train}: need at least two distinct labels")
        ft = _replace(ft, n_classes=len(names))
        inputs = [classify_pack(encode(vocab, t).ids[:max_len - 3]) for t in texts]
        head = ClassifierHead.init(model_cfg.d_model, len(names), seed=args.seed)
        losses = train_classifier(params, head, inputs, [names.index(x) for x in labels], ft, seed=args.seed)
        meta["labels"] = names
    else:
        examples = []
        for rec in data_io.read_span_jsonl(args.train):
            ex, _ = data_io.encode_span_record(vocab, rec["passage"], rec["question"],
                                               (rec["answer_start"], rec["answer_end"]))
            if len(ex.packed) > max_len:
                raise DataError(f"{args.train}: passage plus question of {len(ex.packed)} tokens "
                                f"exceeds max_len {max_len}")
            examples.append(ex)
        head = SpanHead.init(model_cfg.d_model, seed=args.seed)
        losses = train_span(params, head, examples, ft, seed=args.seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        for step, loss in enumerate(losses, 1):
            fh.write(json.dumps({"step": step, "loss": loss}) + "\n")
    extras = {k: t.data for k, t in head.tensors().items()} if head is not None else {}
    path = out / "model.ckpt"
    save_checkpoint(params, model_cfg, path, meta=meta, extras=extras)
    print(path)
    return 0


def cmd_generate(args) -> int:
    cfg = _config(args.config)
    dc = _replace(cfg.decode, beam_size=args.beam, top_k=args.topk, max_out_len=args.max_len)
    if args.block_ngram is not None:
        if args.block_ngram == 1 or args.block_ngram < 0:
            raise UsageError("--block-ngram must be 0 (off) or >= 2")
        dc = dataclasses.replace(dc, block_ngram=args.block_ngram or None)
    elif args.mode == "sample" and args.config is None:
        dc = _replace(dc, block_ngram=4)
    ckpt = read_checkpoint(args.checkpoint)
    vocab = _checkpoint_vocab(ckpt, args.checkpoint)
    outputs = []
    for lineno, line in enumerate(data_io.read_lines(args.input), 1):
        ids = encode(vocab, line).ids
        if args.max_src_len is not None:
            ids = ids[:args.max_src_len]
        if not ids:
            raise DataError(f"{args.input}:{lineno}: empty input line")
        if args.mode == "beam":
            gen = list(beam_search(ckpt.params, ids, dc).ids)
        else:
            gen = list(sample_lr(ckpt.params, ids, dc, seed=args.seed + lineno - 1).ids)
        if gen and gen[-1] == EOS:
            gen = gen[:-1]
        outputs.append(decode(vocab, gen))
    _write_lines(outputs, args.out)
    return 0


def cmd_eval(args) -> int:
    hyps = data_io.read_lines(args.hyp)
    refs = data_io.read_lines(args.ref)
    report = corpus_score(args.metric, hyps, refs)
    print(json.dumps(report, sort_keys=True))
    return 0


OBJECTIVES = {"bidirectional": Objective.BIDIRECTIONAL, "l2r": Objective.LEFT_TO_RIGHT,
              "r2l": Objective.RIGHT_TO_LEFT, "seq2seq": Objective.SEQ2SEQ}


def cmd_inspect_mask(args) -> int:
    kind = OBJECTIVES[args.objective]
    if kind is Objective.SEQ2SEQ:
        if args.src_len is None:
            raise UsageError("--src-len is required for the seq2seq objective")
        obj = LMObjective.seq2seq(args.src_len)
    else:
        obj = LMObjective(kind)
    print(build_mask(obj, args.len).render())
    return 0


def cmd_inspect_model(args) -> int:
    ckpt = read_checkpoint(args.checkpoint)
    counts = component_counts(ckpt.params)
    for name, n in counts.items():
        print(f"{name}\t{n}")
    for name, a in ckpt.extras.items():
        if name.startswith("head."):
            print(f"{name}\t{a.size}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="clozelm", description="Unified masked-LM pretraining, fine-tuning and generation.",
                epilog=f"A default JSON config path can be given in ${CONFIG_ENV}.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("build-vocab", help="build a vocabulary from a corpus")
    s.add_argument("--corpus", required=True, help="UTF-8 text, one document per line")
    s.add_argument("--size", type=int, default=200, help="target vocabulary size (default 200)")
    s.add_argument("--out", required=True, help="output vocab JSON path")
    s.set_defaults(func=cmd_build_vocab)

    s = sub.add_parser("pretrain", help="joint pretraining over the four LM objectives")
    s.add_argument("--corpus", required=True)
    s.add_argument("--vocab", required=True)
    s.add_argument("--config", help=f"JSON run config (default: ${CONFIG_ENV} or built-in defaults)")
    s.add_argument("--steps", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="directory for checkpoints and metrics.jsonl")
    s.add_argument("--batch-size", type=int)
    s.add_argument("--no-resume", action="store_true", help="ignore checkpoints already in --out")
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("finetune", help="fine-tune a pretrained checkpoint")
    s.add_argument("--mode", required=True, choices=[m.value for m in Mode])
    s.add_argument("--train", required=True,
                   help="classify: TSV text<TAB>label; span: JSONL; seq2seq: TSV source<TAB>target")
    s.add_argument("--init", required=True, help="pretrained checkpoint")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--config")
    s.add_argument("--steps", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--dropout", type=float)
    s.add_argument("--mask-prob", type=float, help="seq2seq target mask probability")
    s.add_argument("--label-smoothing", type=float)
    s.add_argument("--max-src-len", type=int, help="truncate seq2seq sources to this many tokens")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("generate", help="beam search or top-k sampling, one output line per input line")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--mode", choices=["beam", "sample"], default="beam")
    s.add_argument("--input", required=True, help="one source (beam) or prompt (sample) per line")
    s.add_argument("--config")
    s.add_argument("--beam", type=int)
    s.add_argument("--topk", type=int)
    s.add_argument("--block-ngram", type=int, help="n-gram size to block; 0 disables blocking")
    s.add_argument("--max-len", type=int, help="maximum generated tokens")
    s.add_argument("--max-src-len", type=int, help="truncate inputs to this many tokens")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="output file (default stdout)")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("eval", help="score hypotheses against references, JSON report on stdout")
    s.add_argument("--metric", required=True, choices=METRICS)
    s.add_argument("--hyp", required=True)
    s.add_argument("--ref", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("inspect-mask", help="print an attention mask as an ASCII grid")
    s.add_argument("--objective", required=True, choices=list(OBJECTIVES))
    s.add_argument("--src-len", type=int, help="source length for seq2seq")
    s.add_argument("--len", type=int, required=True)
    s.set_defaults(func=cmd_inspect_mask)

    s = sub.add_parser("inspect-model", help="print parameter counts per component")
    s.add_argument("--checkpoint", required=True)
    s.set_defaults(func=cmd_inspect_model)
    return p


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"clozelm {args.command}: {exc}", file=sys.stderr)
        return 1
    except (ClozeLMError, OSError, ValueError, IndexError, FloatingPointError) as exc:
        print(f"clozelm {args.command}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
