"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import RunConfig
from .corpus import Vocabulary, normalize_caption, read_jsonl, tokenize_code, write_jsonl
from .encoder import read_feature_grid
from .metrics import PrefixIndex, bleu4, cs_k_report, eval_loglik
from .model import Instance, ReviewNet
from .pipeline import load_split, preprocess, write_preprocessed
from .synthetic import TaskSpec, generate
from .tensor import NumericError
from .training import TrainingDiverged, fit

log = logging.getLogger("reviewnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig.defaults(
        getattr(args, "task", None) or "code")
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.train.seed = args.seed
    return cfg


def _emit(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


# ------------------------------------------------------------------ commands

def cmd_preprocess(args) -> int:
    cfg = _load_config(args)
    raw_path = Path(args.input)
    raw = read_jsonl(raw_path)
    out_dir = Path(args.out)
    if cfg.task == "caption":
        # keep feature paths valid relative to the output directory
        for r in raw:
            if "features" in r and not os.path.isabs(r["features"]):
                r["features"] = os.path.relpath(raw_path.parent / r["features"], out_dir)
    pre = preprocess(raw, cfg.task, cfg.data, cfg.seed)
    write_preprocessed(out_dir, pre)
    stats = pre.stats()
    print(json.dumps(stats, sort_keys=True))
    return EXIT_OK


def _source_for(cfg: RunConfig, vocab: Vocabulary, text: str):
    if cfg.task == "caption":
        grid = read_feature_grid(text)
        if cfg.model.feature_dim is not None and grid.dim != cfg.model.feature_dim:
            raise ValueError(f"feature dim {grid.dim} does not match the checkpoint ({cfg.model.feature_dim})")
        return grid
    words = tokenize_code(text)[:cfg.data.source_cap]
    ids = vocab.encode(words)
    if not ids:
        raise ValueError("input has no tokens after tokenization")
    return ids


def cmd_train(args) -> int:
    cfg = _load_config(args)
    data_dir = Path(args.data)
    vocab = Vocabulary.load(data_dir / "vocab.tsv", cfg.data.vocab_threshold)
    train = load_split(data_dir, "train", vocab, cfg.data)
    dev = load_split(data_dir, "dev", vocab, cfg.data)
    if not dev:
        log.warning("dev split is empty; using the training split for early stopping")
        dev = train
    mc = replace(cfg.model, vocab_size=len(vocab), init_seed=cfg.seed)
    if cfg.task == "caption":
        grid = train[0].source
        mc.feature_dim = grid.dim
        mc.context_dim = None if grid.context is None else len(grid.context)
    if cfg.train.lam == 0 and mc.reviewer.discriminative_head:
        mc.reviewer = replace(mc.reviewer, discriminative_head=False)
    cfg.model = mc
    model = ReviewNet(mc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = fit(model, train, dev, cfg.train, log_path=out / "train_log.jsonl")
    model.load_state_dict(result.best_state)
    save_checkpoint(out / "model.ckpt", cfg, vocab, model,
                    extra={"best_epoch": result.best_epoch, "best_metric": result.best_metric,
                           "steps": result.steps})
    print(json.dumps({"best_epoch": result.best_epoch, "best_metric": result.best_metric,
                      "steps": result.steps, "checkpoint": str(out / "model.ckpt")}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    cfg = ck.config
    path = Path(args.data)
    rows = read_jsonl(path)
    from .pipeline import to_instances
    instances = to_instances(rows, ck.vocab, cfg.data, base_dir=path.parent)
    if not instances:
        raise ValueError("empty evaluation split")
    if args.metric == "loglik":
        report = {"metric": "loglik", "loglik": eval_loglik(ck.model, instances), "instances": len(instances)}
    elif args.metric == "cs_k":
        ks = [int(k) for k in args.k.split(",")]
        report = {"metric": "cs_k", **cs_k_report(ck.model, instances, ck.vocab, ks).to_json()}
    else:
        beam = args.beam or cfg.data.beam
        cands = [ck.model.generate(i.source, beam, cfg.data.max_len, cfg.data.length_normalize)
                 for i in instances]
        refs = [[i.target[:-1]] for i in instances]
        report = {"metric": "bleu4", **bleu4(cands, refs).to_json()}
    _emit(report, args.out)
    return EXIT_OK


def cmd_generate(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    cfg = ck.config
    source = _source_for(cfg, ck.vocab, args.input)
    beam = args.beam or cfg.data.beam
    ids = ck.model.generate(source, beam, args.max_len or cfg.data.max_len, cfg.data.length_normalize)
    print(" ".join(ck.vocab.decode(ids)))
    return EXIT_OK


def cmd_complete(args) -> int:
    """Rank next-word completions for a partially written comment."""
    ck = load_checkpoint(args.checkpoint)
    cfg = ck.config
    source = _source_for(cfg, ck.vocab, args.input)
    history = (tokenize_code if cfg.task == "code" else normalize_caption)(args.comment or "")
    inst = Instance(source, ck.vocab.encode(history) + [0])
    logp = ck.model.teacher_forced_logprobs([inst])[0][-1]
    index = PrefixIndex(ck.vocab)
    prefix = (args.prefix or "").lower()
    top = index.top_k(logp, prefix, args.k)
    _emit({"prefix": prefix, "completions": [{"word": ck.vocab.words[i], "logprob": float(logp[i])} for i in top]},
          args.out)
    return EXIT_OK


def cmd_dump_attention(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    cfg = ck.config
    if not ck.model.config.has_reviewer:
        raise ValueError("checkpoint has no reviewer")
    source = _source_for(cfg, ck.vocab, args.input)
    trace = ck.model.attention_trace(source)
    steps = []
    for t, row in enumerate(trace["attention"]):
        step = {"step": t + 1, "weights": [float(w) for w in row]}
        if trace["scores"] is not None:
            scores = trace["scores"][t]
            cand = np.arange(4, len(scores))
            order = cand[np.lexsort((cand, -scores[cand]))][:args.top]
            step["scores"] = [float(s) for s in scores]
            step["top_words"] = [ck.vocab.words[i] for i in order]
        steps.append(step)
    inputs = (source if isinstance(source, list) else None)
    _emit({"input_tokens": ck.vocab.decode(inputs, strip=False) if inputs else None,
           "review_steps": len(steps), "steps": steps}, args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = TaskSpec(args.task, args.vocab_size, args.min_length, args.max_length, args.count,
                    args.seed if args.seed is not None else 0)
    rows = generate(spec)
    if args.out:
        write_jsonl(args.out, rows)
    else:
        for r in rows:
            print(json.dumps(r, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="reviewnet", description="Review network encoder-reviewer-decoder toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="JSON run config")
            sp.add_argument("--task", choices=["code", "caption"], help="defaults to use without --config")
        sp.add_argument("--seed", type=int)
        return sp

    sp = common(sub.add_parser("preprocess", help="tokenize, split and build the vocabulary"))
    sp.add_argument("--input", required=True, help="raw JSONL corpus")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_preprocess)

    sp = common(sub.add_parser("train", help="train and keep the best dev checkpoint"))
    sp.add_argument("--data", required=True, help="preprocessed corpus directory")
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="compute a metric on a corpus split")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True, help="normalized split JSONL")
    sp.add_argument("--metric", choices=["loglik", "cs_k", "bleu4"], default="loglik")
    sp.add_argument("--k", default="1,2,3,4,5", help="comma-separated k values for cs_k")
    sp.add_argument("--beam", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("generate", help="decode one input")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True, help="source code text, or a feature-grid path")
    sp.add_argument("--beam", type=int)
    sp.add_argument("--max-len", type=int)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("complete", help="top-k next-word completions")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--comment", default="", help="comment text written so far")
    sp.add_argument("--prefix", default="", help="characters typed of the next word")
    sp.add_argument("--k", type=int, default=5)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_complete)

    sp = sub.add_parser("dump-attention", help="reviewer attention weights and top words as JSON")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--top", type=int, default=5)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_dump_attention)

    sp = sub.add_parser("synth", help="emit a synthetic corpus as JSONL")
    sp.add_argument("--task", choices=["copy", "reverse", "word_occurrence"], default="copy")
    sp.add_argument("--vocab-size", type=int, default=10)
    sp.add_argument("--min-length", type=int, default=1)
    sp.add_argument("--max-length", type=int, default=5)
    sp.add_argument("--count", type=int, default=100)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TrainingDiverged, NumericError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
