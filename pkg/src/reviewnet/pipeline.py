"""Raw corpus -> normalized splits + vocabulary -> model instances."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .config import DataConfig
from .corpus import (Vocabulary, build_vocab, encode_instance, normalize_caption, read_jsonl,
                     split_groups, tokenize_code, write_jsonl)
from .encoder import read_feature_grid
from .model import Instance

SPLITS = ("train", "dev", "test")


@dataclass
class Preprocessed:
    splits: dict[str, list[dict]]
    vocab: Vocabulary
    skipped: int

    def stats(self) -> dict:
        out = {"vocab_size": len(self.vocab), "skipped": self.skipped}
        for name, rows in self.splits.items():
            out[f"{name}_instances"] = len(rows)
            out[f"{name}_target_tokens"] = sum(len(r["target"].split()) for r in rows)
            if rows and "source" in rows[0]:
                out[f"{name}_source_tokens"] = sum(len(r["source"].split()) for r in rows)
        return out


def preprocess(raw: Sequence[dict], task: str, data: DataConfig, seed: int) -> Preprocessed:
    """Tokenize, split by file (code) or by image (caption), build the train vocabulary."""
    if not raw:
        raise ValueError("empty corpus")
    rows, keys, skipped = [], [], 0
    for n, r in enumerate(raw):
        if "target" not in r:
            raise ValueError(f"record {n} has no 'target'")
        if task == "code":
            if "source" not in r:
                raise ValueError(f"record {n} has no 'source'")
            src, tgt = tokenize_code(r["source"]), tokenize_code(r["target"])
            if not src or not tgt:
                skipped += 1
                continue
            rows.append({"source": " ".join(src), "target": " ".join(tgt)})
            keys.append(str(r.get("file", f"#{n}")))
        else:
            if "features" not in r:
                raise ValueError(f"record {n} has no 'features'")
            tgt = normalize_caption(r["target"])
            if not tgt:
                skipped += 1
                continue
            rows.append({"features": r["features"], "target": " ".join(tgt)})
            keys.append(str(r["features"]))
    if not rows:
        raise ValueError("no usable instances after tokenization")
    assign = split_groups(keys, seed, data.test_fraction, data.dev_fraction)
    splits = {s: [] for s in SPLITS}
    for row, key in zip(rows, keys):
        splits[assign[key]].append(row)
    if not splits["train"]:
        raise ValueError("training split is empty")
    lists = []
    for r in splits["train"]:
        lists.append(r["target"].split())
        if task == "code":
            lists.append(r["source"].split())
    vocab = build_vocab(lists, data.vocab_threshold)
    return Preprocessed(splits, vocab, skipped)


def write_preprocessed(out_dir, pre: Preprocessed) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, rows in pre.splits.items():
        write_jsonl(out / f"{name}.jsonl", rows)
    pre.vocab.save(out / "vocab.tsv")


def to_instances(rows: Sequence[dict], vocab: Vocabulary, data: DataConfig, base_dir=".") -> list[Instance]:
    """Encode normalized rows; feature paths resolve relative to ``base_dir``."""
    out = []
    for r in rows:
        tgt_words = r["target"].split()
        if "features" in r:
            path = Path(r["features"])
            if not path.is_absolute():
                path = Path(base_dir) / path
            pair = encode_instance(vocab, [], tgt_words, data.source_cap, data.target_cap)
            out.append(Instance(read_feature_grid(path), pair.target.ids, pair.target_words))
        else:
            pair = encode_instance(vocab, r["source"].split(), tgt_words, data.source_cap, data.target_cap)
            if not pair.source.ids:
                raise ValueError("instance with an empty source")
            out.append(Instance(pair.source.ids, pair.target.ids, pair.target_words))
    return out


def load_split(corpus_dir, split: str, vocab: Vocabulary, data: DataConfig) -> list[Instance]:
    path = Path(corpus_dir) / f"{split}.jsonl"
    return to_instances(read_jsonl(path), vocab, data, base_dir=path.parent)
