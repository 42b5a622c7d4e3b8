"""Text normalization, code tokenization, vocabularies and corpus files."""
from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")
PAD_ID, BOS_ID, EOS_ID, UNK_ID = range(4)

_NON_ALPHA = re.compile(r"[^A-Za-z]+")
_CAMEL = re.compile(r"(?<=[a-z])(?=[A-Z])")


def normalize_caption(text: str) -> list[str]:
    """Non-letters become spaces, then lowercase and split on whitespace."""
    return _NON_ALPHA.sub(" ", text).lower().split()


def tokenize_code(text: str) -> list[str]:
    """Split camelCase at lower->upper boundaries, then normalize like captions.

    Runs of capitals stay together: ``HTMLParser`` -> ``["htmlparser"]``.
    """
    return normalize_caption(_CAMEL.sub(" ", text))


@dataclass
class Vocabulary:
    words: list[str]                       # id -> word, specials first
    counts: list[int]
    threshold: int = 1
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if tuple(self.words[:4]) != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValueError("duplicate word in vocabulary")

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index

    def id(self, word: str) -> int:
        return self.index.get(word, UNK_ID)

    def encode(self, words: Iterable[str]) -> list[int]:
        return [self.id(w) for w in words]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            if strip and i == EOS_ID:
                break
            if strip and i in (PAD_ID, BOS_ID):
                continue
            out.append(self.words[i])
        return out

    def save(self, path) -> None:
        lines = [f"{w}\t{i}\t{c}" for i, (w, c) in enumerate(zip(self.words, self.counts))]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, threshold: int = 1) -> "Vocabulary":
        words, counts = [], []
        for k, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
            if not line:
                continue
            w, i, c = line.split("\t")
            if int(i) != k:
                raise ValueError(f"{path}: ids must be dense and ordered (line {k + 1})")
            words.append(w)
            counts.append(int(c))
        return cls(words, counts, threshold)


def build_vocab(token_lists: Iterable[Sequence[str]], threshold: int = 5) -> Vocabulary:
    """Keep words seen at least ``threshold`` times; ids by (-count, word)."""
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    counts = Counter()
    for toks in token_lists:
        counts.update(toks)
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    for s in SPECIALS:
        counts.pop(s, None)
    kept = sorted((w for w, c in counts.items() if c >= threshold), key=lambda w: (-counts[w], w))
    return Vocabulary(list(SPECIALS) + kept, [0] * 4 + [counts[w] for w in kept], threshold)


@dataclass
class TokenSequence:
    ids: list[int]
    original_length: int

    def __len__(self):
        return len(self.ids)


@dataclass
class EncodedPair:
    source: TokenSequence
    target: TokenSequence
    target_words: list[str]
    split: str = "train"


def encode_instance(vocab: Vocabulary, source: Sequence[str], target: Sequence[str],
                    source_cap: int = 300, target_cap: int = 300, split: str = "train") -> EncodedPair:
    """Map words to ids (unknown -> <unk>), truncate, and append <eos> to the target."""
    src = TokenSequence(vocab.encode(source[:source_cap]), len(source))
    words = list(target[:target_cap])
    tgt = TokenSequence(vocab.encode(words) + [EOS_ID], len(target))
    return EncodedPair(src, tgt, words, split)


# ------------------------------------------------------------------ splitting

def split_groups(keys: Sequence[str], seed: int, test_frac: float = 0.1,
                 dev_frac: float = 0.1) -> dict[str, str]:
    """Assign each distinct group key to test/dev/train by a seeded shuffle."""
    uniq = sorted(set(keys))
    order = np.random.default_rng(seed).permutation(len(uniq))
    n_test = int(round(test_frac * len(uniq)))
    n_dev = int(round(dev_frac * len(uniq)))
    out = {}
    for rank, k in enumerate(order):
        out[uniq[k]] = "test" if rank < n_test else "dev" if rank < n_test + n_dev else "train"
    return out


# ------------------------------------------------------------------ file I/O

def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{n}: {exc}") from exc
    return rows


def write_jsonl(path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n")
