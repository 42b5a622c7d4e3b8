"""Deterministic toy tasks: copy, reverse, word_occurrence."""
from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

TASKS = ("copy", "reverse", "word_occurrence")


@dataclass(frozen=True)
class TaskSpec:
    task: str = "copy"
    vocab_size: int = 10
    min_length: int = 1
    max_length: int = 5
    count: int = 100
    seed: int = 0

    def validate(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.min_length < 1 or self.max_length < self.min_length:
            raise ValueError("need 1 <= min_length <= max_length")
        if self.count < 0:
            raise ValueError("count must be >= 0")


def word(i: int, width: int) -> str:
    """Fixed-width alphabetic name for token ``i``; string order follows id order."""
    letters = []
    for _ in range(width):
        i, r = divmod(i, 26)
        letters.append(string.ascii_lowercase[r])
    return "w" + "".join(reversed(letters))


def target_ids(task: str, src: list[int]) -> list[int]:
    if task == "copy":
        return list(src)
    if task == "reverse":
        return src[::-1]
    return sorted(set(src))


def generate_ids(spec: TaskSpec) -> list[tuple[list[int], list[int]]]:
    """Raw (source, target) id pairs; ids are 0..vocab_size-1."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    pairs = []
    for _ in range(spec.count):
        n = int(rng.integers(spec.min_length, spec.max_length + 1))
        src = rng.integers(0, spec.vocab_size, size=n).tolist()
        pairs.append((src, target_ids(spec.task, src)))
    return pairs


def generate(spec: TaskSpec) -> list[dict]:
    """Corpus rows in the on-disk schema: {"source": str, "target": str}."""
    width = 1
    while 26 ** width < spec.vocab_size:
        width += 1
    rows = []
    for src, tgt in generate_ids(spec):
        rows.append({"source": " ".join(word(i, width) for i in src),
                     "target": " ".join(word(i, width) for i in tgt)})
    return rows
