"""Held-out log-likelihood, top-k character savings (CS-k) and corpus BLEU-4."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .corpus import Vocabulary

N_SPECIAL = 4


class TeacherForcedModel(Protocol):
    def teacher_forced_logprobs(self, instances: Sequence) -> list[np.ndarray]: ...


def eval_loglik(model: TeacherForcedModel, instances: Sequence, batch_size: int = 64) -> float:
    """Mean over instances of the summed gold-token log-probability (<eos> included)."""
    if not instances:
        raise ValueError("empty split")
    total = 0.0
    for k in range(0, len(instances), batch_size):
        chunk = instances[k:k + batch_size]
        for inst, lp in zip(chunk, model.teacher_forced_logprobs(chunk)):
            total += float(lp[np.arange(len(inst.target)), inst.target].sum())
    return total / len(instances)


# ---------------------------------------------------------------- completion

class PrefixIndex:
    """Vocabulary ids (non-special) grouped by every prefix of their surface form."""

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab
        self._by_prefix: dict[str, np.ndarray] = {}

    def ids(self, prefix: str) -> np.ndarray:
        hit = self._by_prefix.get(prefix)
        if hit is None:
            words = self.vocab.words
            hit = np.array([i for i in range(N_SPECIAL, len(words)) if words[i].startswith(prefix)],
                           dtype=np.int64)
            self._by_prefix[prefix] = hit
        return hit

    def top_k(self, logp: np.ndarray, prefix: str, k: int) -> list[int]:
        """The ``k`` most probable words starting with ``prefix`` (ties -> lower id)."""
        ids = self.ids(prefix)
        order = np.lexsort((ids, -logp[ids]))
        return ids[order[:k]].tolist()


def prefix_needed(logp: np.ndarray, word: str, k: int, index: PrefixIndex) -> int:
    """Smallest prefix length n so ``word`` ranks in the top k among matching words.

    Out-of-vocabulary words, and words never reaching the top k, need the
    whole word (n = L).
    """
    L = len(word)
    wid = index.vocab.index.get(word)
    if wid is None or wid < N_SPECIAL:
        return L
    for n in range(L + 1):
        ids = index.ids(word[:n])
        score = logp[wid]
        # rank = competitors strictly better, or equal with a lower id
        better = np.count_nonzero((logp[ids] > score) | ((logp[ids] == score) & (ids < wid)))
        if better < k:
            return n
    return L


@dataclass
class CsKReport:
    ks: list[int]
    per_comment: dict[int, list[float]] = field(default_factory=dict)
    average: dict[int, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"ks": self.ks,
                "per_comment": {str(k): v for k, v in self.per_comment.items()},
                "average": {str(k): v for k, v in self.average.items()}}


def cs_k_report(model: TeacherForcedModel, instances: Sequence, vocab: Vocabulary,
                ks: Sequence[int] = (1, 2, 3, 4, 5), batch_size: int = 64) -> CsKReport:
    """Per-comment saved-character ratio sum(L - n) / sum(L), averaged over comments.

    Gold history is teacher-forced.  Instances need ``words`` (target surface
    forms, aligned with ``target`` minus its <eos>).
    """
    ks = sorted(set(int(k) for k in ks))
    if not ks or ks[0] < 1:
        raise ValueError("k must be >= 1")
    index = PrefixIndex(vocab)
    report = CsKReport(ks, {k: [] for k in ks})
    for start in range(0, len(instances), batch_size):
        chunk = instances[start:start + batch_size]
        for inst, lp in zip(chunk, model.teacher_forced_logprobs(chunk)):
            words = inst.words
            total = sum(len(w) for w in words)
            if total == 0:
                continue
            for k in ks:
                saved = sum(len(w) - prefix_needed(lp[t], w, k, index) for t, w in enumerate(words))
                report.per_comment[k].append(saved / total)
    for k in ks:
        vals = report.per_comment[k]
        report.average[k] = float(np.mean(vals)) if vals else 0.0
    return report


def cs_k(model: TeacherForcedModel, instances: Sequence, vocab: Vocabulary, k: int) -> float:
    return cs_k_report(model, instances, vocab, [k]).average[k]


# ---------------------------------------------------------------------- BLEU

@dataclass
class BleuReport:
    precisions: list[float]
    brevity_penalty: float
    bleu: float
    candidate_length: int
    reference_length: int

    def to_json(self) -> dict:
        return asdict(self)


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidates: Sequence[Sequence], references: Sequence[Sequence[Sequence]],
          smoothing: str = "none") -> BleuReport:
    """Corpus BLEU-4: clipped n-gram precisions pooled over the corpus,
    geometric mean of p1..p4, brevity penalty against the closest reference
    length (ties -> shorter).

    ``smoothing="add1"`` adds one to numerator and denominator for n > 1.
    """
    if not candidates:
        raise ValueError("no candidates")
    if len(candidates) != len(references):
        raise ValueError("candidate and reference counts differ")
    if smoothing not in ("none", "add1"):
        raise ValueError(f"unknown smoothing {smoothing!r}")
    matched = [0] * 4
    totals = [0] * 4
    c_len = r_len = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise ValueError("each candidate needs at least one reference")
        cand = list(cand)
        c_len += len(cand)
        r_len += min((len(r) for r in refs), key=lambda n: (abs(n - len(cand)), n))
        for n in range(1, 5):
            counts = _ngrams(cand, n)
            best = Counter()
            for r in refs:
                best |= _ngrams(list(r), n)
            matched[n - 1] += sum(min(c, best[g]) for g, c in counts.items())
            totals[n - 1] += sum(counts.values())
    precisions = []
    for n in range(4):
        num, den = matched[n], totals[n]
        if smoothing == "add1" and n > 0:
            num, den = num + 1, den + 1
        precisions.append(num / den if den else 0.0)
    if c_len == 0:
        bp = 0.0
    else:
        bp = 1.0 if c_len > r_len else math.exp(1 - r_len / c_len)
    if min(precisions) <= 0:
        score = 0.0
    else:
        score = bp * math.exp(sum(math.log(p) for p in precisions) / 4)
    return BleuReport(precisions, bp, score, c_len, r_len)
