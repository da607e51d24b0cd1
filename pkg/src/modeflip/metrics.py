"""Evaluation metrics: WER with edit-operation decomposition, corpus BLEU,
and the target-language probability signal that measures attack success.

Text normalization is fixed across all metrics: lowercase, strip
punctuation, split on whitespace. Scores are therefore internally
comparable even though other toolkits may normalize differently.
"""

from __future__ import annotations

import math
import string
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol, Sequence

from .adapter import ModelAdapter, TaskTag
from .audio import AdversarialSegment, prepend
from .manifest import LoadedUtterance

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_text(text: str) -> list[str]:
    """Lowercase, strip punctuation, whitespace-tokenize."""
    return text.lower().translate(_PUNCT_TABLE).split()


@dataclass(frozen=True)
class WerBreakdown:
    """Edit-operation counts from an optimal word alignment."""

    insertions: int
    deletions: int
    substitutions: int
    n_ref_words: int

    def __post_init__(self):
        if min(self.insertions, self.deletions, self.substitutions) < 0:
            raise ValueError("operation counts must be non-negative")
        if self.n_ref_words <= 0:
            raise ValueError("reference must be non-empty")

    @property
    def distance(self) -> int:
        return self.insertions + self.deletions + self.substitutions

    @property
    def ins_rate(self) -> float:
        return 100.0 * self.insertions / self.n_ref_words

    @property
    def del_rate(self) -> float:
        return 100.0 * self.deletions / self.n_ref_words

    @property
    def sub_rate(self) -> float:
        return 100.0 * self.substitutions / self.n_ref_words

    @property
    def wer(self) -> float:
        """Word error rate in percent; may exceed 100."""
        return 100.0 * self.distance / self.n_ref_words


_MATCH, _SUB, _DEL, _INS = 0, 1, 2, 3


def wer(reference: Sequence[str], hypothesis: Sequence[str]) -> WerBreakdown:
    """Levenshtein alignment with unit costs and a deterministic backtrace.

    Cost ties are broken substitution > deletion > insertion; the total
    distance is tie-independent.
    """
    ref = list(reference)
    hyp = list(hypothesis)
    if not ref:
        raise ValueError("reference must be non-empty (WER is undefined)")

    rows, cols = len(ref) + 1, len(hyp) + 1
    cost = [[0] * cols for _ in range(rows)]
    op = [[_MATCH] * cols for _ in range(rows)]
    for i in range(1, rows):
        cost[i][0] = i
        op[i][0] = _DEL
    for j in range(1, cols):
        cost[0][j] = j
        op[0][j] = _INS
    for i in range(1, rows):
        for j in range(1, cols):
            if ref[i - 1] == hyp[j - 1]:
                diag = cost[i - 1][j - 1]
                if diag <= cost[i - 1][j] and diag <= cost[i][j - 1]:
                    cost[i][j] = diag
                    op[i][j] = _MATCH
                    continue
                sub = diag + 1  # equal words, but a cheaper path exists
            else:
                sub = cost[i - 1][j - 1] + 1
            dele = cost[i - 1][j] + 1
            ins = cost[i][j - 1] + 1
            best = min(sub, dele, ins)
            cost[i][j] = best
            if best == sub and ref[i - 1] != hyp[j - 1]:
                op[i][j] = _SUB
            elif best == dele:
                op[i][j] = _DEL
            else:
                op[i][j] = _INS

    n_ins = n_del = n_sub = 0
    i, j = len(ref), len(hyp)
    while i > 0 or j > 0:
        o = op[i][j]
        if o == _MATCH:
            i, j = i - 1, j - 1
        elif o == _SUB:
            n_sub += 1
            i, j = i - 1, j - 1
        elif o == _DEL:
            n_del += 1
            i -= 1
        else:
            n_ins += 1
            j -= 1
    return WerBreakdown(n_ins, n_del, n_sub, len(ref))


def _ngrams(tokens: list[str], order: int) -> Counter:
    return Counter(tuple(tokens[i : i + order]) for i in range(len(tokens) - order + 1))


def corpus_bleu(
    references: Sequence[str], hypotheses: Sequence[str], max_order: int = 4
) -> float:
    """Corpus-level BLEU in [0, 100]: clipped n-gram precision up to
    max_order, geometric mean, brevity penalty.

    Orders with no hypothesis n-grams at all are excluded from the geometric
    mean (so an identity corpus of very short sentences still scores 100);
    any populated order with zero matches yields 0.
    """
    if len(references) != len(hypotheses):
        raise ValueError(
            f"got {len(references)} references but {len(hypotheses)} hypotheses"
        )
    if not references:
        raise ValueError("need at least one reference/hypothesis pair")

    matches = [0] * max_order
    totals = [0] * max_order
    ref_len = hyp_len = 0
    for ref_text, hyp_text in zip(references, hypotheses):
        ref_tokens = normalize_text(ref_text)
        hyp_tokens = normalize_text(hyp_text)
        ref_len += len(ref_tokens)
        hyp_len += len(hyp_tokens)
        for n in range(1, max_order + 1):
            hyp_counts = _ngrams(hyp_tokens, n)
            if not hyp_counts:
                continue
            ref_counts = _ngrams(ref_tokens, n)
            totals[n - 1] += sum(hyp_counts.values())
            matches[n - 1] += sum(
                min(c, ref_counts[g]) for g, c in hyp_counts.items()
            )

    if hyp_len == 0:
        return 0.0
    log_sum = 0.0
    used = 0
    for m, t in zip(matches, totals):
        if t == 0:
            continue
        if m == 0:
            return 0.0
        log_sum += math.log(m / t)
        used += 1
    if used == 0:
        return 0.0
    precision = math.exp(log_sum / used)
    brevity = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * brevity * precision


class LangDetector(ABC):
    """Deterministic text -> probability-of-target-language contract."""

    @property
    @abstractmethod
    def target_language(self) -> str: ...

    @abstractmethod
    def probability(self, text: str) -> float:
        """Probability in [0, 1] that the text is in the target language."""


class ToyAlphabetDetector(LangDetector):
    """Fraction of tokens that belong to the target alphabet; empty text -> 0."""

    def __init__(self, target_words: Iterable[str], target_language: str = "tgt"):
        self._words = frozenset(target_words)
        self._language = target_language

    @property
    def target_language(self) -> str:
        return self._language

    def probability(self, text: str) -> float:
        tokens = normalize_text(text)
        if not tokens:
            return 0.0
        return sum(t in self._words for t in tokens) / len(tokens)


def p_target_lang(detector: LangDetector, text: str) -> float:
    p = detector.probability(text)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"detector returned probability {p} outside [0, 1]")
    return p


class QualityMetric(Protocol):
    """Pluggable corpus-level translation quality metric (COMET-shaped slot).

    No implementation ships with this package; aggregate rows carry an
    absent marker when the slot is empty.
    """

    name: str

    def corpus_score(self, references: Sequence[str], hypotheses: Sequence[str]) -> float: ...


@dataclass(frozen=True)
class EvalRecord:
    """Per-utterance evaluation bundle."""

    utt_id: str
    hypothesis: str
    reference: str
    wer: Optional[WerBreakdown]
    p_target: float
    error: Optional[str] = None

    def __post_init__(self):
        if self.error is None and not 0.0 <= self.p_target <= 1.0:
            raise ValueError(f"p_target {self.p_target} outside [0, 1]")

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass(frozen=True)
class AggregateRow:
    """Corpus-level metrics in the report's column order."""

    label: str
    mode: str
    wer: float
    ins_rate: float
    del_rate: float
    sub_rate: float
    bleu: float
    quality: Optional[float]    # absent unless a quality metric was plugged in
    p_target_mean: float
    target_language: str
    n_records: int
    n_failed: int


def aggregate_records(
    records: Sequence[EvalRecord],
    label: str = "",
    mode: str = "",
    target_language: str = "tgt",
    quality_metric: Optional[QualityMetric] = None,
) -> AggregateRow:
    """Pool WER counts, compute corpus BLEU and mean p_target over the
    non-failed records; failures are counted but excluded."""
    ok = [r for r in records if not r.failed]
    if not ok:
        raise ValueError("no successful records to aggregate")
    n_ref = sum(r.wer.n_ref_words for r in ok)
    ins = sum(r.wer.insertions for r in ok)
    dels = sum(r.wer.deletions for r in ok)
    subs = sum(r.wer.substitutions for r in ok)
    refs = [r.reference for r in ok]
    hyps = [r.hypothesis for r in ok]
    quality = (
        quality_metric.corpus_score(refs, hyps) if quality_metric is not None else None
    )
    return AggregateRow(
        label=label,
        mode=mode,
        wer=100.0 * (ins + dels + subs) / n_ref,
        ins_rate=100.0 * ins / n_ref,
        del_rate=100.0 * dels / n_ref,
        sub_rate=100.0 * subs / n_ref,
        bleu=corpus_bleu(refs, hyps),
        quality=quality,
        p_target_mean=sum(r.p_target for r in ok) / len(ok),
        target_language=target_language,
        n_records=len(records),
        n_failed=len(records) - len(ok),
    )


@dataclass(frozen=True)
class EvalResult:
    records: tuple[EvalRecord, ...]
    aggregate: AggregateRow


def evaluate_testset(
    adapter: ModelAdapter,
    segment: Optional[AdversarialSegment],
    testset: Sequence[LoadedUtterance],
    mode: TaskTag,
    detector: LangDetector,
    label: str = "",
    quality_metric: Optional[QualityMetric] = None,
) -> EvalResult:
    """Decode every utterance under the given mode (with the segment
    prepended when present) and score against the English-side reference
    translations. Per-utterance decode failures are recorded and excluded
    from the aggregate."""
    if not testset:
        raise ValueError("testset must be non-empty")
    records = []
    for utt in testset:
        reference = utt.entry.ref_translation_en
        audio = prepend(segment, utt.waveform) if segment is not None else utt.waveform
        try:
            tokens = adapter.decode(audio, mode)
            hypothesis = adapter.detokenize(tokens)
            breakdown = wer(normalize_text(reference), normalize_text(hypothesis))
            p = p_target_lang(detector, hypothesis)
        except Exception as exc:  # noqa: BLE001 - per-utterance isolation
            records.append(
                EvalRecord(utt.id, "", reference, None, 0.0, error=str(exc))
            )
            continue
        records.append(EvalRecord(utt.id, hypothesis, reference, breakdown, p))
    aggregate = aggregate_records(
        records,
        label=label,
        mode=mode.value,
        target_language=detector.target_language,
        quality_metric=quality_metric,
    )
    return EvalResult(tuple(records), aggregate)
