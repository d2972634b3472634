"""Corpus-level BLEU-1..4 scoring and caption error annotation.

Scores are cumulative BLEU: clipped n-gram matches are summed over the whole
corpus before dividing, the geometric mean of orders 1..n is taken, and a
corpus-level brevity penalty is applied. Candidates and references are both
run through the same cleaning + whitespace tokenization so neither side is
favoured.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .corpus import TEST, Corpus, Vocabulary, clean_caption, strip_markers
from .errors import DataError

ERROR_CATEGORIES = (
    "classification",
    "numbering",
    "colour_identification",
    "gender_recognition",
    "object_occurrence",
)


class EvaluationError(DataError):
    pass


@dataclass(frozen=True)
class BleuReport:
    """Cumulative BLEU-1..4 plus the quantities they were computed from."""

    bleu: tuple[float, float, float, float]
    precisions: tuple[float, float, float, float]
    brevity_penalty: float
    candidate_length: int
    reference_length: int

    def __post_init__(self):
        for score in self.bleu:
            if not 0.0 <= score <= 1.0:
                raise EvaluationError(f"BLEU score outside [0,1]: {score}")
        if self.candidate_length < 0 or self.reference_length < 0:
            raise EvaluationError("negative corpus length")

    def as_dict(self) -> dict:
        return {
            "bleu1": self.bleu[0],
            "bleu2": self.bleu[1],
            "bleu3": self.bleu[2],
            "bleu4": self.bleu[3],
            "precisions": list(self.precisions),
            "brevity_penalty": self.brevity_penalty,
            "candidate_length": self.candidate_length,
            "reference_length": self.reference_length,
        }


@dataclass(frozen=True)
class CaptionRow:
    """One evaluated image: generated text plus its reference captions."""

    image_id: str
    candidate: str
    references: tuple[str, ...]


@dataclass(frozen=True)
class ErrorAnnotation:
    image_id: str
    category: str
    note: str = ""

    def __post_init__(self):
        if self.category not in ERROR_CATEGORIES:
            raise EvaluationError(
                f"unknown error category {self.category!r}; "
                f"expected one of {ERROR_CATEGORIES}"
            )


def ngram_counts(tokens, n: int) -> Counter:
    """Sliding-window n-gram counts; empty when the sequence is shorter than n."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    tokens = tuple(tokens)
    return Counter(tokens[i : i + n] for i in range(len(tokens) - n + 1))


def modified_precision(candidate, references, n: int) -> tuple[int, int]:
    """Clipped n-gram matches for one segment, as an exact (clipped, total) pair.

    Each candidate n-gram's count is clipped at the maximum count seen in any
    single reference. The pair is returned undivided so callers can aggregate
    across a corpus before forming the ratio.
    """
    if not references:
        raise EvaluationError("at least one reference is required")
    cand_counts = ngram_counts(candidate, n)
    max_ref: Counter = Counter()
    for ref in references:
        for gram, count in ngram_counts(ref, n).items():
            if count > max_ref[gram]:
                max_ref[gram] = count
    clipped = sum(min(count, max_ref[gram]) for gram, count in cand_counts.items())
    return clipped, sum(cand_counts.values())


def closest_reference_length(candidate_len: int, reference_lens) -> int:
    """Reference length nearest to the candidate's; ties go to the shorter."""
    lens = list(reference_lens)
    if not lens:
        raise EvaluationError("at least one reference is required")
    return min(lens, key=lambda r: (abs(r - candidate_len), r))


def brevity_penalty(candidate_len: int, reference_len: int) -> float:
    """exp(1 - r/c), capped at 1 for candidates at least as long as r; 0 when c=0."""
    if candidate_len < 0 or reference_len < 0:
        raise ValueError("lengths must be nonnegative")
    if candidate_len == 0:
        return 0.0
    if candidate_len > reference_len:
        return 1.0
    return math.exp(1.0 - reference_len / candidate_len)


def corpus_bleu(candidates, references, max_n: int = 4, smooth_eps: float = 0.0) -> BleuReport:
    """Corpus-level cumulative BLEU-1..max_n.

    candidates: one token sequence per segment. references: one list of token
    sequences per segment. Clipped counts are pooled over all segments before
    dividing; the effective reference length sums, per segment, the reference
    length closest to the candidate's. Any zero n-gram precision zeroes every
    order that includes it unless ``smooth_eps`` > 0, in which case
    p_n = (clipped + eps) / (total + eps).
    """
    candidates = [tuple(c) for c in candidates]
    references = [[tuple(r) for r in refs] for refs in references]
    if len(candidates) != len(references):
        raise EvaluationError(
            f"{len(candidates)} candidates vs {len(references)} reference sets"
        )
    if not candidates:
        raise EvaluationError("empty corpus")
    if smooth_eps < 0:
        raise ValueError("smooth_eps must be nonnegative")

    clipped_total = [0] * max_n
    count_total = [0] * max_n
    cand_len = 0
    ref_len = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise EvaluationError("segment with no references")
        cand_len += len(cand)
        ref_len += closest_reference_length(len(cand), [len(r) for r in refs])
        for k in range(1, max_n + 1):
            clipped, total = modified_precision(cand, refs, k)
            clipped_total[k - 1] += clipped
            count_total[k - 1] += total

    precisions = []
    for clipped, total in zip(clipped_total, count_total):
        if smooth_eps > 0.0:
            precisions.append((clipped + smooth_eps) / (total + smooth_eps))
        elif total == 0:
            precisions.append(0.0)
        else:
            precisions.append(clipped / total)

    bp = brevity_penalty(cand_len, ref_len)
    scores = []
    for n in range(1, max_n + 1):
        head = precisions[:n]
        if any(p == 0.0 for p in head):
            scores.append(0.0)
        else:
            scores.append(bp * math.exp(sum(math.log(p) for p in head) / n))
    return BleuReport(
        bleu=tuple(scores),
        precisions=tuple(precisions),
        brevity_penalty=bp,
        candidate_length=cand_len,
        reference_length=ref_len,
    )


def score_texts(candidates, references, max_n: int = 4, smooth_eps: float = 0.0) -> BleuReport:
    """corpus_bleu over raw strings: both sides cleaned and whitespace-split."""
    cand_tokens = [clean_caption(c).split() for c in candidates]
    ref_tokens = [[clean_caption(r).split() for r in refs] for refs in references]
    return corpus_bleu(cand_tokens, ref_tokens, max_n=max_n, smooth_eps=smooth_eps)


def evaluate_model(
    model,
    corpus: Corpus,
    feature_cache,
    vocab: Vocabulary,
    max_len: int,
    split: str = TEST,
    image_ids=None,
    smooth_eps: float = 0.0,
) -> tuple[BleuReport, list[CaptionRow]]:
    """Greedy-decode every image in the given split and score against its captions.

    ``image_ids`` overrides the split selection with an explicit id list.
    References are the stored captions with markers stripped; the generated
    text comes back marker-free already. Returns the corpus report plus one
    row per image for the caption dump.
    """
    from .decoding import greedy_caption

    if image_ids is None:
        image_ids = corpus.ids_for_split(split)
        if not image_ids:
            raise EvaluationError(f"no images in split {split!r}")
    else:
        image_ids = list(image_ids)
        if not image_ids:
            raise EvaluationError("empty image id list")
        for image_id in image_ids:
            if image_id not in corpus.entries:
                raise EvaluationError(f"unknown image id: {image_id!r}")
    rows = []
    for image_id in image_ids:
        if image_id not in feature_cache:
            raise EvaluationError(f"no cached feature for image {image_id!r}")
        result = greedy_caption(model, feature_cache[image_id], vocab, max_len)
        refs = tuple(strip_markers(text) for text in corpus.entries[image_id])
        rows.append(CaptionRow(image_id, result.text, refs))
    report = score_texts(
        [row.candidate for row in rows],
        [row.references for row in rows],
        smooth_eps=smooth_eps,
    )
    return report, rows


def annotate_errors(rows, annotations) -> tuple[list[tuple[CaptionRow, tuple[str, ...]]], dict]:
    """Attach error-category labels to caption rows.

    Each row gains the sorted tuple of its categories; the summary counts one
    occurrence per (image, category) pair, duplicates collapsed. Annotations
    naming an image absent from the report raise.
    """
    known = {row.image_id for row in rows}
    per_image: dict[str, set[str]] = {}
    for ann in annotations:
        if ann.image_id not in known:
            raise EvaluationError(f"annotation for unknown image {ann.image_id!r}")
        per_image.setdefault(ann.image_id, set()).add(ann.category)
    annotated = [
        (row, tuple(sorted(per_image.get(row.image_id, ())))) for row in rows
    ]
    counts = {cat: 0 for cat in ERROR_CATEGORIES}
    for cats in per_image.values():
        for cat in cats:
            counts[cat] += 1
    return annotated, counts


def load_annotations(path) -> list[ErrorAnnotation]:
    """Read `image_id,category,note` CSV rows (no header) into annotations."""
    import csv
    from pathlib import Path

    path = Path(path)
    if not path.exists():
        raise EvaluationError(f"annotation file not found: {path}")
    annotations = []
    with path.open(encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip():
                continue
            if len(row) < 2:
                raise EvaluationError(f"{path}:{lineno}: expected image_id,category[,note]")
            note = row[2] if len(row) > 2 else ""
            annotations.append(ErrorAnnotation(row[0], row[1], note))
    return annotations
