"""BLEU scoring tests against an independent brute-force oracle.

The oracle below was written first, straight from the metric's definition,
using nothing from the package: plain dicts, plain loops, math.exp/log. The
implementation must match it to 1e-9 on randomized corpora.
"""

import math

import numpy as np
import pytest

from hindicap.evaluation import (
    BleuReport,
    CaptionRow,
    ErrorAnnotation,
    EvaluationError,
    annotate_errors,
    brevity_penalty,
    closest_reference_length,
    corpus_bleu,
    load_annotations,
    modified_precision,
    ngram_counts,
    score_texts,
)

# --------------------------------------------------------------- oracle


def oracle_ngrams(tokens, n):
    grams = {}
    for i in range(len(tokens) - n + 1):
        g = tuple(tokens[i : i + n])
        grams[g] = grams.get(g, 0) + 1
    return grams


def oracle_clipped(candidate, references, n):
    cand = oracle_ngrams(candidate, n)
    clipped = 0
    for gram, count in cand.items():
        best = 0
        for ref in references:
            c = oracle_ngrams(ref, n).get(gram, 0)
            if c > best:
                best = c
        clipped += min(count, best)
    total = 0
    for count in cand.values():
        total += count
    return clipped, total


def oracle_bleu(candidates, references, max_n=4):
    """Cumulative corpus BLEU-1..max_n from the definition."""
    clipped = [0] * max_n
    totals = [0] * max_n
    c_len = 0
    r_len = 0
    for cand, refs in zip(candidates, references):
        c_len += len(cand)
        # effective reference length: closest, ties to the shorter
        best = None
        for ref in refs:
            d = abs(len(ref) - len(cand))
            if best is None or d < best[0] or (d == best[0] and len(ref) < best[1]):
                best = (d, len(ref))
        r_len += best[1]
        for n in range(1, max_n + 1):
            c, t = oracle_clipped(cand, refs, n)
            clipped[n - 1] += c
            totals[n - 1] += t
    if c_len == 0:
        bp = 0.0
    elif c_len > r_len:
        bp = 1.0
    else:
        bp = math.exp(1.0 - r_len / c_len)
    scores = []
    for n in range(1, max_n + 1):
        ps = []
        for k in range(n):
            ps.append(clipped[k] / totals[k] if totals[k] else 0.0)
        if any(p == 0.0 for p in ps):
            scores.append(0.0)
        else:
            scores.append(bp * math.exp(sum(math.log(p) for p in ps) / n))
    return scores, bp


def random_corpus(rng, max_segments=10, max_tokens=12, vocab=8, max_refs=5):
    words = [f"w{i}" for i in range(vocab)]
    n_seg = int(rng.integers(1, max_segments + 1))
    candidates, references = [], []
    for _ in range(n_seg):
        c_len = int(rng.integers(0, max_tokens + 1))
        candidates.append([words[int(i)] for i in rng.integers(0, vocab, c_len)])
        refs = []
        for _ in range(int(rng.integers(1, max_refs + 1))):
            r_len = int(rng.integers(1, max_tokens + 1))
            refs.append([words[int(i)] for i in rng.integers(0, vocab, r_len)])
        references.append(refs)
    return candidates, references


# --------------------------------------------------------------- units


class TestNgramCounts:
    def test_unigrams(self):
        assert ngram_counts(["a", "b", "a"], 1) == {("a",): 2, ("b",): 1}

    def test_bigrams(self):
        assert ngram_counts(["a", "b", "a"], 2) == {("a", "b"): 1, ("b", "a"): 1}

    def test_short_sequence(self):
        assert ngram_counts(["a"], 2) == {}

    def test_total_count(self):
        assert sum(ngram_counts(list("abcde"), 3).values()) == 3

    def test_n_below_one(self):
        with pytest.raises(ValueError):
            ngram_counts(["a"], 0)


class TestModifiedPrecision:
    def test_identical(self):
        c, t = modified_precision(["एक", "लड़का"], [["एक", "लड़का"]], 1)
        assert (c, t) == (2, 2)

    def test_disjoint(self):
        c, t = modified_precision(["क", "ख"], [["ग", "घ"]], 1)
        assert (c, t) == (0, 2)

    def test_overgeneration_two_sevenths(self):
        candidate = "the the the the the the the".split()
        references = [
            "the cat is on the mat".split(),
            "there is a cat on the mat".split(),
        ]
        assert modified_precision(candidate, references, 1) == (2, 7)

    def test_empty_references(self):
        with pytest.raises(EvaluationError):
            modified_precision(["a"], [], 1)

    def test_matches_oracle_on_random_pairs(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            cands, refs = random_corpus(rng, max_segments=1)
            for n in range(1, 5):
                assert modified_precision(cands[0], refs[0], n) == oracle_clipped(
                    cands[0], refs[0], n
                )


class TestBrevityPenalty:
    def test_equal_lengths(self):
        assert brevity_penalty(10, 10) == 1.0

    def test_half_length(self):
        np.testing.assert_allclose(brevity_penalty(5, 10), math.exp(-1.0), rtol=0, atol=1e-15)

    def test_empty_candidate(self):
        assert brevity_penalty(0, 7) == 0.0

    def test_longer_candidate(self):
        assert brevity_penalty(11, 10) == 1.0

    def test_closest_reference_tie_goes_shorter(self):
        assert closest_reference_length(5, [3, 7]) == 3
        assert closest_reference_length(5, [7, 3]) == 3
        assert closest_reference_length(5, [4, 6, 9]) == 4


class TestCorpusBleu:
    def test_perfect_match_all_ones(self):
        cands = [["एक", "लड़का", "पानी", "में"], ["दो", "कुत्ते", "घास", "पर"]]
        refs = [[c] for c in cands]
        report = corpus_bleu(cands, refs)
        assert report.bleu == (1.0, 1.0, 1.0, 1.0)
        assert report.brevity_penalty == 1.0

    def test_disjoint_all_zero(self):
        report = corpus_bleu([["क", "ख"]], [[["ग", "घ"]]])
        assert report.bleu == (0.0, 0.0, 0.0, 0.0)

    def test_length_mismatch(self):
        with pytest.raises(EvaluationError):
            corpus_bleu([["a"]], [])

    def test_empty_corpus(self):
        with pytest.raises(EvaluationError):
            corpus_bleu([], [])

    def test_oracle_equivalence_100_random_corpora(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            cands, refs = random_corpus(rng)
            report = corpus_bleu(cands, refs)
            expected, bp = oracle_bleu(cands, refs)
            np.testing.assert_allclose(report.bleu, expected, rtol=0, atol=1e-9)
            np.testing.assert_allclose(report.brevity_penalty, bp, rtol=0, atol=1e-9)

    def test_joint_permutation_invariance(self):
        rng = np.random.default_rng(3)
        cands, refs = random_corpus(rng, max_segments=8)
        base = corpus_bleu(cands, refs)
        order = rng.permutation(len(cands))
        shuffled = corpus_bleu([cands[i] for i in order], [refs[i] for i in order])
        np.testing.assert_allclose(shuffled.bleu, base.bleu, rtol=0, atol=1e-12)

    def test_duplication_invariance(self):
        rng = np.random.default_rng(4)
        cands, refs = random_corpus(rng, max_segments=6)
        base = corpus_bleu(cands, refs)
        doubled = corpus_bleu(cands + cands, refs + refs)
        np.testing.assert_allclose(doubled.bleu, base.bleu, rtol=0, atol=1e-12)

    def test_scores_in_unit_interval(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            cands, refs = random_corpus(rng)
            report = corpus_bleu(cands, refs)
            assert all(0.0 <= b <= 1.0 for b in report.bleu)

    def test_smoothing_lifts_zero_orders(self):
        report = corpus_bleu([["क", "ख"]], [[["क", "ग"]]], smooth_eps=0.1)
        # bigram precision is (0 + eps) / (1 + eps) instead of a hard zero
        assert report.bleu[1] > 0.0
        plain = corpus_bleu([["क", "ख"]], [[["क", "ग"]]])
        assert plain.bleu[1] == 0.0

    def test_score_texts_cleans_both_sides(self):
        report = score_texts(["एक लड़का।"], [["एक लड़का"]])
        assert report.bleu[0] == 1.0

    def test_report_validation(self):
        with pytest.raises(EvaluationError):
            BleuReport((1.2, 0, 0, 0), (0, 0, 0, 0), 1.0, 1, 1)


class TestErrorAnnotations:
    def rows(self):
        return [
            CaptionRow("img1.jpg", "एक लड़का", ("एक लड़का",)),
            CaptionRow("img2.jpg", "दो कुत्ते", ("दो कुत्ते",)),
        ]

    def test_empty_annotations_unchanged(self):
        annotated, counts = annotate_errors(self.rows(), [])
        assert [cats for _, cats in annotated] == [(), ()]
        assert all(v == 0 for v in counts.values())

    def test_one_per_category(self):
        categories = [
            "classification", "numbering", "colour_identification",
            "gender_recognition", "object_occurrence",
        ]
        anns = [ErrorAnnotation("img1.jpg", c) for c in categories]
        _, counts = annotate_errors(self.rows(), anns)
        assert all(counts[c] == 1 for c in categories)

    def test_duplicate_category_counted_once(self):
        anns = [
            ErrorAnnotation("img1.jpg", "numbering", "a"),
            ErrorAnnotation("img1.jpg", "numbering", "b"),
        ]
        annotated, counts = annotate_errors(self.rows(), anns)
        assert counts["numbering"] == 1
        assert annotated[0][1] == ("numbering",)

    def test_unknown_image(self):
        with pytest.raises(EvaluationError):
            annotate_errors(self.rows(), [ErrorAnnotation("ghost.jpg", "numbering")])

    def test_unknown_category(self):
        with pytest.raises(EvaluationError):
            ErrorAnnotation("img1.jpg", "misc")

    def test_load_annotations(self, tmp_path):
        p = tmp_path / "ann.csv"
        p.write_text(
            "img1.jpg,numbering,counted two dogs\nimg2.jpg,gender_recognition,\n",
            encoding="utf-8",
        )
        anns = load_annotations(p)
        assert len(anns) == 2
        assert anns[0].category == "numbering"
        assert anns[0].note == "counted two dogs"
