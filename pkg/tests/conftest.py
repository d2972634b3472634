"""Shared fixtures: the 8-image memorization corpus and stub feature cache."""

import pytest

from hindicap.corpus import (
    Corpus,
    build_vocabulary,
    clean_caption,
    max_caption_length,
    wrap_markers,
)
from hindicap.features import FeatureCache, stub_extract

# one caption per image, heavy word reuse: 22 distinct words incl. markers,
# wrapped lengths 6..8
FIXTURE_CAPTIONS = {
    "img1.jpg": "एक लड़का पानी में कूदता है",
    "img2.jpg": "दो कुत्ते घास पर दौड़ते हैं",
    "img3.jpg": "एक आदमी पहाड़ पर चढ़ता है",
    "img4.jpg": "लड़का घास पर बैठता है",
    "img5.jpg": "एक लड़की पानी में तैरती है",
    "img6.jpg": "कुत्ते बर्फ पर दौड़ते हैं",
    "img7.jpg": "आदमी पानी में है",
    "img8.jpg": "लड़की घास पर बैठती है",
}

FIXTURE_DIM = 64
FIXTURE_FEATURE_SEED = 11

# words for building randomized captions in property tests
HINDI_WORDS = [
    "एक", "लड़का", "लड़की", "आदमी", "औरत", "कुत्ता", "पानी", "घास",
    "पहाड़", "बर्फ", "गेंद", "में", "पर", "से", "दौड़ता", "कूदता",
    "खेलता", "बैठता", "चढ़ता", "है",
]


def build_fixture_corpus() -> Corpus:
    return Corpus(
        {k: [wrap_markers(clean_caption(v))] for k, v in FIXTURE_CAPTIONS.items()}
    )


@pytest.fixture(scope="session")
def fixture_corpus():
    return build_fixture_corpus()


@pytest.fixture(scope="session")
def fixture_vocab(fixture_corpus):
    return build_vocabulary(fixture_corpus)


@pytest.fixture(scope="session")
def fixture_max_len(fixture_corpus):
    return max_caption_length(fixture_corpus)


@pytest.fixture(scope="session")
def fixture_cache(fixture_corpus):
    feats = [
        stub_extract(i, FIXTURE_DIM, seed=FIXTURE_FEATURE_SEED)
        for i in fixture_corpus.image_ids
    ]
    return FeatureCache(feats, "stub", FIXTURE_DIM)


# one visible line per acceptance criterion, printed even under capture
ACCEPTANCE_LINES = []


def record_acceptance(line: str):
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
