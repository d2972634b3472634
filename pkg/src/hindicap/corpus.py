"""Caption corpus handling: token files, Devanagari-aware cleaning, vocabularies,
and fixed-length integer encoding.

Token files follow the Flickr8k layout: one ``image_id#k<TAB>caption`` line per
caption, five captions per image in the full dataset. Cleaning removes
punctuation (Unicode P* categories, including danda/double danda) and digits
(Unicode Nd), keeps stop words, and collapses whitespace. Captions are wrapped
in ``startseq``/``endseq`` markers before vocabulary building so the decoder
can learn where sentences begin and end.
"""

from __future__ import annotations

import random
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError
from .ioutil import atomic_write_text

START_TOKEN = "startseq"
END_TOKEN = "endseq"

TRAIN = "train"
TEST = "test"

# Devanagari danda and double danda; both are already category Po but are
# listed explicitly so the cleaning contract does not hinge on that.
_DANDAS = ("।", "॥")


class CorpusError(DataError):
    pass


class OutOfVocabularyError(CorpusError):
    pass


@dataclass(frozen=True)
class CaptionRecord:
    """One caption line from a token file."""

    image_id: str
    caption_index: int
    text: str


@dataclass(frozen=True)
class LoadResult:
    """Parsed token file plus a count of malformed lines that were skipped."""

    records: tuple[CaptionRecord, ...]
    skipped: int


@dataclass
class Corpus:
    """Image-id -> ordered captions, with a train/test label per image.

    A freshly loaded corpus labels every image ``train``; use
    :func:`split_corpus` to assign the real partition. Instances are treated
    as immutable after construction: operations return new corpora.
    """

    entries: dict[str, list[str]]
    split: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.split:
            self.split = {image_id: TRAIN for image_id in self.entries}
        for image_id, captions in self.entries.items():
            if not captions:
                raise CorpusError(f"image {image_id!r} has no captions")
        if set(self.split) != set(self.entries):
            raise CorpusError("split labels do not cover exactly the corpus image ids")

    @classmethod
    def from_records(cls, records) -> "Corpus":
        entries: dict[str, list[str]] = {}
        for rec in records:
            entries.setdefault(rec.image_id, []).append(rec.text)
        if not entries:
            raise CorpusError("no caption records")
        return cls(entries)

    @property
    def image_ids(self) -> list[str]:
        return list(self.entries)

    def ids_for_split(self, split: str) -> list[str]:
        return [i for i in self.entries if self.split[i] == split]

    def captions(self) -> list[str]:
        return [text for caps in self.entries.values() for text in caps]

    def map_texts(self, fn) -> "Corpus":
        """New corpus with ``fn`` applied to every caption; split kept."""
        return Corpus(
            {i: [fn(t) for t in caps] for i, caps in self.entries.items()},
            dict(self.split),
        )


@dataclass(frozen=True)
class Vocabulary:
    """Bidirectional word <-> index mapping. Index 0 is reserved for padding."""

    word_to_index: dict[str, int]
    index_to_word: dict[int, str]

    def __post_init__(self):
        if 0 in self.index_to_word:
            raise CorpusError("index 0 is reserved for padding")
        if len(self.word_to_index) != len(self.index_to_word):
            raise CorpusError("word/index maps are not inverse bijections")
        for word, idx in self.word_to_index.items():
            if idx < 1 or self.index_to_word.get(idx) != word:
                raise CorpusError("word/index maps are not inverse bijections")

    @property
    def size(self) -> int:
        """Number of words plus the padding slot."""
        return len(self.word_to_index) + 1

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_index

    def index(self, word: str) -> int:
        try:
            return self.word_to_index[word]
        except KeyError:
            raise OutOfVocabularyError(f"word not in vocabulary: {word!r}") from None

    @property
    def start_index(self) -> int:
        return self.index(START_TOKEN)

    @property
    def end_index(self) -> int:
        return self.index(END_TOKEN)


@dataclass(frozen=True)
class EncodedCaption:
    """Integer token sequence right-padded with zeros to a fixed length."""

    tokens: tuple[int, ...]
    true_length: int

    def __post_init__(self):
        if not 0 <= self.true_length <= len(self.tokens):
            raise CorpusError("true_length out of range")
        if any(t == 0 for t in self.tokens[: self.true_length]):
            raise CorpusError("padding index 0 inside the real token span")
        if any(t != 0 for t in self.tokens[self.true_length :]):
            raise CorpusError("nonzero token after true_length")


def load_token_file(path, strict: bool = False) -> LoadResult:
    """Parse a ``image_id#k<TAB>caption`` token file.

    Malformed lines are skipped and counted in the result (or raise with
    ``strict=True``). Blank lines are ignored. Order is preserved.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"token file not found: {path}")
    records: list[CaptionRecord] = []
    skipped = 0
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        rec = _parse_token_line(line)
        if rec is None:
            if strict:
                raise CorpusError(f"{path}:{lineno}: malformed token line: {line!r}")
            skipped += 1
            continue
        records.append(rec)
    return LoadResult(tuple(records), skipped)


def _parse_token_line(line: str) -> CaptionRecord | None:
    head, sep, text = line.partition("\t")
    if not sep or not text.strip():
        return None
    image_id, sep, index_part = head.rpartition("#")
    if not sep or not image_id:
        return None
    try:
        caption_index = int(index_part)
    except ValueError:
        return None
    return CaptionRecord(image_id, caption_index, text.strip())


def clean_caption(text: str) -> str:
    """Remove punctuation and digits, collapse whitespace, keep stop words.

    NFC-normalizes first. Punctuation and digit characters are replaced by a
    space (so they never glue neighbouring words together) and runs of
    whitespace collapse to single spaces. Total and idempotent.
    """
    text = unicodedata.normalize("NFC", text)
    chars = []
    for ch in text:
        cat = unicodedata.category(ch)
        if cat.startswith("P") or cat == "Nd" or ch in _DANDAS:
            chars.append(" ")
        else:
            chars.append(ch)
    return " ".join("".join(chars).split())


def wrap_markers(text: str) -> str:
    """``startseq <text> endseq``; an empty text yields ``startseq endseq``."""
    return " ".join([START_TOKEN, *text.split(), END_TOKEN])


def strip_markers(text: str) -> str:
    """Drop marker tokens from a wrapped caption."""
    return " ".join(t for t in text.split() if t not in (START_TOKEN, END_TOKEN))


def reduce_captions(corpus: Corpus, k: int) -> Corpus:
    """Keep the first ``k`` captions (file order) of every image."""
    min_count = min(len(caps) for caps in corpus.entries.values())
    if not 1 <= k <= min_count:
        raise ValueError(f"k={k} out of range [1, {min_count}]")
    return Corpus(
        {i: caps[:k] for i, caps in corpus.entries.items()},
        dict(corpus.split),
    )


def build_vocabulary(corpus: Corpus, min_count: int = 1) -> Vocabulary:
    """Index every train-split token, most frequent first (ties: lexicographic).

    Indices start at 1; 0 stays reserved for padding. Deterministic: the same
    corpus always produces the identical mapping.
    """
    counts: Counter[str] = Counter()
    for image_id in corpus.ids_for_split(TRAIN):
        for caption in corpus.entries[image_id]:
            counts.update(caption.split())
    if not counts:
        raise CorpusError("cannot build a vocabulary from an empty train split")
    words = sorted(
        (w for w, c in counts.items() if c >= min_count),
        key=lambda w: (-counts[w], w),
    )
    if not words:
        raise CorpusError(f"no word reaches min_count={min_count}")
    word_to_index = {w: i for i, w in enumerate(words, start=1)}
    return Vocabulary(word_to_index, {i: w for w, i in word_to_index.items()})


def max_caption_length(corpus: Corpus) -> int:
    """Largest whitespace-token count over all captions."""
    lengths = [len(text.split()) for text in corpus.captions()]
    if not lengths:
        raise CorpusError("empty corpus")
    return max(lengths)


def encode_caption(text: str, vocab: Vocabulary, max_len: int) -> EncodedCaption:
    """Map words to indices and right-pad with zeros to exactly ``max_len``."""
    words = text.split()
    if len(words) > max_len:
        raise CorpusError(
            f"caption has {len(words)} tokens, exceeding max_len={max_len}"
        )
    indices = tuple(vocab.index(w) for w in words)
    return EncodedCaption(indices + (0,) * (max_len - len(words)), len(words))


def decode_tokens(tokens, vocab: Vocabulary, strip_markers: bool = False) -> str:
    """Inverse of :func:`encode_caption`; zeros (padding) are always dropped."""
    words = []
    for t in tokens:
        t = int(t)
        if t == 0:
            continue
        word = vocab.index_to_word.get(t)
        if word is None:
            raise CorpusError(f"invalid vocabulary index: {t}")
        words.append(word)
    if strip_markers:
        words = [w for w in words if w not in (START_TOKEN, END_TOKEN)]
    return " ".join(words)


def split_corpus(
    corpus: Corpus,
    train_file=None,
    test_file=None,
    train_fraction: float | None = None,
    seed: int = 0,
) -> Corpus:
    """Assign train/test labels, from split files or a seeded random fraction.

    With split files the assignment copies them verbatim and the resulting
    corpus is restricted to the listed ids. With a fraction, ids are shuffled
    deterministically under ``seed``.
    """
    if train_file is not None or test_file is not None:
        if train_file is None or test_file is None:
            raise ValueError("both train and test split files are required")
        train_ids = _read_id_file(train_file)
        test_ids = _read_id_file(test_file)
        overlap = set(train_ids) & set(test_ids)
        if overlap:
            raise CorpusError(f"ids in both splits: {sorted(overlap)[:5]}")
        for image_id in (*train_ids, *test_ids):
            if image_id not in corpus.entries:
                raise CorpusError(f"split file references unknown id: {image_id!r}")
        keep = set(train_ids) | set(test_ids)
        split = {i: TRAIN for i in train_ids}
        split.update({i: TEST for i in test_ids})
        entries = {i: list(caps) for i, caps in corpus.entries.items() if i in keep}
        return Corpus(entries, {i: split[i] for i in entries})

    if train_fraction is None:
        raise ValueError("either split files or a train fraction is required")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train fraction must lie in (0, 1), got {train_fraction}")
    ids = list(corpus.entries)
    random.Random(seed).shuffle(ids)
    n_train = round(train_fraction * len(ids))
    if n_train < 1 or n_train >= len(ids):
        raise ValueError(
            f"fraction {train_fraction} leaves an empty split for {len(ids)} images"
        )
    split = {i: TRAIN for i in ids[:n_train]}
    split.update({i: TEST for i in ids[n_train:]})
    return Corpus(
        {i: list(caps) for i, caps in corpus.entries.items()},
        {i: split[i] for i in corpus.entries},
    )


def restrict_corpus(corpus: Corpus, image_ids) -> Corpus:
    """Keep only the given ids (split labels preserved)."""
    keep = list(dict.fromkeys(image_ids))
    for image_id in keep:
        if image_id not in corpus.entries:
            raise CorpusError(f"unknown image id: {image_id!r}")
    return Corpus(
        {i: list(corpus.entries[i]) for i in keep},
        {i: corpus.split[i] for i in keep},
    )


def read_id_file(path) -> list[str]:
    return _read_id_file(path)


def _read_id_file(path) -> list[str]:
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"split file not found: {path}")
    return [l.strip() for l in path.read_text(encoding="utf-8").splitlines() if l.strip()]


def save_processed_corpus(corpus: Corpus, path) -> None:
    """One ``image_id<TAB>caption`` line per caption, UTF-8."""
    lines = [
        f"{image_id}\t{text}"
        for image_id, caps in corpus.entries.items()
        for text in caps
    ]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_processed_corpus(path) -> Corpus:
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"processed corpus not found: {path}")
    entries: dict[str, list[str]] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        image_id, sep, text = line.partition("\t")
        if not sep or not text.strip():
            raise CorpusError(f"{path}:{lineno}: malformed processed line")
        entries.setdefault(image_id, []).append(text.strip())
    if not entries:
        raise CorpusError(f"processed corpus is empty: {path}")
    return Corpus(entries)


def save_vocabulary(vocab: Vocabulary, path) -> None:
    """One ``word<TAB>index`` line per word, UTF-8."""
    lines = [f"{w}\t{i}" for w, i in sorted(vocab.word_to_index.items(), key=lambda kv: kv[1])]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_vocabulary(path) -> Vocabulary:
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"vocabulary file not found: {path}")
    word_to_index: dict[str, int] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        word, sep, idx = line.partition("\t")
        if not sep:
            raise CorpusError(f"{path}:{lineno}: malformed vocabulary line")
        word_to_index[word] = int(idx)
    return Vocabulary(word_to_index, {i: w for w, i in word_to_index.items()})


def save_id_file(ids, path) -> None:
    atomic_write_text(path, "\n".join(ids) + "\n")
