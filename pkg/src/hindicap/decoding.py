"""Greedy caption generation with marker-based stopping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import END_TOKEN, START_TOKEN, Vocabulary
from .model import CaptionModel, forward_step

STOP_ENDSEQ = "endseq"
STOP_MAX_LEN = "max_len"


@dataclass(frozen=True)
class DecodeResult:
    text: str
    token_count: int
    stop_reason: str

    def __post_init__(self):
        words = self.text.split()
        if START_TOKEN in words or END_TOKEN in words:
            raise ValueError("decoded text must not contain marker tokens")
        if self.token_count != len(words):
            raise ValueError("token_count does not match the text")
        if self.stop_reason not in (STOP_ENDSEQ, STOP_MAX_LEN):
            raise ValueError(f"unknown stop reason {self.stop_reason!r}")


def greedy_caption(model: CaptionModel, feature, vocab: Vocabulary, max_len: int) -> DecodeResult:
    """Generate one caption by repeated argmax next-word selection.

    The prefix starts as [startseq]; each step appends the highest-probability
    word (ties broken toward the lowest index, padding index 0 never emitted)
    until the end marker is chosen or the prefix fills max_len. The returned
    text has both markers stripped.
    """
    if vocab.size != model.config.vocab_size:
        raise ValueError(
            f"vocabulary size {vocab.size} != model vocab_size {model.config.vocab_size}"
        )
    if max_len < 2:
        raise ValueError(f"max_len must be >= 2, got {max_len}")
    start_index = vocab.start_index
    end_index = vocab.end_index
    prefix = [start_index]
    stop_reason = STOP_MAX_LEN
    while len(prefix) < max_len:
        probs = forward_step(model, feature, prefix)
        # index 0 is padding, never a word; np.argmax takes the first
        # (lowest-index) position on ties
        next_index = int(np.argmax(probs[1:])) + 1
        if next_index == end_index:
            stop_reason = STOP_ENDSEQ
            break
        prefix.append(next_index)
    # marker words stay in the prefix (they condition later steps) but are
    # stripped from the emitted text
    words = [vocab.index_to_word[i] for i in prefix[1:] if i != start_index]
    return DecodeResult(" ".join(words), len(words), stop_reason)
