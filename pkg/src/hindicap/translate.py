"""Machine-translation of caption files through pluggable clients.

Two clients ship: an HTTP client for a cloud-translation-style REST endpoint
(key from the TRANSLATE_API_KEY environment variable) and an offline
dictionary client for tests and dry runs. translate_corpus is line-resumable:
lines already present in the output are never re-sent, and an interrupted run
followed by a rerun converges to the same file as an uninterrupted one.
"""

from __future__ import annotations

import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import CaptionRecord, load_token_file
from .errors import DataError
from .ioutil import atomic_write_text

_LANG_TAG = re.compile(r"^[A-Za-z]{2,8}(-[A-Za-z0-9]{1,8})*$")

API_KEY_ENV = "TRANSLATE_API_KEY"


class TranslationError(DataError):
    """Base translation failure. ``retryable`` marks transient kinds."""

    retryable = False


class AuthenticationError(TranslationError):
    retryable = False


class QuotaError(TranslationError):
    retryable = True


class TranslationTimeout(TranslationError):
    retryable = True


class ServiceError(TranslationError):
    """Server-side failure (5xx); worth retrying."""

    retryable = True


class PartialTranslationError(TranslationError):
    """Some sentences in a batch failed; ``indices`` says which.

    ``translations`` optionally carries the successful outputs (None at the
    failed slots) so callers can keep them.
    """

    def __init__(self, message: str, indices, translations=None):
        super().__init__(message)
        self.indices = tuple(indices)
        self.translations = list(translations) if translations is not None else None


@dataclass(frozen=True)
class TranslationRequest:
    sentences: tuple[str, ...]
    source_lang: str = "en"
    target_lang: str = "hi"

    def __post_init__(self):
        object.__setattr__(self, "sentences", tuple(self.sentences))
        if not self.sentences:
            raise ValueError("a translation request needs at least one sentence")
        for tag in (self.source_lang, self.target_lang):
            if not _LANG_TAG.match(tag):
                raise ValueError(f"malformed language tag {tag!r}")


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 4
    base_delay: float = 0.5
    max_delay: float = 8.0
    sleep: "callable" = time.sleep

    def delay(self, attempt: int) -> float:
        return min(self.max_delay, self.base_delay * (2 ** attempt))


class DictionaryTranslator:
    """Offline lookup-table client. Thread-safe (read-only after build).

    Tries a whole-sentence lookup first, then word-by-word. Unknown words are
    kept as-is, or reported via PartialTranslationError with ``strict=True``.
    """

    max_batch_size = 1000

    def __init__(self, table: dict, strict: bool = False):
        self.table = dict(table)
        self.strict = strict
        self.calls = 0
        self._lock = threading.Lock()

    def translate_batch(self, sentences, source_lang: str, target_lang: str) -> list[str]:
        with self._lock:
            self.calls += 1
        out = []
        failed = []
        for i, sentence in enumerate(sentences):
            if sentence in self.table:
                out.append(self.table[sentence])
                continue
            words = sentence.split()
            if self.strict and any(w not in self.table for w in words):
                failed.append(i)
                out.append(None)
            else:
                out.append(" ".join(self.table.get(w, w) for w in words))
        if failed:
            raise PartialTranslationError(
                f"{len(failed)} sentence(s) missing from the dictionary", failed, out
            )
        return out


class HttpTranslator:
    """REST client for a cloud-translation-style endpoint.

    POSTs ``{"q": [...], "source": .., "target": .., "format": "text"}`` with
    the API key as a query parameter and expects
    ``{"data": {"translations": [{"translatedText": ...}, ...]}}``.
    """

    max_batch_size = 100

    def __init__(self, endpoint: str, api_key: str | None = None, timeout: float = 30.0):
        if not endpoint:
            raise ValueError("endpoint URL is required")
        self.endpoint = endpoint
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout = timeout
        self.calls = 0
        self._lock = threading.Lock()

    def translate_batch(self, sentences, source_lang: str, target_lang: str) -> list[str]:
        import requests

        with self._lock:
            self.calls += 1
        params = {"key": self.api_key} if self.api_key else {}
        payload = {
            "q": list(sentences),
            "source": source_lang,
            "target": target_lang,
            "format": "text",
        }
        try:
            response = requests.post(
                self.endpoint, params=params, json=payload, timeout=self.timeout
            )
        except requests.Timeout as exc:
            raise TranslationTimeout(f"translation request timed out: {exc}") from exc
        except requests.ConnectionError as exc:
            raise ServiceError(f"cannot reach translation endpoint: {exc}") from exc

        if response.status_code in (401, 403):
            raise AuthenticationError(
                f"translation service rejected the API key (HTTP {response.status_code})"
            )
        if response.status_code == 429:
            raise QuotaError("translation quota exceeded (HTTP 429)")
        if response.status_code >= 500:
            raise ServiceError(f"translation service error (HTTP {response.status_code})")
        if response.status_code != 200:
            raise TranslationError(
                f"unexpected translation response HTTP {response.status_code}"
            )
        try:
            items = response.json()["data"]["translations"]
            texts = [item["translatedText"] for item in items]
        except (KeyError, TypeError, ValueError) as exc:
            raise TranslationError(f"malformed translation response: {exc}") from exc
        if len(texts) != len(sentences):
            raise TranslationError(
                f"requested {len(sentences)} translations, got {len(texts)}"
            )
        return texts


def translate_batch(client, request: TranslationRequest, policy: RetryPolicy = RetryPolicy()) -> list[str]:
    """One client call with exponential-backoff retries on transient failures."""
    limit = getattr(client, "max_batch_size", None)
    if limit is not None and len(request.sentences) > limit:
        raise ValueError(
            f"batch of {len(request.sentences)} exceeds client limit {limit}"
        )
    last: TranslationError | None = None
    for attempt in range(policy.max_attempts):
        try:
            out = client.translate_batch(
                request.sentences, request.source_lang, request.target_lang
            )
        except TranslationError as exc:
            if not exc.retryable:
                raise
            last = exc
            if attempt + 1 < policy.max_attempts:
                policy.sleep(policy.delay(attempt))
            continue
        if len(out) != len(request.sentences):
            raise TranslationError(
                f"client returned {len(out)} translations for "
                f"{len(request.sentences)} sentences"
            )
        return list(out)
    raise last


@dataclass
class TranslationSummary:
    total: int
    translated: int = 0
    reused: int = 0
    failures: list = field(default_factory=list)  # (image_id, caption_index, message)
    client_batches: int = 0

    @property
    def ok(self) -> bool:
        return not self.failures


def _chunks(seq, size):
    for start in range(0, len(seq), size):
        yield seq[start : start + size]


def translate_corpus(
    client,
    input_path,
    output_path,
    source_lang: str = "en",
    target_lang: str = "hi",
    batch_size: int = 100,
    policy: RetryPolicy = RetryPolicy(),
    max_inflight: int = 1,
) -> TranslationSummary:
    """Translate a token file line by line, resumably.

    Lines whose (image_id, caption index) already appear in the output are
    reused without a client call. New translations are appended and flushed
    batch by batch, so an interrupt never corrupts the file; once every line
    is present the output is rewritten atomically in input order.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if max_inflight < 1:
        raise ValueError(f"max_inflight must be >= 1, got {max_inflight}")
    records = load_token_file(input_path).records

    output_path = Path(output_path)
    done: dict[tuple[str, int], str] = {}
    if output_path.exists():
        for rec in load_token_file(output_path).records:
            done[(rec.image_id, rec.caption_index)] = rec.text

    summary = TranslationSummary(total=len(records))
    pending: list[CaptionRecord] = []
    for rec in records:
        if (rec.image_id, rec.caption_index) in done:
            summary.reused += 1
        else:
            pending.append(rec)

    if pending:
        batches = list(_chunks(pending, batch_size))
        output_path.parent.mkdir(parents=True, exist_ok=True)
        with open(output_path, "a", encoding="utf-8") as out, ThreadPoolExecutor(
            max_workers=max_inflight
        ) as pool:
            futures = {
                pool.submit(
                    translate_batch,
                    client,
                    TranslationRequest(
                        tuple(r.text for r in chunk), source_lang, target_lang
                    ),
                    policy,
                ): chunk
                for chunk in batches
            }
            # consuming futures here keeps all file writes on this one thread
            for future in as_completed(futures):
                chunk = futures[future]
                summary.client_batches += 1
                try:
                    texts = future.result()
                except PartialTranslationError as exc:
                    failed = set(exc.indices)
                    if exc.translations is not None:
                        texts = list(exc.translations)
                    else:
                        texts = [None] * len(chunk)
                    for i, rec in enumerate(chunk):
                        if i in failed:
                            summary.failures.append(
                                (rec.image_id, rec.caption_index, str(exc))
                            )
                            texts[i] = None
                except TranslationError as exc:
                    for rec in chunk:
                        summary.failures.append(
                            (rec.image_id, rec.caption_index, str(exc))
                        )
                    continue
                for rec, text in zip(chunk, texts):
                    if text is None:
                        continue
                    if not text.strip():
                        summary.failures.append(
                            (rec.image_id, rec.caption_index, "empty translation")
                        )
                        continue
                    done[(rec.image_id, rec.caption_index)] = text
                    out.write(f"{rec.image_id}#{rec.caption_index}\t{text}\n")
                    summary.translated += 1
                out.flush()

    if summary.ok and all((r.image_id, r.caption_index) in done for r in records):
        # canonical form: input order, one line per input record
        lines = [
            f"{r.image_id}#{r.caption_index}\t{done[(r.image_id, r.caption_index)]}"
            for r in records
        ]
        atomic_write_text(output_path, "\n".join(lines) + "\n")
    summary.failures.sort()
    return summary


def load_dictionary(path) -> dict:
    """JSON object file mapping source sentences/words to translations."""
    import json

    path = Path(path)
    if not path.exists():
        raise TranslationError(f"dictionary file not found: {path}")
    try:
        table = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TranslationError(f"malformed dictionary {path}: {exc}") from exc
    if not isinstance(table, dict):
        raise TranslationError(f"dictionary {path} must be a JSON object")
    return table
