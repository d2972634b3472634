"""Teacher-forced sample expansion, lazy batch streaming, and model fitting.

A wrapped caption of length L becomes L-1 (prefix, next word) samples. The
batch generator never materializes that expansion: it keeps only integer
token lists per caption plus (caption, prefix-length) keys, and builds the
padded prefix rows one batch at a time, so peak resident samples stay at one
batch. Training minimizes mean softmax cross-entropy with Adam.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .corpus import TRAIN, Corpus, EncodedCaption, Vocabulary
from .errors import DataError
from .ioutil import atomic_write_text
from .model import CaptionModel, ModelConfig, build_model, load_checkpoint, save_checkpoint

__all__ = [
    "TrainingSample",
    "TrainRunSpec",
    "Batch",
    "GeneratorStats",
    "BatchGenerator",
    "TrainResult",
    "RunResult",
    "RunAggregate",
    "make_training_samples",
    "train",
    "repeat_runs",
    "save_loss_history",
    "save_checkpoint",
    "load_checkpoint",
]


class TrainingError(DataError):
    pass


@dataclass(frozen=True)
class TrainingSample:
    """One teacher-forcing step: the words so far, and the word that follows."""

    image_id: str
    prefix: EncodedCaption
    target_word: int


@dataclass(frozen=True)
class TrainRunSpec:
    config: ModelConfig
    epochs: int
    batch_size: int = 64
    learning_rate: float = 1e-3
    repetitions: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.repetitions < 1:
            raise ValueError(f"repetitions must be >= 1, got {self.repetitions}")


def make_training_samples(caption: str, vocab: Vocabulary, max_len: int, image_id: str = "") -> list[TrainingSample]:
    """Expand one wrapped caption into its L-1 (prefix, target) samples."""
    indices = [vocab.index(w) for w in caption.split()]
    L = len(indices)
    if L < 2:
        raise TrainingError(f"caption needs at least 2 tokens to train on: {caption!r}")
    if L > max_len:
        raise TrainingError(f"caption has {L} tokens, exceeding max_len={max_len}")
    samples = []
    for i in range(1, L):
        prefix = EncodedCaption(tuple(indices[:i]) + (0,) * (max_len - i), i)
        samples.append(TrainingSample(image_id, prefix, indices[i]))
    return samples


@dataclass(frozen=True)
class Batch:
    image_ids: tuple[str, ...]
    features: np.ndarray  # (B, feature_dim) float32
    tokens: np.ndarray  # (B, max_len) int64, zero-padded
    lengths: np.ndarray  # (B,) true prefix lengths
    targets: np.ndarray  # (B,) next-word indices

    def __len__(self) -> int:
        return len(self.image_ids)


@dataclass
class GeneratorStats:
    batches: int = 0
    emitted: int = 0
    peak_resident: int = 0


class BatchGenerator:
    """Streams shuffled training batches with bounded memory.

    Shuffle order is a pure function of (seed, epoch_index); iterating the
    same epoch twice replays the identical batches. ``stats`` counts emitted
    samples and the peak number of materialized prefix rows.
    """

    def __init__(self, corpus: Corpus, feature_cache, vocab: Vocabulary,
                 batch_size: int, seed: int, max_len: int, split: str = TRAIN):
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        image_ids = corpus.ids_for_split(split)
        if not image_ids:
            raise TrainingError(f"no images in split {split!r}")
        self._captions: list[tuple[str, tuple[int, ...]]] = []
        for image_id in image_ids:
            if image_id not in feature_cache:
                raise TrainingError(f"no cached feature for image {image_id!r}")
            for caption in corpus.entries[image_id]:
                words = caption.split()
                if len(words) < 2:
                    raise TrainingError(
                        f"caption for {image_id!r} needs at least 2 tokens: {caption!r}"
                    )
                if len(words) > max_len:
                    raise TrainingError(
                        f"caption for {image_id!r} has {len(words)} tokens > max_len={max_len}"
                    )
                self._captions.append((image_id, tuple(vocab.index(w) for w in words)))
        # one key per (caption, prefix length) — the samples themselves are
        # only ever built per batch
        self._keys = [
            (ci, t)
            for ci, (_, indices) in enumerate(self._captions)
            for t in range(1, len(indices))
        ]
        self._cache = feature_cache
        self.batch_size = batch_size
        self.seed = seed
        self.max_len = max_len
        self.feature_dim = feature_cache.feature_dim
        self.stats = GeneratorStats()

    @property
    def total_samples(self) -> int:
        return len(self._keys)

    def epoch(self, epoch_index: int):
        order = np.random.default_rng([self.seed, epoch_index]).permutation(
            len(self._keys)
        )
        for start in range(0, len(order), self.batch_size):
            sel = order[start : start + self.batch_size]
            B = len(sel)
            features = np.zeros((B, self.feature_dim), dtype=np.float32)
            tokens = np.zeros((B, self.max_len), dtype=np.int64)
            lengths = np.zeros(B, dtype=np.int64)
            targets = np.zeros(B, dtype=np.int64)
            ids = []
            for row, key in enumerate(sel):
                ci, t = self._keys[key]
                image_id, indices = self._captions[ci]
                tokens[row, :t] = indices[:t]
                lengths[row] = t
                targets[row] = indices[t]
                features[row] = self._cache[image_id].vector
                ids.append(image_id)
            self.stats.batches += 1
            self.stats.emitted += B
            self.stats.peak_resident = max(self.stats.peak_resident, B)
            yield Batch(tuple(ids), features, tokens, lengths, targets)


@dataclass
class TrainResult:
    model: CaptionModel
    loss_history: list[float]


def train(model: CaptionModel, generator: BatchGenerator, spec: TrainRunSpec) -> TrainResult:
    """Fit with Adam on mean cross-entropy; one loss-history entry per epoch.

    Seeded: dropout draws come from the run seed, so a fixed seed reproduces
    the loss history exactly on the same platform.
    """
    if generator.feature_dim != spec.config.feature_dim:
        raise TrainingError(
            f"generator features have dim {generator.feature_dim}, "
            f"model expects {spec.config.feature_dim}"
        )
    torch.manual_seed(spec.seed)
    dtype = next(model.parameters()).dtype
    optimizer = torch.optim.Adam(
        model.parameters(), lr=spec.learning_rate, betas=(0.9, 0.999), eps=1e-8
    )
    history: list[float] = []
    for epoch in range(spec.epochs):
        model.train()
        total = 0.0
        count = 0
        for batch in generator.epoch(epoch):
            logits = model(
                torch.from_numpy(batch.features).to(dtype),
                torch.from_numpy(batch.tokens),
                torch.from_numpy(batch.lengths),
            )
            loss = F.cross_entropy(logits, torch.from_numpy(batch.targets))
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            value = float(loss.item())
            if not np.isfinite(value):
                raise TrainingError(
                    f"non-finite loss {value} at epoch {epoch + 1}, "
                    f"batch {generator.stats.batches} (lr={spec.learning_rate})"
                )
            total += value * len(batch)
            count += len(batch)
        if count == 0:
            raise TrainingError("generator yielded no samples")
        history.append(total / count)
    return TrainResult(model, history)


@dataclass
class RunResult:
    seed: int
    loss_history: list[float]
    report: "BleuReport"
    model: CaptionModel


@dataclass
class RunAggregate:
    runs: list[RunResult]
    mean_bleu: tuple[float, float, float, float]

    @property
    def per_run_bleu(self) -> list[tuple[float, ...]]:
        return [run.report.bleu for run in self.runs]


def repeat_runs(spec: TrainRunSpec, corpus: Corpus, feature_cache, vocab: Vocabulary,
                max_len: int, eval_split: str = "test", smooth_eps: float = 0.0) -> RunAggregate:
    """Train `repetitions` independent models (seed = base + run index) and
    aggregate their evaluation scores with a plain arithmetic mean."""
    from .evaluation import evaluate_model

    runs = []
    for run_index in range(spec.repetitions):
        run_seed = spec.seed + run_index
        config = dataclasses.replace(spec.config, seed=run_seed)
        run_spec = dataclasses.replace(spec, config=config, seed=run_seed)
        model = build_model(config)
        generator = BatchGenerator(
            corpus, feature_cache, vocab, spec.batch_size, run_seed, max_len
        )
        result = train(model, generator, run_spec)
        report, _ = evaluate_model(
            model, corpus, feature_cache, vocab, max_len,
            split=eval_split, smooth_eps=smooth_eps,
        )
        runs.append(RunResult(run_seed, result.loss_history, report, model))
    mean_bleu = tuple(
        sum(run.report.bleu[k] for run in runs) / len(runs) for k in range(4)
    )
    return RunAggregate(runs, mean_bleu)


def save_loss_history(history, path) -> None:
    """UTF-8 CSV with an `epoch,loss` header; epochs count from 1."""
    lines = ["epoch,loss"]
    lines += [f"{epoch},{loss!r}" for epoch, loss in enumerate(history, 1)]
    atomic_write_text(path, "\n".join(lines) + "\n")
