"""Merge encoder-decoder captioners: LSTM, BiLSTM, and attention-BiLSTM.

Both branches project into the same ``hidden_units`` width and are combined by
elementwise addition: the image branch is dropout + an affine map on the
feature vector, the text branch embeds the token prefix (padding index 0
masked) and runs it through a recurrent encoder. For the bidirectional
variants the two directions' final states are summed, keeping the width at
``hidden_units``. The attention variant scores every per-timestep state
(forward + backward outputs, summed) against the merged vector with a learned
affine, softmax-normalizes over the non-padded timesteps, and adds the
resulting context back onto the merged vector. A two-affine head with a
rectifier in between produces next-word logits over the vocabulary.

Recurrence runs over packed sequences, so padded positions can never leak
into the states regardless of direction.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .corpus import EncodedCaption
from .errors import DataError

LSTM = "lstm"
BILSTM = "bilstm"
ATT_BILSTM = "att-bilstm"
VARIANTS = (LSTM, BILSTM, ATT_BILSTM)

CHECKPOINT_MAGIC = b"HINDICAP"
CHECKPOINT_VERSION = 1


class CheckpointError(DataError):
    pass


def normalize_variant(name: str) -> str:
    key = name.strip().lower().replace("_", "-")
    aliases = {"attbilstm": ATT_BILSTM, "att-bi-lstm": ATT_BILSTM, "bi-lstm": BILSTM}
    key = aliases.get(key, key)
    if key not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; expected one of {VARIANTS}")
    return key


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    vocab_size: int
    max_len: int
    feature_dim: int
    embed_dim: int = 256
    hidden_units: int = 256
    dropout_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", normalize_variant(self.variant))
        if self.vocab_size < 3:
            raise ValueError(
                f"vocab_size must be >= 3 (padding plus both markers), got {self.vocab_size}"
            )
        if self.max_len < 2:
            raise ValueError(f"max_len must be >= 2, got {self.max_len}")
        if self.feature_dim < 1 or self.embed_dim < 1 or self.hidden_units < 1:
            raise ValueError("dimensions must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")


def _additive_attention(states, query, weight, bias, mask=None):
    """Shared attention math for the module and the standalone op.

    states: (B, T, H); query: (B, H); weight: (1, 2H); bias: (1,).
    Scores are a single learned affine on [state; query]; padded timesteps
    (mask False) are excluded from the softmax.
    """
    expanded = query.unsqueeze(1).expand(-1, states.shape[1], -1)
    scores = F.linear(torch.cat([states, expanded], dim=-1), weight, bias).squeeze(-1)
    if mask is not None:
        scores = scores.masked_fill(~mask, float("-inf"))
    weights = torch.softmax(scores, dim=-1)
    context = torch.bmm(weights.unsqueeze(1), states).squeeze(1)
    return context, weights


def attention_combine(states, query, score_weight, score_bias, valid_len=None):
    """Pool timestep states into one context vector for a single instance.

    states: (T, H) array-like; query: (H,). score_weight (1, 2H) and
    score_bias (1,) are the learned affine producing one scalar per timestep.
    ``valid_len`` masks out trailing (padded) timesteps. Returns
    (context (H,), weights (T,)) as numpy arrays in the input's float dtype.
    """
    states_arr = np.asarray(states)
    if states_arr.ndim != 2 or states_arr.shape[0] < 1:
        raise ValueError("states must be a nonempty (T, H) array")
    dtype = torch.float32 if states_arr.dtype == np.float32 else torch.float64
    s = torch.as_tensor(states_arr, dtype=dtype).unsqueeze(0)
    q = torch.as_tensor(np.asarray(query), dtype=dtype).unsqueeze(0)
    w = torch.as_tensor(np.asarray(score_weight), dtype=dtype).reshape(1, -1)
    b = torch.as_tensor(np.asarray(score_bias), dtype=dtype).reshape(1)
    if q.shape[1] != s.shape[2]:
        raise ValueError(f"query dim {q.shape[1]} != state dim {s.shape[2]}")
    if w.shape[1] != 2 * s.shape[2]:
        raise ValueError(f"score weight expects dim {w.shape[1]}, states give {2 * s.shape[2]}")
    mask = None
    if valid_len is not None:
        if not 1 <= valid_len <= s.shape[1]:
            raise ValueError(f"valid_len {valid_len} out of range [1, {s.shape[1]}]")
        mask = (torch.arange(s.shape[1]) < valid_len).unsqueeze(0)
    with torch.no_grad():
        context, weights = _additive_attention(s, q, w, b, mask)
    return context.squeeze(0).numpy(), weights.squeeze(0).numpy()


class CaptionModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        H = config.hidden_units
        self.image_dropout = nn.Dropout(config.dropout_rate)
        self.image_proj = nn.Linear(config.feature_dim, H)
        self.embedding = nn.Embedding(config.vocab_size, config.embed_dim, padding_idx=0)
        self.embed_dropout = nn.Dropout(config.dropout_rate)
        self.rnn = nn.LSTM(
            config.embed_dim,
            H,
            batch_first=True,
            bidirectional=config.variant in (BILSTM, ATT_BILSTM),
        )
        if config.variant == ATT_BILSTM:
            self.att_score = nn.Linear(2 * H, 1)
        self.head_hidden = nn.Linear(H, H)
        self.head_out = nn.Linear(H, config.vocab_size)

    def forward(self, features, tokens, lengths):
        """Next-word logits for a batch of (image feature, token prefix) pairs.

        features: (B, feature_dim); tokens: (B, T) int64 with zeros past each
        true length; lengths: (B,) true prefix lengths, all >= 1.
        """
        cfg = self.config
        if features.shape[-1] != cfg.feature_dim:
            raise ValueError(
                f"feature dim {features.shape[-1]} != model feature_dim {cfg.feature_dim}"
            )
        img = self.image_proj(self.image_dropout(features))

        emb = self.embed_dropout(self.embedding(tokens))
        packed = pack_padded_sequence(
            emb, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        out_packed, (h_n, _) = self.rnn(packed)
        H = cfg.hidden_units
        if cfg.variant == LSTM:
            text = h_n[-1]
        else:
            text = h_n[0] + h_n[1]  # forward and backward final states, summed

        merged = img + text
        if cfg.variant == ATT_BILSTM:
            out, _ = pad_packed_sequence(
                out_packed, batch_first=True, total_length=tokens.shape[1]
            )
            states = out[..., :H] + out[..., H:]
            mask = torch.arange(tokens.shape[1], device=tokens.device) < lengths.unsqueeze(1)
            context, _ = _additive_attention(
                states, merged, self.att_score.weight, self.att_score.bias, mask
            )
            merged = merged + context

        return self.head_out(torch.relu(self.head_hidden(merged)))


def build_model(config: ModelConfig) -> CaptionModel:
    """Construct and initialize a captioner; same seed, same initial bits."""
    torch.manual_seed(config.seed)
    return CaptionModel(config)


def _as_feature_vector(feature) -> np.ndarray:
    vec = getattr(feature, "vector", feature)
    return np.asarray(vec, dtype=np.float32)


def _as_prefix(prefix) -> tuple[tuple[int, ...], int]:
    if isinstance(prefix, EncodedCaption):
        return prefix.tokens, prefix.true_length
    tokens = tuple(int(t) for t in prefix)
    true_len = len(tokens)
    while true_len > 0 and tokens[true_len - 1] == 0:
        true_len -= 1
    if any(t == 0 for t in tokens[:true_len]):
        raise ValueError("padding index 0 inside the prefix")
    return tokens, true_len


def forward_step(model: CaptionModel, feature, prefix) -> np.ndarray:
    """Next-word probability distribution for one image and one token prefix.

    Inference-mode (dropout off) and deterministic. The prefix may be an
    EncodedCaption or a raw index sequence; trailing zeros are padding and do
    not affect the result.
    """
    cfg = model.config
    vec = _as_feature_vector(feature)
    if vec.shape != (cfg.feature_dim,):
        raise ValueError(
            f"feature has shape {vec.shape}, model expects ({cfg.feature_dim},)"
        )
    tokens, true_len = _as_prefix(prefix)
    if true_len < 1:
        raise ValueError("prefix must contain at least one token")
    if true_len > cfg.max_len:
        raise ValueError(f"prefix length {true_len} exceeds max_len {cfg.max_len}")
    if any(not 0 <= t < cfg.vocab_size for t in tokens):
        raise ValueError("prefix contains indices outside the vocabulary")

    was_training = model.training
    model.eval()
    try:
        dtype = next(model.parameters()).dtype
        with torch.no_grad():
            logits = model(
                torch.as_tensor(vec, dtype=dtype).unsqueeze(0),
                torch.tensor([tokens], dtype=torch.long),
                torch.tensor([true_len], dtype=torch.long),
            )
            probs = torch.softmax(logits, dim=-1).squeeze(0)
    finally:
        if was_training:
            model.train()
    return probs.numpy()


def parameter_count(model: CaptionModel) -> int:
    return sum(p.numel() for p in model.parameters())


def save_checkpoint(model: CaptionModel, path) -> None:
    """Single-file container: magic, JSON header, concatenated f4 arrays.

    The header stores the config, each array's name/shape/offset, and a
    checksum over the payload, so a load can verify integrity and rebuild the
    exact model.
    """
    from .ioutil import atomic_write_bytes

    state = model.state_dict()
    payload = bytearray()
    arrays = []
    for name in sorted(state):
        arr = state[name].detach().cpu().numpy().astype("<f4")
        arrays.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload += arr.tobytes()
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "dtype": "<f4",
        "arrays": arrays,
        "payload_sha256": hashlib.sha256(bytes(payload)).hexdigest(),
    }
    blob = json.dumps(header, ensure_ascii=False).encode("utf-8")
    atomic_write_bytes(
        path, CHECKPOINT_MAGIC + struct.pack("<I", len(blob)) + blob + bytes(payload)
    )


def load_checkpoint(path) -> CaptionModel:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < len(CHECKPOINT_MAGIC) + 4 or not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"not a checkpoint file: {path}")
    pos = len(CHECKPOINT_MAGIC)
    (blob_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if len(data) < pos + blob_len:
        raise CheckpointError(f"truncated checkpoint header: {path}")
    try:
        header = json.loads(data[pos : pos + blob_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {header.get('format_version')!r} unsupported "
            f"(this build reads {CHECKPOINT_VERSION})"
        )
    payload = data[pos + blob_len :]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError(f"checkpoint payload checksum mismatch: {path}")

    config = ModelConfig(**header["config"])
    model = build_model(config)
    state = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape, dtype=np.int64)) * 4
        chunk = payload[entry["offset"] : entry["offset"] + size]
        if len(chunk) != size:
            raise CheckpointError(f"truncated checkpoint payload: {path}")
        arr = np.frombuffer(chunk, dtype="<f4").reshape(shape)
        state[entry["name"]] = torch.from_numpy(arr.copy())
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint arrays do not fit the config: {exc}") from exc
    return model
