"""Recurrent attribute encoder: active-attribute token sequence -> global/local embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

EMBED_DIM = 128


class EmptyConditionError(ValueError):
    """Generation requires at least one active attribute."""


class VocabularyError(ValueError):
    """Token id outside the attribute vocabulary."""


@dataclass
class AttributeEmbedding:
    global_vec: torch.Tensor  # (D,) final hidden state
    local_mat: torch.Tensor  # (T, D) per-step outputs, row order = token_ids order
    token_ids: list[int]


def tokenize_attributes(attributes: np.ndarray) -> list[int]:
    """Indices of active bits in ascending order."""
    attributes = np.asarray(attributes)
    if not np.isin(attributes, (0, 1)).all():
        raise ValueError("attribute vector must be binary")
    ids = np.flatnonzero(attributes).tolist()
    if not ids:
        raise EmptyConditionError("attribute vector has no active bits")
    return ids


class AttributeEncoder(nn.Module):
    """Single-layer unidirectional GRU over attribute tokens.

    The final hidden state is the global embedding; per-step outputs are the
    local embeddings, one per active attribute.
    """

    def __init__(self, vocab_size: int, embed_dim: int = EMBED_DIM):
        super().__init__()
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.embedding = nn.Embedding(vocab_size, embed_dim)
        self.rnn = nn.GRU(embed_dim, embed_dim, batch_first=True)

    def _check_tokens(self, token_ids) -> None:
        if len(token_ids) == 0:
            raise EmptyConditionError("empty token list")
        bad = [t for t in token_ids if not 0 <= t < self.vocab_size]
        if bad:
            raise VocabularyError(f"token ids out of vocabulary: {bad}")

    def encode(self, token_ids: list[int]) -> AttributeEmbedding:
        self._check_tokens(token_ids)
        tokens = torch.tensor(token_ids, dtype=torch.long).unsqueeze(0)
        out, h_n = self.rnn(self.embedding(tokens))
        return AttributeEmbedding(h_n[0, 0], out[0], list(token_ids))

    def encode_batch(self, token_id_lists: list[list[int]]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Padded batch encoding.

        Returns (global (B, D), local (B, T_max, D), pad mask (B, T_max) with
        True at valid positions)."""
        for ids in token_id_lists:
            self._check_tokens(ids)
        lengths = torch.tensor([len(ids) for ids in token_id_lists])
        t_max = int(lengths.max())
        tokens = torch.zeros(len(token_id_lists), t_max, dtype=torch.long)
        for i, ids in enumerate(token_id_lists):
            tokens[i, : len(ids)] = torch.tensor(ids)
        packed = nn.utils.rnn.pack_padded_sequence(
            self.embedding(tokens), lengths, batch_first=True, enforce_sorted=False
        )
        out_packed, h_n = self.rnn(packed)
        local, _ = nn.utils.rnn.pad_packed_sequence(out_packed, batch_first=True, total_length=t_max)
        valid = torch.arange(t_max).unsqueeze(0) < lengths.unsqueeze(1)
        return h_n[0], local, valid


def save_encoder(encoder: AttributeEncoder, path) -> None:
    torch.save(
        {
            "vocab_size": encoder.vocab_size,
            "embed_dim": encoder.embed_dim,
            "state": encoder.state_dict(),
        },
        path,
    )


def load_encoder(path) -> AttributeEncoder:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    encoder = AttributeEncoder(blob["vocab_size"], blob["embed_dim"])
    encoder.load_state_dict(blob["state"])
    return encoder
