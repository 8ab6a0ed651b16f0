"""Condition encoders: a frozen deterministic text encoder, a small trainable
point-cloud encoder, and the fusion that produces the final condition vector.

The text encoder maps tokens to fixed pseudo-random vectors seeded from a
stable hash, mean-pools and L2-normalizes; it has no trainable parameters and
is therefore frozen by construction.  A pretrained encoder can be mounted
instead: anything with `.dim` and `.encode(text) -> np.ndarray` works.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

EMBED_DIM = 512
TEXT_MASK_RATE = 0.1
SHAPE_POINTS = 256

_TOKEN_RE = re.compile(r"[a-z0-9']+")


def tokenize(text: str) -> list[str]:
    """Lowercase, punctuation-stripping tokenizer shared package-wide."""
    return _TOKEN_RE.findall(text.lower())


def _token_vector(token: str, dim: int) -> np.ndarray:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class HashedTextEncoder:
    """Deterministic frozen text embedding: per-token hashed vectors,
    mean-pooled and L2-normalized."""

    def __init__(self, dim: int = EMBED_DIM):
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def token_vector(self, token: str) -> np.ndarray:
        if token not in self._cache:
            self._cache[token] = _token_vector(token, self.dim)
        return self._cache[token]

    def encode(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            raise ValueError(f"cannot encode empty text: {text!r}")
        pooled = np.mean([self.token_vector(t) for t in tokens], axis=0)
        return pooled / np.linalg.norm(pooled)

    def encode_batch(self, texts: list[str]) -> np.ndarray:
        return np.stack([self.encode(t) for t in texts])

    def token_matrix(self, text: str) -> np.ndarray:
        """Per-token vectors [L, dim] (used by the evaluation model)."""
        tokens = tokenize(text)
        if not tokens:
            raise ValueError(f"cannot encode empty text: {text!r}")
        return np.stack([self.token_vector(t) for t in tokens])

    def checksum(self) -> str:
        """Digest of a fixed probe vocabulary; constant across a process run
        since the encoder has no trainable state."""
        probe = " ".join(sorted(self._cache) or ["probe"])
        h = hashlib.blake2b(digest_size=16)
        for tok in tokenize(probe):
            h.update(self.token_vector(tok).tobytes())
        return h.hexdigest()


def subsample_points(points: np.ndarray, count: int = SHAPE_POINTS,
                     seed: int = 0) -> np.ndarray:
    """Uniform subsample (or tiled upsample) to a fixed point count."""
    v = points.shape[0]
    rng = np.random.default_rng(seed)
    if v >= count:
        idx = rng.choice(v, size=count, replace=False)
    else:
        idx = rng.choice(v, size=count, replace=True)
    return points[np.sort(idx)]


class ShapeEncoder(nn.Module):
    """Per-point feedforward stack with permutation-invariant max pooling."""

    def __init__(self, dim: int = EMBED_DIM):
        super().__init__()
        self.dim = dim
        self.net = nn.Sequential(
            nn.Linear(3, 64), nn.ReLU(),
            nn.Linear(64, 128), nn.ReLU(),
            nn.Linear(128, dim),
        )

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        # points: [B, V, 3] -> [B, dim]
        return self.net(points).max(dim=-2).values


@dataclass
class ConditionEmbedding:
    """Fused condition: c = c_shape + c_text, with c_text zeroed where masked."""

    c_text: torch.Tensor   # [B, D], already projected (zero where masked)
    c_shape: torch.Tensor  # [B, D], already projected
    masked: torch.Tensor   # [B] bool

    @property
    def c(self) -> torch.Tensor:
        return self.c_shape + self.c_text

    def shape_only(self) -> "ConditionEmbedding":
        """The text-free branch used as the guidance baseline."""
        return ConditionEmbedding(
            c_text=torch.zeros_like(self.c_text),
            c_shape=self.c_shape,
            masked=torch.ones_like(self.masked),
        )


class ConditionEncoder(nn.Module):
    """Projects raw text/shape embeddings to the shared condition space and
    fuses them by addition; owns the trainable shape encoder."""

    def __init__(self, dim: int = EMBED_DIM, text_dim: int = EMBED_DIM):
        super().__init__()
        self.dim = dim
        self.shape_encoder = ShapeEncoder(dim)
        self.text_proj = nn.Linear(text_dim, dim)
        self.shape_proj = nn.Linear(dim, dim)

    def forward(self, text_emb: torch.Tensor, points: torch.Tensor,
                mask: torch.Tensor | None = None) -> ConditionEmbedding:
        # text_emb: [B, text_dim]; points: [B, V, 3]; mask: [B] bool
        if mask is None:
            mask = torch.zeros(text_emb.shape[0], dtype=torch.bool,
                               device=text_emb.device)
        c_text = self.text_proj(text_emb)
        c_text = torch.where(mask[:, None], torch.zeros_like(c_text), c_text)
        c_shape = self.shape_proj(self.shape_encoder(points))
        return ConditionEmbedding(c_text=c_text, c_shape=c_shape, masked=mask)


def sample_text_mask(batch: int, generator: torch.Generator,
                     rate: float = TEXT_MASK_RATE) -> torch.Tensor:
    """Per-sample text dropout draws for classifier-free guidance training."""
    return torch.rand(batch, generator=generator) < rate
