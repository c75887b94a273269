"""Frozen text encoders and the trainable text-feature projection layer."""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import torch
from torch import nn

__all__ = [
    "TextEmbedding",
    "TextEncoderHandle",
    "StubTextEncoder",
    "PretrainedTextEncoder",
    "build_text_encoder",
    "encode_text",
    "TextDecoderLayer",
]

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class TextEmbedding:
    vector: np.ndarray
    source_text: str


@dataclass(frozen=True)
class TextEncoderHandle:
    kind: str = "stub"
    embedding_dim: int = 64
    seed: int = 0
    weights_path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("stub", "pretrained"):
            raise ValueError(f"unknown text encoder kind {self.kind!r}")
        if self.embedding_dim <= 0:
            raise ValueError("embedding_dim must be positive")

    @property
    def frozen(self) -> bool:
        return True


def _token_hash(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")


class StubTextEncoder(nn.Module):
    """Deterministic bag-of-tokens encoder.

    Each lower-cased token is hashed to a seeded Gaussian unit vector; a text is
    the position-weighted (``1 / (1 + position)``) sum of its token vectors,
    renormalized. Texts sharing tokens get correlated embeddings.
    """

    def __init__(self, embedding_dim: int = 64, seed: int = 0):
        super().__init__()
        self.embedding_dim = embedding_dim
        self.seed = seed
        self.requires_grad_(False)

    def _token_vector(self, token: str) -> np.ndarray:
        rng = np.random.default_rng([self.seed, _token_hash(token)])
        v = rng.standard_normal(self.embedding_dim)
        return v / np.linalg.norm(v)

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        out = np.empty((len(texts), self.embedding_dim))
        for i, text in enumerate(texts):
            tokens = _TOKEN_RE.findall(text.lower())
            if not tokens:
                raise ValueError(f"text {text!r} has no tokens")
            acc = np.zeros(self.embedding_dim)
            for pos, tok in enumerate(tokens):
                acc += self._token_vector(tok) / (1.0 + pos)
            out[i] = acc / np.linalg.norm(acc)
        return out


class PretrainedTextEncoder(nn.Module):
    """Adapter over a locally stored CLIP text tower (Hugging Face layout)."""

    def __init__(self, weights_path: str):
        super().__init__()
        path = Path(weights_path) if weights_path else None
        if path is None or not path.exists():
            raise FileNotFoundError(f"pretrained text encoder weights not found at {weights_path!r}")
        from transformers import CLIPTextModelWithProjection, CLIPTokenizer

        self.tokenizer = CLIPTokenizer.from_pretrained(str(path))
        self.model = CLIPTextModelWithProjection.from_pretrained(str(path)).eval()
        self.model.requires_grad_(False)
        self.embedding_dim = int(self.model.config.projection_dim)

    def train(self, mode: bool = True):
        # always stays in eval mode
        return super().train(False)

    @torch.no_grad()
    def encode(self, texts: Sequence[str]) -> np.ndarray:
        batch = self.tokenizer(list(texts), padding=True, return_tensors="pt")
        emb = self.model(**batch).text_embeds.double()
        emb = emb / emb.norm(dim=-1, keepdim=True)
        return emb.cpu().numpy()


def build_text_encoder(handle: TextEncoderHandle) -> nn.Module:
    if handle.kind == "stub":
        return StubTextEncoder(handle.embedding_dim, handle.seed)
    enc = PretrainedTextEncoder(handle.weights_path)
    if enc.embedding_dim != handle.embedding_dim:
        raise ValueError(
            f"pretrained encoder has dimension {enc.embedding_dim}, handle says {handle.embedding_dim}"
        )
    return enc


def encode_text(encoder: nn.Module, texts: Sequence[str]) -> List[TextEmbedding]:
    if not texts:
        raise ValueError("texts must be non-empty")
    for t in texts:
        if not isinstance(t, str) or not t:
            raise ValueError(f"texts must be non-empty strings, got {t!r}")
    vectors = encoder.encode(texts)
    return [TextEmbedding(v, t) for v, t in zip(vectors, texts)]


def encoder_fingerprint(encoder: nn.Module, probe_texts: Sequence[str]) -> str:
    """Hash of the encoder's tensors, trainability flags and outputs on ``probe_texts``."""
    h = hashlib.sha256()
    for name, t in sorted(encoder.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().numpy().tobytes())
    for p in encoder.parameters():
        h.update(b"1" if p.requires_grad else b"0")
    h.update(np.ascontiguousarray(encoder.encode(list(probe_texts))).tobytes())
    return h.hexdigest()


class TextDecoderLayer(nn.Module):
    """Post-norm transformer decoder layer over instance text embeddings.

    Self-attention among the instances, optional cross-attention to image
    tokens, then a feed-forward block; residual + LayerNorm around each.
    """

    def __init__(self, embed_dim: int, num_heads: int = 4, ffn_dim: Optional[int] = None,
                 cross_attention: bool = True):
        super().__init__()
        ffn_dim = ffn_dim or 2 * embed_dim
        self.cross_attention = cross_attention
        self.self_attn = nn.MultiheadAttention(embed_dim, num_heads, batch_first=True)
        self.norm1 = nn.LayerNorm(embed_dim)
        if cross_attention:
            self.cross_attn = nn.MultiheadAttention(embed_dim, num_heads, batch_first=True)
            self.norm2 = nn.LayerNorm(embed_dim)
        self.ffn = nn.Sequential(nn.Linear(embed_dim, ffn_dim), nn.ReLU(), nn.Linear(ffn_dim, embed_dim))
        self.norm3 = nn.LayerNorm(embed_dim)

    def zero_output_projections(self):
        for attn in [self.self_attn] + ([self.cross_attn] if self.cross_attention else []):
            nn.init.zeros_(attn.out_proj.weight)
            nn.init.zeros_(attn.out_proj.bias)
        nn.init.zeros_(self.ffn[2].weight)
        nn.init.zeros_(self.ffn[2].bias)

    def forward(self, queries: torch.Tensor, context: Optional[torch.Tensor] = None) -> torch.Tensor:
        """``queries``: (N, C) or (B, N, C); ``context``: (L, C) or (B, L, C)."""
        unbatched = queries.dim() == 2
        if unbatched:
            queries = queries.unsqueeze(0)
            context = context.unsqueeze(0) if context is not None else None
        if queries.shape[1] == 0:
            out = queries
        else:
            x = self.norm1(queries + self.self_attn(queries, queries, queries, need_weights=False)[0])
            if self.cross_attention:
                if context is None:
                    raise ValueError("cross-attention layer needs image context tokens")
                x = self.norm2(x + self.cross_attn(x, context, context, need_weights=False)[0])
            out = self.norm3(x + self.ffn(x))
        return out[0] if unbatched else out


def project_text_features(P_ins: torch.Tensor, image_context: Optional[torch.Tensor],
                          decoder: TextDecoderLayer) -> torch.Tensor:
    return decoder(P_ins, image_context)
