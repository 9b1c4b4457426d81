"""Embedding providers and construction of the diffusion conditioning signal.

The conditioning signal is a fixed-length token sequence: token 0 is a learned
projection of the global graph embedding, tokens 1..N are per-object label
embeddings in graph order, and the remainder is a reserved pad embedding with
its attention mask set false. Providers are deterministic: the stub derives
text vectors from a hash of the label and image vectors from a fixed random
projection of a bilinearly downsampled thumbnail.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import DataError

PAD_LABEL = "<pad>"


def _unit(v: np.ndarray) -> torch.Tensor:
    return torch.as_tensor(v / np.linalg.norm(v), dtype=torch.float32)


class StubEmbeddingProvider:
    """Deterministic, dependency-free stand-in for a CLIP-style service."""

    kind = "stub"

    def __init__(self, text_dim: int = 512, image_dim: int = 512, seed: int = 0):
        self.text_dim = text_dim
        self.image_dim = image_dim
        self.seed = seed
        self._image_proj: dict[int, np.ndarray] = {}

    def embed_text(self, label: str) -> torch.Tensor:
        if not label:
            raise DataError("label must be nonempty")
        digest = hashlib.sha256(f"{self.seed}:{label}".encode()).digest()
        rng = np.random.default_rng(np.frombuffer(digest[:16], dtype=np.uint64))
        return _unit(rng.standard_normal(self.text_dim))

    def embed_image(self, image) -> torch.Tensor:
        img = torch.as_tensor(np.asarray(image), dtype=torch.float64)
        if img.ndim != 3:
            raise DataError("image must be HxWxC")
        if img.min() < -1e-6 or img.max() > 1.0 + 1e-6:
            raise DataError("image values must lie in [0, 1]")
        thumb = F.interpolate(
            img.permute(2, 0, 1)[None], size=(8, 8), mode="bilinear", align_corners=False
        )
        flat = np.append(thumb.numpy().ravel(), 1.0)  # constant keeps all-black images nonzero
        proj = self._image_proj.get(flat.size)
        if proj is None:
            rng = np.random.default_rng([self.seed, 7, flat.size])
            proj = rng.standard_normal((self.image_dim, flat.size)) / np.sqrt(flat.size)
            self._image_proj[flat.size] = proj
        return _unit(proj @ flat)


class ExternalEmbeddingProvider:
    """HTTP client for a remote embedding endpoint.

    Request: {"kind": "text"|"image", "payload": ...}; response: {"vector": [...]}.
    Never required by the test suite; retried `retries` times on transport errors.
    """

    kind = "external-service"

    def __init__(
        self,
        endpoint: str,
        text_dim: int = 512,
        image_dim: int = 512,
        timeout: float = 10.0,
        retries: int = 2,
        session=None,
    ):
        import requests

        self.endpoint = endpoint
        self.text_dim = text_dim
        self.image_dim = image_dim
        self.timeout = timeout
        self.retries = retries
        self._session = session if session is not None else requests.Session()

    def _post(self, payload: dict, expected_dim: int) -> torch.Tensor:
        last_error = None
        for _ in range(self.retries + 1):
            try:
                resp = self._session.post(self.endpoint, json=payload, timeout=self.timeout)
                resp.raise_for_status()
                vec = np.asarray(resp.json()["vector"], dtype=np.float64)
                if vec.shape != (expected_dim,):
                    raise DataError(
                        f"endpoint returned {vec.shape} but expected ({expected_dim},)"
                    )
                return _unit(vec)
            except DataError:
                raise
            except Exception as exc:  # transport / decode failures are retryable
                last_error = exc
        raise RuntimeError(
            f"embedding endpoint failed after {self.retries + 1} attempts: {last_error}"
        )

    def embed_text(self, label: str) -> torch.Tensor:
        if not label:
            raise DataError("label must be nonempty")
        return self._post({"kind": "text", "payload": label}, self.text_dim)

    def embed_image(self, image) -> torch.Tensor:
        arr = np.asarray(image, dtype=np.float64)
        return self._post({"kind": "image", "payload": arr.tolist()}, self.image_dim)


@dataclass
class ConditioningSignal:
    """(1 + n_max) x d_cond token sequence with its attention mask."""

    tokens: torch.Tensor
    mask: torch.Tensor  # bool, True = attended

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]


def null_conditioning(n_max: int, d_cond: int) -> ConditioningSignal:
    """All-zero signal with a single attended token; the unconditional baseline."""
    mask = torch.zeros(1 + n_max, dtype=torch.bool)
    mask[0] = True
    return ConditioningSignal(torch.zeros(1 + n_max, d_cond), mask)


def stack_signals(signals: Sequence[ConditioningSignal]):
    """Batch signals to (B, S, d) tokens and (B, S) mask."""
    return (
        torch.stack([s.tokens for s in signals]),
        torch.stack([s.mask for s in signals]),
    )


class ConditioningBuilder(nn.Module):
    """Fuses a graph embedding with per-object label embeddings into a signal.

    The graph token uses a learned linear projection d_global -> d_cond; label
    embeddings pass through a learned projection only when the provider width
    differs from d_cond.
    """

    def __init__(
        self,
        d_global: int,
        provider,
        n_max: int = 8,
        d_cond: int = 512,
        seed: Optional[int] = None,
    ):
        super().__init__()
        if n_max < 1:
            raise DataError("n_max must be >= 1")
        self.n_max = n_max
        self.d_cond = d_cond
        self.provider = provider
        self.graph_proj = nn.Linear(d_global, d_cond)
        self.label_proj = (
            nn.Linear(provider.text_dim, d_cond) if provider.text_dim != d_cond else None
        )
        self.reset_parameters(seed)

    def reset_parameters(self, seed: Optional[int] = None) -> None:
        g = None
        if seed is not None:
            g = torch.Generator()
            g.manual_seed(seed)
        for mod in self.modules():
            if isinstance(mod, nn.Linear):
                bound = 1.0 / mod.in_features**0.5
                mod.weight.data.uniform_(-bound, bound, generator=g)
                mod.bias.data.zero_()

    def _label_token(self, label: str) -> torch.Tensor:
        vec = self.provider.embed_text(label).to(self.graph_proj.weight.dtype)
        return self.label_proj(vec) if self.label_proj is not None else vec

    def forward(self, g_global: torch.Tensor, labels: Sequence[str]) -> ConditioningSignal:
        if len(labels) == 0:
            raise DataError("labels must be nonempty")
        if len(labels) > self.n_max:
            raise DataError(f"graph exceeds capacity: {len(labels)} objects > n_max={self.n_max}")
        rows = [self.graph_proj(torch.as_tensor(g_global))]
        rows += [self._label_token(l) for l in labels]
        n_pad = self.n_max - len(labels)
        if n_pad:
            pad = self._label_token(PAD_LABEL)
            rows += [pad] * n_pad
        mask = torch.zeros(1 + self.n_max, dtype=torch.bool)
        mask[: 1 + len(labels)] = True
        return ConditioningSignal(torch.stack(rows), mask)

    build = forward
