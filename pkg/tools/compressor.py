"""Temporal downsampling of unified features to the LLM frame rate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import softmax

from errors import ConfigurationError, ShapeError
from vae import UnifiedSequence

MEAN_POOL = "mean_pool"
CLS_ATTENTION = "cls_attention"
MODES = (MEAN_POOL, CLS_ATTENTION)


@dataclass(frozen=True)
class CompressorConfig:
    factor: int = 5  # 50 Hz -> 10 Hz
    mode: str = MEAN_POOL

    def validate(self) -> list[str]:
        problems = []
        if not isinstance(self.factor, (int, np.integer)) or self.factor < 1:
            problems.append(f"Compression factor must be a positive integer, got {self.factor!r}")
        if self.mode not in MODES:
            problems.append(f"Unknown compressor mode '{self.mode}' (expected one of {', '.join(MODES)})")
        return problems


@dataclass
class CLSAttentionParams:
    """One cross-attention layer: a learned CLS query and a key projection.

    Values are the chunk rows themselves, so outputs stay in their convex hull.
    """

    cls_query: np.ndarray  # (d_k,)
    key_proj: np.ndarray  # (d_uni, d_k)

    @classmethod
    def random(cls, d_uni: int, d_k: int, rng: np.random.Generator) -> "CLSAttentionParams":
        return cls(rng.standard_normal(d_k), rng.standard_normal((d_uni, d_k)) / np.sqrt(d_uni))

    @classmethod
    def uniform(cls, d_uni: int, d_k: int = 1) -> "CLSAttentionParams":
        """Zero query: every logit is equal and attention reduces to mean pooling."""
        return cls(np.zeros(d_k), np.zeros((d_uni, d_k)))


def _check_config(config: CompressorConfig) -> None:
    problems = config.validate()
    if problems:
        raise ConfigurationError("; ".join(problems))


def _chunks(z: UnifiedSequence, factor: int) -> np.ndarray:
    """Reshape to (num_chunks, factor, d), dropping trailing rows."""
    values = np.asarray(z.values, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError(f"Unified sequence must be 2-D (T x d), got shape {values.shape}")
    count = values.shape[0] // factor
    return values[: count * factor].reshape(count, factor, values.shape[1])


def pool_compress(z: UnifiedSequence, config: CompressorConfig) -> UnifiedSequence:
    """Average adjacent groups of `factor` rows; output length floor(T / factor)."""
    _check_config(config)
    chunks = _chunks(z, config.factor)
    if chunks.shape[0] == 0:
        return UnifiedSequence(np.zeros((0, chunks.shape[2])))
    return UnifiedSequence(chunks.mean(axis=1))


def cls_attention_weights(
    z: UnifiedSequence, config: CompressorConfig, params: CLSAttentionParams
) -> np.ndarray:
    """Attention weights (num_chunks x factor); every row sums to 1."""
    _check_config(config)
    chunks = _chunks(z, config.factor)
    query = np.asarray(params.cls_query, dtype=np.float64)
    key_proj = np.asarray(params.key_proj, dtype=np.float64)
    if key_proj.ndim != 2 or key_proj.shape[0] != chunks.shape[2]:
        raise ShapeError(
            f"Key projection {key_proj.shape} does not match feature width {chunks.shape[2]}"
        )
    if query.shape != (key_proj.shape[1],):
        raise ShapeError(f"CLS query {query.shape} does not match key width {key_proj.shape[1]}")
    keys = chunks @ key_proj
    logits = keys @ query / np.sqrt(query.shape[0])
    return softmax(logits, axis=1)


def cls_attention_compress(
    z: UnifiedSequence, config: CompressorConfig, params: CLSAttentionParams
) -> UnifiedSequence:
    weights = cls_attention_weights(z, config, params)
    chunks = _chunks(z, config.factor)
    return UnifiedSequence(np.einsum("cf,cfd->cd", weights, chunks))


def compress(
    z: UnifiedSequence, config: CompressorConfig, params: Optional[CLSAttentionParams] = None
) -> UnifiedSequence:
    _check_config(config)
    if config.mode == MEAN_POOL:
        return pool_compress(z, config)
    if params is None:
        raise ConfigurationError("cls_attention mode needs CLSAttentionParams")
    return cls_attention_compress(z, config, params)


def compressed_frame_rate(frame_rate: float, config: CompressorConfig) -> float:
    _check_config(config)
    return frame_rate / config.factor
