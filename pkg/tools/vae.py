"""Latent-variable machinery and the three-stage tokenizer loss stack."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from dsp import FrameSequence, FRAME_SIZE
from errors import ConfigurationError, ShapeError, TokenIndexError

LOGVAR_MIN = -30.0
LOGVAR_MAX = 20.0
DEFAULT_LATENT_DIM = 32
DEFAULT_ATTENTION_WINDOW = 32
_FM_NORM_FLOOR = 1e-12


@dataclass
class LatentDistribution:
    """Diagonal Gaussian over T x d_latent latents; logvar is clamped on construction."""

    mean: np.ndarray
    logvar: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.logvar = np.clip(np.asarray(self.logvar, dtype=np.float64), LOGVAR_MIN, LOGVAR_MAX)
        if self.mean.shape != self.logvar.shape:
            raise ShapeError(f"mean {self.mean.shape} and logvar {self.logvar.shape} differ")


@dataclass
class LatentSequence:
    """Z_latent: T x d_latent acoustic latents."""

    values: np.ndarray


@dataclass
class UnifiedSequence:
    """Z_uni: T x d_uni unified features."""

    values: np.ndarray

    @property
    def length(self) -> int:
        return int(self.values.shape[0])


@dataclass
class SemanticTarget:
    """Z_semantic: distillation target with the same shape as Z_uni."""

    values: np.ndarray


@dataclass(frozen=True)
class LossWeights:
    """Loss coefficients of the tokenizer training stages."""

    lambda_rec: float = 15.0
    lambda_adv: float = 1.0
    lambda_fm: float = 1.0
    lambda_kl: float = 1e-4
    lambda_align: float = 2.0
    lambda_rec_joint: float = 1.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ConfigurationError(f"{name} must be nonnegative, got {value}")


class TrainingStage(enum.Enum):
    RECONSTRUCTION = 1
    DISTILLATION = 2
    JOINT = 3


def split_latent_params(encoder_output: np.ndarray) -> LatentDistribution:
    """First half of the feature axis is the mean, second half the log-variance."""
    encoder_output = np.asarray(encoder_output, dtype=np.float64)
    width = encoder_output.shape[-1]
    if width % 2:
        raise ShapeError(f"Encoder output width must be even (2 x d_latent), got {width}")
    half = width // 2
    return LatentDistribution(encoder_output[..., :half], encoder_output[..., half:])


def reparameterize(dist: LatentDistribution, rng: np.random.Generator) -> LatentSequence:
    noise = rng.standard_normal(dist.mean.shape)
    return LatentSequence(dist.mean + np.exp(dist.logvar / 2.0) * noise)


def kl_loss(dist: LatentDistribution) -> float:
    """KL(q || N(0, I)) averaged over elements."""
    terms = dist.mean**2 + np.exp(dist.logvar) - 1.0 - dist.logvar
    return float(0.5 * np.mean(terms))


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def adversarial_loss(fake_scores: Sequence[np.ndarray]) -> float:
    """Hinge generator loss averaged over sub-discriminators."""
    if not fake_scores:
        raise ShapeError("adversarial_loss needs at least one sub-discriminator")
    return float(np.mean([np.mean(_relu(1.0 - np.asarray(s, dtype=np.float64))) for s in fake_scores]))


def discriminator_loss(
    real_scores: Sequence[np.ndarray], fake_scores: Sequence[np.ndarray]
) -> float:
    """Hinge discriminator loss averaged over sub-discriminators."""
    if len(real_scores) != len(fake_scores) or not real_scores:
        raise ShapeError(
            f"Need matching, nonempty score lists ({len(real_scores)} real, {len(fake_scores)} fake)"
        )
    per_disc = [
        np.mean(_relu(1.0 - np.asarray(r, dtype=np.float64)))
        + np.mean(_relu(1.0 + np.asarray(f, dtype=np.float64)))
        for r, f in zip(real_scores, fake_scores)
    ]
    return float(np.mean(per_disc))


def feature_matching_loss(
    real_features: Sequence[np.ndarray], fake_features: Sequence[np.ndarray]
) -> float:
    """Mean over layers of L1 feature distance, each normalized by mean |real|."""
    if len(real_features) != len(fake_features) or not real_features:
        raise ShapeError(
            f"Need matching, nonempty feature lists ({len(real_features)} vs {len(fake_features)})"
        )
    per_layer = []
    for index, (real, fake) in enumerate(zip(real_features, fake_features)):
        real = np.asarray(real, dtype=np.float64)
        fake = np.asarray(fake, dtype=np.float64)
        if real.shape != fake.shape:
            raise ShapeError(f"Layer {index}: real {real.shape} vs fake {fake.shape}")
        scale = max(float(np.mean(np.abs(real))), _FM_NORM_FLOOR)
        per_layer.append(np.mean(np.abs(real - fake)) / scale)
    return float(np.mean(per_layer))


def generator_loss(parts: Mapping[str, float], weights: LossWeights = LossWeights()) -> float:
    """Weighted sum rec/adv/fm/kl of the reconstruction stage."""
    try:
        return float(
            weights.lambda_rec * parts["rec"]
            + weights.lambda_adv * parts["adv"]
            + weights.lambda_fm * parts["fm"]
            + weights.lambda_kl * parts["kl"]
        )
    except KeyError as e:
        raise ConfigurationError(f"generator_loss is missing part {e}") from e


def distill_loss(z_uni: UnifiedSequence, z_sem: SemanticTarget) -> float:
    if z_uni.values.shape != z_sem.values.shape:
        raise ShapeError(f"Z_uni {z_uni.values.shape} vs Z_semantic {z_sem.values.shape}")
    return float(np.mean((z_uni.values - z_sem.values) ** 2))


def align_loss(token_logits: np.ndarray, targets: Sequence[int]) -> float:
    """Summed token negative log-likelihood under a softmax over the vocabulary."""
    logits = np.asarray(token_logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != targets.shape[0]:
        raise ShapeError(f"Logits {logits.shape} do not match {targets.shape[0]} targets")
    vocab = logits.shape[1]
    bad = targets[(targets < 0) | (targets >= vocab)]
    if bad.size:
        raise TokenIndexError(f"Target id {int(bad[0])} outside vocabulary of size {vocab}")
    log_probs = logits - logsumexp(logits, axis=1, keepdims=True)
    return float(-np.sum(log_probs[np.arange(targets.shape[0]), targets]))


def stage3_loss(align: float, rec: float, weights: LossWeights = LossWeights()) -> float:
    return float(weights.lambda_align * align + weights.lambda_rec_joint * rec)


def stage_objective(
    stage: TrainingStage, parts: Mapping[str, float], weights: LossWeights = LossWeights()
) -> float:
    """Total loss of one training stage from its precomputed parts."""
    if stage is TrainingStage.RECONSTRUCTION:
        return generator_loss(parts, weights)
    if stage is TrainingStage.DISTILLATION:
        return float(parts["distill"])
    return stage3_loss(parts["align"], parts["rec"], weights)


def sliding_window_causal_mask(length: int, window: int = DEFAULT_ATTENTION_WINDOW) -> np.ndarray:
    """Boolean mask where row i attends to j iff i - window < j <= i."""
    if window < 1:
        raise ConfigurationError(f"Attention window must be >= 1, got {window}")
    rows = np.arange(length)[:, None]
    cols = np.arange(length)[None, :]
    return (cols <= rows) & (cols > rows - window)


class ToyFrameEncoder:
    """Seeded stand-in for the tokenizer encoder.

    Each frame is replaced by the average of the frames it may attend to
    under the sliding-window causal mask, then projected to 2 x d_latent.
    """

    def __init__(
        self,
        seed: int,
        latent_dim: int = DEFAULT_LATENT_DIM,
        window: int = DEFAULT_ATTENTION_WINDOW,
    ):
        rng = np.random.default_rng(seed)
        self.latent_dim = latent_dim
        self.window = window
        self.projection = rng.standard_normal((FRAME_SIZE, 2 * latent_dim)) / np.sqrt(FRAME_SIZE)

    def encode(self, frames: FrameSequence) -> LatentDistribution:
        mask = sliding_window_causal_mask(frames.num_frames, self.window).astype(np.float64)
        counts = np.maximum(mask.sum(axis=1, keepdims=True), 1.0)
        context = (mask @ frames.frames) / counts
        return split_latent_params(context @ self.projection)


def latent_stats(dist: LatentDistribution) -> dict:
    """Summary statistics of a latent distribution for reports."""
    frames = int(dist.mean.shape[0]) if dist.mean.ndim else 0
    if dist.mean.size == 0:
        return {"frames": frames, "latent_dim": int(dist.mean.shape[-1]), "kl": 0.0}
    return {
        "frames": frames,
        "latent_dim": int(dist.mean.shape[-1]),
        "mean_abs_mean": float(np.mean(np.abs(dist.mean))),
        "mean_std": float(np.mean(np.exp(dist.logvar / 2.0))),
        "kl": kl_loss(dist),
    }
