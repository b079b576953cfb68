"""Deterministic signal processing shared by the tokenizer path, losses and pair constructors."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Optional, Sequence

import librosa
import numpy as np
from scipy import signal

from audio_io import PIPELINE_SAMPLE_RATE, Waveform
from errors import (
    ConfigurationError,
    DegenerateWindowError,
    PreconditionError,
    UndefinedSNRError,
)

FRAME_SIZE = 320  # samples per tokenizer frame, 50 Hz at 16 kHz
LOG_FLOOR = 1e-5
MAX_SNR_DB = 60.0
MIN_STRETCH_RATE = 0.25
MAX_STRETCH_RATE = 4.0

# Phase-vocoder analysis for time stretching: 64 ms frames, 16 ms hop at 16 kHz
STRETCH_FFT = 1024
STRETCH_HOP = 256

logger = logging.getLogger(__name__)


@dataclass
class FrameSequence:
    """Non-overlapping tokenizer frames (T x 320)."""

    frames: np.ndarray
    frame_rate: float

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])


@dataclass
class ComplexSpectrogram:
    """Magnitude/phase pair from a centered STFT (F x N)."""

    magnitude: np.ndarray
    phase: np.ndarray
    fft_size: int
    hop_size: int
    window: str = "hann"
    num_samples: int = 0
    sample_rate: int = PIPELINE_SAMPLE_RATE

    @property
    def complex(self) -> np.ndarray:
        return self.magnitude * np.exp(1j * self.phase)

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass(frozen=True)
class MelScale:
    """One resolution of the multi-scale mel loss."""

    fft_size: int
    hop_size: int
    n_mels: int
    fmin: float = 0.0
    fmax: Optional[float] = None
    sample_rate: int = PIPELINE_SAMPLE_RATE

    @property
    def upper_frequency(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else float(self.fmax)


DEFAULT_MEL_SCALES = (
    MelScale(fft_size=512, hop_size=128, n_mels=40),
    MelScale(fft_size=1024, hop_size=256, n_mels=80),
    MelScale(fft_size=2048, hop_size=512, n_mels=160),
)


@dataclass
class MelSpectrogram:
    """Mel-band magnitudes (M x N) with the filterbank configuration used."""

    bins: np.ndarray
    scale: MelScale


def frame_waveform(wave: Waveform) -> FrameSequence:
    """Split 16 kHz audio into floor(N / 320) non-overlapping frames.

    Trailing samples that do not fill a frame are dropped.
    """
    if wave.sample_rate != PIPELINE_SAMPLE_RATE:
        raise PreconditionError(
            f"Framing requires {PIPELINE_SAMPLE_RATE} Hz audio, got {wave.sample_rate} Hz"
        )
    count = wave.num_samples // FRAME_SIZE
    frames = wave.samples[: count * FRAME_SIZE].reshape(count, FRAME_SIZE).copy()
    return FrameSequence(frames=frames, frame_rate=wave.sample_rate / FRAME_SIZE)


def unframe(frames: FrameSequence) -> np.ndarray:
    return frames.frames.reshape(-1).copy()


def _analysis_window(window: str, fft_size: int) -> np.ndarray:
    try:
        return signal.get_window(window, fft_size, fftbins=True).astype(np.float64)
    except ValueError as e:
        raise ConfigurationError(f"Unknown window '{window}': {e}") from e


def stft(
    wave: Waveform,
    fft_size: int = 1024,
    hop_size: int = 256,
    window: str = "hann",
    require_cola: bool = False,
) -> ComplexSpectrogram:
    """Centered short-time Fourier transform (zero padding of fft_size // 2 on both sides).

    Args:
        wave: Input audio
        fft_size: FFT and window length
        hop_size: Frame advance in samples
        window: scipy window name
        require_cola: Reject window/hop pairs that do not satisfy COLA

    Raises:
        ConfigurationError: On invalid sizes or a non-COLA pair when required
    """
    if fft_size < 2 or hop_size < 1 or hop_size > fft_size:
        raise ConfigurationError(
            f"Invalid STFT configuration: fft_size={fft_size}, hop_size={hop_size}"
        )
    win = _analysis_window(window, fft_size)
    if require_cola and not signal.check_COLA(win, fft_size, fft_size - hop_size):
        raise ConfigurationError(
            f"Window '{window}' with fft_size={fft_size}, hop_size={hop_size} is not COLA"
        )

    try:
        spectrum = librosa.stft(
            wave.samples,
            n_fft=fft_size,
            hop_length=hop_size,
            win_length=fft_size,
            window=win,
            center=True,
            pad_mode="constant",
        )
    except librosa.util.exceptions.ParameterError as e:
        raise ConfigurationError(f"STFT failed for fft_size={fft_size}, hop_size={hop_size}: {e}") from e
    return ComplexSpectrogram(
        magnitude=np.abs(spectrum),
        phase=np.angle(spectrum),
        fft_size=fft_size,
        hop_size=hop_size,
        window=window,
        num_samples=wave.num_samples,
        sample_rate=wave.sample_rate,
    )


def istft_synthesize(spec: ComplexSpectrogram) -> Waveform:
    """Weighted overlap-add inverse of stft.

    Each inverse frame is multiplied by the synthesis window and the sum is
    divided by the overlapped squared window.

    Raises:
        DegenerateWindowError: If the normalization is zero inside the output
    """
    win = _analysis_window(spec.window, spec.fft_size)
    coverage = librosa.filters.window_sumsquare(
        window=win,
        n_frames=spec.magnitude.shape[1],
        hop_length=spec.hop_size,
        win_length=spec.fft_size,
        n_fft=spec.fft_size,
        dtype=np.float64,
    )
    pad = spec.fft_size // 2
    coverage = coverage[pad : pad + spec.num_samples]
    if coverage.size < spec.num_samples:
        raise DegenerateWindowError("Spectrogram is too short for the recorded sample count")
    if np.any(coverage < 1e-10):
        raise DegenerateWindowError(
            f"Window '{spec.window}' with hop {spec.hop_size} leaves uncovered samples"
        )

    samples = librosa.istft(
        spec.complex,
        hop_length=spec.hop_size,
        win_length=spec.fft_size,
        n_fft=spec.fft_size,
        window=win,
        center=True,
        length=spec.num_samples,
    )
    return Waveform(samples, spec.sample_rate)


def mel_filterbank(scale: MelScale) -> np.ndarray:
    """Triangular HTK-mel filterbank (n_mels x fft_size/2+1), unnormalized."""
    nyquist = scale.sample_rate / 2
    if scale.n_mels < 1:
        raise ConfigurationError(f"n_mels must be >= 1, got {scale.n_mels}")
    if not 0 <= scale.fmin < scale.upper_frequency <= nyquist:
        raise ConfigurationError(
            f"Invalid mel bounds: need 0 <= fmin < fmax <= {nyquist}, "
            f"got fmin={scale.fmin}, fmax={scale.upper_frequency}"
        )
    return _cached_filterbank(scale)


@lru_cache(maxsize=32)
def _cached_filterbank(scale: MelScale) -> np.ndarray:
    weights = librosa.filters.mel(
        sr=scale.sample_rate,
        n_fft=scale.fft_size,
        n_mels=scale.n_mels,
        fmin=scale.fmin,
        fmax=scale.upper_frequency,
        htk=True,
        norm=None,
        dtype=np.float64,
    )
    weights.setflags(write=False)
    return weights


def mel_center_frequencies(scale: MelScale) -> np.ndarray:
    """Center frequency (Hz) of each filter on the HTK mel scale."""
    edges = librosa.mel_frequencies(
        n_mels=scale.n_mels + 2, fmin=scale.fmin, fmax=scale.upper_frequency, htk=True
    )
    return edges[1:-1]


def mel_spectrogram(wave: Waveform, scale: MelScale) -> MelSpectrogram:
    spec = stft(wave, scale.fft_size, scale.hop_size)
    return MelSpectrogram(bins=mel_filterbank(scale) @ spec.magnitude, scale=scale)


def log_mel_spectrogram(wave: Waveform, scale: MelScale, eps: float = LOG_FLOOR) -> np.ndarray:
    return np.log(np.maximum(mel_spectrogram(wave, scale).bins, eps))


def _pad_to(samples: np.ndarray, length: int) -> np.ndarray:
    return np.pad(samples, (0, length - samples.size))


def multiscale_mel_loss(
    x: Waveform,
    y: Waveform,
    scales: Sequence[MelScale] = DEFAULT_MEL_SCALES,
    eps: float = LOG_FLOOR,
) -> float:
    """Mean over scales of the mean absolute log-mel difference.

    The shorter input is zero-padded to the longer one.
    """
    if not scales:
        raise ConfigurationError("multiscale_mel_loss needs at least one scale")
    length = max(x.num_samples, y.num_samples)
    xa = Waveform(_pad_to(x.samples, length), x.sample_rate)
    ya = Waveform(_pad_to(y.samples, length), y.sample_rate)

    per_scale = [
        float(np.mean(np.abs(log_mel_spectrogram(xa, s, eps) - log_mel_spectrogram(ya, s, eps))))
        for s in scales
    ]
    return float(np.mean(per_scale))


def apply_gain(wave: Waveform, factor: float) -> Waveform:
    return Waveform(np.clip(wave.samples * factor, -1.0, 1.0), wave.sample_rate)


def _check_rate(rate: float) -> None:
    if not MIN_STRETCH_RATE <= rate <= MAX_STRETCH_RATE:
        raise ConfigurationError(
            f"Stretch rate {rate} outside [{MIN_STRETCH_RATE}, {MAX_STRETCH_RATE}]"
        )


def _phase_vocoder_stretch(samples: np.ndarray, rate: float, out_len: int) -> np.ndarray:
    """librosa phase-vocoder time stretch, trimmed or zero-padded to exactly out_len samples."""
    if out_len == 0 or samples.size == 0:
        return np.zeros(out_len)
    stretched = librosa.effects.time_stretch(samples, rate=rate, n_fft=STRETCH_FFT, hop_length=STRETCH_HOP)
    return librosa.util.fix_length(stretched, size=out_len)


def time_stretch(wave: Waveform, rate: float) -> Waveform:
    """Change duration by 1/rate while preserving pitch.

    Raises:
        ConfigurationError: If rate is outside [0.25, 4.0]
    """
    _check_rate(rate)
    out_len = int(round(wave.num_samples / rate))
    if rate == 1.0:
        return Waveform(wave.samples.copy(), wave.sample_rate)
    return Waveform(_phase_vocoder_stretch(wave.samples, rate, out_len), wave.sample_rate)


def resample(wave: Waveform, ratio: float) -> np.ndarray:
    """Polyphase resampling to about ratio * N samples (sample rate label unchanged)."""
    fraction = Fraction(ratio).limit_denominator(1000)
    if fraction.numerator == 0:
        raise ConfigurationError(f"Resampling ratio {ratio} is too small")
    return signal.resample_poly(wave.samples, fraction.numerator, fraction.denominator)


def pitch_shift(wave: Waveform, semitone_steps: float) -> Waveform:
    """Scale the fundamental by 2^(steps/12) while keeping the duration.

    The signal is resampled to N / ratio samples (pitch moves, duration
    shrinks or grows) and then time-stretched back to exactly N samples.
    """
    if semitone_steps == 0:
        return Waveform(wave.samples.copy(), wave.sample_rate)
    ratio = 2.0 ** (semitone_steps / 12.0)
    _check_rate(1.0 / ratio)
    squeezed = resample(wave, 1.0 / ratio)
    if squeezed.size == 0:
        return Waveform(np.zeros(wave.num_samples), wave.sample_rate)
    rate = squeezed.size / max(wave.num_samples, 1)
    return Waveform(_phase_vocoder_stretch(squeezed, rate, wave.num_samples), wave.sample_rate)


def signal_power(samples: np.ndarray) -> float:
    return float(np.mean(np.square(samples))) if samples.size else 0.0


def snr_db(reference: np.ndarray, estimate: np.ndarray) -> float:
    """10·log10 of reference energy over error energy (inf for an exact match)."""
    error = float(np.sum(np.square(reference - estimate)))
    energy = float(np.sum(np.square(reference)))
    if error == 0.0:
        return float("inf")
    if energy == 0.0:
        return float("-inf")
    return 10.0 * np.log10(energy / error)


def fit_noise(noise: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """Crop or loop noise to length, starting at a random offset."""
    if noise.size == 0:
        raise PreconditionError("Noise signal is empty")
    if noise.size >= length:
        offset = int(rng.integers(0, noise.size - length + 1))
        return noise[offset : offset + length].copy()
    offset = int(rng.integers(0, noise.size))
    repeats = int(np.ceil((length + offset) / noise.size))
    return np.tile(noise, repeats)[offset : offset + length]


def scale_noise_to_snr(clean: np.ndarray, noise: np.ndarray, snr: float) -> np.ndarray:
    """Scale noise so that 10·log10(P_clean / P_noise) equals snr (capped at 60 dB)."""
    clean_power = signal_power(clean)
    noise_power = signal_power(noise)
    if clean_power == 0.0:
        raise UndefinedSNRError("Clean signal is silent; SNR is undefined")
    if noise_power == 0.0:
        raise UndefinedSNRError("Noise segment is silent; SNR is undefined")
    snr = min(float(snr), MAX_SNR_DB)
    return noise * np.sqrt(clean_power / (noise_power * 10.0 ** (snr / 10.0)))


def mix_at_snr(
    clean: Waveform, noise: Waveform, snr_db: float, rng: np.random.Generator
) -> Waveform:
    """Add noise at the requested SNR; the mixture is clamped to [-1, 1]."""
    segment = fit_noise(noise.samples, clean.num_samples, rng)
    scaled = scale_noise_to_snr(clean.samples, segment, snr_db)
    return Waveform(np.clip(clean.samples + scaled, -1.0, 1.0), clean.sample_rate)
