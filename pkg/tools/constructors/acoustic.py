"""Acoustic edit pairs: denoise, add sound, speed, pitch and volume."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from audio_io import ManifestEntry, Waveform
from dsp import apply_gain, mix_at_snr, pitch_shift, snr_db, time_stretch
from errors import ConfigurationError

from .base import ACOUSTIC_TYPE, ADD_SOUND, DENOISE, PITCH, SPEED, VOLUME, EditExample, EditPair, PairConstructor

SPEED_RATES = (0.5, 0.6, 0.7, 0.8, 0.9, 1.1, 1.2, 1.3, 1.5, 1.7, 2.0)
PITCH_STEPS = (-6, -5, -4, -3, -2, -1, 1, 2, 3, 4, 5, 6)
VOLUME_FACTORS = (0.3, 0.5, 0.7, 1.2, 1.5, 2.0)


def speed_instruction(rate: float) -> str:
    return f"adjusts the speed to {rate:g}"


def pitch_instruction(steps: int) -> str:
    return f"shifts the pitch by {steps} steps"


def volume_instruction(factor: float) -> str:
    return f"adjusts the volume to {factor:g}"


DENOISE_INSTRUCTION = "removes the background noise"
ADD_SOUND_INSTRUCTION = "adds background sound"

# Global edits carry an empty span, so loss weights stay uniform
GLOBAL_SPAN = (0, 0)


def _pick_noise(pool: Sequence[Waveform], rng: np.random.Generator) -> Waveform:
    if not pool:
        raise ConfigurationError("Noise pool is empty (pass --noise-dir with at least one WAV file)")
    return pool[int(rng.integers(len(pool)))]


def construct_denoise_pair(
    clean: Waveform, noise_pool: Sequence[Waveform], snr: float, rng: np.random.Generator
) -> EditPair:
    """Input is clean audio mixed with pool noise at `snr` dB; target is the clean audio."""
    mixed = mix_at_snr(clean, _pick_noise(noise_pool, rng), snr, rng)
    target = Waveform(clean.samples.copy(), clean.sample_rate)
    return EditPair(mixed, target, GLOBAL_SPAN, {"snr_db": float(snr)})


def construct_add_sound_pair(
    clean: Waveform, sound_pool: Sequence[Waveform], snr: float, rng: np.random.Generator
) -> EditPair:
    """The reverse of denoising: input is clean, target carries the background sound."""
    mixed = mix_at_snr(clean, _pick_noise(sound_pool, rng), snr, rng)
    source = Waveform(clean.samples.copy(), clean.sample_rate)
    return EditPair(source, mixed, GLOBAL_SPAN, {"snr_db": float(snr)})


def construct_speed_pair(audio: Waveform, rate: float) -> EditPair:
    target = time_stretch(audio, rate)
    params = {
        "rate": float(rate),
        "source_duration_s": audio.duration_s,
        "target_duration_s": audio.duration_s / rate,
    }
    return EditPair(audio, target, GLOBAL_SPAN, params)


def construct_pitch_pair(audio: Waveform, steps: int) -> EditPair:
    return EditPair(audio, pitch_shift(audio, steps), GLOBAL_SPAN, {"steps": int(steps)})


def construct_volume_pair(audio: Waveform, factor: float) -> EditPair:
    target = apply_gain(audio, factor)
    return EditPair(audio, target, GLOBAL_SPAN, {"factor": float(factor), "source_peak": audio.peak})


class AcousticConstructor(PairConstructor):
    """Content-preserving edits: no CoT, source and target share the transcript."""

    def _emit(self, entry: ManifestEntry, pair: EditPair, instruction: str) -> EditExample:
        self.logger.debug(f"{entry.id}: {self.task} {pair.params}")
        return self.finish(
            entry,
            pair,
            instruction,
            instruction_type=ACOUSTIC_TYPE,
            source_text=entry.transcript,
            target_text=entry.transcript,
        )

    def _sample_snr(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.config.snr_min_db, self.config.snr_max_db))


class DenoiseConstructor(AcousticConstructor):
    @property
    def task(self) -> str:
        return DENOISE

    def construct(self, entry, audio, rng):
        pair = construct_denoise_pair(audio, self.context.noise_pool, self._sample_snr(rng), rng)
        pair.params["achieved_snr_db"] = snr_db(pair.target.samples, pair.source.samples)
        return self._emit(entry, pair, DENOISE_INSTRUCTION)


class AddSoundConstructor(AcousticConstructor):
    @property
    def task(self) -> str:
        return ADD_SOUND

    def construct(self, entry, audio, rng):
        pair = construct_add_sound_pair(audio, self.context.noise_pool, self._sample_snr(rng), rng)
        return self._emit(entry, pair, ADD_SOUND_INSTRUCTION)


class SpeedConstructor(AcousticConstructor):
    @property
    def task(self) -> str:
        return SPEED

    def construct(self, entry, audio, rng):
        rate = float(SPEED_RATES[int(rng.integers(len(SPEED_RATES)))])
        return self._emit(entry, construct_speed_pair(audio, rate), speed_instruction(rate))


class PitchConstructor(AcousticConstructor):
    @property
    def task(self) -> str:
        return PITCH

    def construct(self, entry, audio, rng):
        steps = int(PITCH_STEPS[int(rng.integers(len(PITCH_STEPS)))])
        return self._emit(entry, construct_pitch_pair(audio, steps), pitch_instruction(steps))


class VolumeConstructor(AcousticConstructor):
    @property
    def task(self) -> str:
        return VOLUME

    def construct(self, entry, audio, rng):
        factor = float(VOLUME_FACTORS[int(rng.integers(len(VOLUME_FACTORS)))])
        return self._emit(entry, construct_volume_pair(audio, factor), volume_instruction(factor))
