"""WAV file I/O.

All corpus and synthesis audio is RIFF PCM, 16-bit, mono.  Waveforms are
held in memory as float64 arrays in [-1, 1]; conversion to int16 rounds
half away from zero so that writing is bit-reproducible.
"""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np

INT16_FULL_SCALE = 32767.0


def write_wav(path: str | Path, wave_data: np.ndarray, sample_rate: int) -> None:
    """Write a mono float waveform as 16-bit PCM."""
    samples = np.asarray(wave_data, dtype=np.float64)
    if samples.ndim != 1:
        raise ValueError(f"expected mono waveform, got shape {samples.shape}")
    clipped = np.clip(samples, -1.0, 1.0)
    pcm = np.round(clipped * INT16_FULL_SCALE).astype(np.int16)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    """Read a 16-bit mono PCM file; returns (float64 waveform, sample rate)."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono, got {fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit samples")
        sample_rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    pcm = np.frombuffer(raw, dtype=np.int16)
    return pcm.astype(np.float64) / INT16_FULL_SCALE, sample_rate
