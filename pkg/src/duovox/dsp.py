"""Frame-level feature extraction: log pitch, energy, voicing, mel spectrogram.

Framing is shared by every extractor: 25 ms windows on a 10 ms hop,
centered, so a waveform of N samples yields ``1 + N // HOP`` frames and
the different feature tracks line up frame-for-frame.

Pitch is estimated per frame by normalized cross-correlation against a
lookahead region (so lags up to the 50 Hz period fit), with parabolic
interpolation of the peak lag.  The voicing probability is the clamped
peak correlation; frames with voicing below 0.5 carry log pitch 0 and are
excluded from all pitch statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 24000
HOP = 240          # 10 ms
WIN = 600          # 25 ms
NFFT = 1024
N_MELS = 80
FMIN = 0.0
FMAX = 12000.0

PITCH_FMIN = 50.0
PITCH_FMAX = 500.0
VOICING_THRESHOLD = 0.5

ENERGY_FLOOR = float(np.log(1e-8))   # log RMS of digital silence
MEL_FLOOR = float(np.log(1e-10))     # log-amplitude floor per mel bin

_LAG_MIN = int(SAMPLE_RATE / PITCH_FMAX)        # 48 samples
# Frames quieter than this never count as voiced; at 16-bit scale there is
# no meaningful periodicity below an RMS of exp(-6).
_VOICING_ENERGY_GATE = -6.0
# Half-width (in log lag) of the octave-smoothing window around the
# utterance's median confident lag; wide enough for any within-utterance
# pitch range, narrow enough to exclude the neighboring octaves.
_ANCHOR_SPAN = np.log(1.6)
_LAG_MAX = int(round(SAMPLE_RATE / PITCH_FMIN))  # 480 samples


@dataclass
class AuxTrack:
    """Per-frame auxiliary features: log pitch (0 when unvoiced), log RMS
    energy, and probability of voicing in [0, 1]."""

    log_pitch: np.ndarray
    energy: np.ndarray
    pov: np.ndarray

    def __len__(self) -> int:
        return len(self.energy)

    @property
    def voiced(self) -> np.ndarray:
        return self.pov >= VOICING_THRESHOLD

    def stack(self) -> np.ndarray:
        """Frames x 3 matrix in (log_pitch, energy, pov) order."""
        return np.stack([self.log_pitch, self.energy, self.pov], axis=1)


def n_frames(n_samples: int, hop: int = HOP) -> int:
    """Number of centered analysis frames for a waveform of n_samples."""
    return 1 + n_samples // hop


def _frame_signal(wave: np.ndarray, pad_right_extra: int = 0) -> np.ndarray:
    """Centered framing: pad WIN//2 on each side, one row per frame."""
    count = n_frames(len(wave))
    padded = np.pad(wave, (WIN // 2, WIN // 2 + pad_right_extra))
    idx = np.arange(WIN)[None, :] + HOP * np.arange(count)[:, None]
    return padded[idx]


def _check_wave(wave: np.ndarray) -> np.ndarray:
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim != 1:
        raise ValueError(f"expected mono waveform, got shape {wave.shape}")
    return wave


def mel_frequencies(n_mels: int = N_MELS, fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    """Center frequencies (Hz) of the triangular mel filters."""
    mel_lo = hz_to_mel(fmin)
    mel_hi = hz_to_mel(fmax)
    mels = np.linspace(mel_lo, mel_hi, n_mels + 2)
    return mel_to_hz(mels)[1:-1]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, nfft: int = NFFT,
                   sample_rate: int = SAMPLE_RATE,
                   fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    """Triangular filters (n_mels x nfft//2+1), each peaking at 1.0."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fft_freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    bank = np.zeros((n_mels, len(fft_freqs)))
    for i in range(n_mels):
        lo, center, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (fft_freqs - lo) / max(center - lo, 1e-9)
        down = (hi - fft_freqs) / max(hi - center, 1e-9)
        bank[i] = np.clip(np.minimum(up, down), 0.0, None)
    return bank


_MEL_BANK = mel_filterbank()
_WINDOW = np.hanning(WIN)


def stft_magnitude(wave: np.ndarray) -> np.ndarray:
    """Magnitude STFT, frames x (NFFT//2+1), shared centered framing."""
    frames = _frame_signal(wave) * _WINDOW[None, :]
    return np.abs(np.fft.rfft(frames, n=NFFT, axis=1))


def mel_spectrogram(wave: np.ndarray, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Log-amplitude mel spectrogram, frames x N_MELS, floored at MEL_FLOOR."""
    wave = _check_wave(wave)
    if len(wave) == 0:
        raise ValueError("empty waveform")
    if sample_rate != SAMPLE_RATE:
        raise ValueError(f"expected {SAMPLE_RATE} Hz input, got {sample_rate}")
    mag = stft_magnitude(wave)
    return np.log(np.maximum(mag @ _MEL_BANK.T, 1e-10))


def frame_energy(wave: np.ndarray) -> np.ndarray:
    """Log RMS energy per frame without the pitch machinery (cheap VAD input)."""
    wave = _check_wave(wave)
    if len(wave) == 0:
        raise ValueError("empty waveform")
    segments = _frame_signal(wave)
    return np.log(np.maximum(np.sqrt(np.mean(segments * segments, axis=1)), 1e-8))


def extract_aux(wave: np.ndarray, sample_rate: int = SAMPLE_RATE) -> AuxTrack:
    """Log pitch, log RMS energy, and voicing probability per frame."""
    wave = _check_wave(wave)
    if sample_rate != SAMPLE_RATE:
        raise ValueError(f"expected {SAMPLE_RATE} Hz input, got {sample_rate}")
    if len(wave) < WIN:
        raise ValueError(f"waveform of {len(wave)} samples is shorter than one "
                         f"{WIN}-sample analysis window")

    count = n_frames(len(wave))
    segments = _frame_signal(wave, pad_right_extra=_LAG_MAX)
    energy = np.log(np.maximum(np.sqrt(np.mean(segments * segments, axis=1)), 1e-8))

    # Lag selection runs on the low-passed signal (tolerant of fractional
    # period offsets); the voicing score comes from the raw correlation at
    # the chosen lag, which low-passed noise would otherwise inflate.
    r_raw = _lag_correlation(wave, count)
    r_lp = _lag_correlation(_pitch_lowpass(wave), count)

    search = r_lp[:, _LAG_MIN: _LAG_MAX + 1]
    peak_rel = np.argmax(search, axis=1)
    peak_lag = peak_rel + _LAG_MIN
    peak_val = search[np.arange(count), peak_rel]

    log_pitch = np.zeros(count)
    pov = np.zeros(count)
    lags = np.zeros(count)
    for t in range(count):
        if energy[t] < _VOICING_ENERGY_GATE:
            continue
        lag0, qualified = _pick_lag(r_lp[t], int(peak_lag[t]), peak_val[t])
        if qualified:
            # Periodic structure: score and refine on the low-passed
            # correlation, which tolerates pitch drift across the window.
            pov[t] = np.clip(r_lp[t, lag0], 0.0, 1.0)
            lags[t] = _refine_lag(r_lp[t], lag0)
        else:
            # Decaying correlation shape: only broadband periodicity at the
            # peak itself may rescue the frame, otherwise treat as noise.
            lo = max(lag0 - 2, _LAG_MIN)
            hi = min(lag0 + 3, _LAG_MAX + 1)
            lag1 = int(np.argmax(r_raw[t, lo:hi])) + lo
            pov[t] = np.clip(min(peak_val[t], r_raw[t, lag1]), 0.0, 1.0)
            lags[t] = _refine_lag(r_raw[t], lag1)

    # Second pass: a dominant harmonic or a frame-rate amplitude comb can
    # hand the first pass a lag an octave off.  Anchor on the utterance's
    # median confident lag and re-pick within the plausible octave span.
    confident = (pov >= 0.7) & (lags > 0)
    if np.any(confident):
        anchor = float(np.median(np.log(lags[confident])))
        for t in range(count):
            if energy[t] < _VOICING_ENERGY_GATE:
                continue
            seg = r_lp[t, _LAG_MIN: _LAG_MAX + 1]
            interior = seg[1:-1]
            is_max = (interior >= seg[:-2]) & (interior >= seg[2:]) \
                & (interior >= 0.35)
            cands = np.nonzero(is_max)[0] + 1 + _LAG_MIN
            if cands.size == 0:
                continue
            near = cands[np.abs(np.log(cands) - anchor) <= _ANCHOR_SPAN]
            if near.size == 0:
                continue
            best = int(near[np.argmax(r_lp[t, near])])
            pov[t] = np.clip(r_lp[t, best], 0.0, 1.0)
            lags[t] = _refine_lag(r_lp[t], best)

    voiced = (pov >= VOICING_THRESHOLD) & (lags > 0)
    log_pitch[voiced] = np.log(sample_rate / lags[voiced])
    return AuxTrack(log_pitch=log_pitch, energy=energy, pov=pov)


def _lag_correlation(wave: np.ndarray, count: int) -> np.ndarray:
    """Normalized cross-correlation of each frame against its lookahead."""
    segments = _frame_signal(wave, pad_right_extra=_LAG_MAX)
    # Lookahead region continues past the window so lags reach the 50 Hz period.
    padded = np.pad(wave, (WIN // 2, WIN // 2 + _LAG_MAX))
    starts = HOP * np.arange(count)
    long_idx = np.arange(WIN + _LAG_MAX)[None, :] + starts[:, None]
    long_seg = padded[long_idx]

    nfft_corr = 1 << int(np.ceil(np.log2(WIN + _LAG_MAX)))
    spec_win = np.fft.rfft(segments, n=nfft_corr, axis=1)
    spec_long = np.fft.rfft(long_seg, n=nfft_corr, axis=1)
    corr = np.fft.irfft(np.conj(spec_win) * spec_long, n=nfft_corr, axis=1)
    corr = corr[:, : _LAG_MAX + 1]

    # Sliding energy of the lagged segment, for normalization.
    sq = long_seg * long_seg
    csum = np.concatenate([np.zeros((count, 1)), np.cumsum(sq, axis=1)], axis=1)
    lag_energy = csum[:, WIN:] - csum[:, : _LAG_MAX + 1]
    e0 = csum[:, WIN] - csum[:, 0]
    denom = np.sqrt(np.maximum(e0[:, None] * lag_energy, 1e-20))
    return corr / denom


_PITCH_LP_PASS = 900.0
_PITCH_LP_STOP = 1200.0


def _pitch_lowpass(wave: np.ndarray) -> np.ndarray:
    """Zero-phase low-pass used only by the pitch tracker.

    Sharp excitation peaks make the normalized correlation collapse at
    integer lags that sit a fraction of a sample off the true period, which
    hands the argmax to a lag multiple.  Smearing everything above the
    harmonic range removes that failure mode."""
    spec = np.fft.rfft(wave)
    freqs = np.fft.rfftfreq(len(wave), d=1.0 / SAMPLE_RATE)
    ramp = np.clip((freqs - _PITCH_LP_PASS) / (_PITCH_LP_STOP - _PITCH_LP_PASS),
                   0.0, 1.0)
    gain = 0.5 * (1.0 + np.cos(np.pi * ramp))
    return np.fft.irfft(spec * gain, n=len(wave))


def _pick_lag(r: np.ndarray, lag: int, peak: float) -> tuple[int, bool]:
    """The smallest locally-maximal lag within 10% of the global peak.

    Every multiple of the true period correlates almost as strongly, so
    among the strong candidates the shortest one is the period.  The flag
    reports whether a qualified interior maximum existed at all: noise
    correlations decay away from lag zero without one."""
    seg = r[_LAG_MIN: _LAG_MAX + 1]
    interior = seg[1:-1]
    strong = (interior >= seg[:-2]) & (interior >= seg[2:]) \
        & (interior >= 0.9 * peak)
    hits = np.nonzero(strong)[0]
    if hits.size == 0:
        return lag, False
    return int(hits[0]) + 1 + _LAG_MIN, True


def _refine_lag(r: np.ndarray, lag: int) -> float:
    """Parabolic interpolation of the correlation peak around an integer lag."""
    if lag <= _LAG_MIN or lag >= _LAG_MAX:
        return float(lag)
    y0, y1, y2 = r[lag - 1], r[lag], r[lag + 1]
    denom = y0 - 2.0 * y1 + y2
    if abs(denom) < 1e-12:
        return float(lag)
    delta = 0.5 * (y0 - y2) / denom
    return float(lag) + float(np.clip(delta, -0.5, 0.5))
