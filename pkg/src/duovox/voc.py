"""Waveform generation from quantized features plus speaker conditioning.

The synthesizer is a deterministic source-filter model on the 10 ms frame
grid: a voicing-weighted mix of a unit-RMS impulse train (phase
accumulator) and seeded Gaussian noise is shaped per frame by a 24-band
log-amplitude envelope applied in the STFT domain, then an overlap-add
resynthesis is level-corrected so every frame lands on its target log RMS
energy.  The corpus generator drives the same core from hand-built
envelopes; the vocoder path drives it from dequantized descriptors.

Speaker identity enters only here: a linear conditioner maps a speaker
embedding to a target spectral tilt and log centroid, and the envelope is
warped and tilted to match before synthesis.  Pitch is never altered by
the speaker vector; cross-speaker pitch mapping is the separate
moment-matching transform pitch_shift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dsp
from .errors import NumericError
from .vq import DESC_DIM, LIFT

N_BANDS = 24
SPEAKER_VEC_DIM = 128

_WARP_LIMITS = (0.75, 1.35)
_DB_PER_NAT = 20.0 / np.log(10.0)


def _build_band_matrix() -> tuple[np.ndarray, np.ndarray]:
    """Average the 80 mel bins into 24 contiguous bands; returns
    (band_matrix 24x80, band center frequencies in Hz)."""
    centers = dsp.mel_frequencies()
    matrix = np.zeros((N_BANDS, dsp.N_MELS))
    band_centers = np.zeros(N_BANDS)
    for b in range(N_BANDS):
        lo = (b * dsp.N_MELS) // N_BANDS
        hi = ((b + 1) * dsp.N_MELS) // N_BANDS
        matrix[b, lo:hi] = 1.0 / (hi - lo)
        band_centers[b] = centers[lo:hi].mean()
    return matrix, band_centers


BAND_MATRIX, BAND_CENTERS_HZ = _build_band_matrix()

# envelope decode: dequantized descriptor -> mean log-mel -> 24 bands
DECODE_MAP = BAND_MATRIX @ LIFT.T[: dsp.N_MELS, :]


def _interp_weights(query_mel: np.ndarray, knot_mel: np.ndarray) -> np.ndarray:
    """Rows of piecewise-linear interpolation weights over the knots."""
    n = len(knot_mel)
    weights = np.zeros((len(query_mel), n))
    j = np.clip(np.searchsorted(knot_mel, query_mel) - 1, 0, n - 2)
    span = knot_mel[j + 1] - knot_mel[j]
    frac = np.clip((query_mel - knot_mel[j]) / span, 0.0, 1.0)
    rows = np.arange(len(query_mel))
    weights[rows, j] = 1.0 - frac
    weights[rows, j + 1] = frac
    return weights


_FFT_FREQS = np.arange(dsp.NFFT // 2 + 1) * dsp.SAMPLE_RATE / dsp.NFFT
_GAIN_WEIGHTS = _interp_weights(dsp.hz_to_mel(_FFT_FREQS), dsp.hz_to_mel(BAND_CENTERS_HZ))


def band_envelope(mel: np.ndarray) -> np.ndarray:
    """Collapse a log-mel matrix (frames x 80) to 24 log-amplitude bands."""
    return np.asarray(mel, dtype=np.float64) @ BAND_MATRIX.T


def envelope_from_vq(vq_frames: np.ndarray) -> np.ndarray:
    """24-band envelope decoded from dequantized 512-d descriptors."""
    vq_frames = np.asarray(vq_frames, dtype=np.float64)
    if vq_frames.ndim != 2 or vq_frames.shape[1] != DESC_DIM:
        raise ValueError(f"expected (n, {DESC_DIM}) dequantized frames, "
                         f"got {vq_frames.shape}")
    return vq_frames @ DECODE_MAP.T


def expand_vq_to_hop(frames: np.ndarray) -> np.ndarray:
    """Repeat 20 ms rows onto the 10 ms grid (factor two along time)."""
    frames = np.asarray(frames)
    if frames.shape[0] == 0:
        raise ValueError("empty frame sequence")
    return np.repeat(frames, 2, axis=0)


def measure_tilt(env: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Mean spectral slope in dB per octave across the band centers."""
    mean_env = _masked_mean(env, mask)
    db = mean_env * _DB_PER_NAT
    octaves = np.log2(BAND_CENTERS_HZ / 1000.0)
    slope = np.polyfit(octaves, db, 1)[0]
    return float(slope)


def measure_log_centroid(env: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Log of the power-weighted mean band frequency."""
    mean_env = _masked_mean(env, mask)
    power = np.exp(2.0 * (mean_env - mean_env.max()))
    centroid = float((power * BAND_CENTERS_HZ).sum() / power.sum())
    return float(np.log(centroid))


def _masked_mean(env: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    env = np.asarray(env, dtype=np.float64)
    if env.ndim != 2 or env.shape[1] != N_BANDS:
        raise ValueError(f"expected (frames, {N_BANDS}) envelope, got {env.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.any():
            env = env[mask]
    return env.mean(axis=0)


def warp_envelope(env: np.ndarray, ratio: float) -> np.ndarray:
    """Scale formant positions by ratio (>1 shifts content upward)."""
    env = np.asarray(env, dtype=np.float64)
    if ratio <= 0.0 or not np.isfinite(ratio):
        raise ValueError(f"warp ratio must be positive and finite, got {ratio}")
    knots = dsp.hz_to_mel(BAND_CENTERS_HZ)
    query = dsp.hz_to_mel(BAND_CENTERS_HZ / ratio)
    return env @ _interp_weights(query, knots).T


def add_tilt(env: np.ndarray, delta_db_per_octave: float) -> np.ndarray:
    """Add a linear dB-per-octave slope around 1 kHz."""
    slope = delta_db_per_octave * np.log2(BAND_CENTERS_HZ / 1000.0) / _DB_PER_NAT
    return np.asarray(env, dtype=np.float64) + slope[None, :]


def fit_envelope_profile(env_mean: np.ndarray, reference: np.ndarray,
                         warp_span: float = 0.08, steps: int = 49,
                         skip_low: int = 3) -> tuple[float, float]:
    """(tilt dB/oct, log warp ratio) moving reference closest to env_mean.

    Grid over the warp ratio with closed-form least squares over tilt and
    a level offset at each step; the winning ratio is chosen without the
    lowest bands, where the pitch harmonics imprint on the envelope and
    masquerade as formant shift, then the tilt is refit over all bands.
    A spectral centroid cannot resolve percent-level formant scaling;
    matching the whole band shape can."""
    env_mean = np.asarray(env_mean, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if env_mean.shape != (N_BANDS,) or reference.shape != (N_BANDS,):
        raise ValueError("profile fit expects two mean band envelopes")
    slope = np.log2(BAND_CENTERS_HZ / 1000.0) / _DB_PER_NAT
    design = np.vstack([np.ones(N_BANDS), slope]).T
    sel = slice(skip_low, N_BANDS)
    best: tuple[float, float] | None = None
    for log_r in np.linspace(-warp_span, warp_span, steps):
        ref = warp_envelope(reference[None, :], float(np.exp(log_r)))[0]
        resid = (env_mean - ref)[sel]
        coef, *_ = np.linalg.lstsq(design[sel], resid, rcond=None)
        rss = float(np.sum((resid - design[sel] @ coef) ** 2))
        if best is None or rss < best[0]:
            best = (rss, float(log_r))
    log_r = best[1]
    ref = warp_envelope(reference[None, :], float(np.exp(log_r)))[0]
    coef, *_ = np.linalg.lstsq(design, env_mean - ref, rcond=None)
    return float(coef[1]), log_r


@dataclass
class PitchStats:
    """First two moments of a speaker's voiced log pitch."""

    mean: float
    std: float

    def validate(self, role: str):
        if self.mean is None or self.std is None:
            raise NumericError(f"{role} pitch stats are missing")
        if not (np.isfinite(self.mean) and np.isfinite(self.std)):
            raise NumericError(f"{role} pitch stats are not finite")
        if self.std <= 0.0:
            raise NumericError(f"{role} pitch spread is {self.std}; cannot map "
                               "pitch through a degenerate distribution")


def pitch_shift(track: dsp.AuxTrack, ntv: PitchStats, tgt: PitchStats) -> dsp.AuxTrack:
    """Affine moment mapping of voiced log pitch from one speaker to another.

    log_out = tgt.std * (log_in - ntv.mean) / ntv.std + tgt.mean on voiced
    frames; unvoiced frames, energy, and voicing are untouched.
    """
    ntv.validate("source")
    tgt.validate("target")
    out = track.log_pitch.copy()
    voiced = track.voiced & (track.log_pitch > 0.0)
    out[voiced] = tgt.std * (track.log_pitch[voiced] - ntv.mean) / ntv.std + tgt.mean
    if voiced.any() and not np.all(np.isfinite(out[voiced])):
        raise NumericError("pitch mapping produced non-finite values")
    return dsp.AuxTrack(log_pitch=out, energy=track.energy.copy(), pov=track.pov.copy())


_DELTA_TILT_LIMIT = 1.6
_DELTA_WARP_LIMIT = 0.06


@dataclass
class SpeakerConditioner:
    """Linear map from speaker embedding to a spectral voice profile:
    (tilt dB/oct, log formant-warp ratio), both relative to the average
    training voice.

    Corrections are applied as profile differences between voices, never
    as per-utterance measurements: measuring the utterance would fold
    phone content into the correction and distort every segment."""

    weight: np.ndarray  # (2, SPEAKER_VEC_DIM)
    bias: np.ndarray    # (2,)
    mean: np.ndarray    # (2,) mean fitted profile over training voices

    def project(self, speaker_vector: np.ndarray) -> tuple[float, float]:
        v = np.asarray(speaker_vector, dtype=np.float64)
        if v.shape != (SPEAKER_VEC_DIM,):
            raise ValueError(f"expected ({SPEAKER_VEC_DIM},) speaker vector, got {v.shape}")
        tilt, log_warp = self.weight @ v + self.bias
        return float(tilt), float(log_warp)

    def deltas(self, speaker_vector: np.ndarray,
               source_vector: np.ndarray | None = None) -> tuple[float, float]:
        """(tilt, log warp) correction moving the source voice's spectrum
        onto the target's.

        With a known source the delta cancels the source profile and
        imposes the target's.  Without one the reference is the mean
        voice, which only biases toward the target.  Both legs are
        clipped: a profile fitted from audio can overshoot on voices the
        embedding separates poorly, and replaying an overshoot as a
        formant warp wrecks segment shapes."""
        tilt, log_warp = self.project(speaker_vector)
        if source_vector is None:
            ref_tilt, ref_warp = float(self.mean[0]), float(self.mean[1])
        else:
            ref_tilt, ref_warp = self.project(source_vector)
        dtilt = float(np.clip(tilt - ref_tilt, -_DELTA_TILT_LIMIT,
                              _DELTA_TILT_LIMIT))
        dwarp = float(np.clip(log_warp - ref_warp, -_DELTA_WARP_LIMIT,
                              _DELTA_WARP_LIMIT))
        return dtilt, dwarp

    def to_dict(self) -> dict:
        return {"weight": self.weight.tolist(), "bias": self.bias.tolist(),
                "mean": self.mean.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "SpeakerConditioner":
        return cls(weight=np.asarray(data["weight"], dtype=np.float64),
                   bias=np.asarray(data["bias"], dtype=np.float64),
                   mean=np.asarray(data["mean"], dtype=np.float64))


def default_conditioner(seed: int = 20717) -> SpeakerConditioner:
    """Fixed seeded map used before a fitted conditioner exists.

    Near-neutral: projections sit close to zero so unfitted synthesis
    applies almost no correction."""
    rng = np.random.default_rng(seed)
    weight = rng.standard_normal((2, SPEAKER_VEC_DIM))
    weight[0] *= 0.1 / np.linalg.norm(weight[0])
    weight[1] *= 0.005 / np.linalg.norm(weight[1])
    bias = np.zeros(2)
    return SpeakerConditioner(weight=weight, bias=bias, mean=bias.copy())


def fit_conditioner(embeddings: np.ndarray, tilts: np.ndarray,
                    log_warps: np.ndarray, ridge: float = 1e-2) -> SpeakerConditioner:
    """Ridge regression from unit embeddings to measured (tilt, log warp)."""
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != SPEAKER_VEC_DIM:
        raise ValueError(f"expected (n, {SPEAKER_VEC_DIM}) embeddings, got {x.shape}")
    y = np.stack([np.asarray(tilts, dtype=np.float64),
                  np.asarray(log_warps, dtype=np.float64)], axis=1)
    if y.shape[0] != x.shape[0]:
        raise ValueError("embedding and target counts differ")
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise NumericError("non-finite conditioner training data")
    aug = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)
    gram = aug.T @ aug + ridge * np.eye(aug.shape[1])
    coef = np.linalg.solve(gram, aug.T @ y)  # (dim+1, 2)
    return SpeakerConditioner(weight=coef[:-1].T, bias=coef[-1],
                              mean=y.mean(axis=0))


@dataclass
class SourceFrames:
    """Per-10 ms-frame synthesis conditions."""

    env: np.ndarray        # (frames, N_BANDS) log amplitude
    log_pitch: np.ndarray  # (frames,), 0 where unvoiced
    energy: np.ndarray     # (frames,) target log RMS
    pov: np.ndarray        # (frames,) voicing in [0, 1]

    def validate(self) -> int:
        n = self.env.shape[0]
        if self.env.ndim != 2 or self.env.shape[1] != N_BANDS:
            raise ValueError(f"expected (frames, {N_BANDS}) envelope, got {self.env.shape}")
        for name in ("log_pitch", "energy", "pov"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ValueError(f"{name} has shape {arr.shape}, expected ({n},)")
        if n == 0:
            raise ValueError("no frames to synthesize")
        for name in ("env", "log_pitch", "energy", "pov"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericError(f"non-finite synthesis condition: {name}")
        return n


def _excitation(frames: SourceFrames, n_samples: int, seed: int) -> np.ndarray:
    voiced = (frames.pov >= dsp.VOICING_THRESHOLD) & (frames.log_pitch > 0.0)
    f0 = np.where(voiced, np.exp(frames.log_pitch), 0.0)
    f0_s = np.repeat(f0, dsp.HOP)[:n_samples]
    pov_s = np.repeat(np.clip(frames.pov, 0.0, 1.0), dsp.HOP)[:n_samples]

    phase = np.cumsum(f0_s / dsp.SAMPLE_RATE)
    cycles = np.floor(phase)
    onsets = np.flatnonzero(np.diff(cycles, prepend=0.0) > 0.0)
    pulses = np.zeros(n_samples)
    if onsets.size:
        # one impulse per period at unit RMS: amplitude sqrt(period)
        pulses[onsets] = np.sqrt(dsp.SAMPLE_RATE / f0_s[onsets])

    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(n_samples)
    return pov_s * pulses + (1.0 - pov_s) * noise


def _filter_stream(exc: np.ndarray, env: np.ndarray) -> np.ndarray:
    """Apply per-frame band gains in the STFT domain; weighted overlap-add."""
    n_samples = len(exc)
    segments = dsp._frame_signal(exc) * dsp._WINDOW[None, :]
    spec = np.fft.rfft(segments, n=dsp.NFFT, axis=1)

    # STFT frame t is centered at sample t*HOP; envelope frame t covers
    # [t*HOP, (t+1)*HOP), so clamp the one trailing frame.
    idx = np.minimum(np.arange(spec.shape[0]), env.shape[0] - 1)
    gains = np.exp(env[idx] @ _GAIN_WEIGHTS.T)
    shaped = np.fft.irfft(spec * gains, n=dsp.NFFT, axis=1)[:, : dsp.WIN]

    pad = dsp.WIN // 2
    buf = np.zeros(segments.shape[0] * dsp.HOP + dsp.WIN)
    wsum = np.zeros_like(buf)
    win_sq = dsp._WINDOW * dsp._WINDOW
    for t in range(segments.shape[0]):
        start = t * dsp.HOP
        buf[start:start + dsp.WIN] += shaped[t] * dsp._WINDOW
        wsum[start:start + dsp.WIN] += win_sq
    buf /= np.maximum(wsum, 1e-8)
    return buf[pad:pad + n_samples]


def _render(frames: SourceFrames, seed: int) -> np.ndarray:
    n = frames.validate()
    n_samples = n * dsp.HOP
    exc = _excitation(frames, n_samples, seed)
    shaped = _filter_stream(exc, frames.env)

    segments = dsp._frame_signal(shaped)
    measured = np.sqrt(np.mean(segments * segments, axis=1))[:n]
    target = np.exp(frames.energy)
    gain = np.minimum(target / np.maximum(measured, 1e-9), 100.0)
    centers = np.arange(n) * dsp.HOP
    per_sample = np.interp(np.arange(n_samples), centers, gain)
    out = shaped * per_sample
    if not np.all(np.isfinite(out)):
        raise NumericError("synthesis produced non-finite samples")
    return out


_EQ_SEED = 4099
_eq_cache: np.ndarray | None = None


def _engine_equalizer() -> np.ndarray:
    """Per-band correction so a rendered wave measures back as its own
    envelope.  Without it the analysis filterbank reads a fixed upward
    ramp into every rendered signal, and each synthesis pass would stack
    another copy on top."""
    global _eq_cache
    if _eq_cache is None:
        n = 200
        flat = SourceFrames(env=np.zeros((n, N_BANDS)),
                            log_pitch=np.full(n, np.log(150.0)),
                            energy=np.full(n, np.log(0.06)),
                            pov=np.ones(n))
        eq = np.zeros(N_BANDS)
        for _ in range(3):
            probe = SourceFrames(env=flat.env - eq, log_pitch=flat.log_pitch,
                                 energy=flat.energy, pov=flat.pov)
            wave = _render(probe, seed=_EQ_SEED)
            measured = band_envelope(dsp.mel_spectrogram(wave))
            eq += measured[5:-5].mean(axis=0)
        # shape-only: the level normalization in _render owns absolute scale
        _eq_cache = eq - eq.mean()
    return _eq_cache


def synthesize_frames(frames: SourceFrames, seed: int) -> np.ndarray:
    """Render frame conditions to a waveform of frames * HOP samples."""
    n = frames.validate()
    n_samples = n * dsp.HOP
    corrected = SourceFrames(env=frames.env - _engine_equalizer()[None, :],
                             log_pitch=frames.log_pitch,
                             energy=frames.energy, pov=frames.pov)
    exc = _excitation(corrected, n_samples, seed)
    shaped = _filter_stream(exc, corrected.env)

    # Per-frame level correction toward the target log RMS.
    segments = dsp._frame_signal(shaped)
    measured = np.sqrt(np.mean(segments * segments, axis=1))[:n]
    target = np.exp(frames.energy)
    gain = np.minimum(target / np.maximum(measured, 1e-9), 100.0)
    centers = np.arange(n) * dsp.HOP
    per_sample = np.interp(np.arange(n_samples), centers, gain)
    out = shaped * per_sample
    if not np.all(np.isfinite(out)):
        raise NumericError("synthesis produced non-finite samples")
    return out


@dataclass
class VocCondition:
    """Everything the vocoder consumes for one utterance."""

    vq_frames: np.ndarray      # (frames, DESC_DIM) dequantized, 10 ms grid
    aux: dsp.AuxTrack          # same frame count
    speaker_vector: np.ndarray  # (SPEAKER_VEC_DIM,), unit norm
    # voice whose spectra the vq features carry, when it is not the target
    # (crosslingual routing); lets the conditioner cancel that profile
    source_vector: np.ndarray | None = None

    def validate(self) -> int:
        vq = np.asarray(self.vq_frames, dtype=np.float64)
        if vq.ndim != 2 or vq.shape[1] != DESC_DIM:
            raise ValueError(f"expected (frames, {DESC_DIM}) vq features, got {vq.shape}")
        n = vq.shape[0]
        if len(self.aux) != n:
            raise ValueError(f"frame count mismatch: vq {n} vs aux {len(self.aux)}")
        if not np.all(np.isfinite(vq)):
            raise NumericError("non-finite vq features")
        vectors = [self.speaker_vector]
        if self.source_vector is not None:
            vectors.append(self.source_vector)
        for v in vectors:
            v = np.asarray(v, dtype=np.float64)
            if v.shape != (SPEAKER_VEC_DIM,):
                raise ValueError(f"expected ({SPEAKER_VEC_DIM},) speaker vector, got {v.shape}")
            norm = float(np.linalg.norm(v))
            if not np.isfinite(norm) or abs(norm - 1.0) > 1e-3:
                raise NumericError(f"speaker vector norm {norm}; expected unit length")
        return n


_SPEECH_ENV_MARGIN = 3.0


def synthesize(cond: VocCondition, seed: int,
               conditioner: SpeakerConditioner | None = None) -> np.ndarray:
    """Vocoder entry point: conditioned envelope decode plus synthesis."""
    cond.validate()
    if conditioner is None:
        conditioner = default_conditioner()
    env = envelope_from_vq(cond.vq_frames)

    speech = env.mean(axis=1) > dsp.MEL_FLOOR + _SPEECH_ENV_MARGIN
    if speech.any():
        dtilt, dwarp = conditioner.deltas(cond.speaker_vector, cond.source_vector)
        ratio = float(np.clip(np.exp(dwarp), *_WARP_LIMITS))
        env = warp_envelope(env, ratio)
        env = add_tilt(env, dtilt)

    frames = SourceFrames(env=env,
                          log_pitch=np.asarray(cond.aux.log_pitch, dtype=np.float64),
                          energy=np.asarray(cond.aux.energy, dtype=np.float64),
                          pov=np.asarray(cond.aux.pov, dtype=np.float64))
    return synthesize_frames(frames, seed)
