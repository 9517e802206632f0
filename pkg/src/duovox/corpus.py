"""Synthetic bilingual corpus: definition, generation, and bookkeeping.

Each language owns a small syllable inventory (distinct vowel per
language, so token sets never collide) and a lexicon in which every word
is exactly two phones.  The two-phone rule makes word segmentation of a
transcript unique, so render_transcript is an exact inverse of the text
front end on generated material.  The 24-band spectral templates and mean
durations behind those symbols come from a single pool shared by all
languages, the way real languages share a phonetic alphabet: language
identity lives in the token sequences, not in the acoustics.

Speakers differ by base pitch, pitch movement range, spectral tilt, and a
formant warp ratio.  Frame-level tilt/band/warp jitter dithers those cues
at the 10 ms scale while utterance-level statistics keep them separable.
Generation is deterministic: every utterance derives its own RNG from
(corpus seed, utterance id), and waveforms are written as 16-bit PCM, so
identical specs reproduce byte-identical trees.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import audio, dsp, voc
from .errors import CorpusError, NumericError
from .textfront import Lexicon, phonemize

PAUSE_DURATION_RANGES = {"sp1": (2, 3), "sp2": (3, 5), "sp3": (4, 6), "sp4": (6, 9)}
SIL_DURATION_RANGE = (3, 5)
_RENDER_MARK = {"sp1": ",", "sp2": "—", "sp3": "."}

_CONSONANTS = ("b", "d", "g", "l", "m", "n", "r", "s", "t", "v")
_UNVOICED_CONSONANTS = ("f", "k")
_VOWELS = ("a", "e", "i", "o", "u", "y")


@dataclass
class PhoneDef:
    symbol: str
    voiced: bool
    mean_duration: int       # 20 ms frames
    template: np.ndarray     # (N_BANDS,) log amplitude

    def to_dict(self) -> dict:
        return {"symbol": self.symbol, "voiced": self.voiced,
                "mean_duration": self.mean_duration,
                "template": [float(x) for x in self.template]}

    @classmethod
    def from_dict(cls, d: dict) -> "PhoneDef":
        return cls(symbol=d["symbol"], voiced=bool(d["voiced"]),
                   mean_duration=int(d["mean_duration"]),
                   template=np.asarray(d["template"], dtype=np.float64))


@dataclass
class LanguageSpec:
    language_id: str
    phones: dict[str, PhoneDef]
    lexicon: Lexicon

    def validate(self):
        if not self.phones:
            raise CorpusError(f"language {self.language_id} has no phones")
        for word, syms in self.lexicon.words.items():
            for s in syms:
                if s not in self.phones:
                    raise CorpusError(f"word {word!r} uses unknown phone {s!r}")
        for p in self.phones.values():
            if p.template.shape != (voc.N_BANDS,):
                raise CorpusError(f"phone {p.symbol}: template shape {p.template.shape}")
            if p.mean_duration < 1:
                raise CorpusError(f"phone {p.symbol}: mean duration must be >= 1")

    def to_dict(self) -> dict:
        return {"language_id": self.language_id,
                "phones": [p.to_dict() for _, p in sorted(self.phones.items())],
                "lexicon": {w: list(p) for w, p in sorted(self.lexicon.words.items())}}

    @classmethod
    def from_dict(cls, d: dict) -> "LanguageSpec":
        phones = {p["symbol"]: PhoneDef.from_dict(p) for p in d["phones"]}
        lexicon = Lexicon(words={w: tuple(p) for w, p in d["lexicon"].items()})
        return cls(language_id=d["language_id"], phones=phones, lexicon=lexicon)


@dataclass
class SpeakerSpec:
    speaker_id: str
    language_id: str
    base_f0: float
    f0_range_semitones: float
    tilt_db_per_octave: float
    formant_scale: float

    def validate(self):
        if self.base_f0 <= 0 or self.formant_scale <= 0 or self.f0_range_semitones < 0:
            raise CorpusError(f"speaker {self.speaker_id}: ratios must be positive")

    def to_dict(self) -> dict:
        return {"speaker_id": self.speaker_id, "language_id": self.language_id,
                "base_f0": self.base_f0, "f0_range_semitones": self.f0_range_semitones,
                "tilt_db_per_octave": self.tilt_db_per_octave,
                "formant_scale": self.formant_scale}

    @classmethod
    def from_dict(cls, d: dict) -> "SpeakerSpec":
        return cls(**d)


@dataclass
class SynthSpec:
    languages: list[LanguageSpec]
    speakers: list[SpeakerSpec]
    utterances_per_speaker: int = 50
    words_min: int = 3
    words_max: int = 6
    comma_prob: float = 0.2
    band_jitter: float = 0.3
    tilt_jitter: float = 1.5
    warp_jitter: float = 0.04
    shape_jitter: float = 0.3
    energy_jitter: float = 0.12
    pitch_jitter: float = 0.012
    seed: int = 0

    def language(self, language_id: str) -> LanguageSpec:
        for lang in self.languages:
            if lang.language_id == language_id:
                return lang
        raise CorpusError(f"unknown language {language_id!r}")

    def validate(self):
        if not self.languages or not self.speakers:
            raise CorpusError("spec needs at least one language and one speaker")
        ids = [lang.language_id for lang in self.languages]
        if len(set(ids)) != len(ids):
            raise CorpusError("duplicate language ids")
        for lang in self.languages:
            lang.validate()
        sids = [s.speaker_id for s in self.speakers]
        if len(set(sids)) != len(sids):
            raise CorpusError("duplicate speaker ids")
        for s in self.speakers:
            s.validate()
            if s.language_id not in ids:
                raise CorpusError(f"speaker {s.speaker_id} references unknown "
                                  f"language {s.language_id}")
        if self.utterances_per_speaker < 1 or self.words_min < 1 \
                or self.words_max < self.words_min:
            raise CorpusError("bad utterance or word-count settings")

    def to_dict(self) -> dict:
        return {
            "languages": [lang.to_dict() for lang in self.languages],
            "speakers": [s.to_dict() for s in self.speakers],
            "utterances_per_speaker": self.utterances_per_speaker,
            "words_min": self.words_min, "words_max": self.words_max,
            "comma_prob": self.comma_prob, "band_jitter": self.band_jitter,
            "tilt_jitter": self.tilt_jitter, "warp_jitter": self.warp_jitter,
            "shape_jitter": self.shape_jitter,
            "energy_jitter": self.energy_jitter, "pitch_jitter": self.pitch_jitter,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(languages=[LanguageSpec.from_dict(x) for x in d["languages"]],
                   speakers=[SpeakerSpec.from_dict(x) for x in d["speakers"]],
                   utterances_per_speaker=int(d["utterances_per_speaker"]),
                   words_min=int(d["words_min"]), words_max=int(d["words_max"]),
                   comma_prob=float(d["comma_prob"]), band_jitter=float(d["band_jitter"]),
                   tilt_jitter=float(d["tilt_jitter"]), warp_jitter=float(d["warp_jitter"]),
                   shape_jitter=float(d["shape_jitter"]),
                   energy_jitter=float(d["energy_jitter"]),
                   pitch_jitter=float(d["pitch_jitter"]), seed=int(d["seed"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1))

    @classmethod
    def load(cls, path) -> "SynthSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _phone_template(rng: np.random.Generator, voiced: bool) -> np.ndarray:
    bands = np.arange(voc.N_BANDS, dtype=np.float64)
    env = np.full(voc.N_BANDS, -2.5) - 0.06 * bands
    n_bumps = int(rng.integers(2, 4))
    lo, hi = (2.0, 18.0) if voiced else (13.0, 23.0)
    for _ in range(n_bumps):
        center = rng.uniform(lo, hi)
        width = rng.uniform(1.0, 2.6)
        amp = rng.uniform(1.8, 3.6)
        env += amp * np.exp(-0.5 * ((bands - center) / width) ** 2)
    return env


def _build_phone_pool(rng: np.random.Generator) -> list[tuple[bool, int, np.ndarray]]:
    """One (voiced, mean duration, template) entry per consonant slot.

    Shared across languages: every language realizes the same acoustic
    units under its own symbol names, so long-run spectral statistics do
    not identify the language.  A speaker encoder trained on this corpus
    then has to key on voice traits rather than on which language the
    utterance happens to be in."""
    pool = []
    for _ in _CONSONANTS:
        pool.append((True, int(rng.integers(4, 9)), _phone_template(rng, True)))
    for _ in _UNVOICED_CONSONANTS:
        pool.append((False, int(rng.integers(3, 6)), _phone_template(rng, False)))
    return pool


def _build_language(index: int, pool: list[tuple[bool, int, np.ndarray]],
                    rng: np.random.Generator) -> LanguageSpec:
    language_id = f"lang{index + 1}"
    vowel = _VOWELS[index % len(_VOWELS)]
    names = [c + vowel for c in _CONSONANTS + _UNVOICED_CONSONANTS]

    phones = {}
    for sym, (voiced, dur, template) in zip(names, pool):
        phones[sym] = PhoneDef(symbol=sym, voiced=voiced,
                               mean_duration=dur, template=template.copy())

    # every word is exactly two phones: segmentation stays unique
    order = sorted(phones)
    pairs = [(a, b) for a in order for b in order if a != b]
    picks = rng.choice(len(pairs), size=45, replace=False)
    words = {}
    for i in sorted(int(p) for p in picks):
        a, b = pairs[i]
        words[a + b] = (a, b)
    return LanguageSpec(language_id=language_id, phones=phones,
                        lexicon=Lexicon(words=words))


def default_synth_spec(n_languages: int = 2, speakers_per_language: int = 6,
                       utterances_per_speaker: int = 50, seed: int = 0) -> SynthSpec:
    """Deterministic full spec: languages, speakers, lexica, templates."""
    if n_languages < 1 or n_languages > len(_VOWELS):
        raise CorpusError(f"supported language count is 1..{len(_VOWELS)}")
    rng = np.random.default_rng([seed, 0xC0F])
    pool = _build_phone_pool(rng)
    languages = [_build_language(i, pool, rng) for i in range(n_languages)]

    total = n_languages * speakers_per_language
    base_f0 = np.exp(np.linspace(np.log(105.0), np.log(285.0), total))
    # Spectral cues stay small next to the frame-level jitter: quantizer
    # clusters then track phones rather than voices, while utterance-level
    # pooling still recovers the speaker.
    tilt_grid = np.linspace(-3.4, -2.0, total)
    warp_grid = np.linspace(0.975, 1.025, total)
    tilt_order = rng.permutation(total)
    warp_order = rng.permutation(total)
    range_cycle = (3.0, 4.5, 6.0, 3.5, 5.0, 4.0)

    speakers = []
    for g in range(total):
        lang = languages[g % n_languages]
        k = g // n_languages
        speakers.append(SpeakerSpec(
            speaker_id=f"{lang.language_id}_s{k + 1:02d}",
            language_id=lang.language_id,
            base_f0=float(base_f0[g]),
            f0_range_semitones=range_cycle[g % len(range_cycle)],
            tilt_db_per_octave=float(tilt_grid[tilt_order[g]]),
            formant_scale=float(warp_grid[warp_order[g]]),
        ))
    spec = SynthSpec(languages=languages, speakers=speakers,
                     utterances_per_speaker=utterances_per_speaker, seed=seed)
    spec.validate()
    return spec


@dataclass
class Utterance:
    id: str
    speaker_id: str
    language_id: str
    audio_path: str
    transcript: list[str]
    durations: list[int]     # 20 ms frames per transcript token
    sample_rate: int

    def to_dict(self) -> dict:
        return {"id": self.id, "speaker_id": self.speaker_id,
                "language_id": self.language_id, "audio_path": self.audio_path,
                "transcript": list(self.transcript),
                "durations": [int(d) for d in self.durations],
                "sample_rate": self.sample_rate}

    @classmethod
    def from_dict(cls, d: dict) -> "Utterance":
        return cls(id=d["id"], speaker_id=d["speaker_id"], language_id=d["language_id"],
                   audio_path=d["audio_path"], transcript=list(d["transcript"]),
                   durations=[int(x) for x in d["durations"]],
                   sample_rate=int(d["sample_rate"]))

    @property
    def n_frames(self) -> int:
        """Total 20 ms frames."""
        return sum(self.durations)


@dataclass
class SpeakerMeta:
    speaker_id: str
    native_language_id: str
    pitch_mean: float | None = None
    pitch_std: float | None = None

    def to_dict(self) -> dict:
        return {"speaker_id": self.speaker_id,
                "native_language_id": self.native_language_id,
                "pitch_mean": self.pitch_mean, "pitch_std": self.pitch_std}

    @classmethod
    def from_dict(cls, d: dict) -> "SpeakerMeta":
        return cls(speaker_id=d["speaker_id"],
                   native_language_id=d["native_language_id"],
                   pitch_mean=d.get("pitch_mean"), pitch_std=d.get("pitch_std"))


@dataclass
class Manifest:
    utterances: list[Utterance]
    speakers: list[SpeakerMeta]
    languages: list[str]
    root: Path | None = None

    def speaker(self, speaker_id: str) -> SpeakerMeta:
        for s in self.speakers:
            if s.speaker_id == speaker_id:
                return s
        raise CorpusError(f"unknown speaker {speaker_id!r}")

    def utterances_for(self, speaker_id: str) -> list[Utterance]:
        return [u for u in self.utterances if u.speaker_id == speaker_id]

    def path_for(self, utt: Utterance) -> Path:
        if self.root is None:
            raise CorpusError("manifest has no root directory; cannot resolve audio")
        return Path(self.root) / utt.audio_path

    def validate(self, check_audio: bool = False):
        speaker_ids = {s.speaker_id for s in self.speakers}
        for u in self.utterances:
            if len(u.transcript) != len(u.durations):
                raise CorpusError(f"{u.id}: transcript/durations length mismatch")
            if any(d < 1 for d in u.durations):
                raise CorpusError(f"{u.id}: non-positive duration")
            if u.sample_rate != dsp.SAMPLE_RATE:
                raise CorpusError(f"{u.id}: sample rate {u.sample_rate}")
            if u.speaker_id not in speaker_ids:
                raise CorpusError(f"{u.id}: unknown speaker {u.speaker_id}")
            if u.language_id not in self.languages:
                raise CorpusError(f"{u.id}: unknown language {u.language_id}")
            if check_audio and not self.path_for(u).exists():
                raise CorpusError(f"{u.id}: missing audio {u.audio_path}")

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps(u.to_dict(), sort_keys=True, separators=(",", ":"))
                 for u in self.utterances]
        path.write_text("\n".join(lines) + ("\n" if lines else ""))
        sidecar = {"languages": list(self.languages),
                   "speakers": [s.to_dict() for s in self.speakers]}
        _sidecar_path(path).write_text(json.dumps(sidecar, sort_keys=True, indent=1))

    @classmethod
    def load(cls, path, root: Path | None = None) -> "Manifest":
        path = Path(path)
        utterances = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    utterances.append(Utterance.from_dict(json.loads(line)))
        sidecar = _sidecar_path(path)
        if sidecar.exists():
            meta = json.loads(sidecar.read_text())
            speakers = [SpeakerMeta.from_dict(s) for s in meta["speakers"]]
            languages = list(meta["languages"])
        else:
            seen: dict[str, str] = {}
            for u in utterances:
                seen.setdefault(u.speaker_id, u.language_id)
            speakers = [SpeakerMeta(s, lang) for s, lang in sorted(seen.items())]
            languages = sorted({u.language_id for u in utterances})
        return cls(utterances=utterances, speakers=speakers, languages=languages,
                   root=root if root is not None else path.parent)


def _sidecar_path(manifest_path: Path) -> Path:
    return manifest_path.parent / (manifest_path.stem + ".speakers.json")


def utterance_rng(seed: int, utt_id: str) -> np.random.Generator:
    """Independent deterministic stream per utterance."""
    digest = hashlib.sha256(f"{seed}:{utt_id}".encode()).digest()
    return np.random.default_rng(np.frombuffer(digest[:16], dtype=np.uint64))


_TILT_BASIS = np.log2(voc.BAND_CENTERS_HZ / 1000.0) / (20.0 / np.log(10.0))


def _utterance_frames(spec: SynthSpec, lang: LanguageSpec, speaker: SpeakerSpec,
                      rng: np.random.Generator) -> tuple[list[str], list[int], voc.SourceFrames]:
    words = sorted(lang.lexicon.words)
    n_words = int(rng.integers(spec.words_min, spec.words_max + 1))
    picked = [words[int(i)] for i in rng.integers(0, len(words), size=n_words)]
    parts = []
    for i, w in enumerate(picked):
        last = i == n_words - 1
        if last:
            parts.append(w + ".")
        elif rng.random() < spec.comma_prob:
            parts.append(w + ",")
        else:
            parts.append(w)
    text = " ".join(parts)

    seq = phonemize(text, lang.language_id, {lang.language_id: lang.lexicon})
    durations = []
    for tok in seq.tokens:
        if tok.kind == "phone":
            mean = lang.phones[tok.symbol].mean_duration
            durations.append(int(np.clip(round(rng.normal(mean, 1.0)), 2, 12)))
        elif tok.kind == "pause":
            lo, hi = PAUSE_DURATION_RANGES[tok.symbol]
            durations.append(int(rng.integers(lo, hi + 1)))
        else:
            lo, hi = SIL_DURATION_RANGE
            durations.append(int(rng.integers(lo, hi + 1)))

    n_tok = len(seq.tokens)
    tok10 = np.repeat(np.arange(n_tok), np.asarray(durations) * 2)
    n = len(tok10)

    is_phone = np.array([t.kind == "phone" for t in seq.tokens])
    is_voiced = np.array([t.kind == "phone" and lang.phones[t.symbol].voiced
                          for t in seq.tokens])
    speech = is_phone[tok10]
    voiced = is_voiced[tok10]

    # envelope: template per token, speaker warp with per-instance jitter
    env_tok = np.full((n_tok, voc.N_BANDS), dsp.MEL_FLOOR)
    for i, tok in enumerate(seq.tokens):
        if not is_phone[i]:
            continue
        ratio = speaker.formant_scale * float(np.exp(rng.normal(0.0, spec.warp_jitter)))
        row = voc.warp_envelope(lang.phones[tok.symbol].template[None, :], ratio)[0]
        # allophonic spread: a shape drawn once per instance and held for the
        # whole token, unlike the frame-level dither below
        env_tok[i] = row + rng.normal(0.0, spec.shape_jitter, size=row.shape) \
            + rng.normal(0.0, 0.08)
    env = env_tok[tok10].copy()
    tilt_frame = speaker.tilt_db_per_octave + rng.normal(0.0, spec.tilt_jitter, size=n)
    env += np.outer(tilt_frame, _TILT_BASIS)
    env += rng.normal(0.0, spec.band_jitter, size=(n, voc.N_BANDS))
    env[~speech] = dsp.MEL_FLOOR

    # energy: slow swell plus per-instance offsets; silence at the floor
    t_norm = np.arange(n) / max(n - 1, 1)
    swell = 0.25 * np.sin(2.0 * np.pi * rng.uniform(0.8, 1.6) * t_norm
                          + rng.uniform(0.0, 2.0 * np.pi))
    inst_off = rng.normal(0.0, spec.energy_jitter, size=n_tok)
    energy = np.full(n, dsp.ENERGY_FLOOR)
    energy[speech] = (np.log(0.06) + swell[speech] + inst_off[tok10][speech]
                      - 0.8 * (~voiced[speech]))

    # pitch: two slow sinusoids, declination, smoothed jitter.  Movement
    # rates are per frame (not per utterance) so short utterances never get
    # steep contours a correlation tracker cannot follow.
    a = speaker.f0_range_semitones / 2.0 * np.log(2.0) / 12.0
    c1 = rng.uniform(0.5, 1.0) * n / 100.0
    c2 = rng.uniform(1.4, 2.2) * n / 100.0
    p1, p2 = rng.uniform(0.0, 2.0 * np.pi, size=2)
    kernel = np.exp(-0.5 * (np.arange(-3, 4) / 1.5) ** 2)
    kernel /= np.sqrt(np.sum(kernel ** 2))
    jitter = np.convolve(rng.normal(0.0, spec.pitch_jitter, size=n + 6),
                         kernel, mode="valid")
    contour = (np.log(speaker.base_f0)
               + a * (0.6 * np.sin(2.0 * np.pi * c1 * t_norm + p1)
                      + 0.4 * np.sin(2.0 * np.pi * c2 * t_norm + p2))
               - 0.04 * t_norm
               + jitter)
    contour = np.clip(contour, np.log(60.0), np.log(460.0))
    if voiced.any():
        # speakers hold their register: center the voiced mean on base f0 so
        # utterance-level pitch statistics identify the speaker, not the
        # sentence the speaker happened to read
        contour = contour - contour[voiced].mean() + np.log(speaker.base_f0)
        contour = np.clip(contour, np.log(60.0), np.log(460.0))
    log_pitch = np.where(voiced, contour, 0.0)
    pov = voiced.astype(np.float64)

    frames = voc.SourceFrames(env=env, log_pitch=log_pitch, energy=energy, pov=pov)
    return seq.symbols, durations, frames


def generate_corpus(spec: SynthSpec, out_dir) -> Manifest:
    """Render the corpus tree: wav files, manifest, spec and lexicon copies."""
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    lang_by_id = {lang.language_id: lang for lang in spec.languages}
    utterances = []
    for speaker in spec.speakers:
        lang = lang_by_id[speaker.language_id]
        wav_dir = out_dir / "wav" / speaker.speaker_id
        wav_dir.mkdir(parents=True, exist_ok=True)
        for u in range(spec.utterances_per_speaker):
            utt_id = f"{speaker.speaker_id}_{u:03d}"
            rng = utterance_rng(spec.seed, utt_id)
            symbols, durations, frames = _utterance_frames(spec, lang, speaker, rng)
            wave = voc.synthesize_frames(frames, seed=int(rng.integers(2 ** 31)))
            peak = float(np.max(np.abs(wave))) if wave.size else 0.0
            if peak > 0.98:
                wave = wave * (0.98 / peak)
            rel = f"wav/{speaker.speaker_id}/{utt_id}.wav"
            audio.write_wav(out_dir / rel, wave, dsp.SAMPLE_RATE)
            utterances.append(Utterance(
                id=utt_id, speaker_id=speaker.speaker_id,
                language_id=speaker.language_id, audio_path=rel,
                transcript=symbols, durations=durations,
                sample_rate=dsp.SAMPLE_RATE))

    manifest = Manifest(
        utterances=utterances,
        speakers=[SpeakerMeta(s.speaker_id, s.language_id) for s in spec.speakers],
        languages=[lang.language_id for lang in spec.languages],
        root=out_dir)
    manifest.validate(check_audio=True)
    manifest.save(out_dir / "manifest.jsonl")
    spec.save(out_dir / "synth_spec.json")
    for lang in spec.languages:
        lang.lexicon.save(out_dir / f"lexicon_{lang.language_id}.txt")
    return manifest


def _largest_remainder(counts: list[tuple[str, int]], take: int) -> dict[str, int]:
    total = sum(n for _, n in counts)
    exact = [(s, n * take / total) for s, n in counts]
    base = {s: int(math.floor(x)) for s, x in exact}
    remaining = take - sum(base.values())
    order = sorted(exact, key=lambda sx: (-(sx[1] - math.floor(sx[1])), sx[0]))
    for s, _ in order[:remaining]:
        base[s] += 1
    return base


def split(manifest: Manifest, val_frac: float = 0.05, test_frac: float = 0.05,
          seed: int = 0) -> tuple[Manifest, Manifest, Manifest]:
    """Per-speaker stratified split with exact overall totals."""
    if not (0.0 <= val_frac and 0.0 <= test_frac and val_frac + test_frac < 1.0):
        raise ValueError(f"bad split fractions ({val_frac}, {test_frac})")
    by_speaker: dict[str, list[Utterance]] = {}
    for u in manifest.utterances:
        by_speaker.setdefault(u.speaker_id, []).append(u)
    if (val_frac > 0 or test_frac > 0):
        thin = sorted(s for s, us in by_speaker.items() if len(us) < 3)
        if thin:
            raise CorpusError("cannot stratify speakers with fewer than 3 "
                              f"utterances: {', '.join(thin)}")

    n = len(manifest.utterances)
    if n == 0:
        raise CorpusError("empty manifest")
    counts = sorted((s, len(us)) for s, us in by_speaker.items())
    val_take = _largest_remainder(counts, int(round(n * val_frac)))
    test_take = _largest_remainder(counts, int(round(n * test_frac)))

    parts: dict[str, list[Utterance]] = {"train": [], "val": [], "test": []}
    for speaker_id, utts in sorted(by_speaker.items()):
        utts = sorted(utts, key=lambda u: u.id)
        nv, nt = val_take[speaker_id], test_take[speaker_id]
        if nv + nt >= len(utts):
            raise CorpusError(f"speaker {speaker_id}: split leaves no training data")
        rng = utterance_rng(seed, f"split:{speaker_id}")
        order = rng.permutation(len(utts))
        for rank, idx in enumerate(order):
            part = "test" if rank < nt else "val" if rank < nt + nv else "train"
            parts[part].append(utts[idx])

    out = []
    for name in ("train", "val", "test"):
        utts = sorted(parts[name], key=lambda u: u.id)
        out.append(replace(manifest, utterances=utts))
    return tuple(out)


def balance_weights(manifest: Manifest, alpha: float = 0.2) -> dict[str, float]:
    """Language sampling weights proportional to hours ** alpha."""
    if not manifest.utterances:
        raise CorpusError("empty manifest")
    hours: dict[str, float] = {lang: 0.0 for lang in manifest.languages}
    for u in manifest.utterances:
        hours[u.language_id] = hours.get(u.language_id, 0.0) + u.n_frames * 0.02 / 3600.0
    zero = sorted(lang for lang, h in hours.items() if h <= 0.0)
    if zero:
        raise CorpusError(f"languages without audio: {', '.join(zero)}")
    raised = {lang: h ** alpha for lang, h in hours.items()}
    total = sum(raised.values())
    return {lang: raised[lang] / total for lang in sorted(raised)}


def speaker_pitch_stats(manifest: Manifest, speaker_id: str) -> voc.PitchStats:
    """Voiced log-pitch moments over a speaker's manifest audio."""
    utts = manifest.utterances_for(speaker_id)
    if not utts:
        raise CorpusError(f"speaker {speaker_id!r} has no utterances")
    chunks = []
    for u in utts:
        wave, _sr = audio.read_wav(manifest.path_for(u))
        aux = dsp.extract_aux(wave)
        chunks.append(aux.log_pitch[aux.voiced])
    voiced = np.concatenate(chunks) if chunks else np.empty(0)
    if voiced.size == 0:
        raise NumericError(f"speaker {speaker_id}: no voiced frames for pitch stats")
    return voc.PitchStats(mean=float(voiced.mean()), std=float(voiced.std()))


def fill_pitch_stats(manifest: Manifest) -> Manifest:
    """Manifest copy whose speaker entries carry train-split pitch stats."""
    speakers = []
    for meta in manifest.speakers:
        if manifest.utterances_for(meta.speaker_id):
            stats = speaker_pitch_stats(manifest, meta.speaker_id)
            speakers.append(replace(meta, pitch_mean=stats.mean, pitch_std=stats.std))
        else:
            speakers.append(replace(meta))
    return replace(manifest, speakers=speakers)


def render_transcript(transcript: list[str], language: LanguageSpec) -> str:
    """Text whose phonemization reproduces the transcript exactly."""
    inverse = {phones: word for word, phones in language.lexicon.words.items()}
    segments: list[str] = []
    words: list[str] = []
    run: list[str] = []

    def flush_run():
        if len(run) % 2 != 0:
            raise ValueError("phone run does not segment into two-phone words")
        for i in range(0, len(run), 2):
            pair = (run[i], run[i + 1])
            if pair not in inverse:
                raise ValueError(f"no word for phone pair {pair}")
            words.append(inverse[pair])
        run.clear()

    def flush_segment(mark: str):
        flush_run()
        if not words:
            raise ValueError("pause with no preceding words cannot be rendered")
        segments.append(" ".join(words) + mark)
        words.clear()

    for sym in transcript:
        if sym == "sil":
            continue
        if sym in _RENDER_MARK:
            flush_segment(_RENDER_MARK[sym])
        elif sym == "sp4":
            flush_segment(".\n\n")
        else:
            run.append(sym)
    flush_run()
    if words:
        segments.append(" ".join(words))
        words.clear()
    return " ".join(s for s in segments).replace(".\n\n ", ".\n\n").strip()
