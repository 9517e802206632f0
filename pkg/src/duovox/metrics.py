"""Objective evaluation: token error rates, phone recognition, reports.

Error rates come from a standard edit-distance alignment with unit costs;
when several alignments tie, backtracing prefers substitution over
insertion over deletion, so the reported error composition is
deterministic.  Phone recognition is nearest-template matching over
24-band envelopes with an energy gate and run-length collapsing; templates
are averaged from reference audio with known alignments.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import audio, dsp
from .corpus import Manifest
from .errors import MissingArtifactError
from .spk import vad_mask
from .voc import band_envelope

VARIANTS = ("dse", "no_dse")
VARIANT_DISPLAY = {"dse": "DSE", "no_dse": "w/o DSE"}


@dataclass
class ErrorRateReport:
    substitutions: int
    insertions: int
    deletions: int
    matches: int
    ref_len: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def rate(self) -> float:
        return self.errors / self.ref_len


def error_rate(ref: list[str], hyp: list[str]) -> ErrorRateReport:
    """Minimum-edit alignment of hyp against ref with typed error counts."""
    if not ref:
        raise ValueError("empty reference")
    n, m = len(ref), len(hyp)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            ins = dist[i, j - 1] + 1
            dele = dist[i - 1, j] + 1
            dist[i, j] = min(sub, ins, dele)

    subs = ins = dels = hits = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            if ref[i - 1] == hyp[j - 1]:
                hits += 1
            else:
                subs += 1
            i, j = i - 1, j - 1
        elif j > 0 and dist[i, j] == dist[i, j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return ErrorRateReport(substitutions=subs, insertions=ins, deletions=dels,
                           matches=hits, ref_len=n)


def build_phone_templates(manifest: Manifest) -> dict[str, np.ndarray]:
    """Mean analyzed band envelope per phone, from aligned reference audio."""
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    for utt in manifest.utterances:
        wave, _sr = audio.read_wav(manifest.path_for(utt))
        env = band_envelope(dsp.mel_spectrogram(wave))
        start = 0
        for sym, dur in zip(utt.transcript, utt.durations):
            end = start + 2 * dur
            if not (sym == "sil" or sym.startswith("sp")):
                chunk = env[start:min(end, env.shape[0])]
                if chunk.shape[0]:
                    sums[sym] = sums.get(sym, 0.0) + chunk.sum(axis=0)
                    counts[sym] = counts.get(sym, 0) + chunk.shape[0]
            start = end
    if not sums:
        raise ValueError("no aligned speech frames to build templates from")
    return {sym: sums[sym] / counts[sym] for sym in sorted(sums)}


def phone_recognize(wave: np.ndarray, templates: dict[str, np.ndarray],
                    min_run: int = 4) -> list[str]:
    """Nearest-template phone sequence; silent input yields an empty list."""
    if not templates:
        raise MissingArtifactError("no phone templates")
    symbols = sorted(templates)
    mat = np.stack([templates[s] for s in symbols])
    mat = mat - mat.mean(axis=1, keepdims=True)
    mat = mat / np.linalg.norm(mat, axis=1, keepdims=True)

    env = band_envelope(dsp.mel_spectrogram(wave))
    speech = vad_mask(dsp.frame_energy(wave))
    centered = env - env.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1, keepdims=True)
    centered = centered / np.maximum(norms, 1e-9)
    best = np.argmax(centered @ mat.T, axis=1)

    out: list[str] = []
    run_sym, run_len = None, 0
    for t in range(len(best)):
        sym = symbols[best[t]] if speech[t] else None
        if sym == run_sym:
            run_len += 1
            continue
        if run_sym is not None and run_len >= min_run:
            out.append(run_sym)
        run_sym, run_len = sym, 1
    if run_sym is not None and run_len >= min_run:
        out.append(run_sym)
    # collapse repeats that survived a gap-induced split
    collapsed = [s for i, s in enumerate(out) if i == 0 or s != out[i - 1]]
    return collapsed


def round10(x: float) -> float:
    """Round to the CSV serialization precision so round trips are exact."""
    return float(format(float(x), ".10g"))


@dataclass
class ResultRow:
    language: str
    variant: str
    speaker_group: str
    wer: float     # percent
    secs: float
    n: int


@dataclass
class ResultsTable:
    rows: list[ResultRow] = field(default_factory=list)

    def add(self, language: str, variant: str, speaker_group: str,
            wer: float, secs_value: float, n: int):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.rows.append(ResultRow(language=language, variant=variant,
                                   speaker_group=speaker_group,
                                   wer=round10(wer), secs=round10(secs_value), n=n))

    def row(self, language: str, variant: str, speaker_group: str) -> ResultRow:
        for r in self.rows:
            if (r.language, r.variant, r.speaker_group) == (language, variant, speaker_group):
                return r
        raise KeyError(f"no row for ({language}, {variant}, {speaker_group})")


_CSV_FIELDS = ("language", "variant", "speaker_group", "wer", "secs", "n")


def write_results_csv(table: ResultsTable, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_FIELDS)
        for r in table.rows:
            writer.writerow([r.language, r.variant, r.speaker_group,
                             format(r.wer, ".10g"), format(r.secs, ".10g"), r.n])


def read_results_csv(path) -> ResultsTable:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"results file not found: {path}")
    table = ResultsTable()
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            table.rows.append(ResultRow(
                language=rec["language"], variant=rec["variant"],
                speaker_group=rec["speaker_group"], wer=float(rec["wer"]),
                secs=float(rec["secs"]), n=int(rec["n"])))
    return table


def render_report(table: ResultsTable) -> str:
    """Aligned text table; subjective score columns are placeholders."""
    header = ("language", "variant", "speakers", "WER%", "SECS", "NMOS", "SMOS", "n")
    body = []
    for r in sorted(table.rows, key=lambda r: (r.language, r.speaker_group,
                                               VARIANTS.index(r.variant))):
        body.append((r.language, VARIANT_DISPLAY[r.variant], r.speaker_group,
                     f"{r.wer:.1f}", f"{r.secs:.3f}", "N/A", "N/A", str(r.n)))
    widths = [max(len(header[c]), *(len(row[c]) for row in body)) if body
              else len(header[c]) for c in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in body:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"
