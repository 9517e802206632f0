"""Text normalization to phone-token sequences.

A transcript line is split into words and punctuation, words are expanded
through a per-language lexicon, punctuation becomes graded pause tokens
(sp1 shortest .. sp4 paragraph break), consecutive pauses collapse to the
longest, and the sequence is wrapped in silence markers.  Phone symbols
may carry a trailing digit (tone or stress); the digit stays part of the
symbol identity and is also exposed parsed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import VocabularyError

SIL = "sil"
PAUSE_SYMBOLS = ("sp1", "sp2", "sp3", "sp4")

_PAUSE_FOR_MARK = {
    ",": "sp1", ";": "sp1", ":": "sp1",
    "(": "sp2", ")": "sp2", "—": "sp2", "…": "sp2",
    ".": "sp3", "!": "sp3", "?": "sp3",
}
_PARAGRAPH = "\n\n"
_WORD_RE = re.compile(r"[a-z0-9']+")


def pause_rank(symbol: str) -> int:
    return PAUSE_SYMBOLS.index(symbol)


def map_punctuation(mark: str) -> str:
    """Pause class for a punctuation mark or paragraph break."""
    if mark == _PARAGRAPH:
        return "sp4"
    if mark in _PAUSE_FOR_MARK:
        return _PAUSE_FOR_MARK[mark]
    raise ValueError(f"unsupported punctuation mark {mark!r}")


@dataclass(frozen=True)
class PhoneToken:
    symbol: str
    kind: str  # "phone" | "pause" | "sil"
    tone_or_stress: int | None = None

    def __post_init__(self):
        if self.kind not in ("phone", "pause", "sil"):
            raise ValueError(f"unknown token kind {self.kind!r}")


def _phone_token(symbol: str) -> PhoneToken:
    match = re.search(r"(\d+)$", symbol)
    tone = int(match.group(1)) if match else None
    return PhoneToken(symbol=symbol, kind="phone", tone_or_stress=tone)


_SIL_TOKEN = PhoneToken(symbol=SIL, kind="sil")


@dataclass
class TokenSequence:
    tokens: list[PhoneToken]
    language_id: str

    @property
    def symbols(self) -> list[str]:
        return [t.symbol for t in self.tokens]

    def validate(self):
        if len(self.tokens) < 2:
            raise ValueError("sequence must at least hold the silence wrapper")
        if self.tokens[0].kind != "sil" or self.tokens[-1].kind != "sil":
            raise ValueError("sequence must start and end with silence")
        for a, b in zip(self.tokens, self.tokens[1:]):
            if a.kind == "pause" and b.kind == "pause":
                raise ValueError(f"adjacent pauses {a.symbol}/{b.symbol} not collapsed")


@dataclass
class Lexicon:
    """Word to phone-symbol expansion for one language."""

    words: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def lookup(self, word: str) -> tuple[str, ...]:
        try:
            return self.words[word]
        except KeyError:
            raise VocabularyError(f"word {word!r} not in lexicon") from None

    def phone_symbols(self) -> list[str]:
        symbols = set()
        for phones in self.words.values():
            symbols.update(phones)
        return sorted(symbols)

    def save(self, path):
        lines = [f"{w}\t{' '.join(p)}" for w, p in sorted(self.words.items())]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Lexicon":
        words: dict[str, tuple[str, ...]] = {}
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2 or not parts[1].strip():
                    raise ValueError(f"{path}:{line_no}: expected 'word<TAB>phones'")
                words[parts[0]] = tuple(parts[1].split())
        return cls(words=words)


def _scan(text: str) -> list[tuple[str, str]]:
    """Yield ("word", w) and ("mark", m) events; paragraph breaks become
    the sentinel mark "\\n\\n"."""
    events: list[tuple[str, str]] = []
    paragraphs = re.split(r"\n\s*\n", text)
    for p, para in enumerate(paragraphs):
        if p > 0:
            events.append(("mark", _PARAGRAPH))
        pos = 0
        lowered = para.lower()
        while pos < len(lowered):
            ch = lowered[pos]
            if ch.isspace():
                pos += 1
                continue
            m = _WORD_RE.match(lowered, pos)
            if m:
                events.append(("word", m.group(0)))
                pos = m.end()
                continue
            if ch in _PAUSE_FOR_MARK:
                events.append(("mark", ch))
                pos += 1
                continue
            raise ValueError(f"unsupported character {ch!r} in text")
    return events


def phonemize(text: str, language_id: str, lexicons: dict[str, Lexicon]) -> TokenSequence:
    """Expand text to a silence-wrapped phone/pause token sequence."""
    if language_id not in lexicons:
        raise VocabularyError(f"no lexicon registered for language {language_id!r}")
    lexicon = lexicons[language_id]

    body: list[PhoneToken] = []
    for kind, value in _scan(text):
        if kind == "word":
            body.extend(_phone_token(s) for s in lexicon.lookup(value))
        else:
            pause = PhoneToken(symbol=map_punctuation(value), kind="pause")
            if body and body[-1].kind == "pause":
                if pause_rank(pause.symbol) > pause_rank(body[-1].symbol):
                    body[-1] = pause
            elif body:
                body.append(pause)
            # leading pauses fold into the opening silence

    tokens = [_SIL_TOKEN, *body, _SIL_TOKEN]
    seq = TokenSequence(tokens=tokens, language_id=language_id)
    seq.validate()
    return seq


@dataclass
class EmbeddingTable:
    """Fixed seeded token embeddings (vocabulary x dim)."""

    vocabulary: dict[str, int]
    matrix: np.ndarray
    seed: int

    def __post_init__(self):
        if self.matrix.shape[0] != len(self.vocabulary):
            raise ValueError("vocabulary size and matrix rows differ")


TOKEN_EMB_DIM = 384


def build_embedding_table(symbols, dim: int = TOKEN_EMB_DIM, seed: int = 0) -> EmbeddingTable:
    """Uniform [-0.1, 0.1] rows over the sorted symbol set; deterministic."""
    ordered = sorted(set(symbols))
    if not ordered:
        raise ValueError("empty vocabulary")
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-0.1, 0.1, size=(len(ordered), dim))
    return EmbeddingTable(vocabulary={s: i for i, s in enumerate(ordered)},
                          matrix=matrix, seed=seed)


def embed(symbols, table: EmbeddingTable) -> np.ndarray:
    """Rows of the table for each symbol; unknown symbols are an error."""
    if isinstance(symbols, TokenSequence):
        symbols = symbols.symbols
    rows = []
    for s in symbols:
        if s not in table.vocabulary:
            raise VocabularyError(f"symbol {s!r} not in embedding vocabulary")
        rows.append(table.vocabulary[s])
    return table.matrix[rows] if rows else np.zeros((0, table.matrix.shape[1]))
