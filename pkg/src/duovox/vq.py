"""Frame descriptors and the two-codebook vector quantizer.

Audio is summarized every 20 ms: the two 10 ms log-mel frames under each
stride are averaged and differenced, the pitch/energy/voicing triple is
averaged, and the resulting 163-d raw vector is lifted to 512-d through a
fixed seeded orthonormal projection.  The two 256-d halves of the lifted
descriptor are quantized independently against 320-codeword books trained
with k-means.

The codebook container is a little-endian binary file:

    magic 4s | version u32 | n_books u32 | n_codewords u32 | dim u32 |
    seed u64 | payload f32[n_books * n_codewords * dim]

Magic "VQCB" marks codebooks; the phone-level quantizer reuses the layout
under magic "PLQZ" with normalization stats prepended to the payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .errors import MissingArtifactError, NumericError
from .kmeans import kmeans

N_BOOKS = 2
N_CODEWORDS = 320
BOOK_DIM = 256
DESC_DIM = N_BOOKS * BOOK_DIM
RAW_DIM = 2 * dsp.N_MELS + 3
STRIDE_SAMPLES = 2 * dsp.HOP  # 20 ms

_MAGIC_CODEBOOK = b"VQCB"
_MAGIC_PL = b"PLQZ"
_VERSION = 1
_HEADER = struct.Struct("<4sIIIIQ")

_LIFT_SEED = 7151

def _build_lift() -> np.ndarray:
    """Fixed orthonormal lift (DESC_DIM x RAW_DIM), QtQ = I on the raw side."""
    rng = np.random.default_rng(_LIFT_SEED)
    gauss = rng.standard_normal((DESC_DIM, RAW_DIM))
    q, r = np.linalg.qr(gauss)
    # canonical column signs so the matrix is reproducible bit for bit
    q = q * np.sign(np.diag(r))[None, :]
    return q


LIFT = _build_lift()


def frame_descriptors(mel: np.ndarray, aux: dsp.AuxTrack) -> np.ndarray:
    """Lifted 512-d descriptors on the 20 ms grid, (n_strides, 512).

    mel is the 10 ms log-mel matrix and aux the matching track; one
    trailing 10 ms frame beyond the last full stride is ignored.
    """
    mel = np.asarray(mel, dtype=np.float64)
    stacked = aux.stack()
    if mel.shape[0] != stacked.shape[0]:
        raise ValueError(f"frame count mismatch: mel {mel.shape[0]} vs aux {stacked.shape[0]}")
    n = mel.shape[0] // 2
    if n == 0:
        raise ValueError("too short: no complete 20 ms stride")
    even = mel[0:2 * n:2]
    odd = mel[1:2 * n:2]
    raw = np.concatenate([
        0.5 * (even + odd),
        odd - even,
        0.5 * (stacked[0:2 * n:2] + stacked[1:2 * n:2]),
    ], axis=1)
    return raw @ LIFT.T


def descriptors_from_wave(wave: np.ndarray, sample_rate: int = dsp.SAMPLE_RATE) -> np.ndarray:
    mel = dsp.mel_spectrogram(wave, sample_rate)
    aux = dsp.extract_aux(wave, sample_rate)
    return frame_descriptors(mel, aux)


@dataclass
class Codebook:
    """Two independent 320x256 books plus training metadata."""

    books: np.ndarray  # (N_BOOKS, N_CODEWORDS, BOOK_DIM), float32 values
    seed: int
    n_iter: list[int] = field(default_factory=list)
    inertia: list[list[float]] = field(default_factory=list)

    def validate(self):
        if self.books.shape != (N_BOOKS, N_CODEWORDS, BOOK_DIM):
            raise ValueError(f"bad codebook shape {self.books.shape}")
        if not np.all(np.isfinite(self.books)):
            raise NumericError("non-finite codewords")
        for b in range(N_BOOKS):
            uniq = np.unique(self.books[b], axis=0)
            if uniq.shape[0] != N_CODEWORDS:
                raise NumericError(f"book {b} has duplicate codewords")


def train_codebooks(descriptors: np.ndarray, seed: int, max_iter: int = 100,
                    tol: float = 1e-6) -> Codebook:
    """k-means each 256-d descriptor half into its own 320-word book."""
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if descriptors.ndim != 2 or descriptors.shape[1] != DESC_DIM:
        raise ValueError(f"expected (n, {DESC_DIM}) descriptors, got {descriptors.shape}")
    if descriptors.shape[0] < N_CODEWORDS:
        raise ValueError(f"need at least {N_CODEWORDS} descriptors, "
                         f"got {descriptors.shape[0]}")
    books = np.empty((N_BOOKS, N_CODEWORDS, BOOK_DIM))
    iters, traces = [], []
    for b in range(N_BOOKS):
        half = descriptors[:, b * BOOK_DIM:(b + 1) * BOOK_DIM]
        result = kmeans(half, N_CODEWORDS, seed=seed + b, max_iter=max_iter, tol=tol)
        books[b] = result.centroids
        iters.append(result.n_iter)
        traces.append(result.inertia_trace)
    cb = Codebook(books=books.astype(np.float32).astype(np.float64),
                  seed=seed, n_iter=iters, inertia=traces)
    cb.validate()
    return cb


def quantize(descriptors: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Nearest codeword per book, ties to the lowest index; (n, 2) ints."""
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if descriptors.ndim != 2 or descriptors.shape[1] != DESC_DIM:
        raise ValueError(f"expected (n, {DESC_DIM}) descriptors, got {descriptors.shape}")
    out = np.empty((descriptors.shape[0], N_BOOKS), dtype=np.int64)
    for b in range(N_BOOKS):
        half = descriptors[:, b * BOOK_DIM:(b + 1) * BOOK_DIM]
        book = codebook.books[b]
        d2 = ((half * half).sum(axis=1)[:, None]
              - 2.0 * half @ book.T
              + (book * book).sum(axis=1)[None, :])
        out[:, b] = d2.argmin(axis=1)
    return out


def dequantize(indices: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Concatenated codewords per stride, (n, 512)."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.ndim != 2 or indices.shape[1] != N_BOOKS:
        raise ValueError(f"expected (n, {N_BOOKS}) indices, got {indices.shape}")
    if indices.size and (indices.min() < 0 or indices.max() >= N_CODEWORDS):
        raise ValueError(f"index out of range [0, {N_CODEWORDS})")
    return np.concatenate([codebook.books[b][indices[:, b]] for b in range(N_BOOKS)],
                          axis=1)


def count_combinations(index_seqs) -> int:
    """Distinct (book0, book1) pairs observed across sequences."""
    seen = set()
    for seq in index_seqs:
        arr = np.asarray(seq, dtype=np.int64)
        for a, b in arr:
            seen.add((int(a), int(b)))
    return len(seen)


def _write_container(path: Path, magic: bytes, n_books: int, n_codewords: int,
                     dim: int, seed: int, payload: np.ndarray):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _HEADER.pack(magic, _VERSION, n_books, n_codewords, dim, seed)
    data = np.asarray(payload, dtype="<f4").tobytes()
    path.write_bytes(header + data)


def _read_container(path: Path, magic: bytes) -> tuple[int, int, int, int, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"quantizer file not found: {path}")
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise ValueError(f"truncated quantizer file: {path}")
    got_magic, version, n_books, n_codewords, dim, seed = _HEADER.unpack_from(blob)
    if got_magic != magic:
        raise ValueError(f"bad magic {got_magic!r} in {path}, expected {magic!r}")
    if version != _VERSION:
        raise ValueError(f"unsupported version {version} in {path}")
    payload = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    return n_books, n_codewords, dim, seed, payload.astype(np.float64)


def save_codebook(codebook: Codebook, path) -> None:
    codebook.validate()
    _write_container(Path(path), _MAGIC_CODEBOOK, N_BOOKS, N_CODEWORDS, BOOK_DIM,
                     codebook.seed, codebook.books.ravel())


def load_codebook(path) -> Codebook:
    n_books, n_codewords, dim, seed, payload = _read_container(Path(path), _MAGIC_CODEBOOK)
    if (n_books, n_codewords, dim) != (N_BOOKS, N_CODEWORDS, BOOK_DIM):
        raise ValueError(f"unexpected codebook geometry ({n_books}, {n_codewords}, {dim})")
    expected = n_books * n_codewords * dim
    if payload.size != expected:
        raise ValueError(f"payload size {payload.size}, expected {expected}")
    cb = Codebook(books=payload.reshape(N_BOOKS, N_CODEWORDS, BOOK_DIM), seed=seed)
    cb.validate()
    return cb


def save_pl_container(path, centroids: np.ndarray, norm_mean: np.ndarray,
                      norm_std: np.ndarray, seed: int) -> None:
    """Phone-level quantizer file: stats then centroids, same header layout."""
    centroids = np.asarray(centroids, dtype=np.float64)
    k, dim = centroids.shape
    payload = np.concatenate([np.asarray(norm_mean, dtype=np.float64),
                              np.asarray(norm_std, dtype=np.float64),
                              centroids.ravel()])
    _write_container(Path(path), _MAGIC_PL, 1, k, dim, seed, payload)


def load_pl_container(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    n_books, k, dim, seed, payload = _read_container(Path(path), _MAGIC_PL)
    if n_books != 1:
        raise ValueError(f"phone-level container must hold one book, got {n_books}")
    expected = 2 * dim + k * dim
    if payload.size != expected:
        raise ValueError(f"payload size {payload.size}, expected {expected}")
    norm_mean = payload[:dim]
    norm_std = payload[dim:2 * dim]
    centroids = payload[2 * dim:].reshape(k, dim)
    return centroids, norm_mean, norm_std, seed
