"""Speaker encoder: utterance-level embeddings and identification.

A three-block convolutional stack over frame features feeds temporal
statistics pooling (mean and std), a linear bottleneck whose L2-normalized
output is the speaker embedding, and a classification layer over training
speakers.  Non-speech frames are dropped before pooling with a simple
energy gate, so leading/trailing silence cannot move an embedding.

The same classifier (with the input width adapted to the feature type)
serves the speaker-information probe, so train_classifier accepts
arbitrary per-frame feature matrices.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import audio, dsp, nn
from .corpus import Manifest
from .errors import MissingArtifactError
from .voc import SPEAKER_VEC_DIM

MIN_EMBED_SECONDS = 0.5


@dataclass
class SpkConfig:
    input_dim: int = dsp.N_MELS
    width: int = 64
    emb_dim: int = SPEAKER_VEC_DIM
    kernel: int = 5
    seed: int = 0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "SpkConfig":
        return cls(**{k: int(v) for k, v in d.items()})


def vad_mask(energy: np.ndarray) -> np.ndarray:
    """Speech-frame gate from log RMS energy; permissive on silence-only input."""
    energy = np.asarray(energy, dtype=np.float64)
    threshold = max(float(energy.max()) - 3.0, dsp.ENERGY_FLOOR + 2.0)
    mask = energy > threshold
    if not mask.any():
        return np.ones_like(mask, dtype=bool)
    return mask


class SpeakerEncoder:
    def __init__(self, config: SpkConfig, classes: list[str]):
        if len(classes) < 2:
            raise ValueError("need at least 2 classes")
        self.config = config
        self.classes = list(classes)
        rng = np.random.default_rng(config.seed)
        w, k = config.width, config.kernel
        self.convs = nn.Sequential([
            nn.Conv1d(config.input_dim, w, k, rng, "spk0.conv"),
            nn.LayerNorm(w, "spk0.ln"), nn.ReLU(),
            nn.Conv1d(w, w, k, rng, "spk1.conv"),
            nn.LayerNorm(w, "spk1.ln"), nn.ReLU(),
            nn.Conv1d(w, w, k, rng, "spk2.conv"),
            nn.LayerNorm(w, "spk2.ln"), nn.ReLU(),
        ])
        self.pool = nn.StatsPool()
        self.bottleneck = nn.Linear(2 * w, config.emb_dim, rng, "spk_bottleneck")
        self.act = nn.ReLU()
        self.classifier = nn.Linear(config.emb_dim, len(classes), rng, "spk_classifier")

    def params(self) -> list[nn.Param]:
        return (self.convs.params() + self.bottleneck.params()
                + self.classifier.params())

    def _check_input(self, feats: np.ndarray) -> np.ndarray:
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != self.config.input_dim:
            raise ValueError(f"expected (frames, {self.config.input_dim}) features, "
                             f"got {feats.shape}")
        if feats.shape[0] < 1:
            raise ValueError("empty feature sequence")
        return feats

    def forward_logits(self, feats: np.ndarray) -> np.ndarray:
        feats = self._check_input(feats)
        pooled = self.pool.forward(self.convs.forward(feats))
        hidden = self.act.forward(self.bottleneck.forward(pooled[None, :]))
        return self.classifier.forward(hidden)[0]

    def backward_logits(self, dlogits: np.ndarray):
        dh = self.classifier.backward(dlogits[None, :])
        dpool = self.bottleneck.backward(self.act.backward(dh))
        self.convs.backward(self.pool.backward(dpool[0]))

    def embed(self, feats: np.ndarray) -> np.ndarray:
        """Unit-norm embedding: bottleneck output before the classifier."""
        feats = self._check_input(feats)
        pooled = self.pool.forward(self.convs.forward(feats))
        emb = self.bottleneck.forward(pooled[None, :])[0]
        norm = float(np.linalg.norm(emb))
        if norm <= 0.0 or not np.isfinite(norm):
            raise ValueError("degenerate embedding; cannot normalize")
        return emb / norm

    def classify(self, feats: np.ndarray) -> str:
        return self.classes[int(np.argmax(self.forward_logits(feats)))]

    def save(self, path) -> None:
        meta = {"config": self.config.to_dict(), "classes": self.classes}
        arrays = {f"param_{i}": p.value for i, p in enumerate(self.params())}
        buf = io.BytesIO()
        np.savez_compressed(buf, meta=np.frombuffer(
            json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path) -> "SpeakerEncoder":
        path = Path(path)
        if not path.exists():
            raise MissingArtifactError(f"speaker encoder not found: {path}")
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            enc = cls(SpkConfig.from_dict(meta["config"]), meta["classes"])
            for i, p in enumerate(enc.params()):
                saved = data[f"param_{i}"]
                if saved.shape != p.value.shape:
                    raise ValueError(f"checkpoint shape mismatch for {p.name}")
                p.value[...] = saved
        return enc


@dataclass
class TrainHistory:
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)


def train_classifier(features: list[np.ndarray], labels: list[int],
                     classes: list[str], epochs: int, seed: int,
                     config: SpkConfig | None = None, crop: int = 120,
                     lr: float = 1e-3, batch_size: int = 16) -> tuple[SpeakerEncoder, TrainHistory]:
    """Fit the encoder on per-utterance feature matrices; deterministic."""
    if len(features) != len(labels):
        raise ValueError("feature/label count mismatch")
    if not features:
        raise ValueError("no training data")
    if config is None:
        config = SpkConfig(input_dim=features[0].shape[1], seed=seed)
    encoder = SpeakerEncoder(config, classes)
    optimizer = nn.Adam(encoder.params(), lr=lr)
    history = TrainHistory()
    n = len(features)
    labels_arr = np.asarray(labels, dtype=np.int64)

    for epoch in range(epochs):
        rng = np.random.default_rng([seed, 0x5E55, epoch])
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            batch = order[start:start + batch_size]
            optimizer.zero_grad()
            scale = 1.0 / len(batch)
            for idx in batch:
                feats = features[idx]
                if feats.shape[0] > crop:
                    s = int(rng.integers(feats.shape[0] - crop + 1))
                    feats = feats[s:s + crop]
                logits = encoder.forward_logits(feats)
                loss, dlogits = nn.cross_entropy(logits, int(labels_arr[idx]))
                encoder.backward_logits(dlogits * scale)
                epoch_loss += loss
            optimizer.step()
        history.loss.append(epoch_loss / n)
        correct = sum(
            int(np.argmax(encoder.forward_logits(f)) == y)
            for f, y in zip(features, labels_arr))
        history.accuracy.append(correct / n)
    return encoder, history


def utterance_features(wave: np.ndarray) -> np.ndarray:
    """VAD-gated log-mel rows, the encoder's native input."""
    mel = dsp.mel_spectrogram(wave)
    return mel[vad_mask(dsp.frame_energy(wave))]


def train_speaker_encoder(manifest: Manifest, epochs: int = 12, seed: int = 0,
                          crop: int = 120, lr: float = 1e-3,
                          batch_size: int = 16) -> tuple[SpeakerEncoder, TrainHistory]:
    """Speaker-ID training over a manifest's audio."""
    classes = sorted({u.speaker_id for u in manifest.utterances})
    if len(classes) < 2:
        raise ValueError("need utterances from at least 2 speakers")
    index = {s: i for i, s in enumerate(classes)}
    features, labels = [], []
    for utt in sorted(manifest.utterances, key=lambda u: u.id):
        wave, _sr = audio.read_wav(manifest.path_for(utt))
        features.append(utterance_features(wave))
        labels.append(index[utt.speaker_id])
    return train_classifier(features, labels, classes, epochs=epochs, seed=seed,
                            crop=crop, lr=lr, batch_size=batch_size)


def embed_speaker(encoder: SpeakerEncoder, wave: np.ndarray) -> np.ndarray:
    """Embedding for raw audio; input must cover at least half a second."""
    wave = np.asarray(wave, dtype=np.float64)
    if len(wave) < int(MIN_EMBED_SECONDS * dsp.SAMPLE_RATE):
        raise ValueError(f"need at least {MIN_EMBED_SECONDS} s of audio, "
                         f"got {len(wave) / dsp.SAMPLE_RATE:.3f} s")
    return encoder.embed(utterance_features(wave))


def secs(a: np.ndarray, b: np.ndarray) -> float:
    """Speaker-embedding cosine similarity, clipped to [0, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na <= 0.0 or nb <= 0.0:
        raise ValueError("zero-length embedding")
    return max(0.0, float(np.dot(a / na, b / nb)))
