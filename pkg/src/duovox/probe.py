"""Speaker-information probe over intermediate feature spaces.

How much speaker identity survives in each representation is measured by
training one identical classifier per feature kind (same architecture,
same splits, same seeds; only the input width adapts) on speaker ID and
comparing test accuracies.  Kinds: raw log-mel frames, quantized indices
(one-hot per book), dequantized codewords, and the pitch/energy/voicing
track.  A seeded pure-noise kind is available as a chance-level control.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import audio, dsp, vq
from .corpus import Manifest, split, utterance_rng
from .errors import MissingArtifactError
from .spk import SpkConfig, train_classifier, vad_mask

FEATURE_KINDS = ("mel", "vq_indices", "vq_codewords", "aux")
_NOISE_DIM = 16


@dataclass
class ProbeRow:
    kind: str
    accuracy: float
    n_train: int
    n_test: int
    n_classes: int
    epochs: int
    seed: int


@dataclass
class ProbeResult:
    rows: list[ProbeRow] = field(default_factory=list)

    def accuracy(self, kind: str) -> float:
        for row in self.rows:
            if row.kind == kind:
                return row.accuracy
        raise KeyError(f"no probe row for kind {kind!r}")


def _mask20(mask10: np.ndarray, n_strides: int) -> np.ndarray:
    paired = mask10[: 2 * n_strides].reshape(n_strides, 2)
    return paired.any(axis=1)


def utterance_probe_features(wave: np.ndarray, kind: str,
                             codebook: vq.Codebook | None = None,
                             rng: np.random.Generator | None = None) -> np.ndarray:
    """Per-frame feature matrix for one utterance, speech frames only."""
    mask10 = vad_mask(dsp.frame_energy(wave))
    if kind == "mel":
        return dsp.mel_spectrogram(wave)[mask10]
    if kind == "aux":
        return dsp.extract_aux(wave).stack()[mask10]
    if kind in ("vq_indices", "vq_codewords"):
        if codebook is None:
            raise MissingArtifactError(f"feature kind {kind!r} needs a codebook")
        desc = vq.descriptors_from_wave(wave)
        indices = vq.quantize(desc, codebook)
        keep = _mask20(mask10, desc.shape[0])
        if kind == "vq_codewords":
            return vq.dequantize(indices, codebook)[keep]
        onehot = np.zeros((desc.shape[0], vq.N_BOOKS * vq.N_CODEWORDS))
        rows = np.arange(desc.shape[0])
        for b in range(vq.N_BOOKS):
            onehot[rows, b * vq.N_CODEWORDS + indices[:, b]] = 1.0
        return onehot[keep]
    if kind == "noise":
        if rng is None:
            raise ValueError("noise features need an explicit rng")
        n = int(np.count_nonzero(mask10))
        return rng.standard_normal((n, _NOISE_DIM))
    raise ValueError(f"unknown feature kind {kind!r}; expected one of "
                     f"{FEATURE_KINDS} or 'noise'")


def run_probe(manifest: Manifest, kinds=FEATURE_KINDS, epochs: int = 12,
              seed: int = 0, codebook: vq.Codebook | None = None,
              crop: int = 60, width: int = 48,
              val_frac: float = 0.05, test_frac: float = 0.05) -> ProbeResult:
    """Train and score one classifier per feature kind on shared splits."""
    classes = sorted({u.speaker_id for u in manifest.utterances})
    if len(classes) < 5:
        raise ValueError(f"probe needs at least 5 speakers, got {len(classes)}")
    index = {s: i for i, s in enumerate(classes)}
    train_m, _val_m, test_m = split(manifest, val_frac, test_frac, seed=seed)

    needs_codebook = any(k in ("vq_indices", "vq_codewords") for k in kinds)
    if needs_codebook and codebook is None:
        raise MissingArtifactError("probe over quantized kinds needs a codebook")

    waves = {}
    for utt in manifest.utterances:
        waves[utt.id] = audio.read_wav(manifest.path_for(utt))[0]

    result = ProbeResult()
    for kind in kinds:
        def feats_for(utt):
            rng = utterance_rng(seed, f"probe-noise:{utt.id}") if kind == "noise" else None
            return utterance_probe_features(waves[utt.id], kind, codebook, rng)

        train_feats = [feats_for(u) for u in train_m.utterances]
        train_labels = [index[u.speaker_id] for u in train_m.utterances]
        test_feats = [feats_for(u) for u in test_m.utterances]
        test_labels = [index[u.speaker_id] for u in test_m.utterances]

        config = SpkConfig(input_dim=train_feats[0].shape[1], width=width, seed=seed)
        encoder, _history = train_classifier(
            train_feats, train_labels, classes, epochs=epochs, seed=seed,
            config=config, crop=crop)
        correct = sum(int(np.argmax(encoder.forward_logits(f)) == y)
                      for f, y in zip(test_feats, test_labels))
        result.rows.append(ProbeRow(
            kind=kind, accuracy=correct / len(test_feats),
            n_train=len(train_feats), n_test=len(test_feats),
            n_classes=len(classes), epochs=epochs, seed=seed))
    return result


_CSV_FIELDS = ("kind", "accuracy", "n_train", "n_test", "n_classes", "epochs", "seed")


def write_probe_csv(result: ProbeResult, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_FIELDS)
        for row in result.rows:
            writer.writerow([row.kind, format(row.accuracy, ".10g"), row.n_train,
                             row.n_test, row.n_classes, row.epochs, row.seed])


def read_probe_csv(path) -> ProbeResult:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"probe results not found: {path}")
    result = ProbeResult()
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            result.rows.append(ProbeRow(
                kind=rec["kind"], accuracy=float(rec["accuracy"]),
                n_train=int(rec["n_train"]), n_test=int(rec["n_test"]),
                n_classes=int(rec["n_classes"]), epochs=int(rec["epochs"]),
                seed=int(rec["seed"])))
    return result


def write_probe_chart(result: ProbeResult, path) -> None:
    """Bar chart of probe accuracies with a chance-level line."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    kinds = [r.kind for r in result.rows]
    accs = [r.accuracy for r in result.rows]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(kinds, accs, color="#4878a8")
    if result.rows:
        ax.axhline(1.0 / result.rows[0].n_classes, color="#a84848",
                   linestyle="--", linewidth=1, label="chance")
        ax.legend()
    ax.set_ylabel("speaker ID accuracy")
    ax.set_ylim(0.0, 1.0)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
