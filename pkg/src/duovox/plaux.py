"""Phone-level auxiliary features and their label quantizer.

Frame tracks are pooled over each transcript token's span (durations are
on the 20 ms grid, tracks on the 10 ms grid): energy and voicing average
over all frames, pitch averages over voiced frames only.  Pooled triples
are z-normalized (pitch moments from voiced phones; unvoiced phones sit at
zero in the normalized pitch column) and clustered into 128 classes.
Pauses and silence never enter clustering; they take the reserved label
128, so downstream vocabularies hold 129 entries.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import vq
from .dsp import AuxTrack
from .errors import NumericError
from .kmeans import kmeans

PL_CLASSES = 128
PAUSE_LABEL = PL_CLASSES
PL_VOCAB = PL_CLASSES + 1


@dataclass
class PLFeature:
    log_pitch: float
    energy: float
    pov: float
    voiced: bool

    def vector(self) -> np.ndarray:
        return np.array([self.log_pitch, self.energy, self.pov])


def pool_phone_level(aux: AuxTrack, durations) -> list[PLFeature]:
    """One pooled feature per transcript token span."""
    durations = [int(d) for d in durations]
    if not durations:
        raise ValueError("empty duration sequence")
    if any(d < 1 for d in durations):
        raise ValueError("durations must be positive")
    total = 2 * sum(durations)
    n = len(aux)
    # centered analysis yields one trailing extra frame; more is a mismatch
    if total > n or n > total + 2:
        raise ValueError(f"track of {n} frames does not match durations "
                         f"covering {total} frames")
    feats = []
    start = 0
    voiced_mask = aux.voiced
    for d in durations:
        end = start + 2 * d
        sl = slice(start, end)
        v = voiced_mask[sl]
        if v.any():
            pitch = float(aux.log_pitch[sl][v].mean())
            voiced = True
        else:
            pitch = 0.0
            voiced = False
        feats.append(PLFeature(log_pitch=pitch,
                               energy=float(aux.energy[sl].mean()),
                               pov=float(aux.pov[sl].mean()),
                               voiced=voiced))
        start = end
    return feats


@dataclass
class PLQuantizer:
    centroids: np.ndarray       # (PL_CLASSES, 3) in normalized space
    norm_mean: np.ndarray       # (3,)
    norm_std: np.ndarray        # (3,)
    seed: int
    n_iter: int = 0
    inertia: list[float] = field(default_factory=list)

    def normalize(self, feats: list[PLFeature]) -> np.ndarray:
        mat = np.stack([f.vector() for f in feats]) if feats else np.zeros((0, 3))
        z = (mat - self.norm_mean) / self.norm_std
        for i, f in enumerate(feats):
            if not f.voiced:
                z[i, 0] = 0.0
        return z

    def label(self, feats: list[PLFeature]) -> np.ndarray:
        """Nearest-centroid class ids, ties to the lowest index."""
        z = self.normalize(feats)
        d2 = ((z * z).sum(axis=1)[:, None]
              - 2.0 * z @ self.centroids.T
              + (self.centroids * self.centroids).sum(axis=1)[None, :])
        return d2.argmin(axis=1).astype(np.int64)


def train_pl_quantizer(features: list[PLFeature], seed: int = 0,
                       max_iter: int = 100, tol: float = 1e-6) -> PLQuantizer:
    """Cluster pooled speech-phone features into PL_CLASSES groups."""
    if len(features) < PL_CLASSES:
        raise ValueError(f"need at least {PL_CLASSES} pooled features, "
                         f"got {len(features)}")
    mat = np.stack([f.vector() for f in features])
    voiced = np.array([f.voiced for f in features])
    if not voiced.any():
        raise NumericError("no voiced phones; pitch normalization undefined")

    mean = mat.mean(axis=0)
    std = mat.std(axis=0)
    mean[0] = mat[voiced, 0].mean()
    std[0] = mat[voiced, 0].std()
    if np.any(std <= 0.0):
        raise NumericError(f"degenerate feature spread {std.tolist()}; "
                           "cannot z-normalize")

    quantizer = PLQuantizer(centroids=np.zeros((PL_CLASSES, 3)),
                            norm_mean=mean, norm_std=std, seed=seed)
    z = quantizer.normalize(features)
    result = kmeans(z, PL_CLASSES, seed=seed, max_iter=max_iter, tol=tol)
    quantizer.centroids = result.centroids
    quantizer.n_iter = result.n_iter
    quantizer.inertia = result.inertia_trace
    return quantizer


def labels_with_pauses(features: list[PLFeature], symbols: list[str],
                       quantizer: PLQuantizer) -> np.ndarray:
    """Per-token labels: quantized for phones, PAUSE_LABEL for the rest."""
    if len(features) != len(symbols):
        raise ValueError("feature/symbol count mismatch")
    is_speech = np.array([not (s == "sil" or s.startswith("sp")) for s in symbols])
    labels = np.full(len(symbols), PAUSE_LABEL, dtype=np.int64)
    speech_feats = [f for f, keep in zip(features, is_speech) if keep]
    if speech_feats:
        labels[is_speech] = quantizer.label(speech_feats)
    return labels


def save_pl_quantizer(quantizer: PLQuantizer, path) -> None:
    vq.save_pl_container(path, quantizer.centroids, quantizer.norm_mean,
                         quantizer.norm_std, quantizer.seed)


def load_pl_quantizer(path) -> PLQuantizer:
    centroids, mean, std, seed = vq.load_pl_container(path)
    if centroids.shape != (PL_CLASSES, 3):
        raise ValueError(f"unexpected quantizer shape {centroids.shape}")
    return PLQuantizer(centroids=centroids, norm_mean=mean, norm_std=std, seed=seed)
