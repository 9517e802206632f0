"""Acoustic model: token sequences to quantized feature indices.

A convolutional text encoder is conditioned by adding projected speaker
and language embeddings to every position.  Phone-level heads predict an
auxiliary-label class per token (teacher-forced during training through a
small label embedding), a log duration, and the pooled pitch/energy/
voicing triple.  The conditioned sequence is upsampled by durations onto
the 20 ms grid, extended with position features, and two independent
classification heads pick one codeword per book and frame.

All layers come from the in-package layer engine; a training step is an
explicit forward/backward over the utterance graph with gradients
accumulated across the batch.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .dsp import AuxTrack
from .errors import MissingArtifactError, VocabularyError
from .plaux import PL_VOCAB
from .vq import N_BOOKS, N_CODEWORDS

_N_POS_FEATS = 3


@dataclass
class AMConfig:
    token_emb_dim: int = 384
    spk_emb_dim: int = 256
    lang_emb_dim: int = 128
    width: int = 256
    encoder_blocks: int = 4
    kernel: int = 5
    head_width: int = 128
    pl_emb_dim: int = 16
    pl_vocab: int = PL_VOCAB
    vq_classes: int = N_CODEWORDS
    max_duration: int = 16
    seed: int = 0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "AMConfig":
        return cls(**{k: int(v) for k, v in d.items()})


@dataclass
class AMTrainItem:
    """Targets for one utterance, token grid aligned with the transcript."""

    token_ids: np.ndarray     # (T,)
    speaker_index: int
    language_index: int
    durations: np.ndarray     # (T,) 20 ms frames, >= 1
    pl_labels: np.ndarray     # (T,) in [0, pl_vocab)
    aux_targets: np.ndarray   # (T, 3) pooled log pitch / energy / voicing
    aux_voiced: np.ndarray    # (T,) bool, masks the pitch column
    vq_targets: np.ndarray    # (sum(durations), N_BOOKS)

    def validate(self):
        t = len(self.token_ids)
        for name in ("durations", "pl_labels", "aux_voiced"):
            if len(getattr(self, name)) != t:
                raise ValueError(f"{name} length != token count {t}")
        if self.aux_targets.shape != (t, 3):
            raise ValueError(f"aux_targets shape {self.aux_targets.shape}")
        if np.any(self.durations < 1):
            raise ValueError("durations must be >= 1")
        frames = int(self.durations.sum())
        if self.vq_targets.shape != (frames, N_BOOKS):
            raise ValueError(f"vq_targets shape {self.vq_targets.shape}, "
                             f"expected ({frames}, {N_BOOKS})")


@dataclass
class AMOutput:
    """Inference products on the token and 20 ms frame grids."""

    pl_labels: np.ndarray
    durations: np.ndarray
    aux_phone: np.ndarray      # (T, 3)
    vq_indices: np.ndarray     # (frames, N_BOOKS)

    def frame_aux(self) -> AuxTrack:
        """Phone-level aux repeated onto the 10 ms grid."""
        rep = np.repeat(self.aux_phone, 2 * self.durations, axis=0)
        pov = np.clip(rep[:, 2], 0.0, 1.0)
        log_pitch = np.where(pov >= 0.5, np.maximum(rep[:, 0], 0.0), 0.0)
        return AuxTrack(log_pitch=log_pitch, energy=rep[:, 1], pov=pov)


def _conv_block(d_in: int, d_out: int, kernel: int, rng, name: str) -> nn.Sequential:
    return nn.Sequential([
        nn.Conv1d(d_in, d_out, kernel, rng, name=f"{name}.conv"),
        nn.LayerNorm(d_out, name=f"{name}.ln"),
        nn.ReLU(),
    ])


class AcousticModel:
    def __init__(self, config: AMConfig, vocabulary: list[str],
                 speakers: list[str], languages: list[str]):
        if not vocabulary or not speakers or not languages:
            raise ValueError("vocabulary, speakers, and languages must be non-empty")
        self.config = config
        self.vocabulary = list(vocabulary)
        self.speakers = list(speakers)
        self.languages = list(languages)
        self._token_index = {s: i for i, s in enumerate(self.vocabulary)}
        self._speaker_index = {s: i for i, s in enumerate(self.speakers)}
        self._language_index = {s: i for i, s in enumerate(self.languages)}

        cfg = config
        rng = np.random.default_rng(cfg.seed)
        self.token_emb = nn.Embedding(len(vocabulary), cfg.token_emb_dim, rng, "token_emb")
        self.spk_emb = nn.Embedding(len(speakers), cfg.spk_emb_dim, rng, "spk_emb")
        self.lang_emb = nn.Embedding(len(languages), cfg.lang_emb_dim, rng, "lang_emb")
        self.spk_proj = nn.Linear(cfg.spk_emb_dim, cfg.width, rng, "spk_proj")
        self.lang_proj = nn.Linear(cfg.lang_emb_dim, cfg.width, rng, "lang_proj")

        self.enc_in = _conv_block(cfg.token_emb_dim, cfg.width, cfg.kernel, rng, "enc0")
        self.enc_res = [_conv_block(cfg.width, cfg.width, cfg.kernel, rng, f"enc{i + 1}")
                        for i in range(cfg.encoder_blocks - 1)]

        hw = cfg.head_width
        self.pl_head = nn.Sequential([
            _conv_block(cfg.width, hw, cfg.kernel, rng, "pl0"),
            _conv_block(hw, hw, cfg.kernel, rng, "pl1"),
            nn.Linear(hw, cfg.pl_vocab, rng, "pl_out"),
        ])
        self.pl_label_emb = nn.Embedding(cfg.pl_vocab, cfg.pl_emb_dim, rng, "pl_label_emb")

        cond_dim = cfg.width + cfg.pl_emb_dim
        self.dur_head = nn.Sequential([
            _conv_block(cond_dim, hw, cfg.kernel, rng, "dur0"),
            _conv_block(hw, hw, cfg.kernel, rng, "dur1"),
            nn.Linear(hw, 1, rng, "dur_out"),
        ])
        self.aux_head = nn.Sequential([
            _conv_block(cond_dim, hw, cfg.kernel, rng, "aux0"),
            _conv_block(hw, hw, cfg.kernel, rng, "aux1"),
            nn.Linear(hw, 3, rng, "aux_out"),
        ])
        frame_dim = cond_dim + _N_POS_FEATS
        self.vq_heads = [nn.Sequential([
            _conv_block(frame_dim, hw, cfg.kernel, rng, f"vq{b}_0"),
            _conv_block(hw, hw, cfg.kernel, rng, f"vq{b}_1"),
            nn.Linear(hw, cfg.vq_classes, rng, f"vq{b}_out"),
        ]) for b in range(N_BOOKS)]

    # ---- bookkeeping ----

    def modules(self) -> list[nn.Block]:
        return [self.token_emb, self.spk_emb, self.lang_emb, self.spk_proj,
                self.lang_proj, self.enc_in, *self.enc_res, self.pl_head,
                self.pl_label_emb, self.dur_head, self.aux_head, *self.vq_heads]

    def params(self) -> list[nn.Param]:
        out = []
        for m in self.modules():
            out.extend(m.params())
        return out

    def parameter_count(self) -> int:
        return int(sum(p.value.size for p in self.params()))

    def encode_tokens(self, symbols: list[str]) -> np.ndarray:
        try:
            return np.array([self._token_index[s] for s in symbols], dtype=np.int64)
        except KeyError as exc:
            raise VocabularyError(f"token {exc.args[0]!r} not in model vocabulary") from None

    def speaker_index(self, speaker_id: str) -> int:
        if speaker_id not in self._speaker_index:
            raise VocabularyError(f"speaker {speaker_id!r} not in model")
        return self._speaker_index[speaker_id]

    def language_index(self, language_id: str) -> int:
        if language_id not in self._language_index:
            raise VocabularyError(f"language {language_id!r} not in model")
        return self._language_index[language_id]

    # ---- graph pieces ----

    def _encode(self, token_ids: np.ndarray, speaker_index: int,
                language_index: int) -> np.ndarray:
        x = self.token_emb.forward(token_ids)
        h = self.enc_in.forward(x)
        for block in self.enc_res:
            h = block.forward(h) + h
        spk = self.spk_proj.forward(self.spk_emb.forward(np.array([speaker_index])))
        lang = self.lang_proj.forward(self.lang_emb.forward(np.array([language_index])))
        return h + spk[0] + lang[0]

    def _encode_backward(self, dh: np.ndarray):
        self.spk_emb.backward(self.spk_proj.backward(dh.sum(axis=0, keepdims=True)))
        self.lang_emb.backward(self.lang_proj.backward(dh.sum(axis=0, keepdims=True)))
        for block in reversed(self.enc_res):
            dh = block.backward(dh) + dh
        self.token_emb.backward(self.enc_in.backward(dh))

    @staticmethod
    def _position_features(durations: np.ndarray) -> np.ndarray:
        frames = int(durations.sum())
        rel = np.concatenate([np.arange(d) / d for d in durations])
        t = np.arange(frames)
        return np.stack([rel, np.sin(2 * np.pi * t / 32.0),
                         np.cos(2 * np.pi * t / 32.0)], axis=1)

    def _upsample(self, cond: np.ndarray, durations: np.ndarray) -> np.ndarray:
        rep = np.repeat(cond, durations, axis=0)
        return np.concatenate([rep, self._position_features(durations)], axis=1)

    @staticmethod
    def _upsample_backward(dframe: np.ndarray, durations: np.ndarray,
                           cond_dim: int) -> np.ndarray:
        starts = np.concatenate([[0], np.cumsum(durations)[:-1]])
        return np.add.reduceat(dframe[:, :cond_dim], starts, axis=0)

    # ---- training ----

    def train_step(self, items: list[AMTrainItem], optimizer: nn.Adam) -> dict[str, float]:
        """One optimizer update over a batch; returns mean losses."""
        if not items:
            raise ValueError("empty batch")
        optimizer.zero_grad()
        totals = {"pl": 0.0, "duration": 0.0, "aux": 0.0, "vq0": 0.0, "vq1": 0.0}
        scale = 1.0 / len(items)
        for item in items:
            item.validate()
            losses = self._item_backward(item, scale)
            for k, v in losses.items():
                totals[k] += v * scale
        optimizer.step()
        totals["total"] = sum(totals.values())
        return totals

    def _item_backward(self, item: AMTrainItem, scale: float) -> dict[str, float]:
        cfg = self.config
        h = self._encode(item.token_ids, item.speaker_index, item.language_index)

        pl_logits = self.pl_head.forward(h)
        pl_loss, dpl = nn.cross_entropy(pl_logits, item.pl_labels)

        # downstream heads see the PREDICTED label's embedding, exactly as
        # at inference; the argmax is treated as a constant
        label_vecs = self.pl_label_emb.forward(np.argmax(pl_logits, axis=1))
        cond = np.concatenate([h, label_vecs], axis=1)

        dur_pred = self.dur_head.forward(cond)[:, 0]
        dur_loss, ddur = nn.mse(dur_pred, np.log(item.durations.astype(np.float64)))

        aux_pred = self.aux_head.forward(cond)
        mask = np.ones_like(aux_pred)
        mask[:, 0] = item.aux_voiced.astype(np.float64)
        aux_loss, daux = nn.mse(aux_pred, item.aux_targets, mask)

        frame_in = self._upsample(cond, item.durations)
        vq_losses = []
        dframe = np.zeros_like(frame_in)
        for b, head in enumerate(self.vq_heads):
            logits = head.forward(frame_in)
            loss, dlogits = nn.cross_entropy(logits, item.vq_targets[:, b])
            vq_losses.append(loss)
            dframe += head.backward(dlogits * scale)

        dcond = self._upsample_backward(dframe, item.durations, cond.shape[1])
        dcond += self.aux_head.backward(daux * scale)
        dcond += self.dur_head.backward(ddur[:, None] * scale)

        dh = dcond[:, :cfg.width]
        self.pl_label_emb.backward(dcond[:, cfg.width:])
        dh = dh + self.pl_head.backward(dpl * scale)
        self._encode_backward(dh)

        return {"pl": pl_loss, "duration": dur_loss, "aux": aux_loss,
                "vq0": vq_losses[0], "vq1": vq_losses[1]}

    def evaluate_item(self, item: AMTrainItem) -> dict[str, float]:
        """Teacher-forced top-1 accuracy per head for one training item."""
        h = self._encode(item.token_ids, item.speaker_index, item.language_index)
        pl_pred = np.argmax(self.pl_head.forward(h), axis=1)
        label_vecs = self.pl_label_emb.forward(pl_pred)
        cond = np.concatenate([h, label_vecs], axis=1)
        frame_in = self._upsample(cond, item.durations)
        out = {"pl": float(np.mean(pl_pred == item.pl_labels))}
        for b, head in enumerate(self.vq_heads):
            pred = np.argmax(head.forward(frame_in), axis=1)
            out[f"vq{b}"] = float(np.mean(pred == item.vq_targets[:, b]))
        return out

    # ---- inference ----

    def infer(self, symbols: list[str], speaker_id: str, language_id: str) -> AMOutput:
        """Greedy decode: labels and durations feed their own consumers."""
        token_ids = self.encode_tokens(symbols)
        h = self._encode(token_ids, self.speaker_index(speaker_id),
                         self.language_index(language_id))
        pl_labels = self.pl_head.forward(h).argmax(axis=1)
        cond = np.concatenate([h, self.pl_label_emb.forward(pl_labels)], axis=1)
        log_dur = self.dur_head.forward(cond)[:, 0]
        durations = np.clip(np.round(np.exp(log_dur)), 1,
                            self.config.max_duration).astype(np.int64)
        aux_phone = self.aux_head.forward(cond)
        frame_in = self._upsample(cond, durations)
        vq = np.stack([head.forward(frame_in).argmax(axis=1)
                       for head in self.vq_heads], axis=1)
        return AMOutput(pl_labels=pl_labels, durations=durations,
                        aux_phone=aux_phone, vq_indices=vq)

    # ---- persistence ----

    def save(self, path) -> None:
        meta = {"config": self.config.to_dict(), "vocabulary": self.vocabulary,
                "speakers": self.speakers, "languages": self.languages}
        arrays = {f"param_{i}": p.value for i, p in enumerate(self.params())}
        buf = io.BytesIO()
        np.savez_compressed(buf, meta=np.frombuffer(
            json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(buf.getvalue())

    @classmethod
    def load(cls, path) -> "AcousticModel":
        path = Path(path)
        if not path.exists():
            raise MissingArtifactError(f"model checkpoint not found: {path}")
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            model = cls(AMConfig.from_dict(meta["config"]), meta["vocabulary"],
                        meta["speakers"], meta["languages"])
            params = model.params()
            for i, p in enumerate(params):
                saved = data[f"param_{i}"]
                if saved.shape != p.value.shape:
                    raise ValueError(f"checkpoint shape mismatch for {p.name}")
                p.value[...] = saved
        return model


def build_am(config: AMConfig, vocabulary: list[str], speakers: list[str],
             languages: list[str]) -> AcousticModel:
    return AcousticModel(config, vocabulary, speakers, languages)
