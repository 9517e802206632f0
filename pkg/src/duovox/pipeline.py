"""End-to-end orchestration and the dual-embedding routing rules.

Training always conditions the acoustic model and the vocoder on the same
speaker.  At inference the two identities split: cross-lingual synthesis
routes a designated native speaker of the text's language into the
acoustic model (speaking style) while the vocoder keeps the target's
enrollment embedding (timbre), with the native pitch track mapped onto the
target's pitch distribution.  The ablation variant routes the target into
both, which is the comparison the experiment report draws.

Every stage writes a provenance record (config hash, seeds, artifact
digests, no timestamps) so reruns can be byte-compared.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import am as am_mod
from . import audio, dsp, metrics, nn, plaux, probe as probe_mod, spk as spk_mod, vq
from . import voc
from .config import Config, config_hash
from .corpus import (Manifest, SynthSpec, balance_weights, default_synth_spec,
                     fill_pitch_stats, generate_corpus, render_transcript, split,
                     utterance_rng)
from .errors import ConfigError, MissingArtifactError
from .textfront import phonemize

MODES = ("train", "intralingual", "crosslingual", "ablation_no_dse")
CLI_MODE_ALIASES = {"intra": "intralingual", "cross": "crosslingual",
                    "no-dse": "ablation_no_dse"}


@dataclass
class Paths:
    work: Path

    @property
    def corpus_dir(self) -> Path: return self.work / "corpus"
    @property
    def corpus_manifest(self) -> Path: return self.corpus_dir / "manifest.jsonl"
    @property
    def synth_spec(self) -> Path: return self.corpus_dir / "synth_spec.json"
    @property
    def splits_dir(self) -> Path: return self.work / "splits"
    @property
    def artifacts_dir(self) -> Path: return self.work / "artifacts"
    @property
    def codebook(self) -> Path: return self.artifacts_dir / "codebook.vqcb"
    @property
    def plq(self) -> Path: return self.artifacts_dir / "plq.plqz"
    @property
    def am_model(self) -> Path: return self.artifacts_dir / "am.npz"
    @property
    def spk_model(self) -> Path: return self.artifacts_dir / "spk.npz"
    @property
    def conditioner(self) -> Path: return self.artifacts_dir / "conditioner.json"
    @property
    def enrollment(self) -> Path: return self.artifacts_dir / "enrollment.json"
    @property
    def templates(self) -> Path: return self.artifacts_dir / "phone_templates.npz"
    @property
    def balance(self) -> Path: return self.artifacts_dir / "balance.json"
    @property
    def am_history(self) -> Path: return self.artifacts_dir / "am_history.json"
    @property
    def spk_history(self) -> Path: return self.artifacts_dir / "spk_history.json"
    @property
    def report_dir(self) -> Path: return self.work / "report"
    @property
    def results_csv(self) -> Path: return self.report_dir / "results.csv"
    @property
    def report_txt(self) -> Path: return self.report_dir / "report.txt"
    @property
    def details(self) -> Path: return self.report_dir / "details.jsonl"
    @property
    def summary(self) -> Path: return self.report_dir / "summary.json"
    @property
    def probe_csv(self) -> Path: return self.report_dir / "probe.csv"
    @property
    def probe_chart(self) -> Path: return self.report_dir / "probe.png"
    @property
    def provenance_dir(self) -> Path: return self.work / "provenance"

    def split_manifest(self, name: str) -> Path:
        return self.splits_dir / f"{name}.jsonl"


def paths_for(cfg: Config) -> Paths:
    return Paths(work=Path(cfg.work_dir))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_provenance(paths: Paths, step: str, cfg: Config,
                      artifacts: dict[str, Path] | None = None,
                      extra: dict | None = None) -> None:
    record = {
        "step": step,
        "config_hash": config_hash(cfg),
        "config": asdict(cfg),
        "artifacts": {name: _sha256(p) for name, p in sorted((artifacts or {}).items())
                      if p.exists()},
    }
    if extra:
        record["extra"] = extra
    paths.provenance_dir.mkdir(parents=True, exist_ok=True)
    out = paths.provenance_dir / f"{step}.json"
    out.write_text(json.dumps(record, sort_keys=True, indent=1))


@dataclass
class RoutingDecision:
    am_speaker_id: str
    voc_speaker_id: str
    mode: str

    @property
    def needs_pitch_shift(self) -> bool:
        return self.am_speaker_id != self.voc_speaker_id


def build_native_map(train_manifest: Manifest) -> dict[str, str]:
    """Per language, the native speaker with the most training audio."""
    hours: dict[str, dict[str, float]] = {}
    native = {s.speaker_id: s.native_language_id for s in train_manifest.speakers}
    for u in train_manifest.utterances:
        if native.get(u.speaker_id) != u.language_id:
            continue
        hours.setdefault(u.language_id, {})
        hours[u.language_id][u.speaker_id] = (
            hours[u.language_id].get(u.speaker_id, 0.0) + u.n_frames)
    out = {}
    for lang in sorted(train_manifest.languages):
        if lang not in hours or not hours[lang]:
            raise MissingArtifactError(f"no native training audio for language {lang!r}")
        best = max(sorted(hours[lang]), key=lambda s: hours[lang][s])
        out[lang] = best
    return out


def route_embeddings(mode: str, text_language: str, target_speaker: str,
                     native_map: dict[str, str],
                     manifest: Manifest) -> RoutingDecision:
    """Choose the acoustic-model and vocoder speaker identities."""
    if mode not in MODES:
        raise ConfigError(f"unknown routing mode {mode!r}; expected one of {MODES}")
    meta = manifest.speaker(target_speaker)  # raises on unknown speaker
    if mode == "crosslingual":
        if text_language not in native_map:
            raise MissingArtifactError(f"no native speaker mapped for language "
                                       f"{text_language!r}")
        return RoutingDecision(am_speaker_id=native_map[text_language],
                               voc_speaker_id=target_speaker, mode=mode)
    if mode == "intralingual" and meta.native_language_id != text_language:
        raise ConfigError(f"intralingual mode needs a native speaker of "
                          f"{text_language!r}; {target_speaker} is native in "
                          f"{meta.native_language_id!r}")
    return RoutingDecision(am_speaker_id=target_speaker,
                           voc_speaker_id=target_speaker, mode=mode)


# ---------------------------------------------------------------------------
# artifact loading


@dataclass
class Artifacts:
    cfg: Config
    paths: Paths
    manifest: Manifest
    train: Manifest
    val: Manifest
    test: Manifest
    spec: SynthSpec
    codebook: vq.Codebook | None = None
    plq: plaux.PLQuantizer | None = None
    am: am_mod.AcousticModel | None = None
    spk: spk_mod.SpeakerEncoder | None = None
    conditioner: voc.SpeakerConditioner | None = None
    enrollment: dict[str, np.ndarray] | None = None
    templates: dict[str, np.ndarray] | None = None

    @property
    def lexicons(self):
        return {lang.language_id: lang.lexicon for lang in self.spec.languages}

    @property
    def native_map(self) -> dict[str, str]:
        return build_native_map(self.train)

    def language_spec(self, language_id: str):
        return self.spec.language(language_id)

    def pitch_stats(self, speaker_id: str) -> voc.PitchStats:
        meta = self.train.speaker(speaker_id)
        if meta.pitch_mean is None or meta.pitch_std is None:
            raise MissingArtifactError(f"pitch stats missing for {speaker_id}; "
                                       "run prepare")
        return voc.PitchStats(mean=meta.pitch_mean, std=meta.pitch_std)


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"{path} not found; run {stage} first")
    return path


def load_artifacts(cfg: Config, need: set[str] = frozenset()) -> Artifacts:
    paths = paths_for(cfg)
    _require(paths.corpus_manifest, "prepare")
    _require(paths.split_manifest("train"), "prepare")
    manifest = Manifest.load(paths.corpus_manifest, root=paths.corpus_dir)
    parts = {name: Manifest.load(_require(paths.split_manifest(name), "prepare"),
                                 root=paths.corpus_dir)
             for name in ("train", "val", "test")}
    spec = SynthSpec.load(_require(paths.synth_spec, "prepare"))
    art = Artifacts(cfg=cfg, paths=paths, manifest=manifest, spec=spec,
                    train=parts["train"], val=parts["val"], test=parts["test"])

    if "codebook" in need:
        art.codebook = vq.load_codebook(_require(paths.codebook, "train-codebook"))
    if "plq" in need:
        art.plq = plaux.load_pl_quantizer(_require(paths.plq, "train-plq"))
    if "am" in need:
        art.am = am_mod.AcousticModel.load(_require(paths.am_model, "train-am"))
    if "spk" in need:
        art.spk = spk_mod.SpeakerEncoder.load(_require(paths.spk_model, "train-spk"))
        blob = json.loads(_require(paths.enrollment, "train-spk").read_text())
        art.enrollment = {k: np.asarray(v, dtype=np.float64) for k, v in blob.items()}
        art.conditioner = voc.SpeakerConditioner.from_dict(
            json.loads(_require(paths.conditioner, "train-spk").read_text()))
    if "templates" in need:
        with np.load(_require(paths.templates, "prepare")) as data:
            art.templates = {k: data[k] for k in data.files}
    return art


# ---------------------------------------------------------------------------
# training stages


def prepare(cfg: Config) -> Manifest:
    """Generate the corpus, split it, and freeze derived statistics."""
    paths = paths_for(cfg)
    spec = default_synth_spec(cfg.n_languages, cfg.speakers_per_language,
                              cfg.utterances_per_speaker, cfg.seed)
    manifest = generate_corpus(spec, paths.corpus_dir)
    train, val, test = split(manifest, cfg.val_frac, cfg.test_frac, cfg.seed)

    train = fill_pitch_stats(train)
    for part in (val, test, manifest):
        part.speakers = train.speakers
    paths.splits_dir.mkdir(parents=True, exist_ok=True)
    train.save(paths.split_manifest("train"))
    val.save(paths.split_manifest("val"))
    test.save(paths.split_manifest("test"))
    manifest.save(paths.corpus_manifest)

    weights = balance_weights(train, cfg.balance_alpha)
    paths.artifacts_dir.mkdir(parents=True, exist_ok=True)
    paths.balance.write_text(json.dumps(weights, sort_keys=True, indent=1))

    templates = metrics.build_phone_templates(train)
    buf_path = paths.templates
    np.savez_compressed(buf_path, **{k: v for k, v in templates.items()})

    _write_provenance(paths, "prepare", cfg,
                      artifacts={"manifest": paths.corpus_manifest,
                                 "train": paths.split_manifest("train"),
                                 "balance": paths.balance},
                      extra={"utterances": len(manifest.utterances),
                             "balance": weights})
    return manifest


def _train_descriptors(art: Artifacts) -> np.ndarray:
    chunks = []
    for utt in art.train.utterances:
        wave, _sr = audio.read_wav(art.train.path_for(utt))
        chunks.append(vq.descriptors_from_wave(wave))
    return np.concatenate(chunks, axis=0)


def train_codebook(cfg: Config) -> vq.Codebook:
    art = load_artifacts(cfg)
    paths = art.paths
    desc = _train_descriptors(art)
    if desc.shape[0] > cfg.vq_sample_cap:
        rng = np.random.default_rng([cfg.seed, 0xCB])
        keep = np.sort(rng.choice(desc.shape[0], size=cfg.vq_sample_cap, replace=False))
        desc = desc[keep]
    codebook = vq.train_codebooks(desc, seed=cfg.seed, max_iter=cfg.vq_max_iter,
                                  tol=cfg.vq_tol)
    vq.save_codebook(codebook, paths.codebook)
    _write_provenance(paths, "train-codebook", cfg,
                      artifacts={"codebook": paths.codebook},
                      extra={"n_descriptors": int(desc.shape[0]),
                             "n_iter": codebook.n_iter,
                             "inertia": codebook.inertia})
    return codebook


def train_plq(cfg: Config) -> plaux.PLQuantizer:
    art = load_artifacts(cfg)
    paths = art.paths
    feats = []
    for utt in art.train.utterances:
        wave, _sr = audio.read_wav(art.train.path_for(utt))
        pooled = plaux.pool_phone_level(dsp.extract_aux(wave), utt.durations)
        for f, sym in zip(pooled, utt.transcript):
            if not (sym == "sil" or sym.startswith("sp")):
                feats.append(f)
    quantizer = plaux.train_pl_quantizer(feats, seed=cfg.seed,
                                         max_iter=cfg.pl_max_iter, tol=cfg.pl_tol)
    plaux.save_pl_quantizer(quantizer, paths.plq)
    _write_provenance(paths, "train-plq", cfg, artifacts={"plq": paths.plq},
                      extra={"n_features": len(feats), "n_iter": quantizer.n_iter,
                             "inertia": quantizer.inertia})
    return quantizer


def build_train_item(model: am_mod.AcousticModel, utt, wave: np.ndarray,
                     codebook: vq.Codebook,
                     quantizer: plaux.PLQuantizer) -> am_mod.AMTrainItem:
    """Targets for one utterance from its audio and alignment."""
    aux = dsp.extract_aux(wave)
    mel = dsp.mel_spectrogram(wave)
    desc = vq.frame_descriptors(mel, aux)
    vq_targets = vq.quantize(desc, codebook)
    pooled = plaux.pool_phone_level(aux, utt.durations)
    labels = plaux.labels_with_pauses(pooled, utt.transcript, quantizer)
    durations = np.asarray(utt.durations, dtype=np.int64)
    frames = int(durations.sum())
    if vq_targets.shape[0] != frames:
        raise ValueError(f"{utt.id}: descriptor count {vq_targets.shape[0]} != "
                         f"duration total {frames}")
    item = am_mod.AMTrainItem(
        token_ids=model.encode_tokens(utt.transcript),
        speaker_index=model.speaker_index(utt.speaker_id),
        language_index=model.language_index(utt.language_id),
        durations=durations,
        pl_labels=labels,
        aux_targets=np.stack([f.vector() for f in pooled]),
        aux_voiced=np.array([f.voiced for f in pooled]),
        vq_targets=vq_targets)
    item.validate()
    return item


def train_am(cfg: Config) -> am_mod.AcousticModel:
    art = load_artifacts(cfg, need={"codebook", "plq"})
    paths = art.paths
    vocabulary = sorted({s for u in art.manifest.utterances for s in u.transcript})
    speakers = sorted({u.speaker_id for u in art.train.utterances})
    model = am_mod.build_am(am_mod.AMConfig(seed=cfg.seed), vocabulary, speakers,
                            sorted(art.manifest.languages))

    items = []
    by_language: dict[str, list[int]] = {}
    for utt in art.train.utterances:
        wave, _sr = audio.read_wav(art.train.path_for(utt))
        by_language.setdefault(utt.language_id, []).append(len(items))
        items.append(build_train_item(model, utt, wave, art.codebook, art.plq))

    weights = json.loads(paths.balance.read_text()) if paths.balance.exists() \
        else balance_weights(art.train, cfg.balance_alpha)
    languages = sorted(by_language)
    lang_p = np.array([weights[lang] for lang in languages])
    lang_p = lang_p / lang_p.sum()

    optimizer = nn.Adam(model.params(), lr=cfg.am_lr)
    history = []
    n = len(items)
    for epoch in range(cfg.am_epochs):
        rng = np.random.default_rng([cfg.seed, 0xA7, epoch])
        langs = rng.choice(len(languages), size=n, p=lang_p)
        order = [int(rng.choice(by_language[languages[k]])) for k in langs]
        epoch_losses: dict[str, float] = {}
        steps = 0
        for start in range(0, n, cfg.am_batch_size):
            batch = [items[i] for i in order[start:start + cfg.am_batch_size]]
            losses = model.train_step(batch, optimizer)
            steps += 1
            for k, v in losses.items():
                epoch_losses[k] = epoch_losses.get(k, 0.0) + v
        history.append({k: v / steps for k, v in sorted(epoch_losses.items())})

    model.save(paths.am_model)
    paths.am_history.write_text(json.dumps(history, sort_keys=True, indent=1))
    _write_provenance(paths, "train-am", cfg,
                      artifacts={"am": paths.am_model, "codebook": paths.codebook,
                                 "plq": paths.plq},
                      extra={"epochs": cfg.am_epochs, "final_loss": history[-1],
                             "parameters": model.parameter_count()})
    return model


def train_spk(cfg: Config) -> spk_mod.SpeakerEncoder:
    art = load_artifacts(cfg)
    paths = art.paths
    encoder, history = spk_mod.train_speaker_encoder(
        art.train, epochs=cfg.spk_epochs, seed=cfg.seed, crop=cfg.spk_crop,
        lr=cfg.spk_lr, batch_size=cfg.spk_batch_size)
    encoder.save(paths.spk_model)
    paths.spk_history.write_text(json.dumps(
        {"loss": history.loss, "accuracy": history.accuracy}, indent=1))

    enrollment = {}
    for speaker in sorted({u.speaker_id for u in art.train.utterances}):
        utts = sorted(art.train.utterances_for(speaker), key=lambda u: u.id)[:3]
        wave = np.concatenate([audio.read_wav(art.train.path_for(u))[0] for u in utts])
        enrollment[speaker] = spk_mod.embed_speaker(encoder, wave)
    paths.enrollment.write_text(json.dumps(
        {k: [float(x) for x in v] for k, v in sorted(enrollment.items())}, indent=1))

    # fit on one profile per speaker, each estimated from the speaker's mean
    # speech envelope against the corpus mean: per-utterance measurements
    # are content-noisy, and the regression only ever sees enrollment vectors
    env_sum: dict[str, np.ndarray] = {}
    env_cnt: dict[str, int] = {}
    for utt in art.train.utterances:
        wave, _sr = audio.read_wav(art.train.path_for(utt))
        env = voc.band_envelope(dsp.mel_spectrogram(wave))
        env = env[spk_mod.vad_mask(dsp.frame_energy(wave))]
        if utt.speaker_id not in env_sum:
            env_sum[utt.speaker_id] = np.zeros(voc.N_BANDS)
            env_cnt[utt.speaker_id] = 0
        env_sum[utt.speaker_id] += env.sum(axis=0)
        env_cnt[utt.speaker_id] += env.shape[0]
    speakers = sorted(env_sum)
    spk_env = {s: env_sum[s] / max(env_cnt[s], 1) for s in speakers}
    reference = np.mean([spk_env[s] for s in speakers], axis=0)
    profiles = np.array([voc.fit_envelope_profile(spk_env[s], reference)
                         for s in speakers])
    conditioner = voc.fit_conditioner(
        np.stack([enrollment[s] for s in speakers]),
        profiles[:, 0], profiles[:, 1], ridge=1e-4)
    paths.conditioner.write_text(json.dumps(conditioner.to_dict(), indent=1))
    _write_provenance(paths, "train-spk", cfg,
                      artifacts={"spk": paths.spk_model,
                                 "enrollment": paths.enrollment,
                                 "conditioner": paths.conditioner},
                      extra={"train_accuracy": history.accuracy[-1]})
    return encoder


def run_probe_step(cfg: Config, chart: bool = False) -> probe_mod.ProbeResult:
    kinds = tuple(k.strip() for k in cfg.probe_kinds.split(",") if k.strip())
    need = {"codebook"} if any(k.startswith("vq_") for k in kinds) else set()
    art = load_artifacts(cfg, need=need)
    result = probe_mod.run_probe(art.manifest, kinds=kinds, epochs=cfg.probe_epochs,
                                 seed=cfg.seed, codebook=art.codebook,
                                 crop=cfg.probe_crop, width=cfg.probe_width,
                                 val_frac=cfg.val_frac, test_frac=cfg.test_frac)
    art.paths.report_dir.mkdir(parents=True, exist_ok=True)
    probe_mod.write_probe_csv(result, art.paths.probe_csv)
    if chart:
        probe_mod.write_probe_chart(result, art.paths.probe_chart)
    _write_provenance(art.paths, "probe", cfg,
                      artifacts={"probe": art.paths.probe_csv},
                      extra={"rows": [asdict(r) for r in result.rows]})
    return result


# ---------------------------------------------------------------------------
# synthesis and the experiment


def synthesize_utterance(art: Artifacts, text: str, text_language: str,
                         target_speaker: str, mode: str,
                         seed: int) -> tuple[np.ndarray, dict]:
    """Full inference path; returns the waveform and a provenance record."""
    for name in ("codebook", "am", "spk"):
        if getattr(art, name) is None:
            raise MissingArtifactError(f"artifact {name!r} not loaded")
    seq = phonemize(text, text_language, art.lexicons)
    decision = route_embeddings(mode, text_language, target_speaker,
                                art.native_map, art.manifest)
    out = art.am.infer(seq.symbols, decision.am_speaker_id, text_language)
    aux = out.frame_aux()

    # The decoded contour drifts a little; re-anchor it on the speaking
    # voice's corpus statistics so the routing shift below starts from the
    # distribution it assumes.
    voiced = aux.voiced & (aux.log_pitch > 0.0)
    if np.count_nonzero(voiced) >= 2:
        anchor = art.pitch_stats(decision.am_speaker_id)
        # a near-flat contour would blow up the variance-matching scale, so
        # keep the predicted spread within a factor of two of the anchor's
        pred = voc.PitchStats(
            mean=float(aux.log_pitch[voiced].mean()),
            std=float(np.clip(aux.log_pitch[voiced].std(),
                              0.5 * anchor.std, 2.0 * anchor.std)))
        aux = voc.pitch_shift(aux, pred, anchor)

    shift_record = None
    if decision.needs_pitch_shift:
        ntv = art.pitch_stats(decision.am_speaker_id)
        tgt = art.pitch_stats(decision.voc_speaker_id)
        aux = voc.pitch_shift(aux, ntv, tgt)
        shift_record = {"ntv": asdict(ntv), "tgt": asdict(tgt)}

    if art.enrollment is None or decision.voc_speaker_id not in art.enrollment:
        raise MissingArtifactError(f"no enrollment embedding for "
                                   f"{decision.voc_speaker_id}; run train-spk")
    source = None
    if decision.am_speaker_id != decision.voc_speaker_id:
        source = art.enrollment.get(decision.am_speaker_id)
    cond = voc.VocCondition(
        vq_frames=voc.expand_vq_to_hop(vq.dequantize(out.vq_indices, art.codebook)),
        aux=aux,
        speaker_vector=art.enrollment[decision.voc_speaker_id],
        source_vector=source)
    wave = voc.synthesize(cond, seed, art.conditioner)

    provenance = {
        "mode": decision.mode,
        "text_language": text_language,
        "target_speaker": target_speaker,
        "am_speaker": decision.am_speaker_id,
        "voc_speaker": decision.voc_speaker_id,
        "pitch_shift": shift_record,
        "seed": seed,
        "config_hash": config_hash(art.cfg),
        "n_tokens": len(seq.tokens),
        "n_frames": int(out.durations.sum()),
    }
    return wave, provenance


def _experiment_plan(art: Artifacts, samples: int):
    """Deterministic (language, text, target) assignments from the test split."""
    native = {s.speaker_id: s.native_language_id for s in art.manifest.speakers}
    plan = []
    for lang in sorted(art.manifest.languages):
        texts = [u for u in sorted(art.test.utterances, key=lambda u: u.id)
                 if u.language_id == lang]
        targets = sorted(s for s, nl in native.items() if nl != lang)
        if not texts or not targets:
            raise ConfigError(f"experiment needs test sentences and non-native "
                              f"targets for language {lang!r}")
        lang_spec = art.language_spec(lang)
        for i in range(samples):
            utt = texts[i % len(texts)]
            plan.append({
                "language": lang,
                "utt": utt,
                "text": render_transcript(utt.transcript, lang_spec),
                "target": targets[i % len(targets)],
                "target_native": native[targets[i % len(targets)]],
            })
    return plan


def run_experiment(cfg: Config) -> metrics.ResultsTable:
    """Cross-lingual synthesis for both variants plus the Table-style report."""
    art = load_artifacts(cfg, need={"codebook", "plq", "am", "spk", "templates"})
    paths = art.paths
    plan = _experiment_plan(art, cfg.experiment_samples)

    details = []
    for entry in plan:
        utt = entry["utt"]
        ref = [s for s in utt.transcript if not (s == "sil" or s.startswith("sp"))]
        for variant, mode in (("dse", "crosslingual"), ("no_dse", "ablation_no_dse")):
            rng = utterance_rng(cfg.seed, f"exp:{utt.id}:{entry['target']}:{variant}")
            seed = int(rng.integers(2 ** 31))
            wave, _prov = synthesize_utterance(
                art, entry["text"], entry["language"], entry["target"], mode, seed)

            hyp = metrics.phone_recognize(wave, art.templates)
            per = metrics.error_rate(ref, hyp).rate
            emb = spk_mod.embed_speaker(art.spk, wave)
            secs_value = spk_mod.secs(emb, art.enrollment[entry["target"]])
            predicted = art.spk.classify(spk_mod.utterance_features(wave))
            synth_aux = dsp.extract_aux(wave)
            voiced = synth_aux.voiced
            pitch_mean = float(synth_aux.log_pitch[voiced].mean()) if voiced.any() else None
            tgt_stats = art.pitch_stats(entry["target"])
            details.append({
                "utt_id": utt.id,
                "language": entry["language"],
                "variant": variant,
                "target": entry["target"],
                "target_native": entry["target_native"],
                "seed": seed,
                "per": per,
                "secs": secs_value,
                "id_ok": bool(predicted == entry["target"]),
                "predicted_speaker": predicted,
                "pitch_mean": pitch_mean,
                "pitch_err": (abs(pitch_mean - tgt_stats.mean)
                              if pitch_mean is not None else None),
            })

    table = metrics.ResultsTable()
    for lang in sorted({d["language"] for d in details}):
        for group in sorted({d["target_native"] for d in details
                             if d["language"] == lang}):
            for variant in metrics.VARIANTS:
                rows = [d for d in details
                        if d["language"] == lang and d["variant"] == variant
                        and d["target_native"] == group]
                table.add(language=lang, variant=variant,
                          speaker_group=f"{group}-speakers",
                          wer=100.0 * float(np.mean([d["per"] for d in rows])),
                          secs_value=float(np.mean([d["secs"] for d in rows])),
                          n=len(rows))

    summary = {}
    for variant in metrics.VARIANTS:
        rows = [d for d in details if d["variant"] == variant]
        pitch_errs = [d["pitch_err"] for d in rows if d["pitch_err"] is not None]
        summary[variant] = {
            "wer": 100.0 * float(np.mean([d["per"] for d in rows])),
            "secs": float(np.mean([d["secs"] for d in rows])),
            "id_accuracy": float(np.mean([d["id_ok"] for d in rows])),
            "mean_abs_pitch_err": float(np.mean(pitch_errs)) if pitch_errs else None,
            "n": len(rows),
        }

    paths.report_dir.mkdir(parents=True, exist_ok=True)
    metrics.write_results_csv(table, paths.results_csv)
    paths.report_txt.write_text(metrics.render_report(table))
    with open(paths.details, "w") as fh:
        for d in details:
            fh.write(json.dumps(d, sort_keys=True) + "\n")
    paths.summary.write_text(json.dumps(summary, sort_keys=True, indent=1))
    _write_provenance(paths, "experiment", cfg,
                      artifacts={"results": paths.results_csv,
                                 "report": paths.report_txt},
                      extra={"summary": summary})
    return table


def report(cfg: Config) -> str:
    paths = paths_for(cfg)
    table = metrics.read_results_csv(paths.results_csv)
    return metrics.render_report(table)
