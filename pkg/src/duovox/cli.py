"""Command line front end.

Exit codes: 0 success, 2 configuration error, 3 missing artifact,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import audio, metrics, pipeline
from .config import Config, load_config
from .errors import (ConfigError, CorpusError, MissingArtifactError,
                     NumericError, VocabularyError)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="duovox",
        description="Cross-lingual synthesis workbench with split "
                    "speaker routing.")
    parser.add_argument("--config", default=None, help="key: value config file")
    parser.add_argument("--work-dir", default=None, help="override work directory")
    parser.add_argument("--seed", type=int, default=None, help="override seed")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("prepare", help="generate corpus, splits, and statistics")
    sub.add_parser("train-codebook", help="fit the acoustic vector quantizer")
    sub.add_parser("train-plq", help="fit the phone-level prosody quantizer")
    sub.add_parser("train-am", help="train the acoustic model")
    sub.add_parser("train-spk", help="train the speaker encoder and conditioner")

    p = sub.add_parser("probe", help="classifier probe over feature kinds")
    p.add_argument("--chart", action="store_true", help="also write a bar chart")

    p = sub.add_parser("synth", help="synthesize one utterance")
    p.add_argument("--text", required=True)
    p.add_argument("--lang", required=True)
    p.add_argument("--target-speaker", required=True)
    p.add_argument("--mode", choices=("intra", "cross", "no-dse"), default="cross")
    p.add_argument("--seed", type=int, default=0, dest="synth_seed")
    p.add_argument("--out", required=True)

    sub.add_parser("experiment", help="run the two-variant evaluation")
    sub.add_parser("report", help="print the evaluation table")
    return parser


def _load(args: argparse.Namespace) -> Config:
    overrides = {"work_dir": args.work_dir, "seed": args.seed}
    return load_config(args.config, overrides=overrides)


def _run(args: argparse.Namespace) -> None:
    cfg = _load(args)
    if args.command == "prepare":
        manifest = pipeline.prepare(cfg)
        print(f"prepared {len(manifest.utterances)} utterances "
              f"({len(manifest.speakers)} speakers, "
              f"{len(manifest.languages)} languages) in {cfg.work_dir}")
    elif args.command == "train-codebook":
        codebook = pipeline.train_codebook(cfg)
        print(f"codebook ready: {len(codebook.books)} books, "
              f"final inertia {[round(i[-1], 2) for i in codebook.inertia]}")
    elif args.command == "train-plq":
        quantizer = pipeline.train_plq(cfg)
        print(f"prosody quantizer ready: {quantizer.centroids.shape[0]} classes")
    elif args.command == "train-am":
        model = pipeline.train_am(cfg)
        print(f"acoustic model trained: {model.parameter_count()} parameters")
    elif args.command == "train-spk":
        pipeline.train_spk(cfg)
        print("speaker encoder, enrollment embeddings, and conditioner saved")
    elif args.command == "probe":
        result = pipeline.run_probe_step(cfg, chart=args.chart)
        for row in result.rows:
            print(f"probe {row.kind:>14s}: accuracy {row.accuracy:.4f} "
                  f"(n_test {row.n_test})")
    elif args.command == "synth":
        art = pipeline.load_artifacts(cfg, need={"codebook", "am", "spk"})
        mode = pipeline.CLI_MODE_ALIASES[args.mode]
        wave, provenance = pipeline.synthesize_utterance(
            art, args.text, args.lang, args.target_speaker, mode, args.synth_seed)
        audio.write_wav(args.out, wave, 24000)
        prov_dir = art.paths.provenance_dir
        prov_dir.mkdir(parents=True, exist_ok=True)
        (prov_dir / "synth.json").write_text(
            json.dumps(provenance, sort_keys=True, indent=1))
        print(f"wrote {args.out} ({len(wave)} samples, mode {mode}, "
              f"am={provenance['am_speaker']} voc={provenance['voc_speaker']})")
    elif args.command == "experiment":
        table = pipeline.run_experiment(cfg)
        print(metrics.render_report(table))
    elif args.command == "report":
        print(pipeline.report(cfg))
    else:  # pragma: no cover - argparse enforces the choices
        raise ConfigError(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        _run(args)
    except (ConfigError, CorpusError, VocabularyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (MissingArtifactError, FileNotFoundError) as exc:
        print(f"missing artifact: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
