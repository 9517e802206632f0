"""Run configuration: one flat key-value file governs every stage.

Values load from YAML (all keys optional), then CLI overrides apply.
Unknown keys are rejected rather than ignored so typos cannot silently
change a run.  The configuration hash stamped into provenance records is
the SHA-256 of the canonical JSON form.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from .errors import ConfigError


@dataclass
class Config:
    work_dir: str = "work"
    seed: int = 0

    # corpus
    n_languages: int = 2
    speakers_per_language: int = 6
    utterances_per_speaker: int = 50
    val_frac: float = 0.05
    test_frac: float = 0.05
    balance_alpha: float = 0.2

    # codebook / phone-level quantizer
    vq_sample_cap: int = 12000
    vq_max_iter: int = 100
    vq_tol: float = 1e-6
    pl_max_iter: int = 100
    pl_tol: float = 1e-6

    # acoustic model
    am_epochs: int = 5
    am_batch_size: int = 8
    am_lr: float = 1e-3

    # speaker encoder
    spk_epochs: int = 12
    spk_crop: int = 120
    spk_lr: float = 1e-3
    spk_batch_size: int = 16

    # probe
    probe_epochs: int = 12
    probe_crop: int = 60
    probe_width: int = 48
    probe_kinds: str = "mel,vq_indices,vq_codewords,aux"

    # experiment
    experiment_samples: int = 24

    def validate(self):
        if not (0.0 <= self.val_frac and 0.0 <= self.test_frac
                and self.val_frac + self.test_frac < 1.0):
            raise ConfigError(f"bad split fractions ({self.val_frac}, {self.test_frac})")
        for name in ("n_languages", "speakers_per_language", "utterances_per_speaker",
                     "vq_sample_cap", "am_epochs", "am_batch_size", "spk_epochs",
                     "probe_epochs", "experiment_samples"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.balance_alpha < 0.0:
            raise ConfigError("balance_alpha must be >= 0")


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _coerce(name: str, value) -> object:
    kind = _FIELD_TYPES[name]
    try:
        if kind == "int":
            if isinstance(value, float) and value != int(value):
                raise ValueError
            return int(value)
        if kind == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {name!r} expects {kind}, got {value!r}") from None


def load_config(path: str | Path | None = None,
                overrides: dict | None = None) -> Config:
    """Defaults, then file values, then explicit overrides."""
    values: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config file {path}: {exc}") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a key-value mapping")
        values.update(loaded)
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})

    unknown = sorted(set(values) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = Config(**{k: _coerce(k, v) for k, v in values.items()})
    cfg.validate()
    return cfg


def config_hash(cfg: Config) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
