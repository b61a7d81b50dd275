"""Flat ``dotted.key = value`` configuration files.

One key per line, ``#`` starts a comment. Unknown keys are rejected.
Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from basis.diagnostics import DiagSettings
from basis.train import TrainConfig


class ConfigError(ValueError):
    pass


# key -> (type, TrainConfig/DiagSettings field or None)
_TRAIN_KEYS = {
    "model.kind": (str, "model"),
    "model.d_model": (int, "d_model"),
    "model.n_heads": (int, "n_heads"),
    "model.n_layers": (int, "n_layers"),
    "model.vocab_size": (int, "vocab_size"),
    "model.seq_len": (int, "seq_len"),
    "train.batch_size": (int, "batch_size"),
    "train.mode": (str, "mode"),
    "train.lr": (float, "lr"),
    "train.momentum": (float, "momentum"),
    "train.steps": (int, "steps"),
    "train.eval_interval": (int, "eval_interval"),
    "train.eval_batches": (int, "eval_batches"),
    "train.seed": (int, "seed"),
    "sketch.rank": (int, "rank"),
    "sketch.lambda": (float, "lam"),
    "sketch.epsilon": (float, "epsilon"),
}
_PATH_KEYS = {"data.corpus", "output.dir"}
_OTHER_KEYS = {"data.split_fraction": float}
_DIAG_KEYS = {f"diag.{f.name}": (type(f.default), f.name) for f in fields(DiagSettings)}
LAYER_MODES = "layer_modes."


def known_keys():
    return sorted(set(_TRAIN_KEYS) | _PATH_KEYS | set(_OTHER_KEYS) | set(_DIAG_KEYS))


@dataclass
class CliConfig:
    train: TrainConfig
    corpus: Path | None = None
    split_fraction: float = 0.9
    out_dir: Path | None = None
    diag: DiagSettings = DiagSettings()

    def require_corpus(self) -> Path:
        if self.corpus is None:
            raise ConfigError("data.corpus: a corpus path is required")
        if not self.corpus.is_file():
            raise ConfigError(f"data.corpus: no such file {self.corpus}")
        if self.corpus.stat().st_size == 0:
            raise ConfigError(f"data.corpus: file is empty {self.corpus}")
        return self.corpus


def parse_lines(text: str, source: str = "<config>") -> dict:
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        entries[key] = value
    return entries


def resolve_key(key: str) -> str:
    """Accept a full dotted key or an unambiguous final segment (``rank`` -> ``sketch.rank``)."""
    if key in known_keys() or key.startswith(LAYER_MODES):
        return key
    matches = [k for k in known_keys() if k.rsplit(".", 1)[-1] == key]
    if len(matches) == 1:
        return matches[0]
    if matches:
        raise ConfigError(f"ambiguous key {key!r}: could be {', '.join(matches)}")
    raise ConfigError(f"unknown key {key!r}")


def _convert(key, typ, value):
    try:
        if typ is bool:
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
        return typ(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {typ.__name__}") from None


def build(entries: dict, base_dir: Path = Path(".")) -> CliConfig:
    train_kw, diag_kw, layer_modes = {}, {}, {}
    cfg = CliConfig(TrainConfig())
    for key, value in entries.items():
        if key.startswith(LAYER_MODES):
            pattern = key[len(LAYER_MODES):]
            if not pattern:
                raise ConfigError(f"{key}: missing layer name")
            layer_modes[pattern] = value
        elif key in _TRAIN_KEYS:
            typ, name = _TRAIN_KEYS[key]
            train_kw[name] = _convert(key, typ, value)
        elif key in _DIAG_KEYS:
            typ, name = _DIAG_KEYS[key]
            diag_kw[name] = _convert(key, typ, value)
        elif key == "data.corpus":
            cfg.corpus = (base_dir / value).resolve()
        elif key == "output.dir":
            cfg.out_dir = (base_dir / value).resolve()
        elif key == "data.split_fraction":
            cfg.split_fraction = _convert(key, float, value)
            if not 0.0 < cfg.split_fraction < 1.0:
                raise ConfigError(f"{key}: must lie strictly between 0 and 1")
        else:
            raise ConfigError(f"unknown key {key!r}")
    if layer_modes:
        train_kw["layer_modes"] = layer_modes
    try:
        cfg.train = TrainConfig(**train_kw)
        cfg.diag = replace(DiagSettings(), **diag_kw)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    return cfg


def load(path, overrides=()) -> CliConfig:
    """Read ``path`` and apply ``KEY=VALUE`` overrides on top."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    entries = parse_lines(text, str(path))
    for key in list(entries):
        if not key.startswith(LAYER_MODES) and key not in known_keys():
            raise ConfigError(f"{path}: unknown key {key!r}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, value = (part.strip() for part in item.split("=", 1))
        key = resolve_key(key)
        if key in _PATH_KEYS:
            value = str(Path(value).resolve())  # overrides are relative to the working directory
        entries[key] = value
    return build(entries, path.parent)
