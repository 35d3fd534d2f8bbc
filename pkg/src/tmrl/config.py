"""INI run configuration with dotted command-line overrides, and run manifests."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import os
import platform
import typing
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .encoder import EncoderConfig, PoolingMode
from .errors import ConfigError
from .losses import LossConfig
from .trainer import TrainConfig

VERSION = "0.1.0"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 1024
    d: int = 64
    max_len: int = 64
    n_layers: int = 2
    activation: str = "gelu"
    layer_norm: bool = True
    ln_eps: float = 1e-5
    pooling: str = "mean"
    pos_scale: float = 0.1
    lora_rank: int = 4
    lora_scale: float = 4.0
    lora_dropout: float = 0.1
    seed: int = 0

    def encoder(self) -> EncoderConfig:
        return EncoderConfig(self.vocab_size, self.d, self.max_len, self.n_layers, self.activation,
                             self.layer_norm, self.ln_eps, PoolingMode(self.pooling), self.pos_scale)


@dataclass(frozen=True)
class EvalConfig:
    ndcg_k: int = 10
    recall_k: int = 100
    linear_gain: bool = False


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def flat(self) -> dict[str, str]:
        out = {}
        for section in ("model", "loss", "train", "eval"):
            obj = getattr(self, section)
            for f in dataclasses.fields(obj):
                if section == "train" and f.name == "loss":
                    continue
                out[f"{section}.{f.name}"] = _format(getattr(obj, f.name))
        return out

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for key, value in self.flat().items():
            section, name = key.split(".", 1)
            if not cp.has_section(section):
                cp.add_section(section)
            cp.set(section, name, value)
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse(raw: str, default, annotation, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool) or annotation is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(default, int) and not isinstance(default, bool):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple) or (default is None and "tuple" in str(annotation)):
            if raw.lower() in ("", "none"):
                return None
            items = [x.strip() for x in raw.split(",") if x.strip()]
            conv = int if key.endswith(".M") else float
            return tuple(conv(x) for x in items)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse {key}={raw!r}") from None


def _apply(obj, section: str, values: dict[str, str]):
    fields = {f.name: f for f in dataclasses.fields(obj)}
    hints = typing.get_type_hints(type(obj))
    by_lower = {n.lower(): n for n in fields}  # configparser lowercases option names
    changes = {}
    for given, raw in values.items():
        name = given if given in fields else by_lower.get(given.lower(), given)
        if name not in fields or (section == "train" and name == "loss"):
            raise ConfigError(f"unknown configuration key {section}.{name}")
        changes[name] = _parse(raw, getattr(obj, name), hints.get(name), f"{section}.{name}")
    if section == "loss" and "M" in changes and "weights" not in changes:
        changes["weights"] = None  # default to uniform weights over the new levels
    try:
        return dataclasses.replace(obj, **changes)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{section}] values: {exc}") from None


def load_config(path: str | os.PathLike | None = None, overrides: list[str] | tuple[str, ...] = ()) -> RunConfig:
    """Defaults, then the INI file, then ``section.key=value`` overrides."""
    values: dict[str, dict[str, str]] = {s: {} for s in ("model", "loss", "train", "eval")}
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        for section in cp.sections():
            if section not in values:
                raise ConfigError(f"unknown configuration section [{section}]")
            values[section].update(cp.items(section))
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        key, raw = item.split("=", 1)
        section, name = key.strip().split(".", 1)
        if section not in values:
            raise ConfigError(f"unknown configuration section [{section}]")
        values[section][name.strip()] = raw
    model = _apply(ModelConfig(), "model", values["model"])
    loss = _apply(LossConfig(), "loss", values["loss"])
    train = _apply(TrainConfig(), "train", values["train"])
    train = dataclasses.replace(train, loss=loss)
    ev = _apply(EvalConfig(), "eval", values["eval"])
    if loss.d != model.d:
        raise ConfigError(f"max(loss.M)={loss.d} must equal model.d={model.d}")
    return RunConfig(model, loss, train, ev)


# --------------------------------------------------------------------------
# manifests


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digest_entry(path) -> str:
    p = Path(path)
    if p.is_dir():
        h = hashlib.sha256()
        for child in sorted(p.rglob("*")):
            if child.is_file() and not child.name.endswith(".manifest") and child.name != "manifest.ini":
                h.update(str(child.relative_to(p)).encode() + b"\0" + file_digest(child).encode())
        return h.hexdigest()
    return file_digest(p)


@dataclass
class RunManifest:
    command: str
    config: dict[str, str] = field(default_factory=dict)
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    extra: dict[str, str] = field(default_factory=dict)
    seed: int | None = None
    started: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))

    def add_input(self, name: str, path) -> None:
        self.inputs[name] = f"{path} sha256={_digest_entry(path)}"

    def add_output(self, name: str, path) -> None:
        self.outputs[name] = f"{path} sha256={_digest_entry(path)}"

    def render(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["run"] = {
            "command": self.command,
            "tool_version": VERSION,
            "python": platform.python_version(),
            "seed": "" if self.seed is None else str(self.seed),
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        cp["config"] = dict(sorted(self.config.items()))
        cp["inputs"] = dict(sorted(self.inputs.items()))
        cp["outputs"] = dict(sorted(self.outputs.items()))
        if self.extra:
            cp["result"] = dict(sorted(self.extra.items()))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        tmp = path.with_name(path.name + ".part")
        tmp.write_text(self.render(), encoding="utf-8")
        os.replace(tmp, path)
        return path


def read_manifest(path) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read(path, encoding="utf-8")
    return {s: dict(cp.items(s)) for s in cp.sections()}
