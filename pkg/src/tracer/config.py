"""Plain-text ``key = value`` configuration files.

One setting per line, ``#`` starts a comment, blank lines are ignored and a
repeated key is an error. Lists are comma separated. Values are coerced to
the type of the matching dataclass field's default.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Any, Mapping

from .calibration import GridSpec
from .embeddings import EmbeddingProviderConfig
from .errors import ConfigError, ScenarioSpecError
from .risk import TracerParams
from .signals import ContentFilterConfig, RepetitionConfig, SignalConfig, read_stopword_file
from .synth import ScenarioSpec

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = val
    return out


def read_kv(path: str | os.PathLike) -> dict[str, str]:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {os.fspath(path)}: {exc.strerror}") from None
    return parse_kv(text, os.fspath(path))


def _coerce(key: str, raw: str, default: Any) -> Any:
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], float):
                return tuple(float(s) for s in items)
            return tuple(items)
        if default is None or isinstance(default, str):
            return raw
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None
    raise ConfigError(f"cannot coerce {key!r}")


def _field_defaults(cls) -> dict[str, Any]:
    out = {}
    for f in dataclasses.fields(cls):
        if f.default is not dataclasses.MISSING:
            out[f.name] = f.default
        elif f.default_factory is not dataclasses.MISSING:
            out[f.name] = f.default_factory()
    return out


def _build(cls, values: Mapping[str, str], keys: Mapping[str, str]):
    """Instantiate ``cls`` from the subset of ``values`` named in ``keys`` (config key -> field)."""
    defaults = _field_defaults(cls)
    kwargs = {fname: _coerce(ckey, values[ckey], defaults[fname]) for ckey, fname in keys.items() if ckey in values}
    return cls(**kwargs)


_SCENARIO_KEYS = {f.name: f.name for f in dataclasses.fields(ScenarioSpec)}
_GRID_KEYS = {f.name: f.name for f in dataclasses.fields(GridSpec)}
_CONTENT_KEYS = {"pi0": "pi0", "epsilon": "epsilon"}
_REPETITION_KEYS = {"window": "window", "window_unit": "window_unit"}
_EMBEDDING_KEYS = {"provider": "kind", "dimension": "dimension", "endpoint": "endpoint",
                   "cache_capacity": "cache_capacity", "timeout": "timeout", "retries": "retries",
                   "fallback_to_builtin": "fallback_to_builtin"}
_PARAM_KEYS = {"alpha", "beta", "gamma", "k", "w"}
_RUN_KEYS = set(_CONTENT_KEYS) | set(_REPETITION_KEYS) | set(_EMBEDDING_KEYS) | _PARAM_KEYS | {
    "stopwords_file", "freeze_k"}


def _reject_unknown(values: Mapping[str, str], allowed, what: str) -> None:
    unknown = sorted(set(values) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown {what} key(s): {', '.join(unknown)}")


def scenario_from_kv(values: Mapping[str, str]) -> ScenarioSpec:
    try:
        _reject_unknown(values, _SCENARIO_KEYS, "scenario")
        return _build(ScenarioSpec, values, _SCENARIO_KEYS)
    except ConfigError as exc:
        raise ScenarioSpecError(str(exc)) from None


def read_scenario(path: str | os.PathLike) -> ScenarioSpec:
    try:
        values = read_kv(path)
    except ConfigError as exc:
        raise ScenarioSpecError(str(exc)) from None
    return scenario_from_kv(values)


def grid_from_kv(values: Mapping[str, str]) -> GridSpec:
    _reject_unknown(values, _GRID_KEYS, "grid")
    return _build(GridSpec, values, _GRID_KEYS)


def read_grid(path: str | os.PathLike) -> GridSpec:
    return grid_from_kv(read_kv(path))


@dataclass(frozen=True)
class RunConfig:
    """Settings shared by score, fit and eval."""

    signals: SignalConfig = field(default_factory=SignalConfig)
    embedding: EmbeddingProviderConfig = field(default_factory=EmbeddingProviderConfig)
    params: TracerParams | None = None
    freeze_k: bool = False


def run_config_from_kv(values: Mapping[str, str]) -> RunConfig:
    _reject_unknown(values, _RUN_KEYS, "config")
    content_kw = {}
    if "stopwords_file" in values:
        try:
            content_kw["stopwords"] = read_stopword_file(values["stopwords_file"])
        except OSError as exc:
            raise ConfigError(f"cannot read stop-word file {values['stopwords_file']}: {exc.strerror}") from None
    content = _build(ContentFilterConfig, values, _CONTENT_KEYS)
    if content_kw:
        content = dataclasses.replace(content, **content_kw)
    signals = SignalConfig(content, _build(RepetitionConfig, values, _REPETITION_KEYS))
    embedding = _build(EmbeddingProviderConfig, values, _EMBEDDING_KEYS)
    params = None
    if _PARAM_KEYS & set(values):
        params = TracerParams.from_dict({k: _coerce(k, values[k], 0.0) for k in _PARAM_KEYS if k in values})
    freeze = _coerce("freeze_k", values["freeze_k"], False) if "freeze_k" in values else False
    return RunConfig(signals, embedding, params, freeze)


def read_run_config(path: str | os.PathLike) -> RunConfig:
    return run_config_from_kv(read_kv(path))
