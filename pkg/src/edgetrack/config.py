"""Flat ``section.key = value`` configuration files.

One file configures every module::

    # comments and blank lines are ignored
    segmenter.n_samples = 20
    blobs.min_area = 100
    tracker.kind = fallback
    bench.objects = 1,2,3,4,5,6

``dump_flat`` writes the complete effective configuration in the same format,
so a dumped file recreates a run exactly.
"""
from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .bench import BenchConfig
from .errors import InvalidConfig, IoFailure
from .pipeline import PipelineConfig

_SECTIONS = ("segmenter", "blobs", "manager", "tracker")


@dataclass(frozen=True)
class Settings:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)


def parse_flat(text: str, origin: str = "<config>") -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise InvalidConfig(f"{origin}:{lineno}: expected 'key = value'")
        values[key.strip()] = value.strip()
    return values


def load_flat(path) -> dict[str, str]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    return parse_flat(text, str(path))


def _coerce(value: str, hint, key: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if value.lower() in ("", "none"):
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(value, inner, key)
    if origin is tuple:
        return tuple(int(v) for v in value.split(",") if v.strip())
    try:
        if hint is bool:
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if hint is int:
            return int(value, 0)
        if hint is float:
            return float(value)
    except ValueError:
        raise InvalidConfig(f"{key}: cannot parse {value!r} as {hint.__name__}") from None
    return value


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _apply(obj, prefix: str, values: dict[str, str], used: set[str]):
    hints = typing.get_type_hints(type(obj))
    changes = {}
    for f in fields(obj):
        current = getattr(obj, f.name)
        if dataclasses.is_dataclass(current):
            changes[f.name] = _apply(current, f"{f.name}.", values, used)
            continue
        key = prefix + f.name
        if key in values:
            used.add(key)
            changes[f.name] = _coerce(values[key], hints[f.name], key)
    try:
        return replace(obj, **changes)
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from exc


def settings_from_flat(values: dict[str, str], base: Settings | None = None) -> Settings:
    base = base or Settings()
    used: set[str] = set()
    pipeline = _apply(base.pipeline, "pipeline.", values, used)
    bench = _apply(base.bench, "bench.", values, used)
    unknown = sorted(set(values) - used)
    if unknown:
        raise InvalidConfig(f"unknown config keys: {', '.join(unknown)}")
    return Settings(pipeline, bench)


def _flatten(obj, prefix: str, out: dict[str, str]):
    for f in fields(obj):
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            _flatten(value, f"{f.name}.", out)
        else:
            out[prefix + f.name] = _format(value)


def to_flat(settings: Settings) -> dict[str, str]:
    out: dict[str, str] = {}
    _flatten(settings.pipeline, "pipeline.", out)
    _flatten(settings.bench, "bench.", out)
    return out


def dump_flat(settings: Settings) -> str:
    flat = to_flat(settings)
    order = {s: i for i, s in enumerate(_SECTIONS + ("pipeline", "bench"))}
    keys = sorted(flat, key=lambda k: (order.get(k.split(".", 1)[0], 99), list(flat).index(k)))
    return "".join(f"{k} = {flat[k]}\n" for k in keys)
