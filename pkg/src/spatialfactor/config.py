"""Flat ``key = value`` configuration files.

Section headers are optional and only group keys visually; all sections are
merged into one namespace. ``#`` and ``;`` start comments.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
import types
import typing


def read_kv(path: str) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string("[__top__]\n" + text)
    except configparser.Error as exc:
        raise ValueError(f"{path}: {exc}") from None
    out: dict[str, str] = {}
    for sec in cp.sections():
        for key, value in cp[sec].items():
            out[key] = value
    out["__dir__"] = os.path.dirname(os.path.abspath(path))
    return out


def _coerce(raw, tp):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if raw.lower() in ("", "none"):
            return None
        tp = next(a for a in args if a is not type(None))
        return _coerce(raw, tp)
    if tp is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if tp is int:
        return int(raw)
    if tp is float:
        return float(raw)
    if tp is tuple or origin is tuple:
        return tuple(t.strip() for t in raw.split(",") if t.strip())
    return raw


def build_dataclass(cls, kv: dict):
    """Instantiate ``cls`` from the keys of ``kv`` that name its fields.

    Unknown keys are ignored so one file can configure several objects.
    """
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in kv:
            try:
                kwargs[f.name] = _coerce(kv[f.name], hints[f.name])
            except ValueError as exc:
                raise ValueError(f"config key {f.name!r}: {exc}") from None
    return cls(**kwargs)
