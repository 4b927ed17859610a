"""Flat ``key = value`` config files (``#`` starts a comment)."""
from __future__ import annotations

from pathlib import Path
from typing import Mapping


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        out[key] = value
    return out


def load_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text())


def dump_kv(values: Mapping[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in sorted(values.items()))
