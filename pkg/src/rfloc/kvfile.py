"""Plain-text key-value files: `key = value` lines, `#` comments, blank lines ignored."""

from __future__ import annotations

from pathlib import Path

from .errors import DataFileError


def parse_kv(text: str, source: str = "<string>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataFileError(f"{source}: line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise DataFileError(f"{source}: line {lineno}: empty key")
        out[key] = value.strip()
    return out


def read_kv(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise DataFileError(f"key-value file not found: {path}")
    return parse_kv(path.read_text(encoding="utf-8"), source=str(path))


def write_kv(path: str | Path, entries: dict[str, str], header: str | None = None) -> None:
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    lines.extend(f"{key} = {value}" for key, value in entries.items())
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
