"""
Key-Value File Codec

The flat `key = value` text format shared by scenario and radio profile
files. `#` starts a comment, keys may carry dotted sections
(`geometry.point_b`), and every value remembers its line number so
validation errors can point at it.
"""

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .exceptions import ScenarioError, ScenarioParseError, ScenarioValidationError

KEY_PATTERN = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\-]*$")


@dataclass(frozen=True)
class KvValue:
    """Raw value plus where it came from."""

    raw: str
    line: int


def parse_kv_text(text: str, source: str = "<string>") -> Dict[str, KvValue]:
    """
    Parse key-value text.

    Args:
        text: File contents
        source: Name used in error messages

    Returns:
        Mapping key -> KvValue, in file order

    Raises:
        ScenarioParseError: On a malformed line or a repeated key
    """
    entries: Dict[str, KvValue] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ScenarioParseError(source, number, f"expected 'key = value', got {stripped!r}")

        key, value = (part.strip() for part in stripped.split("=", 1))
        if not KEY_PATTERN.match(key):
            raise ScenarioParseError(source, number, f"invalid key {key!r}")
        if key in entries:
            raise ScenarioParseError(
                source, number, f"duplicate key {key!r} (first set on line {entries[key].line})"
            )
        entries[key] = KvValue(value, number)
    return entries


def read_kv_file(path: str | Path) -> Dict[str, KvValue]:
    """Read and parse a key-value file."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise ScenarioError(f"{path}: cannot read ({e.strerror or e})") from e
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        line = data.count(b"\n", 0, e.start) + 1
        raise ScenarioParseError(str(path), line, f"invalid UTF-8 byte 0x{data[e.start]:02x}") from e
    return parse_kv_text(text, source=str(path))


def reject_unknown(entries: Dict[str, KvValue], known: set, source: str) -> None:
    """Raise on the first key that is not part of the documented format."""
    for key, value in entries.items():
        if key not in known:
            raise ScenarioParseError(source, value.line, f"unknown key {key!r}")


# Typed value parsers. Each raises ScenarioValidationError naming the field.

def as_float(field: str, raw: str, source: Optional[str] = None) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ScenarioValidationError(field, f"expected a number, got {raw!r}", source) from None
    if not math.isfinite(value):
        raise ScenarioValidationError(field, f"expected a finite number, got {raw!r}", source)
    return value


def as_int(field: str, raw: str, source: Optional[str] = None) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ScenarioValidationError(field, f"expected an integer, got {raw!r}", source) from None


def as_pair(field: str, raw: str, source: Optional[str] = None) -> Tuple[float, float]:
    """`x,y` -> (x, y)."""
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 2:
        raise ScenarioValidationError(field, f"expected 'x,y', got {raw!r}", source)
    return as_float(field, parts[0], source), as_float(field, parts[1], source)


def as_pair_list(field: str, raw: str, source: Optional[str] = None) -> List[Tuple[float, float]]:
    """`x1,y1; x2,y2` -> [(x1, y1), (x2, y2)]; empty string -> []."""
    return [as_pair(field, item, source) for item in raw.split(";") if item.strip()]


def as_windows(field: str, raw: str, source: Optional[str] = None) -> List[Tuple[float, float]]:
    """`start..end; start..end` -> [(start, end), ...]; empty string -> []."""
    windows = []
    for item in raw.split(";"):
        if not item.strip():
            continue
        if ".." not in item:
            raise ScenarioValidationError(field, f"expected 'start..end', got {item.strip()!r}", source)
        start, end = item.split("..", 1)
        window = (as_float(field, start.strip(), source), as_float(field, end.strip(), source))
        if window[1] < window[0]:
            raise ScenarioValidationError(field, f"window end before start: {item.strip()!r}", source)
        windows.append(window)
    return windows


def format_float(value: float) -> str:
    """Shortest text that parses back to exactly the same float."""
    return repr(float(value))


def format_pair(pair: Tuple[float, float]) -> str:
    return f"{format_float(pair[0])},{format_float(pair[1])}"


def format_windows(windows) -> str:
    return "; ".join(f"{format_float(a)}..{format_float(b)}" for a, b in windows)
