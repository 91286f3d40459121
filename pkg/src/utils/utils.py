import hashlib
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any


def make_indexed_filename(prefix: str, index: int, suffix: str = ".csv", width: int = 5) -> str:
    """
    Create a zero-padded, sortable filename.

    Format: "{prefix}_{index:0{width}d}{suffix}"

    Raises
    ------
    ValueError
        If the index is negative or does not fit the width.
    """
    if index < 0:
        raise ValueError(f"Index {index} must be nonnegative")
    if len(str(index)) > width:
        raise ValueError(f"Index {index} does not fit {width} digits")

    return f"{prefix}_{index:0{width}d}{suffix}"


def file_checksum(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return f"sha256:{digest.hexdigest()}"


def atomic_write_text(path: Path, text: str):
    """Write text to a sibling temp file, then rename it over `path`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise


def to_json(payload: Any) -> str:
    """JSON text with non-finite floats written as null."""

    def _clean(value):
        if isinstance(value, float) and not math.isfinite(value):
            return None
        if isinstance(value, dict):
            return {k: _clean(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [_clean(v) for v in value]
        return value

    return json.dumps(_clean(payload), indent=2, sort_keys=False) + "\n"


def set_dotted(mapping: dict, dotted_path: str, value: Any) -> dict:
    """
    Return a deep copy of `mapping` with `value` stored at a dotted key path,
    e.g. "coefficient.params.q". Intermediate tables are created as needed.
    """
    result = json.loads(json.dumps(mapping))
    keys = dotted_path.split(".")
    if not all(keys):
        raise ValueError(f"Invalid parameter path '{dotted_path}'")

    node = result
    for key in keys[:-1]:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise ValueError(f"Parameter path '{dotted_path}' crosses non-table key '{key}'")
        node = child
    node[keys[-1]] = value
    return result


def format_check_lines(lines: list, name_width: int | None = None) -> str:
    """
    Render (name, status, detail) triples as an aligned, numbered block.
    """
    bad = [item for item in lines if len(item) != 3]
    if bad:
        raise TypeError(f"Expected (name, status, detail) triples, got {bad!r}")

    name_width = name_width or max((len(name) for name, _, _ in lines), default=0)
    block = ""
    for index, (name, status, detail) in enumerate(lines, start=1):
        block = f"{block}{index:02d}. [{status.upper():4}] {name:<{name_width}}  {detail}\n"

    return block


if __name__ == "__main__":
    print(make_indexed_filename("snapshot", 7))
    print(set_dotted({"coefficient": {"params": {"q": 0.9}}}, "coefficient.params.q", 0.95))
    print(
        format_check_lines(
            [
                ("Linf(Q_T) bounded", "pass", "max |u| = 0.5"),
                ("Gronwall envelope", "warn", "min margin = -1e-6"),
            ]
        )
    )
