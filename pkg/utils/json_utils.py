"""
Small file helpers shared by the geometry, field and manifest writers.

Floats go through json's repr-based encoder, which prints the shortest
decimal that round-trips, so stored reals read back bit-exact.
"""
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List

import yaml


def json_read(filename: str | Path) -> Any:
    with open(filename, 'r', encoding='utf-8') as f:
        data = json.load(f)
    return data


def json_write(filename: str | Path, data: Any, indent: int | None = 2):
    filename = Path(filename)
    filename.parent.mkdir(parents=True, exist_ok=True)
    with open(filename, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=indent, sort_keys=True, allow_nan=False)
        f.write('\n')


def jsonl_write(filename: str | Path, records: Iterable[Dict[str, Any]], replace: bool = True):
    """
    Write one JSON object per line.

    Args:
        filename: Output path, must end in .jsonl
        records: Iterable of JSON-serializable dictionaries
        replace: If True, overwrite an existing file. If False, append to it.
    """
    filename = Path(filename)
    assert filename.suffix == '.jsonl', f"expected a .jsonl file, got {filename}"
    filename.parent.mkdir(parents=True, exist_ok=True)
    mode = 'w' if replace else 'a'
    with open(filename, mode, encoding='utf-8') as f:
        for record in records:
            json.dump(record, f, sort_keys=True)
            f.write('\n')


def jsonl_read(filename: str | Path) -> List[Dict[str, Any]]:
    records = []
    with open(filename, 'r', encoding='utf-8') as f:
        for line in f:
            if not line.strip():
                continue
            records.append(json.loads(line))
    return records


def yaml_read(filename: str | Path) -> Dict[str, Any]:
    with open(filename, 'r', encoding='utf-8') as f:
        data = yaml.safe_load(f)
    return data or {}
