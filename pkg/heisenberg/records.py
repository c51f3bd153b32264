"""
Output records: JSON documents, CSV tables and the binary field container.

Container layout (little endian):
    8 bytes   magic b"HEISBIN1"
    8 bytes   uint64 header length
    header    UTF-8 JSON, keys sorted; "arrays" lists name, shape, offset
    payload   float64 arrays back to back
"""

import json
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np
import pandas as pd

from heisenberg.errors import InvalidArgumentError

MAGIC = b"HEISBIN1"


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_json(path: Path, doc: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps(doc))


def read_json(path: Path) -> dict:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def write_csv(frame: pd.DataFrame, path: Path):
    """RFC-4180: header row, CRLF line ends, minimal quoting; floats in shortest round-trip form"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\r\n")


def write_container(path: Path, header: dict, arrays: Dict[str, np.ndarray]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    layout = []
    payload = []
    offset = 0
    for name in sorted(arrays):
        data = np.ascontiguousarray(arrays[name], dtype="<f8")
        layout.append({"name": name, "shape": list(data.shape), "offset": offset})
        payload.append(data.tobytes())
        offset += data.nbytes
    doc = dict(header)
    doc["arrays"] = layout
    doc["dtype"] = "<f8"
    blob = json.dumps(doc, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for chunk in payload:
            f.write(chunk)


def read_container(path: Path) -> Tuple[dict, Dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != MAGIC:
        raise InvalidArgumentError(f"{path} is not a field container")
    (length,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + length].decode("utf-8"))
    base = 16 + length
    arrays = {}
    for entry in header.get("arrays", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = base + entry["offset"]
        arrays[entry["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=start).reshape(shape).copy()
    return header, arrays
