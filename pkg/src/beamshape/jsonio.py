"""JSON/CSV helpers: complex matrices as [re, im] pairs, reproducible floats."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def complex_to_pairs(mat: np.ndarray) -> list:
    """Encode a complex array as nested lists with [re, im] leaves."""
    arr = np.asarray(mat)
    stacked = np.stack([arr.real, arr.imag], axis=-1)
    return stacked.tolist()


def pairs_to_complex(data) -> np.ndarray:
    """Inverse of :func:`complex_to_pairs`."""
    arr = np.asarray(data, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def fmt(x) -> str:
    """Render a float with 17 significant digits (round-trip exact)."""
    return format(float(x), ".17g")


def dump_json(obj, path) -> None:
    """Write canonical JSON: sorted keys, newline-terminated, UTF-8."""
    text = json.dumps(obj, sort_keys=True, indent=1)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_csv(path, header: list[str], rows: list[list]) -> None:
    """Write CSV with "," separator, "." decimal point, "\\n" line ends.

    Floats go through :func:`fmt` so re-runs are byte-identical.
    """
    lines = [",".join(header)]
    for row in rows:
        cells = [fmt(c) if isinstance(c, float) else str(c) for c in row]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
