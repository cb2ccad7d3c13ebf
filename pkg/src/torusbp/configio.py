"""JSON configuration files.

Sparse: ``{"L": 4, "d": 2, "black": [[0, 0], [1, 1]]}`` with coordinates in
lexicographic order.  Dense: ``{"L": 2, "d": 2, "bits": "f"}`` where the hex
string is the bitmap read as one integer whose bit i is node index i,
zero-padded to ceil(L**d / 4) digits.
"""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .lattice import Configuration, TorusShape

SPARSE_BELOW = 0.05
_HEX = re.compile(r"[0-9a-f]*")


class ConfigError(ValueError):
    pass


class ConfigFormatError(ConfigError):
    """Missing keys or wrong JSON types."""


class ConfigLengthError(ConfigError):
    """Bitmap length does not match L**d."""


class ConfigHexError(ConfigError):
    """Dense bitmap is not lowercase hexadecimal."""


class ConfigCoordinateError(ConfigError):
    """Sparse coordinate is out of range or has the wrong dimension."""


def hex_digits(n_nodes: int) -> int:
    return -(-n_nodes // 4)


def encode_bits(c: Configuration) -> str:
    value = int.from_bytes(c.bits.tobytes(), "little")
    return format(value, "x").zfill(hex_digits(c.shape.n_nodes))


def decode_bits(text: str, shape: TorusShape) -> Configuration:
    if not isinstance(text, str) or not _HEX.fullmatch(text):
        raise ConfigHexError(f"bits must be lowercase hex, got {str(text)[:40]!r}")
    n = shape.n_nodes
    if len(text) != hex_digits(n):
        raise ConfigLengthError(f"bits has {len(text)} hex digits, torus of {n} nodes needs {hex_digits(n)}")
    value = int(text, 16) if text else 0
    if value >> n:
        raise ConfigLengthError(f"bits sets a bit beyond node index {n - 1}")
    raw = value.to_bytes((n + 7) // 8, "little")
    return Configuration(shape, np.frombuffer(raw, np.uint8).copy())


def encode_config(c: Configuration, form: str | None = None) -> dict:
    """JSON-ready dict; sparse when fewer than 5% of nodes are black unless ``form`` is given."""
    if form is None:
        form = "sparse" if c.popcount() < SPARSE_BELOW * c.shape.n_nodes else "dense"
    out = {"L": c.shape.L, "d": c.shape.d}
    if form == "sparse":
        out["black"] = [list(v) for v in c.black_coords()]
    elif form == "dense":
        out["bits"] = encode_bits(c)
    else:
        raise ValueError(f"unknown form {form!r}")
    return out


def _int_field(f: dict, key: str) -> int:
    v = f.get(key)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigFormatError(f"field {key!r} must be an integer, got {v!r}")
    return v


def decode_config(f: dict) -> Configuration:
    if not isinstance(f, dict):
        raise ConfigFormatError("configuration must be a JSON object")
    try:
        shape = TorusShape(_int_field(f, "d"), _int_field(f, "L"))
    except ConfigFormatError:
        raise
    except ValueError as e:
        raise ConfigFormatError(str(e)) from None
    if ("black" in f) == ("bits" in f):
        raise ConfigFormatError("configuration needs exactly one of 'black' or 'bits'")
    if "bits" in f:
        return decode_bits(f["bits"], shape)
    coords = f["black"]
    if not isinstance(coords, list):
        raise ConfigFormatError("'black' must be a list of coordinates")
    arr = np.zeros(shape.dims, bool)
    for v in coords:
        if (not isinstance(v, list) or len(v) != shape.d
                or any(isinstance(x, bool) or not isinstance(x, int) for x in v)):
            raise ConfigCoordinateError(f"coordinate {v!r} is not a list of {shape.d} integers")
        if any(not 0 <= x < shape.L for x in v):
            raise ConfigCoordinateError(f"coordinate {v} out of range [0, {shape.L})")
        arr[tuple(v)] = True
    return Configuration.from_array(shape, arr)


def canonical(f: dict) -> dict:
    return encode_config(decode_config(f))


def load_config(source: str) -> Configuration:
    """Read a configuration from a path, or from inline JSON text starting with '{'."""
    text = source if source.lstrip().startswith("{") else Path(source).read_text()
    try:
        f = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigFormatError(f"invalid JSON: {e}") from None
    return decode_config(f)


def dump_config(c: Configuration, path, form: str | None = None):
    Path(path).write_text(json.dumps(encode_config(c, form)) + "\n")
