"""JSON emission with fixed 17-significant-digit floats."""

import json
import math
import re

import numpy as np

_MARK = "\x00f:"
_MARK_RE = re.compile(r'"\\u0000f:([^"]*)"')


def _prep(obj):
    if isinstance(obj, dict):
        return {str(k): _prep(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_prep(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_prep(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        return _MARK + format(x, ".17g")
    return obj


def dumps(obj, indent=None):
    """``json.dumps`` where every float is written as ``format(x, '.17g')``."""
    text = json.dumps(_prep(obj), indent=indent, sort_keys=False)
    return _MARK_RE.sub(lambda m: _float_token(m.group(1)), text)


def _float_token(s):
    # keep a decimal point or exponent so readers parse it back as a float
    return s if any(c in s for c in ".eE") else s + ".0"


def write_ndjson(path, records):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(dumps(rec))
            fh.write("\n")


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps(obj, indent=2))
        fh.write("\n")


def fmt(x):
    return format(float(x), ".17g")
