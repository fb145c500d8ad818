"""JSON run configurations: per-command schemas, normalization and validation.

A config is a flat JSON object. Unknown keys, wrong types and out-of-range
values are all collected before anything is reported, so one run of
:func:`validate_config` names every bad field at once. The normalized form
(every field present, defaults filled) validates to itself.
"""

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

__all__ = ["ConfigError", "COMMANDS", "SCHEMAS", "normalize", "validate_config", "config_hash", "dumps"]

KINDS = ("mono", "am", "fm")
PROFILES = ("desk", "paper")


class ConfigError(ValueError):
    """Carries the full list of problems; ``str()`` joins them one per line."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass(frozen=True)
class Field:
    kind: str  # int, float, bool, str, kinds, floats, path
    default: object = None
    lo: float = None
    hi: float = None
    choices: tuple = None
    required: bool = False


def _common():
    return {"seed": Field("int", 0, lo=0)}


def _training():
    return {
        "profile": Field("str", "desk", choices=PROFILES),
        "T": Field("int", None, lo=32),
        "kinds": Field("kinds", ["mono"]),
        "beta": Field("float", 0.001, lo=0.0, hi=1.0),
        "epochs": Field("int", 3, lo=1),
        "sets": Field("int", 4, lo=1),
        "samples_per_set": Field("int", 5000, lo=1),
        "batch": Field("int", 64, lo=1),
        "lr": Field("float", 1e-3, lo=0.0),
        "beta1": Field("float", 0.9, lo=0.0, hi=1.0),
        "beta2": Field("float", 0.999, lo=0.0, hi=1.0),
        "eps": Field("float", 1e-8, lo=0.0),
        "val_fraction": Field("float", 0.05, lo=0.0, hi=0.5),
    }


SCHEMAS = {
    "generate": {
        **_common(),
        "kinds": Field("kinds", ["mono"]),
        "n": Field("int", 1000, lo=1),
        "T": Field("int", 256, lo=32),
        "envelope_sidebands": Field("bool", True),
        "fm_range_override": Field("floats", None, lo=0.0, hi=0.5),
    },
    "train": {
        **_common(),
        **_training(),
        "partial": Field("bool", False),
        "auto_beta": Field("bool", False),
        "data": Field("paths", []),
    },
    "predict": {
        **_common(),
        "checkpoint": Field("path", required=True),
        "data": Field("path", required=True),
    },
    "fit": {
        **_common(),
        "data": Field("path", required=True),
        "init": Field("str", "truth", choices=("truth", "checkpoint")),
        "checkpoint": Field("path", None),
        "max_iter": Field("int", 200, lo=1),
        "limit": Field("int", None, lo=1),
    },
    "benchmark": {
        **_common(),
        "checkpoint": Field("path", required=True),
        "kind": Field("str", "mono", choices=KINDS),
        "n": Field("int", 300, lo=1),
        "sweep": Field("bool", False),
        "exclude_sigma": Field("bool", False),
    },
    "assisted": {
        **_common(),
        "checkpoint": Field("path", required=True),
        "kind": Field("str", "mono", choices=KINDS),
        "n": Field("int", 200, lo=1),
        "epsilon": Field("float", 0.01, lo=0.0),
        "floor": Field("float", 1e-9, lo=0.0),
    },
    "partial": {
        **_common(),
        "partial_checkpoint": Field("path", required=True),
        "specialized_checkpoint": Field("path", required=True),
        "n": Field("int", 5000, lo=1),
    },
    "beta-sweep": {
        **_common(),
        **_training(),
        "betas": Field("floats", [0.0, 0.001, 0.5, 1.0], lo=0.0, hi=1.0),
    },
}
COMMANDS = tuple(SCHEMAS)

# ranges that must hold strictly
_OPEN_LOW = {"lr", "eps", "epsilon"}
_OPEN_HIGH = {"beta1", "beta2"}


def _range_text(f, name):
    lo = "(" if name in _OPEN_LOW else "["
    hi = ")" if name in _OPEN_HIGH else "]"
    a = "-inf" if f.lo is None else f"{f.lo:g}"
    b = "inf" if f.hi is None else f"{f.hi:g}"
    return f"{lo}{a}, {b}{hi}"


def _in_range(name, f, v):
    if f.lo is not None and (v < f.lo or (name in _OPEN_LOW and v == f.lo)):
        return False
    if f.hi is not None and (v > f.hi or (name in _OPEN_HIGH and v == f.hi)):
        return False
    return True


def _number(v, integral):
    if isinstance(v, bool):
        return None
    if integral:
        if isinstance(v, int):
            return v
        if isinstance(v, float) and v.is_integer():
            return int(v)
        return None
    if isinstance(v, (int, float)) and math.isfinite(v):
        return float(v)
    return None


def _coerce(name, f, v, errors):
    if v is None:
        if f.required:
            errors.append(f"{name}: required")
        return None
    k = f.kind
    if k in ("int", "float"):
        out = _number(v, k == "int")
        if out is None:
            errors.append(f"{name}: expected {'an integer' if k == 'int' else 'a finite number'}, got {v!r}")
            return None
        if not _in_range(name, f, out):
            errors.append(f"{name}: {out!r} outside {_range_text(f, name)}")
        return out
    if k == "bool":
        if not isinstance(v, bool):
            errors.append(f"{name}: expected true or false, got {v!r}")
        return v
    if k in ("str", "path"):
        if not isinstance(v, str) or not v:
            errors.append(f"{name}: expected a non-empty string, got {v!r}")
            return v
        if f.choices and v not in f.choices:
            errors.append(f"{name}: {v!r} not one of {list(f.choices)}")
        return v
    if k in ("kinds", "floats", "paths"):
        items = v.split(",") if isinstance(v, str) else v
        if not isinstance(items, list) or not items and k != "paths":
            errors.append(f"{name}: expected a non-empty list, got {v!r}")
            return v
        if k == "kinds":
            out = [str(x).strip().lower() for x in items]
            bad = [x for x in out if x not in KINDS]
            if bad:
                errors.append(f"{name}: unknown kinds {bad}; choose from {list(KINDS)}")
            elif len(set(out)) != len(out):
                errors.append(f"{name}: duplicate kinds")
            return out
        if k == "paths":
            if not all(isinstance(x, str) and x for x in items):
                errors.append(f"{name}: expected a list of paths")
            return list(items)
        out = []
        for x in items:
            num = _number(float(x) if isinstance(x, str) and _is_float(x) else x, False)
            if num is None:
                errors.append(f"{name}: {x!r} is not a number")
            elif not _in_range(name, f, num):
                errors.append(f"{name}: {num!r} outside {_range_text(f, name)}")
            out.append(num)
        return out
    raise AssertionError(k)


def _is_float(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def normalize(raw, command):
    """Type-check, range-check and default-fill ``raw``; raises ConfigError."""
    if command not in SCHEMAS:
        raise ConfigError([f"command: unknown command {command!r}"])
    if not isinstance(raw, dict):
        raise ConfigError([f"config: expected a JSON object, got {type(raw).__name__}"])
    schema = SCHEMAS[command]
    errors = [f"{k}: unknown field for {command}" for k in sorted(raw) if k not in schema]
    out = {}
    for name, f in schema.items():
        value = raw.get(name, f.default)
        if isinstance(value, list):
            value = list(value)
        out[name] = _coerce(name, f, value, errors)
    errors.extend(_cross_checks(command, out))
    if errors:
        raise ConfigError(errors)
    return out


def _cross_checks(command, cfg):
    errors = []
    T = cfg.get("T")
    if command in ("train", "beta-sweep") and isinstance(T, int) and T % 16:
        errors.append(f"T: {T} must be a multiple of 16 for the network")
    fm = cfg.get("fm_range_override")
    if command == "generate" and isinstance(fm, list) and fm:
        if len(fm) != 2 or not all(isinstance(v, float) for v in fm) or not fm[0] < fm[1]:
            errors.append(f"fm_range_override: expected [low, high] with low < high, got {fm!r}")
    if command == "fit" and cfg.get("init") == "checkpoint" and not cfg.get("checkpoint"):
        errors.append("checkpoint: required when init is 'checkpoint'")
    return errors


def validate_config(path, command, overrides=None):
    """Read a JSON file, apply ``overrides`` (already parsed) and normalize.

    ``path=None`` starts from an empty object. Raises ConfigError listing every
    problem, or for unreadable / malformed files.
    """
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError([f"config: file not found: {p}"])
        text = p.read_text()
        if not text.strip():
            raise ConfigError([f"config: parse error in {p}: file is empty"])
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config: parse error in {p}: {exc}"]) from None
        if not isinstance(raw, dict):
            raise ConfigError([f"config: {p} must hold a JSON object"])
    raw = dict(raw)
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return normalize(raw, command)


def dumps(cfg):
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def config_hash(command, cfg):
    blob = json.dumps({"command": command, "config": cfg}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
