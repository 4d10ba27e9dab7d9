"""Declarative key/value config files.

Syntax, one `key = value` per line, `#` comments:
    epochs = 10
    learning_rate = 0.01
    t0_frac = 0.08..0.92          # numeric range
    kernel_schedule = 11 22 22 22 # verbatim string (schedule codes)
    optimizer = sgd, adam         # comma list -> ablation grid axis
"""

from __future__ import annotations

import itertools
from dataclasses import fields
from pathlib import Path

from .synthgen import ParamSpace


class ConfigError(ValueError):
    pass


def _parse_scalar(text: str):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_value(text: str):
    text = text.strip()
    if ".." in text:
        lo, _, hi = text.partition("..")
        return (_parse_scalar(lo), _parse_scalar(hi))
    return _parse_scalar(text)


def parse_config(text: str) -> dict:
    """Flat dict of parsed values; later keys override earlier ones."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = parse_value(value)
    return out


def load_config(path) -> dict:
    return parse_config(Path(path).read_text())


def parse_grid(text: str) -> list[tuple[str, dict]]:
    """Expand comma-separated values into a cartesian grid of variants."""
    base: dict = {}
    axes: list[tuple[str, list]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if "," in value:
            axes.append((key, [parse_value(v) for v in value.split(",")]))
        else:
            base[key] = parse_value(value)
    if not axes:
        return [("base", base)]
    variants = []
    names, choices = zip(*axes)
    for combo in itertools.product(*choices):
        overrides = dict(base)
        overrides.update(dict(zip(names, combo)))
        label = ",".join(f"{n}={v}" for n, v in zip(names, combo))
        variants.append((label, overrides))
    return variants


_TUPLE_FIELDS = {"n_primaries", "n_multiples", "t0_frac", "amplitude",
                 "rmo_perturb_pct", "f_center", "bandwidth", "phase_deg",
                 "f_decay", "nmo_perturb_pct"}


def param_space_from_dict(values: dict) -> ParamSpace:
    known = {f.name for f in fields(ParamSpace)}
    kwargs = {}
    for key, val in values.items():
        if key not in known:
            raise ConfigError(f"unknown parameter-space key {key!r}")
        if key in _TUPLE_FIELDS and not isinstance(val, tuple):
            val = (val, val)
        kwargs[key] = val
    return ParamSpace(**kwargs)
