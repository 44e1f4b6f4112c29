"""TOML run configurations: schema, validation and the run manifest.

A config names its scenario ``kind`` and carries one section for it::

    kind = "sterngerlach"      # screening | sterngerlach | squid-spectrum | squid-evolve
    seed = 7                   # optional; --seed on the command line wins

    [tolerances]               # optional overrides of the tolerance record
    signal_leakage = 1e-6

    [sterngerlach]
    ...

Complex amplitudes are written as a number or as ``[re, im]``. See the
annotated files in ``configs/`` for every key.
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import tolerances
from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

KINDS = ("screening", "sterngerlach", "squid-spectrum", "squid-evolve")

_NUM = (int, float)
_COMPLEX = "complex"
_STATS = ("fermionic", "bosonic", "none")

# key -> (accepted types or choices, default); a default of ... marks a required key
SCHEMA = {
    "screening": {
        "builder": (("screen", "scatter"), "screen"),
        "modes": (int, 2),
        "statistics": (_STATS, "fermionic"),
        "mix_body": (bool, True),
        "c_thr": (_COMPLEX, None),
        "c_sw": (_COMPLEX, None),
        "coupling_seed": (int, None),
        "samples": (int, 10000),
    },
    "sterngerlach": {
        "ancilla_levels": (int, 12),
        "detector_grains": (int, 4),
        "grain_levels": (int, 2),
        "packet_center": (_NUM, 2.0),
        "packet_width": (_NUM, 0.5),
        "threshold": (_NUM, 1.0),
        "twin": (bool, False),
        "statistics": (_STATS, "fermionic"),
        "c_plus": (_COMPLEX, ...),
        "c_minus": (_COMPLEX, ...),
        "n_trials": (int, 100000),
    },
    "squid": {
        "units": (("reduced", "si"), "reduced"),
        "capacitance": (_NUM, 1.0),
        "inductance": (_NUM, 1.0),
        "critical_current": (_NUM, None),
        "beta": (_NUM, None),
        "phi_ext": (_NUM, 0.5),
        "levels": (int, 4),
        "phi_min": (_NUM, None),
        "phi_max": (_NUM, None),
        "n_points": (int, 2001),
    },
    "squid.sweep": {
        "variable": (("phi_ext", "critical_current", "beta"), ...),
        "start": (_NUM, ...),
        "stop": (_NUM, ...),
        "num": (int, 21),
        "half_width": (_NUM, None),
    },
    "squid.evolve": {
        "periods": (_NUM, 0.5),
        "steps_per_period": (int, 2000),
        "store_every": (int, None),
    },
}

SECTION_FOR_KIND = {"screening": "screening", "sterngerlach": "sterngerlach",
                    "squid-spectrum": "squid", "squid-evolve": "squid"}


def _locate(text: str, key: str) -> tuple[int | None, int | None]:
    """Line and column (1-based) of the first assignment to the last part of ``key``."""
    name = key.rsplit(".", 1)[-1]
    pat = re.compile(rf"^\s*({re.escape(name)}|\"{re.escape(name)}\")\s*=")
    header = re.compile(rf"^\s*\[\s*{re.escape(key)}\s*\]")
    for i, line in enumerate(text.splitlines(), start=1):
        m = pat.match(line) or header.match(line)
        if m:
            return i, line.index(name) + 1
    return None, None


def _error(text: str, key: str, message: str) -> ConfigError:
    line, col = _locate(text, key)
    return ConfigError(message, key=key, line=line, column=col)


def _coerce(text: str, key: str, value, rule):
    kind, _ = rule
    if kind == _COMPLEX:
        if isinstance(value, bool):
            raise _error(text, key, f"{key}: expected a number or [re, im]")
        if isinstance(value, _NUM):
            return complex(value)
        if (isinstance(value, list) and len(value) == 2
                and all(isinstance(v, _NUM) and not isinstance(v, bool) for v in value)):
            return complex(value[0], value[1])
        raise _error(text, key, f"{key}: expected a number or [re, im], got {value!r}")
    if isinstance(kind, tuple) and all(isinstance(k, str) for k in kind):
        if value not in kind:
            raise _error(text, key, f"{key}: expected one of {list(kind)}, got {value!r}")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise _error(text, key, f"{key}: expected true or false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise _error(text, key, f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, kind):
        raise _error(text, key, f"{key}: expected a number, got {value!r}")
    return float(value)


def _section(text: str, data: dict, name: str) -> dict:
    schema = SCHEMA[name]
    raw = data
    for part in name.split("."):
        raw = raw.get(part, {}) if isinstance(raw, dict) else {}
    if not isinstance(raw, dict):
        raise _error(text, name, f"[{name}] must be a table")
    nested = {n.split(".", 1)[1] for n in SCHEMA if n.startswith(name + ".")}
    out = {}
    for key, value in raw.items():
        if key in nested:
            continue
        if key not in schema:
            raise _error(text, f"{name}.{key}", f"unknown key {name}.{key}")
        out[key] = _coerce(text, f"{name}.{key}", value, schema[key])
    for key, (_, default) in schema.items():
        if key not in out:
            if default is ...:
                raise _error(text, name, f"missing required key {name}.{key}")
            out[key] = default
    return out


@dataclass(frozen=True)
class RunManifest:
    kind: str
    config_path: Path | None
    out_dir: Path
    seed: int
    tolerance_overrides: dict = field(default_factory=dict)
    settings: dict = field(default_factory=dict)

    @property
    def tolerances(self) -> tolerances.Tolerances:
        return tolerances.DEFAULT.replace(**self.tolerance_overrides)


def parse_config(text: str) -> tuple[dict, dict]:
    """Parse and validate config text; returns (raw table, validated settings)."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+), column (\d+)", str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        raise ConfigError(f"syntax error: {exc}", key=None, line=line, column=col) from exc
    known_top = {"kind", "seed", "tolerances"} | {n.split(".")[0] for n in SCHEMA}
    for key in data:
        if key not in known_top:
            raise _error(text, key, f"unknown key {key}")
    kind = data.get("kind")
    if kind not in KINDS:
        raise _error(text, "kind", f"kind must be one of {list(KINDS)}, got {kind!r}")
    if "seed" in data and (isinstance(data["seed"], bool) or not isinstance(data["seed"], int)):
        raise _error(text, "seed", "seed must be an integer")
    tol = data.get("tolerances", {})
    valid = tolerances.DEFAULT.as_dict()
    for key, value in tol.items():
        if key not in valid:
            raise _error(text, f"tolerances.{key}", f"unknown tolerance tolerances.{key}")
        if isinstance(value, bool) or not isinstance(value, _NUM) or value <= 0:
            raise _error(text, f"tolerances.{key}", f"tolerances.{key} must be a positive number")
    section = SECTION_FOR_KIND[kind]
    if section not in data:
        raise _error(text, "kind", f"kind {kind!r} needs a [{section}] section")
    settings = {section: _section(text, data, section)}
    if section == "squid":
        sq = settings["squid"]
        if (sq["critical_current"] is None) == (sq["beta"] is None):
            raise _error(text, "squid", "give exactly one of squid.critical_current, squid.beta")
        if sq["beta"] is not None and sq["units"] == "si":
            raise _error(text, "squid.beta", "squid.beta is only accepted with units = 'reduced'")
        if (sq["phi_min"] is None) != (sq["phi_max"] is None):
            raise _error(text, "squid.phi_min", "give both squid.phi_min and squid.phi_max")
        for sub in ("squid.sweep", "squid.evolve"):
            if sub.split(".")[1] in data.get("squid", {}):
                settings[sub] = _section(text, data, sub)
        if kind == "squid-evolve" and "squid.evolve" not in settings:
            settings["squid.evolve"] = _section(text, {}, "squid.evolve")
    return data, settings


def parse_override(item: str) -> tuple[str, float]:
    """``KEY=VAL`` from the command line."""
    key, sep, value = item.partition("=")
    key = key.strip()
    if not sep or key not in tolerances.DEFAULT.as_dict():
        raise ConfigError(f"tolerance override must be KEY=VAL with a known key, got {item!r}",
                          key=key or None)
    try:
        v = float(value)
    except ValueError as exc:
        raise ConfigError(f"tolerance {key} needs a number, got {value!r}", key=key) from exc
    if not v > 0:
        raise ConfigError(f"tolerance {key} must be positive", key=key)
    return key, v


def load_manifest(path, out_dir, *, seed: int | None = None,
                  overrides: list[str] | tuple = ()) -> RunManifest:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    data, settings = parse_config(text)
    tol = {k: float(v) for k, v in data.get("tolerances", {}).items()}
    tol.update(dict(parse_override(o) for o in overrides))
    return RunManifest(kind=data["kind"], config_path=path, out_dir=Path(out_dir),
                       seed=int(data.get("seed", 0)) if seed is None else int(seed),
                       tolerance_overrides=tol, settings=settings)
