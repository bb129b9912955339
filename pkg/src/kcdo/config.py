"""Run configuration: INI-style ``key = value`` files with one section per
command. Unknown sections and keys are rejected.
"""

from __future__ import annotations

import configparser
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

__all__ = ["ConfigError", "RunConfig", "load_config", "SCHEMA", "parse_bounds", "jsonable"]


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


def _int(lo=None):
    def parse(s):
        v = int(s)
        if lo is not None and v < lo:
            raise ValueError(f"must be >= {lo}")
        return v
    return parse


def _float(lo=None, hi=None, open_lo=True):
    def parse(s):
        v = float(s)
        if lo is not None and (v <= lo if open_lo else v < lo):
            raise ValueError(f"must be > {lo}" if open_lo else f"must be >= {lo}")
        if hi is not None and v >= hi:
            raise ValueError(f"must be < {hi}")
        return v
    return parse


def _choice(*options):
    def parse(s):
        s = s.strip().lower()
        if s not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return s
    return parse


def _list(item):
    def parse(s):
        vals = [item(p) for p in s.replace(" ", "").split(",") if p]
        if not vals:
            raise ValueError("empty list")
        return vals
    return parse


def _or_keyword(keyword, parser):
    def parse(s):
        return keyword if s.strip().lower() == keyword else parser(s)
    return parse


def parse_bounds(s: str) -> list[list[float]]:
    """``"lo,hi; lo,hi"`` -> ``[[lo, hi], [lo, hi]]``."""
    out = []
    for part in s.split(";"):
        lo, hi = (float(v) for v in part.split(","))
        if not hi > lo:
            raise ValueError("every upper bound must exceed its lower bound")
        out.append([lo, hi])
    return out


_bandwidth = _or_keyword("median", _float(0.0))
_alpha = _or_keyword("schedule", _float(0.0))
_family = _choice("gaussian", "laplace", "product")
_a = _float(0.0, 0.5)
_cp = _float(0.0, 1.0)

# key -> (parser, default); a default of None marks a required key.
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "donut": {
        "n_means": (_int(1), 50),
        "ladder": (_list(_int(1)), [100, 400, 900, 2500]),
        "noise_std": (_float(0.0), 0.2),
        "rotation_deg": (float, 10.0),
        "slices": (_list(float), [0.0, 1.0]),
        "export_slices": (_list(float), [0.0, 1.0]),
        "n_seeds": (_int(1), 10),
        "input_kernel": (_family, "laplace"),
        "output_kernel": (_family, "gaussian"),
        "input_bandwidth": (_bandwidth, "median"),
        "output_bandwidth": (_bandwidth, "median"),
        "a": (_a, 0.49),
        "b": (_a, 0.49),
        "c_prime": (_cp, 0.99999),
        "eval_side": (_int(2), 100),
        "seed": (_int(0), 0),
    },
    "fit": {
        "input_kernel": (_family, "laplace"),
        "output_kernel": (_family, "gaussian"),
        "input_bandwidth": (_bandwidth, "median"),
        "output_bandwidth": (_bandwidth, "median"),
        "alpha": (_alpha, "schedule"),
        "alpha_out": (_alpha, "schedule"),
        "a": (_a, 0.49),
        "b": (_a, 0.49),
        "c_prime": (_cp, 0.99999),
        "bounds": (_or_keyword("auto", parse_bounds), "auto"),
        "m": (_or_keyword("auto", _int(1)), "auto"),
        "mode": (_choice("grid", "iid_uniform"), "grid"),
        "grouped": (_choice("auto", "yes", "no"), "auto"),
        "seed": (_int(0), 0),
    },
    "predict": {
        "n_samples": (_int(0), 0),
        "seed": (_int(0), 0),
    },
    "bound-check": {
        "ladder_n": (_list(_int(1)), [1000, 10000]),
        "ladder_m": (_list(_int(1)), [1000, 10000]),
        "trials": (_int(1), 200),
        "a": (_a, 0.25),
        "b": (_a, 0.25),
        "c_prime": (_cp, 0.99999),
        "alpha": (_alpha, "schedule"),
        "sigma": (_float(0.0), 0.2),
        "m0": (_int(1), 100_000),
        "n_basis": (_int(2), 60),
        "seed": (_int(0), 0),
    },
    "reconstruct": {
        "kernel": (_choice("gaussian", "laplace"), "gaussian"),
        "bandwidth": (_bandwidth, "median"),
        "bounds": (parse_bounds, None),
        "m": (_int(1), None),
        "mode": (_choice("grid", "iid_uniform"), "grid"),
        "alpha": (_alpha, "schedule"),
        "a": (_a, 0.49),
        "b": (_a, 0.49),
        "c_prime": (_cp, 0.99999),
        "method": (_choice("restricted", "representer"), "restricted"),
        "normalization": (_choice("reference", "kernel"), "reference"),
        "seed": (_int(0), 0),
    },
}


@dataclass
class RunConfig:
    """Resolved settings of one command.

    ``values`` starts as the parsed section; commands add the quantities
    they resolve at run time (bandwidths, regularisation, grid sizes) to
    ``resolved`` so that every output records exactly what was run.
    """

    command: str
    values: dict
    resolved: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def to_dict(self) -> dict:
        return {"command": self.command, "values": self.values, "resolved": self.resolved}

    def to_json(self) -> str:
        return json.dumps(jsonable(self.to_dict()), sort_keys=True, separators=(",", ":"))


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, float) and obj != obj:
        return "nan"
    if isinstance(obj, float) and obj in (float("inf"), float("-inf")):
        return "inf" if obj > 0 else "-inf"
    if hasattr(obj, "item"):
        return jsonable(obj.item())
    return obj


def load_config(path, command: str, seed: int | None = None) -> RunConfig:
    """Parse ``path`` and return the settings of ``command``.

    A missing file section means "all defaults". ``seed`` overrides the
    section's ``seed`` key.
    """
    if command not in SCHEMA:
        raise ConfigError(f"unknown command {command!r}")
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            parser.read_string(p.read_text(encoding="utf-8"), source=str(p))
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        unknown = set(parser[section]) - set(SCHEMA[section])
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    raw = parser[command] if parser.has_section(command) else {}
    values = {}
    for key, (parse, default) in SCHEMA[command].items():
        if key in raw:
            try:
                values[key] = parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"[{command}] {key} = {raw[key]!r}: {exc}") from exc
        elif default is None:
            raise ConfigError(f"[{command}] missing required key {key!r}")
        else:
            values[key] = default
    if seed is not None:
        if seed < 0 or seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        values["seed"] = int(seed)
    return RunConfig(command, values)
