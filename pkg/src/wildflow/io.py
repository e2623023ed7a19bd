"""Run configuration, tabular outputs, field snapshots and manifests.

Configs are INI files read with :mod:`configparser`; every section is
flattened to ``section.key`` and values are typed by the caller's schema.
Snapshots are ``.npz`` archives holding the sampled components plus a
small JSON header.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import platform
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

import numpy as np

from .field import Field, Grid

__all__ = [
    "ConfigError",
    "Option",
    "read_config",
    "parse_options",
    "write_csv",
    "write_jsonl",
    "read_jsonl",
    "save_snapshot",
    "load_snapshot",
    "Manifest",
]

SNAPSHOT_VERSION = 1


class ConfigError(ValueError):
    """Configuration problem; ``key`` names the offending entry."""

    def __init__(self, key: str, msg: str):
        super().__init__(f"config key {key!r}: {msg}")
        self.key = key


def read_config(path: str | Path | None) -> dict[str, str]:
    """Flattened ``{section.key: raw string}``; keys of ``[run]`` are also given bare."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError("--config", f"file {p} does not exist")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read(p)
    except configparser.Error as exc:
        raise ConfigError("--config", f"cannot parse {p}: {exc}") from exc
    out = {}
    for sec in cp.sections():
        for k, v in cp.items(sec):
            out[f"{sec}.{k}"] = v
            if sec == "run":
                out[k] = v
    return out


def _to_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _to_fraction(s: str) -> Fraction:
    return Fraction(s.strip())


_PARSERS: dict[type, Callable[[str], Any]] = {int: int, float: float, str: str, bool: _to_bool, Fraction: _to_fraction}


@dataclass(frozen=True)
class Option:
    key: str
    kind: type
    default: Any = None
    required: bool = False
    check: Callable[[Any], bool] | None = None
    doc: str = ""


def parse_options(raw: Mapping[str, str], schema: Iterable[Option], allow_unknown: bool = False) -> dict[str, Any]:
    """Type-convert ``raw`` against ``schema``; errors name the key."""
    schema = list(schema)
    known = {o.key for o in schema}
    out = {}
    for o in schema:
        if o.key in raw:
            try:
                val = _PARSERS[o.kind](raw[o.key])
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigError(o.key, f"cannot read {raw[o.key]!r} as {o.kind.__name__}") from exc
        elif o.required:
            raise ConfigError(o.key, "required but missing")
        else:
            val = o.default
        if val is not None and o.check is not None and not o.check(val):
            raise ConfigError(o.key, f"value {val!r} is out of range")
        out[o.key] = val
    if not allow_unknown:
        extra = sorted(k for k in raw if k not in known and not (k.startswith("run.") and k[4:] in known))
        if extra:
            raise ConfigError(extra[0], "unknown key")
    return out


def _plain(v: Any) -> Any:
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def write_csv(rows: Iterable[Mapping[str, Any]], path: str | Path, columns: list[str] | None = None) -> Path:
    rows = list(rows)
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
    p = Path(path)
    with p.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(_plain(r.get(k, ""))) for k in columns})
    return p


def _fmt(v: Any) -> Any:
    # repr keeps every digit, so equal runs give identical files
    if isinstance(v, float):
        return repr(v)
    return v


def write_jsonl(records: Iterable[Mapping[str, Any]], path: str | Path) -> Path:
    p = Path(path)
    with p.open("w") as fh:
        for r in records:
            fh.write(json.dumps({k: _plain(v) for k, v in r.items()}, sort_keys=True) + "\n")
    return p


def read_jsonl(path: str | Path) -> list[dict]:
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


def save_snapshot(f: Field, path: str | Path, **meta: Any) -> Path:
    """Write samples and a JSON header (grid, rank, time, extra ``meta``)."""
    p = Path(path)
    if p.suffix != ".npz":
        p = p.with_suffix(".npz")
    head = {"version": SNAPSHOT_VERSION, "d": f.grid.d, "n": f.grid.n, "rank": f.rank, "t": f.t}
    head.update({k: _plain(v) for k, v in meta.items()})
    np.savez(p, values=np.ascontiguousarray(f.values), header=np.array(json.dumps(head, sort_keys=True)))
    return p


def load_snapshot(path: str | Path) -> tuple[Field, dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        head = json.loads(str(z["header"]))
        if head.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"snapshot version {head.get('version')} is not supported")
        f = Field(Grid(head["d"], head["n"]), head["rank"], z["values"].copy(), t=head["t"])
    return f, head


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class Manifest:
    """Everything needed to repeat a run: command, resolved options, outputs."""

    command: str
    options: dict
    seed: int | None
    files: list[str] = field(default_factory=list)
    status: str = "ok"
    notes: dict = field(default_factory=dict)

    def write(self, out_dir: str | Path) -> Path:
        from . import __version__

        out = Path(out_dir)
        entries = []
        for name in sorted(set(self.files)):
            p = out / name
            if p.is_file():
                entries.append({"path": name, "bytes": p.stat().st_size, "sha256": _sha256(p)})
        doc = {
            "command": self.command,
            "options": {k: _plain(v) for k, v in sorted(self.options.items())},
            "seed": self.seed,
            "status": self.status,
            "files": entries,
            "notes": {k: _plain(v) for k, v in self.notes.items()},
            "wildflow": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "platform": platform.platform(),
            "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        }
        p = out / "manifest.json"
        p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return p
