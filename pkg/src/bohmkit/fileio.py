"""Plain-text columnar outputs and wavefunction snapshots.

Every file starts with '#'-prefixed header lines carrying the config hash and
the unit system, followed by a typed header row of name:type fields and then
the data rows.  Floats are written with repr (shortest round-trip form), so
identical inputs give byte-identical files.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .wavefield import Grid, Wavefunction


def _fmt(value, kind):
    if kind == "int":
        return str(int(value))
    if kind == "float":
        return repr(float(value))
    if kind == "bool":
        return "1" if value else "0"
    return str(value)


def write_table(path, columns, config_hash="", units="natural",
                extra_header=()):
    """columns: sequence of (name, type, values); types int|float|bool|str."""
    names = [f"{name}:{kind}" for name, kind, _ in columns]
    rows = {len(vals) for _, _, vals in columns}
    if len(rows) != 1:
        raise ConfigurationError("table columns differ in length")
    n = rows.pop()
    lines = [f"# config_hash={config_hash}", f"# units={units}"]
    lines += [f"# {h}" for h in extra_header]
    lines.append(",".join(names))
    cols = [(kind, np.asarray(vals)) for _, kind, vals in columns]
    for i in range(n):
        lines.append(",".join(_fmt(vals[i], kind) for kind, vals in cols))
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def read_table(path):
    """Returns (header dict, column names, dict of numpy columns)."""
    header = {}
    names = None
    raw = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, val = body.partition("=")
                header[key.strip()] = val.strip()
            continue
        if names is None:
            names = [tuple(tok.split(":")) for tok in line.split(",")]
            continue
        raw.append(line.split(","))
    if names is None:
        raise ConfigurationError(f"{path} has no header row")
    out = {}
    casts = {"int": int, "float": float, "bool": lambda s: s == "1",
             "str": str}
    for j, (name, kind) in enumerate(names):
        cast = casts[kind]
        out[name] = np.asarray([cast(r[j]) for r in raw])
    return header, [n for n, _ in names], out


def write_snapshot(psi, path, config_hash="", units="natural"):
    """Columnar wavefunction snapshot: grid spec header, then index,re,im."""
    axes = ";".join(f"{ax.lo!r},{ax.hi!r},{ax.points}"
                    for ax in psi.grid.axes)
    flat = psi.amplitudes.ravel()
    return write_table(
        path,
        [("index", "int", np.arange(flat.size)),
         ("re", "float", flat.real),
         ("im", "float", flat.imag)],
        config_hash, units,
        extra_header=[f"grid={axes}", f"time={psi.time!r}",
                      f"normalized={int(psi.normalized)}"])


def read_snapshot(path):
    header, _, cols = read_table(path)
    axes = []
    for part in header["grid"].split(";"):
        lo, hi, pts = part.split(",")
        axes.append((float(lo), float(hi), int(pts)))
    if len(axes) == 1:
        grid = Grid.line(*axes[0])
    else:
        grid = Grid.box(axes[0], axes[1])
    amps = (cols["re"] + 1j * cols["im"]).reshape(grid.shape)
    return Wavefunction(grid, amps, time=float(header["time"]),
                        normalized=header.get("normalized", "1") == "1")


def sha256_of(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash_of(text):
    """Hash of the normalized config text (stripped lines, no blanks)."""
    lines = [ln.strip() for ln in text.splitlines()]
    body = "\n".join(ln for ln in lines if ln and not ln.startswith(("#", ";")))
    return hashlib.sha256(body.encode()).hexdigest()[:16]


def write_report(path, report):
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
