"""Self-describing output files: CSV with a commented header, JSON lines, manifest."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
from pathlib import Path

MANIFEST_VERSION = 1


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def header_lines(config):
    from . import __version__
    return [f"lorentzgas {__version__}",
            "config " + json.dumps(config, sort_keys=True, separators=(",", ":")),
            f"config_hash {config_hash(config)}"]


def _cell(x):
    if isinstance(x, bool):
        return int(x)
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    if x is None:
        return ""
    return x


def write_csv(path, columns, rows, config):
    """Rows are dicts; missing keys become empty cells."""
    with open(path, "w", newline="") as fh:
        for line in header_lines(config):
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if hasattr(x, "item") and not isinstance(x, (str, bytes)):
        return _clean(x.item())
    return x


def write_jsonl(path, records, config):
    """First line is ``{"header": ...}``; non-finite numbers are written as null."""
    with open(path, "w") as fh:
        head = {"header": {"config": config, "config_hash": config_hash(config)}}
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(_clean(rec), sort_keys=True, allow_nan=False) + "\n")


def read_jsonl(path):
    lines = Path(path).read_text().splitlines()
    return json.loads(lines[0])["header"], [json.loads(x) for x in lines[1:]]


def read_csv(path):
    """``(header_lines, rows)`` of a CSV written by :func:`write_csv`."""
    head, body = [], []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                head.append(line[2:].rstrip("\n"))
            else:
                body.append(line)
    return head, list(csv.DictReader(body))


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def versions():
    import numba
    import numpy
    import scipy

    from . import __version__
    return {"lorentzgas": __version__, "python": platform.python_version(),
            "numpy": numpy.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def write_manifest(outdir, config, seeds, files, wall_time):
    """``manifest.json``; ``wall_time_s`` is the only field that varies between runs."""
    outdir = Path(outdir)
    man = {"manifest_version": MANIFEST_VERSION, "experiment": config.get("experiment"),
           "config": config, "config_hash": config_hash(config), "seeds": seeds,
           "versions": versions(), "wall_time_s": round(float(wall_time), 3),
           "files": {f: file_digest(outdir / f) for f in sorted(files)}}
    (outdir / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return man
