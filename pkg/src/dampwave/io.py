"""Result files: CSV tables, JSON reports and plot data, all written atomically."""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def format_number(x) -> str:
    """17 significant digits, '.' decimal; integers and strings pass through."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    if x is None:
        return ""
    v = float(x)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


def atomic_write(path: str | Path, text: str) -> Path:
    """Write ``text`` to a temporary file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, Path):
        return str(o)
    return str(o)


def to_json(obj, indent: int | None = None) -> str:
    return json.dumps(obj, sort_keys=True, default=_json_default, indent=indent, allow_nan=True)


def csv_text(header: Sequence[str], rows: Iterable[Sequence], meta: dict | None = None) -> str:
    lines = []
    if meta:
        for key in sorted(meta):
            lines.append(f"# {key}: {to_json(meta[key])}")
    lines.append(",".join(header))
    for row in rows:
        if len(row) != len(header):
            raise ValueError("row length does not match the header")
        lines.append(",".join(format_number(v) for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path, header, rows, meta: dict | None = None) -> Path:
    return atomic_write(path, csv_text(header, rows, meta))


def read_csv(path) -> tuple[dict, list[str], np.ndarray]:
    """Metadata, header and numeric body of a file written by :func:`write_csv`."""
    meta, header, body = {}, None, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition(": ")
                meta[key] = json.loads(val)
            elif header is None:
                header = line.split(",")
            elif line:
                body.append([float(v) for v in line.split(",")])
    return meta, header or [], np.array(body, dtype=float)


def write_json(path, obj) -> Path:
    return atomic_write(path, to_json(obj, indent=2) + "\n")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


_GNUPLOT_STUB = """# gnuplot script stub; no rendering is performed by dampwave
set datafile commentschars "#"
{plots}
"""


def emit_plot_data(curves: dict, out_dir, meta: dict | None = None) -> list[Path]:
    """Export each curve as a two-column ``.dat`` file plus ``plot.gp``.

    ``curves`` maps a name to ``(x_label, y_label, x, y)``.
    """
    out_dir = Path(out_dir)
    written = []
    plots = []
    for name in sorted(curves):
        xl, yl, x, y = curves[name]
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape != y.shape:
            raise ValueError(f"curve {name!r} has mismatched lengths")
        head = {"curve": name, "x": xl, "y": yl}
        if meta:
            head.update(meta)
        lines = [f"# {k}: {to_json(head[k])}" for k in sorted(head)]
        lines += [f"{format_number(a)} {format_number(b)}" for a, b in zip(x, y)]
        p = atomic_write(out_dir / f"{name}.dat", "\n".join(lines) + "\n")
        written.append(p)
        plots.append(f'set xlabel "{xl}"; set ylabel "{yl}"\nplot "{name}.dat" using 1:2 with linespoints title "{name}"')
    if written:
        written.append(atomic_write(out_dir / "plot.gp", _GNUPLOT_STUB.format(plots="\n".join(plots))))
    return written
