"""Run outputs: metrics CSV files and PGM image grids."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

METRIC_COLUMNS = ("epoch", "objective", "bound_mean", "train_error", "lr")


def _fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))  # shortest round-trip form


def write_csv(rows, path, columns):
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def emit_metrics(rows, path):
    write_csv(rows, path, METRIC_COLUMNS)


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in reader]


def write_pgm_grid(images, side, cols, path):
    """Tile ``(n, side*side)`` images row-major onto one binary PGM (P5).

    Tiles are separated by 1-pixel black lines; pixel values are clamped to
    [0, 1] and quantised as ``round(255 * p)``.
    """
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    n, D = images.shape
    if n < 1:
        raise ValueError("need at least one image")
    if D != side * side:
        raise ValueError(f"image width {D} is not {side}x{side}")
    cols = max(1, min(int(cols), n))
    rows = -(-n // cols)
    height = rows * side + (rows - 1)
    width = cols * side + (cols - 1)
    canvas = np.zeros((height, width), dtype=np.uint8)
    pix = np.rint(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8).reshape(n, side, side)
    for i in range(n):
        r, c = divmod(i, cols)
        top, left = r * (side + 1), c * (side + 1)
        canvas[top:top + side, left:left + side] = pix[i]
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
            fh.write(canvas.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return canvas
