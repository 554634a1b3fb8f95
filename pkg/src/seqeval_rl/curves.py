"""Learning-curve files.

Format (comma-separated text)::

    # seqeval-curve v1
    # config={...resolved run config as sorted JSON...}
    # seed=<seed>
    # dataset_size=<|D|>
    # segments=label:start:end;label:start:end
    data_count,grad_steps,phase,raw_score,norm_score,seed
    <one row per evaluation point>

Points stream to ``<path>.partial`` as they are produced (flushed per row);
``close()`` renames the file into place, so a finished file is never
half-written and an interrupted run leaves its partial curve behind.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .dataset import Segment
from .engine import EvalPoint, LearningCurve
from .errors import DatasetFormatError

MAGIC = "# seqeval-curve v1"
COLUMNS = ("data_count", "grad_steps", "phase", "raw_score", "norm_score", "seed")


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _row(point: EvalPoint, seed: int) -> str:
    return f"{point.data_count},{point.grad_steps},{point.phase},{point.raw_score!r},{point.norm_score!r},{seed}\n"


class CurveWriter:
    def __init__(self, path, config: dict, seed: int, dataset_size: int, segments=()):
        self.path = Path(path)
        self.partial = self.path.with_name(self.path.name + ".partial")
        self.seed = seed
        self._fh = open(self.partial, "w", newline="\n")
        seg = ";".join(f"{s.label}:{s.start}:{s.end}" for s in segments)
        self._fh.write(f"{MAGIC}\n# config={json.dumps(config, sort_keys=True, default=_jsonable)}\n"
                       f"# seed={seed}\n# dataset_size={dataset_size}\n# segments={seg}\n"
                       + ",".join(COLUMNS) + "\n")
        self._fh.flush()

    def write(self, point: EvalPoint) -> None:
        self._fh.write(_row(point, self.seed))
        self._fh.flush()

    def close(self) -> Path:
        self._fh.close()
        os.replace(self.partial, self.path)
        return self.path

    def abort(self) -> None:
        """Close without publishing; the ``.partial`` file stays for inspection."""
        self._fh.close()


def _jsonable(obj):
    if hasattr(obj, "item"):
        return obj.item()
    if hasattr(obj, "tolist"):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def write_curve(path, curve: LearningCurve, config: dict) -> Path:
    w = CurveWriter(path, config, curve.seed, curve.dataset_size, curve.segments)
    for p in curve.points:
        w.write(p)
    return w.close()


def read_curve(path) -> tuple:
    """Returns ``(LearningCurve, config dict)``."""
    header, rows = {}, []
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != MAGIC:
        raise DatasetFormatError(f"{path}: not a curve file", record=0)
    i = 1
    while i < len(lines) and lines[i].startswith("# "):
        key, _, value = lines[i][2:].partition("=")
        header[key] = value
        i += 1
    if i >= len(lines) or tuple(lines[i].split(",")) != COLUMNS:
        raise DatasetFormatError(f"{path}: missing column line", record=0)
    for k, line in enumerate(lines[i + 1:]):
        f = line.split(",")
        if len(f) != len(COLUMNS):
            raise DatasetFormatError(f"{path}: row {k} has {len(f)} fields", record=k)
        rows.append(EvalPoint(int(f[0]), int(f[1]), float(f[3]), float(f[4]), f[2]))
    segments = []
    for part in filter(None, header.get("segments", "").split(";")):
        label, start, end = part.rsplit(":", 2)
        segments.append(Segment(label, int(start), int(end)))
    config = json.loads(header.get("config", "{}"))
    curve = LearningCurve(config.get("run_id", ""), int(header.get("seed", 0)), rows,
                          int(header.get("dataset_size", 0)), segments)
    return curve, config
