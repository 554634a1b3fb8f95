"""Curve statistics, aggregate scores and model cards.

All statistics work on normalized scores. Undefined values raise
:class:`UndefinedMetric` from the low-level functions; the model card turns
them into ``None`` and renders them as ``n/a``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .engine import OFFLINE, ONLINE, EvalPoint, LearningCurve
from .errors import InputError, UndefinedMetric

CurveSet = Union[LearningCurve, Sequence[LearningCurve]]


def average_curves(curves: CurveSet) -> LearningCurve:
    """Pointwise mean of seed curves that share one evaluation grid."""
    if isinstance(curves, LearningCurve):
        return curves
    curves = list(curves)
    if not curves:
        raise InputError("no curves to average")
    if len(curves) == 1:
        return curves[0]
    grid = [(p.data_count, p.grad_steps, p.phase) for p in curves[0].points]
    for c in curves[1:]:
        if [(p.data_count, p.grad_steps, p.phase) for p in c.points] != grid:
            raise InputError("seed curves do not share an evaluation grid")
        if c.dataset_size != curves[0].dataset_size:
            raise InputError("seed curves come from datasets of different sizes")
    raw = np.mean([[p.raw_score for p in c.points] for c in curves], axis=0)
    norm = np.mean([[p.norm_score for p in c.points] for c in curves], axis=0)
    points = [EvalPoint(d, g, float(r), float(s), ph) for (d, g, ph), r, s in zip(grid, raw, norm)]
    first = curves[0]
    return LearningCurve(first.run_id, -1, points, first.dataset_size, list(first.segments))


def perf_at(curves: CurveSet, fraction: float) -> float:
    """Normalized score of the last offline point with data_count <= fraction * |D|."""
    if not 0.0 < fraction <= 1.0:
        raise InputError(f"fraction must lie in (0, 1], got {fraction}")
    curve = average_curves(curves)
    if not curve.points:
        raise InputError("empty curve")
    limit = fraction * curve.dataset_size
    eligible = [p for p in curve.offline_points if p.data_count <= limit]
    if not eligible:
        raise UndefinedMetric(f"no offline evaluation at or below {limit:g} transitions")
    return eligible[-1].norm_score


def finetune_uplift(curves: CurveSet) -> float:
    """Final online score minus final offline score (negative when fine-tuning hurts)."""
    curve = average_curves(curves)
    offline, online = curve.offline_points, curve.online_points
    if not online:
        raise UndefinedMetric("curve has no online phase")
    if not offline:
        raise UndefinedMetric("curve has no offline phase")
    return online[-1].norm_score - offline[-1].norm_score


def iqm(scores) -> float:
    """Mean of the sorted scores after dropping floor(n/4) from each end."""
    x = np.sort(np.asarray(scores, dtype=float))
    if x.size == 0:
        raise InputError("iqm of an empty list")
    cut = x.size // 4
    return float(x[cut: x.size - cut].mean())


def optimality_gap(scores, threshold: float = 100.0) -> float:
    x = np.asarray(scores, dtype=float)
    if x.size == 0:
        raise InputError("optimality_gap of an empty list")
    return float(np.maximum(threshold - x, 0.0).mean())


@dataclass
class AggregateReport:
    mean: float
    median: float
    iqm: float
    optimality_gap: float
    n: int

    @classmethod
    def of(cls, scores) -> "AggregateReport":
        x = np.asarray(list(scores), dtype=float)
        if x.size == 0:
            raise InputError("no scores to aggregate")
        return cls(float(x.mean()), float(np.median(x)), iqm(x), optimality_gap(x), int(x.size))


@dataclass
class DatasetCard:
    perf50: Optional[float]
    perf100: Optional[float]
    ratio: Optional[float]      # perf50 / perf100; None when perf100 == 0 or either is undefined
    diff: Optional[float]       # perf100 - perf50
    uplift: Optional[float]
    n_seeds: int


@dataclass
class ModelCard:
    algorithm: str
    datasets: dict = field(default_factory=dict)      # name -> DatasetCard
    aggregates: Optional[AggregateReport] = None      # over perf100 of each dataset
    perf50_aggregates: Optional[AggregateReport] = None
    note: str = "point estimates only; no confidence intervals"

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "datasets": {k: asdict(v) for k, v in sorted(self.datasets.items())},
            "aggregates": asdict(self.aggregates) if self.aggregates else None,
            "perf50_aggregates": asdict(self.perf50_aggregates) if self.perf50_aggregates else None,
            "note": self.note,
        }


def _maybe(fn, *args):
    try:
        return fn(*args)
    except UndefinedMetric:
        return None


def build_model_card(algorithm: str, curves_by_dataset: dict) -> ModelCard:
    """Card from ``{dataset name: [seed curves]}``; each dataset needs at least one curve."""
    card = ModelCard(algorithm)
    for name, curves in sorted(curves_by_dataset.items()):
        if isinstance(curves, LearningCurve):
            curves = [curves]
        if not curves:
            raise InputError(f"dataset {name!r} has no curves")
        mean_curve = average_curves(curves)
        p50 = _maybe(perf_at, mean_curve, 0.5)
        p100 = _maybe(perf_at, mean_curve, 1.0)
        ratio = p50 / p100 if p50 is not None and p100 is not None and p100 != 0 else None
        diff = p100 - p50 if p50 is not None and p100 is not None else None
        card.datasets[name] = DatasetCard(p50, p100, ratio, diff, _maybe(finetune_uplift, mean_curve),
                                          len(curves))
    finals = [d.perf100 for d in card.datasets.values() if d.perf100 is not None]
    halves = [d.perf50 for d in card.datasets.values() if d.perf50 is not None]
    card.aggregates = AggregateReport.of(finals) if finals else None
    card.perf50_aggregates = AggregateReport.of(halves) if halves else None
    return card


def fmt(value: Optional[float], digits: int = 2) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "n/a"
    return f"{value:.{digits}f}"


def model_card_markdown(card: ModelCard) -> str:
    rows = sorted(card.datasets.items())
    lines = [f"# Model card: {card.algorithm}", "",
             "| dataset | seeds | Perf@50% | Perf@100% | Perf@50%/Perf@100% | Perf@100% - Perf@50% | fine-tuning uplift |",
             "|---|---|---|---|---|---|---|"]
    for name, d in rows:
        lines.append(f"| {name} | {d.n_seeds} | {fmt(d.perf50)} | {fmt(d.perf100)} | {fmt(d.ratio, 3)} "
                     f"| {fmt(d.diff)} | {fmt(d.uplift)} |")
    lines += ["", "## Aggregates", "",
              "| scores | mean | median | IQM | optimality gap | n |", "|---|---|---|---|---|---|"]
    for label, agg in (("Perf@100%", card.aggregates), ("Perf@50%", card.perf50_aggregates)):
        if agg is None:
            lines.append(f"| {label} | n/a | n/a | n/a | n/a | 0 |")
        else:
            lines.append(f"| {label} | {fmt(agg.mean)} | {fmt(agg.median)} | {fmt(agg.iqm)} "
                         f"| {fmt(agg.optimality_gap)} | {agg.n} |")
    lines += ["", f"_{card.note}._", ""]
    return "\n".join(lines)


def write_model_card(card: ModelCard, stem) -> tuple:
    """Write ``<stem>.json`` and ``<stem>.md``; returns both paths."""
    from .curves import atomic_write_text

    json_path, md_path = f"{stem}.json", f"{stem}.md"
    atomic_write_text(json_path, json.dumps(card.to_dict(), indent=2, sort_keys=True) + "\n")
    atomic_write_text(md_path, model_card_markdown(card))
    return json_path, md_path


__all__ = ["AggregateReport", "DatasetCard", "ModelCard", "average_curves", "build_model_card",
           "finetune_uplift", "iqm", "model_card_markdown", "optimality_gap", "perf_at",
           "write_model_card", "OFFLINE", "ONLINE"]
