"""ROC curves, AUC, and report files (SVG plot, CSV tables, JSON summary)."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["EvalError", "RocCurve", "auc_pairwise", "emit_report", "read_curve_table", "roc_curve"]


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class RocCurve:
    """ROC points ordered by decreasing threshold.

    The first point has threshold ``+inf`` and sits at ``(0, 0)``; the last
    reaches ``(1, 1)``. A sample is predicted anomalous when its score is
    ``>= threshold``.
    """

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray

    @property
    def auc(self) -> float:
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise EvalError(f"{s.size} scores but {y.size} labels")
    if not np.all(np.isin(y, (-1, 1))):
        raise EvalError("labels must be -1 or +1")
    if not np.all(np.isfinite(s)):
        raise EvalError("scores must be finite")
    if not (np.any(y == 1) and np.any(y == -1)):
        raise EvalError("both classes are needed for a ROC curve")
    return s, y


def roc_curve(scores: Sequence[float], labels: Sequence[int]) -> RocCurve:
    """Sweep every distinct score as a threshold; tied scores move together."""
    s, y = _validate(scores, labels)
    order = np.argsort(-s, kind="mergesort")
    s, pos = s[order], (y[order] == 1)
    # last index of each tie group
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(pos)[ends]
    fp = (ends + 1) - tp
    n_pos, n_neg = pos.sum(), (~pos).sum()
    thresholds = np.r_[np.inf, s[ends]]
    return RocCurve(thresholds, np.r_[0.0, fp / n_neg], np.r_[0.0, tp / n_pos])


def auc_pairwise(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Share of (anomaly, nominal) pairs ranked correctly; ties count one half."""
    s, y = _validate(scores, labels)
    pos, neg = s[y == 1], s[y == -1]
    concordant = 0.0
    for a in pos:
        for b in neg:
            if a > b:
                concordant += 1.0
            elif a == b:
                concordant += 0.5
    return concordant / (len(pos) * len(neg))


# ------------------------------------------------------------------- reports
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


def _svg(curves: Mapping[str, RocCurve], title: str) -> str:
    W, H, L, T, S = 460, 460, 60, 40, 360  # canvas, left/top margins, plot side
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
           'font-family="sans-serif" font-size="12">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{L + S / 2}" y="{T - 15}" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<rect x="{L}" y="{T}" width="{S}" height="{S}" fill="none" stroke="black"/>',
           f'<line x1="{L}" y1="{T + S}" x2="{L + S}" y2="{T}" stroke="#999" stroke-dasharray="4 4"/>']
    for i in range(6):
        v = i / 5
        x, y = L + v * S, T + S - v * S
        out.append(f'<text x="{x:.1f}" y="{T + S + 16}" text-anchor="middle">{v:.1f}</text>')
        out.append(f'<text x="{L - 8}" y="{y + 4:.1f}" text-anchor="end">{v:.1f}</text>')
    out.append(f'<text x="{L + S / 2}" y="{T + S + 36}" text-anchor="middle">False positive rate</text>')
    out.append(f'<text x="18" y="{T + S / 2}" text-anchor="middle" '
               f'transform="rotate(-90 18 {T + S / 2})">True positive rate</text>')
    for i, (name, curve) in enumerate(curves.items()):
        color = _COLORS[i % len(_COLORS)]
        pts = " ".join(f"{L + f * S:.2f},{T + S - t * S:.2f}" for f, t in zip(curve.fpr, curve.tpr))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = T + S - 20 - 18 * (len(curves) - 1 - i)
        out.append(f'<line x1="{L + S - 150}" y1="{ly}" x2="{L + S - 130}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{L + S - 125}" y="{ly + 4}">{escape(name)} (AUC {curve.auc:.3f})</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def emit_report(curves: Mapping[str, RocCurve], path: str | os.PathLike, *, title: str = "ROC",
                stem: str = "roc", header: Mapping | None = None) -> dict[str, Path]:
    """Write ``<stem>.svg``, one ``<stem>_<name>.csv`` per curve and ``<stem>_summary.json``.

    Args:
        curves: Curve per model name; one trace each in the plot.
        path: Output directory (created if needed).
        title: Plot title.
        stem: File name prefix.
        header: Extra entries for the summary file.

    Returns:
        Paths of the written files keyed by ``"plot"``, ``"summary"`` and
        each curve name.
    """
    if not curves:
        raise EvalError("no curves to report")
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = {"plot": out / f"{stem}.svg", "summary": out / f"{stem}_summary.json"}
        written["plot"].write_text(_svg(curves, title))
        for name, curve in curves.items():
            p = out / f"{stem}_{_safe(name)}.csv"
            with p.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["threshold", "fpr", "tpr"])
                for th, f, t in curve.points():
                    w.writerow([repr(th), repr(f), repr(t)])
            written[name] = p
        summary = {"auc": {name: c.auc for name, c in curves.items()},
                   "tables": {name: written[name].name for name in curves}}
        if header:
            summary.update(header)
        written["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise EvalError(f"cannot write report to {out}: {exc.strerror}") from None
    return written


def read_curve_table(path: str | os.PathLike) -> RocCurve:
    """Load a curve written by :func:`emit_report`."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["threshold", "fpr", "tpr"]:
        raise EvalError(f"{path}: missing header threshold,fpr,tpr")
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    if data.size == 0 or not math.isinf(data[0, 0]):
        raise EvalError(f"{path}: malformed curve table")
    return RocCurve(data[:, 0], data[:, 1], data[:, 2])
