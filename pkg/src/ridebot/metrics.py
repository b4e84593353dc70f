"""Per-trial speed-tracking metrics and mean (SD) summaries."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

ONSET_SPEED = 0.02


class WindowOutOfRange(ValueError):
    pass


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class TrialMetrics:
    max_abs_lean: float  # deg
    max_abs_tilt: float  # deg
    max_abs_speed: float  # m/s
    rmse_paper: float
    rmse_standard: float  # rad/s
    n_samples: int = 0

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls) if f.name != "n_samples"]


def _window(t, t0, tf):
    if not t0 < tf:
        raise WindowOutOfRange(f"window start {t0!r} must precede end {tf!r}")
    eps = 1e-9 * max(1.0, abs(tf))
    if t0 < t[0] - eps or tf > t[-1] + eps:
        raise WindowOutOfRange(f"window [{t0!r}, {tf!r}] outside log span [{t[0]!r}, {t[-1]!r}]")
    return (t >= t0 - eps) & (t <= tf + eps)


def trial_metrics(log, t0: float | None = None, tf: float | None = None) -> TrialMetrics:
    """Max-absolute statistics and command-speed RMSE over ``[t0, tf]``.

    ``rmse_paper`` is ``sqrt(sum(e^2)) / (tf - t0)`` over the logged samples,
    which depends on the sample rate; ``rmse_standard`` is the usual root mean
    square.  ``log`` is anything indexable by column name.
    """
    t = np.asarray(log["t"], float)
    t0 = float(t[0]) if t0 is None else float(t0)
    tf = float(t[-1]) if tf is None else float(tf)
    sel = _window(t, t0, tf)
    n = int(sel.sum())
    if n == 0:
        raise WindowOutOfRange("window contains no samples")
    err = np.asarray(log["phi_dot_c"], float)[sel] - np.asarray(log["phi_dot"], float)[sel]
    sq = float(np.sum(err * err))
    return TrialMetrics(
        max_abs_lean=math.degrees(float(np.max(np.abs(np.asarray(log["zeta"])[sel])))),
        max_abs_tilt=math.degrees(float(np.max(np.abs(np.asarray(log["theta"])[sel])))),
        max_abs_speed=float(np.max(np.abs(np.asarray(log["v"])[sel]))),
        rmse_paper=math.sqrt(sq) / (tf - t0),
        rmse_standard=math.sqrt(sq / n),
        n_samples=n,
    )


def motion_onset(log, threshold: float = ONSET_SPEED) -> float | None:
    """First time ``|v|`` exceeds ``threshold``, or ``None``."""
    idx = np.flatnonzero(np.abs(np.asarray(log["v"])) > threshold)
    return float(log["t"][idx[0]]) if idx.size else None


@dataclass(frozen=True)
class Summary:
    mean: dict
    sd: dict
    n: int

    def cell(self, name: str, digits: int = 1, scale: float = 1.0) -> str:
        return f"{self.mean[name] * scale:.{digits}f} ({self.sd[name] * scale:.{digits}f})"


def summarize(trials: Sequence[TrialMetrics]) -> Summary:
    if not trials:
        raise EmptyInput("no trials to summarize")
    names = TrialMetrics.field_names()
    data = np.array([[getattr(tr, f) for f in names] for tr in trials], float)
    mean = data.mean(axis=0)
    sd = data.std(axis=0, ddof=1) if len(trials) > 1 else np.zeros(len(names))
    return Summary(dict(zip(names, mean.tolist())), dict(zip(names, sd.tolist())), len(trials))


# Table-II style rows: (label, field, digits, scale)
TABLE_ROWS = (
    ("max|zeta| (deg)", "max_abs_lean", 1, 1.0),
    ("max|theta| (deg)", "max_abs_tilt", 1, 1.0),
    ("max|v| (m/s)", "max_abs_speed", 2, 1.0),
    ("RMSE (E-3)", "rmse_paper", 2, 1e3),
    ("RMSE std (rad/s)", "rmse_standard", 3, 1.0),
)


def format_table(summaries: dict[str, Summary], ratios: bool = False) -> str:
    """Aligned text table, one column per labelled summary.

    With ``ratios`` a ratio row (column / first column of means) follows each metric.
    """
    labels = list(summaries)
    rows = [["Controller", *labels]]
    for label, name, digits, scale in TABLE_ROWS:
        rows.append([label, *(summaries[k].cell(name, digits, scale) for k in labels)])
        if ratios and len(labels) > 1:
            ref = summaries[labels[0]].mean[name]
            rows.append(
                ["  ratio", *(f"{summaries[k].mean[name] / ref:.3f}" if ref else "nan" for k in labels)]
            )
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"


def summary_csv(summaries: dict[str, Summary]) -> str:
    names = TrialMetrics.field_names()
    lines = ["label,n," + ",".join(f"{n}_mean,{n}_sd" for n in names)]
    for label, s in summaries.items():
        vals = ",".join(f"{s.mean[n]!r},{s.sd[n]!r}" for n in names)
        lines.append(f"{label},{s.n},{vals}")
    return "\n".join(lines) + "\n"
