"""CSV tables and dependency-free SVG plots for experiment results."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from .core import WeatherState
from .evaluate import IDENTITY, EvaluationRecord, gain_table, weather_breakdown
from .util import atomic_write_text

GAIN_COLUMNS = ("cluster", "model", "mean_gain_pct", "improved_count", "test_count")
BREAKDOWN_COLUMNS = ("model", "state", "mean_gain_pct", "std_gain_pct", "n_voyages")
RECORD_COLUMNS = ("voyage_id", "cluster", "model", "eff_meas", "eff_pred", "gain_pct",
                  "weather_state", "constrained_flag")

PALETTE = ("#000000", "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _num(x: Optional[float]) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format(float(x), ".10g")


def _exact(x: Optional[float]) -> str:
    # shortest round-trip form, so tables rebuilt from records.csv match the originals
    return "" if x is None else repr(float(x))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def gain_table_csv(records: Sequence[EvaluationRecord]) -> str:
    if not records:
        return _csv_text(GAIN_COLUMNS, [])
    t = gain_table(records)
    rows = [(c.cluster, c.model, _num(c.mean_gain_pct), _num(c.improved_count), c.test_count)
            for c in t.cells + t.averages]
    return _csv_text(GAIN_COLUMNS, rows)


def weather_breakdown_csv(records: Sequence[EvaluationRecord]) -> str:
    if not records:
        return _csv_text(BREAKDOWN_COLUMNS, [])
    t = weather_breakdown(records)
    rows = [(c.model, c.state.value, _num(c.mean_gain_pct), _num(c.std_gain_pct), c.n_voyages)
            for c in t.cells]
    return _csv_text(BREAKDOWN_COLUMNS, rows)


def records_csv(records: Sequence[EvaluationRecord]) -> str:
    rows = [(r.voyage_id, r.cluster, r.model, _exact(r.eff_meas), _exact(r.eff_pred), _exact(r.gain_pct),
             r.weather_state.value, int(r.constrained)) for r in records]
    return _csv_text(RECORD_COLUMNS, rows)


def read_records_csv(path: Union[str, Path]) -> List[EvaluationRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            gain = row["gain_pct"]
            out.append(EvaluationRecord(row["voyage_id"], row["cluster"], row["model"],
                                        float(row["eff_meas"]), float(row["eff_pred"]),
                                        float(gain) if gain != "" else None,
                                        WeatherState(row["weather_state"]),
                                        row["constrained_flag"] == "1"))
    return out


# -- SVG ------------------------------------------------------------------------

W, H = 640, 360
PAD_L, PAD_R, PAD_T, PAD_B = 56, 130, 28, 40


def _scale(lo: float, hi: float, a: float, b: float):
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lambda x: a + (x - lo) * (b - a) / (hi - lo)


def _points(xs, ys, sx, sy) -> str:
    return " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))


def _axes(title: str, xlabel: str, ylabel: str, xlim, ylim) -> List[str]:
    x0, x1, y0, y1 = PAD_L, W - PAD_R, H - PAD_B, PAD_T
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2:.0f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{(x0 + x1) / 2:.0f}" y="{H - 8}" text-anchor="middle" font-size="11">{xlabel}</text>',
        f'<text x="14" y="{(y0 + y1) / 2:.0f}" text-anchor="middle" font-size="11" '
        f'transform="rotate(-90 14 {(y0 + y1) / 2:.0f})">{ylabel}</text>',
    ]
    for v, pos, anchor, tx, ty in ((xlim[0], x0, "middle", x0, y0 + 14), (xlim[1], x1, "middle", x1, y0 + 14),
                                    (ylim[0], y0, "end", x0 - 4, y0 + 4), (ylim[1], y1, "end", x0 - 4, y1 + 4)):
        parts.append(f'<text x="{tx}" y="{ty}" text-anchor="{anchor}" font-size="10">{v:.3g}</text>')
    return parts


def profile_svg(voyage_id: str, profile: Dict[str, list]) -> str:
    """Measured SOG plus one polyline per model over along-track position."""
    xs = profile["positions"]
    series = [(k, v) for k, v in profile.items() if k != "positions"]
    allv = [y for _, ys in series for y in ys]
    ylim = (min(allv), max(allv)) if allv else (0.0, 1.0)
    sx = _scale(0.0, 1.0, PAD_L, W - PAD_R)
    sy = _scale(ylim[0], ylim[1], H - PAD_B, PAD_T)
    parts = _axes(f"Speed profile {voyage_id}", "along-track position", "SOG (m/s)", (0.0, 1.0), ylim)
    for i, (name, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        width = 2 if name == "Measured" else 1.2
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="{width}" '
                     f'points="{_points(xs, ys, sx, sy)}"/>')
        ly = PAD_T + 16 * i + 8
        parts.append(f'<text x="{W - PAD_R + 8}" y="{ly}" font-size="11" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def sorted_gains_svg(model: str, gains: Sequence[float]) -> str:
    """Gains sorted ascending over test voyages, with the zero line marked."""
    ys = sorted(gains)
    xs = list(range(len(ys)))
    ylim = (min(ys + [0.0]), max(ys + [0.0]))
    sx = _scale(0, max(len(ys) - 1, 1), PAD_L, W - PAD_R)
    sy = _scale(ylim[0], ylim[1], H - PAD_B, PAD_T)
    parts = _axes(f"Sorted gains, {model}", "test voyage (sorted)", "gain (%)", (0, max(len(ys) - 1, 0)), ylim)
    parts.append(f'<line x1="{PAD_L}" y1="{sy(0.0):.2f}" x2="{W - PAD_R}" y2="{sy(0.0):.2f}" '
                 f'stroke="gray" stroke-dasharray="4 3"/>')
    parts.append(f'<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{_points(xs, ys, sx, sy)}"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in name)


def emit_reports(records: Sequence[EvaluationRecord], outdir: Union[str, Path],
                 profiles: Optional[Dict[str, Dict[str, list]]] = None, gain_cluster: Optional[str] = None) -> List[Path]:
    """Write the three CSVs plus profile and sorted-gain SVGs. Returns the written paths.

    Sorted-gain plots pool the test voyages of ``gain_cluster`` (default: the
    first cluster present). No SVGs are written for an empty record set.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in (("gain_table.csv", gain_table_csv(records)),
                       ("weather_breakdown.csv", weather_breakdown_csv(records)),
                       ("records.csv", records_csv(records))):
        atomic_write_text(out / name, text)
        written.append(out / name)
    if not records:
        return written
    for vid in sorted(profiles or {}):
        prof = {k: v for k, v in profiles[vid].items() if k != IDENTITY}
        path = out / f"profile_{_safe(vid)}.svg"
        atomic_write_text(path, profile_svg(vid, prof))
        written.append(path)
    clusters = [r.cluster for r in records]
    cname = gain_cluster if gain_cluster in clusters else clusters[0]
    for model in dict.fromkeys(r.model for r in records):
        if model == IDENTITY:
            continue
        gains = [r.gain_pct for r in records if r.model == model and r.cluster == cname and r.gain_pct is not None]
        path = out / f"sorted_gains_{_safe(model)}.svg"
        atomic_write_text(path, sorted_gains_svg(model, gains))
        written.append(path)
    return written


def save_profiles(profiles: Dict[str, Dict[str, list]], path: Union[str, Path]) -> None:
    # insertion order is kept: it fixes the series order and colors of the profile plots
    atomic_write_text(path, json.dumps(profiles, indent=1) + "\n")


def load_profiles(path: Union[str, Path]) -> Dict[str, Dict[str, list]]:
    return json.loads(Path(path).read_text())
