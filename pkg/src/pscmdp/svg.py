"""Learning-curve figures written as plain SVG text.

Each figure has two stacked panels, average reward above and average cost
below. Curves are means across runs with a shaded band of one standard
deviation; the constrained optimum is dashed, safe and fast levels dotted.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .harness import ReferenceLevels, read_aggregate

WIDTH, HEIGHT = 720, 560
MARGIN_LEFT, MARGIN_RIGHT = 70, 170
PANEL_TOP = (30, 300)
PANEL_HEIGHT = 210
COLORS = {
    "PSRLTransitions": "#1f77b4",
    "PSRLLagrangian": "#ff7f0e",
    "CUCRLOptimistic": "#2ca02c",
    "CUCRLConservative": "#d62728",
    "CUCRLTransitions": "#9467bd",
}


def _num(x: float) -> str:
    return f"{x:.2f}"


@dataclass(frozen=True)
class Axis:
    """Affine map from data to pixel coordinates for one panel."""

    x_max: float
    y_min: float
    y_max: float
    top: float

    @property
    def left(self) -> float:
        return MARGIN_LEFT

    @property
    def right(self) -> float:
        return WIDTH - MARGIN_RIGHT

    @property
    def bottom(self) -> float:
        return self.top + PANEL_HEIGHT

    def px(self, x) -> np.ndarray:
        return self.left + (np.asarray(x, dtype=float) / self.x_max) * (self.right - self.left)

    def py(self, y) -> np.ndarray:
        span = self.y_max - self.y_min
        return self.bottom - (np.asarray(y, dtype=float) - self.y_min) / span * PANEL_HEIGHT


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _tick_label(v: float) -> str:
    return str(int(round(v)))


def _panel(ax: Axis, title: str, series: dict, levels: list[tuple[str, float, str]],
           absent: list[str]) -> list[str]:
    out = [f'<rect x="{_num(ax.left)}" y="{_num(ax.top)}" width="{_num(ax.right - ax.left)}" '
           f'height="{PANEL_HEIGHT}" fill="none" stroke="#000"/>',
           f'<text x="{_num(ax.left)}" y="{_num(ax.top - 8)}" font-size="13">{escape(title)}</text>']
    for v in _ticks(0, ax.x_max):
        x = _num(float(ax.px(v)))
        out.append(f'<line x1="{x}" y1="{_num(ax.bottom)}" x2="{x}" y2="{_num(ax.bottom + 4)}" stroke="#000"/>')
        out.append(f'<text class="xtick" x="{x}" y="{_num(ax.bottom + 16)}" font-size="10" '
                   f'text-anchor="middle">{_tick_label(v)}</text>')
    for v in _ticks(ax.y_min, ax.y_max):
        y = _num(float(ax.py(v)))
        out.append(f'<line x1="{_num(ax.left - 4)}" y1="{y}" x2="{_num(ax.left)}" y2="{y}" stroke="#000"/>')
        out.append(f'<text x="{_num(ax.left - 6)}" y="{y}" font-size="10" text-anchor="end" '
                   f'dominant-baseline="middle">{v:.3g}</text>')
    for name, (steps, mean, std) in series.items():
        color = COLORS.get(name, "#444")
        upper = np.clip(mean + std, ax.y_min, ax.y_max)
        lower = np.clip(mean - std, ax.y_min, ax.y_max)
        xs = ax.px(steps)
        band = [f"{_num(x)},{_num(y)}" for x, y in zip(xs, ax.py(upper))]
        band += [f"{_num(x)},{_num(y)}" for x, y in zip(xs[::-1], ax.py(lower)[::-1])]
        out.append(f'<polygon class="band" points="{" ".join(band)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        pts = " ".join(f"{_num(x)},{_num(y)}" for x, y in zip(xs, ax.py(mean)))
        out.append(f'<polyline class="curve" data-name="{escape(name)}" points="{pts}" fill="none" '
                   f'stroke="{color}" stroke-width="1.5"/>')
    for label, value, dash in levels:
        y = _num(float(ax.py(value)))
        out.append(f'<line class="level" data-level="{label}" x1="{_num(ax.left)}" y1="{y}" '
                   f'x2="{_num(ax.right)}" y2="{y}" stroke="#000" stroke-dasharray="{dash}"/>')
        out.append(f'<text x="{_num(ax.right + 4)}" y="{y}" font-size="10" dominant-baseline="middle">'
                   f'{label}</text>')
    for j, note in enumerate(absent):
        out.append(f'<text class="absent" x="{_num(ax.left + 8)}" y="{_num(ax.top + 16 + 14 * j)}" '
                   f'font-size="11" fill="#a00">{escape(note)}</text>')
    return out


def render_figure(title: str, horizon: int, series: dict, levels: ReferenceLevels,
                  absent: list[str] = (), cost_index: int = 0) -> str:
    """SVG text for one environment.

    ``series`` maps an algorithm name to ``(steps, mean_reward, std_reward,
    mean_cost, std_cost)`` arrays.
    """
    absent = list(absent)
    reward_levels = [("optimal", levels.optimal.reward_rate, "6,4"), ("fast", levels.fast.reward_rate, "2,3")]
    if levels.safe is not None:
        reward_levels.append(("safe", levels.safe.reward_rate, "2,3"))
    else:
        absent.append("safe level absent (zero budget infeasible)")
    cost_levels = [("optimal", float(levels.optimal.cost_rates[cost_index]), "6,4")]

    def y_range(values):
        hi = max(values) if values else 1.0
        hi = hi * 1.15 if hi > 0 else 1.0
        return 0.0, hi

    rew_vals = [v for _, v, _ in reward_levels] + [float(np.max(s[1] + s[2])) for s in series.values()]
    cost_vals = [v for _, v, _ in cost_levels] + [float(np.max(s[3] + s[4])) for s in series.values()]
    top_ax = Axis(float(horizon), *y_range(rew_vals), PANEL_TOP[0])
    bot_ax = Axis(float(horizon), *y_range(cost_vals), PANEL_TOP[1])
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
             f'viewBox="0 0 {WIDTH} {HEIGHT}">',
             f'<title>{escape(title)}</title>',
             '<rect width="100%" height="100%" fill="#fff"/>']
    parts += _panel(top_ax, f"{title}: average reward", {k: (v[0], v[1], v[2]) for k, v in series.items()},
                    reward_levels, absent)
    parts += _panel(bot_ax, f"{title}: average cost", {k: (v[0], v[3], v[4]) for k, v in series.items()},
                    cost_levels, [n for n in absent if not n.startswith("safe")])
    for j, name in enumerate(series):
        y = PANEL_TOP[0] + 40 + 16 * j
        x = WIDTH - MARGIN_RIGHT + 60
        parts.append(f'<line x1="{x}" y1="{y}" x2="{x + 18}" y2="{y}" stroke="{COLORS.get(name, "#444")}" '
                     f'stroke-width="2"/>')
        parts.append(f'<text x="{x + 22}" y="{y}" font-size="10" dominant-baseline="middle">{escape(name)}</text>')
    parts.append(f'<text x="{_num((MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2)}" y="{HEIGHT - 8}" font-size="11" '
                 f'text-anchor="middle">rounds</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_figures(in_dir, out_dir=None) -> list[Path]:
    """Read a suite directory and write ``figures/<env>.svg``."""
    in_dir = Path(in_dir)
    manifest = json.loads((in_dir / "manifest.json").read_text())
    levels = ReferenceLevels.from_dict(manifest["reference_levels"])
    env = manifest["config"]["env"]
    series, absent = {}, []
    for algo in manifest["config"]["algorithms"]:
        path = in_dir / "aggregate" / f"{algo}.csv"
        if not path.exists():
            absent.append(f"{algo}: absent")
            continue
        cols = read_aggregate(path)
        series[algo] = (cols["step"], cols["mean_avg_reward"], cols["std_avg_reward"],
                        cols["mean_avg_cost_0"], cols["std_avg_cost_0"])
    out_dir = Path(out_dir) if out_dir is not None else in_dir / "figures"
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / f"{env}.svg"
    target.write_text(render_figure(env, int(manifest["horizon"]), series, levels, absent))
    return [target]
