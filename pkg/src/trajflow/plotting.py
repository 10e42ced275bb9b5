"""Static vector figures for qualitative inspection: map polylines in gray,
the target's history in blue, ground-truth future in green, predicted modes
in red with score-weighted opacity.  Panels render side by side so a raw
model and its ensemble can be compared on one canvas.
"""

import numpy as np

from . import scenario as sc

HISTORY_COLOR = "#1f77b4"  # blue
PREDICTION_COLOR = "#d62728"  # red
GROUND_TRUTH_COLOR = "#2ca02c"  # green
MAP_COLOR = "#b0b0b0"

PANEL_SIZE = 360.0
MARGIN = 18.0


def _fmt(v):
    return f"{v:.2f}"


def _polyline(points, color, width, opacity=1.0, dashed=False):
    pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
    dash = ' stroke-dasharray="4,3"' if dashed else ""
    return (
        f'<polyline points="{pts}" fill="none" stroke="{color}" '
        f'stroke-width="{_fmt(width)}" stroke-opacity="{_fmt(opacity)}"'
        f"{dash} stroke-linecap=\"round\" stroke-linejoin=\"round\"/>"
    )


def _bounds(arrays, pad=5.0):
    stacked = np.concatenate([np.asarray(a, dtype=np.float64).reshape(-1, 2) for a in arrays])
    lo = stacked.min(axis=0) - pad
    hi = stacked.max(axis=0) + pad
    return lo, hi


class _Projector:
    """World (y up) to panel pixels (y down), preserving the aspect ratio."""

    def __init__(self, lo, hi, x0):
        span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
        self.scale = (PANEL_SIZE - 2 * MARGIN) / span
        self.lo = lo
        self.hi = hi
        self.x0 = x0

    def __call__(self, points):
        p = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        x = self.x0 + MARGIN + (p[:, 0] - self.lo[0]) * self.scale
        y = MARGIN + (self.hi[1] - p[:, 1]) * self.scale
        return np.stack([x, y], axis=1)


def _panel(ns, trajs, scores, label, x0):
    track = sc.target_track(ns)
    valid = track.states[:, sc.SVALID] > 0.5
    hist_mask = valid[: sc.T_HISTORY]
    fut_mask = valid[sc.T_HISTORY :]
    history = track.states[: sc.T_HISTORY][hist_mask][:, [sc.SX, sc.SY]]
    future = track.states[sc.T_HISTORY :][fut_mask][:, [sc.SX, sc.SY]]

    drawable = [history, future, np.asarray(trajs).reshape(-1, 2)]
    drawable += [p.points for p in ns.map]
    proj = _Projector(*_bounds(drawable), x0=x0)

    parts = [
        f'<g aria-label="{label}">',
        f'<rect x="{_fmt(x0)}" y="0" width="{_fmt(PANEL_SIZE)}" height="{_fmt(PANEL_SIZE)}" '
        f'fill="white" stroke="#888888" stroke-width="1"/>',
    ]
    for poly in ns.map:
        parts.append(
            _polyline(proj(poly.points), MAP_COLOR, 1.0, dashed=poly.kind != "boundary")
        )
    smax = float(np.max(scores)) if len(scores) else 1.0
    for k in np.argsort(scores):  # strongest mode drawn last, on top
        opacity = 0.30 + 0.70 * float(scores[k]) / max(smax, 1e-12)
        parts.append(_polyline(proj(trajs[k]), PREDICTION_COLOR, 2.0, opacity=opacity))
    if len(future):
        parts.append(_polyline(proj(future), GROUND_TRUTH_COLOR, 2.5))
    parts.append(_polyline(proj(history), HISTORY_COLOR, 2.5))
    parts.append(
        f'<text x="{_fmt(x0 + MARGIN)}" y="{_fmt(PANEL_SIZE - 6)}" '
        f'font-family="monospace" font-size="12" fill="#333333">{label}</text>'
    )
    parts.append("</g>")
    return parts


def render_scene_svg(ns, prediction_sets, labels):
    """One SVG panel per (trajectories [K x T_f x 2], scores [K]) pair."""
    if len(prediction_sets) != len(labels):
        raise ValueError("one label per prediction set required")
    if not prediction_sets:
        raise ValueError("nothing to draw")
    width = PANEL_SIZE * len(prediction_sets)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_fmt(width)} {_fmt(PANEL_SIZE)}" '
        f'width="{_fmt(width)}" height="{_fmt(PANEL_SIZE)}">'
    ]
    for i, ((trajs, scores), label) in enumerate(zip(prediction_sets, labels)):
        parts.extend(_panel(ns, np.asarray(trajs), np.asarray(scores), label, i * PANEL_SIZE))
    parts.append("</svg>")
    return "\n".join(parts)


def plot_prediction_file(data_path, pred_paths, scenario_id, out_path, labels=None):
    """Render one scenario from prediction interchange files to an SVG file."""
    from . import predictions as pj

    corpus = {s.scenario_id: s for s in sc.load_jsonl(data_path)}
    if scenario_id not in corpus:
        raise FileNotFoundError(f"scenario {scenario_id!r} not in {data_path}")
    ns = sc.filter_radius(sc.normalize(corpus[scenario_id]))
    sets = []
    for path in pred_paths:
        entries = pj.load_predictions(path)
        if scenario_id not in entries:
            raise FileNotFoundError(f"scenario {scenario_id!r} not in {path}")
        sets.append(entries[scenario_id])
    labels = labels or [str(p) for p in pred_paths]
    svg = render_scene_svg(ns, sets, labels)
    with open(out_path, "w") as fh:
        fh.write(svg + "\n")
    return out_path
