"""
TVNet - Score Curves

Per-video CSV of the frame-level scores and a small self-contained SVG line
chart of them, with ground-truth boundaries drawn as vertical lines.
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union
from xml.sax.saxutils import escape

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ["t", "v_start", "v_end", "b_start", "b_end", "b_action"]

SERIES_COLORS = {
    "v_start": "#1f77b4",
    "v_end": "#d62728",
    "b_start": "#9ecae1",
    "b_end": "#fc9272",
    "b_action": "#7f7f7f",
}

WIDTH = 720
HEIGHT = 240
MARGIN = 32


def score_curve_frame(curves: Dict[str, np.ndarray]) -> pd.DataFrame:
    """One row per frame, columns t plus each named curve"""
    lengths = {len(values) for values in curves.values()}
    if len(lengths) > 1:
        raise ValueError(f"Score curves have different lengths: {sorted(lengths)}")
    T = lengths.pop() if lengths else 0
    frame = pd.DataFrame({"t": np.arange(T)})
    for name in CURVE_COLUMNS[1:]:
        if name in curves:
            frame[name] = np.asarray(curves[name], dtype=np.float64)
    return frame


def save_score_curves(path: Union[str, Path], curves: Dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    score_curve_frame(curves).to_csv(path, index=False, float_format="%.6g")
    return path


def _polyline(values: np.ndarray, T: int, color: str) -> str:
    width = WIDTH - 2 * MARGIN
    height = HEIGHT - 2 * MARGIN
    xs = MARGIN + np.arange(len(values)) * width / max(T - 1, 1)
    ys = HEIGHT - MARGIN - np.clip(values, 0.0, 1.0) * height
    points = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, ys))
    return f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{points}"/>'


def render_svg(curves: Dict[str, np.ndarray], boundaries: Sequence[Tuple[int, int]] = (),
               title: Optional[str] = None) -> str:
    """
    SVG line chart of the curves on a [0, 1] axis

    Args:
        curves: Named per-frame values; anything outside [0, 1] is clipped
        boundaries: Ground-truth (start, end) frames drawn as dashed lines
        title: Optional caption

    Returns:
        str: SVG document
    """
    frame = score_curve_frame(curves)
    T = len(frame)
    width = WIDTH - 2 * MARGIN
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="{MARGIN}" y="{MARGIN}" width="{width}" height="{HEIGHT - 2 * MARGIN}" '
        f'fill="white" stroke="#cccccc"/>',
    ]
    if title:
        parts.append(f'<text x="{MARGIN}" y="{MARGIN - 10}" font-size="12">{escape(title)}</text>')
    for start, end in boundaries:
        for frame_index, color in ((start, SERIES_COLORS["v_start"]), (end, SERIES_COLORS["v_end"])):
            x = MARGIN + frame_index * width / max(T - 1, 1)
            parts.append(
                f'<line x1="{x:.1f}" y1="{MARGIN}" x2="{x:.1f}" y2="{HEIGHT - MARGIN}" '
                f'stroke="{color}" stroke-dasharray="4 3"/>'
            )
    legend_x = MARGIN
    for name in CURVE_COLUMNS[1:]:
        if name not in frame:
            continue
        color = SERIES_COLORS[name]
        parts.append(_polyline(frame[name].to_numpy(), T, color))
        parts.append(f'<text x="{legend_x}" y="{HEIGHT - 8}" font-size="11" fill="{color}">{name}</text>')
        legend_x += 80
    parts.append("</svg>")
    return "\n".join(parts)


def save_svg(path: Union[str, Path], curves: Dict[str, np.ndarray],
             boundaries: Sequence[Tuple[int, int]] = (), title: Optional[str] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_svg(curves, boundaries, title))
    logger.debug(f"Wrote {path}")
    return path
