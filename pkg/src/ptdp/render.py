"""SVG Gantt chart of a simulated timeline: one lane per device."""

from __future__ import annotations

from xml.sax.saxutils import escape

from .schedule import FORWARD, Timeline

LANE_HEIGHT = 28
LANE_GAP = 6
LEFT_MARGIN = 80
TOP_MARGIN = 24
WIDTH = 1000

# Forward is blue, backward green; earlier chunks are darker.
_PALETTE = {
    FORWARD: ("#1f4e9c", "#6f9ee8"),
    "backward": ("#1d7a3a", "#7ccf8f"),
}


def _shade(direction: str, chunk: int, chunks: int) -> str:
    dark, light = _PALETTE[direction]
    if chunks == 1:
        return dark
    return dark if chunk % 2 == 0 else light


def render_svg(timeline: Timeline, title: str = "") -> str:
    """Return an SVG document; task rectangles carry the ``task`` class."""
    if timeline.vectorized:
        raise ValueError("render a scalar timeline, not a vector of samples")
    span = float(timeline.span) or 1.0
    scale = (WIDTH - LEFT_MARGIN - 10) / span
    p = timeline.pipeline_size
    height = TOP_MARGIN + p * (LANE_HEIGHT + LANE_GAP) + 20
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" '
        f'viewBox="0 0 {WIDTH} {height}" font-family="monospace" font-size="11">',
        "<style>.forward{stroke:#0b2350}.backward{stroke:#0b3d1c}"
        ".task{stroke-width:0.5}.label{fill:#fff;text-anchor:middle}</style>",
    ]
    if title:
        out.append(f'<text x="{LEFT_MARGIN}" y="14">{escape(title)}</text>')
    for device in range(p):
        y = TOP_MARGIN + device * (LANE_HEIGHT + LANE_GAP)
        out.append(f'<text x="4" y="{y + LANE_HEIGHT / 2 + 4:.1f}">device {device}</text>')
    for rec in timeline.records():
        task = rec.task
        x = LEFT_MARGIN + float(rec.start) * scale
        w = max(float(rec.end - rec.start) * scale, 0.5)
        y = TOP_MARGIN + rec.device * (LANE_HEIGHT + LANE_GAP)
        fill = _shade(task.direction, task.chunk, timeline.chunks)
        out.append(
            f'<rect class="task {task.direction} chunk-{task.chunk}" x="{x:.3f}" y="{y}" '
            f'width="{w:.3f}" height="{LANE_HEIGHT}" fill="{fill}">'
            f"<title>{escape(str(task))} stage {task.stage} batch {rec.batch} "
            f"[{float(rec.start):.6g}, {float(rec.end):.6g}]</title></rect>"
        )
        if w > 14:
            out.append(
                f'<text class="label" x="{x + w / 2:.3f}" y="{y + LANE_HEIGHT / 2 + 4:.1f}">'
                f"{task.microbatch}</text>"
            )
    axis_y = TOP_MARGIN + p * (LANE_HEIGHT + LANE_GAP) + 12
    out.append(f'<text x="{LEFT_MARGIN}" y="{axis_y}">0</text>')
    out.append(f'<text x="{WIDTH - 10}" y="{axis_y}" text-anchor="end">{span:.6g} s</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
