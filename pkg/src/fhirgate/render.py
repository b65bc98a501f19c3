"""Offline 2D rendering of a timeline layout document to SVG.

Uses a matplotlib Figure directly (no pyplot, no global state) so renders
are safe from any thread and deterministic. Every encounter marker gets a
``gid`` of ``encounter-<id>`` so the SVG stays machine-checkable.
"""

import io

import matplotlib
from matplotlib.figure import Figure

# one flat 2D stand-in per 3D glyph shape
_MARKERS = {
    "pill": "P",
    "cube": "s",
    "sphere": "o",
    "pyramid": "^",
    "cylinder": "v",
    "capsule": "D",
    "disc": "8",
    "torus": "*",
    "octahedron": "X",
}


def render_timeline_svg(doc: dict) -> bytes:
    """Render a layout document (the wire/CLI JSON schema) to SVG bytes."""
    width = doc["line_width_m"]
    fig = Figure(figsize=(max(6.0, width * 4.0), 3.0))
    ax = fig.add_subplot()
    ax.set_title(f"Timeline {doc['patient']}")
    ax.plot([0.0, width], [0.0, 0.0], color="#666666", linewidth=2, zorder=1)

    positions = {}
    for encounter in doc["encounters"]:
        x = encounter["x_m"]
        positions[encounter["ref"]] = x
        marker = ax.plot([x], [0.0], marker="|", markersize=18,
                         color="#222222", zorder=2)[0]
        marker.set_gid(f"encounter-{encounter['ref'].split('/')[-1]}")

    lanes = {}
    for event in doc["events"]:
        anchor = positions.get(event["encounter"])
        if anchor is None:
            continue
        lane = lanes.get(event["encounter"], 0)
        lanes[event["encounter"]] = lane + 1
        x = anchor + (event["x_local"] - 0.5) * 0.05 * width
        y = 0.12 + lane * 0.1
        color = tuple(c / 255.0 for c in event["color"])
        marker = ax.plot([x], [y], marker=_MARKERS.get(event["shape"], "."),
                         markersize=9, color=color, linestyle="none",
                         zorder=3, label=event["shape"])[0]
        marker.set_gid(f"event-{event['ref'].split('/')[-1]}")

    ax.set_xlim(-0.05 * width, 1.05 * width)
    ax.set_ylim(-0.3, max(0.6, 0.2 + 0.1 * max(lanes.values(), default=0)))
    ax.set_xlabel("warped position (m)")
    ax.set_yticks([])
    buf = io.BytesIO()
    # pin the id salt: otherwise element ids are seeded from a fresh UUID
    # per render and identical layouts produce different bytes
    with matplotlib.rc_context({"svg.hashsalt": "fhirgate"}):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()
