"""SVG overlays of decoded outputs; every decoded instance is one element with class="instance"."""
from __future__ import annotations

from typing import Optional, Sequence
from xml.sax.saxutils import escape

from .codecs import Detection
from .geometry import BBox, KeypointSet, Polygon

_COLORS = ("#e6194b", "#3cb44b", "#4363d8", "#f58231", "#911eb4", "#46f0f0")


def _f(v: float) -> str:
    return f"{v:.3f}"


class SvgCanvas:
    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.items: list[str] = []

    def box(self, box: BBox, label: str, color: str, css: str = "instance") -> None:
        x, y = box.xmin * self.width, box.ymin * self.height
        w, h = box.width * self.width, box.height * self.height
        self.items.append(
            f'<rect class="{css}" data-label="{escape(label)}" x="{_f(x)}" y="{_f(y)}" '
            f'width="{_f(w)}" height="{_f(h)}" fill="none" stroke="{color}" stroke-width="1"/>'
        )

    def polygons(self, polys: Sequence[Polygon], color: str) -> None:
        d = " ".join(
            "M " + " L ".join(f"{_f(x * self.width)} {_f(y * self.height)}" for y, x in p.vertices) + " Z"
            for p in polys
        )
        self.items.append(
            f'<path class="instance" d="{d}" fill="{color}" fill-opacity="0.4" fill-rule="evenodd" stroke="{color}"/>'
        )

    def keypoints(self, kps: KeypointSet, color: str) -> None:
        dots = "".join(
            f'<circle cx="{_f(k[1] * self.width)}" cy="{_f(k[0] * self.height)}" r="1.5" fill="{color}"/>'
            for k in kps
            if k is not None
        )
        self.items.append(f'<g class="instance">{dots}</g>')

    def text(self, text: str) -> None:
        self.items.append(f'<text class="instance" x="2" y="{self.height - 3}" font-size="8" fill="white">{escape(text)}</text>')

    def render(self) -> str:
        body = "\n".join(self.items)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}">\n'
            f'<rect width="{self.width}" height="{self.height}" fill="#202020"/>\n{body}\n</svg>\n'
        )


def detections_svg(dets: Sequence[Detection], width: int, height: int, names: Optional[Sequence[str]] = None) -> str:
    c = SvgCanvas(width, height)
    for d in dets:
        label = names[d.class_id] if names and d.class_id < len(names) else str(d.class_id)
        c.box(d.box, f"{label} {d.score:.2f}", _COLORS[d.class_id % len(_COLORS)])
    return c.render()


def polygons_svg(polys: Sequence[Polygon], width: int, height: int, condition: Optional[BBox] = None) -> str:
    c = SvgCanvas(width, height)
    if condition is not None:
        c.box(condition, "prompt", "#ffffff", css="prompt")
    c.polygons(polys, _COLORS[0])
    return c.render()


def keypoints_svg(kps: KeypointSet, width: int, height: int, condition: Optional[BBox] = None) -> str:
    c = SvgCanvas(width, height)
    if condition is not None:
        c.box(condition, "prompt", "#ffffff", css="prompt")
    c.keypoints(kps, _COLORS[1])
    return c.render()


def caption_svg(text: str, width: int, height: int) -> str:
    c = SvgCanvas(width, height)
    c.text(text)
    return c.render()
