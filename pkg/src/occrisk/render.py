"""Static figure export: risk heatmap overlays and velocity-distance profiles.

Everything renders through PIL into deterministic PNG bytes so figures can be
regression-tested against committed goldens without a display server.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
from PIL import Image, ImageDraw

from .planner import VelocityProfile
from .riskfield import RiskGrid
from .scene import Scenario
from .visibility import FieldOfView

_LANE_COLOR = (205, 205, 205)
_OCCLUDER_COLOR = (90, 90, 90)
_EGO_COLOR = (40, 140, 60)
_AGENT_COLOR = (50, 90, 200)
_PHANTOM_COLOR = (150, 60, 180)
_FOV_FILL = (120, 170, 255, 70)

_PROFILE_COLORS = (
    (214, 69, 65),    # red
    (31, 119, 180),   # blue
    (44, 160, 44),    # green
    (148, 103, 189),  # purple
    (255, 127, 14),   # orange
)


class ExtentMismatch(ValueError):
    """Scenario geometry does not fit inside the grid extent."""


def heatmap_rgb(values: np.ndarray) -> np.ndarray:
    """White -> yellow -> red colormap over values in [0, 1], shape (..., 3) uint8."""
    t = np.clip(np.asarray(values, dtype=float), 0.0, 1.0)
    rgb = np.empty(t.shape + (3,), dtype=np.uint8)
    lo = t < 0.5
    u = np.where(lo, 2.0 * t, 2.0 * t - 1.0)
    rgb[..., 0] = 255
    rgb[..., 1] = np.where(lo, 255, np.rint((1.0 - u) * 255)).astype(np.uint8)
    rgb[..., 2] = np.where(lo, np.rint((1.0 - u) * 255), 0).astype(np.uint8)
    return rgb


def _check_extent(scenario: Scenario, grid: RiskGrid) -> None:
    lo, hi = scenario.bounding_box()
    spec = grid.spec
    g_lo = spec.origin
    g_hi = spec.origin + np.array([spec.n1, spec.n2]) * spec.resolution
    if np.any(lo < g_lo - 1e-9) or np.any(hi > g_hi + 1e-9):
        raise ExtentMismatch(
            f"scenario extent {lo.tolist()}..{hi.tolist()} exceeds "
            f"grid extent {g_lo.tolist()}..{g_hi.tolist()}"
        )


def _world_to_px(spec, scale: int):
    height = spec.n2 * scale

    def to_px(p):
        rel = (np.asarray(p, dtype=float) - spec.origin) / spec.resolution * scale
        return (float(rel[0]), float(height - rel[1]))

    return to_px


def _draw_lanes(draw: ImageDraw.ImageDraw, scenario: Scenario, to_px, scale: int, resolution: float) -> None:
    for lane in scenario.lanes:
        half_px = lane.width / 2.0 / resolution * scale
        pts = [to_px(p) for p in lane.centerline]
        draw.line(pts, fill=_LANE_COLOR, width=max(1, int(round(2 * half_px))), joint="curve")
        for p in pts:
            r = half_px
            draw.ellipse([p[0] - r, p[1] - r, p[0] + r, p[1] + r], fill=_LANE_COLOR)


def render_heatmap(
    scenario: Scenario,
    grid: RiskGrid,
    out_path,
    fov: Optional[FieldOfView] = None,
    scale: int = 2,
    layer: str = "total",
) -> Path:
    """Risk layer as a white->yellow->red heatmap with scene geometry overlaid."""
    _check_extent(scenario, grid)
    values = getattr(grid, layer)
    spec = grid.spec
    to_px = _world_to_px(spec, scale)

    rgb = heatmap_rgb(values)[::-1]  # row 0 at the top of the image
    img = Image.fromarray(rgb, "RGB").resize((spec.n1 * scale, spec.n2 * scale), Image.NEAREST)

    # lanes only where the heatmap is blank, so risk cells stay visible
    lanes_img = img.copy()
    _draw_lanes(ImageDraw.Draw(lanes_img), scenario, to_px, scale, spec.resolution)
    blank = np.asarray(img).min(axis=2) >= 254
    merged = np.where(blank[..., None], np.asarray(lanes_img), np.asarray(img))
    img = Image.fromarray(merged.astype(np.uint8), "RGB")
    draw = ImageDraw.Draw(img)

    if fov is not None:
        overlay = Image.new("RGBA", img.size, (0, 0, 0, 0))
        odraw = ImageDraw.Draw(overlay)
        poly = [
            to_px(fov.origin + d * np.array([math.cos(a), math.sin(a)]))
            for a, d in zip(fov.angles, fov.distances)
        ]
        odraw.polygon(poly, fill=_FOV_FILL)
        img = Image.alpha_composite(img.convert("RGBA"), overlay).convert("RGB")
        draw = ImageDraw.Draw(img)

    for poly in scenario.occluders:
        draw.polygon([to_px(p) for p in poly], fill=_OCCLUDER_COLOR)
    for agent in scenario.agents:
        color = _PHANTOM_COLOR if agent.kind == "phantom" else _AGENT_COLOR
        draw.polygon([to_px(p) for p in agent.footprint_corners(agent.states[0, 0])], fill=color)

    ego = scenario.ego
    x, y, h, _ = ego.initial_state
    c, s = math.cos(h), math.sin(h)
    rot = np.array([[c, -s], [s, c]])
    local = np.array(
        [
            [ego.half_length, ego.half_width],
            [-ego.half_length, ego.half_width],
            [-ego.half_length, -ego.half_width],
            [ego.half_length, -ego.half_width],
        ]
    )
    corners = local @ rot.T + (x, y)
    draw.polygon([to_px(p) for p in corners], fill=_EGO_COLOR)
    draw.line([to_px(p) for p in ego.reference_path], fill=_EGO_COLOR, width=scale)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    img.save(out_path, format="PNG")
    return out_path


def render_profile(
    profiles: Sequence[Tuple[str, VelocityProfile]],
    out_path,
    size: Tuple[int, int] = (640, 400),
) -> Path:
    """Speed-vs-distance curves, one per planner, with a colored legend."""
    if not profiles:
        raise ValueError("no profiles to plot")
    width, height = size
    margin = 45
    img = Image.new("RGB", size, (255, 255, 255))
    draw = ImageDraw.Draw(img)

    s_max = max(float(p.s[-1]) for _, p in profiles)
    v_max = max(float(np.max(p.v)) for _, p in profiles)
    s_max = max(s_max, 1e-6)
    v_max = max(v_max, 1e-6)

    def to_px(s, v):
        px = margin + s / s_max * (width - 2 * margin)
        py = height - margin - v / v_max * (height - 2 * margin)
        return (px, py)

    axis = (0, 0, 0)
    draw.line([to_px(0, 0), to_px(s_max, 0)], fill=axis, width=1)
    draw.line([to_px(0, 0), to_px(0, v_max)], fill=axis, width=1)
    for frac in (0.25, 0.5, 0.75, 1.0):
        draw.line([to_px(frac * s_max, 0), to_px(frac * s_max, v_max)], fill=(230, 230, 230), width=1)
        draw.line([to_px(0, frac * v_max), to_px(s_max, frac * v_max)], fill=(230, 230, 230), width=1)
        draw.text((to_px(frac * s_max, 0)[0] - 8, height - margin + 6), f"{frac * s_max:.0f}", fill=axis)
        draw.text((4, to_px(0, frac * v_max)[1] - 5), f"{frac * v_max:.1f}", fill=axis)
    draw.text((width // 2 - 40, height - 18), "distance (m)", fill=axis)
    draw.text((4, 4), "speed (m/s)", fill=axis)

    for i, (name, prof) in enumerate(profiles):
        color = _PROFILE_COLORS[i % len(_PROFILE_COLORS)]
        pts = [to_px(s, v) for s, v in zip(prof.s, prof.v)]
        if len(pts) == 1:
            pts = pts * 2
        draw.line(pts, fill=color, width=2)
        ly = 8 + 14 * i
        draw.rectangle([width - 150, ly, width - 138, ly + 10], fill=color)
        draw.text((width - 132, ly - 1), name, fill=axis)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    img.save(out_path, format="PNG")
    return out_path
