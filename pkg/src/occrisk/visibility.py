"""Field-of-view ray casting and occluded lane segment extraction.

Rays are cast at world-fixed bearings uniformly covering [-pi, pi). Static
occluder polygons and the oriented boxes of observed (non-phantom) agents
block rays; phantom agents are hypotheses and never occlude.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .scene import LaneSegment, Scenario

DEFAULT_RAY_COUNT = 360
DEFAULT_MAX_RANGE = 80.0
DEFAULT_MIN_SEGMENT_LEN = 4.8  # one vehicle length


class EgoInsideObstacle(ValueError):
    """Raised when the ray origin lies inside an occluder or agent footprint."""


@dataclass(frozen=True, eq=False)
class FieldOfView:
    origin: np.ndarray  # (2,)
    angles: np.ndarray  # (n,) strictly increasing, spanning [-pi, pi)
    distances: np.ndarray  # (n,) hit distance per ray, clamped to max_range
    max_range: float

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "angles", np.asarray(self.angles, dtype=float))
        object.__setattr__(self, "distances", np.asarray(self.distances, dtype=float))


@dataclass(frozen=True)
class OccludedSegment:
    lane_id: str
    s_start: float
    s_end: float


def _point_in_polygon(point: np.ndarray, poly: np.ndarray) -> bool:
    x, y = point
    n = len(poly)
    inside = False
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            xi = x1 + (y - y1) / (y2 - y1) * (x2 - x1)
            if x < xi:
                inside = not inside
    return inside


def _blocking_edges(scenario: Scenario, t: float) -> np.ndarray:
    """All blocking segments as a (M,4) array of (ax, ay, bx, by)."""
    edges = []
    for poly in scenario.occluders:
        n = len(poly)
        for i in range(n):
            a, b = poly[i], poly[(i + 1) % n]
            edges.append([a[0], a[1], b[0], b[1]])
    for agent in scenario.agents:
        if agent.kind == "phantom":
            continue
        corners = agent.footprint_corners(t)
        for i in range(4):
            a, b = corners[i], corners[(i + 1) % 4]
            edges.append([a[0], a[1], b[0], b[1]])
    if not edges:
        return np.zeros((0, 4))
    return np.asarray(edges)


def cast_fov(
    scenario: Scenario,
    ego_pos,
    t: float = 0.0,
    ray_count: int = DEFAULT_RAY_COUNT,
    max_range: float = DEFAULT_MAX_RANGE,
) -> FieldOfView:
    """Cast `ray_count` uniformly spaced rays and record the first hit per ray."""
    origin = np.asarray(ego_pos, dtype=float)[:2]
    for poly in scenario.occluders:
        if _point_in_polygon(origin, poly):
            raise EgoInsideObstacle("ego position inside a static occluder")
    for agent in scenario.agents:
        if agent.kind == "phantom":
            continue
        if _point_in_polygon(origin, agent.footprint_corners(t)):
            raise EgoInsideObstacle(f"ego position inside footprint of agent {agent.id}")

    angles = -math.pi + 2.0 * math.pi / ray_count * np.arange(ray_count)
    edges = _blocking_edges(scenario, t)
    distances = np.full(ray_count, max_range)
    if len(edges):
        a = edges[:, :2]
        ab = edges[:, 2:] - a
        ao = a - origin  # (M,2)
        dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)  # (n,2)
        # solve origin + r*dir = a + u*ab for each (ray, edge) pair
        denom = dirs[:, None, 0] * (-ab[None, :, 1]) - dirs[:, None, 1] * (-ab[None, :, 0])
        with np.errstate(divide="ignore", invalid="ignore"):
            r = (ao[None, :, 0] * (-ab[None, :, 1]) - ao[None, :, 1] * (-ab[None, :, 0])) / denom
            u = (dirs[:, None, 0] * ao[None, :, 1] - dirs[:, None, 1] * ao[None, :, 0]) / denom
        hit = (np.abs(denom) > 1e-12) & (r > 1e-9) & (u >= 0.0) & (u <= 1.0)
        r = np.where(hit, r, np.inf)
        distances = np.minimum(r.min(axis=1), max_range)
    return FieldOfView(origin=origin, angles=angles, distances=distances, max_range=max_range)


def fov_contains(fov: FieldOfView, point) -> bool:
    """True iff the point is inside the visibility fan.

    Conservative: uses the min of the two bracketing ray distances, so points
    near a shadow boundary are labeled occluded.
    """
    point = np.asarray(point, dtype=float)
    rel = point - fov.origin
    r = float(np.linalg.norm(rel))
    if r > fov.max_range:
        return False
    if r == 0.0:
        return True
    bearing = math.atan2(rel[1], rel[0])
    n = len(fov.angles)
    step = 2.0 * math.pi / n
    i = int(math.floor((bearing + math.pi) / step)) % n
    d = min(fov.distances[i], fov.distances[(i + 1) % n])
    return r <= d


def occluded_segments(
    scenario: Scenario,
    fov: FieldOfView,
    sample_step: float = 0.5,
    min_length: float = DEFAULT_MIN_SEGMENT_LEN,
) -> List[OccludedSegment]:
    """Maximal in-range occluded runs along each lane centerline.

    Samples each centerline at `sample_step`; runs of samples that are within
    max_range of the ego but outside the FOV become segments. Runs shorter
    than `min_length` (one vehicle length) are dropped. Output is disjoint and
    sorted by s_start within each lane.
    """
    if sample_step <= 0:
        raise ValueError("sample_step must be > 0")
    out: List[OccludedSegment] = []
    for lane in scenario.lanes:
        length = lane.length
        n = max(2, int(math.floor(length / sample_step)) + 1)
        svals = np.linspace(0.0, length, n)
        occluded = np.zeros(n, dtype=bool)
        for j, s in enumerate(svals):
            p = lane.point_at(s)
            in_range = np.linalg.norm(p - fov.origin) <= fov.max_range
            occluded[j] = in_range and not fov_contains(fov, p)
        j = 0
        while j < n:
            if occluded[j]:
                k = j
                while k + 1 < n and occluded[k + 1]:
                    k += 1
                s_start, s_end = float(svals[j]), float(svals[k])
                if s_end - s_start >= min_length:
                    out.append(OccludedSegment(lane.id, s_start, s_end))
                j = k + 1
            else:
                j += 1
    return out
