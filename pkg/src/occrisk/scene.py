"""Scenario domain model: lane graph, agent logs, ego route, occluders.

All coordinates are world-frame meters, angles in radians, times in seconds.
Every type is immutable after construction; all operations are pure functions.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

SCHEMA_VERSION = 1

# Default vehicle footprint (config choice; half-length / half-width of a 4.8 x 2.0 m car)
DEFAULT_HALF_LENGTH = 2.4
DEFAULT_HALF_WIDTH = 1.0

LANE_KINDS = ("drive", "turn", "merge")
AGENT_KINDS = ("vehicle", "phantom")


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected (N,2) point array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def arclength(path: np.ndarray) -> np.ndarray:
    """Cumulative arc length along a polyline, starting at 0."""
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


@dataclass(frozen=True, eq=False)
class LaneSegment:
    id: str
    centerline: np.ndarray  # (N,2)
    width: float
    successors: Tuple[str, ...] = ()
    predecessors: Tuple[str, ...] = ()
    kind: str = "drive"

    def __post_init__(self):
        object.__setattr__(self, "centerline", _as_points(self.centerline))
        object.__setattr__(self, "successors", tuple(self.successors))
        object.__setattr__(self, "predecessors", tuple(self.predecessors))

    @property
    def arclen(self) -> np.ndarray:
        return arclength(self.centerline)

    @property
    def length(self) -> float:
        return float(self.arclen[-1])

    def point_at(self, s: float) -> np.ndarray:
        """Centerline point at arc length s (clamped to [0, length])."""
        cl, al = self.centerline, self.arclen
        s = min(max(s, 0.0), al[-1])
        i = int(np.searchsorted(al, s, side="right")) - 1
        i = min(max(i, 0), len(cl) - 2)
        seg = al[i + 1] - al[i]
        u = 0.0 if seg <= 0 else (s - al[i]) / seg
        return cl[i] + u * (cl[i + 1] - cl[i])

    def tangent_at(self, s: float) -> float:
        """Heading (rad) of the centerline tangent at arc length s."""
        al = self.arclen
        s = min(max(s, 0.0), al[-1])
        i = int(np.searchsorted(al, s, side="right")) - 1
        i = min(max(i, 0), len(self.centerline) - 2)
        d = self.centerline[i + 1] - self.centerline[i]
        return float(math.atan2(d[1], d[0]))


@dataclass(frozen=True, eq=False)
class AgentLog:
    id: str
    kind: str  # vehicle | phantom
    half_length: float = DEFAULT_HALF_LENGTH
    half_width: float = DEFAULT_HALF_WIDTH
    states: np.ndarray = None  # (T,5) rows of (t, x, y, heading, speed)
    provenance: Optional[Dict[str, Any]] = None  # phantom origin: segment_lane, s, seed

    def __post_init__(self):
        arr = np.asarray(self.states, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 5:
            raise ValueError(f"agent states must be (T,5), got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "states", arr)

    def state_at(self, t: float) -> np.ndarray:
        """Linearly interpolated (x, y, heading, speed) at time t (clamped)."""
        ts = self.states[:, 0]
        if len(ts) == 1 or t <= ts[0]:
            return self.states[0, 1:].copy()
        if t >= ts[-1]:
            return self.states[-1, 1:].copy()
        i = int(np.searchsorted(ts, t, side="right")) - 1
        u = (t - ts[i]) / (ts[i + 1] - ts[i])
        a, b = self.states[i, 1:], self.states[i + 1, 1:]
        out = a + u * (b - a)
        # headings interpolate on the circle
        dh = (b[2] - a[2] + math.pi) % (2 * math.pi) - math.pi
        out[2] = a[2] + u * dh
        return out

    def footprint_corners(self, t: float) -> np.ndarray:
        """(4,2) oriented bounding box corners at time t."""
        x, y, h, _ = self.state_at(t)
        c, s = math.cos(h), math.sin(h)
        local = np.array(
            [
                [self.half_length, self.half_width],
                [-self.half_length, self.half_width],
                [-self.half_length, -self.half_width],
                [self.half_length, -self.half_width],
            ]
        )
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + np.array([x, y])


@dataclass(frozen=True, eq=False)
class EgoSpec:
    initial_state: Tuple[float, float, float, float]  # x, y, heading, speed
    reference_path: np.ndarray  # (N,2)
    d_desired: float
    half_length: float = DEFAULT_HALF_LENGTH
    half_width: float = DEFAULT_HALF_WIDTH

    def __post_init__(self):
        object.__setattr__(self, "reference_path", _as_points(self.reference_path))
        object.__setattr__(self, "initial_state", tuple(float(v) for v in self.initial_state))

    @property
    def path_arclen(self) -> np.ndarray:
        return arclength(self.reference_path)

    def point_at(self, s: float) -> np.ndarray:
        path, al = self.reference_path, self.path_arclen
        s = min(max(s, 0.0), al[-1])
        i = int(np.searchsorted(al, s, side="right")) - 1
        i = min(max(i, 0), len(path) - 2)
        seg = al[i + 1] - al[i]
        u = 0.0 if seg <= 0 else (s - al[i]) / seg
        return path[i] + u * (path[i + 1] - path[i])

    def heading_at(self, s: float) -> float:
        path, al = self.reference_path, self.path_arclen
        s = min(max(s, 0.0), al[-1])
        i = int(np.searchsorted(al, s, side="right")) - 1
        i = min(max(i, 0), len(path) - 2)
        d = path[i + 1] - path[i]
        return float(math.atan2(d[1], d[0]))


@dataclass(frozen=True, eq=False)
class Scenario:
    lanes: Tuple[LaneSegment, ...]
    agents: Tuple[AgentLog, ...]
    ego: EgoSpec
    occluders: Tuple[np.ndarray, ...] = ()  # convex polygons, each (M,2)
    dt: float = 0.1
    horizon: float = 8.0
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "lanes", tuple(self.lanes))
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "occluders", tuple(_as_points(p) for p in self.occluders))

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def lane_by_id(self, lane_id: str) -> LaneSegment:
        for lane in self.lanes:
            if lane.id == lane_id:
                return lane
        raise KeyError(lane_id)

    def agent_by_id(self, agent_id: str) -> AgentLog:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    def with_agents(self, agents: Sequence[AgentLog], metadata: Optional[Dict] = None) -> "Scenario":
        return Scenario(
            lanes=self.lanes,
            agents=tuple(agents),
            ego=self.ego,
            occluders=self.occluders,
            dt=self.dt,
            horizon=self.horizon,
            metadata=self.metadata if metadata is None else metadata,
        )

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        """(min_xy, max_xy) over lanes, agents, ego path, and occluders."""
        pts = [lane.centerline for lane in self.lanes]
        pts.append(self.ego.reference_path)
        for a in self.agents:
            pts.append(a.states[:, 1:3])
        for p in self.occluders:
            pts.append(p)
        allp = np.vstack(pts)
        return allp.min(axis=0), allp.max(axis=0)


# ---------------------------------------------------------------------------
# Geometric primitives
# ---------------------------------------------------------------------------

def _segment_projections(point: np.ndarray, path: np.ndarray):
    """Per-segment closest points and distances from `point` to polyline `path`."""
    a = path[:-1]
    d = path[1:] - a
    seg_len2 = np.einsum("ij,ij->i", d, d)
    seg_len2 = np.where(seg_len2 == 0.0, 1.0, seg_len2)
    u = np.clip(np.einsum("ij,ij->i", point - a, d) / seg_len2, 0.0, 1.0)
    closest = a + u[:, None] * d
    dist = np.linalg.norm(point - closest, axis=1)
    return u, closest, dist


def project_to_path(point, path: np.ndarray) -> Tuple[float, float]:
    """Project a point onto a polyline.

    Returns (s, lateral): arc length of the nearest path point and the signed
    perpendicular offset (+ left of travel direction). Beyond the endpoints the
    projection clamps to s=0 or s=L.
    """
    point = np.asarray(point, dtype=float)
    al = arclength(path)
    u, closest, dist = _segment_projections(point, path)
    i = int(np.argmin(dist))
    seg = path[i + 1] - path[i]
    seg_len = np.linalg.norm(seg)
    s = float(al[i] + u[i] * seg_len)
    if seg_len == 0.0:
        return s, float(dist[i])
    tangent = seg / seg_len
    rel = point - closest[i]
    lateral = float(tangent[0] * rel[1] - tangent[1] * rel[0])
    return s, lateral


def road_sdf(point, lanes: Sequence[LaneSegment]) -> float:
    """Distance to the drivable road region (0 inside, positive outside).

    The road region is the union of lane corridors: each centerline buffered by
    width/2 with round caps.
    """
    point = np.asarray(point, dtype=float)
    best = math.inf
    for lane in lanes:
        _, _, dist = _segment_projections(point, lane.centerline)
        best = min(best, float(dist.min()) - lane.width / 2.0)
    return max(0.0, best)


def road_sdf_batch(points: np.ndarray, lanes: Sequence[LaneSegment]):
    """Vectorized road_sdf with subgradients for a batch of points.

    Returns (sdf (N,), grad (N,2)); grad is the unit vector away from the
    nearest corridor for outside points, zero inside.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    best = np.full(n, math.inf)
    best_closest = np.zeros((n, 2))
    for lane in lanes:
        a = lane.centerline[:-1]
        d = lane.centerline[1:] - a
        seg_len2 = np.einsum("ij,ij->i", d, d)
        seg_len2 = np.where(seg_len2 == 0.0, 1.0, seg_len2)
        # (N, S) projection parameters
        rel = points[:, None, :] - a[None, :, :]
        u = np.clip(np.einsum("nsj,sj->ns", rel, d) / seg_len2[None, :], 0.0, 1.0)
        closest = a[None, :, :] + u[..., None] * d[None, :, :]
        dist = np.linalg.norm(points[:, None, :] - closest, axis=2)
        idx = np.argmin(dist, axis=1)
        val = dist[np.arange(n), idx] - lane.width / 2.0
        better = val < best
        best = np.where(better, val, best)
        best_closest[better] = closest[np.arange(n), idx][better]
    sdf = np.maximum(0.0, best)
    rel = points - best_closest
    norm = np.linalg.norm(rel, axis=1)
    outside = ((best > 0.0) & (norm > 0.0))[:, None]
    grad = np.where(outside, rel / np.maximum(norm, 1e-30)[:, None], 0.0)
    return sdf, grad


def road_sdf_grad(point, lanes: Sequence[LaneSegment]) -> np.ndarray:
    """Subgradient of road_sdf: unit vector away from the nearest corridor, zero inside."""
    point = np.asarray(point, dtype=float)
    best = math.inf
    best_closest = None
    for lane in lanes:
        _, closest, dist = _segment_projections(point, lane.centerline)
        i = int(np.argmin(dist))
        v = float(dist[i]) - lane.width / 2.0
        if v < best:
            best = v
            best_closest = closest[i]
    if best <= 0.0 or best_closest is None:
        return np.zeros(2)
    rel = point - best_closest
    n = np.linalg.norm(rel)
    return rel / n if n > 0 else np.zeros(2)


def ego_log_trajectory(scenario: Scenario) -> np.ndarray:
    """Logged ego motion: constant initial speed along the reference path.

    Returns (T+1, 4) rows of (x, y, heading, speed) on the scenario time grid.
    """
    v0 = scenario.ego.initial_state[3]
    n = scenario.n_steps
    out = np.zeros((n + 1, 4))
    for i in range(n + 1):
        s = v0 * i * scenario.dt
        out[i, :2] = scenario.ego.point_at(s)
        out[i, 2] = scenario.ego.heading_at(s)
        out[i, 3] = v0
    return out


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate(scenario: Scenario) -> List[str]:
    """Check all type invariants; returns a list of human-readable violations."""
    out: List[str] = []
    lane_ids = set()
    for lane in scenario.lanes:
        if lane.id in lane_ids:
            out.append(f"lane {lane.id}: duplicate id")
        lane_ids.add(lane.id)
        if len(lane.centerline) < 2:
            out.append(f"lane {lane.id}: centerline has fewer than 2 points")
        else:
            seg = np.linalg.norm(np.diff(lane.centerline, axis=0), axis=1)
            if np.any(seg == 0.0):
                out.append(f"lane {lane.id}: consecutive centerline points coincide")
        if lane.width <= 0:
            out.append(f"lane {lane.id}: width must be > 0")
        if lane.kind not in LANE_KINDS:
            out.append(f"lane {lane.id}: unknown kind {lane.kind!r}")
    for lane in scenario.lanes:
        for ref in list(lane.successors) + list(lane.predecessors):
            if ref not in lane_ids:
                out.append(f"lane {lane.id}: reference to unknown lane {ref!r}")

    agent_ids = set()
    for a in scenario.agents:
        if a.id in agent_ids:
            out.append(f"agent {a.id}: duplicate id")
        agent_ids.add(a.id)
        if a.kind not in AGENT_KINDS:
            out.append(f"agent {a.id}: unknown kind {a.kind!r}")
        ts = a.states[:, 0]
        if len(ts) > 1:
            dts = np.diff(ts)
            if np.any(dts <= 0):
                out.append(f"agent {a.id}: timestamps not strictly increasing")
            elif not np.allclose(dts, dts[0], rtol=0, atol=1e-9):
                out.append(f"agent {a.id}: non-uniform timestep")
        if np.any(a.states[:, 4] < 0):
            out.append(f"agent {a.id}: negative speed")
        if a.kind == "phantom":
            if not a.provenance or "seed" not in a.provenance:
                out.append(f"agent {a.id}: phantom missing provenance seed")
        elif len(ts) > 1:
            # logged vehicles must span the full horizon; phantoms may carry
            # only their sampled initial state until trajectories are generated
            if ts[0] > 1e-9 or ts[-1] < scenario.horizon - 1e-9:
                out.append(f"agent {a.id}: log does not span [0, horizon]")

    al = scenario.ego.path_arclen
    if np.any(np.diff(al) <= 0):
        out.append("ego: reference path arc length not strictly increasing")
    start = np.asarray(scenario.ego.initial_state[:2])
    if np.linalg.norm(start - scenario.ego.reference_path[0]) > 1.0:
        out.append("ego: initial position not at reference path start")

    if scenario.dt <= 0:
        out.append("scenario: dt must be > 0")
    if scenario.horizon <= 0:
        out.append("scenario: horizon must be > 0")
    return out


# ---------------------------------------------------------------------------
# Serialization (schema version 1)
# ---------------------------------------------------------------------------

def _points_to_json(arr: np.ndarray) -> list:
    return [[float(x), float(y)] for x, y in arr]


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "schema": SCHEMA_VERSION,
        "lanes": [
            {
                "id": lane.id,
                "centerline": _points_to_json(lane.centerline),
                "width": lane.width,
                "successors": list(lane.successors),
                "predecessors": list(lane.predecessors),
                "kind": lane.kind,
            }
            for lane in scenario.lanes
        ],
        "agents": [
            {
                "id": a.id,
                "kind": a.kind,
                "half_length": a.half_length,
                "half_width": a.half_width,
                "states": [[float(v) for v in row] for row in a.states],
                **({"provenance": a.provenance} if a.provenance else {}),
            }
            for a in scenario.agents
        ],
        "ego": {
            "initial_state": list(scenario.ego.initial_state),
            "reference_path": _points_to_json(scenario.ego.reference_path),
            "d_desired": scenario.ego.d_desired,
            "half_length": scenario.ego.half_length,
            "half_width": scenario.ego.half_width,
        },
        "occluders": [_points_to_json(p) for p in scenario.occluders],
        "dt": scenario.dt,
        "horizon": scenario.horizon,
        "metadata": scenario.metadata,
    }


def scenario_from_dict(d: dict) -> Scenario:
    if d.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema version {d.get('schema')!r}")
    lanes = tuple(
        LaneSegment(
            id=l["id"],
            centerline=l["centerline"],
            width=float(l["width"]),
            successors=tuple(l.get("successors", [])),
            predecessors=tuple(l.get("predecessors", [])),
            kind=l.get("kind", "drive"),
        )
        for l in d["lanes"]
    )
    agents = tuple(
        AgentLog(
            id=a["id"],
            kind=a["kind"],
            half_length=float(a.get("half_length", DEFAULT_HALF_LENGTH)),
            half_width=float(a.get("half_width", DEFAULT_HALF_WIDTH)),
            states=a["states"],
            provenance=a.get("provenance"),
        )
        for a in d["agents"]
    )
    e = d["ego"]
    ego = EgoSpec(
        initial_state=tuple(e["initial_state"]),
        reference_path=e["reference_path"],
        d_desired=float(e["d_desired"]),
        half_length=float(e.get("half_length", DEFAULT_HALF_LENGTH)),
        half_width=float(e.get("half_width", DEFAULT_HALF_WIDTH)),
    )
    return Scenario(
        lanes=lanes,
        agents=agents,
        ego=ego,
        occluders=tuple(np.asarray(p, dtype=float) for p in d.get("occluders", [])),
        dt=float(d["dt"]),
        horizon=float(d["horizon"]),
        metadata=d.get("metadata", {}),
    )


def dump_scenario(scenario: Scenario, path) -> None:
    with open(path, "w") as f:
        json.dump(scenario_to_dict(scenario), f, indent=1)
        f.write("\n")


def load_scenario(path) -> Scenario:
    with open(path) as f:
        return scenario_from_dict(json.load(f))
