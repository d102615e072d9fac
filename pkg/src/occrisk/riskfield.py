"""Unified risk grid: flow risk, collision risk, fusion, smoothing, queries.

Each trajectory point (or collision event) contributes exp(-decay * D) to its
single containing cell, D being the distance to that cell's center; spatial
spreading is delegated entirely to the Gaussian post-filter.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from .scene import EgoSpec, Scenario
from .trajgen import Trajectory

DEFAULT_RESOLUTION = 0.5
DEFAULT_DECAY = 2.0
DEFAULT_DELTA = 3.0
DEFAULT_ALPHA = 0.4
DEFAULT_BETA = 0.6
DEFAULT_SIGMA_CELLS = 2.0
DEFAULT_MARGIN = 10.0
DEFAULT_ANCHOR_COUNT = 20


class PathTooShort(ValueError):
    """Ego path too short to host the requested anchor count."""


@dataclass
class GridSpec:
    origin: np.ndarray  # (2,) lower-left cell corner
    resolution: float
    n1: int  # columns (x)
    n2: int  # rows (y)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)

    @classmethod
    def for_scenario(cls, scenario: Scenario, resolution: float = DEFAULT_RESOLUTION,
                     margin: float = DEFAULT_MARGIN) -> "GridSpec":
        lo, hi = scenario.bounding_box()
        lo = lo - margin
        hi = hi + margin
        n1 = int(math.ceil((hi[0] - lo[0]) / resolution))
        n2 = int(math.ceil((hi[1] - lo[1]) / resolution))
        return cls(origin=lo, resolution=resolution, n1=n1, n2=n2)

    def cell_center(self, i1: int, i2: int) -> np.ndarray:
        return self.origin + (np.array([i1, i2]) + 0.5) * self.resolution

    def cell_of(self, point) -> Optional[Tuple[int, int]]:
        rel = (np.asarray(point, dtype=float) - self.origin) / self.resolution
        i1, i2 = int(math.floor(rel[0])), int(math.floor(rel[1]))
        if 0 <= i1 < self.n1 and 0 <= i2 < self.n2:
            return i1, i2
        return None


@dataclass(frozen=True)
class CollisionEvent:
    t: float
    x: float
    y: float
    ego_id: str
    agent_id: str
    mode_id: int


@dataclass
class RiskGrid:
    spec: GridSpec
    flow: np.ndarray        # (n2, n1) row-major, index [i2, i1]
    collision: np.ndarray
    total: np.ndarray
    decay: float = DEFAULT_DECAY
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    sigma_cells: float = DEFAULT_SIGMA_CELLS
    dropped_points: int = 0


@dataclass
class AnchorRisk:
    s: np.ndarray            # (N_a,) anchor arc lengths
    risk: np.ndarray         # (N_a,) risk at each anchor
    time_of_arrival: np.ndarray  # (N_a,) seconds
    curve_s: np.ndarray      # dense arc-length samples for R(s) lookups
    curve_risk: np.ndarray   # smoothed risk along the path

    def risk_at_s(self, s) -> np.ndarray:
        return np.interp(s, self.curve_s, self.curve_risk)


# ---------------------------------------------------------------------------
# Accumulation
# ---------------------------------------------------------------------------

def _accumulate(points: np.ndarray, spec: GridSpec, decay: float) -> Tuple[np.ndarray, int]:
    layer = np.zeros((spec.n2, spec.n1))
    if len(points) == 0:
        return layer, 0
    rel = (points - spec.origin) / spec.resolution
    idx = np.floor(rel).astype(int)
    inside = (idx[:, 0] >= 0) & (idx[:, 0] < spec.n1) & (idx[:, 1] >= 0) & (idx[:, 1] < spec.n2)
    dropped = int((~inside).sum())
    idx = idx[inside]
    pts = points[inside]
    centers = spec.origin + (idx + 0.5) * spec.resolution
    weights = np.exp(-decay * np.linalg.norm(pts - centers, axis=1))
    np.add.at(layer, (idx[:, 1], idx[:, 0]), weights)
    return layer, dropped


def flow_risk(
    trajectories: Sequence[Trajectory],
    active_ids: Iterable[str],
    spec: GridSpec,
    decay: float = DEFAULT_DECAY,
) -> Tuple[np.ndarray, int]:
    """Flow layer: density of predicted trajectory points of active agents."""
    active = set(active_ids)
    pts = [t.positions for t in trajectories if t.agent_id in active]
    if not pts:
        return np.zeros((spec.n2, spec.n1)), 0
    return _accumulate(np.vstack(pts), spec, decay)


def collision_events(
    ego_states: np.ndarray,
    trajectories: Sequence[Trajectory],
    delta: float = DEFAULT_DELTA,
    dt: float = 0.1,
    ego_id: str = "ego",
) -> List[CollisionEvent]:
    """Every (t, agent, mode) whose centroid passes within delta of the ego.

    Events are located at the agent's position (the hazard's location).
    """
    out: List[CollisionEvent] = []
    ego_pos = np.asarray(ego_states)[:, :2]
    for traj in trajectories:
        n = min(len(ego_pos), len(traj.states))
        d = np.linalg.norm(ego_pos[:n] - traj.positions[:n], axis=1)
        for i in np.nonzero(d < delta)[0]:
            p = traj.positions[i]
            out.append(CollisionEvent(t=float(i * dt), x=float(p[0]), y=float(p[1]),
                                      ego_id=ego_id, agent_id=traj.agent_id, mode_id=traj.mode_id))
    return out


def collision_risk(events: Sequence[CollisionEvent], spec: GridSpec,
                   decay: float = DEFAULT_DECAY) -> Tuple[np.ndarray, int]:
    """Collision layer: same accumulation rule as flow_risk over event locations."""
    if not events:
        return np.zeros((spec.n2, spec.n1)), 0
    pts = np.array([[e.x, e.y] for e in events])
    return _accumulate(pts, spec, decay)


def fuse_and_finish(
    flow: np.ndarray,
    collision: np.ndarray,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    sigma_cells: float = DEFAULT_SIGMA_CELLS,
) -> np.ndarray:
    """Linear fusion, Gaussian blur (std in cells, truncated at 3 sigma), max-normalization."""
    total = alpha * flow + beta * collision
    if sigma_cells > 0:
        total = gaussian_filter(total, sigma=sigma_cells, truncate=3.0, mode="constant")
    peak = total.max()
    if peak > 0:
        total = total / peak
    return total


def build_risk_grid(
    scenario: Scenario,
    trajectories: Sequence[Trajectory],
    active_ids: Iterable[str],
    ego_states: np.ndarray,
    resolution: float = DEFAULT_RESOLUTION,
    decay: float = DEFAULT_DECAY,
    delta: float = DEFAULT_DELTA,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
    sigma_cells: float = DEFAULT_SIGMA_CELLS,
) -> RiskGrid:
    spec = GridSpec.for_scenario(scenario, resolution=resolution)
    active = set(active_ids)
    flow, dropped_f = flow_risk(trajectories, active, spec, decay)
    events = collision_events(ego_states, [t for t in trajectories if t.agent_id in active],
                              delta=delta, dt=scenario.dt)
    coll, dropped_c = collision_risk(events, spec, decay)
    total = fuse_and_finish(flow, coll, alpha, beta, sigma_cells)
    return RiskGrid(spec=spec, flow=flow, collision=coll, total=total, decay=decay,
                    alpha=alpha, beta=beta, sigma_cells=sigma_cells,
                    dropped_points=dropped_f + dropped_c)


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------

def risk_at(grid: RiskGrid, point) -> float:
    """Bilinear interpolation of the total layer; zero outside the grid."""
    spec = grid.spec
    rel = (np.asarray(point, dtype=float) - spec.origin) / spec.resolution - 0.5
    x, y = rel
    i1, i2 = math.floor(x), math.floor(y)
    fx, fy = x - i1, y - i2
    val = 0.0
    for (a, b, w) in (
        (i1, i2, (1 - fx) * (1 - fy)),
        (i1 + 1, i2, fx * (1 - fy)),
        (i1, i2 + 1, (1 - fx) * fy),
        (i1 + 1, i2 + 1, fx * fy),
    ):
        if 0 <= a < spec.n1 and 0 <= b < spec.n2:
            val += w * grid.total[b, a]
    return float(val)


def anchor_risks(
    grid: RiskGrid,
    ego: EgoSpec,
    profile_speeds: Optional[np.ndarray] = None,
    dt: float = 0.1,
    n_anchors: int = DEFAULT_ANCHOR_COUNT,
    curve_step: float = 0.5,
) -> AnchorRisk:
    """Uniform arc-length anchors with risk lookups and a smoothed R(s) curve.

    Arrival times come from the velocity profile when given, else from uniform
    progress over the horizon.
    """
    length = float(ego.path_arclen[-1])
    if length <= n_anchors * grid.spec.resolution:
        raise PathTooShort(f"path length {length:.1f} m cannot host {n_anchors} anchors")
    s_anchor = np.linspace(0.0, length, n_anchors)
    risk = np.array([risk_at(grid, ego.point_at(s)) for s in s_anchor])

    if profile_speeds is not None:
        s_prof = np.concatenate([[0.0], np.cumsum(profile_speeds) * dt])
        t_prof = np.arange(len(s_prof)) * dt
        toa = np.interp(s_anchor, s_prof, t_prof, right=t_prof[-1])
    else:
        v_nominal = max(ego.initial_state[3], 1e-6)
        toa = s_anchor / v_nominal

    curve_s = np.arange(0.0, length + curve_step, curve_step)
    raw = np.array([risk_at(grid, ego.point_at(s)) for s in curve_s])
    sigma = (length / n_anchors) / curve_step
    curve = gaussian_filter(raw, sigma=sigma, truncate=3.0, mode="nearest")
    return AnchorRisk(s=s_anchor, risk=risk, time_of_arrival=toa, curve_s=curve_s, curve_risk=curve)


# ---------------------------------------------------------------------------
# File format: JSON header line + little-endian float32 row-major payloads
# ---------------------------------------------------------------------------

_LAYERS = ("flow", "collision", "total")


def dump_grid(grid: RiskGrid, path) -> None:
    header = {
        "origin": [float(v) for v in grid.spec.origin],
        "resolution": grid.spec.resolution,
        "n1": grid.spec.n1,
        "n2": grid.spec.n2,
        "decay": grid.decay,
        "alpha": grid.alpha,
        "beta": grid.beta,
        "sigma_cells": grid.sigma_cells,
        "dropped_points": grid.dropped_points,
        "layers": list(_LAYERS),
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode() + b"\n")
        for name in _LAYERS:
            layer = getattr(grid, name)
            f.write(layer.astype("<f4").tobytes(order="C"))


def load_grid(path) -> RiskGrid:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        spec = GridSpec(origin=np.array(header["origin"]), resolution=header["resolution"],
                        n1=header["n1"], n2=header["n2"])
        layers = {}
        count = spec.n1 * spec.n2
        for name in header["layers"]:
            raw = f.read(count * 4)
            layers[name] = np.frombuffer(raw, dtype="<f4").astype(float).reshape(spec.n2, spec.n1)
    return RiskGrid(spec=spec, flow=layers["flow"], collision=layers["collision"],
                    total=layers["total"], decay=header["decay"], alpha=header["alpha"],
                    beta=header["beta"], sigma_cells=header["sigma_cells"],
                    dropped_points=header["dropped_points"])


def export_pgm(grid: RiskGrid, path, levels: int = 255) -> None:
    """ASCII portable graymap of the total layer (top row = max y)."""
    img = np.flipud((grid.total * levels).round().astype(int))
    with open(path, "w") as f:
        f.write(f"P2\n{grid.spec.n1} {grid.spec.n2}\n{levels}\n")
        for row in img:
            f.write(" ".join(str(v) for v in row) + "\n")
