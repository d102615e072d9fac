"""Kinematic rollouts and multimodal nominal trajectory generation.

Controls are (accel, yaw_rate); with yaw-rate control the bicycle reduces to
the unicycle update, integrated with explicit Euler on the 10 Hz grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Set, Tuple

import numpy as np

from .scene import LaneSegment, Scenario, arclength, project_to_path

DEFAULT_A_MAX = 6.0
DEFAULT_OMEGA_MAX = 1.0
DEFAULT_V_MIN_ACTIVE = 0.5
DEFAULT_MODE_COUNT = 6

# nominal lane-following controller gains
_SPEED_GAIN = 3.0
_HEADING_GAIN = 2.0
_LOOKAHEAD_MIN = 4.0
_LOOKAHEAD_SPEED = 0.6
_END_BRAKE_DECEL = 3.0  # comfort deceleration when approaching the route end
_END_MARGIN = 2.0


class OffRouteStart(ValueError):
    """Agent starts too far from the requested route."""


@dataclass(frozen=True, eq=False)
class ControlSequence:
    controls: np.ndarray  # (T,2) rows of (accel, yaw_rate)
    dt: float

    def __post_init__(self):
        arr = np.asarray(self.controls, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise ValueError(f"controls must be (T,2), got {arr.shape}")
        object.__setattr__(self, "controls", arr)

    def clamped(self, a_max: float = DEFAULT_A_MAX, omega_max: float = DEFAULT_OMEGA_MAX) -> "ControlSequence":
        c = self.controls.copy()
        c[:, 0] = np.clip(c[:, 0], -a_max, a_max)
        c[:, 1] = np.clip(c[:, 1], -omega_max, omega_max)
        return ControlSequence(c, self.dt)


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray  # (T+1,4) rows of (x, y, heading, speed)
    dt: float
    agent_id: str = ""
    mode_id: int = 0

    def __post_init__(self):
        arr = np.asarray(self.states, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise ValueError(f"states must be (T+1,4), got {arr.shape}")
        object.__setattr__(self, "states", arr)

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]


def rollout(initial_state, controls: ControlSequence, agent_id: str = "", mode_id: int = 0) -> Trajectory:
    """Explicit Euler integration of the unicycle update; speed floored at 0."""
    x, y, psi, v = (float(s) for s in initial_state)
    dt = controls.dt
    u = controls.controls
    states = np.empty((len(u) + 1, 4))
    states[0] = (x, y, psi, v)
    for i, (acc, yaw) in enumerate(u):
        x += v * math.cos(psi) * dt
        y += v * math.sin(psi) * dt
        psi += yaw * dt
        v = max(0.0, v + acc * dt)
        states[i + 1] = (x, y, psi, v)
    return Trajectory(states=states, dt=dt, agent_id=agent_id, mode_id=mode_id)


def _route_point_and_heading(route: np.ndarray, al: np.ndarray, s: float) -> Tuple[np.ndarray, float]:
    s = min(max(s, 0.0), al[-1])
    i = int(np.searchsorted(al, s, side="right")) - 1
    i = min(max(i, 0), len(route) - 2)
    seg = al[i + 1] - al[i]
    u = 0.0 if seg <= 0 else (s - al[i]) / seg
    p = route[i] + u * (route[i + 1] - route[i])
    d = route[i + 1] - route[i]
    return p, math.atan2(d[1], d[0])


def nominal_controls(
    initial_state,
    route: np.ndarray,
    target_speed: float,
    n_steps: int,
    dt: float = 0.1,
    a_max: float = DEFAULT_A_MAX,
    omega_max: float = DEFAULT_OMEGA_MAX,
    lane_width: float = 4.0,
) -> ControlSequence:
    """Pure-pursuit steering plus proportional speed regulation along a route.

    The controller is simulated closed-loop to produce an open-loop control
    sequence for the whole horizon.
    """
    route = np.asarray(route, dtype=float)
    al = arclength(route)
    x, y, psi, v = (float(s) for s in initial_state)
    s0, lat0 = project_to_path((x, y), route)
    if abs(lat0) > 2.0 * lane_width:
        raise OffRouteStart(f"start {abs(lat0):.1f} m off the route centerline")
    u = np.empty((n_steps, 2))
    for i in range(n_steps):
        s, _ = project_to_path((x, y), route)
        lookahead = max(_LOOKAHEAD_MIN, _LOOKAHEAD_SPEED * v)
        target, tang = _route_point_and_heading(route, al, s + lookahead)
        rel = target - (x, y)
        if np.linalg.norm(rel) > 1e-9:
            desired = math.atan2(rel[1], rel[0])
        else:
            desired = tang
        err = (desired - psi + math.pi) % (2.0 * math.pi) - math.pi
        yaw = float(np.clip(_HEADING_GAIN * err, -omega_max, omega_max))
        # brake to a stop before running off the end of the route
        remaining = max(0.0, al[-1] - s - _END_MARGIN)
        v_end = math.sqrt(2.0 * _END_BRAKE_DECEL * remaining)
        acc = float(np.clip(_SPEED_GAIN * (min(target_speed, v_end) - v), -a_max, a_max))
        u[i] = (acc, yaw)
        x += v * math.cos(psi) * dt
        y += v * math.sin(psi) * dt
        psi += yaw * dt
        v = max(0.0, v + acc * dt)
    return ControlSequence(u, dt)


def nearest_lane(scenario: Scenario, point) -> LaneSegment:
    best, best_d = None, math.inf
    for lane in scenario.lanes:
        _, lat = project_to_path(point, lane.centerline)
        d = abs(lat)
        if d < best_d:
            best, best_d = lane, d
    if best is None:
        raise ValueError("scenario has no lanes")
    return best


def _concat_route(lanes: Sequence[LaneSegment]) -> np.ndarray:
    pts = [lanes[0].centerline]
    for lane in lanes[1:]:
        cl = lane.centerline
        if np.allclose(cl[0], pts[-1][-1]):
            cl = cl[1:]
        pts.append(cl)
    return np.vstack(pts)


def enumerate_routes(scenario: Scenario, lane: LaneSegment, depth: int = 2) -> List[np.ndarray]:
    """Route polylines along successor chains up to the given depth."""
    chains: List[List[LaneSegment]] = [[lane]]
    for _ in range(depth):
        extended: List[List[LaneSegment]] = []
        for chain in chains:
            succs = chain[-1].successors
            if not succs:
                extended.append(chain)
            else:
                for sid in succs:
                    extended.append(chain + [scenario.lane_by_id(sid)])
        chains = extended
    seen = set()
    routes = []
    for chain in chains:
        key = tuple(l.id for l in chain)
        if key not in seen:
            seen.add(key)
            routes.append(_concat_route(chain))
    return routes


def multimodal(scenario: Scenario, agent_id: str, n_modes: int = DEFAULT_MODE_COUNT) -> List[Trajectory]:
    """J nominal mode trajectories for one agent.

    One mode per reachable successor branch; remaining modes reuse branches
    with target-speed perturbations {1.0x, 0.7x, 1.3x} of the current speed.
    """
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    agent = scenario.agent_by_id(agent_id)
    state = np.concatenate([agent.states[0, 1:3], agent.states[0, 3:5]])
    lane = nearest_lane(scenario, state[:2])
    routes = enumerate_routes(scenario, lane)
    factors = (1.0, 0.7, 1.3)
    out: List[Trajectory] = []
    for mode in range(n_modes):
        route = routes[mode % len(routes)]
        factor = factors[(mode // len(routes)) % len(factors)]
        ctrls = nominal_controls(
            state, route, target_speed=factor * state[3],
            n_steps=scenario.n_steps, dt=scenario.dt,
        )
        out.append(rollout(state, ctrls, agent_id=agent_id, mode_id=mode))
    return out


def filter_active(scenario: Scenario, v_min: float = DEFAULT_V_MIN_ACTIVE) -> Set[str]:
    """Ids of agents moving at least v_min at t=0 (inclusive); phantoms always pass."""
    if v_min < 0:
        raise ValueError("v_min must be >= 0")
    out = set()
    for a in scenario.agents:
        if a.kind == "phantom" or a.states[0, 4] >= v_min:
            out.add(a.id)
    return out


def log_trajectory(scenario: Scenario, agent_id: str) -> Trajectory:
    """The agent's logged states resampled onto the scenario time grid."""
    agent = scenario.agent_by_id(agent_id)
    n = scenario.n_steps
    states = np.empty((n + 1, 4))
    for i in range(n + 1):
        states[i] = agent.state_at(i * scenario.dt)
    return Trajectory(states=states, dt=scenario.dt, agent_id=agent_id, mode_id=0)
