"""Evaluation metrics: TTC, risk score, critical moments, generation realism.

TTC uses constant-velocity extrapolation from each timestep with disc
footprints; pairs are ego vs every agent (agent-agent pairs excluded).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .scene import Scenario, road_sdf_batch
from .planner import footprint_radius
from .riskfield import RiskGrid, risk_at
from .trajgen import Trajectory

DEFAULT_TTC_CAP = 100.0
DEFAULT_CRITICAL_TTC = 3.0
DEFAULT_INTERACTION_RADIUS = 20.0


@dataclass
class EvalReport:
    ttc_min: float
    ttc_avg: float
    risk_score: float
    critical_moments: int
    onroad_rate: float = 1.0
    offroad_dist: float = 0.0
    interaction_agents: int = 0


def _pair_ttc(rel_p: np.ndarray, rel_v: np.ndarray, radius: float, cap: float) -> float:
    """Smallest tau >= 0 with ||rel_p + rel_v*tau|| <= radius, else cap."""
    c = float(rel_p @ rel_p) - radius * radius
    if c <= 0.0:
        return 0.0
    a = float(rel_v @ rel_v)
    b = 2.0 * float(rel_p @ rel_v)
    if a == 0.0:
        return cap
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return cap
    root = (-b - math.sqrt(disc)) / (2.0 * a)
    if root < 0.0:
        return cap
    return min(root, cap)


def _velocities(states: np.ndarray) -> np.ndarray:
    """(N,2) velocity vectors from (N,4) states of (x, y, heading, speed)."""
    return states[:, 3:4] * np.column_stack([np.cos(states[:, 2]), np.sin(states[:, 2])])


def ttc_matrix(
    ego_states: np.ndarray,
    agent_states: Sequence[np.ndarray],
    radii: Sequence[float],
    ttc_cap: float = DEFAULT_TTC_CAP,
) -> np.ndarray:
    """(T, K) time-to-collision per timestep and ego-agent pair.

    `ego_states` and each member of `agent_states` are (N,4) rows of
    (x, y, heading, speed) on a shared time grid; `radii` are the combined
    footprint radii per pair.
    """
    T = len(ego_states)
    K = len(agent_states)
    out = np.full((T, max(K, 1)), ttc_cap)
    if K == 0:
        return out[:, :0].reshape(T, 0)
    ego_v = _velocities(ego_states)
    for k, (states, radius) in enumerate(zip(agent_states, radii)):
        n = min(T, len(states))
        av = _velocities(states)
        for t in range(n):
            rel_p = ego_states[t, :2] - states[t, :2]
            rel_v = ego_v[t] - av[t]
            out[t, k] = _pair_ttc(rel_p, rel_v, radius, ttc_cap)
    return out


def ttc_min(matrix: np.ndarray) -> float:
    if matrix.size == 0:
        return DEFAULT_TTC_CAP
    return float(matrix.min())


def ttc_avg(matrix: np.ndarray) -> float:
    if matrix.size == 0:
        return DEFAULT_TTC_CAP
    return float(matrix.mean())


def critical_moments(matrix: np.ndarray, threshold: float = DEFAULT_CRITICAL_TTC) -> int:
    """Timesteps whose minimum TTC is strictly below the threshold."""
    if matrix.size == 0:
        return 0
    return int(np.sum(matrix.min(axis=1) < threshold))


def risk_score(
    grid: RiskGrid,
    ego_positions: np.ndarray,
    speeds: np.ndarray,
    dt: float,
) -> float:
    """Path integral of risk x speed over the ego trajectory."""
    n = min(len(ego_positions), len(speeds))
    total = 0.0
    for i in range(n):
        total += risk_at(grid, ego_positions[i]) * speeds[i] * dt
    return float(total)


def ego_profile_states(scenario: Scenario, speeds: np.ndarray) -> np.ndarray:
    """(T,4) ego states induced by a velocity profile along the reference path."""
    s = np.concatenate([[0.0], np.cumsum(speeds[:-1])]) * scenario.dt
    out = np.empty((len(speeds), 4))
    for i, si in enumerate(s):
        out[i, :2] = scenario.ego.point_at(si)
        out[i, 2] = scenario.ego.heading_at(si)
        out[i, 3] = speeds[i]
    return out


def scene_ttc_matrix(
    scenario: Scenario,
    ego_states: np.ndarray,
    ttc_cap: float = DEFAULT_TTC_CAP,
    include_phantoms: bool = True,
) -> np.ndarray:
    """TTC matrix of the planned ego against every agent log in the scene."""
    r_ego = footprint_radius(scenario.ego.half_length, scenario.ego.half_width)
    agent_states = []
    radii = []
    for a in scenario.agents:
        if a.kind == "phantom" and (not include_phantoms or len(a.states) < 2):
            continue
        n = len(ego_states)
        states = np.empty((n, 4))
        for i in range(n):
            states[i] = a.state_at(i * scenario.dt)
        agent_states.append(states)
        radii.append(r_ego + footprint_radius(a.half_length, a.half_width))
    return ttc_matrix(ego_states, agent_states, radii, ttc_cap)


def generation_metrics(
    scenario: Scenario,
    phantom_trajectories: Sequence[Trajectory],
    ttc_cap: float = DEFAULT_TTC_CAP,
    interaction_radius: float = DEFAULT_INTERACTION_RADIUS,
) -> Dict[str, float]:
    """Scenario-generation quality: TTC, on-road rate, off-road distance, interactions.

    On-road statistics cover every generated phantom trajectory point; the
    interaction count is the number of active agents whose track approaches
    the ego reference path within the interaction radius.
    """
    from .scene import ego_log_trajectory

    ego_states = ego_log_trajectory(scenario)
    matrix = scene_ttc_matrix(scenario, ego_states, ttc_cap=ttc_cap)
    if phantom_trajectories:
        pts = np.vstack([traj.positions for traj in phantom_trajectories])
        sdf_arr, _ = road_sdf_batch(pts, scenario.lanes)
    else:
        sdf_arr = np.zeros(0)
    if len(sdf_arr):
        on = sdf_arr == 0.0
        onroad_rate = float(on.mean())
        off = sdf_arr[~on]
        offroad_dist = float(off.mean()) if len(off) else 0.0
    else:
        onroad_rate = 1.0
        offroad_dist = 0.0

    path = scenario.ego.reference_path
    interactions = 0
    for a in scenario.agents:
        pts = a.states[:, 1:3]
        dmin = min(
            float(np.min(np.linalg.norm(path - p, axis=1))) for p in pts
        )
        if dmin < interaction_radius:
            interactions += 1
    return {
        "ttc": ttc_min(matrix),
        "onroad_rate": onroad_rate,
        "offroad_dist": offroad_dist,
        "interaction_agents": interactions,
    }
