"""Risk-aware velocity-profile optimization along the ego reference path.

One convexified engine serves all four planner variants: the inner problem
freezes arc-length positions, risk lookups, and the collision term's
linearization, solves a strictly convex QP in the speeds, re-integrates the
positions, and repeats, keeping the best iterate under the true cost.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import cvxpy as cp
import numpy as np

from .scene import AgentLog, Scenario
from .trajgen import log_trajectory
from .visibility import FieldOfView, OccludedSegment

DEFAULT_W_SMOOTH = 1.0
DEFAULT_W_REACH = 0.05
DEFAULT_W_RISK = 50.0
DEFAULT_W_COLLISION = 10.0
DEFAULT_V_CAP = 15.0
DEFAULT_A_MAX = 3.0
DEFAULT_A_BRAKE = 3.0
DEFAULT_SRQ_MARGIN = 2.0
DEFAULT_CONFLICT_RADIUS = 3.0

_SOLVE_TOL = 1e-9
_OUTER_TOL = 1e-3
_MAX_OUTER = 20


class Infeasible(RuntimeError):
    """The constraints admit no velocity profile."""


@dataclass(frozen=True)
class PlannerWeights:
    w_smooth: float = DEFAULT_W_SMOOTH
    w_reach: float = DEFAULT_W_REACH
    w_risk: float = DEFAULT_W_RISK
    w_collision: float = DEFAULT_W_COLLISION

    def __post_init__(self):
        if min(self.w_smooth, self.w_reach, self.w_risk, self.w_collision) < 0:
            raise ValueError("weights must be nonnegative")


@dataclass(frozen=True)
class PlannerLimits:
    v_cap: float = DEFAULT_V_CAP
    a_max: float = DEFAULT_A_MAX


@dataclass(frozen=True, eq=False)
class VelocityProfile:
    v: np.ndarray  # (T,) speeds
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float))

    @property
    def s(self) -> np.ndarray:
        """Induced arc-length positions, s_0 = 0."""
        return np.concatenate([[0.0], np.cumsum(self.v[:-1])]) * self.dt


def footprint_radius(half_length: float, half_width: float) -> float:
    return math.hypot(half_length, half_width)


Obstacle = Tuple[np.ndarray, float]  # positions (N,2) on the time grid, combined radius


def visible_obstacles(scenario: Scenario) -> List[Obstacle]:
    """Position tracks of logged (non-phantom) agents plus combined radii."""
    r_ego = footprint_radius(scenario.ego.half_length, scenario.ego.half_width)
    out = []
    for a in scenario.agents:
        if a.kind == "phantom":
            continue
        traj = log_trajectory(scenario, a.id)
        out.append((traj.positions, r_ego + footprint_radius(a.half_length, a.half_width)))
    return out


def _obstacle_distances(scenario: Scenario, s: np.ndarray, obstacles: Sequence[Obstacle]):
    """Per-step floored distance to the nearest obstacle and its d/ds derivative."""
    T = len(s)
    d = np.full(T, np.inf)
    dd_ds = np.zeros(T)
    for i in range(T):
        p = scenario.ego.point_at(s[i])
        h = scenario.ego.heading_at(s[i])
        tangent = np.array([math.cos(h), math.sin(h)])
        for positions, radius in obstacles:
            if i >= len(positions):
                continue
            rel = p - positions[i]
            dist = np.linalg.norm(rel)
            val = dist - radius
            if val < d[i]:
                if val <= 0.0:
                    d[i] = 0.0
                    dd_ds[i] = 0.0
                else:
                    d[i] = val
                    dd_ds[i] = float(tangent @ rel / dist) if dist > 0 else 0.0
    return d, dd_ds


def cost(
    profile: VelocityProfile,
    scenario: Scenario,
    weights: PlannerWeights,
    risk_curve: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    obstacles: Sequence[Obstacle] = (),
) -> Tuple[float, Dict[str, float]]:
    """Composite planning cost and its per-term breakdown."""
    v = profile.v
    s = profile.s
    c_smooth = float(np.sum(np.diff(v) ** 2))
    c_reach = float(np.sum((s - scenario.ego.d_desired) ** 2))
    if risk_curve is not None:
        c_risk = float(np.sum(risk_curve(s) * v ** 2))
    else:
        c_risk = 0.0
    if obstacles:
        d, _ = _obstacle_distances(scenario, s, obstacles)
        c_coll = float(np.sum(np.exp(-d)))
    else:
        c_coll = 0.0
    breakdown = {
        "smooth": c_smooth,
        "reach": c_reach,
        "risk": c_risk,
        "collision": c_coll,
    }
    total = (
        weights.w_smooth * c_smooth
        + weights.w_reach * c_reach
        + weights.w_risk * c_risk
        + weights.w_collision * c_coll
    )
    return total, breakdown


# ---------------------------------------------------------------------------
# Convexified engine
# ---------------------------------------------------------------------------

class _QPEngine:
    """Reusable inner QP: frozen risk/collision data enters via parameters."""

    def __init__(self, T: int, dt: float, v0: float, weights: PlannerWeights,
                 limits: PlannerLimits, d_desired: float,
                 with_vlimit: bool = False):
        self.v = cp.Variable(T)
        self.risk_bar = cp.Parameter(T, nonneg=True)
        self.coll_lin = cp.Parameter(T)  # d(total collision cost)/d(s_i)
        self.vlimit = cp.Parameter(T) if with_vlimit else None
        dvec = np.full(T, dt)
        # s_i = dt * sum_{j<i} v_j  (strictly lower-triangular cumulative sum)
        L = np.tril(np.ones((T, T)), -1) * dt
        s_expr = L @ self.v
        obj = (
            weights.w_smooth * cp.sum_squares(cp.diff(self.v))
            + weights.w_reach * cp.sum_squares(s_expr - d_desired)
            + weights.w_risk * cp.sum(cp.multiply(self.risk_bar, cp.square(self.v)))
            + weights.w_collision * (self.coll_lin @ s_expr)
        )
        cons = [
            self.v[0] == v0,
            self.v >= 0,
            self.v <= limits.v_cap,
            cp.abs(cp.diff(self.v)) <= limits.a_max * dt,
        ]
        if self.vlimit is not None:
            cons.append(self.v[1:] <= self.vlimit[1:])
        self.problem = cp.Problem(cp.Minimize(obj), cons)

    def solve(self, risk_bar: np.ndarray, coll_lin: np.ndarray,
              vlimit: Optional[np.ndarray] = None) -> np.ndarray:
        self.risk_bar.value = risk_bar
        self.coll_lin.value = coll_lin
        if self.vlimit is not None:
            self.vlimit.value = vlimit
        self.problem.solve(solver=cp.CLARABEL)
        if self.problem.status not in ("optimal", "optimal_inaccurate"):
            raise Infeasible(f"inner QP status: {self.problem.status}")
        return np.asarray(self.v.value)


def _iterate(
    scenario: Scenario,
    weights: PlannerWeights,
    limits: PlannerLimits,
    risk_curve: Optional[Callable],
    obstacles: Sequence[Obstacle],
    v_init: np.ndarray,
    vlimit_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> Tuple[VelocityProfile, Dict]:
    T = len(v_init)
    dt = scenario.dt
    v0 = scenario.ego.initial_state[3]
    engine = _QPEngine(T, dt, v0, weights, limits, scenario.ego.d_desired,
                       with_vlimit=vlimit_fn is not None)
    v_cur = v_init.copy()
    best_v = v_cur.copy()
    best_cost, _ = cost(VelocityProfile(v_cur, dt), scenario, weights, risk_curve, obstacles)
    iters = 0
    for it in range(_MAX_OUTER):
        iters = it + 1
        s_bar = VelocityProfile(v_cur, dt).s
        risk_bar = risk_curve(s_bar) if risk_curve is not None else np.zeros(T)
        risk_bar = np.maximum(np.asarray(risk_bar, dtype=float), 0.0)
        if obstacles and weights.w_collision > 0:
            d, dd_ds = _obstacle_distances(scenario, s_bar, obstacles)
            coll_lin = -np.exp(-d) * dd_ds
        else:
            coll_lin = np.zeros(T)
        vlim = vlimit_fn(s_bar) if vlimit_fn is not None else None
        v_new = engine.solve(risk_bar, coll_lin, vlim)
        v_new = np.clip(v_new, 0.0, limits.v_cap)
        v_new[0] = v0
        true_cost, _ = cost(VelocityProfile(v_new, dt), scenario, weights, risk_curve, obstacles)
        if true_cost < best_cost:
            best_cost = true_cost
            best_v = v_new.copy()
        if np.max(np.abs(v_new - v_cur)) < _OUTER_TOL:
            v_cur = v_new
            break
        v_cur = v_new
    if vlimit_fn is not None:
        best_v = _enforce_vlimit(best_v, dt, vlimit_fn, limits)
    profile = VelocityProfile(best_v, dt)
    total, breakdown = cost(profile, scenario, weights, risk_curve, obstacles)
    info = {"iterations": iters, "cost": total, "breakdown": breakdown}
    return profile, info


def _enforce_vlimit(v: np.ndarray, dt: float, vlimit_fn: Callable, limits: PlannerLimits) -> np.ndarray:
    """Forward clipping pass so the final profile meets its limit exactly."""
    v = v.copy()
    s = 0.0
    for i in range(1, len(v)):
        s += v[i - 1] * dt
        cap = min(float(vlimit_fn(np.array([s]))[0]), v[i - 1] + limits.a_max * dt)
        v[i] = min(v[i], cap)
    return v


# ---------------------------------------------------------------------------
# Planner variants
# ---------------------------------------------------------------------------

def plan_noap(
    scenario: Scenario,
    weights: PlannerWeights = PlannerWeights(),
    limits: PlannerLimits = PlannerLimits(),
    obstacles: Optional[Sequence[Obstacle]] = None,
) -> Tuple[VelocityProfile, Dict]:
    """Occlusion-blind baseline: the full cost with the risk term disabled."""
    if obstacles is None:
        obstacles = visible_obstacles(scenario)
    T = scenario.n_steps
    v_init = np.full(T, scenario.ego.initial_state[3])
    w = PlannerWeights(weights.w_smooth, weights.w_reach, 0.0, weights.w_collision)
    profile, info = _iterate(scenario, w, limits, None, obstacles, v_init)
    info["planner"] = "noap"
    return profile, info


def plan_risk_aware(
    scenario: Scenario,
    risk_curve: Callable[[np.ndarray], np.ndarray],
    weights: PlannerWeights = PlannerWeights(),
    limits: PlannerLimits = PlannerLimits(),
    obstacles: Optional[Sequence[Obstacle]] = None,
) -> Tuple[VelocityProfile, Dict]:
    """Risk-aware planning over the smoothed along-path risk curve R(s)."""
    if obstacles is None:
        obstacles = visible_obstacles(scenario)
    noap_profile, _ = plan_noap(scenario, weights, limits, obstacles)
    profile, info = _iterate(scenario, weights, limits, risk_curve, obstacles, noap_profile.v)
    info["planner"] = "risk_aware"
    return profile, info


def srq_speed_limit(
    scenario: Scenario,
    segments: Sequence[OccludedSegment],
    a_brake: float = DEFAULT_A_BRAKE,
    margin: float = DEFAULT_SRQ_MARGIN,
    conflict_radius: float = DEFAULT_CONFLICT_RADIUS,
    v_cap: float = DEFAULT_V_CAP,
) -> Callable[[np.ndarray], np.ndarray]:
    """Dynamic speed limit from occluded-segment conflicts on the ego path.

    A conflict is the first ego-path arc length whose point comes within
    `conflict_radius` of an occluded lane segment or its forward extension
    (the worst-case phantom route). v_limit(s) = sqrt(2 a_brake max(0,
    d_clear(s) - margin)).
    """
    # worst-case phantom region: occluded centerline spans plus successors
    region_pts = []
    for seg in segments:
        lane = scenario.lane_by_id(seg.lane_id)
        svals = np.arange(seg.s_start, lane.length + 1e-9, 0.5)
        region_pts.extend(lane.point_at(s) for s in svals)
        for sid in lane.successors:
            succ = scenario.lane_by_id(sid)
            svals = np.arange(0.0, succ.length + 1e-9, 0.5)
            region_pts.extend(succ.point_at(s) for s in svals)
    conflicts = []
    if region_pts:
        region = np.array(region_pts)
        path_len = float(scenario.ego.path_arclen[-1])
        for s in np.arange(0.0, path_len + 1e-9, 0.5):
            p = scenario.ego.point_at(s)
            if np.min(np.linalg.norm(region - p, axis=1)) < conflict_radius:
                conflicts.append(s)
    conflicts = np.asarray(conflicts)

    def vlimit(s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        out = np.full(s.shape, v_cap)
        if len(conflicts):
            for i, si in enumerate(s.ravel()):
                ahead = conflicts[conflicts >= si]
                if len(ahead):
                    d_clear = float(ahead.min() - si)
                    out.ravel()[i] = min(v_cap, math.sqrt(2.0 * a_brake * max(0.0, d_clear - margin)))
        return out

    return vlimit


def plan_srq(
    scenario: Scenario,
    segments: Sequence[OccludedSegment],
    weights: PlannerWeights = PlannerWeights(),
    limits: PlannerLimits = PlannerLimits(),
    a_brake: float = DEFAULT_A_BRAKE,
    margin: float = DEFAULT_SRQ_MARGIN,
    obstacles: Optional[Sequence[Obstacle]] = None,
) -> Tuple[VelocityProfile, Dict]:
    """Reachability baseline: NOAP objective under a hard dynamic speed limit."""
    if obstacles is None:
        obstacles = visible_obstacles(scenario)
    vlimit_fn = srq_speed_limit(scenario, segments, a_brake=a_brake, margin=margin,
                                v_cap=limits.v_cap)
    T = scenario.n_steps
    v0 = scenario.ego.initial_state[3]
    v_init = _enforce_vlimit(np.full(T, v0), scenario.dt, vlimit_fn, limits)
    w = PlannerWeights(weights.w_smooth, weights.w_reach, 0.0, weights.w_collision)
    profile, info = _iterate(scenario, w, limits, None, obstacles, v_init, vlimit_fn=vlimit_fn)
    info["planner"] = "srq"
    return profile, info


def plan_opbp(
    scenario: Scenario,
    phantom_trajectories: Sequence[Tuple[np.ndarray, float]],
    weights: PlannerWeights = PlannerWeights(),
    limits: PlannerLimits = PlannerLimits(),
    obstacles: Optional[Sequence[Obstacle]] = None,
) -> Tuple[VelocityProfile, Dict]:
    """Prediction baseline: NOAP plus collision cost on predicted phantom trajectories.

    `phantom_trajectories` are (positions, combined_radius) pairs; pass the
    most adversarial mode per phantom.
    """
    if obstacles is None:
        obstacles = visible_obstacles(scenario)
    all_obs = list(obstacles) + list(phantom_trajectories)
    T = scenario.n_steps
    v_init = np.full(T, scenario.ego.initial_state[3])
    w = PlannerWeights(weights.w_smooth, weights.w_reach, 0.0, weights.w_collision)
    profile, info = _iterate(scenario, w, limits, None, all_obs, v_init)
    info["planner"] = "opbp"
    return profile, info
