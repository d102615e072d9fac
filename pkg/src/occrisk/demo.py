"""Synthetic occlusion scenario generators for the bundled demo suite.

Three archetypes echo classic blind-zone layouts: a wall-occluded crossing,
a T-intersection with a hidden south leg, and a left turn across a hidden
southbound lane.  Every scenario has at least one occluded segment at t=0.
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import List

import numpy as np

from .scene import AgentLog, EgoSpec, LaneSegment, Scenario, dump_scenario

ARCHETYPES = ("wall_crossing", "t_intersection", "left_turn")


def _const_speed_log(agent_id: str, start, heading: float, speed: float,
                     dt: float = 0.1, horizon: float = 8.0, **kw) -> AgentLog:
    n = int(round(horizon / dt))
    times = np.arange(n + 1) * dt
    xs = start[0] + speed * math.cos(heading) * times
    ys = start[1] + speed * math.sin(heading) * times
    states = np.column_stack([times, xs, ys, np.full(n + 1, heading), np.full(n + 1, speed)])
    return AgentLog(id=agent_id, kind="vehicle", states=states, **kw)


def make_wall_crossing(rng: np.random.Generator, index: int) -> Scenario:
    """Ego eastbound; crossing northbound lane hidden behind a building."""
    junction = float(rng.uniform(16.0, 26.0))
    v0 = float(rng.uniform(6.0, 9.0))
    lane_e = LaneSegment("ew_east", [[-40.0, 0.0], [70.0, 0.0]], 6.0)
    lane_w = LaneSegment("ew_west", [[70.0, 6.0], [-40.0, 6.0]], 6.0)
    lane_n = LaneSegment("ns_north", [[junction, -60.0], [junction, 60.0]], 6.0)
    wall_x0 = junction - float(rng.uniform(9.0, 12.0))
    wall = np.array([
        [wall_x0, -12.0], [wall_x0 + 5.0, -12.0],
        [wall_x0 + 5.0, -3.5], [wall_x0, -3.5],
    ])
    oncoming = _const_speed_log(
        "oncoming", (float(rng.uniform(35.0, 55.0)), 6.0), math.pi, float(rng.uniform(5.0, 9.0))
    )
    ego = EgoSpec((-30.0, 0.0, 0.0, v0), [[-30.0, 0.0], [70.0, 0.0]],
                  d_desired=float(rng.uniform(55.0, 70.0)))
    return Scenario(
        lanes=(lane_e, lane_w, lane_n), agents=(oncoming,), ego=ego, occluders=(wall,),
        metadata={"archetype": "wall_crossing", "index": index, "junction": junction},
    )


def make_t_intersection(rng: np.random.Generator, index: int) -> Scenario:
    """Ego eastbound with oncoming traffic; side road enters from an occluded south leg."""
    junction = float(rng.uniform(18.0, 28.0))
    v0 = float(rng.uniform(6.0, 9.0))
    lane_e = LaneSegment("main_east", [[-40.0, 0.0], [75.0, 0.0]], 6.0)
    lane_w = LaneSegment("main_west", [[75.0, 6.0], [-40.0, 6.0]], 6.0)
    lane_s = LaneSegment("side_north", [[junction, -55.0], [junction, -2.0]], 6.0,
                         successors=("side_turn",))
    lane_t = LaneSegment("side_turn", [[junction, -2.0], [junction + 6.0, 0.0], [junction + 30.0, 0.0]],
                         6.0, predecessors=("side_north",), kind="turn")
    wall_x0 = junction - float(rng.uniform(8.0, 11.0))
    wall = np.array([
        [wall_x0, -13.0], [wall_x0 + 4.5, -13.0],
        [wall_x0 + 4.5, -3.5], [wall_x0, -3.5],
    ])
    oncoming = _const_speed_log(
        "oncoming", (float(rng.uniform(30.0, 50.0)), 6.0), math.pi, float(rng.uniform(6.0, 9.0))
    )
    ego = EgoSpec((-30.0, 0.0, 0.0, v0), [[-30.0, 0.0], [75.0, 0.0]],
                  d_desired=float(rng.uniform(55.0, 70.0)))
    return Scenario(
        lanes=(lane_e, lane_w, lane_s, lane_t), agents=(oncoming,), ego=ego, occluders=(wall,),
        metadata={"archetype": "t_intersection", "index": index, "junction": junction},
    )


def make_left_turn(rng: np.random.Generator, index: int) -> Scenario:
    """Ego turns left at a junction; the southbound approach is hidden by a corner building."""
    junction = float(rng.uniform(16.0, 24.0))
    v0 = float(rng.uniform(5.0, 8.0))
    lane_e = LaneSegment("approach_east", [[-40.0, 0.0], [junction + 20.0, 0.0]], 6.0)
    lane_w = LaneSegment("approach_west", [[junction + 20.0, 6.0], [-40.0, 6.0]], 6.0)
    lane_n = LaneSegment("exit_north", [[junction, -10.0], [junction, 60.0]], 6.0)
    lane_s = LaneSegment("cross_south", [[junction + 6.0, 60.0], [junction + 6.0, -50.0]], 6.0)
    # corner building north of the two-way road hides the southbound cross lane
    wall_x0 = junction - float(rng.uniform(11.0, 14.0))
    wall = np.array([
        [wall_x0, 9.5], [wall_x0 + 7.0, 9.5],
        [wall_x0 + 7.0, 18.0], [wall_x0, 18.0],
    ])
    oncoming = _const_speed_log("oncoming", (float(rng.uniform(28.0, 45.0)), 6.0), math.pi,
                                float(rng.uniform(6.0, 8.0)))
    # left-turn reference path: east along y=0, quarter arc, then north on exit_north
    arc = [
        [junction - 6.0 + 6.0 * math.sin(a), 6.0 - 6.0 * math.cos(a)]
        for a in np.linspace(0.0, math.pi / 2.0, 10)
    ]
    path = [[-30.0, 0.0], [junction - 8.0, 0.0]] + arc + [[junction, 40.0]]
    ego = EgoSpec((-30.0, 0.0, 0.0, v0), path, d_desired=float(rng.uniform(50.0, 62.0)))
    return Scenario(
        lanes=(lane_e, lane_w, lane_n, lane_s), agents=(oncoming,), ego=ego, occluders=(wall,),
        metadata={"archetype": "left_turn", "index": index, "junction": junction},
    )


_MAKERS = {
    "wall_crossing": make_wall_crossing,
    "t_intersection": make_t_intersection,
    "left_turn": make_left_turn,
}


def make_scenario(archetype: str, seed: int, index: int) -> Scenario:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))
    return _MAKERS[archetype](rng, index)


def generate_demo_suite(out_dir, count: int = 50, seed: int = 0) -> List[Path]:
    """Write `count` parameterized scenarios; deterministic in seed."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        archetype = ARCHETYPES[i % len(ARCHETYPES)]
        sc = make_scenario(archetype, seed, i)
        path = out_dir / f"scenario_{i:03d}.json"
        dump_scenario(sc, path)
        paths.append(path)
    return paths
