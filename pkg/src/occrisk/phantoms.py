"""Sampling of initial states for potential occluded agents.

Phantoms are placed uniformly along occluded lane segments with uniform
speeds and lane-tangent headings. Sampling is driven by a counter-based
Philox generator with per-segment substreams, so results are reproducible
across platforms and independent of evaluation order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .scene import AgentLog, Scenario
from .visibility import OccludedSegment

DEFAULT_SPEED_MIN = 3.0
DEFAULT_SPEED_MAX = 15.0
DEFAULT_MAX_PER_SEGMENT = 2
DEFAULT_SPACING_MIN = 10.0


@dataclass(frozen=True)
class PhantomConfig:
    speed_min: float = DEFAULT_SPEED_MIN
    speed_max: float = DEFAULT_SPEED_MAX
    max_phantoms_per_segment: int = DEFAULT_MAX_PER_SEGMENT
    spacing_min: float = DEFAULT_SPACING_MIN
    rng_seed: int = 0

    def __post_init__(self):
        if not (0 <= self.speed_min < self.speed_max):
            raise ValueError("require 0 <= speed_min < speed_max")
        if self.spacing_min <= 0:
            raise ValueError("spacing_min must be > 0")


def _segment_rng(cfg: PhantomConfig, seg_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(cfg.rng_seed), int(seg_index)])
    return np.random.Generator(np.random.Philox(ss))


def _sample_positions(rng: np.random.Generator, s_start: float, s_end: float,
                      count: int, spacing: float, max_tries: int = 200) -> List[float]:
    accepted: List[float] = []
    tries = 0
    while len(accepted) < count and tries < max_tries:
        s = float(rng.uniform(s_start, s_end))
        if all(abs(s - a) >= spacing for a in accepted):
            accepted.append(s)
        tries += 1
    return accepted


def sample_phantoms(
    scenario: Scenario,
    segments: Sequence[OccludedSegment],
    cfg: PhantomConfig,
) -> Scenario:
    """Extend the scenario's agent list with phantom initial states.

    Deterministic in (scenario, segments, cfg). Each phantom carries a
    provenance block (source lane, arc length, substream seed) and a single
    t=0 state; trajectories are filled in later by the generator.
    """
    if not segments:
        return scenario
    agents = list(scenario.agents)
    existing = {a.id for a in agents}
    for seg_index, seg in enumerate(segments):
        lane = scenario.lane_by_id(seg.lane_id)
        rng = _segment_rng(cfg, seg_index)
        seg_len = seg.s_end - seg.s_start
        if seg_len < cfg.spacing_min:
            # too short for more than one vehicle: single phantom at the midpoint
            positions = [0.5 * (seg.s_start + seg.s_end)]
            rng.uniform()  # keep the stream aligned with the count draw below
        else:
            cap = min(cfg.max_phantoms_per_segment, int(seg_len // cfg.spacing_min))
            cap = max(1, cap)
            count = int(rng.integers(1, cap + 1))
            positions = _sample_positions(rng, seg.s_start, seg.s_end, count, cfg.spacing_min)
        for j, s in enumerate(sorted(positions)):
            speed = float(rng.uniform(cfg.speed_min, cfg.speed_max))
            p = lane.point_at(s)
            heading = lane.tangent_at(s)
            pid = f"phantom_{seg.lane_id}_{seg_index}_{j}"
            if pid in existing:
                raise ValueError(f"duplicate phantom id {pid}")
            existing.add(pid)
            agents.append(
                AgentLog(
                    id=pid,
                    kind="phantom",
                    states=np.array([[0.0, p[0], p[1], heading, speed]]),
                    provenance={
                        "segment_lane": seg.lane_id,
                        "s": float(s),
                        "seed": int(cfg.rng_seed),
                        "substream": int(seg_index),
                    },
                )
            )
    metadata = dict(scenario.metadata)
    metadata["phantom_rng_seed"] = int(cfg.rng_seed)
    return scenario.with_agents(agents, metadata=metadata)
