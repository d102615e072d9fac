"""Run configuration: every tunable of every stage, with strict key checking."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from typing import Any, Dict


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # field of view
    ray_count: int = 360
    max_range: float = 80.0
    occlusion_sample_step: float = 0.5
    min_occlusion_len: float = 4.8
    # phantom sampling
    phantom_speed_min: float = 3.0
    phantom_speed_max: float = 15.0
    max_phantoms_per_segment: int = 2
    phantom_spacing_min: float = 10.0
    # guided generation
    diffusion_steps: int = 50
    lambda_inter: float = 1.0
    lambda_road: float = 1.0
    guidance_step_scale: float = 10.0
    guidance_tau: float = 1.0
    prior_std_accel: float = 0.15
    prior_std_yaw: float = 0.004
    grad_mode: str = "analytic"
    # risk grid
    grid_resolution: float = 0.5
    grid_decay: float = 2.0
    collision_delta: float = 3.0
    fusion_alpha: float = 0.4
    fusion_beta: float = 0.6
    smoothing_sigma_cells: float = 2.0
    anchor_count: int = 20
    # trajectory modes
    v_min_active: float = 0.5
    n_modes: int = 6
    # planner
    w_smooth: float = 1.0
    w_reach: float = 0.05
    w_risk: float = 50.0
    w_collision: float = 10.0
    v_cap: float = 15.0
    a_max: float = 3.0
    a_brake: float = 3.0
    srq_margin: float = 2.0
    # metrics
    ttc_cap: float = 100.0
    critical_ttc: float = 3.0
    interaction_radius: float = 20.0

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def dump_resolved(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1, sort_keys=True)
            f.write("\n")
