"""DDPM-style reverse sampling over control sequences with adversarial guidance.

The reverse process denoises a phantom's control sequence toward a
lane-following prior while a guidance gradient steers it toward close
approaches with other agents, keeping it on the road. The denoiser is
pluggable; the shipped prior is a closed-form Gaussian shrinkage toward the
nominal lane-following controls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp, softmax

from .scene import LaneSegment, Scenario, ego_log_trajectory, road_sdf, road_sdf_batch
from .trajgen import (
    DEFAULT_A_MAX,
    DEFAULT_OMEGA_MAX,
    ControlSequence,
    Trajectory,
    log_trajectory,
    nearest_lane,
    enumerate_routes,
    nominal_controls,
    rollout,
)

DEFAULT_STEPS = 50
# per-channel (accel, yaw_rate) prior spread: generous timing freedom, tight
# lane keeping
DEFAULT_PRIOR_STD = (0.15, 0.004)


class NonFiniteGradient(RuntimeError):
    """Guidance gradient produced NaN or infinity."""


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    """Noise schedule; index k runs 1..K, with alpha_bar(0) = 1."""

    betas: np.ndarray  # (K,)

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=float)
        if np.any(b <= 0) or np.any(b >= 1):
            raise ValueError("betas must lie in (0, 1)")
        object.__setattr__(self, "betas", b)

    @property
    def n_steps(self) -> int:
        return len(self.betas)

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> np.ndarray:
        """(K+1,) cumulative products, alpha_bars[0] = 1."""
        return np.concatenate([[1.0], np.cumprod(self.alphas)])

    def sigma(self, k: int) -> float:
        """Posterior std at step k; zero at k=1."""
        ab = self.alpha_bars
        return math.sqrt(self.betas[k - 1] * (1.0 - ab[k - 1]) / (1.0 - ab[k]))


def cosine_schedule(n_steps: int = DEFAULT_STEPS, offset: float = 0.008) -> DiffusionSchedule:
    k = np.arange(n_steps + 1)
    f = np.cos((k / n_steps + offset) / (1.0 + offset) * math.pi / 2.0) ** 2
    alpha_bar = f / f[0]
    betas = np.clip(1.0 - alpha_bar[1:] / alpha_bar[:-1], 1e-8, 0.999)
    return DiffusionSchedule(betas=betas)


@dataclass(frozen=True)
class GuidanceConfig:
    lambda_inter: float = 1.0       # weight on the closest-approach term
    lambda_road: float = 1.0        # weight on the off-road penalty term
    step_scale: float = 10.0        # guidance learning-rate scale
    tau: float = 1.0                # softmin/softmax temperature (m)
    grad_mode: str = "analytic"     # analytic | finite_difference
    prior_std: Tuple[float, float] = DEFAULT_PRIOR_STD

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.step_scale < 0:
            raise ValueError("step_scale must be >= 0")
        if self.grad_mode not in ("analytic", "finite_difference"):
            raise ValueError(f"unknown grad_mode {self.grad_mode!r}")


class NominalPriorDenoiser:
    """Closed-form denoiser for a Gaussian prior centered on nominal controls.

    With controls distributed N(nominal, prior_std^2) the posterior mean of
    the clean controls given a forward-noised sample is a shrinkage toward
    nominal; this keeps the reverse process responsive to guidance while
    recovering the lane-following prior when unguided.

    `prior_std` may be a scalar or a per-channel (accel, yaw_rate) pair; a
    tighter yaw prior keeps generated agents lane-following so guidance acts
    mostly through timing.
    """

    def __init__(self, nominal: ControlSequence, prior_std=DEFAULT_PRIOR_STD):
        self.nominal = nominal
        self.prior_std = np.broadcast_to(np.asarray(prior_std, dtype=float), (2,))

    def __call__(self, noisy: np.ndarray, k: int, schedule: DiffusionSchedule) -> np.ndarray:
        ab = schedule.alpha_bars[k]
        m = self.nominal.controls
        s2 = self.prior_std ** 2
        gain = math.sqrt(ab) * s2 / (ab * s2 + (1.0 - ab))
        return m + gain * (noisy - math.sqrt(ab) * m)


# ---------------------------------------------------------------------------
# Forward / reverse kernels
# ---------------------------------------------------------------------------

def forward_noise(u: np.ndarray, k: int, schedule: DiffusionSchedule, rng: np.random.Generator) -> np.ndarray:
    """Forward diffusion: sqrt(ab_k) * u + sqrt(1 - ab_k) * eps."""
    ab = schedule.alpha_bars[k]
    eps = rng.standard_normal(u.shape)
    return math.sqrt(ab) * u + math.sqrt(1.0 - ab) * eps


def posterior_mean(noisy: np.ndarray, denoised: np.ndarray, k: int, schedule: DiffusionSchedule) -> np.ndarray:
    """Reverse-process posterior mean combining the noisy sample and the denoised estimate."""
    ab_k = schedule.alpha_bars[k]
    ab_prev = schedule.alpha_bars[k - 1]
    if 1.0 - ab_k < 1e-15:
        return np.array(denoised, copy=True)
    alpha_k = schedule.alphas[k - 1]
    beta_k = schedule.betas[k - 1]
    c_noisy = math.sqrt(alpha_k) * (1.0 - ab_prev) / (1.0 - ab_k)
    c_clean = math.sqrt(ab_prev) * beta_k / (1.0 - ab_k)
    return c_noisy * noisy + c_clean * denoised


# ---------------------------------------------------------------------------
# Guidance objective and gradient
# ---------------------------------------------------------------------------

def closest_approach(positions: np.ndarray, others: Sequence[np.ndarray]) -> float:
    """Hard minimum center distance to any other trajectory over all timesteps."""
    best = math.inf
    for q in others:
        n = min(len(positions), len(q))
        d = np.linalg.norm(positions[:n] - q[:n, :2], axis=1)
        best = min(best, float(d.min()))
    return best


def onroad_fraction(positions: np.ndarray, lanes: Sequence[LaneSegment]) -> float:
    sdf, _ = road_sdf_batch(positions, lanes)
    return float(np.mean(sdf == 0.0))


def guidance_objective(
    controls: ControlSequence,
    initial_state,
    others: Sequence[np.ndarray],
    lanes: Sequence[LaneSegment],
    cfg: GuidanceConfig,
) -> Tuple[float, Dict[str, float]]:
    """Adversarial-and-plausible objective F over a rolled-out phantom trajectory.

    F = lambda_inter * g_inter + lambda_road * g_road with g_inter the negated
    soft minimum approach distance (over time and other agents) and g_road the
    negated soft maximum off-road violation; maximizing F shrinks the closest
    approach while keeping the trajectory on the road.
    """
    traj = rollout(initial_state, controls)
    pos = traj.positions
    breakdown = {"g_inter": 0.0, "g_road": 0.0, "softmin_distance": math.nan, "softmax_road": math.nan}
    total = 0.0
    if cfg.lambda_inter != 0.0 and others:
        dists = np.concatenate(
            [np.linalg.norm(pos[: min(len(pos), len(q))] - q[: min(len(pos), len(q)), :2], axis=1) for q in others]
        )
        soft_min = -cfg.tau * logsumexp(-dists / cfg.tau)
        breakdown["softmin_distance"] = float(soft_min)
        breakdown["g_inter"] = float(-soft_min)
        total += cfg.lambda_inter * breakdown["g_inter"]
    if cfg.lambda_road != 0.0:
        sdf, _ = road_sdf_batch(pos, lanes)
        soft_max = cfg.tau * logsumexp(sdf / cfg.tau)
        breakdown["softmax_road"] = float(soft_max)
        breakdown["g_road"] = float(-soft_max)
        total += cfg.lambda_road * breakdown["g_road"]
    return total, breakdown


def _objective_position_grads(
    pos: np.ndarray,
    others: Sequence[np.ndarray],
    lanes: Sequence[LaneSegment],
    cfg: GuidanceConfig,
) -> np.ndarray:
    """dF/d(position_t) for every trajectory point, shape (T+1, 2)."""
    grad = np.zeros_like(pos)
    if cfg.lambda_inter != 0.0 and others:
        all_d = []
        all_dirs = []
        all_t = []
        for q in others:
            n = min(len(pos), len(q))
            rel = pos[:n] - q[:n, :2]
            d = np.linalg.norm(rel, axis=1)
            safe = np.maximum(d, 1e-9)
            all_d.append(d)
            all_dirs.append(rel / safe[:, None])
            all_t.append(np.arange(n))
        d_flat = np.concatenate(all_d)
        w = softmax(-d_flat / cfg.tau)
        i = 0
        for d, dirs, tt in zip(all_d, all_dirs, all_t):
            wk = w[i : i + len(d)]
            np.add.at(grad, tt, -cfg.lambda_inter * wk[:, None] * dirs)
            i += len(d)
    if cfg.lambda_road != 0.0:
        sdf, sdf_grad = road_sdf_batch(pos, lanes)
        w = softmax(sdf / cfg.tau)
        grad += -cfg.lambda_road * w[:, None] * sdf_grad
    return grad


def _analytic_gradient(
    controls: ControlSequence,
    initial_state,
    others: Sequence[np.ndarray],
    lanes: Sequence[LaneSegment],
    cfg: GuidanceConfig,
) -> np.ndarray:
    traj = rollout(initial_state, controls)
    states = traj.states
    dt = controls.dt
    n = len(controls.controls)
    dpos = _objective_position_grads(traj.positions, others, lanes, cfg)
    grad = np.zeros((n, 2))
    # adjoint backward pass through the Euler unicycle update
    lam = np.zeros(4)
    lam[:2] = dpos[n]
    for t in range(n - 1, -1, -1):
        _, _, psi, v = states[t]
        acc = controls.controls[t, 0]
        moving = 1.0 if v + acc * dt > 0.0 else 0.0
        grad[t, 0] = lam[3] * moving * dt
        grad[t, 1] = lam[2] * dt
        new_lam = np.empty(4)
        new_lam[0] = lam[0]
        new_lam[1] = lam[1]
        new_lam[2] = lam[2] - lam[0] * v * math.sin(psi) * dt + lam[1] * v * math.cos(psi) * dt
        new_lam[3] = lam[3] * moving + lam[0] * math.cos(psi) * dt + lam[1] * math.sin(psi) * dt
        lam = new_lam
        lam[:2] += dpos[t]
    return grad


def guidance_gradient(
    controls: ControlSequence,
    initial_state,
    others: Sequence[np.ndarray],
    lanes: Sequence[LaneSegment],
    cfg: GuidanceConfig,
    fd_step: float = 1e-4,
) -> np.ndarray:
    """Gradient of the guidance objective w.r.t. every control coordinate."""
    if cfg.lambda_inter == 0.0 and cfg.lambda_road == 0.0:
        return np.zeros_like(controls.controls)
    if cfg.grad_mode == "analytic":
        return _analytic_gradient(controls, initial_state, others, lanes, cfg)
    base = controls.controls
    grad = np.zeros_like(base)
    for i in range(base.shape[0]):
        for j in range(2):
            up, down = base.copy(), base.copy()
            up[i, j] += fd_step
            down[i, j] -= fd_step
            f_up, _ = guidance_objective(ControlSequence(up, controls.dt), initial_state, others, lanes, cfg)
            f_dn, _ = guidance_objective(ControlSequence(down, controls.dt), initial_state, others, lanes, cfg)
            grad[i, j] = (f_up - f_dn) / (2.0 * fd_step)
    return grad


# ---------------------------------------------------------------------------
# Guided reverse sampling
# ---------------------------------------------------------------------------

def phantom_nominal_controls(scenario: Scenario, phantom_id: str) -> ControlSequence:
    """Lane-following controls for a phantom from its sampled initial state."""
    agent = scenario.agent_by_id(phantom_id)
    state = agent.states[0, 1:5]
    if agent.provenance and "segment_lane" in agent.provenance:
        lane = scenario.lane_by_id(agent.provenance["segment_lane"])
    else:
        lane = nearest_lane(scenario, state[:2])
    route = enumerate_routes(scenario, lane)[0]
    return nominal_controls(state, route, target_speed=state[3], n_steps=scenario.n_steps, dt=scenario.dt)


def other_trajectories(scenario: Scenario, exclude: str, include_agents: bool = False) -> List[np.ndarray]:
    """State arrays (T+1,4) used as interaction targets.

    Defaults to the ego log alone: the generated phantom is a pursuer of the
    ego vehicle, and pulling it toward unrelated background traffic dilutes
    that.  Pass ``include_agents=True`` to add every non-phantom agent log.
    """
    out = [ego_log_trajectory(scenario)]
    if include_agents:
        for a in scenario.agents:
            if a.id != exclude and a.kind != "phantom":
                out.append(log_trajectory(scenario, a.id).states)
    return out


def guided_reverse(
    scenario: Scenario,
    phantom_id: str,
    schedule: DiffusionSchedule,
    denoiser: Callable[[np.ndarray, int, DiffusionSchedule], np.ndarray],
    cfg: GuidanceConfig,
    seed: int,
    a_max: float = DEFAULT_A_MAX,
    omega_max: float = DEFAULT_OMEGA_MAX,
) -> Tuple[Trajectory, Dict[str, float]]:
    """Sample an adversarially guided trajectory for one phantom.

    Fully seeded: the same (scenario, phantom, schedule, cfg, seed) always
    produces an identical trajectory.
    """
    agent = scenario.agent_by_id(phantom_id)
    initial = agent.states[0, 1:5]
    others = other_trajectories(scenario, exclude=phantom_id)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed)])))
    n = scenario.n_steps
    u = rng.standard_normal((n, 2))
    guided = cfg.step_scale > 0 and (cfg.lambda_inter != 0.0 or cfg.lambda_road != 0.0)
    for k in range(schedule.n_steps, 0, -1):
        a_hat = denoiser(u, k, schedule)
        a_hat = np.clip(a_hat, [-a_max, -omega_max], [a_max, omega_max])
        sigma = schedule.sigma(k)
        if guided:
            g = guidance_gradient(ControlSequence(a_hat, scenario.dt), initial, others, scenario.lanes, cfg)
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"phantom {phantom_id}: non-finite guidance gradient at step {k}")
            u = u + cfg.step_scale * sigma * g
        mean = posterior_mean(u, a_hat, k, schedule)
        if k > 1:
            u = mean + sigma * rng.standard_normal((n, 2))
        else:
            u = mean
    final = ControlSequence(u, scenario.dt).clamped(a_max, omega_max)
    traj = rollout(initial, final, agent_id=phantom_id)

    nominal = getattr(denoiser, "nominal", None)
    if nominal is not None:
        pre_positions = rollout(initial, nominal).positions
        pre = closest_approach(pre_positions, others)
    else:
        pre = math.nan
    report = {
        "phantom": phantom_id,
        "seed": int(seed),
        "steps": schedule.n_steps,
        "lambda_inter": cfg.lambda_inter,
        "lambda_road": cfg.lambda_road,
        "step_scale": cfg.step_scale,
        "pre_closest_approach": pre,
        "post_closest_approach": closest_approach(traj.positions, others),
        "onroad_fraction": onroad_fraction(traj.positions, scenario.lanes),
    }
    return traj, report


def attach_trajectory(scenario: Scenario, phantom_id: str, traj: Trajectory) -> Scenario:
    """Replace a phantom's single-state log with the generated trajectory."""
    agents = []
    for a in scenario.agents:
        if a.id == phantom_id:
            times = np.arange(len(traj.states)) * traj.dt
            states = np.column_stack([times, traj.states])
            from .scene import AgentLog

            agents.append(
                AgentLog(
                    id=a.id, kind=a.kind, half_length=a.half_length,
                    half_width=a.half_width, states=states, provenance=a.provenance,
                )
            )
        else:
            agents.append(a)
    return scenario.with_agents(agents)
