"""Receding-horizon policy rollout against the insertion simulator.

Each inference reads the latest sensor samples (no temporal alignment),
normalizes them with the training stats, denoises an action sequence,
smooths it with average pooling, and streams the first ``t_a`` poses as
commands at the simulator's command rate.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .datapipe import NormStats, denormalize, normalize, pose7_to_pose9
from .diffusion import cosine_schedule, ddim_sample
from .rotations import rot6d_to_rotmat
from .sim import InsertionSim, SimStatus
from .training import Checkpoint, make_predictor, model_from_checkpoint

__all__ = ["RolloutConfig", "RolloutResult", "StatsMismatchError", "pool_actions", "rollout"]


class StatsMismatchError(RuntimeError):
    """Checkpoint was trained with different normalization stats."""


@dataclass(frozen=True)
class RolloutConfig:
    k_inf: int = 32
    eta: float = 0.5
    t_a: int = 4
    offsets: tuple[float, ...] = (0.0, 5.0, 10.0)
    rollouts_per_model: int = 5
    models_per_config: int = 4
    time_budget_s: float = 20.0
    ft_mask: bool = False
    ft_mask_normalized: bool = False  # zero after normalization instead of raw
    seed: int = 0

    def __post_init__(self) -> None:
        if any(o < 0 for o in self.offsets):
            raise ValueError("offsets are magnitudes and must be >= 0")
        if self.t_a < 1:
            raise ValueError("t_a must be >= 1")

    def to_dict(self) -> dict:
        d = {
            "k_inf": self.k_inf,
            "eta": self.eta,
            "t_a": self.t_a,
            "offsets": list(self.offsets),
            "rollouts_per_model": self.rollouts_per_model,
            "models_per_config": self.models_per_config,
            "time_budget_s": self.time_budget_s,
            "ft_mask": self.ft_mask,
            "ft_mask_normalized": self.ft_mask_normalized,
            "seed": self.seed,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RolloutConfig":
        d = dict(d)
        if "offsets" in d:
            d["offsets"] = tuple(d["offsets"])
        return cls(**d)


@dataclass
class RolloutResult:
    outcome: SimStatus
    offset: float  # signed offset actually used
    steps: int  # executed command ticks
    final_depth: float  # mm
    inference_count: int
    max_obs_age_ms: float
    trace: np.ndarray | None = None  # (steps, 3) executed tool poses


def pool_actions(actions: np.ndarray, t_a: int) -> np.ndarray:
    """Moving-average smoothing with kernel ``t_a - 1`` per action dimension.

    Identity for ``t_a <= 2``. Edge-replicated padding preserves the
    sequence length; interior values of affine sequences are unchanged.
    """
    actions = np.asarray(actions, dtype=float)
    window = t_a - 1
    if t_a <= 2:
        return actions.copy()
    pad_left = (window - 1) // 2
    pad_right = window - 1 - pad_left
    padded = np.concatenate(
        [np.repeat(actions[:1], pad_left, axis=0), actions, np.repeat(actions[-1:], pad_right, axis=0)],
        axis=0,
    )
    kernel = np.ones(window) / window
    return np.stack(
        [np.convolve(padded[:, j], kernel, mode="valid") for j in range(actions.shape[1])],
        axis=1,
    )


def _pose9_to_planar(pose9: np.ndarray) -> np.ndarray:
    """Denormalized 9D action -> planar command (x, z, theta)."""
    R = rot6d_to_rotmat(pose9[3:9])
    theta = math.atan2(R[0, 2], R[0, 0])
    return np.array([pose9[0], pose9[2], theta])


def rollout(
    sim: InsertionSim,
    checkpoint: Checkpoint,
    stats: NormStats,
    cfg: RolloutConfig,
    rng: np.random.Generator,
    keep_trace: bool = False,
) -> RolloutResult:
    """Run one receding-horizon episode until a terminal status.

    ``rng`` drives the sampler's noise draws only; the sim owns its own
    sensor-noise stream. Refuses to run when the checkpoint's stats hash
    does not match ``stats``.
    """
    pcfg = checkpoint.config
    if cfg.t_a > pcfg.t_p:
        raise ValueError(f"t_a={cfg.t_a} exceeds the checkpoint's t_p={pcfg.t_p}")
    if checkpoint.norm_stats_hash and checkpoint.norm_stats_hash != stats.hash():
        raise StatsMismatchError(
            f"checkpoint stats {checkpoint.norm_stats_hash[:12]} != dataset {stats.hash()[:12]}"
        )
    model = model_from_checkpoint(checkpoint)
    schedule = cosine_schedule(pcfg.k, pcfg.schedule_s)
    dt = 1.0 / sim.config.command_rate
    sim.config = replace(sim.config, time_budget_s=cfg.time_budget_s)

    pose_hist: deque[np.ndarray] = deque(maxlen=pcfg.t_o_p)
    wrench_hist: deque[np.ndarray] = deque(maxlen=max(pcfg.t_o_f, 1))
    steps = 0
    inferences = 0
    max_age = 0.0
    trace = [] if keep_trace else None

    while sim.status is SimStatus.RUNNING:
        clock_ms = sim.state.clock * 1000.0
        pose_sample, wrench_sample = sim.latest_pose, sim.latest_wrench
        max_age = max(max_age, clock_ms - pose_sample.t, clock_ms - wrench_sample.t)
        pose9 = pose7_to_pose9(pose_sample.pose7)
        wrench = wrench_sample.wrench.copy()
        if cfg.ft_mask and not cfg.ft_mask_normalized:
            wrench[:] = 0.0
        while len(pose_hist) < pcfg.t_o_p:
            pose_hist.append(pose9)
        while len(wrench_hist) < wrench_hist.maxlen:
            wrench_hist.append(wrench)
        pose_hist.append(pose9)
        wrench_hist.append(wrench)

        pose_feats = normalize(np.stack(pose_hist), stats.pose_min, stats.pose_max)
        wrench_feats = normalize(np.stack(wrench_hist), stats.wrench_min, stats.wrench_max)
        if cfg.ft_mask and cfg.ft_mask_normalized:
            wrench_feats[:] = 0.0
        if pcfg.t_o_f == 0:
            obs = pose_feats.ravel()
        else:
            obs = np.concatenate([pose_feats.ravel(), wrench_feats.ravel()])

        actions_n = ddim_sample(
            make_predictor(model, obs),
            (pcfg.t_p, 9),
            schedule,
            cfg.k_inf,
            cfg.eta,
            rng,
            clip=(-1.0, 1.0),
        )
        inferences += 1
        actions = denormalize(actions_n, stats.action_min, stats.action_max)
        pooled = pool_actions(actions, cfg.t_a)
        for row in pooled[: cfg.t_a]:
            cmd = _pose9_to_planar(row)
            if trace is not None:
                trace.append(cmd)
            sim.step(cmd, dt)
            steps += 1
            if sim.status is not SimStatus.RUNNING:
                break

    return RolloutResult(
        outcome=sim.status,
        offset=sim.mortise_offset,
        steps=steps,
        final_depth=sim.insertion_depth(),
        inference_count=inferences,
        max_obs_age_ms=max_age,
        trace=np.array(trace) if trace else None,
    )
