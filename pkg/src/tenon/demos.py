"""Demonstration generation: teleoperation mapping and the scripted expert.

The teleoperation transform implements trigger clutching: while the trigger
is held, controller motion maps (scaled, frame-aligned) onto the robot
command; releasing the trigger freezes the robot so the controller can be
repositioned. The scripted expert produces reproducible insert and
error-recovery demonstrations with smooth command noise for diversity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .episodes import EpisodeError, EpisodeRecord, write_episode
from .sim import (
    InsertionSim,
    PoseSample,
    SimConfig,
    SimStatus,
    WrenchSample,
    make_sim,
    sample_mortise_offset,
)

__all__ = [
    "ControllerInput",
    "TeleopTransform",
    "map_controller",
    "OUNoise",
    "ExpertParams",
    "ScriptedExpert",
    "StreamRecorder",
    "scripted_demo",
    "collect_demos",
]


@dataclass
class ControllerInput:
    pointer: np.ndarray  # (x, z) mm in the operator frame
    rotation: float  # rad, operator rotation input
    trigger: bool
    t: float  # ms


@dataclass
class TeleopTransform:
    """Clutched controller-to-robot pose mapping.

    ``scale`` shrinks operator motion onto the robot; ``frame_alignment``
    rotates operator axes into the world frame. While the trigger is
    released the mapped command is pinned to ``clutch_robot_ref``, so any
    controller motion is a no-op on the robot.
    """

    scale: float = 1.0
    frame_alignment: float = 0.0  # rad
    clutch_engaged: bool = False
    clutch_controller_ref: np.ndarray = field(default_factory=lambda: np.zeros(3))
    clutch_robot_ref: np.ndarray = field(default_factory=lambda: np.zeros(3))
    last_command: np.ndarray | None = None


def map_controller(transform: TeleopTransform, inp: ControllerInput) -> np.ndarray:
    """Map one controller input to a commanded planar robot pose (x, z, theta).

    Mutates the transform's clutch state on trigger edges: press latches the
    controller reference, release latches the robot reference at the last
    held command, so successive press-move-release cycles accumulate.
    """
    if inp.trigger and not transform.clutch_engaged:
        transform.clutch_engaged = True
        transform.clutch_controller_ref = np.array(
            [inp.pointer[0], inp.pointer[1], inp.rotation], dtype=float
        )
    if not inp.trigger:
        if transform.clutch_engaged:
            transform.clutch_engaged = False
            if transform.last_command is not None:
                transform.clutch_robot_ref = transform.last_command.copy()
        return transform.clutch_robot_ref.copy()

    ref = transform.clutch_controller_ref
    dx = (inp.pointer[0] - ref[0]) * transform.scale
    dz = (inp.pointer[1] - ref[1]) * transform.scale
    dth = (inp.rotation - ref[2]) * transform.scale
    c, s = math.cos(transform.frame_alignment), math.sin(transform.frame_alignment)
    cmd = transform.clutch_robot_ref + np.array([c * dx - s * dz, s * dx + c * dz, dth])
    transform.last_command = cmd.copy()
    return cmd


class OUNoise:
    """Ornstein-Uhlenbeck process with stationary std ``sigma``."""

    def __init__(self, sigma: float, tau: float, dim: int, rng: np.random.Generator):
        self.sigma = sigma
        self.tau = tau
        self.x = np.zeros(dim)
        self.rng = rng

    def step(self, dt: float) -> np.ndarray:
        a = dt / self.tau
        self.x += -a * self.x + self.sigma * math.sqrt(2.0 * a) * self.rng.normal(size=self.x.shape)
        return self.x.copy()


class StreamRecorder:
    """Collects sensor samples from a sim while recording is active."""

    def __init__(self) -> None:
        self.pose_samples: list[PoseSample] = []
        self.wrench_samples: list[WrenchSample] = []
        self.active = True

    def collect(self, sim: InsertionSim) -> None:
        poses, wrenches = sim.drain_samples()
        if not self.active:
            return
        self.pose_samples.extend(poses)
        self.wrench_samples.extend(wrenches)

    def to_record(self, metadata: dict) -> EpisodeRecord:
        if not self.pose_samples or not self.wrench_samples:
            raise EpisodeError("no samples recorded (trigger never held?)")
        return EpisodeRecord(
            pose_t=np.array([s.t for s in self.pose_samples]),
            poses=np.stack([s.pose7 for s in self.pose_samples]),
            wrench_t=np.array([s.t for s in self.wrench_samples]),
            wrenches=np.stack([s.wrench for s in self.wrench_samples]),
            metadata=metadata,
        )


@dataclass(frozen=True)
class ExpertParams:
    # Speeds are deliberately human-teleop slow: episodes must be long
    # relative to the 1 Hz pose filter so offline smoothing keeps their shape.
    approach_speed: float = 10.0  # mm/s
    insert_speed: float = 6.0  # mm/s
    slide_speed: float = 5.0  # mm/s
    align_tip_height: float = 2.0  # mm above the mortise plane
    press_depth: float = 0.8  # commanded face penetration, mm
    straighten_time: float = 2.5  # s to ramp the 6 deg tilt to 0
    fx_gain: float = 0.04  # mm of lateral correction per sensed N
    noise_sigma: float = 0.3  # mm, OU command noise
    noise_tau: float = 0.2  # s
    contact_force_min: float = 3.0  # N, face-contact detector
    capture_depth: float = 1.2  # mm of tip drop that counts as slot capture
    hold_time: float = 1.0  # s of seated hold recorded at the end
    time_budget_s: float = 45.0  # generous; the expert decides when it is done
    retry_budget: int = 5


class ScriptedExpert:
    """Phase-machine expert driving one insertion on a live sim.

    The nominal variant straightens the tenon while descending to the slot
    center, then inserts with force-based lateral correction. The recovery
    variant first presses onto the mortise face 3-8 mm outside the slot
    opening, slides along the face toward the slot under light normal load,
    and inserts once the tip drops into the opening.
    """

    def __init__(
        self,
        sim: InsertionSim,
        variant: str,
        rng: np.random.Generator,
        params: ExpertParams = ExpertParams(),
    ):
        if variant not in ("nominal", "recovery"):
            raise ValueError(f"unknown expert variant {variant!r}")
        self.sim = sim
        self.variant = variant
        self.params = params
        self.noise = OUNoise(params.noise_sigma, params.noise_tau, 2, rng)
        self.slot_x = sim.mortise_offset
        tip = sim.tip()
        self.cmd_tip = np.array([tip[0], tip[1]])
        self.cmd_theta = float(sim.state.pose[2])
        self.phase = "approach"
        self.finished = False
        self._hold_left = params.hold_time
        if variant == "recovery":
            hw = sim.geometry.mortise_slot_width / 2.0 + sim.geometry.edge_chamfer
            miss = rng.uniform(3.0, 8.0)
            side = 1.0 if rng.random() < 0.5 else -1.0
            self.face_x = self.slot_x + side * (hw + miss)
        else:
            self.face_x = self.slot_x

    def _move_toward(self, target: np.ndarray, speed: float, dt: float) -> None:
        delta = target - self.cmd_tip
        dist = float(np.linalg.norm(delta))
        if dist > 1e-12:
            step = min(dist, speed * dt)
            self.cmd_tip += delta * (step / dist)

    def command(self, dt: float) -> np.ndarray:
        """Next commanded tool pose (x, z, theta) for one control tick."""
        p = self.params
        sim = self.sim
        depth = sim.insertion_depth()
        fx = float(sim.latest_wrench.wrench[0]) if sim.latest_wrench is not None else 0.0

        # Straighten during the initial descent regardless of variant.
        if self.cmd_theta > 0.0:
            self.cmd_theta = max(0.0, self.cmd_theta - dt * math.radians(6.0) / p.straighten_time)

        if self.phase == "approach":
            target = np.array([self.face_x, p.align_tip_height])
            self._move_toward(target, p.approach_speed, dt)
            if np.linalg.norm(target - self.cmd_tip) < 0.3 and self.cmd_theta == 0.0:
                self.phase = "insert" if self.variant == "nominal" else "press"
        elif self.phase == "press":
            self._move_toward(np.array([self.face_x, -p.press_depth]), p.insert_speed, dt)
            if abs(float(sim.latest_wrench.wrench[2])) > p.contact_force_min:
                self.phase = "slide"
        elif self.phase == "slide":
            self._move_toward(np.array([self.slot_x, -p.press_depth]), p.slide_speed, dt)
            if depth > p.capture_depth:
                self.phase = "insert"
        if self.phase == "insert":
            target_z = -(sim.geometry.mortise_depth + 1.0)
            self._move_toward(np.array([self.slot_x, target_z]), p.insert_speed, dt)
            self.cmd_tip[0] = self.slot_x + p.fx_gain * fx
            if depth >= sim.geometry.mortise_depth - 0.2:  # seated on the floor
                self.phase = "hold"
        if self.phase == "hold":
            self._hold_left -= dt
            if self._hold_left <= 0.0:
                self.finished = True

        noisy = self.cmd_tip + self.noise.step(dt)
        return sim.tool_pose_for_tip(noisy[0], noisy[1], self.cmd_theta)


def scripted_demo(
    config: SimConfig,
    mortise_offset: float,
    variant: str,
    rng: np.random.Generator,
    params: ExpertParams = ExpertParams(),
    episode_id: str = "episode",
) -> EpisodeRecord:
    """Run the scripted expert until it seats the joint, re-rolling failures.

    Recording runs with the simulator's automatic success check disabled
    (the expert, like a human demonstrator, decides when the joint is
    seated), so episodes include poses past the success threshold plus a
    short seated hold. Raises :class:`EpisodeError` once the retry budget
    is exhausted.
    """
    sim_config = replace(config, time_budget_s=params.time_budget_s)
    failures = 0
    for _attempt in range(params.retry_budget):
        seed = int(rng.integers(0, 2**63 - 1))
        sim = make_sim(sim_config, mortise_offset, seed=seed, auto_success=False)
        expert = ScriptedExpert(sim, variant, np.random.default_rng(seed ^ 0x5EED), params)
        recorder = StreamRecorder()
        recorder.collect(sim)  # t = 0 samples
        dt = 1.0 / config.command_rate
        while sim.status is SimStatus.RUNNING and not expert.finished:
            sim.step(expert.command(dt), dt)
            recorder.collect(sim)
        seated = (
            expert.finished
            and sim.status is SimStatus.RUNNING
            and sim.insertion_depth() >= 0.95 * sim.geometry.mortise_depth
            and abs(sim.state.pose[2]) < math.radians(1.0)
        )
        if seated:
            metadata = {
                "episode_id": episode_id,
                "demo_type": variant,
                "mortise_offset": mortise_offset,
                "seed": seed,
                "retries": failures,
                "duration_s": sim.state.clock,
                "final_depth_mm": sim.insertion_depth(),
            }
            return recorder.to_record(metadata)
        failures += 1
    raise EpisodeError(
        f"expert failed {params.retry_budget} attempts at offset {mortise_offset:+.2f} ({variant})"
    )


def collect_demos(
    config: SimConfig,
    n: int,
    out_dir: str | Path,
    recovery_frac: float = 0.25,
    offset_max: float = 10.0,
    seed: int = 0,
    params: ExpertParams = ExpertParams(),
) -> list[Path]:
    """Generate a demonstration batch and write NDJSON episode files.

    Exactly ``round(recovery_frac * n)`` episodes are error-recovery demos,
    placed at rng-shuffled positions; mortise offsets are drawn with the
    uniform-magnitude sampler up to ``offset_max``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    n_recovery = round(recovery_frac * n)
    variants = ["recovery"] * n_recovery + ["nominal"] * (n - n_recovery)
    order = rng.permutation(n)
    paths = []
    for i in range(n):
        variant = variants[int(order[i])]
        offset = sample_mortise_offset(rng, offset_max) if offset_max > 0 else 0.0
        episode_id = f"ep-{i:05d}-{variant}"
        record = scripted_demo(config, offset, variant, rng, params, episode_id)
        paths.append(write_episode(record, out_dir / f"{episode_id}.ndjson"))
    return paths
