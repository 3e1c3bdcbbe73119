"""Planar mortise-and-tenon insertion simulator.

Models the tenon as a planar rigid body (x, z, rotation theta about y) held
by a stiff PD pose tracker, pressed into a static mortise block whose slot
may be laterally offset. Contact uses a penalty model (linear spring-damper
normal force, tanh-smoothed Coulomb friction) evaluated at the tenon corners
against the mortise surfaces and at the mortise lip edges against the tenon
faces. A wrench sensor at the tool frame reports the contact wrench with
additive noise through a first-order IIR anti-aliasing filter, sampled on
the asynchronous cadences of the pose (12 ms) and force (64 Hz) streams.

Units: mm, N, N*m, seconds (clock kept internally in integer microseconds).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "ConfigurationError",
    "JointGeometry",
    "SimConfig",
    "SimStatus",
    "StepStatus",
    "SimState",
    "PoseSample",
    "WrenchSample",
    "Contact",
    "contact_wrench",
    "insertion_depth",
    "check_termination",
    "sample_mortise_offset",
    "InsertionSim",
    "make_sim",
    "START_TIP_HEIGHT_MM",
    "START_TILT_RAD",
]

# Fixed start pose: tenon tip 15 mm above the mortise plane, tilted 6 degrees
# about y. Identical for every demonstration and rollout.
START_TIP_HEIGHT_MM = 15.0
START_TILT_RAD = math.radians(6.0)

POSE_PERIOD_US = 12_000  # pose stream every 12 ms (~83 Hz)
WRENCH_PERIOD_US = 15_625  # force stream at 64 Hz


class ConfigurationError(ValueError):
    """Invalid simulator configuration (geometry or scene parameters)."""


class SimStatus(str, enum.Enum):
    RUNNING = "running"
    SUCCESS = "success"
    PROTECTIVE_STOP = "protective_stop"
    TIMEOUT = "timeout"

    @property
    def terminal(self) -> bool:
        return self is not SimStatus.RUNNING


class StepStatus(str, enum.Enum):
    """Outcome of a single ``step`` call: the sim status, or a rejection."""

    RUNNING = "running"
    SUCCESS = "success"
    PROTECTIVE_STOP = "protective_stop"
    TIMEOUT = "timeout"
    REJECTED = "rejected"


@dataclass(frozen=True)
class JointGeometry:
    """Planar joint dimensions in mm.

    The slot opening is chamfered at 45 degrees by ``edge_chamfer`` on both
    lips, so the opening at the surface is ``mortise_slot_width + 2*chamfer``
    wide and narrows to the nominal slot width at ``z = -edge_chamfer``.
    """

    tenon_width: float = 30.0
    tenon_length: float = 60.0
    mortise_slot_width: float = 30.1
    mortise_depth: float = 40.0
    mortise_face_halfwidth: float = 60.0
    edge_chamfer: float = 2.0

    def __post_init__(self) -> None:
        if self.cheek_clearance <= 0:
            raise ConfigurationError(
                f"slot width {self.mortise_slot_width} must exceed tenon width {self.tenon_width}"
            )
        if self.tenon_length <= 0 or self.mortise_depth <= 0:
            raise ConfigurationError("tenon length and mortise depth must be positive")
        if self.edge_chamfer < 0:
            raise ConfigurationError("edge chamfer must be non-negative")

    @property
    def cheek_clearance(self) -> float:
        return self.mortise_slot_width - self.tenon_width


@dataclass(frozen=True)
class SimConfig:
    geometry: JointGeometry = field(default_factory=JointGeometry)
    contact_stiffness: float = 100.0  # N/mm
    contact_damping: float = 1.0  # N*s/mm
    friction_mu: float = 0.4
    friction_smoothing_vel: float = 1.0  # mm/s
    track_stiffness: float = 20.0  # N/mm, gripper translational PD
    track_damping: float = 0.283  # N*s/mm (~critically damped for 1 kg)
    rot_stiffness: float = 50.0  # N*m/rad
    rot_damping: float = 0.5  # N*m*s/rad
    mass: float = 1.0  # kg
    protective_stop_force: float = 150.0  # N
    substep_dt: float = 5e-4  # s
    command_rate: float = 60.0  # Hz
    wrench_noise_std: float = 0.2  # N (torque channels use std/10 N*m)
    iir_cutoff_hz: float = 30.0  # sensor anti-aliasing filter
    time_budget_s: float = 20.0
    seed: int = 0

    def __post_init__(self) -> None:
        positive = {
            "contact_stiffness": self.contact_stiffness,
            "friction_smoothing_vel": self.friction_smoothing_vel,
            "track_stiffness": self.track_stiffness,
            "rot_stiffness": self.rot_stiffness,
            "mass": self.mass,
            "protective_stop_force": self.protective_stop_force,
            "substep_dt": self.substep_dt,
            "command_rate": self.command_rate,
            "time_budget_s": self.time_budget_s,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigurationError(f"{name} must be positive, got {value}")
        if min(self.contact_damping, self.friction_mu, self.track_damping, self.rot_damping) < 0:
            raise ConfigurationError("damping and friction coefficients must be non-negative")
        if self.wrench_noise_std < 0:
            raise ConfigurationError("wrench noise std must be non-negative")
        if self.substep_dt > 1.0 / self.command_rate:
            raise ConfigurationError("substep_dt must not exceed the command period")

    @property
    def inertia(self) -> float:
        """Rotational inertia about the tool point, kg*mm^2 (uniform bar)."""
        w, length = self.geometry.tenon_width, self.geometry.tenon_length
        return self.mass * ((w * w + length * length) / 12.0 + (length / 2.0) ** 2)


@dataclass
class SimState:
    """Snapshot of the physical state. ``pose`` is the tool point (x, z, theta)."""

    pose: np.ndarray
    velocity: np.ndarray
    commanded_pose: np.ndarray
    mortise_offset: float
    clock: float  # s
    status: SimStatus

    def copy(self) -> "SimState":
        return replace(
            self,
            pose=self.pose.copy(),
            velocity=self.velocity.copy(),
            commanded_pose=self.commanded_pose.copy(),
        )


@dataclass(frozen=True)
class PoseSample:
    t: float  # ms
    pose7: np.ndarray  # (x, y, z, qw, qx, qy, qz), mm


@dataclass(frozen=True)
class WrenchSample:
    t: float  # ms
    wrench: np.ndarray  # (fx, fy, fz, tx, ty, tz), N / N*m

    @property
    def force(self) -> np.ndarray:
        return self.wrench[:3]

    @property
    def torque(self) -> np.ndarray:
        return self.wrench[3:]


@dataclass(frozen=True)
class Contact:
    point: tuple[float, float]  # world (x, z), mm
    normal: tuple[float, float]  # direction of the normal force on the tenon
    normal_force: float  # N
    tangent_force: float  # N, signed along rot90(normal)
    penetration: float  # mm


def _rot(theta: float) -> tuple[float, float]:
    return math.cos(theta), math.sin(theta)


def _tenon_corners(geometry: JointGeometry) -> tuple[tuple[float, float], ...]:
    w2 = geometry.tenon_width / 2.0
    length = geometry.tenon_length
    return ((-w2, -length), (w2, -length), (-w2, 0.0), (w2, 0.0))


def tenon_polygon(geometry: JointGeometry, pose: np.ndarray) -> np.ndarray:
    """World-frame outline of the tenon rectangle (4 vertices, (x, z) mm)."""
    x, z, theta = float(pose[0]), float(pose[1]), float(pose[2])
    c, s = _rot(theta)
    order = ((-geometry.tenon_width / 2, 0.0), (-geometry.tenon_width / 2, -geometry.tenon_length),
             (geometry.tenon_width / 2, -geometry.tenon_length), (geometry.tenon_width / 2, 0.0))
    return np.array([(x + c * bx + s * bz, z - s * bx + c * bz) for bx, bz in order])


def _point_segment_closest(
    px: float, pz: float, ax: float, az: float, bx: float, bz: float
) -> tuple[float, float, float]:
    """Distance and closest point from (px, pz) to segment a-b."""
    dx, dz = bx - ax, bz - az
    t = ((px - ax) * dx + (pz - az) * dz) / (dx * dx + dz * dz)
    t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
    qx, qz = ax + t * dx, az + t * dz
    return math.hypot(px - qx, pz - qz), qx, qz


def _solid_penetration(
    geometry: JointGeometry, offset: float, px: float, pz: float
) -> tuple[float, float, float] | None:
    """Penetration depth and push-out direction of the mortise solid at a point.

    Returns ``(depth, nx, nz)`` where the unit normal points from the point
    toward the nearest boundary of the solid (the direction a contact force
    pushes the point), or None when the point is in free space or inside
    the slot cavity.
    """
    if pz >= 0.0:
        return None
    dx = px - offset
    u, side = abs(dx), (1.0 if dx >= 0.0 else -1.0)
    hw = geometry.mortise_slot_width / 2.0
    ch = geometry.edge_chamfer
    depth_m = geometry.mortise_depth
    face_hw = geometry.mortise_face_halfwidth
    if u > face_hw:
        return None
    # Cavity half-width at this height (chamfered opening).
    cav = hw + max(0.0, ch + pz)
    if pz > -depth_m and u < cav:
        return None  # inside the cavity

    # Nearest point on the solid boundary polyline (folded to u >= 0):
    # top face, chamfer cut, slot wall, slot floor.
    segments = (
        (hw + ch, 0.0, face_hw, 0.0),
        (hw, -ch, hw + ch, 0.0),
        (hw, -depth_m, hw, -ch),
        (0.0, -depth_m, hw, -depth_m),
    )
    best = None
    for ax, az, bx, bz in segments:
        d, qx, qz = _point_segment_closest(u, pz, ax, az, bx, bz)
        if best is None or d < best[0]:
            best = (d, qx, qz)
    d, qx, qz = best
    if d < 1e-12:
        return None
    return d, side * (qx - u) / d, (qz - pz) / d


def _mortise_edges(geometry: JointGeometry, offset: float) -> tuple[tuple[float, float], ...]:
    hw = geometry.mortise_slot_width / 2.0
    ch = geometry.edge_chamfer
    edges = [(offset - hw, -ch), (offset + hw, -ch)]
    if ch > 0.0:
        edges += [(offset - hw - ch, 0.0), (offset + hw + ch, 0.0)]
    return tuple(edges)


def contact_wrench(
    geometry: JointGeometry,
    pose: np.ndarray,
    velocity: np.ndarray,
    mortise_offset: float = 0.0,
    *,
    stiffness: float = 100.0,
    damping: float = 1.0,
    friction_mu: float = 0.4,
    friction_smoothing_vel: float = 1.0,
) -> tuple[np.ndarray, float, list[Contact]]:
    """Contact wrench on the tenon about the tool point.

    Returns ``(force, torque_y, contacts)`` with force ``(fx, fz)`` in N and
    torque in N*mm. Zero wrench and an empty contact list when separated.
    """
    x, z, theta = float(pose[0]), float(pose[1]), float(pose[2])
    vx, vz, om = float(velocity[0]), float(velocity[1]), float(velocity[2])
    c, s = _rot(theta)
    w2 = geometry.tenon_width / 2.0
    length = geometry.tenon_length

    fx_tot = fz_tot = ty_tot = 0.0
    contacts: list[Contact] = []

    def add_contact(px: float, pz: float, nx: float, nz: float, depth: float) -> None:
        nonlocal fx_tot, fz_tot, ty_tot
        rx, rz = px - x, pz - z
        vpx = vx + om * rz
        vpz = vz - om * rx
        ddot = -(vpx * nx + vpz * nz)  # penetration rate
        fn = stiffness * depth + damping * ddot
        if fn <= 0.0:
            return
        tx_, tz_ = -nz, nx
        vt = vpx * tx_ + vpz * tz_
        ft = -friction_mu * fn * math.tanh(vt / friction_smoothing_vel)
        fx = fn * nx + ft * tx_
        fz = fn * nz + ft * tz_
        fx_tot += fx
        fz_tot += fz
        ty_tot += rz * fx - rx * fz
        contacts.append(Contact((px, pz), (nx, nz), fn, ft, depth))

    # Tenon corners against the mortise solid.
    for bx, bz in _tenon_corners(geometry):
        px = x + c * bx + s * bz
        pz = z - s * bx + c * bz
        hit = _solid_penetration(geometry, mortise_offset, px, pz)
        if hit is not None:
            add_contact(px, pz, hit[1], hit[2], hit[0])

    # Mortise lip edges against the tenon faces.
    for ex, ez in _mortise_edges(geometry, mortise_offset):
        # Body coordinates of the edge point.
        wx, wz = ex - x, ez - z
        bx = c * wx - s * wz
        bz = s * wx + c * wz
        if not (-w2 < bx < w2 and -length < bz < 0.0):
            continue
        # Nearest tenon face; outward normals in body frame.
        cands = (
            (bx + w2, -1.0, 0.0),  # left cheek
            (w2 - bx, 1.0, 0.0),  # right cheek
            (bz + length, 0.0, -1.0),  # tip face
            (-bz, 0.0, 1.0),  # top face
        )
        depth, nbx, nbz = min(cands, key=lambda t: t[0])
        # Force on the tenon opposes its penetrated face's outward normal;
        # the penetration-rate convention in add_contact carries over because
        # the contact point is static and the tenon material moves.
        nwx = -(c * nbx + s * nbz)
        nwz = -(-s * nbx + c * nbz)
        add_contact(ex, ez, nwx, nwz, depth)

    return np.array([fx_tot, fz_tot]), ty_tot, contacts


def tip_position(geometry: JointGeometry, pose: np.ndarray) -> tuple[float, float]:
    x, z, theta = float(pose[0]), float(pose[1]), float(pose[2])
    c, s = _rot(theta)
    return (x - s * geometry.tenon_length, z - c * geometry.tenon_length)


def insertion_depth(state: SimState, geometry: JointGeometry) -> float:
    """Depth of the tenon tip below the mortise plane (negative when above)."""
    return -tip_position(geometry, state.pose)[1]


def check_termination(
    state: SimState, time_budget: float, geometry: JointGeometry
) -> SimStatus:
    """Success/timeout decision; terminal states are absorbing.

    Success requires 95% of the mortise depth with the tenon upright within
    1 degree and no protective stop. The time budget stands in for the
    operator's no-progress judgment and is reported distinctly as TIMEOUT.
    """
    if state.status.terminal:
        return state.status
    if (
        insertion_depth(state, geometry) >= 0.95 * geometry.mortise_depth
        and abs(state.pose[2]) < math.radians(1.0)
    ):
        return SimStatus.SUCCESS
    if state.clock > time_budget:
        return SimStatus.TIMEOUT
    return SimStatus.RUNNING


def sample_mortise_offset(rng: np.random.Generator, r_max: float) -> float:
    """Signed planar offset: magnitude ~ U[0, r_max], sign ~ U{-1, +1}.

    Planar reduction of polar sampling with uniform radius, which biases
    the draw toward small offsets relative to area-uniform sampling.
    """
    if r_max < 0:
        raise ConfigurationError("r_max must be non-negative")
    r = rng.uniform(0.0, r_max)
    sign = 1.0 if rng.random() < 0.5 else -1.0
    return float(sign * r)


class InsertionSim:
    """Steppable insertion scene: integrator, sensors, and status tracking.

    Deterministic given (config, mortise_offset, seed, command sequence).
    Not thread-safe; run independent instances for parallel evaluation.
    """

    def __init__(
        self,
        config: SimConfig,
        mortise_offset: float,
        seed: int | None = None,
        auto_success: bool = True,
    ):
        if abs(mortise_offset) > config.geometry.mortise_face_halfwidth:
            raise ConfigurationError(
                f"mortise offset {mortise_offset} exceeds the face halfwidth"
            )
        self.config = config
        self.geometry = config.geometry
        self.mortise_offset = float(mortise_offset)
        self.seed = config.seed if seed is None else int(seed)
        # Demonstration recording disables the automatic success check so the
        # demonstrator can seat the joint past the threshold and hold it;
        # protective stop and timeout remain active either way.
        self.auto_success = auto_success
        self._rng = np.random.default_rng(self.seed)

        length = self.geometry.tenon_length
        theta0 = START_TILT_RAD
        c, s = _rot(theta0)
        pose0 = np.array([s * length, START_TIP_HEIGHT_MM + c * length, theta0])
        self.state = SimState(
            pose=pose0,
            velocity=np.zeros(3),
            commanded_pose=pose0.copy(),
            mortise_offset=self.mortise_offset,
            clock=0.0,
            status=SimStatus.RUNNING,
        )

        self._clock_us = 0
        self._carry_us = 0
        self._substep_us = max(1, round(config.substep_dt * 1e6))
        self._iir = np.zeros(6)
        self._iir_alpha = 1.0 - math.exp(
            -2.0 * math.pi * config.iir_cutoff_hz * config.substep_dt
        )
        self._next_pose_us = 0
        self._next_wrench_us = 0
        self._pending_pose: list[PoseSample] = []
        self._pending_wrench: list[WrenchSample] = []
        self.latest_pose: PoseSample | None = None
        self.latest_wrench: WrenchSample | None = None
        self.last_contacts: list[Contact] = []
        self._emit_samples()  # t = 0 samples from both sensor streams

    # -- sensor emulation ---------------------------------------------------

    def _pose7(self) -> np.ndarray:
        x, z, theta = self.state.pose
        return np.array(
            [x, 0.0, z, math.cos(theta / 2.0), 0.0, math.sin(theta / 2.0), 0.0]
        )

    def _emit_samples(self) -> None:
        while self._clock_us >= self._next_pose_us:
            sample = PoseSample(self._next_pose_us / 1000.0, self._pose7())
            self._pending_pose.append(sample)
            self.latest_pose = sample
            self._next_pose_us += POSE_PERIOD_US
        while self._clock_us >= self._next_wrench_us:
            sample = WrenchSample(self._next_wrench_us / 1000.0, self._iir.copy())
            self._pending_wrench.append(sample)
            self.latest_wrench = sample
            self._next_wrench_us += WRENCH_PERIOD_US

    def drain_samples(self) -> tuple[list[PoseSample], list[WrenchSample]]:
        """Sensor samples emitted since the last drain (for recorders)."""
        poses, wrenches = self._pending_pose, self._pending_wrench
        self._pending_pose, self._pending_wrench = [], []
        return poses, wrenches

    # -- stepping -----------------------------------------------------------

    def _substep(self) -> None:
        cfg = self.config
        st = self.state
        force, ty_nmm, contacts = contact_wrench(
            self.geometry,
            st.pose,
            st.velocity,
            self.mortise_offset,
            stiffness=cfg.contact_stiffness,
            damping=cfg.contact_damping,
            friction_mu=cfg.friction_mu,
            friction_smoothing_vel=cfg.friction_smoothing_vel,
        )
        self.last_contacts = contacts
        fx_c, fz_c = float(force[0]), float(force[1])

        ex = cfg.track_stiffness * (st.commanded_pose[0] - st.pose[0]) - cfg.track_damping * st.velocity[0]
        ez = cfg.track_stiffness * (st.commanded_pose[1] - st.pose[1]) - cfg.track_damping * st.velocity[1]
        et_nmm = 1000.0 * (
            cfg.rot_stiffness * (st.commanded_pose[2] - st.pose[2]) - cfg.rot_damping * st.velocity[2]
        )

        dt = cfg.substep_dt
        # N -> kg*mm/s^2 carries a factor of 1000.
        st.velocity[0] += dt * 1000.0 * (fx_c + ex) / cfg.mass
        st.velocity[1] += dt * 1000.0 * (fz_c + ez) / cfg.mass
        st.velocity[2] += dt * 1000.0 * (ty_nmm + et_nmm) / cfg.inertia
        st.pose += dt * st.velocity

        self._clock_us += self._substep_us
        st.clock = self._clock_us / 1e6

        noise = self._rng.normal(0.0, 1.0, 6)
        std_f = cfg.wrench_noise_std
        std_t = cfg.wrench_noise_std / 10.0
        raw = np.array(
            [
                fx_c + std_f * noise[0],
                std_f * noise[1],
                fz_c + std_f * noise[2],
                std_t * noise[3],
                ty_nmm / 1000.0 + std_t * noise[4],
                std_t * noise[5],
            ]
        )
        self._iir += self._iir_alpha * (raw - self._iir)
        self._emit_samples()

        if math.hypot(fx_c, fz_c) > cfg.protective_stop_force:
            st.status = SimStatus.PROTECTIVE_STOP

    def step(
        self, commanded_pose: np.ndarray, dt: float | None = None
    ) -> tuple[SimState, WrenchSample | None, StepStatus]:
        """Advance by ``dt`` seconds (default one command period).

        Terminal states absorb: stepping a finished sim is a no-op on the
        pose. Non-finite commands are rejected without mutating the state.
        """
        if self.state.status.terminal:
            return self.state, self.latest_wrench, StepStatus(self.state.status.value)
        cmd = np.asarray(commanded_pose, dtype=float)
        if cmd.shape != (3,) or not np.all(np.isfinite(cmd)):
            return self.state, self.latest_wrench, StepStatus.REJECTED
        if dt is None:
            dt = 1.0 / self.config.command_rate

        self.state.commanded_pose = cmd.copy()
        self._carry_us += round(dt * 1e6)
        n = self._carry_us // self._substep_us
        self._carry_us -= n * self._substep_us
        for _ in range(int(n)):
            self._substep()
            if self.state.status.terminal:
                break
        if not self.state.status.terminal:
            if self.auto_success:
                self.state.status = check_termination(
                    self.state, self.config.time_budget_s, self.geometry
                )
            elif self.state.clock > self.config.time_budget_s:
                self.state.status = SimStatus.TIMEOUT
        return self.state, self.latest_wrench, StepStatus(self.state.status.value)

    # -- queries ------------------------------------------------------------

    @property
    def status(self) -> SimStatus:
        return self.state.status

    def insertion_depth(self) -> float:
        return insertion_depth(self.state, self.geometry)

    def tip(self) -> tuple[float, float]:
        return tip_position(self.geometry, self.state.pose)

    def tool_pose_for_tip(self, tip_x: float, tip_z: float, theta: float) -> np.ndarray:
        """Tool pose placing the tenon tip at a target point with tilt theta."""
        c, s = _rot(theta)
        length = self.geometry.tenon_length
        return np.array([tip_x + s * length, tip_z + c * length, theta])

    def snapshot(self) -> SimState:
        return self.state.copy()


def make_sim(
    config: SimConfig,
    mortise_offset: float = 0.0,
    seed: int | None = None,
    auto_success: bool = True,
) -> InsertionSim:
    """Fresh simulator with the tenon at the fixed start pose."""
    return InsertionSim(config, mortise_offset, seed, auto_success)
