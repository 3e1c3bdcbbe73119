"""Preprocessing chain from raw episodes to normalized training samples.

Pipeline per episode: resample both asynchronous streams onto a common
60 Hz grid (linear for positions and wrenches, slerp for rotations),
zero-phase Butterworth filtering (4th order / 1 Hz for poses, 1st order /
10 Hz for wrenches), idle-step pruning on pose finite differences,
subsampling to a fixed 64-point trajectory, 6D rotation conversion, and
min-max normalization to [-1, 1] with stats computed on the training split.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal as sp_signal

from .episodes import EpisodeRecord, read_episode
from .rotations import quat_normalize, quat_to_rot6d, rot6d_to_quat, slerp

__all__ = [
    "AlignmentError",
    "FilterDesignError",
    "AlignedTrajectory",
    "resample_60hz",
    "butterworth_coeffs",
    "butterworth",
    "filter_trajectory",
    "derive_actions",
    "subsample_indices",
    "subsample_64",
    "pose7_to_pose9",
    "pose9_to_pose7",
    "NormStats",
    "normalize",
    "denormalize",
    "window_samples",
    "process_episode",
    "PipelineConfig",
    "build_manifest",
    "load_manifest",
    "load_training_arrays",
]

RESAMPLE_HZ = 60.0
TRAJ_LEN = 64


class AlignmentError(ValueError):
    """Streams cannot be aligned onto a common timebase."""


class FilterDesignError(ValueError):
    """Invalid digital filter specification."""


@dataclass
class AlignedTrajectory:
    t: np.ndarray  # (N,) ms, uniform at 1/60 s
    poses: np.ndarray  # (N, 7)
    wrenches: np.ndarray  # (N, 6)


def _interp_linear(t_grid: np.ndarray, t: np.ndarray, values: np.ndarray) -> np.ndarray:
    return np.stack([np.interp(t_grid, t, values[:, j]) for j in range(values.shape[1])], axis=1)


def resample_60hz(episode: EpisodeRecord, rate_hz: float = RESAMPLE_HZ) -> AlignedTrajectory:
    """Align pose and wrench streams onto a uniform grid over their overlap."""
    if len(episode.pose_t) < 2 or len(episode.wrench_t) < 2:
        raise AlignmentError("need at least 2 samples per stream")
    t0 = max(episode.pose_t[0], episode.wrench_t[0])
    t1 = min(episode.pose_t[-1], episode.wrench_t[-1])
    if t1 <= t0:
        raise AlignmentError("pose and wrench streams do not overlap in time")
    period_ms = 1000.0 / rate_hz
    n = int(np.floor((t1 - t0) / period_ms)) + 1
    t_grid = t0 + period_ms * np.arange(n)

    positions = _interp_linear(t_grid, episode.pose_t, episode.poses[:, :3])
    quats = _slerp_series(t_grid, episode.pose_t, episode.poses[:, 3:7])
    wrenches = _interp_linear(t_grid, episode.wrench_t, episode.wrenches)
    return AlignedTrajectory(t=t_grid, poses=np.hstack([positions, quats]), wrenches=wrenches)


def _slerp_series(t_grid: np.ndarray, t: np.ndarray, quats: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(t, t_grid, side="right") - 1
    idx = np.clip(idx, 0, len(t) - 2)
    out = np.empty((len(t_grid), 4))
    for i, (k, tg) in enumerate(zip(idx, t_grid)):
        u = (tg - t[k]) / (t[k + 1] - t[k])
        out[i] = slerp(quats[k], quats[k + 1], float(np.clip(u, 0.0, 1.0)))
    return out


def butterworth_coeffs(order: int, cutoff_hz: float, fs_hz: float) -> tuple[np.ndarray, np.ndarray]:
    """Digital low-pass Butterworth (bilinear transform, pre-warped cutoff)."""
    if not 0.0 < cutoff_hz < fs_hz / 2.0:
        raise FilterDesignError(
            f"cutoff {cutoff_hz} Hz must lie in (0, {fs_hz / 2.0}) for fs={fs_hz} Hz"
        )
    if order < 1:
        raise FilterDesignError("filter order must be >= 1")
    b, a = sp_signal.butter(order, cutoff_hz, btype="low", fs=fs_hz)
    return b, a


def butterworth(
    x: np.ndarray, order: int, cutoff_hz: float, fs_hz: float, zero_phase: bool = True
) -> np.ndarray:
    """Low-pass filter each column; forward-backward by default (no lag)."""
    b, a = butterworth_coeffs(order, cutoff_hz, fs_hz)
    x = np.asarray(x, dtype=float)
    flat = x.ndim == 1
    if flat:
        x = x[:, None]
    if zero_phase:
        padlen = min(3 * max(len(a), len(b)), x.shape[0] - 2)
        y = sp_signal.filtfilt(b, a, x, axis=0, padlen=max(padlen, 0))
    else:
        zi = sp_signal.lfilter_zi(b, a)
        y = np.stack(
            [sp_signal.lfilter(b, a, x[:, j], zi=zi * x[0, j])[0] for j in range(x.shape[1])],
            axis=1,
        )
    return y[:, 0] if flat else y


def filter_trajectory(
    traj: AlignedTrajectory,
    pose_order: int = 4,
    pose_cutoff_hz: float = 1.0,
    wrench_order: int = 1,
    wrench_cutoff_hz: float = 10.0,
) -> AlignedTrajectory:
    """Zero-phase filtering of an aligned trajectory.

    Quaternion channels are filtered component-wise and renormalized, which
    is safe here because planar demos stay far from antipodal quaternions.
    """
    fs = 1000.0 / float(traj.t[1] - traj.t[0])
    positions = butterworth(traj.poses[:, :3], pose_order, pose_cutoff_hz, fs)
    quats = butterworth(traj.poses[:, 3:7], pose_order, pose_cutoff_hz, fs)
    quats = quat_normalize(quats)
    wrenches = butterworth(traj.wrenches, wrench_order, wrench_cutoff_hz, fs)
    return AlignedTrajectory(t=traj.t.copy(), poses=np.hstack([positions, quats]), wrenches=wrenches)


def derive_actions(
    poses: np.ndarray,
    idle_threshold: float = 0.05,
    angle_weight: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Prune idle steps from a 7D pose series via finite-difference magnitude.

    A step's motion is ``||dposition|| + angle_weight * |dangle_deg|``
    measured against the last kept pose (greedy compaction, which makes the
    operation idempotent on its own output). Returns the kept absolute poses
    and their indices; the first pose is always kept.
    """
    poses = np.asarray(poses, dtype=float)
    if len(poses) < 2:
        raise AlignmentError("need at least 2 poses to derive actions")
    kept = [0]
    for i in range(1, len(poses)):
        prev = poses[kept[-1]]
        dpos = float(np.linalg.norm(poses[i, :3] - prev[:3]))
        dot = abs(float(np.dot(poses[i, 3:7], prev[3:7])))
        dang = np.degrees(2.0 * np.arccos(min(dot, 1.0)))
        if dpos + angle_weight * dang >= idle_threshold:
            kept.append(i)
    if len(kept) < 2:
        raise AlignmentError("all steps idle: trajectory has no motion above threshold")
    kept_idx = np.asarray(kept, dtype=int)
    return poses[kept_idx], kept_idx


def subsample_indices(n: int, count: int = TRAJ_LEN) -> np.ndarray:
    """Uniform index selection including both endpoints; repeats when n < count."""
    if n < 2:
        raise AlignmentError("need at least 2 points to subsample")
    i = np.arange(count)
    return np.rint(i * (n - 1) / (count - 1)).astype(int)


def subsample_64(values: np.ndarray, count: int = TRAJ_LEN) -> np.ndarray:
    return np.asarray(values)[subsample_indices(len(values), count)]


def pose7_to_pose9(pose7: np.ndarray) -> np.ndarray:
    """(x, y, z, quat) -> (x, y, z, 6D rotation)."""
    pose7 = np.asarray(pose7, dtype=float)
    return np.concatenate([pose7[..., :3], quat_to_rot6d(pose7[..., 3:7])], axis=-1)


def pose9_to_pose7(pose9: np.ndarray) -> np.ndarray:
    pose9 = np.asarray(pose9, dtype=float)
    if pose9.ndim > 1:
        return np.stack([pose9_to_pose7(p) for p in pose9])
    return np.concatenate([pose9[:3], rot6d_to_quat(pose9[3:9])])


DEGENERATE_RANGE = 1e-8


@dataclass
class NormStats:
    """Per-dimension min-max bounds for pose, wrench, and action channels."""

    pose_min: np.ndarray
    pose_max: np.ndarray
    wrench_min: np.ndarray
    wrench_max: np.ndarray
    action_min: np.ndarray
    action_max: np.ndarray

    def to_dict(self) -> dict:
        return {
            "pose": {"min": self.pose_min.tolist(), "max": self.pose_max.tolist()},
            "wrench": {"min": self.wrench_min.tolist(), "max": self.wrench_max.tolist()},
            "action": {"min": self.action_min.tolist(), "max": self.action_max.tolist()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(
            pose_min=np.asarray(d["pose"]["min"], dtype=float),
            pose_max=np.asarray(d["pose"]["max"], dtype=float),
            wrench_min=np.asarray(d["wrench"]["min"], dtype=float),
            wrench_max=np.asarray(d["wrench"]["max"], dtype=float),
            action_min=np.asarray(d["action"]["min"], dtype=float),
            action_max=np.asarray(d["action"]["max"], dtype=float),
        )

    def hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()

    @classmethod
    def compute(cls, poses9: np.ndarray, wrenches: np.ndarray) -> "NormStats":
        """Stats over stacked (N, 9) pose and (N, 6) wrench arrays.

        Actions are absolute poses here, so the action channels share the
        pose bounds.
        """
        return cls(
            pose_min=poses9.min(axis=0),
            pose_max=poses9.max(axis=0),
            wrench_min=wrenches.min(axis=0),
            wrench_max=wrenches.max(axis=0),
            action_min=poses9.min(axis=0),
            action_max=poses9.max(axis=0),
        )


def normalize(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Min-max scale to [-1, 1]; degenerate dimensions map to 0."""
    x = np.asarray(x, dtype=float)
    span = hi - lo
    safe = np.where(span < DEGENERATE_RANGE, 1.0, span)
    out = 2.0 * (x - lo) / safe - 1.0
    return np.where(span < DEGENERATE_RANGE, 0.0, out)


def denormalize(xn: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Inverse of :func:`normalize`; degenerate dimensions recover ``lo``."""
    xn = np.asarray(xn, dtype=float)
    span = hi - lo
    out = (xn + 1.0) / 2.0 * span + lo
    return np.where(span < DEGENERATE_RANGE, lo, out)


def window_samples(
    poses9: np.ndarray,
    wrenches: np.ndarray,
    t_o_p: int,
    t_o_f: int,
    t_p: int,
    stats: NormStats,
) -> tuple[np.ndarray, np.ndarray]:
    """Observation/action windows for every timestep of a 64-point trajectory.

    Returns ``(obs, actions)`` with obs shape ``(64, 9*t_o_p + 6*t_o_f)``
    laid out [poses oldest->newest, wrenches oldest->newest], and actions
    shape ``(64, t_p, 9)`` holding the next ``t_p`` absolute poses. History
    and future windows are padded by edge replication.
    """
    n = len(poses9)
    if len(wrenches) != n:
        raise AlignmentError("pose and wrench trajectories differ in length")
    pn = normalize(poses9, stats.pose_min, stats.pose_max)
    wn = normalize(wrenches, stats.wrench_min, stats.wrench_max)
    an = normalize(poses9, stats.action_min, stats.action_max)

    obs = np.empty((n, 9 * t_o_p + 6 * t_o_f))
    actions = np.empty((n, t_p, 9))
    for t in range(n):
        hist_p = np.clip(np.arange(t - t_o_p + 1, t + 1), 0, n - 1)
        hist_f = np.clip(np.arange(t - t_o_f + 1, t + 1), 0, n - 1)
        future = np.clip(np.arange(t + 1, t + t_p + 1), 0, n - 1)
        obs[t] = np.concatenate([pn[hist_p].ravel(), wn[hist_f].ravel()])
        actions[t] = an[future]
    return obs, actions


@dataclass(frozen=True)
class PipelineConfig:
    resample_hz: float = RESAMPLE_HZ
    pose_filter_order: int = 4
    pose_filter_cutoff_hz: float = 1.0
    wrench_filter_order: int = 1
    wrench_filter_cutoff_hz: float = 10.0
    idle_threshold: float = 0.05
    angle_weight: float = 1.0
    traj_len: int = TRAJ_LEN

    def to_dict(self) -> dict:
        return {
            "resample_hz": self.resample_hz,
            "pose_filter": {"order": self.pose_filter_order, "cutoff_hz": self.pose_filter_cutoff_hz},
            "wrench_filter": {
                "order": self.wrench_filter_order,
                "cutoff_hz": self.wrench_filter_cutoff_hz,
            },
            "idle_threshold": self.idle_threshold,
            "angle_weight": self.angle_weight,
            "traj_len": self.traj_len,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        return cls(
            resample_hz=d.get("resample_hz", RESAMPLE_HZ),
            pose_filter_order=d.get("pose_filter", {}).get("order", 4),
            pose_filter_cutoff_hz=d.get("pose_filter", {}).get("cutoff_hz", 1.0),
            wrench_filter_order=d.get("wrench_filter", {}).get("order", 1),
            wrench_filter_cutoff_hz=d.get("wrench_filter", {}).get("cutoff_hz", 10.0),
            idle_threshold=d.get("idle_threshold", 0.05),
            angle_weight=d.get("angle_weight", 1.0),
            traj_len=d.get("traj_len", TRAJ_LEN),
        )


def process_episode(
    episode: EpisodeRecord, cfg: PipelineConfig = PipelineConfig()
) -> tuple[np.ndarray, np.ndarray]:
    """Full per-episode chain up to (but excluding) normalization.

    Returns ``(poses9, wrenches)`` as fixed-length (traj_len, 9/6) arrays.
    """
    traj = resample_60hz(episode, cfg.resample_hz)
    traj = filter_trajectory(
        traj,
        cfg.pose_filter_order,
        cfg.pose_filter_cutoff_hz,
        cfg.wrench_filter_order,
        cfg.wrench_filter_cutoff_hz,
    )
    kept_poses, kept_idx = derive_actions(traj.poses, cfg.idle_threshold, cfg.angle_weight)
    kept_wrench = traj.wrenches[kept_idx]
    sel = subsample_indices(len(kept_idx), cfg.traj_len)
    return pose7_to_pose9(kept_poses[sel]), kept_wrench[sel]


# -- dataset manifest ---------------------------------------------------------


def build_manifest(
    episode_paths: list[str | Path],
    out_path: str | Path,
    val_fraction: float = 0.1,
    seed: int = 0,
    pipeline: PipelineConfig = PipelineConfig(),
) -> Path:
    """Assign per-episode splits, compute training-split norm stats, write JSON."""
    paths = [Path(p) for p in episode_paths]
    if not paths:
        raise AlignmentError("no episodes given")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(paths))
    n_val = max(1, round(val_fraction * len(paths))) if len(paths) > 1 else 0
    val_set = set(order[:n_val].tolist())

    train_poses, train_wrenches = [], []
    entries = []
    out_path = Path(out_path)
    for i, p in enumerate(paths):
        split = "val" if i in val_set else "train"
        poses9, wrenches = process_episode(read_episode(p), pipeline)
        if split == "train":
            train_poses.append(poses9)
            train_wrenches.append(wrenches)
        try:
            rel = str(p.resolve().relative_to(out_path.resolve().parent))
        except ValueError:
            rel = str(p.resolve())
        entries.append({"path": rel, "split": split})
    stats = NormStats.compute(np.vstack(train_poses), np.vstack(train_wrenches))
    manifest = {
        "episodes": entries,
        "pipeline": pipeline.to_dict(),
        "norm_stats": stats.to_dict(),
        "norm_stats_hash": stats.hash(),
        "seed": seed,
        "val_fraction": val_fraction,
    }
    out_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return out_path


def load_manifest(path: str | Path) -> dict:
    manifest = json.loads(Path(path).read_text())
    manifest["_dir"] = str(Path(path).resolve().parent)
    return manifest


def _resolve_episode_path(manifest: dict, entry: dict) -> Path:
    p = Path(entry["path"])
    return p if p.is_absolute() else Path(manifest["_dir"]) / p


def load_training_arrays(
    manifest: dict, t_o_p: int, t_o_f: int, t_p: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Windowed (obs, action) arrays for the train and val splits."""
    stats = NormStats.from_dict(manifest["norm_stats"])
    pipeline = PipelineConfig.from_dict(manifest["pipeline"])
    splits: dict[str, tuple[list, list]] = {"train": ([], []), "val": ([], [])}
    for entry in manifest["episodes"]:
        poses9, wrenches = process_episode(
            read_episode(_resolve_episode_path(manifest, entry)), pipeline
        )
        obs, actions = window_samples(poses9, wrenches, t_o_p, t_o_f, t_p, stats)
        splits[entry["split"]][0].append(obs)
        splits[entry["split"]][1].append(actions)
    train_o = np.vstack(splits["train"][0])
    train_a = np.vstack(splits["train"][1])
    if splits["val"][0]:
        val_o = np.vstack(splits["val"][0])
        val_a = np.vstack(splits["val"][1])
    else:
        val_o, val_a = train_o[:0], train_a[:0]
    return train_o, train_a, val_o, val_a
