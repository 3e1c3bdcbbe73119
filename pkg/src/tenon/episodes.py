"""Episode records and their NDJSON file format.

One demonstration is two asynchronous timestamped streams plus metadata:
a 7D pose stream (position mm + wxyz quaternion) at ~83 Hz and a 6D wrench
stream (N, N*m) at 64 Hz. On disk: NDJSON whose first line is the metadata
object and whose remaining lines are stream records
``{"k": "p"|"w", "t": <ms>, "v": [...]}``. Streams may interleave; each
stream's timestamps strictly increase.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["EpisodeError", "EpisodeRecord", "write_episode", "read_episode", "validate_episode"]

UNITS = {"position": "mm", "force": "N", "torque": "N*m", "time": "ms"}


class EpisodeError(ValueError):
    """Malformed or rejected episode data."""


@dataclass
class EpisodeRecord:
    pose_t: np.ndarray  # (N,) ms
    poses: np.ndarray  # (N, 7) x y z qw qx qy qz
    wrench_t: np.ndarray  # (M,) ms
    wrenches: np.ndarray  # (M, 6) fx fy fz tx ty tz
    metadata: dict = field(default_factory=dict)

    @property
    def demo_type(self) -> str:
        return self.metadata.get("demo_type", "unknown")

    @property
    def mortise_offset(self) -> float:
        return float(self.metadata.get("mortise_offset", 0.0))


def write_episode(record: EpisodeRecord, path: str | Path) -> Path:
    path = Path(path)
    meta = dict(record.metadata)
    meta.setdefault("units", UNITS)
    lines = [json.dumps(meta)]
    for t, v in zip(record.pose_t, record.poses):
        lines.append(json.dumps({"k": "p", "t": float(t), "v": [float(x) for x in v]}))
    for t, v in zip(record.wrench_t, record.wrenches):
        lines.append(json.dumps({"k": "w", "t": float(t), "v": [float(x) for x in v]}))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_episode(path: str | Path) -> EpisodeRecord:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise EpisodeError(f"{path}: empty episode file")
    try:
        metadata = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise EpisodeError(f"{path}: bad metadata line: {exc}") from exc
    pose_t, poses, wrench_t, wrenches = [], [], [], []
    for i, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            kind, t, v = rec["k"], float(rec["t"]), rec["v"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise EpisodeError(f"{path}:{i}: bad stream record: {exc}") from exc
        if kind == "p":
            pose_t.append(t)
            poses.append(v)
        elif kind == "w":
            wrench_t.append(t)
            wrenches.append(v)
        else:
            raise EpisodeError(f"{path}:{i}: unknown stream kind {kind!r}")
    record = EpisodeRecord(
        pose_t=np.asarray(pose_t, dtype=float),
        poses=np.asarray(poses, dtype=float).reshape(len(poses), 7) if poses else np.empty((0, 7)),
        wrench_t=np.asarray(wrench_t, dtype=float),
        wrenches=np.asarray(wrenches, dtype=float).reshape(len(wrenches), 6)
        if wrenches
        else np.empty((0, 6)),
        metadata=metadata,
    )
    return record


def validate_episode(record: EpisodeRecord) -> list[str]:
    """Structural checks; returns a list of problems (empty when valid)."""
    errors: list[str] = []
    if len(record.pose_t) < 2:
        errors.append("pose stream has fewer than 2 samples")
    if len(record.wrench_t) < 2:
        errors.append("wrench stream has fewer than 2 samples")
    for name, t in (("pose", record.pose_t), ("wrench", record.wrench_t)):
        if len(t) >= 2 and not np.all(np.diff(t) > 0):
            errors.append(f"{name} timestamps are not strictly increasing")
    for name, arr in (("pose", record.poses), ("wrench", record.wrenches)):
        if arr.size and not np.all(np.isfinite(arr)):
            errors.append(f"{name} stream contains non-finite values")
    if len(record.poses):
        norms = np.linalg.norm(record.poses[:, 3:7], axis=1)
        if np.max(np.abs(norms - 1.0), initial=0.0) > 1e-9:
            errors.append("quaternions are not unit-norm within 1e-9")
    return errors
