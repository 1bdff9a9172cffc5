"""Vehicle trajectories: CSV ingestion (Lankershim subset format) and a
synthetic intersection-maneuver generator."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .core import ContractError

DT_S = 0.1  # NGSIM frame period
CELL_RADIUS_M = 500.0
DEFAULT_SPEED = 40.0 / 3.6 * DT_S  # 40 km/h in meters per step

DEFAULT_SCHEMA = {"vehicle_id": "vehicle_id", "frame": "frame", "x": "x_m", "y": "y_m"}
MANEUVERS = ("straight", "left_turn", "right_turn")


class SchemaError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryPoint:
    t: int
    position: np.ndarray
    velocity: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """Positions and per-step velocities of one vehicle on a unit time grid.

    ``positions`` and ``velocities`` are (T, 2) arrays in meters and
    meters/step; ``t0`` is the index of the first step.
    """

    vehicle_id: int
    positions: np.ndarray = field(repr=False)
    velocities: np.ndarray = field(repr=False)
    label: str = ""
    t0: int = 0

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        v = np.asarray(self.velocities, dtype=float).reshape(-1, 2)
        if p.shape != v.shape:
            raise ContractError("positions and velocities must align")
        p.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "velocities", v)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self))

    @property
    def points(self) -> list[TrajectoryPoint]:
        return list(iter(self))

    def __iter__(self) -> Iterator[TrajectoryPoint]:
        for k in range(len(self)):
            yield TrajectoryPoint(self.t0 + k, self.positions[k], self.velocities[k])


def first_difference(positions: np.ndarray, first: np.ndarray | None = None) -> np.ndarray:
    positions = np.asarray(positions, dtype=float)
    vel = np.empty_like(positions)
    vel[1:] = np.diff(positions, axis=0)
    vel[0] = vel[1] if first is None and len(positions) > 1 else (first if first is not None else 0.0)
    return vel


def load_trajectories(path, schema: Mapping[str, str] | None = None,
                      label_column: str | None = "maneuver") -> list[Trajectory]:
    """Read a ``vehicle_id,frame,x_m,y_m`` CSV into one trajectory per vehicle.

    Frames must be strictly increasing per vehicle (file order). Gaps are
    filled by linear interpolation onto a unit frame grid. An optional
    ``maneuver`` column supplies the trajectory label.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    rows: dict[int, list] = {}
    labels: dict[int, str] = {}
    with open(Path(path), newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for key in ("vehicle_id", "frame", "x", "y"):
            if schema[key] not in header:
                raise SchemaError(f"missing column {schema[key]!r}")
        for rec in reader:
            vid = int(rec[schema["vehicle_id"]])
            rows.setdefault(vid, []).append(
                (int(rec[schema["frame"]]), float(rec[schema["x"]]), float(rec[schema["y"]])))
            if label_column and label_column in header and rec[label_column]:
                labels.setdefault(vid, rec[label_column])

    out = []
    for vid in sorted(rows):
        arr = np.array(rows[vid], dtype=float)
        frames = arr[:, 0]
        if np.any(np.diff(frames) <= 0):
            raise DataError(f"vehicle {vid}: frames are not strictly increasing")
        grid = np.arange(frames[0], frames[-1] + 1)
        pos = np.column_stack([np.interp(grid, frames, arr[:, 1]),
                               np.interp(grid, frames, arr[:, 2])])
        vel = first_difference(pos) if len(pos) > 1 else np.zeros_like(pos)
        if len(pos) > 1:
            vel[0] = 0.0
        out.append(Trajectory(vid, pos, vel, labels.get(vid, ""), int(frames[0])))
    return out


def write_trajectories(path, trajectories) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vehicle_id", "frame", "x_m", "y_m", "maneuver"])
        for tr in trajectories:
            for t, p in zip(tr.times, tr.positions):
                w.writerow([tr.vehicle_id, int(t), repr(float(p[0])), repr(float(p[1])), tr.label])


def _maneuver_path(kind: str, length: int, speed: float, turn_radius: float,
                   approach_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Noiseless path in a local frame heading +x from the origin; returns
    positions and unit headings per step (arc-length parameterized)."""
    s = speed * np.arange(length)
    pos = np.zeros((length, 2))
    heading = np.zeros(length)
    if kind == "straight":
        pos[:, 0] = s
        return pos, heading
    sign = 1.0 if kind == "left_turn" else -1.0
    s0 = approach_steps * speed
    arc = 0.5 * math.pi * turn_radius
    for k, sk in enumerate(s):
        if sk <= s0:
            pos[k] = (sk, 0.0)
        elif sk <= s0 + arc:
            phi = (sk - s0) / turn_radius
            pos[k] = (s0 + turn_radius * math.sin(phi), sign * turn_radius * (1 - math.cos(phi)))
            heading[k] = sign * phi
        else:
            rest = sk - s0 - arc
            pos[k] = (s0 + turn_radius, sign * (turn_radius + rest))
            heading[k] = sign * 0.5 * math.pi
    return pos, heading


def synthesize_maneuver(kind: str, length: int, speed: float = DEFAULT_SPEED,
                        noise_std: float = 0.0, seed: int = 0, *, vehicle_id: int = 0,
                        start=(0.0, 0.0), heading: float = 0.0, turn_radius: float = 15.0,
                        approach_steps: int | None = None) -> Trajectory:
    """Straight run or a single 90-degree constant-curvature turn.

    Velocities are first differences of the noiseless path; Gaussian noise
    (``noise_std`` meters, seeded) is added to positions only.
    """
    if kind not in MANEUVERS:
        raise ContractError(f"unknown maneuver {kind!r}")
    if length < 10:
        raise ContractError("length must be >= 10")
    if speed <= 0 or noise_std < 0 or turn_radius <= 0:
        raise ContractError("speed and turn radius must be positive, noise nonnegative")
    if approach_steps is None:
        arc_steps = 0.5 * math.pi * turn_radius / speed
        approach_steps = max(0, int(round((length - arc_steps) / 2)))
    local, _ = _maneuver_path(kind, length, speed, turn_radius, approach_steps)
    c, s = math.cos(heading), math.sin(heading)
    rot = np.array([[c, -s], [s, c]])
    clean = local @ rot.T + np.asarray(start, dtype=float)
    vel = first_difference(clean, first=speed * rot[:, 0])
    rng = np.random.default_rng(seed)
    noisy = clean + rng.normal(0.0, noise_std, clean.shape) if noise_std > 0 else clean
    if np.any(np.abs(noisy) > CELL_RADIUS_M):
        raise ContractError("maneuver leaves the cell bounding box")
    return Trajectory(vehicle_id, noisy, vel, kind)


def spoof_offsets(length: int, offset, start_step: int, ramp_steps: int) -> np.ndarray:
    """Per-step falsification offsets: zero, then a linear ramp, then held."""
    if not 0 <= start_step < length:
        raise ContractError("start_step out of range")
    if ramp_steps < 0:
        raise ContractError("ramp_steps must be >= 0")
    k = np.arange(length) - start_step
    if ramp_steps == 0:
        frac = (k >= 0).astype(float)
    else:
        frac = np.clip(k / ramp_steps, 0.0, 1.0)
    return frac[:, None] * np.asarray(offset, dtype=float)[None, :]


def apply_spoofing(traj: Trajectory, offset, start_step: int, ramp_steps: int) -> Trajectory:
    """Shift positions by a ramped offset; velocities pick up the offset's
    first difference so they remain consistent with the new positions."""
    shift = spoof_offsets(len(traj), offset, start_step, ramp_steps)
    dshift = np.zeros_like(shift)
    dshift[1:] = np.diff(shift, axis=0)
    return replace(traj, positions=traj.positions + shift, velocities=traj.velocities + dshift,
                   label=traj.label)
