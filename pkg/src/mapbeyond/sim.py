"""Differential-drive kinematics, planar LIDAR raycasting, scan integration,
and a pure-pursuit waypoint follower.

The raycaster steps through every cell crossed by each beam (Amanatides-Woo
traversal), vectorized across beams. Scan integration re-traces the same
rays with bit-identical arithmetic, so the hit cell is recovered exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridMismatch, NonPositiveDt, PoseInvalid, Stuck
from .grid import Cell, OccGrid, wrap_angle

NO_RETURN = np.inf


@dataclass(frozen=True)
class RobotState:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class ControlInput:
    v: float
    theta_dot: float


@dataclass(frozen=True)
class LidarSpec:
    """Planar scanner: 270 degree field of view, 20 m range, 1081 beams."""

    fov: float = 1.5 * math.pi
    max_range: float = 20.0
    beam_count: int = 1081

    def __post_init__(self):
        if self.beam_count < 2:
            raise ValueError(f"beam_count must be >= 2, got {self.beam_count}")

    def beam_angles(self) -> np.ndarray:
        """Beam angles relative to the heading, evenly spaced over the FOV."""
        return np.linspace(-self.fov / 2.0, self.fov / 2.0, self.beam_count)


@dataclass(frozen=True)
class Scan:
    """Per-beam ranges in meters; ``inf`` marks a beam with no return."""

    ranges: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.ranges.flags.writeable = False

    @property
    def hit_mask(self) -> np.ndarray:
        return np.isfinite(self.ranges)

    def __len__(self) -> int:
        return len(self.ranges)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scan):
            return NotImplemented
        return np.array_equal(self.ranges, other.ranges)

    __hash__ = None


def dubins_step(s: RobotState, u: ControlInput, dt: float) -> RobotState:
    """Exact constant-input arc integration of [x, y, theta]."""
    if dt <= 0:
        raise NonPositiveDt(f"dt must be > 0, got {dt}")
    if abs(u.theta_dot) < 1e-9:
        return RobotState(
            s.x + u.v * dt * math.cos(s.theta),
            s.y + u.v * dt * math.sin(s.theta),
            s.theta,
        )
    r = u.v / u.theta_dot
    theta1 = s.theta + u.theta_dot * dt
    return RobotState(
        s.x + r * (math.sin(theta1) - math.sin(s.theta)),
        s.y - r * (math.cos(theta1) - math.cos(s.theta)),
        theta1,
    )


def _ray_state(grid: OccGrid, px: float, py: float, angles: np.ndarray):
    """Initial Amanatides-Woo state for rays from (px, py) at world angles.

    Distances are in meters along each (unit-direction) ray.
    """
    res = grid.resolution
    gx = (px - grid.origin[0]) / res
    gy = (py - grid.origin[1]) / res
    cx0 = math.floor(gx)
    cy0 = math.floor(gy)
    dx = np.cos(angles)
    dy = np.sin(angles)
    step_x = np.sign(dx).astype(np.int64)
    step_y = np.sign(dy).astype(np.int64)

    t_delta_x = np.full(angles.shape, np.inf)
    nzx = dx != 0.0
    t_delta_x[nzx] = res / np.abs(dx[nzx])
    frac_x = np.where(dx > 0, cx0 + 1.0 - gx, gx - cx0)
    t_max_x = np.where(nzx, frac_x * t_delta_x, np.inf)

    t_delta_y = np.full(angles.shape, np.inf)
    nzy = dy != 0.0
    t_delta_y[nzy] = res / np.abs(dy[nzy])
    frac_y = np.where(dy > 0, cy0 + 1.0 - gy, gy - cy0)
    t_max_y = np.where(nzy, frac_y * t_delta_y, np.inf)

    return cx0, cy0, step_x, step_y, t_max_x, t_max_y, t_delta_x, t_delta_y


def _check_pose(grid: OccGrid, pose: RobotState) -> tuple[int, int]:
    i = math.floor((pose.x - grid.origin[0]) / grid.resolution)
    j = math.floor((pose.y - grid.origin[1]) / grid.resolution)
    if not (0 <= i < grid.width and 0 <= j < grid.height):
        raise PoseInvalid(f"pose ({pose.x}, {pose.y}) outside map bounds")
    if grid.cells[j, i] == Cell.OCCUPIED:
        raise PoseInvalid(f"pose ({pose.x}, {pose.y}) inside an occupied cell")
    return i, j


def raycast(map_grid: OccGrid, pose: RobotState, spec: LidarSpec) -> Scan:
    """Cast all beams against the map; first occupied cell returns a hit at
    its entry distance. Unknown cells are opaque and produce no return."""
    cx0, cy0 = _check_pose(map_grid, pose)
    angles = pose.theta + spec.beam_angles()
    _, _, step_x, step_y, t_max_x, t_max_y, t_delta_x, t_delta_y = _ray_state(
        map_grid, pose.x, pose.y, angles
    )
    n = spec.beam_count
    cells = map_grid.cells
    w, h = map_grid.width, map_grid.height
    dist = np.full(n, NO_RETURN)
    cx = np.full(n, cx0, dtype=np.int64)
    cy = np.full(n, cy0, dtype=np.int64)

    if cells[cy0, cx0] == Cell.UNKNOWN:
        return Scan(dist)  # start cell is opaque; nothing visible

    active = np.ones(n, dtype=bool)
    while True:
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        tmx = t_max_x[idx]
        tmy = t_max_y[idx]
        go_x = tmx <= tmy
        t_entry = np.where(go_x, tmx, tmy)

        beyond = t_entry > spec.max_range
        if beyond.any():
            active[idx[beyond]] = False
            idx, go_x, t_entry = idx[~beyond], go_x[~beyond], t_entry[~beyond]
            if idx.size == 0:
                continue

        xi = idx[go_x]
        yi = idx[~go_x]
        cx[xi] += step_x[xi]
        t_max_x[xi] += t_delta_x[xi]
        cy[yi] += step_y[yi]
        t_max_y[yi] += t_delta_y[yi]

        oob = (cx[idx] < 0) | (cx[idx] >= w) | (cy[idx] < 0) | (cy[idx] >= h)
        if oob.any():
            active[idx[oob]] = False
            idx, t_entry = idx[~oob], t_entry[~oob]
            if idx.size == 0:
                continue

        vals = cells[cy[idx], cx[idx]]
        occ = vals == Cell.OCCUPIED
        if occ.any():
            dist[idx[occ]] = t_entry[occ]
            active[idx[occ]] = False
        unk = vals == Cell.UNKNOWN
        if unk.any():
            active[idx[unk]] = False
    return Scan(dist)


def integrate_scan(est: OccGrid, pose: RobotState, scan: Scan,
                   spec: LidarSpec) -> OccGrid:
    """Fold a scan into the estimated map.

    Cells strictly before a hit become free, the hit cell becomes occupied;
    beams with no return sweep free space out to max_range. Only unknown
    cells are ever written: occupied stays occupied, free stays free.
    """
    if len(scan) != spec.beam_count:
        raise GridMismatch(
            f"scan has {len(scan)} beams, spec declares {spec.beam_count}"
        )
    i0 = math.floor((pose.x - est.origin[0]) / est.resolution)
    j0 = math.floor((pose.y - est.origin[1]) / est.resolution)
    if not (0 <= i0 < est.width and 0 <= j0 < est.height):
        raise PoseInvalid(f"pose ({pose.x}, {pose.y}) outside map bounds")

    angles = pose.theta + spec.beam_angles()
    cx0, cy0, step_x, step_y, t_max_x, t_max_y, t_delta_x, t_delta_y = _ray_state(
        est, pose.x, pose.y, angles
    )
    n = spec.beam_count
    out = np.array(est.cells)  # writable copy
    w, h = est.width, est.height
    hit = scan.hit_mask
    stop_t = np.where(hit, scan.ranges, spec.max_range)
    cx = np.full(n, cx0, dtype=np.int64)
    cy = np.full(n, cy0, dtype=np.int64)

    if out[cy0, cx0] == Cell.UNKNOWN:
        out[cy0, cx0] = Cell.FREE  # robot stands in observed free space

    active = np.ones(n, dtype=bool)
    while True:
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        tmx = t_max_x[idx]
        tmy = t_max_y[idx]
        go_x = tmx <= tmy
        t_entry = np.where(go_x, tmx, tmy)

        # No-return beams stop silently once the next crossing passes max_range.
        done = t_entry > stop_t[idx]
        if done.any():
            active[idx[done]] = False
            idx, go_x, t_entry = idx[~done], go_x[~done], t_entry[~done]
            if idx.size == 0:
                continue

        xi = idx[go_x]
        yi = idx[~go_x]
        cx[xi] += step_x[xi]
        t_max_x[xi] += t_delta_x[xi]
        cy[yi] += step_y[yi]
        t_max_y[yi] += t_delta_y[yi]

        oob = (cx[idx] < 0) | (cx[idx] >= w) | (cy[idx] < 0) | (cy[idx] >= h)
        if oob.any():
            active[idx[oob]] = False
            idx, t_entry = idx[~oob], t_entry[~oob]
            if idx.size == 0:
                continue

        # The hit cell is entered at exactly the recorded range (identical
        # arithmetic to raycast); everything entered earlier is free space.
        at_hit = hit[idx] & (t_entry >= stop_t[idx] - 1e-9)
        ji, ii = cy[idx], cx[idx]
        unknown = out[ji, ii] == Cell.UNKNOWN
        out[ji[unknown & ~at_hit], ii[unknown & ~at_hit]] = Cell.FREE
        out[ji[unknown & at_hit], ii[unknown & at_hit]] = Cell.OCCUPIED
        active[idx[at_hit]] = False
    return est.with_cells(out)


@dataclass(frozen=True)
class FollowerConfig:
    """Pure-pursuit parameters; defaults reproduce the data-collection runs."""

    v: float = 0.5
    lookahead: float = 1.0
    max_turn_rate: float = 1.0
    goal_tolerance: float = 0.25
    max_steps: int = 5000
    stuck_window: int = 100
    stuck_min_progress: float = 0.05


class _Polyline:
    def __init__(self, waypoints):
        self.pts = np.asarray(waypoints, dtype=float)
        if self.pts.ndim != 2 or self.pts.shape[1] != 2:
            raise ValueError("waypoints must be a list of (x, y) points")
        deltas = np.diff(self.pts, axis=0)
        self.seg_len = np.hypot(deltas[:, 0], deltas[:, 1])
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.length = float(self.cum[-1])

    def project(self, p: tuple[float, float]) -> float:
        """Arc length of the closest polyline point to p."""
        if len(self.pts) == 1:
            return 0.0
        best_d, best_s = math.inf, 0.0
        for k in range(len(self.seg_len)):
            if self.seg_len[k] == 0.0:
                continue
            a, b = self.pts[k], self.pts[k + 1]
            ab = b - a
            t = float(np.dot(np.asarray(p) - a, ab) / np.dot(ab, ab))
            t = min(1.0, max(0.0, t))
            q = a + t * ab
            d = math.hypot(p[0] - q[0], p[1] - q[1])
            if d < best_d - 1e-12 or (abs(d - best_d) <= 1e-12 and best_s < self.cum[k]):
                best_d = d
                best_s = float(self.cum[k] + t * self.seg_len[k])
        return best_s

    def point_at(self, s: float) -> tuple[float, float]:
        s = min(max(s, 0.0), self.length)
        k = int(np.searchsorted(self.cum, s, side="right") - 1)
        k = min(k, len(self.seg_len) - 1) if len(self.seg_len) else 0
        if len(self.seg_len) == 0 or self.seg_len[k] == 0.0:
            return tuple(self.pts[min(k, len(self.pts) - 1)])
        t = (s - self.cum[k]) / self.seg_len[k]
        q = self.pts[k] + t * (self.pts[k + 1] - self.pts[k])
        return (float(q[0]), float(q[1]))


def follow_path(gt: OccGrid, waypoints, spec: LidarSpec,
                ctrl: FollowerConfig = FollowerConfig(),
                dt: float = 0.1) -> list[tuple[RobotState, Scan]]:
    """Drive the waypoint polyline with pure pursuit, scanning at every step.

    Returns the (pose, scan) sequence in trajectory order. Deterministic:
    identical inputs give bit-identical trajectories.
    """
    path = _Polyline(waypoints)
    start = path.pts[0]
    if not gt.contains_point((start[0], start[1])):
        raise PoseInvalid(f"first waypoint {tuple(start)} outside the map")
    if len(path.pts) > 1:
        head = path.pts[1] - path.pts[0]
        theta0 = math.atan2(head[1], head[0])
    else:
        theta0 = 0.0
    pose = RobotState(float(start[0]), float(start[1]), theta0)
    goal = path.pts[-1]

    traj: list[tuple[RobotState, Scan]] = []
    s_track = 0.0
    progress_log: list[float] = []
    for _ in range(ctrl.max_steps):
        if math.hypot(pose.x - goal[0], pose.y - goal[1]) <= ctrl.goal_tolerance:
            break
        scan = raycast(gt, pose, spec)
        traj.append((pose, scan))

        s_track = max(s_track, path.project(pose.position))
        progress_log.append(s_track)
        if (len(progress_log) > ctrl.stuck_window
                and s_track - progress_log[-ctrl.stuck_window - 1]
                < ctrl.stuck_min_progress):
            raise Stuck(
                f"no progress along path for {ctrl.stuck_window} steps "
                f"(at arc length {s_track:.2f} of {path.length:.2f})"
            )
        lx, ly = path.point_at(s_track + ctrl.lookahead)
        alpha = wrap_angle(math.atan2(ly - pose.y, lx - pose.x) - pose.theta)
        theta_dot = 2.0 * ctrl.v * math.sin(alpha) / ctrl.lookahead
        theta_dot = min(ctrl.max_turn_rate, max(-ctrl.max_turn_rate, theta_dot))
        pose = dubins_step(pose, ControlInput(ctrl.v, theta_dot), dt)
    return traj


def write_trajectory_log(traj, path: Path, dt: float = 0.1) -> None:
    """One comma-separated record per step: index, x, y, theta, sim time."""
    lines = ["step,x,y,theta,timestamp"]
    for k, (pose, _) in enumerate(traj):
        lines.append(f"{k},{pose.x!r},{pose.y!r},{pose.theta!r},{k * dt!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")
