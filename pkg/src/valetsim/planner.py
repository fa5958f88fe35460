"""Hybrid A* over (x, y, heading) with Reeds-Shepp primitives and analytic shots.

Plans are control sequences on the global timestep, so re-rolling them through
the vehicle model reproduces the planned states exactly. Collision checking
samples every timestep state against an exact rectangle test (with a safety
margin); a distance field only short-circuits the easy free poses.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from . import reeds_shepp as rs
from .dynamics import VehicleControl, VehicleState, rollout_vehicle
from .geometry import (OrientedRect, ParkingLot, Pose2, disc_rect_distance, obb_contains,
                       obb_intersects_many, obb_intersects_pairwise, rect_corners,
                       wrap_angle)


@dataclass(frozen=True)
class PlannerConfig:
    xy_resolution: float = 0.25  # [m] lattice cell
    heading_bins: int = 72
    min_turning_radius: float = 3.0  # [m]
    primitive_step: float = 0.5  # [m] target arc length per expansion
    n_steer: int = 7
    reverse_penalty: float = 2.0
    switch_penalty: float = 5.0
    heading_change_penalty: float = 0.0  # per unit curvature change between primitives
    time_penalty: float = 0.1  # per second of plan duration
    node_budget: int = 200_000
    margin: float = 0.1  # [m] footprint inflation for collision checks
    forward_speed: float = 2.0  # [m/s]
    reverse_speed: float = 1.0  # [m/s]
    rs_interval: int = 32  # analytic expansion attempted every this many pops
    rs_candidates: int = 6  # cheapest Reeds-Shepp words tried per shot
    rs_gate: float = 18.0  # [m] no shots attempted beyond this straight-line range
    heuristic_weight: float = 1.5  # >1 trades plan optimality for search speed
    dt: float = 0.1  # [s]
    t_plan: float = 40.0  # [s] hard cap on plan duration

    def __post_init__(self):
        for name in ("xy_resolution", "heading_bins", "min_turning_radius",
                     "primitive_step", "n_steer", "node_budget", "forward_speed",
                     "reverse_speed", "dt", "t_plan"):
            if getattr(self, name) <= 0:
                raise ValueError(f"planner config field {name} must be positive")

    @property
    def max_steps(self) -> int:
        return int(round(self.t_plan / self.dt))


@dataclass(frozen=True)
class MotionPlan:
    """Timestep-resolution plan: controls, the states they induce, and its cost."""

    controls: tuple
    states: tuple
    cost: float
    goal: tuple  # ("spot", index) | ("pose", Pose2)

    def __len__(self):
        return len(self.controls)


def plan_cost(plan, config: PlannerConfig) -> float:
    """Forward length + penalized reverse length + switch and duration charges."""
    controls = plan.controls if isinstance(plan, MotionPlan) else tuple(plan)
    fwd = rev = 0.0
    switches = 0
    last_sign = 0
    for u in controls:
        if u.v > 0:
            fwd += u.v * config.dt
            if last_sign < 0:
                switches += 1
            last_sign = 1
        elif u.v < 0:
            rev += -u.v * config.dt
            if last_sign > 0:
                switches += 1
            last_sign = -1
    duration = len(controls) * config.dt
    return (fwd + config.reverse_penalty * rev + config.switch_penalty * switches
            + config.time_penalty * duration)


# ---------------------------------------------------------------------------
# Static obstacle context
# ---------------------------------------------------------------------------

class StaticObstacles:
    """Believed-occupied spots + observed static vehicles + the lot boundary.

    Exact SAT against the obstacle rectangles decides collisions; a fine
    distance field provides a sound fast-accept for poses far from anything.
    """

    def __init__(self, lot: ParkingLot, believed_occupied, static_rects, config: PlannerConfig):
        self.lot = lot
        self.config = config
        self.believed_occupied = frozenset(int(i) for i in believed_occupied)
        rects = [lot.spots[i] for i in sorted(self.believed_occupied)] + list(static_rects)
        self.rects = rects
        n = len(rects)
        self.rect_poses = np.array([[r.cx, r.cy, r.heading] for r in rects]).reshape(n, 3)
        self.rect_dims = np.array([[r.length, r.width] for r in rects]).reshape(n, 2)
        self.rect_circum = (0.5 * np.hypot(self.rect_dims[:, 0], self.rect_dims[:, 1])
                            if n else np.zeros(0))
        self.rect_corners = rect_corners(self.rect_poses, self.rect_dims) if n \
            else np.zeros((0, 4, 2))
        cs = np.cos(self.rect_poses[:, 2]) if n else np.zeros(0)
        sn = np.sin(self.rect_poses[:, 2]) if n else np.zeros(0)
        self.rect_axes = np.stack([np.stack([cs, sn], axis=1),
                                   np.stack([-sn, cs], axis=1)], axis=1)  # (R,2,2)
        if n:
            own = np.einsum("rai,rji->raj", self.rect_axes, self.rect_corners)  # (R,2,4)
            self.rect_own_lo = own.min(axis=2)
            self.rect_own_hi = own.max(axis=2)

        res = config.xy_resolution
        xmin, ymin, xmax, ymax = lot.boundary
        self._res = res
        self._x0 = xmin
        self._y0 = ymin
        nx = int(math.ceil((xmax - xmin) / res)) + 1
        ny = int(math.ceil((ymax - ymin) / res)) + 1
        blocked = np.zeros((ny, nx), dtype=bool)
        cx = xmin + (np.arange(nx) + 0.5) * res
        cy = ymin + (np.arange(ny) + 0.5) * res
        for r in rects:
            pad = r.circumradius + res
            i0 = max(int((r.cy - pad - ymin) / res), 0)
            i1 = min(int((r.cy + pad - ymin) / res) + 1, ny)
            j0 = max(int((r.cx - pad - xmin) / res), 0)
            j1 = min(int((r.cx + pad - xmin) / res) + 1, nx)
            if i0 >= i1 or j0 >= j1:
                continue
            gx, gy = np.meshgrid(cx[j0:j1], cy[i0:i1])
            c, s = math.cos(r.heading), math.sin(r.heading)
            lx = c * (gx - r.cx) + s * (gy - r.cy)
            ly = -s * (gx - r.cx) + c * (gy - r.cy)
            blocked[i0:i1, j0:j1] |= (np.abs(lx) <= 0.5 * r.length) & (np.abs(ly) <= 0.5 * r.width)
        outside = ((cx[None, :] < xmin) | (cx[None, :] > xmax)
                   | (cy[:, None] < ymin) | (cy[:, None] > ymax))
        self.blocked = blocked | outside
        self.edt = ndimage.distance_transform_edt(~self.blocked) * res
        self._dijkstra_cache = {}

    # -- collision queries ----------------------------------------------------

    def batch_free(self, poses: np.ndarray, length: float, width: float) -> np.ndarray:
        """Free/blocked verdict for (P, 3) poses of one footprint size."""
        poses = np.atleast_2d(poses)
        p = poses.shape[0]
        cfg = self.config
        m = cfg.margin
        dims = np.array([length + 2 * m, width + 2 * m])
        corners = rect_corners(poses, dims)  # (P,4,2)

        xmin, ymin, xmax, ymax = self.lot.boundary
        free = ((corners[..., 0] >= xmin - 1e-9) & (corners[..., 0] <= xmax + 1e-9)
                & (corners[..., 1] >= ymin - 1e-9) & (corners[..., 1] <= ymax + 1e-9)).all(axis=1)
        if not len(self.rects) or not free.any():
            return free

        # spine fast accept: three discs covering the inflated footprint
        r_spine = math.hypot(length / 6.0 + m, 0.5 * width + m)
        thresh = r_spine + 0.7  # covers grid quantization of the distance field
        offs = np.array([-length / 3.0, 0.0, length / 3.0])
        c = np.cos(poses[:, 2])[:, None]
        s = np.sin(poses[:, 2])[:, None]
        sx = poses[:, 0][:, None] + offs[None, :] * c
        sy = poses[:, 1][:, None] + offs[None, :] * s
        jj = np.clip(((sx - self._x0) / self._res).astype(int), 0, self.edt.shape[1] - 1)
        ii = np.clip(((sy - self._y0) / self._res).astype(int), 0, self.edt.shape[0] - 1)
        clear = self.edt[ii, jj].min(axis=1) >= thresh

        need = np.flatnonzero(free & ~clear)
        if need.size == 0:
            return free
        sub_poses = poses[need]
        sub_corners = corners[need]
        circ = 0.5 * math.hypot(dims[0], dims[1])
        d = np.hypot(sub_poses[:, 0][:, None] - self.rect_poses[None, :, 0],
                     sub_poses[:, 1][:, None] - self.rect_poses[None, :, 1])
        pair = d <= circ + self.rect_circum[None, :]
        k_idx = np.flatnonzero(pair.any(axis=0))
        if k_idx.size == 0:
            return free
        ck = self.rect_corners[k_idx]  # (K,4,2)
        axes_k = self.rect_axes[k_idx]
        own_lo = self.rect_own_lo[k_idx]
        own_hi = self.rect_own_hi[k_idx]

        cp = np.cos(sub_poses[:, 2])
        sp = np.sin(sub_poses[:, 2])
        axes_p = np.empty((sub_poses.shape[0], 2, 2))
        axes_p[:, 0, 0] = cp
        axes_p[:, 0, 1] = sp
        axes_p[:, 1, 0] = -sp
        axes_p[:, 1, 1] = cp
        pp = np.einsum("pai,pji->paj", axes_p, sub_corners)  # (P',2,4)
        pp_lo = pp.min(axis=2)[:, :, None]
        pp_hi = pp.max(axis=2)[:, :, None]
        pk = np.einsum("pai,kji->pakj", axes_p, ck)  # (P',2,K,4)
        pk_lo = pk.min(axis=3)
        pk_hi = pk.max(axis=3)
        sep_p = ((pk_lo > pp_hi + 1e-9) | (pk_hi < pp_lo - 1e-9)).any(axis=1)  # (P',K)

        kp = np.einsum("kai,pji->kapj", axes_k, sub_corners)  # (K,2,P',4)
        kp_lo = kp.min(axis=3)
        kp_hi = kp.max(axis=3)
        sep_k = ((kp_lo > own_hi[:, :, None] + 1e-9)
                 | (kp_hi < own_lo[:, :, None] - 1e-9)).any(axis=1).T  # (P',K)

        hit = (~(sep_p | sep_k) & pair[:, k_idx]).any(axis=1)
        free[need[hit]] = False
        return free

    def pose_free(self, x: float, y: float, theta: float, length: float, width: float) -> bool:
        return bool(self.batch_free(np.array([[x, y, theta]]), length, width)[0])

    # -- heuristic ------------------------------------------------------------

    def distance_grid_to(self, goal_xy, inflate: float):
        """8-connected Dijkstra distance to a goal cell on a coarse free grid."""
        res = 2 * self._res
        key = (int(goal_xy[0] / res), int(goal_xy[1] / res), round(inflate, 3))
        cached = self._dijkstra_cache.get(key)
        if cached is not None:
            return cached
        coarse_free = self.edt[::2, ::2] > inflate
        ny, nx = coarse_free.shape
        dist = np.full((ny, nx), np.inf)
        gj = min(max(int((goal_xy[0] - self._x0) / res), 0), nx - 1)
        gi = min(max(int((goal_xy[1] - self._y0) / res), 0), ny - 1)
        if coarse_free[gi, gj]:
            seeds = [(0.0, (gi, gj))]
        else:
            # spot centers sit inside the inflated set; seed the nearest free ring
            seeds = []
            for rad in range(1, 10):
                for di in range(-rad, rad + 1):
                    for dj in range(-rad, rad + 1):
                        if max(abs(di), abs(dj)) != rad:
                            continue
                        i, j = gi + di, gj + dj
                        if 0 <= i < ny and 0 <= j < nx and coarse_free[i, j]:
                            seeds.append((math.hypot(di, dj) * res, (i, j)))
                if seeds:
                    break
        pq = []
        for d0, (i, j) in sorted(seeds):
            if d0 < dist[i, j]:
                dist[i, j] = d0
                heapq.heappush(pq, (d0, i, j))
        moves = [(di, dj, math.hypot(di, dj) * res)
                 for di in (-1, 0, 1) for dj in (-1, 0, 1) if di or dj]
        while pq:
            d, i, j = heapq.heappop(pq)
            if d > dist[i, j]:
                continue
            for di, dj, c in moves:
                ni, nj = i + di, j + dj
                if 0 <= ni < ny and 0 <= nj < nx and coarse_free[ni, nj] and d + c < dist[ni, nj]:
                    dist[ni, nj] = d + c
                    heapq.heappush(pq, (d + c, ni, nj))
        entry = (res, self._x0, self._y0, dist)
        self._dijkstra_cache[key] = entry
        return entry


def obstacles_for(lot: ParkingLot, believed_occupied, static_rects,
                  config: PlannerConfig) -> StaticObstacles:
    return StaticObstacles(lot, believed_occupied, static_rects, config)


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------

class _GoalSpec:
    def __init__(self, test, rs_targets, xy):
        self.test = test  # (x, y, theta) -> bool on the uninflated footprint
        self.rs_targets = rs_targets  # poses for analytic shots
        self.xy = xy


def _rs_runs(path: rs.RSPath, radius: float, config: PlannerConfig):
    """Discretize a Reeds-Shepp word into (v, omega, n_steps) runs. Each
    segment's speed is adjusted so its arc length stays exact on the grid."""
    runs = []
    for steer, ulen in zip(path.steers, path.lengths):
        length = abs(ulen) * radius
        if length < 1e-9:
            continue
        direction = 1 if ulen > 0 else -1
        v_nom = config.forward_speed if direction > 0 else config.reverse_speed
        n = max(1, int(math.ceil(length / (v_nom * config.dt) - 1e-9)))
        v = direction * length / (n * config.dt)
        runs.append((v, v * steer / radius, n))
    return runs


def _rollout_runs(x0: float, y0: float, th0: float, runs, dt: float):
    """Euler-exact poses visited by constant-control runs, (N, 3)."""
    chunks = []
    x, y, th = x0, y0, th0
    for v, omega, n in runs:
        th_steps = th + omega * dt * np.arange(n)
        xs = x + v * dt * np.cumsum(np.cos(th_steps))
        ys = y + v * dt * np.cumsum(np.sin(th_steps))
        th_end = th_steps + omega * dt
        chunks.append(np.stack([xs, ys, th_end], axis=1))
        x, y, th = float(xs[-1]), float(ys[-1]), float(th_end[-1])
    return np.concatenate(chunks, axis=0) if chunks else np.zeros((0, 3))


def _segment_cost(v: float, n: int, direction: int, kappa: float, prev_dir: int,
                  prev_kappa: float, config: PlannerConfig) -> float:
    step_len = abs(v) * config.dt * n
    cost = step_len if direction > 0 else config.reverse_penalty * step_len
    if prev_dir != 0 and direction != prev_dir:
        cost += config.switch_penalty
    cost += config.heading_change_penalty * abs(kappa - prev_kappa)
    cost += config.time_penalty * config.dt * n
    return cost


def _controls_cost(controls, config: PlannerConfig, entry_dir: int) -> float:
    cost = 0.0
    last = entry_dir
    for u in controls:
        sign = 1 if u.v > 0 else (-1 if u.v < 0 else 0)
        if sign != 0:
            step = abs(u.v) * config.dt
            cost += step if sign > 0 else config.reverse_penalty * step
            if last != 0 and sign != last:
                cost += config.switch_penalty
            last = sign
        cost += config.time_penalty * config.dt
    return cost


def _hybrid_astar(start: VehicleState, goal: _GoalSpec, obstacles: StaticObstacles,
                  config: PlannerConfig):
    """Returns the control list reaching the goal, or None."""
    length, width = start.length, start.width
    dt = config.dt
    res = config.xy_resolution
    bins = config.heading_bins
    radius = config.min_turning_radius
    two_pi = 2.0 * math.pi

    def key_of(x, y, th):
        return (int(round(x / res)), int(round(y / res)),
                int((th % two_pi) / two_pi * bins) % bins)

    sp = start.pose
    if goal.test(sp.x, sp.y, sp.theta):
        return []

    inflate = 0.5 * width + config.margin
    hres, hx0, hy0, hgrid = obstacles.distance_grid_to(goal.xy, inflate)
    hny, hnx = hgrid.shape
    hw = config.heuristic_weight
    rs_memo = {}

    def h_of(x, y, th, cell_key):
        j = int((x - hx0) / hres)
        i = int((y - hy0) / hres)
        if not (0 <= i < hny and 0 <= j < hnx):
            return math.inf
        hg = hgrid[i, j]
        if not math.isfinite(hg):
            return math.inf
        d_eu = math.hypot(goal.xy[0] - x, goal.xy[1] - y)
        if d_eu < 12.0 and goal.rs_targets:
            h_rs = rs_memo.get(cell_key)
            if h_rs is None:
                h_rs = min(rs.heuristic_length((x, y, th), (t.x, t.y, t.theta), radius)
                           for t in goal.rs_targets)
                rs_memo[cell_key] = h_rs
        else:
            h_rs = d_eu
        return hw * max(hg, h_rs)

    start_key = key_of(sp.x, sp.y, sp.theta)
    h0 = h_of(sp.x, sp.y, sp.theta, start_key)
    if not math.isfinite(h0):
        return None

    kappas = np.linspace(-1.0 / radius, 1.0 / radius, config.n_steer)
    groups = []
    for v_abs, direction in ((config.forward_speed, 1), (config.reverse_speed, -1)):
        n = max(1, int(math.ceil(config.primitive_step / (v_abs * dt) - 1e-9)))
        v = direction * v_abs
        omegas = v * kappas
        groups.append((v, omegas, n, direction, kappas))

    # node records: key -> (x, y, th, g, parent_key, controls, dir, kappa, steps)
    nodes = {start_key: (sp.x, sp.y, sp.theta, 0.0, None, (), 0, 0.0, 0)}
    counter = 0
    open_heap = [(h0, 0, start_key, 0.0)]
    pops = 0
    max_steps = config.max_steps

    def reconstruct(final_key, tail_controls):
        chunks = []
        key = final_key
        while key is not None:
            rec = nodes[key]
            chunks.append(rec[5])
            key = rec[4]
        controls = []
        for chunk in reversed(chunks):
            controls.extend(chunk)
        controls.extend(tail_controls)
        return controls

    def try_rs_shot(rec):
        x0, y0, th0 = rec[0], rec[1], rec[2]
        best = None
        for target in goal.rs_targets:
            for path in rs.paths_between((x0, y0, th0), (target.x, target.y, target.theta),
                                         radius)[:config.rs_candidates]:
                if best is not None and path.total * radius >= best[0]:
                    continue
                runs = _rs_runs(path, radius, config)
                n_ctrl = sum(n for _, _, n in runs)
                if n_ctrl == 0 or rec[8] + n_ctrl > max_steps:
                    continue
                poses = _rollout_runs(x0, y0, th0, runs, dt)
                if not obstacles.batch_free(poses, length, width).all():
                    continue
                if goal.test(*poses[-1]):
                    best = (path.total * radius, runs)
        if best is None:
            return None
        return [VehicleControl(v, omega) for v, omega, n in best[1] for _ in range(n)]

    while open_heap:
        f, _, key, gq = heapq.heappop(open_heap)
        rec = nodes.get(key)
        if rec is None or gq > rec[3] + 1e-12:
            continue
        pops += 1
        if pops > config.node_budget:
            return None
        x0, y0, th0, g0, _, _, dir0, kappa0, steps0 = rec

        if goal.test(x0, y0, th0):
            return reconstruct(key, [])

        if ((pops - 1) % config.rs_interval == 0
                and math.hypot(goal.xy[0] - x0, goal.xy[1] - y0) <= config.rs_gate):
            tail = try_rs_shot(rec)
            if tail is not None:
                return reconstruct(key, tail)

        if steps0 >= max_steps:
            continue

        for v, omegas, n, direction, ks in groups:
            th_steps = th0 + omegas[:, None] * dt * np.arange(n)[None, :]  # (K, n)
            xs = x0 + v * dt * np.cumsum(np.cos(th_steps), axis=1)
            ys = y0 + v * dt * np.cumsum(np.sin(th_steps), axis=1)
            th_end = th_steps + omegas[:, None] * dt  # heading after each step
            poses = np.stack([xs, ys, th_end], axis=2)  # (K, n, 3)
            ok = obstacles.batch_free(poses.reshape(-1, 3), length, width)
            ok = ok.reshape(len(omegas), n).all(axis=1)
            for ki in np.flatnonzero(ok):
                x1 = float(xs[ki, -1])
                y1 = float(ys[ki, -1])
                th1 = wrap_angle(float(th_end[ki, -1]))
                kappa = float(ks[ki])
                g1 = g0 + _segment_cost(v, n, direction, kappa, dir0, kappa0, config)
                child_key = key_of(x1, y1, th1)
                existing = nodes.get(child_key)
                if existing is not None and existing[3] <= g1:
                    continue
                h = h_of(x1, y1, th1, child_key)
                if not math.isfinite(h):
                    continue
                controls = (VehicleControl(float(v), float(omegas[ki])),) * n
                nodes[child_key] = (x1, y1, th1, g1, key, controls, direction, kappa,
                                    steps0 + n)
                counter += 1
                heapq.heappush(open_heap, (g1 + h, counter, child_key, g1))
    return None


def _finish_plan(start: VehicleState, controls, goal_tag, config: PlannerConfig):
    controls = tuple(controls)
    states = tuple(rollout_vehicle(start, controls, config.dt))
    plan = MotionPlan(controls=controls, states=states, cost=0.0, goal=goal_tag)
    return replace(plan, cost=plan_cost(plan, config))


def plan_park(start: VehicleState, spot: int, lot: ParkingLot, believed_occupied,
              config: PlannerConfig, obstacles: StaticObstacles = None,
              static_rects=()) -> MotionPlan:
    """Plan into a spot: final footprint contained, path clear of believed
    obstacles. Returns None when the goal is blocked or the budget runs out."""
    if not 0 <= spot < lot.n_spots:
        raise IndexError(f"spot index {spot} out of range")
    believed_occupied = frozenset(int(i) for i in believed_occupied)
    if spot in believed_occupied:
        return None
    if obstacles is None:
        obstacles = StaticObstacles(lot, believed_occupied, static_rects, config)
    target = lot.spots[spot]
    length, width = start.length, start.width

    def test(x, y, th):
        if math.hypot(x - target.cx, y - target.cy) > target.circumradius:
            return False
        return obb_contains(target, OrientedRect(x, y, th, length, width))

    goal = _GoalSpec(
        test=test,
        rs_targets=[Pose2(target.cx, target.cy, target.heading),
                    Pose2(target.cx, target.cy, target.heading + math.pi)],
        xy=(target.cx, target.cy))
    controls = _hybrid_astar(start, goal, obstacles, config)
    if controls is None:
        return None
    return _finish_plan(start, controls, ("spot", spot), config)


def plan_to_pose(start: VehicleState, goal_pose: Pose2, tolerance, lot: ParkingLot,
                 believed_occupied, config: PlannerConfig,
                 obstacles: StaticObstacles = None, static_rects=()) -> MotionPlan:
    """Plan to a pose within (position, heading) tolerance under the same
    collision constraints as parking."""
    if not lot.contains_point((goal_pose.x, goal_pose.y)):
        return None
    pos_tol, ang_tol = tolerance
    if obstacles is None:
        obstacles = StaticObstacles(lot, believed_occupied, static_rects, config)

    def test(x, y, th):
        return (math.hypot(x - goal_pose.x, y - goal_pose.y) <= pos_tol
                and abs(wrap_angle(th - goal_pose.theta)) <= ang_tol)

    goal = _GoalSpec(test=test, rs_targets=[goal_pose], xy=(goal_pose.x, goal_pose.y))
    controls = _hybrid_astar(start, goal, obstacles, config)
    if controls is None:
        return None
    return _finish_plan(start, controls, ("pose", goal_pose), config)


# ---------------------------------------------------------------------------
# Plan validation against predictions
# ---------------------------------------------------------------------------

def validate_plan(plan: MotionPlan, predictions, believed_occupied, lot: ParkingLot,
                  from_step: int = 0):
    """First step at which the plan conflicts with predictions, believed-occupied
    spots, or the lot boundary; None when the whole plan validates.

    plan.states[tau] is compared against each prediction's pose at index
    tau - 1 (predictions start one step in the future); steps beyond a
    prediction's horizon are constrained only by the static checks, since the
    rolling per-step re-validation covers them with fresher predictions.
    """
    states = plan.states[from_step:]
    n = len(states)
    if n <= 1:
        return None
    poses = np.array([[s.pose.x, s.pose.y, s.pose.theta] for s in states[1:]])
    dims = np.array([states[0].length, states[0].width])
    steps = poses.shape[0]

    xmin, ymin, xmax, ymax = lot.boundary
    corners = rect_corners(poses, dims)
    inside = ((corners[..., 0] >= xmin - 1e-9) & (corners[..., 0] <= xmax + 1e-9)
              & (corners[..., 1] >= ymin - 1e-9) & (corners[..., 1] <= ymax + 1e-9)).all(axis=1)
    blocked = ~inside

    for i in sorted(frozenset(believed_occupied)):
        sp = lot.spots[int(i)]
        d = np.hypot(poses[:, 0] - sp.cx, poses[:, 1] - sp.cy)
        nearby = d <= sp.circumradius + 0.5 * math.hypot(*dims)
        if nearby.any():
            idx = np.flatnonzero(nearby)
            hit = obb_intersects_many(sp, poses[idx], dims)
            blocked[idx[hit]] = True

    for pred in predictions:
        m = min(pred.poses.shape[0], steps)
        if m <= 0:
            continue
        ppose = pred.poses[:m]
        if pred.agent_kind == "pedestrian":
            near = np.hypot(ppose[:, 0] - poses[:m, 0], ppose[:, 1] - poses[:m, 1]) \
                <= pred.radius + 0.5 * math.hypot(*dims) + 1e-9
            for tau in np.flatnonzero(near & ~blocked[:m]):
                ego = OrientedRect(poses[tau, 0], poses[tau, 1], poses[tau, 2],
                                   dims[0], dims[1])
                if disc_rect_distance(ppose[tau, :2], pred.radius, ego) <= 1e-9:
                    blocked[tau] = True
        else:
            blocked[:m] |= obb_intersects_pairwise(poses[:m], dims, ppose,
                                                   np.array([pred.length, pred.width]))

    conflicts = np.flatnonzero(blocked)
    if conflicts.size:
        return int(conflicts[0]) + 1 + from_step
    return None
