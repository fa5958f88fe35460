"""Ego decision loop: park in a low-belief spot, else explore front-first, else idle."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import reeds_shepp as rs
from .dynamics import VehicleControl, VehicleState, ZERO_CONTROL
from .geometry import Disc, OrientedRect, ParkingLot, Pose2, wrap_angle
from .intention import HeuristicScorer
from .planner import (MotionPlan, PlannerConfig, StaticObstacles, plan_cost, plan_park,
                      plan_to_pose, validate_plan)

CONTINUE = "continue"
PARK = "park"
EXPLORE = "explore"
IDLE = "idle"

SELECT_BY_COST = "cost"  # candidates by distance, winner by plan cost
SELECT_BY_EGO_INTENT = "ego-intent"  # candidates by the ego's own intention score


@dataclass(frozen=True)
class EgoDecision:
    kind: str
    control: VehicleControl
    plan: MotionPlan = None
    goal: tuple = None


@dataclass(frozen=True)
class PolicyConfig:
    delta: float = 0.3  # candidate-spot belief ceiling
    beta: float = 0.5  # believed-occupied floor
    candidate_cap: int = 5  # park goals attempted per decision
    park_budget: int = 5000  # node budget for parking searches
    park_range: float = 18.0  # [m] kinematic bound beyond which a park try is deferred
    explore_cap: int = 4  # exploration goals attempted per decision
    explore_budget: int = 3000  # node budget for exploration searches
    explore_tolerance: tuple = (0.5, 0.3)  # [m, rad]
    replan_interval: int = 5  # steps between full re-plans while goal-less
    back_patience: int = 8  # goal-less decisions with a blocked front before reversing
    selection: str = SELECT_BY_COST
    planner: PlannerConfig = field(default_factory=PlannerConfig)


def candidate_ego_spots(obs, beliefs, delta: float) -> list:
    """Observed vacant spots whose belief stays at or below delta, ascending index."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    b = beliefs.beliefs if hasattr(beliefs, "beliefs") else np.asarray(beliefs)
    return sorted(i for i in obs.vacant_spots if b[i] <= delta)


def ego_exploration_points(lot: ParkingLot, ego: VehicleState, sensing_region) -> list:
    """Road center-line crossings of the sensing rim, both headings, front first.

    A crossing counts as "front" when the heading-to-point dot product is
    non-negative; back points trail the list in the same road order.
    """
    pose = ego.pose if isinstance(ego, VehicleState) else ego
    if not lot.contains_point((pose.x, pose.y)):
        raise ValueError("ego must be inside the lot")
    front, back = [], []
    hv = (math.cos(pose.theta), math.sin(pose.theta))
    for road in lot.roads:
        points = _region_boundary_crossings(road, sensing_region)
        for px, py in points:
            forward = hv[0] * (px - pose.x) + hv[1] * (py - pose.y) >= 0.0
            for th in (road.heading, road.heading + math.pi):
                (front if forward else back).append(Pose2(px, py, th))
    return front + back


def _region_boundary_crossings(road, region) -> list:
    """Points where a road center line crosses the sensing-region boundary."""
    ax, ay = road.start
    bx, by = road.end
    dx, dy = bx - ax, by - ay
    out = []
    if isinstance(region, Disc):
        cx, cy = region.center
        fx, fy = ax - cx, ay - cy
        a = dx * dx + dy * dy
        b = 2.0 * (fx * dx + fy * dy)
        c = fx * fx + fy * fy - region.radius**2
        disc = b * b - 4.0 * a * c
        if disc < 0 or a == 0:
            return out
        sq = math.sqrt(disc)
        for t in sorted(((-b - sq) / (2 * a), (-b + sq) / (2 * a))):
            if 0.0 <= t <= 1.0:
                out.append((ax + t * dx, ay + t * dy))
    elif isinstance(region, OrientedRect):
        c, s = math.cos(region.heading), math.sin(region.heading)
        p0 = (c * (ax - region.cx) + s * (ay - region.cy),
              -s * (ax - region.cx) + c * (ay - region.cy))
        d = (c * dx + s * dy, -s * dx + c * dy)
        half = (0.5 * region.length, 0.5 * region.width)
        t0, t1 = 0.0, 1.0
        for axis in (0, 1):
            if abs(d[axis]) < 1e-12:
                if abs(p0[axis]) > half[axis]:
                    return out
                continue
            ta = (-half[axis] - p0[axis]) / d[axis]
            tb = (half[axis] - p0[axis]) / d[axis]
            ta, tb = min(ta, tb), max(ta, tb)
            t0, t1 = max(t0, ta), min(t1, tb)
        if t0 > t1:
            return out
        out = [(ax + t * dx, ay + t * dy) for t in (t0, t1) if 0.0 < t < 1.0]
    else:
        raise TypeError(f"unsupported sensing region {type(region)!r}")
    return out


class _Timings:
    """Optional wall-clock capture; disabled timers record nothing."""

    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.plan_calls = []
        self.selection_steps = []

    def timed_plan(self, fn, *args, **kwargs):
        if not self.enabled:
            return fn(*args, **kwargs)
        t0 = time.perf_counter()
        out = fn(*args, **kwargs)
        self.plan_calls.append(time.perf_counter() - t0)
        return out


def decide(obs, beliefs, predictions, active_plan, lot: ParkingLot,
           config: PolicyConfig, ego_state: VehicleState = None,
           obstacles: StaticObstacles = None, timings: _Timings = None,
           ego_scorer=None, active_step: int = 0, allow_back: bool = True,
           failed_goals: set = None, shelf: dict = None) -> EgoDecision:
    """One spot-selection pass: continue a valid plan, else park, else explore, else idle.

    active_plan is consumed from active_step; a valid remainder yields a
    `continue` decision emitting its next control. Back exploration points
    are attempted only when every front point yields no valid plan (and the
    caller permits reversing via allow_back).
    """
    timings = timings or _Timings(False)
    b = beliefs.beliefs if hasattr(beliefs, "beliefs") else np.asarray(beliefs)
    believed = frozenset(int(i) for i in np.flatnonzero(b >= config.beta))
    if ego_state is None:
        p = obs.ego_pose
        ego_state = VehicleState(p)

    if active_plan is not None and active_step < len(active_plan.controls):
        ok = True
        if active_plan.goal[0] == "spot" and b[active_plan.goal[1]] > config.delta:
            ok = False  # goal spot became contended mid-plan
        if ok and validate_plan(active_plan, predictions, believed, lot,
                                from_step=active_step) is None:
            return EgoDecision(kind=CONTINUE, control=active_plan.controls[active_step],
                               plan=active_plan, goal=active_plan.goal)

    static_rects = [ov.rect for k, ov in sorted(obs.static_vehicles.items())]
    if obstacles is None:
        obstacles = StaticObstacles(lot, believed, static_rects, config.planner)

    candidates = candidate_ego_spots(obs, beliefs, config.delta)
    pose = ego_state.pose
    inflate = 0.5 * ego_state.width + config.planner.margin

    def kin_bound(i):
        # combined kinematic / routed estimate of the plan cost to spot i;
        # ranks straight-ahead spots before ones behind a turnaround or detour
        sp = lot.spots[i]
        bound = max(math.hypot(sp.cx - pose.x, sp.cy - pose.y),
                    min(rs.heuristic_length((pose.x, pose.y, pose.theta),
                                            (sp.cx, sp.cy, sp.heading + flip),
                                            config.planner.min_turning_radius)
                        for flip in (0.0, math.pi)))
        hres, hx0, hy0, hgrid = obstacles.distance_grid_to((sp.cx, sp.cy), inflate)
        j = int((pose.x - hx0) / hres)
        k = int((pose.y - hy0) / hres)
        if 0 <= k < hgrid.shape[0] and 0 <= j < hgrid.shape[1]:
            bound = max(bound, float(hgrid[k, j]))
        return bound

    if config.selection == SELECT_BY_EGO_INTENT and ego_scorer is not None and candidates:
        order = _rank_by_ego_intent(candidates, pose, lot, ego_scorer)
        bounds = {i: kin_bound(i) for i in order}
    else:
        bounds = {i: kin_bound(i) for i in candidates}
        order = sorted(candidates, key=lambda i: (bounds[i], i))
    order = order[:config.candidate_cap]

    park_cfg = replace(config.planner, node_budget=min(config.planner.node_budget,
                                                       config.park_budget))
    failed_goals = set() if failed_goals is None else failed_goals
    shelf = {} if shelf is None else shelf
    best = None
    for i in order:
        if i in believed or ("spot", i) in failed_goals:
            continue
        if bounds[i] > config.park_range:
            continue  # deferred until exploration brings the ego closer
        if best is not None and bounds[i] >= best[0]:
            continue
        plan = shelf.get(("spot", i))
        if plan is None:
            plan = timings.timed_plan(plan_park, ego_state, i, lot, believed,
                                      park_cfg, obstacles=obstacles)
            if plan is None:
                failed_goals.add(("spot", i))  # statically unreachable for this view
                continue
            shelf[("spot", i)] = plan  # reused while the ego and statics stay put
        if validate_plan(plan, predictions, believed, lot) is not None:
            continue
        if config.selection == SELECT_BY_EGO_INTENT:
            best = (plan.cost, i, plan)  # first valid in priority order wins
            break
        if best is None or (plan.cost, i) < (best[0], best[1]):
            best = (plan.cost, i, plan)
    if best is not None:
        plan = best[2]
        control = plan.controls[0] if plan.controls else ZERO_CONTROL
        return EgoDecision(kind=PARK, control=control, plan=plan, goal=plan.goal)

    points = ego_exploration_points(lot, ego_state, obs.sensing_region)
    hv = (math.cos(pose.theta), math.sin(pose.theta))
    front, back = [], []
    for p in points:
        (front if hv[0] * (p.x - pose.x) + hv[1] * (p.y - pose.y) >= 0.0 else back).append(p)
    explore_cfg = replace(config.planner, node_budget=min(config.planner.node_budget,
                                                          config.explore_budget))

    def alignment(p):  # prefer goals needing the least turning first
        to = math.atan2(p.y - pose.y, p.x - pose.x)
        return abs(wrap_angle(to - pose.theta)) + 0.1 * abs(wrap_angle(p.theta - pose.theta))

    groups = (front, back) if allow_back else (front,)
    for gi, group in enumerate(groups):
        if gi == 0:
            # forward exploration keeps goals the ego can arrive at nose-first;
            # the reversed-arrival twins only make sense when backing out
            group = [p for p in group
                     if abs(wrap_angle(p.theta - math.atan2(p.y - pose.y, p.x - pose.x)))
                     <= 0.5 * math.pi + 1e-9
                     or math.hypot(p.x - pose.x, p.y - pose.y) < 1.0]
        ranked = sorted(enumerate(group), key=lambda qp: (alignment(qp[1]), qp[0]))
        best = None
        tried = 0
        for q, goal in ranked:
            if tried >= config.explore_cap:
                break
            goal_key = ("pose", round(goal.x, 1), round(goal.y, 1), round(goal.theta, 2))
            if goal_key in failed_goals:
                continue
            d = math.hypot(goal.x - pose.x, goal.y - pose.y)
            if best is not None and d >= best[0]:
                continue
            tried += 1
            plan = shelf.get(goal_key)
            if plan is None:
                plan = timings.timed_plan(plan_to_pose, ego_state, goal,
                                          config.explore_tolerance, lot, believed,
                                          explore_cfg, obstacles=obstacles)
                if plan is None or not plan.controls:
                    failed_goals.add(goal_key)
                    continue
                shelf[goal_key] = plan
            if validate_plan(plan, predictions, believed, lot) is not None:
                continue
            if best is None or (plan.cost, q) < (best[0], best[1]):
                best = (plan.cost, q, plan)
        if best is not None:
            plan = best[2]
            return EgoDecision(kind=EXPLORE, control=plan.controls[0], plan=plan,
                               goal=plan.goal)

    return EgoDecision(kind=IDLE, control=ZERO_CONTROL)


def _rank_by_ego_intent(candidates, pose, lot, scorer) -> list:
    d = []
    a = []
    for i in candidates:
        sp = lot.spots[i]
        dx, dy = sp.cx - pose.x, sp.cy - pose.y
        dist = math.hypot(dx, dy)
        d.append(dist)
        a.append(1.0 if dist < 1e-12
                 else (math.cos(pose.theta) * dx + math.sin(pose.theta) * dy) / dist)
    logits = scorer.spot_logits(np.array(d), np.array(a), 0.0)
    order = np.argsort(-logits, kind="stable")
    return [candidates[int(j)] for j in order]


class EgoPolicy:
    """Stateful wrapper that owns the active plan between timesteps.

    Replans only when the active plan is exhausted or stops validating; while
    goal-less it retries at `replan_interval` steps to bound planner load.
    """

    needs_pipeline = True

    def __init__(self, lot: ParkingLot, config: PolicyConfig = None, ego_scorer=None,
                 record_timings: bool = False):
        self.lot = lot
        self.config = config or PolicyConfig()
        self.ego_scorer = ego_scorer or (HeuristicScorer()
                                         if self.config.selection == SELECT_BY_EGO_INTENT
                                         else None)
        self.active = None
        self.cursor = 0
        self.timings = _Timings(record_timings)
        self._steps_since_plan = 10**9
        self._front_blocked = 0
        self._obstacle_key = None
        self._obstacles = None
        self._failed_key = None
        self._failed_goals = set()
        self._shelf = {}

    def _obstacles_for(self, obs, believed):
        static_ids = tuple(sorted(obs.static_vehicles))
        key = (believed, static_ids)
        if key != self._obstacle_key:
            static_rects = [obs.static_vehicles[k].rect for k in static_ids]
            self._obstacles = StaticObstacles(self.lot, believed, static_rects,
                                              self.config.planner)
            self._obstacle_key = key
        return self._obstacles

    def step(self, obs, beliefs, predictions, ego_state: VehicleState) -> EgoDecision:
        cfg = self.config
        b = beliefs.beliefs
        believed = frozenset(int(i) for i in np.flatnonzero(b >= cfg.beta))

        if self.active is not None and self.cursor < len(self.active.controls):
            ok = True
            if self.active.goal[0] == "spot" and b[self.active.goal[1]] > cfg.delta:
                ok = False
            if ok and validate_plan(self.active, predictions, believed, self.lot,
                                    from_step=self.cursor) is None:
                control = self.active.controls[self.cursor]
                self.cursor += 1
                return EgoDecision(kind=CONTINUE, control=control, plan=self.active,
                                   goal=self.active.goal)
            self.active = None
            self.cursor = 0

        if self.active is not None and self.cursor >= len(self.active.controls):
            self.active = None
            self.cursor = 0

        # goal-less: bound how often the full planning pass runs
        if self._steps_since_plan < cfg.replan_interval:
            self._steps_since_plan += 1
            return EgoDecision(kind=IDLE, control=ZERO_CONTROL)
        self._steps_since_plan = 0

        obstacles = self._obstacles_for(obs, believed)
        pose = ego_state.pose
        # failed plans stay failed while neither the view nor the ego moved
        fail_key = (self._obstacle_key, round(pose.x, 1), round(pose.y, 1),
                    round(pose.theta, 2))
        if fail_key != self._failed_key:
            self._failed_key = fail_key
            self._failed_goals = set()
            self._shelf = {}
        decision = decide(obs, beliefs, predictions, None, self.lot, cfg,
                          ego_state=ego_state, obstacles=obstacles,
                          timings=self.timings, ego_scorer=self.ego_scorer,
                          allow_back=self._front_blocked >= cfg.back_patience,
                          failed_goals=self._failed_goals, shelf=self._shelf)
        if decision.kind in (PARK, EXPLORE):
            self.active = decision.plan
            self.cursor = 1 if decision.plan.controls else 0
            self._steps_since_plan = cfg.replan_interval  # plan adopted; no throttle
            self._front_blocked = 0
        else:
            self._front_blocked += 1
        return decision


class IdlePolicy:
    """Always-zero control; used by reactive-safety checks and as a baseline stub."""

    needs_pipeline = False

    def __init__(self, *_args, **_kwargs):
        self.timings = _Timings(False)

    def step(self, obs, beliefs, predictions, ego_state) -> EgoDecision:
        return EgoDecision(kind=IDLE, control=ZERO_CONTROL)
