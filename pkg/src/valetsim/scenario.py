"""Randomized parking scenarios and the deterministic episode loop.

The stock environment is a 4x10-spot lot split by three vertical and two
horizontal roads. Scripted vehicles spawn on the center road with one of
eight parking maneuvers (near/far lane x before/after the spot x head/tail-in)
and brake reactively when they anticipate hitting the ego.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field, replace

import numpy as np

from .belief import init_beliefs, intention_update, observation_update
from .dynamics import (PedestrianControl, PedestrianState, VehicleControl, VehicleState,
                       ZERO_CONTROL, step_pedestrian, step_vehicle)
from .geometry import (Disc, OrientedRect, ParkingLot, Pose2, Road, obb_contains,
                       obb_intersects_many, obb_intersects_pairwise, rect_corners,
                       wrap_angle, disc_rect_distance)
from .intention import HeuristicScorer, infer_intentions
from .prediction import PredictionConfig, cv_predict, predict_all
from .sensing import WorldSnapshot, sense

VEHICLE_LENGTH = 4.97  # [m]
VEHICLE_WIDTH = 1.86  # [m]
CRUISE_SPEED = 2.0  # [m/s] scripted approach speed
PARK_SPEED = 1.0  # [m/s] scripted entry / reverse-approach speed

MANEUVER_NAMES = {
    1: "near-lane / before / head-in",
    2: "near-lane / before / tail-in",
    3: "near-lane / after / head-in",
    4: "near-lane / after / tail-in",
    5: "far-lane / before / head-in",
    6: "far-lane / before / tail-in",
    7: "far-lane / after / head-in",
    8: "far-lane / after / tail-in",
}


class ManeuverInfeasible(ValueError):
    """Raised when a maneuver template cannot close for the given geometry."""


class ScenarioError(RuntimeError):
    """Raised when scenario generation exhausts its re-draw budget."""


# ---------------------------------------------------------------------------
# Lot template
# ---------------------------------------------------------------------------

def build_standard_lot() -> ParkingLot:
    """Four columns of 10 spots split by 3 vertical and 2 horizontal roads."""
    sp_l, sp_w = 5.5, 2.7
    road_w = 6.5
    col_x = [9.25, 14.75, 26.75, 32.25]
    col_heading = [0.0, math.pi, 0.0, math.pi]  # facing away from each serving road
    spots = []
    for c in range(4):
        for r in range(10):
            spots.append(OrientedRect(col_x[c], 7.85 + 2.7 * r, col_heading[c], sp_l, sp_w))
    roads = (
        Road((3.25, 3.25), (3.25, 36.75), road_w),  # left
        Road((20.75, 3.25), (20.75, 36.75), road_w),  # middle
        Road((38.25, 3.25), (38.25, 36.75), road_w),  # right
        Road((3.25, 3.25), (38.25, 3.25), road_w),  # bottom
        Road((3.25, 36.75), (38.25, 36.75), road_w),  # top
    )
    return ParkingLot(boundary=(0.0, 0.0, 41.5, 40.0), entrance=(20.75, 40.0),
                      spots=tuple(spots), roads=roads)


# middle-column bottom spots targeted by scripted vehicles (column-major indexing)
POOL_SPOTS = tuple(range(10, 15)) + tuple(range(20, 25))
MIDDLE_ROAD_INDEX = 1
EGO_START = Pose2(20.75, 36.75, -math.pi / 2)


# ---------------------------------------------------------------------------
# Maneuver synthesis
# ---------------------------------------------------------------------------

def _fit_leg(distance: float, speed: float, dt: float, v_cap: float = 5.0):
    """Constant-speed straight leg covering `distance` in whole steps exactly."""
    if abs(distance) < 1e-9:
        return []
    n = max(1, int(round(abs(distance) / (speed * dt))))
    v = distance / (n * dt)
    while abs(v) > v_cap:
        n += 1
        v = distance / (n * dt)
    return [VehicleControl(v, 0.0)] * n


def _simulate_controls(spawn: VehicleState, controls, dt: float):
    states = [spawn]
    s = spawn
    for u in controls:
        s = step_vehicle(s, u, dt)
        states.append(s)
    return states


def maneuver_plan(maneuver: int, spawn: VehicleState, spot: OrientedRect, dt: float,
                  v_cruise: float = CRUISE_SPEED, v_arc: float = 1.5,
                  v_park: float = PARK_SPEED, arc_radius: float = 3.2) -> list:
    """Controls taking `spawn` into `spot` for one of the eight maneuvers.

    The template is approach leg -> quarter-turn arc -> straight entry leg,
    with the approach run in reverse for the "after the spot" variants and the
    arc/entry run in reverse for tail-in variants. Leg speeds absorb step
    quantization so the rollout lands centered in the spot. Raises
    ManeuverInfeasible when the geometry cannot close.
    """
    if not 1 <= maneuver <= 8:
        raise ValueError(f"maneuver id must be 1..8, got {maneuver}")
    tail_in = (maneuver - 1) % 2 == 1

    phi = spawn.pose.theta
    t_hat = np.array([math.cos(phi), math.sin(phi)])
    c = np.array([spot.cx, spot.cy])
    rel = c - spawn.pose.position
    lon_c = float(rel @ t_hat)
    lat_vec = rel - lon_c * t_hat
    d_lat = float(np.hypot(*lat_vec))
    if d_lat < 1e-6:
        raise ManeuverInfeasible("spot center sits on the travel line (zero-width aisle)")
    n_hat = lat_vec / d_lat
    psi_hat = np.array([math.cos(spot.heading), math.sin(spot.heading)])
    if float(psi_hat @ n_hat) < 0.98:
        raise ManeuverInfeasible("spot does not open toward the approach lane")

    target_heading = spot.heading + (math.pi if tail_in else 0.0)
    dpsi = wrap_angle(target_heading - phi)
    if abs(abs(dpsi) - 0.5 * math.pi) > 1e-6:
        raise ManeuverInfeasible("lane and spot are not perpendicular")

    n_arc = max(16, int(round(abs(dpsi) * arc_radius / (v_arc * dt))))
    omega = dpsi / (n_arc * dt)
    v_signed = -v_arc if tail_in else v_arc
    arc_controls = [VehicleControl(v_signed, omega)] * n_arc
    arc_states = _simulate_controls(VehicleState(Pose2(0.0, 0.0, phi),
                                                 spawn.length, spawn.width),
                                    arc_controls, dt)
    delta = arc_states[-1].pose.position  # world displacement of the arc
    l_lat = float(delta @ n_hat)
    entry = d_lat - l_lat
    if entry < 0.05:
        raise ManeuverInfeasible("arc overshoots the spot center line")

    arc_end = c - entry * psi_hat
    arc_start = arc_end - delta
    if abs(float((arc_start - spawn.pose.position) @ n_hat)) > 0.02:
        raise ManeuverInfeasible("spawn is not on the maneuver's approach lane")

    approach = float((arc_start - spawn.pose.position) @ t_hat)
    controls = _fit_leg(approach, v_cruise if approach >= 0 else v_park, dt)
    controls += arc_controls
    entry_leg = _fit_leg(entry, v_park, dt)
    if tail_in:
        entry_leg = [VehicleControl(-u.v, 0.0) for u in entry_leg]
    controls += entry_leg

    final = _simulate_controls(spawn, controls, dt)[-1]
    if not obb_contains(spot, final.footprint):
        raise ManeuverInfeasible("rollout does not end contained in the spot")
    if abs(wrap_angle(final.pose.theta - target_heading)) > 1e-6:
        raise ManeuverInfeasible("rollout ends with the wrong heading")
    return controls


def spawn_for_maneuver(maneuver: int, spot: OrientedRect, road: Road, travel_heading: float,
                       approach_distance: float, lot: ParkingLot,
                       length: float = VEHICLE_LENGTH, width: float = VEHICLE_WIDTH) -> VehicleState:
    """Spawn pose on the maneuver's natural lane at a distance from the abeam point."""
    far_lane = maneuver > 4
    start_after = ((maneuver - 1) // 2) % 2 == 1
    t_hat = np.array([math.cos(travel_heading), math.sin(travel_heading)])
    a = np.array(road.start, dtype=float)
    b = np.array(road.end, dtype=float)
    axis = (b - a) / np.hypot(*(b - a))
    c = np.array([spot.cx, spot.cy])
    abeam_center = a + float((c - a) @ axis) * axis
    lat = c - abeam_center
    d = float(np.hypot(*lat))
    if d < 1e-9:
        raise ManeuverInfeasible("spot center lies on the road center line")
    n_hat = lat / d
    lane_shift = (-1.0 if far_lane else 1.0) * road.width / 4.0
    lane_point = abeam_center + lane_shift * n_hat
    sign = 1.0 if start_after else -1.0
    pos = lane_point + sign * approach_distance * t_hat
    state = VehicleState(Pose2(float(pos[0]), float(pos[1]), travel_heading), length, width)
    if not lot.contains_rect(state.footprint, margin=0.05):
        raise ManeuverInfeasible("spawn footprint leaves the lot")
    return state


# ---------------------------------------------------------------------------
# Scenario generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScriptedVehicle:
    aid: int  # world vehicle index (>= 1)
    spawn: VehicleState
    controls: tuple
    passiveness: int
    target_spot: int
    maneuver: int


@dataclass(frozen=True)
class ScriptedPedestrian:
    pid: int
    spawn: PedestrianState
    controls: tuple
    passiveness: int


@dataclass(frozen=True)
class Scenario:
    seed: int
    lot: ParkingLot
    ego_start: VehicleState
    vehicles: tuple  # ScriptedVehicle
    pedestrians: tuple
    static_vehicles: tuple  # (Pose2, length, width) parked everywhere else
    vacant_spots: frozenset
    t_f: float
    dt: float
    t_hist: float


@dataclass(frozen=True)
class ScenarioConfig:
    n_dynamic: int = 0  # 0 -> draw 1 or 2
    reactive: bool = True
    passiveness_low: int = 2
    passiveness_high: int = 6  # inclusive
    t_f: float = 100.0
    dt: float = 0.1
    t_hist: float = 4.0
    n_pedestrians: int = 0
    max_redraws: int = 100

    def __post_init__(self):
        if self.t_f <= 0:
            raise ValueError("t_f must be positive")
        if self.passiveness_low < 0 or self.passiveness_high < self.passiveness_low:
            raise ValueError("bad passiveness range")


def _nominal_states(agent: ScriptedVehicle, dt: float) -> np.ndarray:
    states = _simulate_controls(agent.spawn, agent.controls, dt)
    return np.array([[s.pose.x, s.pose.y, s.pose.theta] for s in states])


def generate_scenario(seed: int, config: ScenarioConfig = None,
                      lot: ParkingLot = None) -> Scenario:
    """Deterministic scenario draw: vacancies, targets, maneuvers, spawn points.

    Scripted plans that collide with each other, parked vehicles, or the ego's
    start pose are redrawn (fresh target spot and maneuver), up to
    config.max_redraws attempts.
    """
    config = config or ScenarioConfig()
    lot = lot or build_standard_lot()
    rng = np.random.default_rng(seed)
    dt = config.dt
    warm_steps = int(round(config.t_hist / dt))

    n_dyn = config.n_dynamic if config.n_dynamic in (1, 2) else int(rng.integers(1, 3))
    n_vac = int(rng.integers(max(1, n_dyn), 11))
    vacant_pool = sorted(int(i) for i in rng.choice(POOL_SPOTS, size=n_vac, replace=False))
    outer_vacant = [int(rng.integers(0, 10)), int(30 + rng.integers(0, 10))]
    vacant = frozenset(vacant_pool) | frozenset(outer_vacant)

    statics = []
    for i, sp in enumerate(lot.spots):
        if i in vacant:
            continue
        heading = sp.heading + (math.pi if rng.random() < 0.5 else 0.0)
        length = float(rng.uniform(4.5, 5.2))
        width = float(rng.uniform(1.7, 1.95))
        statics.append((Pose2(sp.cx, sp.cy, heading), length, width))
    static_poses = np.array([[p.x, p.y, p.theta] for p, _, _ in statics])
    static_dims = np.array([[l, w] for _, l, w in statics])

    ego_start = VehicleState(EGO_START, VEHICLE_LENGTH, VEHICLE_WIDTH)
    ego_rect = ego_start.footprint
    road = lot.roads[MIDDLE_ROAD_INDEX]
    travel = -math.pi / 2  # scripted vehicles approach southbound like the ego

    plan_len = warm_steps + int(round(config.t_f / dt)) + config.passiveness_high + 1

    for attempt in range(config.max_redraws):
        targets = [int(i) for i in rng.choice(vacant_pool, size=n_dyn, replace=False)]
        maneuvers = [int(rng.integers(1, 9)) for _ in range(n_dyn)]
        distances = [float(rng.uniform(6.0, 14.0)) for _ in range(n_dyn)]
        passiveness = [int(rng.integers(config.passiveness_low, config.passiveness_high + 1))
                       if config.reactive else 0 for _ in range(n_dyn)]
        try:
            agents = []
            for j in range(n_dyn):
                spot = lot.spots[targets[j]]
                # spawn far enough that the drawn distance still holds at t = 0,
                # after the pre-history part of the plan has been driven
                start_after = ((maneuvers[j] - 1) // 2) % 2 == 1
                warm_travel = (PARK_SPEED if start_after else CRUISE_SPEED) * config.t_hist
                spawn = spawn_for_maneuver(maneuvers[j], spot, road, travel,
                                           distances[j] + warm_travel, lot)
                controls = maneuver_plan(maneuvers[j], spawn, spot, dt)
                controls = tuple(controls) + (ZERO_CONTROL,) * (plan_len - len(controls))
                agents.append(ScriptedVehicle(aid=j + 1, spawn=spawn, controls=controls,
                                              passiveness=passiveness[j],
                                              target_spot=targets[j], maneuver=maneuvers[j]))
        except ManeuverInfeasible:
            continue

        rollouts = [_nominal_states(a, dt) for a in agents]
        horizon = max(r.shape[0] for r in rollouts)
        ok = True
        for j, r in enumerate(rollouts):
            dims = np.array([agents[j].spawn.length, agents[j].spawn.width])
            if not all(lot.contains_rect(OrientedRect(*p, dims[0], dims[1])) for p in r[::5]):
                ok = False
                break
            if static_poses.size and any(
                    obb_intersects_many(OrientedRect(*p, dims[0], dims[1]),
                                        static_poses, static_dims).any() for p in r[::2]):
                ok = False
                break
            if obb_intersects_many(ego_rect, r, dims).any():
                ok = False
                break
        if ok and n_dyn == 2:
            a, b = rollouts
            da = np.array([agents[0].spawn.length, agents[0].spawn.width])
            db = np.array([agents[1].spawn.length, agents[1].spawn.width])
            n = max(a.shape[0], b.shape[0])
            pa = a[np.minimum(np.arange(n), a.shape[0] - 1)]
            pb = b[np.minimum(np.arange(n), b.shape[0] - 1)]
            if obb_intersects_pairwise(pa, da, pb, db).any():
                ok = False
        if not ok:
            continue

        pedestrians = _draw_pedestrians(rng, config, lot)
        return Scenario(seed=seed, lot=lot, ego_start=ego_start, vehicles=tuple(agents),
                        pedestrians=pedestrians, static_vehicles=tuple(statics),
                        vacant_spots=vacant, t_f=config.t_f, dt=dt, t_hist=config.t_hist)
    raise ScenarioError(f"could not draw a consistent scenario for seed {seed} "
                        f"after {config.max_redraws} attempts")


def _draw_pedestrians(rng, config: ScenarioConfig, lot: ParkingLot) -> tuple:
    peds = []
    total = int(round((config.t_hist + config.t_f) / config.dt)) + config.passiveness_high + 1
    for m in range(config.n_pedestrians):
        road = lot.roads[int(rng.integers(len(lot.roads)))]
        t = float(rng.uniform(0.2, 0.8))
        x = road.start[0] + t * (road.end[0] - road.start[0])
        y = road.start[1] + t * (road.end[1] - road.start[1])
        heading = float(rng.uniform(-math.pi, math.pi))
        speed = float(rng.uniform(0.8, 1.5))
        controls = _bouncing_walk(x, y, heading, speed, total, lot, config.dt)
        passiveness = (int(rng.integers(config.passiveness_low, config.passiveness_high + 1))
                       if config.reactive else 0)
        peds.append(ScriptedPedestrian(pid=m, spawn=PedestrianState(x, y),
                                       controls=tuple(controls), passiveness=passiveness))
    return tuple(peds)


def _bouncing_walk(x, y, heading, speed, steps, lot: ParkingLot, dt) -> list:
    """Straight walk that reflects off the lot boundary."""
    xmin, ymin, xmax, ymax = lot.boundary
    margin = 0.5
    controls = []
    dx, dy = math.cos(heading), math.sin(heading)
    for _ in range(steps):
        nx, ny = x + speed * dx * dt, y + speed * dy * dt
        if not (xmin + margin <= nx <= xmax - margin):
            dx = -dx
        if not (ymin + margin <= ny <= ymax - margin):
            dy = -dy
        heading = math.atan2(dy, dx)
        controls.append(PedestrianControl(speed, heading))
        x += speed * dx * dt
        y += speed * dy * dt
    return controls


# ---------------------------------------------------------------------------
# Reactive stepping
# ---------------------------------------------------------------------------

def reactive_step(state, controls, cursor: int, passiveness: int, ego_rect: OrientedRect,
                  dt: float, is_pedestrian: bool = False, radius: float = 0.0):
    """Next control for a scripted agent: brake when its own lookahead crosses
    the ego's current footprint, else consume the next unused plan control.

    Returns (control, new_cursor, braked). Braking freezes the cursor; it only
    counts as an interruption when the substituted control was non-trivial.
    """
    if cursor >= len(controls):
        return (PedestrianControl(0.0, 0.0) if is_pedestrian else ZERO_CONTROL,
                cursor, False)
    if passiveness > 0:
        # cheap reach gate before simulating the lookahead
        if is_pedestrian:
            pos = np.array([state.x, state.y])
            reach = passiveness * dt * 2.0 + radius
        else:
            pos = state.pose.position
            reach = passiveness * dt * 5.0 + 0.5 * math.hypot(state.length, state.width)
        gap = math.hypot(pos[0] - ego_rect.cx, pos[1] - ego_rect.cy) \
            - ego_rect.circumradius - reach
        if gap <= 0.0:
            s = state
            for k in range(passiveness):
                if cursor + k >= len(controls):
                    break
                u = controls[cursor + k]
                if is_pedestrian:
                    s = step_pedestrian(s, u, dt)
                    hit = disc_rect_distance((s.x, s.y), radius, ego_rect) <= 0.0
                else:
                    s = step_vehicle(s, u, dt)
                    hit = obb_intersects_many(ego_rect,
                                              np.array([[s.pose.x, s.pose.y, s.pose.theta]]),
                                              np.array([s.length, s.width]))[0]
                if hit:
                    u_now = controls[cursor]
                    moving = (u_now.v != 0.0 if is_pedestrian
                              else (u_now.v != 0.0 or u_now.omega != 0.0))
                    return (PedestrianControl(0.0, 0.0) if is_pedestrian else ZERO_CONTROL,
                            cursor, bool(moving))
    return controls[cursor], cursor + 1, False


# ---------------------------------------------------------------------------
# Episode loop
# ---------------------------------------------------------------------------

@dataclass
class EpisodeLog:
    seed: int
    method: str
    dt: float
    n_spots: int
    outcome: str = "timeout"  # parked | collision | timeout
    t_park: float = None
    final_spot: int = None
    times: list = field(default_factory=list)
    vehicle_poses: list = field(default_factory=list)  # (N,3) per step, time t
    belief_rows: list = field(default_factory=list)
    vacant_sets: list = field(default_factory=list)
    occupied_sets: list = field(default_factory=list)
    decisions: list = field(default_factory=list)  # (kind, goal) per step
    braked_flags: list = field(default_factory=list)  # tuple per step per agent
    prediction_events: list = field(default_factory=list)  # (agent, step, prob, (K,2))
    plan_records: list = field(default_factory=list)  # (step, kind, goal, poses)
    agent_targets: dict = field(default_factory=dict)
    agent_parked_step: dict = field(default_factory=dict)
    ped_positions: list = field(default_factory=list)
    selection_times: list = field(default_factory=list)
    planning_times: list = field(default_factory=list)
    interrupted_steps: int = 0

    @property
    def n_steps(self) -> int:
        return len(self.times)


METHOD_BEZIER = "explicit-past-bezier"
METHOD_CV = "explicit-past-cv"
METHOD_PLANNER = "explicit-past-planner"
METHOD_IMPLICIT = "implicit-ego-only"
METHOD_FUTURE = "explicit-future"
ALL_METHODS = (METHOD_BEZIER, METHOD_CV, METHOD_PLANNER, METHOD_IMPLICIT, METHOD_FUTURE)

_TRAJ_OF_METHOD = {METHOD_BEZIER: "bezier", METHOD_CV: "cv", METHOD_PLANNER: "planner",
                   METHOD_IMPLICIT: "cv", METHOD_FUTURE: "cv"}


def _future_intents(obs, beliefs, lot, pred_cfg: PredictionConfig, beta: float) -> dict:
    """Occupancy intents inferred from constant-velocity futures: a vacant spot
    a predicted track enters within t_pred gets probability shrinking with
    time-to-arrival (1 at once, 0.5 at the horizon)."""
    from .intention import mean_history_speed

    intents = {}
    n_pred = max(1, int(round(pred_cfg.t_pred / pred_cfg.dt)))
    b = beliefs.beliefs
    candidates = [i for i in range(lot.n_spots) if b[i] < beta]
    for k in sorted(obs.dynamic_vehicles):
        ov = obs.dynamic_vehicles[k]
        v_bar = mean_history_speed(ov.history, pred_cfg.dt)
        track = cv_predict(ov.pose, v_bar, pred_cfg.dt, pred_cfg.t_pred)[:n_pred]
        spot_probs = {}
        for i in candidates:
            sp = lot.spots[i]
            d = np.hypot(track[:, 0] - sp.cx, track[:, 1] - sp.cy)
            close = np.flatnonzero(d <= sp.circumradius)
            inside = None
            for tau in close:
                dx = track[tau, 0] - sp.cx
                dy = track[tau, 1] - sp.cy
                ch, sh = math.cos(sp.heading), math.sin(sp.heading)
                lx = ch * dx + sh * dy
                ly = -sh * dx + ch * dy
                if abs(lx) <= 0.5 * sp.length and abs(ly) <= 0.5 * sp.width:
                    inside = int(tau)
                    break
            if inside is not None:
                spot_probs[i] = 1.0 - 0.5 * (inside + 1) / n_pred
        if spot_probs:
            intents[k] = spot_probs
    return intents


def run_episode(scenario: Scenario, policy, exp) -> EpisodeLog:
    """Step the world at dt: sense, update beliefs, predict, decide, advance,
    then check termination. Deterministic given (scenario, configuration)."""
    lot = scenario.lot
    dt = scenario.dt
    warm = int(round(scenario.t_hist / dt))
    n_steps = int(round(scenario.t_f / dt))
    method = exp.method

    dyn = list(scenario.vehicles)
    n_dyn = len(dyn)
    n_veh = 1 + n_dyn + len(scenario.static_vehicles)
    poses = np.zeros((n_veh, 3))
    dims = np.zeros((n_veh, 2))
    poses[0] = scenario.ego_start.pose.as_array()
    dims[0] = (scenario.ego_start.length, scenario.ego_start.width)
    for j, agent in enumerate(dyn):
        dims[1 + j] = (agent.spawn.length, agent.spawn.width)
    for j, (p, l, w) in enumerate(scenario.static_vehicles):
        poses[1 + n_dyn + j] = (p.x, p.y, p.theta)
        dims[1 + n_dyn + j] = (l, w)

    # warm-up: scripted vehicles run the pre-history part of their plans
    history = np.zeros((n_veh, warm + 1, 3))
    for j, agent in enumerate(dyn):
        s = agent.spawn
        track = [s.pose.as_array()]
        for u in agent.controls[:warm]:
            s = step_vehicle(s, u, dt)
            track.append(s.pose.as_array())
        history[1 + j] = np.array(track)
        poses[1 + j] = track[-1]
    for k in range(n_veh):
        if 1 <= k <= n_dyn:
            continue
        history[k] = np.tile(poses[k], (warm + 1, 1))

    ped_states = [PedestrianState(p.spawn.x, p.spawn.y, p.spawn.radius)
                  for p in scenario.pedestrians]
    ped_cursors = [0] * len(ped_states)
    ped_prev = [(s.x, s.y) for s in ped_states]
    for m, ped in enumerate(scenario.pedestrians):  # pedestrian warm-up
        s = ped_states[m]
        for u in ped.controls[:warm]:
            ped_prev[m] = (s.x, s.y)
            s = step_pedestrian(s, u, dt)
        ped_states[m] = s
        ped_cursors[m] = min(warm, len(ped.controls))

    cursors = [warm] * n_dyn
    braked_totals = [0] * n_dyn

    beliefs = init_beliefs(lot.n_spots)
    first_seen = {}
    pred_cfg = exp.prediction
    scorer = exp.make_scorer()
    traj_method = _TRAJ_OF_METHOD[method]

    log = EpisodeLog(seed=scenario.seed, method=method, dt=dt, n_spots=lot.n_spots)
    log.agent_targets = {a.aid: a.target_spot for a in dyn}
    timed = exp.record_timings

    for step in range(n_steps):
        t = step * dt
        log.times.append(t)
        log.vehicle_poses.append(poses.copy())
        if ped_states:
            log.ped_positions.append([(s.x, s.y) for s in ped_states])

        ego_state = VehicleState(Pose2(*poses[0]), dims[0, 0], dims[0, 1])
        predictions = []
        if policy.needs_pipeline:
            t0 = _time.perf_counter() if timed else 0.0
            world = WorldSnapshot(time=t, vehicle_poses=poses, vehicle_dims=dims,
                                  vehicle_history=history,
                                  ped_positions=np.array([(s.x, s.y) for s in ped_states])
                                  if ped_states else np.zeros((0, 2)),
                                  ped_radii=np.array([s.radius for s in ped_states]),
                                  ped_prev=np.array(ped_prev) if ped_prev else np.zeros((0, 2)))
            obs = sense(world, lot, exp.base_region(), exp.n_ray, first_seen)
            first_seen = obs.first_seen
            tilde = observation_update(beliefs, obs.vacant_spots, obs.occupied_spots, time=t)

            if method in (METHOD_BEZIER, METHOD_CV, METHOD_PLANNER):
                dists = infer_intentions(lot, tilde, obs, scorer, exp.beta,
                                         dt=dt, t_hist=scenario.t_hist)
                spot_intents = {k: d.spot_probs for k, d in dists.items()}
            elif method == METHOD_FUTURE:
                dists = {}
                spot_intents = _future_intents(obs, tilde, lot, pred_cfg, exp.beta)
            else:  # implicit: no explicit reasoning about other agents' goals
                dists = {}
                spot_intents = {}
            beliefs = intention_update(tilde, obs.vacant_spots, spot_intents, time=t)

            believed = frozenset(int(i) for i in np.flatnonzero(beliefs.beliefs >= exp.beta))
            predictions = predict_all(obs, dists, exp.mu, traj_method, lot, pred_cfg,
                                      believed_occupied=believed,
                                      planner_config=exp.planner)
            n_plans_before = len(policy.timings.plan_calls)
            decision = policy.step(obs, beliefs, predictions, ego_state)
            if timed:
                dt_plan = sum(policy.timings.plan_calls[n_plans_before:])
                log.selection_times.append(_time.perf_counter() - t0 - dt_plan)

            log.belief_rows.append(beliefs.beliefs.copy())
            log.vacant_sets.append(sorted(obs.vacant_spots))
            log.occupied_sets.append(sorted(obs.occupied_spots))
            for pred in predictions:
                if pred.agent_kind == "vehicle":
                    log.prediction_events.append(
                        (pred.agent_id, step, pred.probability,
                         pred.poses[:pred.n_scored, :2].astype(np.float32)))
            if decision.kind in ("park", "explore"):
                plan_poses = np.array([[s.pose.x, s.pose.y, s.pose.theta]
                                       for s in decision.plan.states[::5]], dtype=np.float32)
                log.plan_records.append((step, decision.kind, decision.goal, plan_poses))
        else:
            decision = policy.step(None, beliefs, predictions, ego_state)
        log.decisions.append((decision.kind, decision.goal))

        # scripted agents react to the ego's *current* footprint, then all advance
        ego_rect = ego_state.footprint
        flags = []
        agent_controls = []
        for j, agent in enumerate(dyn):
            st = VehicleState(Pose2(*poses[1 + j]), dims[1 + j, 0], dims[1 + j, 1])
            u, cursors[j], braked = reactive_step(st, agent.controls, cursors[j],
                                                  agent.passiveness, ego_rect, dt)
            agent_controls.append(u)
            flags.append(braked)
            if braked:
                braked_totals[j] += 1
        ped_controls = []
        for m, ped in enumerate(scenario.pedestrians):
            u, ped_cursors[m], braked = reactive_step(
                ped_states[m], ped.controls, ped_cursors[m], ped.passiveness, ego_rect,
                dt, is_pedestrian=True, radius=ped_states[m].radius)
            ped_controls.append(u)
        log.braked_flags.append(tuple(flags))

        new_ego = step_vehicle(ego_state, decision.control, dt)
        poses[0] = new_ego.pose.as_array()
        for j in range(n_dyn):
            st = VehicleState(Pose2(*poses[1 + j]), dims[1 + j, 0], dims[1 + j, 1])
            st = step_vehicle(st, agent_controls[j], dt)
            poses[1 + j] = st.pose.as_array()
            if log.agent_parked_step.get(1 + j) is None and \
                    obb_contains(lot.spots[dyn[j].target_spot], st.footprint):
                log.agent_parked_step[1 + j] = step + 1
        for m in range(len(ped_states)):
            ped_prev[m] = (ped_states[m].x, ped_states[m].y)
            ped_states[m] = step_pedestrian(ped_states[m], ped_controls[m], dt)

        history = np.roll(history, -1, axis=1)
        history[:, -1, :] = poses

        # termination checks on the advanced world
        ego_rect_new = OrientedRect(*poses[0], dims[0, 0], dims[0, 1])
        others = np.arange(1, n_veh)
        if obb_intersects_many(ego_rect_new, poses[others], dims[others]).any():
            log.outcome = "collision"
            break
        if any(disc_rect_distance((s.x, s.y), s.radius, ego_rect_new) <= 0.0
               for s in ped_states):
            log.outcome = "collision"
            break
        parked = lot.spot_containing(ego_rect_new)
        if parked is not None:
            log.outcome = "parked"
            log.t_park = (step + 1) * dt
            log.final_spot = parked
            break
    else:
        log.outcome = "timeout"

    log.vehicle_poses.append(poses.copy())  # state row for the final time
    log.interrupted_steps = int(sum(braked_totals))
    if timed:
        log.planning_times = list(policy.timings.plan_calls)
    return log
