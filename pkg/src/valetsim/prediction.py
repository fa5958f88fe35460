"""Intention-conditioned trajectory prediction: cubic Bezier, constant velocity, planner."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose2, wrap_angle
from .dynamics import VehicleState

# Fixed-order Gauss-Legendre rule applied per table interval when building the
# arc-length inversion table.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
ARC_TABLE_SIZE = 256

BEZIER = "bezier"
CONSTANT_VELOCITY = "cv"
PLANNER = "planner"

START_TANGENT_AS_PAPER = "as-paper"  # first inner control point sits behind the vehicle
START_TANGENT_FORWARD = "forward"
START_TANGENT_AUTO = "auto"  # behind for spot goals (reverse staging), ahead for transit


@dataclass(frozen=True)
class BezierCurve:
    """Cubic Bezier with control points p0..p3 (each a 2-vector)."""

    p0: tuple
    p1: tuple
    p2: tuple
    p3: tuple

    def control_array(self) -> np.ndarray:
        return np.array([self.p0, self.p1, self.p2, self.p3], dtype=float)


@dataclass(frozen=True)
class PredictedTrajectory:
    """Pose rollout for one agent under one intention hypothesis.

    poses: (K, 3) at times t+dt .. t+K*dt. n_scored marks how many leading
    steps belong to the accuracy horizon (the remainder is constant-velocity
    fill used only for plan validation).
    """

    agent_id: int
    agent_kind: str  # "vehicle" | "pedestrian"
    intention: tuple  # ("spot", i) | ("explore", q) | None
    poses: np.ndarray
    probability: float
    n_scored: int
    length: float = 0.0  # vehicle footprint; 0 for pedestrians
    width: float = 0.0
    radius: float = 0.0  # pedestrian disc; 0 for vehicles


@dataclass(frozen=True)
class PredictionConfig:
    dt: float = 0.1  # [s]
    t_pred: float = 3.0  # [s] accuracy horizon
    t_plan: float = 5.0  # [s] validation horizon; predictions are CV-filled out to it
    zeta: float = 3.0  # [s] Bezier tangent-length gain
    mu: float = 0.3  # intention probability floor for conditioning
    start_tangent: str = START_TANGENT_AS_PAPER


def bezier_point(curve: BezierCurve, u) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=float))[:, None]
    p = curve.control_array()
    w = 1.0 - u
    return (w**3 * p[0] + 3 * w**2 * u * p[1] + 3 * w * u**2 * p[2] + u**3 * p[3])


def bezier_velocity(curve: BezierCurve, u) -> np.ndarray:
    """dB/du, shape (K, 2)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))[:, None]
    p = curve.control_array()
    w = 1.0 - u
    return 3 * w**2 * (p[1] - p[0]) + 6 * w * u * (p[2] - p[1]) + 3 * u**2 * (p[3] - p[2])


def bezier_control_points(state: VehicleState, v_bar: float, goal: Pose2, zeta: float,
                          start_tangent: str = START_TANGENT_AS_PAPER) -> BezierCurve:
    """Anchor a cubic between the vehicle and its goal.

    The inner control points sit zeta*v_bar behind each endpoint's heading:
    the goal-side point shapes the approach to enter along the goal heading;
    the start-side point deliberately points opposite the vehicle heading,
    which mirrors the pull-forward-then-reverse pattern of parking cars
    (use start_tangent="forward" to flip it).
    """
    if zeta < 0 or v_bar < 0:
        raise ValueError("zeta and v_bar must be >= 0")
    pose = state.pose
    off = zeta * v_bar
    th0 = pose.theta + (math.pi if start_tangent == START_TANGENT_AS_PAPER else 0.0)
    p0 = (pose.x, pose.y)
    p1 = (pose.x + off * math.cos(th0), pose.y + off * math.sin(th0))
    p2 = (goal.x + off * math.cos(goal.theta + math.pi),
          goal.y + off * math.sin(goal.theta + math.pi))
    p3 = (goal.x, goal.y)
    return BezierCurve(p0, p1, p2, p3)


def arc_length_table(curve: BezierCurve, size: int = ARC_TABLE_SIZE):
    """Monotone cumulative arc length sampled at size+1 parameter knots."""
    knots = np.linspace(0.0, 1.0, size + 1)
    half = 0.5 / size
    mids = knots[:-1] + half  # interval centers
    u_eval = (mids[:, None] + half * _GL_NODES[None, :]).ravel()
    speed = np.linalg.norm(bezier_velocity(curve, u_eval), axis=1).reshape(size, -1)
    seg = half * (speed @ _GL_WEIGHTS)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return knots, cum


def _tangent_angles(curve: BezierCurve, u: np.ndarray, fallback: float) -> np.ndarray:
    v = bezier_velocity(curve, u)
    mag = np.hypot(v[:, 0], v[:, 1])
    ang = np.arctan2(v[:, 1], v[:, 0])
    ang[mag < 1e-12] = np.nan
    # carry the last defined heading forward; lead-in gaps use the fallback
    out = ang.copy()
    last = fallback
    for i in range(len(out)):
        if math.isnan(out[i]):
            out[i] = last
        else:
            last = out[i]
    return out


def end_tangent_angle(curve: BezierCurve, fallback: float = 0.0) -> float:
    p = curve.control_array()
    for a, b in ((p[3], p[2]), (p[3], p[1]), (p[3], p[0])):
        d = a - b
        if np.hypot(d[0], d[1]) > 1e-12:
            return math.atan2(d[1], d[0])
    return fallback


def bezier_predict(curve: BezierCurve, v_bar: float, dt: float, t_pred: float,
                   t_total: float, fallback_heading: float = 0.0) -> np.ndarray:
    """Poses along the curve at constant speed v_bar, then constant-velocity fill.

    Returns (K, 3) covering times dt..t_total. The curve is traversed by arc
    length; once exhausted the goal pose is held. Steps past t_pred repeat the
    displacement of the last traversal step (so an arrived vehicle stays put).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_total < t_pred:
        raise ValueError("t_total must cover t_pred")
    n_pred = max(1, int(round(t_pred / dt)))
    n_total = max(n_pred, int(round(t_total / dt)))

    knots, cum = arc_length_table(curve)
    total_len = float(cum[-1])
    s = np.minimum(v_bar * dt * np.arange(1, n_pred + 1), total_len)
    if total_len > 1e-12:
        u = np.interp(s, cum, knots)
    else:
        u = np.zeros(n_pred)
    pos = bezier_point(curve, u)
    heading = _tangent_angles(curve, u, fallback_heading)
    done = s >= total_len - 1e-12
    if done.any() and total_len > 1e-12:
        heading[done] = end_tangent_angle(curve, fallback_heading)
    poses = np.column_stack([pos, wrap_angle(heading) if np.isscalar(heading)
                             else (heading + np.pi) % (2 * np.pi) - np.pi])

    if n_total > n_pred:
        prev = pos[-2] if n_pred >= 2 else np.asarray(curve.p0, dtype=float)
        step = pos[-1] - prev
        k = np.arange(1, n_total - n_pred + 1)[:, None]
        fill_pos = pos[-1][None, :] + step[None, :] * k
        fill = np.column_stack([fill_pos, np.full(len(k), poses[-1, 2])])
        poses = np.vstack([poses, fill])
    return poses


def cv_predict(pose, v_bar: float, dt: float, horizon: float) -> np.ndarray:
    """Straight-line poses along the current heading, (K, 3) for times dt..horizon."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if isinstance(pose, VehicleState):
        pose = pose.pose
    n = max(1, int(round(horizon / dt)))
    k = np.arange(1, n + 1)
    x = pose.x + v_bar * dt * k * math.cos(pose.theta)
    y = pose.y + v_bar * dt * k * math.sin(pose.theta)
    return np.column_stack([x, y, np.full(n, pose.theta)])


def pedestrian_predict(p_now, p_prev, dt: float, horizon: float) -> np.ndarray:
    """Constant-velocity positions (K, 2) extrapolating the last displacement."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    p_now = np.asarray(p_now, dtype=float)
    step = p_now - np.asarray(p_prev, dtype=float)
    n = max(1, int(round(horizon / dt)))
    k = np.arange(1, n + 1)[:, None]
    return p_now[None, :] + step[None, :] * k


def _vehicle_prediction(ov, intention, goal: Pose2, eta: float, method: str,
                        cfg: PredictionConfig, v_bar: float, lot, believed_occupied,
                        planner_config) -> PredictedTrajectory:
    pose = ov.pose
    n_scored = max(1, int(round(cfg.t_pred / cfg.dt)))
    horizon = max(cfg.t_pred, cfg.t_plan)

    poses = None
    if method == PLANNER and goal is not None:
        from .planner import plan_park, plan_to_pose  # planner imports this module

        start = VehicleState(pose, ov.length, ov.width)
        blocked = frozenset(believed_occupied)
        if intention is not None and intention[0] == "spot":
            plan = plan_park(start, intention[1], lot, blocked - {intention[1]}, planner_config)
        else:
            plan = plan_to_pose(start, goal, (0.5, 0.3), lot, blocked, planner_config)
        if plan is not None:
            n_total = max(n_scored, int(round(horizon / cfg.dt)))
            arr = np.array([[s.pose.x, s.pose.y, s.pose.theta] for s in plan.states[1:]])
            if arr.shape[0] == 0:
                arr = np.array([[pose.x, pose.y, pose.theta]])
            if arr.shape[0] < n_total:  # parked: hold the final pose
                pad = np.repeat(arr[-1][None, :], n_total - arr.shape[0], axis=0)
                arr = np.vstack([arr, pad])
            poses = arr[:n_total]
    if poses is None and method == BEZIER and goal is not None:
        tangent = cfg.start_tangent
        if tangent == START_TANGENT_AUTO:
            tangent = (START_TANGENT_AS_PAPER
                       if intention is not None and intention[0] == "spot"
                       else START_TANGENT_FORWARD)
        curve = bezier_control_points(VehicleState(pose, ov.length, ov.width), v_bar,
                                      goal, cfg.zeta, tangent)
        poses = bezier_predict(curve, v_bar, cfg.dt, cfg.t_pred, horizon,
                               fallback_heading=pose.theta)
    if poses is None:  # cv method, cv fallback, or planner failure
        poses = cv_predict(pose, v_bar, cfg.dt, horizon)

    return PredictedTrajectory(agent_id=ov.index, agent_kind="vehicle",
                               intention=intention, poses=poses, probability=eta,
                               n_scored=min(n_scored, poses.shape[0]),
                               length=ov.length, width=ov.width)


def predict_all(obs, intents: dict, mu: float, method: str, lot,
                config: PredictionConfig = None, believed_occupied=frozenset(),
                planner_config=None) -> list:
    """One trajectory per qualifying intention per dynamic vehicle, plus pedestrians.

    intents maps vehicle id -> IntentionDistribution. Vehicles whose every
    intention falls below mu get a single constant-velocity fallback.
    """
    if not 0.0 <= mu <= 1.0:
        raise ValueError("mu must lie in [0, 1]")
    from .intention import mean_history_speed

    cfg = config or PredictionConfig()
    out = []
    for k in sorted(obs.dynamic_vehicles):
        ov = obs.dynamic_vehicles[k]
        v_bar = mean_history_speed(ov.history, cfg.dt)
        dist = intents.get(k)
        goals = []
        if dist is not None:
            for i in sorted(dist.spot_probs):
                eta = dist.spot_probs[i]
                if eta >= mu:
                    sp = lot.spots[i]
                    goals.append((("spot", i), Pose2(sp.cx, sp.cy, sp.heading), eta))
            for q in sorted(dist.exploration_probs):
                eta = dist.exploration_probs[q]
                if eta >= mu:
                    goals.append((("explore", q), dist.exploration_points[q], eta))
        if not goals:
            out.append(_vehicle_prediction(ov, None, None, 1.0, CONSTANT_VELOCITY,
                                           cfg, v_bar, lot, believed_occupied, planner_config))
            continue
        for intention, goal, eta in goals:
            out.append(_vehicle_prediction(ov, intention, goal, eta, method, cfg, v_bar,
                                           lot, believed_occupied, planner_config))

    horizon = max(cfg.t_pred, cfg.t_plan)
    n_scored = max(1, int(round(cfg.t_pred / cfg.dt)))
    for m in sorted(obs.pedestrians):
        op = obs.pedestrians[m]
        pts = pedestrian_predict(op.position, op.prev_position, cfg.dt, horizon)
        step = np.asarray(op.position) - np.asarray(op.prev_position)
        heading = math.atan2(step[1], step[0]) if np.hypot(*step) > 1e-12 else 0.0
        poses = np.column_stack([pts, np.full(pts.shape[0], heading)])
        out.append(PredictedTrajectory(agent_id=m, agent_kind="pedestrian", intention=None,
                                       poses=poses, probability=1.0,
                                       n_scored=min(n_scored, poses.shape[0]),
                                       radius=op.radius))
    return out
