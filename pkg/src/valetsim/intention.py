"""Where will each observed car park? Feature extraction, BEV synthesis, scoring.

The scorer is pluggable: a deterministic heuristic ships as the default, and
an external-process protocol lets a learned model drop in without touching
the pipeline.
"""

from __future__ import annotations

import base64
import json
import logging
import math
import select
import shlex
import subprocess
from dataclasses import dataclass, field

import numpy as np

from .geometry import OrientedRect, ParkingLot, Pose2, wrap_angle

log = logging.getLogger(__name__)

BEV_WINDOW = 40.0  # [m] square side centered on the target vehicle
BEV_RESOLUTION = 0.1  # [m/cell] -> 400x400 cells at the default window
DEFAULT_VEHICLE_LENGTH = 4.97  # [m] phantom size for believed-occupied spots
DEFAULT_VEHICLE_WIDTH = 1.86  # [m]


def mean_history_speed(history: np.ndarray, dt: float) -> float:
    """Mean ground speed over a pose history, ||p_t - p_{t-dt}|| / dt."""
    h = np.asarray(history, dtype=float)
    if h.shape[0] < 2:
        return 0.0
    steps = np.diff(h[:, :2], axis=0)
    return float(np.hypot(steps[:, 0], steps[:, 1]).mean() / dt)


@dataclass(frozen=True)
class IntentionFeatures:
    """Inputs the intention model sees for one (vehicle, candidate spot) pair."""

    d: float  # [m] vehicle-to-spot distance
    a: float  # cosine of heading vs. vehicle-to-spot direction, in [-1, 1]
    v_bar: float  # [m/s] mean historical speed
    d_ent: float  # [m] vehicle-to-entrance distance
    t_lot: float  # [s] time since the vehicle was first observed
    exploration_points: tuple = ()


@dataclass(frozen=True)
class IntentionDistribution:
    """Normalized probabilities over candidate spots and exploration points."""

    spot_probs: dict
    exploration_probs: dict
    exploration_points: tuple = ()

    def __post_init__(self):
        vals = list(self.spot_probs.values()) + list(self.exploration_probs.values())
        if not vals:
            raise ValueError("a distribution needs at least one candidate")
        if any(p < -1e-12 or p > 1.0 + 1e-12 for p in vals):
            raise ValueError("intention probabilities must lie in [0, 1]")
        if abs(sum(vals) - 1.0) > 1e-9:
            raise ValueError(f"intention probabilities sum to {sum(vals)}, expected 1")


@dataclass(frozen=True)
class BevRaster:
    """Semantic raster around a vehicle, aligned to its heading.

    grid[row, col, ch] with local x (along heading) on columns and local y on
    rows, both spanning [-window/2, window/2]. Channels: 0 drivable area and
    spot markings, 1 obstacles (vehicles, phantoms, faded history), 2 the
    marked candidate spot.
    """

    grid: np.ndarray
    center: Pose2
    window: float = BEV_WINDOW
    resolution: float = BEV_RESOLUTION


def in_window(point, center: Pose2, window: float = BEV_WINDOW) -> bool:
    """Is a world point inside the heading-aligned square window?"""
    c, s = math.cos(center.theta), math.sin(center.theta)
    dx = point[0] - center.x
    dy = point[1] - center.y
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    half = 0.5 * window
    return abs(lx) <= half and abs(ly) <= half


def _draw_rect(grid: np.ndarray, ch: int, value: float, center: Pose2, resolution: float,
               rect: OrientedRect) -> None:
    """Max-composite a world rectangle into the raster."""
    h, w = grid.shape[:2]
    c, s = math.cos(center.theta), math.sin(center.theta)
    corners = rect.corners() - np.array([center.x, center.y])
    local = corners @ np.array([[c, -s], [s, c]])  # rotate into the window frame
    half_w = 0.5 * w * resolution
    half_h = 0.5 * h * resolution
    cmin = max(int((local[:, 0].min() + half_w) / resolution), 0)
    cmax = min(int((local[:, 0].max() + half_w) / resolution) + 1, w)
    rmin = max(int((local[:, 1].min() + half_h) / resolution), 0)
    rmax = min(int((local[:, 1].max() + half_h) / resolution) + 1, h)
    if cmin >= cmax or rmin >= rmax:
        return
    xs = (np.arange(cmin, cmax) + 0.5) * resolution - half_w
    ys = (np.arange(rmin, rmax) + 0.5) * resolution - half_h
    gx, gy = np.meshgrid(xs, ys)
    # cell centers in the rectangle's own frame
    ca, sa = math.cos(rect.heading - center.theta), math.sin(rect.heading - center.theta)
    ox = gx - (c * (rect.cx - center.x) + s * (rect.cy - center.y))
    oy = gy - (-s * (rect.cx - center.x) + c * (rect.cy - center.y))
    lx = ca * ox + sa * oy
    ly = -sa * ox + ca * oy
    mask = (np.abs(lx) <= 0.5 * rect.length) & (np.abs(ly) <= 0.5 * rect.width)
    sub = grid[rmin:rmax, cmin:cmax, ch]
    np.maximum(sub, np.where(mask, value, 0.0), out=sub)


def reconstruct_bev(lot: ParkingLot, beliefs, obs, target_vehicle: int,
                    marked_spot: int = None, beta: float = 0.5,
                    window: float = BEV_WINDOW, resolution: float = BEV_RESOLUTION,
                    t_hist: float = 4.0, dt: float = 0.1) -> BevRaster:
    """Synthesize the semantic BEV an intention model expects for one vehicle.

    Observed vehicles (ego included) are drawn at their current and historical
    poses with intensity fading by age; unobserved spots whose belief clears
    beta get a default-size phantom vehicle. Channel 2 carries only the marked
    candidate spot.
    """
    if target_vehicle not in obs.dynamic_vehicles:
        raise KeyError(f"vehicle {target_vehicle} is not an observed dynamic vehicle")
    center = obs.dynamic_vehicles[target_vehicle].pose
    n = int(round(window / resolution))
    grid = np.zeros((n, n, 3), dtype=np.float32)

    for road in lot.roads:
        _draw_rect(grid, 0, 1.0, center, resolution, road.rect)
    half = 0.5 * window
    near = [sp for sp in lot.spots
            if math.hypot(sp.cx - center.x, sp.cy - center.y) <= half * math.sqrt(2) + sp.circumradius]
    for sp in near:
        _draw_rect(grid, 0, 0.5, center, resolution, sp)

    belief_vec = beliefs.beliefs if hasattr(beliefs, "beliefs") else np.asarray(beliefs)
    observed = obs.vacant_spots | obs.occupied_spots
    for i, sp in enumerate(lot.spots):
        if i in observed or belief_vec[i] < beta:
            continue
        if in_window((sp.cx, sp.cy), center, window):
            phantom = OrientedRect(sp.cx, sp.cy, sp.heading,
                                   DEFAULT_VEHICLE_LENGTH, DEFAULT_VEHICLE_WIDTH)
            _draw_rect(grid, 1, 1.0, center, resolution, phantom)

    def draw_history(history, length, width):
        m = history.shape[0]
        for j in range(m):  # oldest first so newer, brighter poses win the max
            age = (m - 1 - j) * dt
            value = max(0.0, 1.0 - age / t_hist) if t_hist > 0 else 1.0
            if value <= 0.0:
                continue
            x, y, th = history[j]
            _draw_rect(grid, 1, value, center, resolution,
                       OrientedRect(float(x), float(y), float(th), length, width))

    for group in (obs.static_vehicles, obs.dynamic_vehicles):
        for ov in group.values():
            draw_history(ov.history, ov.length, ov.width)
    ego_hist = getattr(obs, "ego_history", None)
    if ego_hist is not None and len(ego_hist):
        draw_history(np.asarray(ego_hist), DEFAULT_VEHICLE_LENGTH, DEFAULT_VEHICLE_WIDTH)

    if marked_spot is not None:
        sp = lot.spots[marked_spot]
        _draw_rect(grid, 2, 1.0, center, resolution, sp)
    return BevRaster(grid=grid, center=center, window=window, resolution=resolution)


def candidate_spots_for(lot: ParkingLot, vehicle: int, beliefs, obs, beta: float = 0.5,
                        window: float = BEV_WINDOW) -> list:
    """Spots inside the vehicle's BEV window with belief strictly below beta."""
    ov = obs.dynamic_vehicles[vehicle]
    belief_vec = beliefs.beliefs if hasattr(beliefs, "beliefs") else np.asarray(beliefs)
    center = ov.pose
    out = []
    for i, sp in enumerate(lot.spots):
        if belief_vec[i] < beta and in_window((sp.cx, sp.cy), center, window):
            out.append(i)
    return out


def compute_features(vehicle: int, spot: int, obs, lot: ParkingLot, clock: float,
                     dt: float = 0.1, window: float = BEV_WINDOW) -> IntentionFeatures:
    """Feature vector for one candidate spot of one observed vehicle."""
    ov = obs.dynamic_vehicles[vehicle]
    pose = ov.pose
    sp = lot.spots[spot]
    dx = sp.cx - pose.x
    dy = sp.cy - pose.y
    d = math.hypot(dx, dy)
    if d < 1e-12:
        a = 1.0  # degenerate direction: spot center under the vehicle
    else:
        a = (math.cos(pose.theta) * dx + math.sin(pose.theta) * dy) / d
    v_bar = mean_history_speed(ov.history, dt)
    d_ent = math.hypot(lot.entrance[0] - pose.x, lot.entrance[1] - pose.y)
    t_lot = max(0.0, clock - ov.first_seen)
    return IntentionFeatures(d=d, a=float(np.clip(a, -1.0, 1.0)), v_bar=v_bar,
                             d_ent=d_ent, t_lot=t_lot,
                             exploration_points=exploration_candidates_for(ov, lot, window))


def exploration_candidates_for(vehicle, lot: ParkingLot, window: float = BEV_WINDOW) -> tuple:
    """Posed points where road center lines cross the vehicle's window boundary.

    Each crossing is emitted in both travel directions of its road. Roads that
    never enter the window contribute nothing.
    """
    pose = vehicle.pose if hasattr(vehicle, "pose") else vehicle
    half = 0.5 * window
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    out = []
    for road in lot.roads:
        p0 = np.array([c * (road.start[0] - pose.x) + s * (road.start[1] - pose.y),
                       -s * (road.start[0] - pose.x) + c * (road.start[1] - pose.y)])
        p1 = np.array([c * (road.end[0] - pose.x) + s * (road.end[1] - pose.y),
                       -s * (road.end[0] - pose.x) + c * (road.end[1] - pose.y)])
        d = p1 - p0
        # Liang-Barsky clip of the center line against the window square.
        t0, t1 = 0.0, 1.0
        ok = True
        for axis in (0, 1):
            if abs(d[axis]) < 1e-12:
                if abs(p0[axis]) > half:
                    ok = False
                    break
                continue
            ta = (-half - p0[axis]) / d[axis]
            tb = (half - p0[axis]) / d[axis]
            ta, tb = min(ta, tb), max(ta, tb)
            t0, t1 = max(t0, ta), min(t1, tb)
        if not ok or t0 > t1:
            continue
        crossings = []
        if t0 > 0.0:  # segment enters through the boundary
            crossings.append(t0)
        if t1 < 1.0:  # segment leaves through the boundary
            crossings.append(t1)
        for t in crossings:
            q = p0 + t * d
            wx = pose.x + c * q[0] - s * q[1]
            wy = pose.y + s * q[0] + c * q[1]
            for th in (road.heading, road.heading + math.pi):
                out.append(Pose2(wx, wy, th))
    return tuple(out)


# ---------------------------------------------------------------------------
# Scorers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HeuristicScorer:
    """Monotone hand-tuned stand-in for a learned intention model.

    Spot logit rises as the candidate gets nearer (linear term plus a sharp
    proximity spike for spots the vehicle is right next to) and as the heading
    aligns with it; exploration logit follows the forward cosine.
    Probabilities come from a softmax over all candidates of one vehicle.
    """

    w_d: float = 2.0
    w_a: float = 1.5
    w_v: float = 0.5
    w_e: float = 1.0
    w_n: float = 3.0  # proximity-spike weight; parking happens next to the spot
    d0: float = 2.5  # [m] proximity-spike range
    d_max: float = 20.0  # [m]
    v0: float = 2.0  # [m/s]
    v_max: float = 5.0  # [m/s]
    wants_bev: bool = False

    def spot_logits(self, d: np.ndarray, a: np.ndarray, v_bar: float) -> np.ndarray:
        d = np.asarray(d)
        return (self.w_d * (1.0 - d / self.d_max)
                + self.w_n * np.exp(-d / self.d0)
                + self.w_a * np.asarray(a)
                + self.w_v * math.exp(-v_bar / self.v0))

    def exploration_logits(self, forward_cos: np.ndarray, v_bar: float) -> np.ndarray:
        return self.w_e * np.asarray(forward_cos) + self.w_v * (v_bar / self.v_max)

    def score(self, request: dict) -> np.ndarray:
        spots = request["spots"]
        explo = request["exploration"]
        v_bar = request["v_bar"]
        logits = []
        if spots:
            logits.append(self.spot_logits(np.array([f["d"] for f in spots]),
                                           np.array([f["a"] for f in spots]), v_bar))
        if explo:
            logits.append(self.exploration_logits(
                np.array([e["forward_cos"] for e in explo]), v_bar))
        z = np.concatenate(logits)
        z = np.exp(z - z.max())
        return z / z.sum()


class ExternalScorer:
    """Line-oriented JSON bridge to an out-of-process intention model.

    One request per vehicle on stdin, one probability response on stdout.
    BEV rasters travel as base64 float32 bytes. A response slower than
    `timeout` falls back to the heuristic scorer for that request.
    """

    wants_bev = True

    def __init__(self, command: str, timeout: float = 1.0, fallback=None):
        self.command = command
        self.timeout = timeout
        self.fallback = fallback or HeuristicScorer()
        self._proc = None

    def _ensure_process(self):
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                shlex.split(self.command), stdin=subprocess.PIPE,
                stdout=subprocess.PIPE, text=True, bufsize=1)

    def close(self):
        if self._proc is not None and self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=1.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        self._proc = None

    def _read_line(self) -> str:
        ready, _, _ = select.select([self._proc.stdout], [], [], self.timeout)
        if not ready:
            raise TimeoutError(f"scorer did not answer within {self.timeout}s")
        return self._proc.stdout.readline()

    def score(self, request: dict) -> np.ndarray:
        payload = dict(request)
        rasters = payload.pop("rasters", None)
        if rasters is not None:
            payload["rasters"] = {name: base64.b64encode(
                np.ascontiguousarray(r.grid, dtype=np.float32).tobytes()).decode("ascii")
                for name, r in rasters.items()}
            any_r = next(iter(rasters.values()))
            payload["raster_shape"] = list(any_r.grid.shape)
        try:
            self._ensure_process()
            self._proc.stdin.write(json.dumps(payload) + "\n")
            self._proc.stdin.flush()
            line = self._read_line()
            reply = json.loads(line)
            probs = np.array([reply["spot_probs"][str(f["index"])] for f in request["spots"]]
                             + [reply["exploration_probs"][str(e["index"])]
                                for e in request["exploration"]])
            total = probs.sum()
            if probs.min() < -1e-9 or total <= 0:
                raise ValueError("scorer returned an invalid probability vector")
            return probs / total
        except Exception as exc:  # noqa: BLE001 - any protocol failure falls back
            log.warning("external scorer failed (%s); using heuristic fallback", exc)
            self.close()
            return self.fallback.score(request)


def score_intentions(scorer, bevs, features: dict) -> IntentionDistribution:
    """Normalize a scorer's output over one vehicle's candidates.

    features: {"spots": [(index, IntentionFeatures)], "exploration":
    [(index, Pose2, forward_cos)], "v_bar": float, ...}. bevs may be None for
    scorers that do not consume rasters.
    """
    spots = features.get("spots", [])
    explo = features.get("exploration", [])
    if not spots and not explo:
        raise ValueError("no candidates to score; caller must skip this vehicle")
    request = {
        "vehicle": features.get("vehicle", -1),
        "time": features.get("time", 0.0),
        "v_bar": features.get("v_bar", 0.0),
        "d_ent": features.get("d_ent", 0.0),
        "t_lot": features.get("t_lot", 0.0),
        "spots": [{"index": i, "d": f.d, "a": f.a} for i, f in spots],
        "exploration": [{"index": q, "pose": [p.x, p.y, p.theta], "forward_cos": fc}
                        for q, p, fc in explo],
    }
    if bevs is not None:
        request["rasters"] = bevs
    probs = np.asarray(scorer.score(request), dtype=float)
    if probs.shape[0] != len(spots) + len(explo):
        raise ValueError("scorer returned the wrong number of probabilities")
    probs = probs / probs.sum()
    spot_probs = {i: float(p) for (i, _), p in zip(spots, probs[:len(spots)])}
    explo_probs = {q: float(p) for (q, _, _), p in zip(explo, probs[len(spots):])}
    points = tuple(p for _, p, _ in explo)
    # re-key exploration points to 0..n-1 order used in the distribution
    explo_probs = {idx: explo_probs[q] for idx, (q, _, _) in enumerate(explo)}
    return IntentionDistribution(spot_probs=spot_probs, exploration_probs=explo_probs,
                                 exploration_points=points)


def infer_intentions(lot: ParkingLot, beliefs, obs, scorer=None, beta: float = 0.5,
                     window: float = BEV_WINDOW, dt: float = 0.1,
                     t_hist: float = 4.0) -> dict:
    """Score every observed dynamic vehicle; vehicles with no candidates are skipped."""
    scorer = scorer or HeuristicScorer()
    out = {}
    for k in sorted(obs.dynamic_vehicles):
        ov = obs.dynamic_vehicles[k]
        spot_ids = candidate_spots_for(lot, k, beliefs, obs, beta, window)
        explo_pts = exploration_candidates_for(ov, lot, window)
        if not spot_ids and not explo_pts:
            continue
        pose = ov.pose
        hv = pose.heading_vector
        spots = []
        for i in spot_ids:
            f = compute_features(k, i, obs, lot, obs.time, dt, window)
            spots.append((i, f))
        explo = []
        for q, p in enumerate(explo_pts):
            dx, dy = p.x - pose.x, p.y - pose.y
            n = math.hypot(dx, dy)
            fc = 1.0 if n < 1e-12 else (hv[0] * dx + hv[1] * dy) / n
            explo.append((q, p, float(fc)))
        v_bar = mean_history_speed(ov.history, dt)
        features = {"vehicle": k, "time": obs.time, "v_bar": v_bar,
                    "d_ent": spots[0][1].d_ent if spots else
                    math.hypot(lot.entrance[0] - pose.x, lot.entrance[1] - pose.y),
                    "t_lot": max(0.0, obs.time - ov.first_seen),
                    "spots": spots, "exploration": explo}
        bevs = None
        if getattr(scorer, "wants_bev", False):
            bevs = {"unmarked": reconstruct_bev(lot, beliefs, obs, k, None, beta,
                                                window, dt=dt, t_hist=t_hist)}
            for i in spot_ids:
                bevs[f"spot_{i}"] = reconstruct_bev(lot, beliefs, obs, k, i, beta,
                                                    window, dt=dt, t_hist=t_hist)
        out[k] = score_intentions(scorer, bevs, features)
    return out
