"""2-D primitives for parking worlds: poses, oriented rectangles, rays, lots.

All lengths are meters, all angles radians. Collision and containment use
closed-set semantics (boundary contact counts), which keeps safety checks
conservative and test outcomes deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Slop for closed-set boundary comparisons; absorbs float noise from the
# cos/sin round trips without changing any geometric decision at test scale.
_EDGE_EPS = 1e-9

DEFAULT_SPOT_LENGTH = 5.5  # [m] paper never states spot sizes; lot files may override
DEFAULT_SPOT_WIDTH = 2.7  # [m]
DEFAULT_ROAD_WIDTH = 6.5  # [m]

HIT_LOT = "lot-boundary"
HIT_SENSING = "sensing-boundary"
HIT_VEHICLE = "vehicle"

# counter-clockwise corner sign patterns, scaled by half the side lengths
_CORNER_X = 0.5 * np.array([1.0, -1.0, -1.0, 1.0])
_CORNER_Y = 0.5 * np.array([1.0, 1.0, -1.0, -1.0])


def wrap_angle(theta: float) -> float:
    """Normalize an angle to [-pi, pi]."""
    return (theta + math.pi) % (2.0 * math.pi) - math.pi


def wrap_angle_array(theta: np.ndarray) -> np.ndarray:
    return (np.asarray(theta) + np.pi) % (2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class Pose2:
    """Planar pose (x, y, heading); heading stored normalized to [-pi, pi]."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def heading_vector(self) -> np.ndarray:
        return np.array([math.cos(self.theta), math.sin(self.theta)])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


@dataclass(frozen=True)
class OrientedRect:
    """Rectangle with center (cx, cy), heading, and side lengths.

    `length` runs along the heading axis, `width` across it.
    """

    cx: float
    cy: float
    heading: float
    length: float
    width: float

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValueError(f"rectangle sides must be positive, got {self.length}x{self.width}")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    @property
    def circumradius(self) -> float:
        return 0.5 * math.hypot(self.length, self.width)

    def corners(self) -> np.ndarray:
        """Corner coordinates, shape (4, 2), counter-clockwise."""
        return rect_corners(np.array([[self.cx, self.cy, self.heading]]),
                            np.array([[self.length, self.width]]))[0]

    def contains_point(self, p, eps: float = _EDGE_EPS) -> bool:
        c, s = math.cos(self.heading), math.sin(self.heading)
        dx = p[0] - self.cx
        dy = p[1] - self.cy
        lx = c * dx + s * dy
        ly = -s * dx + c * dy
        return abs(lx) <= 0.5 * self.length + eps and abs(ly) <= 0.5 * self.width + eps


def rect_from_pose(pose: Pose2, length: float, width: float) -> OrientedRect:
    return OrientedRect(pose.x, pose.y, pose.theta, length, width)


def rect_corners(poses: np.ndarray, dims: np.ndarray) -> np.ndarray:
    """Corners for a batch of rectangles.

    poses: (N, 3) rows (cx, cy, heading); dims: (N, 2) rows (length, width)
    or (2,) broadcast. Returns (N, 4, 2), counter-clockwise from front-left.
    """
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    n = poses.shape[0]
    dims = np.asarray(dims, dtype=float)
    if dims.ndim == 1:
        dims = np.broadcast_to(dims, (n, 2))
    lx = dims[:, 0, None] * _CORNER_X  # (N,4) local corner offsets
    ly = dims[:, 1, None] * _CORNER_Y
    c = np.cos(poses[:, 2])[:, None]
    s = np.sin(poses[:, 2])[:, None]
    out = np.empty((n, 4, 2))
    out[..., 0] = poses[:, 0, None] + c * lx - s * ly
    out[..., 1] = poses[:, 1, None] + s * lx + c * ly
    return out


def obb_contains(outer: OrientedRect, inner: OrientedRect, eps: float = _EDGE_EPS) -> bool:
    """True iff every corner of `inner` lies in the closed set `outer`."""
    corners = inner.corners()
    c, s = math.cos(outer.heading), math.sin(outer.heading)
    d = corners - outer.center
    lx = c * d[:, 0] + s * d[:, 1]
    ly = -s * d[:, 0] + c * d[:, 1]
    return bool(np.all(np.abs(lx) <= 0.5 * outer.length + eps)
                and np.all(np.abs(ly) <= 0.5 * outer.width + eps))


def _project_extent(corners: np.ndarray, axis: np.ndarray):
    d = corners @ axis
    return d.min(), d.max()


def obb_intersects(a: OrientedRect, b: OrientedRect, eps: float = _EDGE_EPS) -> bool:
    """Separating-axis test on closed rectangles; edge contact intersects."""
    # Cheap circumscribed-circle reject first.
    dx = b.cx - a.cx
    dy = b.cy - a.cy
    if math.hypot(dx, dy) > a.circumradius + b.circumradius + eps:
        return False
    ca = a.corners()
    cb = b.corners()
    for heading in (a.heading, b.heading):
        c, s = math.cos(heading), math.sin(heading)
        for axis in (np.array([c, s]), np.array([-s, c])):
            amin, amax = _project_extent(ca, axis)
            bmin, bmax = _project_extent(cb, axis)
            if amax < bmin - eps or bmax < amin - eps:
                return False
    return True


def obb_intersects_many(rect: OrientedRect, poses: np.ndarray, dims: np.ndarray,
                        eps: float = _EDGE_EPS) -> np.ndarray:
    """Vectorized SAT of one rectangle against N rectangles -> bool (N,)."""
    poses = np.atleast_2d(np.asarray(poses, dtype=float))
    n = poses.shape[0]
    if n == 0:
        return np.zeros(0, dtype=bool)
    dims = np.asarray(dims, dtype=float)
    if dims.ndim == 1:
        dims = np.broadcast_to(dims, (n, 2))
    others = rect_corners(poses, dims)  # (N,4,2)
    ca = rect.corners()  # (4,2)

    out = np.ones(n, dtype=bool)
    # Axes of the single rect: project everything once.
    c, s = math.cos(rect.heading), math.sin(rect.heading)
    for axis in (np.array([c, s]), np.array([-s, c])):
        amin, amax = _project_extent(ca, axis)
        proj = others @ axis  # (N,4)
        out &= ~((proj.min(axis=1) > amax + eps) | (proj.max(axis=1) < amin - eps))
    # Axes of each other rect (two per rect).
    cs = np.cos(poses[:, 2])
    sn = np.sin(poses[:, 2])
    for ax, ay in ((cs, sn), (-sn, cs)):
        axes = np.stack([ax, ay], axis=1)  # (N,2)
        pa = ca @ axes.T  # (4,N)
        po = np.einsum("nkj,nj->nk", others, axes)  # (N,4)
        out &= ~((po.min(axis=1) > pa.max(axis=0) + eps) | (po.max(axis=1) < pa.min(axis=0) - eps))
    return out


def obb_intersects_pairwise(poses_a: np.ndarray, dims_a, poses_b: np.ndarray, dims_b,
                            eps: float = _EDGE_EPS) -> np.ndarray:
    """Elementwise SAT between two aligned batches of rectangles -> bool (N,)."""
    poses_a = np.atleast_2d(np.asarray(poses_a, dtype=float))
    poses_b = np.atleast_2d(np.asarray(poses_b, dtype=float))
    n = poses_a.shape[0]
    if n == 0:
        return np.zeros(0, dtype=bool)
    ca = rect_corners(poses_a, dims_a)  # (N,4,2)
    cb = rect_corners(poses_b, dims_b)
    out = np.ones(n, dtype=bool)
    for poses in (poses_a, poses_b):
        cs = np.cos(poses[:, 2])
        sn = np.sin(poses[:, 2])
        for ax, ay in ((cs, sn), (-sn, cs)):
            axes = np.stack([ax, ay], axis=1)  # (N,2)
            pa = np.einsum("nkj,nj->nk", ca, axes)
            pb = np.einsum("nkj,nj->nk", cb, axes)
            out &= ~((pa.min(axis=1) > pb.max(axis=1) + eps)
                     | (pb.min(axis=1) > pa.max(axis=1) + eps))
    return out


def points_in_rect(points: np.ndarray, rect: OrientedRect, eps: float = _EDGE_EPS) -> np.ndarray:
    """Closed-set membership of (N,2) points in a rectangle -> bool (N,)."""
    points = np.atleast_2d(points)
    c, s = math.cos(rect.heading), math.sin(rect.heading)
    d = points - rect.center
    lx = c * d[:, 0] + s * d[:, 1]
    ly = -s * d[:, 0] + c * d[:, 1]
    return (np.abs(lx) <= 0.5 * rect.length + eps) & (np.abs(ly) <= 0.5 * rect.width + eps)


def disc_rect_distance(center, radius: float, rect: OrientedRect) -> float:
    """Signed clearance between a disc and a rectangle (<= 0 means contact)."""
    c, s = math.cos(rect.heading), math.sin(rect.heading)
    dx = center[0] - rect.cx
    dy = center[1] - rect.cy
    lx = abs(c * dx + s * dy)
    ly = abs(-s * dx + c * dy)
    ex = max(lx - 0.5 * rect.length, 0.0)
    ey = max(ly - 0.5 * rect.width, 0.0)
    return math.hypot(ex, ey) - radius


def disc_intersects_rect(center, radius: float, rect: OrientedRect,
                         eps: float = _EDGE_EPS) -> bool:
    return disc_rect_distance(center, radius, rect) <= eps


@dataclass(frozen=True)
class Road:
    """Straight road given by its center-line endpoints and width."""

    start: tuple
    end: tuple
    width: float

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("road width must be positive")
        if math.dist(self.start, self.end) == 0.0:
            raise ValueError("road center line is degenerate (start == end)")

    @property
    def heading(self) -> float:
        return math.atan2(self.end[1] - self.start[1], self.end[0] - self.start[0])

    @property
    def rect(self) -> OrientedRect:
        return road_rectangle(self.start, self.end, self.width)


def road_rectangle(start, end, width: float) -> OrientedRect:
    """Road footprint: Minkowski sum of the center line with a width-sized square.

    The square is aligned to the road heading, so the rectangle extends
    width/2 beyond both endpoints along the road axis.
    """
    if width <= 0:
        raise ValueError("road width must be positive")
    sx, sy = float(start[0]), float(start[1])
    ex, ey = float(end[0]), float(end[1])
    seg = math.hypot(ex - sx, ey - sy)
    if seg == 0.0:
        raise ValueError("road center line is degenerate (start == end)")
    heading = math.atan2(ey - sy, ex - sx)
    return OrientedRect(0.5 * (sx + ex), 0.5 * (sy + ey), heading, seg + width, width)


@dataclass(frozen=True)
class Disc:
    """Disc region; used as the default base sensing shape."""

    center: tuple
    radius: float

    def at_pose(self, pose: Pose2) -> "Disc":
        c, s = math.cos(pose.theta), math.sin(pose.theta)
        cx = pose.x + c * self.center[0] - s * self.center[1]
        cy = pose.y + s * self.center[0] + c * self.center[1]
        return Disc((cx, cy), self.radius)

    def contains_point(self, p) -> bool:
        return math.hypot(p[0] - self.center[0], p[1] - self.center[1]) <= self.radius + _EDGE_EPS


@dataclass(frozen=True)
class Ray:
    """A cast ray: where it started, where it stopped, and on what."""

    origin: tuple
    direction: tuple
    hit_point: tuple
    hit_kind: str
    hit_index: int = -1  # vehicle index when hit_kind == HIT_VEHICLE
    t: float = 0.0  # [m] distance from origin to hit_point


@dataclass(frozen=True, eq=False)
class ParkingLot:
    """Static lot description: boundary, entrance, spots, roads.

    boundary: (xmin, ymin, xmax, ymax) axis-aligned.
    """

    boundary: tuple
    entrance: tuple
    spots: tuple
    roads: tuple
    # cached arrays, filled in __post_init__
    spot_poses: np.ndarray = field(default=None, repr=False, compare=False)
    spot_dims: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(self.spots) < 1:
            raise ValueError("a parking lot needs at least one spot")
        if len(self.roads) < 1:
            raise ValueError("a parking lot needs at least one road")
        xmin, ymin, xmax, ymax = self.boundary
        if not (xmax > xmin and ymax > ymin):
            raise ValueError("degenerate lot boundary")
        for rect in list(self.spots) + [r.rect for r in self.roads]:
            if not self._aabb_holds(rect):
                raise ValueError("spot or road rectangle exceeds the lot boundary")
        object.__setattr__(self, "spot_poses", np.array(
            [[sp.cx, sp.cy, sp.heading] for sp in self.spots]))
        object.__setattr__(self, "spot_dims", np.array(
            [[sp.length, sp.width] for sp in self.spots]))

    def _aabb_holds(self, rect: OrientedRect) -> bool:
        xmin, ymin, xmax, ymax = self.boundary
        corners = rect.corners()
        tol = 1e-6
        return bool(np.all((corners[:, 0] >= xmin - tol) & (corners[:, 0] <= xmax + tol)
                           & (corners[:, 1] >= ymin - tol) & (corners[:, 1] <= ymax + tol)))

    @property
    def n_spots(self) -> int:
        return len(self.spots)

    def boundary_corners(self) -> np.ndarray:
        xmin, ymin, xmax, ymax = self.boundary
        return np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]])

    def contains_point(self, p) -> bool:
        xmin, ymin, xmax, ymax = self.boundary
        return xmin - _EDGE_EPS <= p[0] <= xmax + _EDGE_EPS and ymin - _EDGE_EPS <= p[1] <= ymax + _EDGE_EPS

    def contains_rect(self, rect: OrientedRect, margin: float = 0.0) -> bool:
        xmin, ymin, xmax, ymax = self.boundary
        corners = rect.corners()
        return bool(np.all((corners[:, 0] >= xmin + margin - _EDGE_EPS)
                           & (corners[:, 0] <= xmax - margin + _EDGE_EPS)
                           & (corners[:, 1] >= ymin + margin - _EDGE_EPS)
                           & (corners[:, 1] <= ymax - margin + _EDGE_EPS)))

    def spot_containing(self, rect: OrientedRect):
        """Index of a spot fully containing `rect`, or None."""
        centers = self.spot_poses[:, :2]
        d = np.hypot(centers[:, 0] - rect.cx, centers[:, 1] - rect.cy)
        for i in np.flatnonzero(d <= rect.circumradius + 4.0):
            if obb_contains(self.spots[int(i)], rect):
                return int(i)
        return None


# ---------------------------------------------------------------------------
# Ray casting
# ---------------------------------------------------------------------------

def _edges_of_corners(corners: np.ndarray) -> np.ndarray:
    """(4,2) corners -> (4,2,2) edge segments."""
    nxt = np.roll(corners, -1, axis=0)
    return np.stack([corners, nxt], axis=1)


def _ray_segment_hits(origin: np.ndarray, dirs: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Ray parameter of the hit of each ray on each segment, inf when missed.

    origin: (2,), dirs: (R, 2) unit vectors, segs: (E, 2, 2). Returns (R, E).
    """
    p = segs[:, 0]  # (E,2)
    e = segs[:, 1] - segs[:, 0]  # (E,2)
    w = p - origin  # (E,2)
    denom = dirs[:, 0, None] * e[None, :, 1] - dirs[:, 1, None] * e[None, :, 0]  # (R,E)
    num_t = w[None, :, 0] * e[None, :, 1] - w[None, :, 1] * e[None, :, 0]
    num_s = w[None, :, 0] * dirs[:, 1, None] - w[None, :, 1] * dirs[:, 0, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num_t / denom
        s = num_s / denom
    ok = (np.abs(denom) > 1e-12) & (t >= -1e-12) & (s >= -1e-9) & (s <= 1.0 + 1e-9)
    return np.where(ok, t, np.inf)


def cast_ray_batch(origin, angles: np.ndarray, lot: ParkingLot, vehicle_rects,
                   sensing) -> dict:
    """Cast rays from a shared origin and return hit arrays.

    vehicle_rects: sequence of OrientedRect (non-ego vehicles).
    sensing: Disc or OrientedRect in world coordinates.
    Returns dict with t (R,), kind (R,) int codes 0=vehicle/1=lot/2=sensing,
    index (R,) vehicle index or -1, points (R,2), dirs (R,2).
    """
    origin = np.asarray(origin, dtype=float)
    angles = np.asarray(angles, dtype=float)
    dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    n = len(angles)

    best_t = np.full(n, np.inf)
    kind = np.full(n, 1, dtype=np.int8)
    index = np.full(n, -1, dtype=np.int32)

    # Vehicles first so that exact-tie hits resolve onto the occluder.
    if vehicle_rects:
        max_r = math.hypot(*(np.array(lot.boundary[2:]) - np.array(lot.boundary[:2])))
        if isinstance(sensing, Disc):
            max_r = min(max_r, sensing.radius + 1e-6)
        keep = [v for v in vehicle_rects
                if math.hypot(v.cx - origin[0], v.cy - origin[1]) <= max_r + v.circumradius]
        if keep:
            segs = np.concatenate([_edges_of_corners(v.corners()) for v in keep], axis=0)
            t = _ray_segment_hits(origin, dirs, segs).reshape(n, len(keep), 4).min(axis=2)
            j = np.argmin(t, axis=1)
            tv = t[np.arange(n), j]
            upd = tv < best_t
            best_t[upd] = tv[upd]
            kind[upd] = 0
            veh_ids = np.array([vehicle_rects.index(v) for v in keep], dtype=np.int32)
            index[upd] = veh_ids[j[upd]]

    t_lot = _ray_segment_hits(origin, dirs, _edges_of_corners(lot.boundary_corners())).min(axis=1)
    upd = t_lot < best_t
    best_t[upd] = t_lot[upd]
    kind[upd] = 1
    index[upd] = -1

    if isinstance(sensing, Disc):
        oc = origin - np.asarray(sensing.center)
        b = 2.0 * (dirs @ oc)
        c0 = oc @ oc - sensing.radius**2
        disc = np.maximum(b * b - 4.0 * c0, 0.0)
        t_sense = 0.5 * (-b + np.sqrt(disc))
    else:
        t_sense = _ray_segment_hits(origin, dirs, _edges_of_corners(sensing.corners())).min(axis=1)
    upd = t_sense < best_t
    best_t[upd] = t_sense[upd]
    kind[upd] = 2
    index[upd] = -1

    points = origin[None, :] + best_t[:, None] * dirs
    return {"t": best_t, "kind": kind, "index": index, "points": points, "dirs": dirs}


_KIND_NAMES = {0: HIT_VEHICLE, 1: HIT_LOT, 2: HIT_SENSING}


def cast_ray(origin, direction, lot: ParkingLot, vehicle_rects, sensing) -> Ray:
    """Cast one ray; returns the nearest hit among lot, vehicles and sensing rim."""
    direction = np.asarray(direction, dtype=float)
    angle = math.atan2(direction[1], direction[0])
    res = cast_ray_batch(origin, np.array([angle]), lot, list(vehicle_rects), sensing)
    return Ray(origin=(float(origin[0]), float(origin[1])),
               direction=(float(direction[0]), float(direction[1])),
               hit_point=(float(res["points"][0, 0]), float(res["points"][0, 1])),
               hit_kind=_KIND_NAMES[int(res["kind"][0])],
               hit_index=int(res["index"][0]),
               t=float(res["t"][0]))


def ray_hits_rect(origin, dirs: np.ndarray, t_hit: np.ndarray, rect: OrientedRect) -> np.ndarray:
    """Which ray segments [origin, origin + t_hit*dir] touch `rect` -> bool (R,).

    Shared-origin slab test in the rectangle's frame.
    """
    c, s = math.cos(rect.heading), math.sin(rect.heading)
    rot = np.array([[c, s], [-s, c]])
    o = rot @ (np.asarray(origin, dtype=float) - rect.center)
    d = dirs @ rot.T  # (R,2)
    half = np.array([0.5 * rect.length, 0.5 * rect.width])

    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
    t1 = (-half - o) * inv
    t2 = (half - o) * inv
    tmin = np.minimum(t1, t2)
    tmax = np.maximum(t1, t2)
    # Parallel-axis rays: inside the slab iff |o| <= half.
    for ax in (0, 1):
        par = np.abs(d[:, ax]) <= 1e-12
        inside = np.abs(o[ax]) <= half[ax] + _EDGE_EPS
        tmin[par, ax] = np.where(inside, -np.inf, np.inf)
        tmax[par, ax] = np.where(inside, np.inf, -np.inf)
    enter = tmin.max(axis=1)
    leave = tmax.min(axis=1)
    return (enter <= leave + 1e-12) & (leave >= -1e-9) & (enter <= t_hit + 1e-9)


def ray_hits_disc(origin, dirs: np.ndarray, t_hit: np.ndarray, center, radius: float) -> np.ndarray:
    """Which ray segments touch a disc -> bool (R,)."""
    oc = np.asarray(center, dtype=float) - np.asarray(origin, dtype=float)
    proj = dirs @ oc  # closest-approach parameter per ray
    tc = np.clip(proj, 0.0, t_hit)
    closest = dirs * tc[:, None] - oc[None, :]
    return np.hypot(closest[:, 0], closest[:, 1]) <= radius + _EDGE_EPS


# ---------------------------------------------------------------------------
# Lot file I/O
# ---------------------------------------------------------------------------

def lot_to_dict(lot: ParkingLot) -> dict:
    return {
        "boundary": list(lot.boundary),
        "entrance": list(lot.entrance),
        "spots": [{"center": [sp.cx, sp.cy], "heading": sp.heading,
                   "length": sp.length, "width": sp.width} for sp in lot.spots],
        "roads": [{"start": list(r.start), "end": list(r.end), "width": r.width}
                  for r in lot.roads],
    }


def lot_from_dict(data: dict) -> ParkingLot:
    defaults = data.get("spot_defaults", {})
    sp_len = defaults.get("length", DEFAULT_SPOT_LENGTH)
    sp_wid = defaults.get("width", DEFAULT_SPOT_WIDTH)
    road_wid = data.get("road_defaults", {}).get("width", DEFAULT_ROAD_WIDTH)
    spots = tuple(
        OrientedRect(sp["center"][0], sp["center"][1], sp["heading"],
                     sp.get("length", sp_len), sp.get("width", sp_wid))
        for sp in data["spots"])
    roads = tuple(
        Road(tuple(r["start"]), tuple(r["end"]), r.get("width", road_wid))
        for r in data["roads"])
    return ParkingLot(boundary=tuple(data["boundary"]), entrance=tuple(data["entrance"]),
                      spots=spots, roads=roads)


def save_lot(lot: ParkingLot, path) -> None:
    Path(path).write_text(json.dumps(lot_to_dict(lot), indent=2))


def load_lot(path) -> ParkingLot:
    return lot_from_dict(json.loads(Path(path).read_text()))
