"""Occlusion-aware observations: equally spaced rays, visibility, spot/vehicle classes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (Disc, OrientedRect, ParkingLot, Pose2, Ray, cast_ray_batch,
                       obb_contains, ray_hits_disc, ray_hits_rect, _KIND_NAMES)

N_RAY = 360  # paper's ray count
SENSING_RADIUS = 11.5  # [m]
T_HIST = 4.0  # [s] history window carried for observed vehicles

STATIC = "static"
DYNAMIC = "dynamic"


@dataclass(frozen=True)
class WorldSnapshot:
    """Ground-truth state of everything at one timestep; ego is vehicle 0.

    vehicle_poses: (N, 3); vehicle_dims: (N, 2) length/width;
    vehicle_history: (N, H+1, 3) poses over the past t_hist, oldest first,
    last row equal to the current pose. ped_prev holds positions one step back.
    """

    time: float
    vehicle_poses: np.ndarray
    vehicle_dims: np.ndarray
    vehicle_history: np.ndarray
    ped_positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    ped_radii: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ped_prev: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    @property
    def ego_pose(self) -> Pose2:
        x, y, th = self.vehicle_poses[0]
        return Pose2(float(x), float(y), float(th))

    def vehicle_rect(self, k: int) -> OrientedRect:
        x, y, th = self.vehicle_poses[k]
        return OrientedRect(float(x), float(y), float(th),
                            float(self.vehicle_dims[k, 0]), float(self.vehicle_dims[k, 1]))


@dataclass(frozen=True)
class ObservedVehicle:
    index: int
    length: float
    width: float
    history: np.ndarray  # (H+1, 3) poses, last row current
    first_seen: float  # [s] episode time this vehicle first entered a ray

    @property
    def pose(self) -> Pose2:
        x, y, th = self.history[-1]
        return Pose2(float(x), float(y), float(th))

    @property
    def rect(self) -> OrientedRect:
        p = self.pose
        return OrientedRect(p.x, p.y, p.theta, self.length, self.width)


@dataclass(frozen=True)
class ObservedPedestrian:
    index: int
    radius: float
    position: tuple
    prev_position: tuple


@dataclass(frozen=True)
class RaySweep:
    """Compact result of one 360-degree sweep."""

    origin: tuple
    angles: np.ndarray
    dirs: np.ndarray
    t: np.ndarray
    kind: np.ndarray  # int codes per geometry._KIND_NAMES
    index: np.ndarray
    points: np.ndarray

    def as_rays(self) -> list:
        return [Ray(origin=self.origin,
                    direction=(float(self.dirs[i, 0]), float(self.dirs[i, 1])),
                    hit_point=(float(self.points[i, 0]), float(self.points[i, 1])),
                    hit_kind=_KIND_NAMES[int(self.kind[i])],
                    hit_index=int(self.index[i]),
                    t=float(self.t[i])) for i in range(len(self.angles))]


@dataclass(frozen=True)
class Observation:
    time: float
    ego_pose: Pose2
    vacant_spots: frozenset
    occupied_spots: frozenset
    dynamic_vehicles: dict
    static_vehicles: dict
    pedestrians: dict
    rays: RaySweep
    sensing_region: object
    first_seen: dict  # every vehicle id ever observed -> first observation time
    ego_history: np.ndarray = None  # (H+1, 3); the ego knows its own track


def instantiate_region(base_region, ego_pose: Pose2):
    """Base sensing shape rotated by the ego heading, translated to the ego."""
    if isinstance(base_region, Disc):
        return base_region.at_pose(ego_pose)
    if isinstance(base_region, OrientedRect):
        c, s = math.cos(ego_pose.theta), math.sin(ego_pose.theta)
        cx = ego_pose.x + c * base_region.cx - s * base_region.cy
        cy = ego_pose.y + s * base_region.cx + c * base_region.cy
        return OrientedRect(cx, cy, base_region.heading + ego_pose.theta,
                            base_region.length, base_region.width)
    raise TypeError(f"unsupported sensing region {type(base_region)!r}")


def classify_vehicle(vehicle: OrientedRect, lot: ParkingLot) -> str:
    """A vehicle fully contained in some spot is static; anything else is dynamic."""
    return STATIC if lot.spot_containing(vehicle) is not None else DYNAMIC


def _spot_is_occupied(lot, i, vehicle_poses, vehicle_dims) -> bool:
    spot = lot.spots[i]
    d = np.hypot(vehicle_poses[:, 0] - spot.cx, vehicle_poses[:, 1] - spot.cy)
    for k in np.flatnonzero(d <= spot.circumradius):
        rect = OrientedRect(*vehicle_poses[k], vehicle_dims[k, 0], vehicle_dims[k, 1])
        if obb_contains(spot, rect):
            return True
    return False


def sense(world: WorldSnapshot, lot: ParkingLot, base_region=None, n_ray: int = N_RAY,
          prior_first_seen: dict = None) -> Observation:
    """Build the ego's occlusion-filtered view of the lot.

    Rays are equally spaced over a full turn starting at the ego heading; an
    entity is observed iff at least one ray segment touches it. Rays stop on
    vehicles, the lot boundary, or the sensing-region rim; pedestrians do not
    occlude. Observed spots are classified by ground-truth containment (exact
    observation), observed vehicles as static/dynamic by the parked test.
    """
    if n_ray < 1:
        raise ValueError("need at least one ray")
    if base_region is None:
        base_region = Disc((0.0, 0.0), SENSING_RADIUS)
    ego = world.ego_pose
    if not lot.contains_point((ego.x, ego.y)):
        raise ValueError("ego must be inside the lot to sense")
    region = instantiate_region(base_region, ego)

    n_vehicles = world.vehicle_poses.shape[0]
    other_ids = list(range(1, n_vehicles))
    other_rects = [world.vehicle_rect(k) for k in other_ids]

    angles = ego.theta + 2.0 * np.pi * np.arange(n_ray) / n_ray
    res = cast_ray_batch((ego.x, ego.y), angles, lot, other_rects, region)
    sweep = RaySweep(origin=(ego.x, ego.y), angles=angles, dirs=res["dirs"], t=res["t"],
                     kind=res["kind"], index=res["index"], points=res["points"])

    # Vehicles terminate rays, so a vehicle is observed iff some ray ends on it.
    hit_local = res["index"][res["kind"] == 0]
    seen_vehicles = sorted({other_ids[int(j)] for j in np.unique(hit_local) if j >= 0})

    first_seen = dict(prior_first_seen or {})
    for k in seen_vehicles:
        first_seen.setdefault(k, world.time)

    dynamic, static = {}, {}
    for k in seen_vehicles:
        rect = world.vehicle_rect(k)
        ov = ObservedVehicle(index=k, length=rect.length, width=rect.width,
                             history=world.vehicle_history[k].copy(),
                             first_seen=first_seen[k])
        (static if classify_vehicle(rect, lot) == STATIC else dynamic)[k] = ov

    # Spots: slab-test the ray fan against each spot near enough to be reachable.
    reach = float(res["t"].max()) if n_ray else 0.0
    centers = lot.spot_poses[:, :2]
    near = np.flatnonzero(np.hypot(centers[:, 0] - ego.x, centers[:, 1] - ego.y)
                          <= reach + lot.spot_dims.max())
    vacant, occupied = set(), set()
    origin = (ego.x, ego.y)
    for i in near:
        if ray_hits_rect(origin, res["dirs"], res["t"], lot.spots[int(i)]).any():
            if _spot_is_occupied(lot, int(i), world.vehicle_poses, world.vehicle_dims):
                occupied.add(int(i))
            else:
                vacant.add(int(i))

    pedestrians = {}
    for m in range(world.ped_positions.shape[0]):
        pos = world.ped_positions[m]
        if ray_hits_disc(origin, res["dirs"], res["t"], pos, float(world.ped_radii[m])).any():
            pedestrians[m] = ObservedPedestrian(
                index=m, radius=float(world.ped_radii[m]),
                position=(float(pos[0]), float(pos[1])),
                prev_position=(float(world.ped_prev[m, 0]), float(world.ped_prev[m, 1])))

    return Observation(time=world.time, ego_pose=ego,
                       vacant_spots=frozenset(vacant), occupied_spots=frozenset(occupied),
                       dynamic_vehicles=dynamic, static_vehicles=static,
                       pedestrians=pedestrians, rays=sweep, sensing_region=region,
                       first_seen=first_seen, ego_history=world.vehicle_history[0].copy())
