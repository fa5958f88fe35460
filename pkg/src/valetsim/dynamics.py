"""Discrete-time motion models: car with signed speed + yaw rate, holonomic pedestrian."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geometry import Pose2, OrientedRect, wrap_angle

V_MAX = 5.0  # [m/s] default speed limit, configurable
OMEGA_MAX = 1.0  # [rad/s] default yaw-rate limit, configurable
DT = 0.1  # [s] global timestep default


@dataclass(frozen=True)
class VehicleState:
    pose: Pose2
    length: float = 4.97  # [m]
    width: float = 1.86  # [m]

    @property
    def footprint(self) -> OrientedRect:
        return OrientedRect(self.pose.x, self.pose.y, self.pose.theta, self.length, self.width)


@dataclass(frozen=True)
class VehicleControl:
    """Signed forward speed (negative = reverse) and yaw rate."""

    v: float
    omega: float


ZERO_CONTROL = VehicleControl(0.0, 0.0)


@dataclass(frozen=True)
class PedestrianState:
    x: float
    y: float
    radius: float = 0.3  # [m]

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("pedestrian radius must be >= 0")

    @property
    def position(self):
        return (self.x, self.y)


@dataclass(frozen=True)
class PedestrianControl:
    """Walking speed (>= 0) and direction."""

    v: float
    theta: float

    def __post_init__(self):
        if self.v < 0:
            raise ValueError("pedestrian speed must be >= 0")


def step_vehicle(state: VehicleState, control: VehicleControl, dt: float) -> VehicleState:
    """One forward-Euler step of the car model; heading re-normalized."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    p = state.pose
    x = p.x + control.v * math.cos(p.theta) * dt
    y = p.y + control.v * math.sin(p.theta) * dt
    theta = wrap_angle(p.theta + control.omega * dt)
    return VehicleState(Pose2(x, y, theta), state.length, state.width)


def step_pedestrian(state: PedestrianState, control: PedestrianControl, dt: float) -> PedestrianState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = state.x + control.v * math.cos(control.theta) * dt
    y = state.y + control.v * math.sin(control.theta) * dt
    return PedestrianState(x, y, state.radius)


def rollout_vehicle(state: VehicleState, controls, dt: float) -> list:
    """States visited by applying `controls` in order; output[0] is `state`."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    out = [state]
    for u in controls:
        state = step_vehicle(state, u, dt)
        out.append(state)
    return out
