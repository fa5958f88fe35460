"""Experiment configuration: one dataclass, JSON round trip, validated fields.

An empty config file reproduces the stock experiment setup; every field can
be overridden individually.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .geometry import Disc
from .intention import ExternalScorer, HeuristicScorer
from .planner import PlannerConfig
from .policy import PolicyConfig, SELECT_BY_COST, SELECT_BY_EGO_INTENT
from .prediction import PredictionConfig, START_TANGENT_AS_PAPER
from .scenario import ScenarioConfig, ALL_METHODS, METHOD_BEZIER, METHOD_IMPLICIT


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    method: str = METHOD_BEZIER
    episodes: int = 100
    seed: int = 0
    reactive: bool = True
    workers: int = 0  # 0 -> all cores
    out_dir: str = "out"

    # world / sensing
    t_f: float = 100.0  # [s]
    dt: float = 0.1  # [s]
    sensing_radius: float = 11.5  # [m]
    n_ray: int = 360
    t_hist: float = 4.0  # [s]
    n_dynamic: int = 0  # 0 -> random 1 or 2
    n_pedestrians: int = 0
    passiveness_low: int = 2
    passiveness_high: int = 6

    # belief / intention
    default_length: float = 4.97  # [m] phantom vehicle size in reconstructed views
    default_width: float = 1.86  # [m]
    beta: float = 0.5
    delta: float = 0.3
    mu: float = 0.3

    # prediction
    zeta: float = 3.0  # [s]
    t_pred: float = 3.0  # [s]
    t_plan: float = 5.0  # [s] prediction fill / rolling validation horizon
    bezier_start_tangent: str = START_TANGENT_AS_PAPER

    # scorer
    scorer: str = "heuristic"  # or "external"
    scorer_cmd: str = ""
    scorer_timeout: float = 1.0

    # planner (t_plan and dt mirrored in)
    planner: PlannerConfig = field(default_factory=lambda: PlannerConfig(node_budget=24000))

    # policy
    candidate_cap: int = 5
    replan_interval: int = 5

    record_timings: bool = False
    trace_path: str = ""

    def __post_init__(self):
        checks = [
            ("episodes", self.episodes >= 1, ">= 1"),
            ("method", self.method in ALL_METHODS, f"one of {ALL_METHODS}"),
            ("beta", 0.0 <= self.beta <= 1.0, "in [0, 1]"),
            ("delta", 0.0 <= self.delta <= 1.0, "in [0, 1]"),
            ("mu", 0.0 <= self.mu <= 1.0, "in [0, 1]"),
            ("t_f", self.t_f > 0, "> 0"),
            ("dt", self.dt > 0, "> 0"),
            ("sensing_radius", self.sensing_radius > 0, "> 0"),
            ("n_ray", self.n_ray >= 1, ">= 1"),
            ("t_hist", self.t_hist >= self.dt, ">= dt"),
            ("zeta", self.zeta >= 0, ">= 0"),
            ("t_pred", self.t_pred > 0, "> 0"),
            ("t_plan", self.t_plan >= self.t_pred, ">= t_pred"),
            ("n_dynamic", self.n_dynamic in (0, 1, 2), "0 (random), 1 or 2"),
            ("scorer", self.scorer in ("heuristic", "external"), "heuristic or external"),
        ]
        for name, ok, what in checks:
            if not ok:
                raise ConfigError(f"config field '{name}' must be {what}, "
                                  f"got {getattr(self, name)!r}")
        # planner shares the timestep; its t_plan remains the max plan duration
        object.__setattr__(self, "planner", replace(self.planner, dt=self.dt))

    # -- derived pieces -----------------------------------------------------

    def base_region(self) -> Disc:
        return Disc((0.0, 0.0), self.sensing_radius)

    @property
    def prediction(self) -> PredictionConfig:
        return PredictionConfig(dt=self.dt, t_pred=self.t_pred, t_plan=self.t_plan,
                                zeta=self.zeta, mu=self.mu,
                                start_tangent=self.bezier_start_tangent)

    def scenario_config(self) -> ScenarioConfig:
        return ScenarioConfig(n_dynamic=self.n_dynamic, reactive=self.reactive,
                              passiveness_low=self.passiveness_low,
                              passiveness_high=self.passiveness_high,
                              t_f=self.t_f, dt=self.dt, t_hist=self.t_hist,
                              n_pedestrians=self.n_pedestrians)

    def policy_config(self) -> PolicyConfig:
        selection = SELECT_BY_EGO_INTENT if self.method == METHOD_IMPLICIT else SELECT_BY_COST
        return PolicyConfig(delta=self.delta, beta=self.beta,
                            candidate_cap=self.candidate_cap,
                            replan_interval=self.replan_interval,
                            selection=selection, planner=self.planner)

    def make_scorer(self):
        if self.scorer == "external" and self.scorer_cmd:
            return ExternalScorer(self.scorer_cmd, timeout=self.scorer_timeout)
        return HeuristicScorer()

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        planner_data = data.pop("planner", {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        pknown = {f.name for f in fields(PlannerConfig)}
        punknown = set(planner_data) - pknown
        if punknown:
            raise ConfigError(f"unknown planner config fields: {sorted(punknown)}")
        base = PlannerConfig(node_budget=24000)
        planner = replace(base, **planner_data)
        try:
            return cls(planner=planner, **data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        text = Path(path).read_text().strip()
        data = json.loads(text) if text else {}
        return cls.from_dict(data)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")
