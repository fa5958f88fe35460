"""Episode scoring: success, spot stealing, interruptions, minADE/minFDE, aggregates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EpisodeMetrics:
    seed: int
    method: str
    success: bool
    stolen: bool
    interrupted_steps: int
    t_park: float  # None when the episode did not end parked
    spot_selection_time: float  # [s] mean per pipeline step; 0 when not measured
    path_planning_time: float  # [s] mean per planner call; 0 when not measured
    min_ade: float  # [m] episode mean of per-event minADE; None without events
    min_fde: float


def min_ade_fde(predictions, truth) -> tuple:
    """Best displacement errors over a prediction set for one agent and time.

    predictions: iterable of (K_i, 2) position arrays; truth: (T, 2) realized
    positions on the same timestamps. Each prediction is compared over
    min(len(prediction), len(truth)) steps; ADE and FDE are minimized
    independently across the set.
    """
    preds = [np.asarray(p, dtype=float) for p in predictions]
    if not preds:
        raise ValueError("prediction set must be non-empty")
    truth = np.asarray(truth, dtype=float)
    if truth.shape[0] < 1:
        raise ValueError("truth must contain at least one position")
    best_ade = math.inf
    best_fde = math.inf
    for p in preds:
        n = min(p.shape[0], truth.shape[0])
        if n < 1:
            continue
        err = np.hypot(p[:n, 0] - truth[:n, 0], p[:n, 1] - truth[:n, 1])
        best_ade = min(best_ade, float(err.mean()))
        best_fde = min(best_fde, float(err[-1]))
    if math.isinf(best_ade):
        raise ValueError("no prediction overlapped the truth horizon")
    return best_ade, best_fde


def episode_metrics(log, scenario=None) -> EpisodeMetrics:
    """Score one finished episode log.

    Stealing means the ego ended in a scripted vehicle's assigned target while
    that vehicle had not parked yet. minADE/minFDE average the per-(agent,
    timestep) prediction-set errors over the whole episode.
    """
    success = log.outcome == "parked"
    stolen = False
    if success and log.final_spot is not None:
        park_step = int(round(log.t_park / log.dt))
        for aid, target in log.agent_targets.items():
            if target == log.final_spot:
                parked_at = log.agent_parked_step.get(aid)
                if parked_at is None or parked_at > park_step:
                    stolen = True

    # group prediction events by (agent, step), compare against the realized track
    truth = np.asarray(log.vehicle_poses)  # (T+1, N, 3)
    groups = {}
    for agent, step, _prob, positions in log.prediction_events:
        groups.setdefault((agent, step), []).append(positions)
    ades, fdes = [], []
    for (agent, step), preds in sorted(groups.items()):
        future = truth[step + 1:, agent, :2]
        if future.shape[0] < 1:
            continue
        ade, fde = min_ade_fde(preds, future)
        ades.append(ade)
        fdes.append(fde)

    sel = float(np.mean(log.selection_times)) if log.selection_times else 0.0
    plan = float(np.mean(log.planning_times)) if log.planning_times else 0.0
    return EpisodeMetrics(
        seed=log.seed, method=log.method, success=success, stolen=stolen,
        interrupted_steps=int(log.interrupted_steps),
        t_park=float(log.t_park) if log.t_park is not None else None,
        spot_selection_time=sel, path_planning_time=plan,
        min_ade=float(np.mean(ades)) if ades else None,
        min_fde=float(np.mean(fdes)) if fdes else None)


def _mean_std(values) -> tuple:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    arr = np.asarray(vals, dtype=float)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def aggregate(rows) -> dict:
    """Summary row over per-episode metrics: rates in percent, mean +/- sample std.

    Parking time averages successful episodes only; accuracy columns average
    episodes that produced prediction events.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("cannot aggregate zero episodes")
    n = len(rows)
    out = {
        "episodes": n,
        "success_rate_pct": 100.0 * sum(r.success for r in rows) / n,
        "stolen_rate_pct": 100.0 * sum(r.stolen for r in rows) / n,
    }
    for name, values in [
        ("interrupted", [float(r.interrupted_steps) for r in rows]),
        ("spot_selection_s", [r.spot_selection_time for r in rows]),
        ("path_planning_s", [r.path_planning_time for r in rows]),
        ("parking_time_s", [r.t_park for r in rows if r.success]),
        ("min_ade_m", [r.min_ade for r in rows]),
        ("min_fde_m", [r.min_fde for r in rows]),
    ]:
        mean, std = _mean_std(values)
        out[f"{name}_mean"] = mean
        out[f"{name}_std"] = std
    return out
