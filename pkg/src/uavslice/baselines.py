"""Heuristic comparison policies over the same action interface.

Each policy maps (world, uav_id[, rng]) to a raw 13-wide action vector
that decodes cleanly in the environment: movement in [-1, 1]^3, power in
[0, 1], and bandwidth logits (log of the intended simplex fractions, so
the environment's softmax reproduces them exactly).
"""

from __future__ import annotations

import math

import numpy as np

from .environment import ACT_DIM, N_DA, World

BEAM_ANGLE_DEG = 60.0
SLICE_ALTITUDE_FRACTION = {"embb": 0.5, "urllc": 0.3, "mmtc": 0.7}


def _toward(world: World, uav_id: int, target: np.ndarray) -> np.ndarray:
    rc = world.cfg.resources
    delta = target - world.uavs[uav_id].position
    return np.clip(delta / (rc.v_max_ms * rc.t_large_s), -1.0, 1.0)


def _fractions_to_logits(fracs: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(fracs / fracs.sum(), 1e-300))


def _hold_action(power01: float) -> np.ndarray:
    action = np.zeros(ACT_DIM)
    action[3] = power01
    action[4:13] = _fractions_to_logits(np.full(N_DA, 1.0 / N_DA))
    return action


def random_action(rng: np.random.Generator) -> np.ndarray:
    """Uniform over the decoded action space."""
    action = np.empty(ACT_DIM)
    action[:3] = rng.uniform(-1.0, 1.0, 3)
    action[3] = rng.uniform(0.0, 1.0)
    action[4:13] = _fractions_to_logits(rng.dirichlet(np.ones(N_DA)))
    return action


def coverage_greedy_action(world: World, uav_id: int) -> np.ndarray:
    """Chase the member centroid at beam-covering altitude.

    Altitude targets 1.1 * d_far / tan(beam), power rises affinely with
    altitude, and bandwidth favors far DAs over near ones (3:2:1).
    """
    sc = world.cfg.scenario
    rc = world.cfg.resources
    mine = np.flatnonzero(world.serving == uav_id)
    if len(mine) == 0:
        return _hold_action(0.0)
    centroid = world.ue_pos[mine, :2].mean(axis=0)
    d_far = float(np.max(np.linalg.norm(
        world.ue_pos[mine, :2] - centroid, axis=1)))
    alt = 1.1 * d_far / math.tan(math.radians(BEAM_ANGLE_DEG))
    alt = min(max(alt, sc.h_min), sc.h_max)
    action = np.zeros(ACT_DIM)
    action[:3] = _toward(world, uav_id, np.array([*centroid, alt]))
    action[3] = (alt - sc.h_min) / (sc.h_max - sc.h_min)
    level_weight = np.array([1.0, 2.0, 3.0])     # near, medium, far
    # DA order is slice-major, level-minor, so tiling matches da_index
    fracs = np.tile(level_weight, 3)
    action[4:13] = _fractions_to_logits(fracs)
    return action


def qos_greedy_action(world: World, uav_id: int) -> np.ndarray:
    """Weigh members by slice priority for position, power, and spectrum."""
    sc = world.cfg.scenario
    mine = np.flatnonzero(world.serving == uav_id)
    if len(mine) == 0:
        return _hold_action(0.0)
    prio = np.array([world.slice_list[s].priority_weight
                     for s in world.ue_slice[mine]])
    centroid = np.average(world.ue_pos[mine, :2], axis=0, weights=prio)

    alt_pref = np.array([sc.h_min + SLICE_ALTITUDE_FRACTION[p.name]
                         * (sc.h_max - sc.h_min)
                         for p in world.slice_list])
    slice_demand = np.array([
        prio[world.ue_slice[mine] == s].sum() for s in range(3)])
    alt = float(np.average(alt_pref, weights=slice_demand))

    # per-DA priority-weighted demand drives both power and spectrum split
    members = world.da_members(uav_id)
    da_demand = np.array([
        sum(world.slice_list[world.ue_slice[e]].priority_weight
            for e in grp) for grp in members])
    total_prio = sum(world.slice_list[s].priority_weight
                     for s in world.ue_slice)
    share = world.n_uav * da_demand.sum() / total_prio if total_prio else 0.0
    action = np.zeros(ACT_DIM)
    action[:3] = _toward(world, uav_id, np.array([*centroid, alt]))
    action[3] = min(1.0, share)
    fracs = da_demand if da_demand.sum() > 0 else np.full(N_DA, 1.0)
    action[4:13] = _fractions_to_logits(np.maximum(fracs, 1e-12))
    return action


class BaselinePolicy:
    """Drop-in joint-action provider for one of the heuristic kinds."""

    KINDS = ("random", "coverage", "qos")

    def __init__(self, kind: str, seed: int = 0):
        if kind not in self.KINDS:
            raise ValueError(f"unknown baseline kind {kind!r}")
        self.kind = kind
        self.rng = np.random.default_rng(seed)

    def joint_action(self, world: World) -> np.ndarray:
        if self.kind == "random":
            return np.stack([random_action(self.rng)
                             for _ in range(world.n_uav)])
        fn = (coverage_greedy_action if self.kind == "coverage"
              else qos_greedy_action)
        return np.stack([fn(world, u) for u in range(world.n_uav)])
