"""Sliced UAV downlink world: entities, demand areas, stepping, reward.

The environment realizes the two-timescale hierarchy: the joint action
moves UAVs, sets transmit power, and splits each UAV's spectrum across
its nine demand areas (3 slices x 3 distance bands); the small timescale
is collapsed into an equal Round-Robin share within each DA.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import channel
from .config import SLICE_NAMES, ExperimentConfig

OBS_DIM = 80
ACT_DIM = 13
N_DA = 9                 # 3 slices x 3 distance levels
DA_FEATURES = 7
OMEGA_DIM = 4 + N_DA * DA_FEATURES   # per-agent own-state block of the obs
UE_COUNT_NORM = 50.0
SINR_DB_SCALE = 50.0
DIRECTIONS = ("north", "east", "south", "west")


def da_index(slice_idx: int, level: int) -> int:
    return slice_idx * 3 + level


@dataclass
class UavState:
    position: np.ndarray          # (3,) meters
    tx_power_w: float
    bw_budget_hz: float
    rb_alloc: np.ndarray          # (9,) whole resource blocks per DA
    energy_last_step_j: float = 0.0

    def da_bandwidth_hz(self, rb_hz: float) -> np.ndarray:
        return self.rb_alloc.astype(float) * rb_hz


@dataclass
class WorldMetrics:
    """Per-step aggregates exposed through step()'s info dict."""

    qos: float = 0.0
    energy: float = 0.0
    fairness: float = 0.0
    total: float = 0.0
    mean_energy_j: float = 0.0
    slice_satisfaction: dict = field(default_factory=dict)
    satisfied_fraction: float = 0.0
    mean_queue_util: float = 0.0
    handover_count: int = 0


class World:
    """Mutable simulation state; step() is the single writer."""

    def __init__(self, cfg: ExperimentConfig, seed: int):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.slice_list = [cfg.slices[s] for s in SLICE_NAMES]
        self.wavelength = channel.wavelength_m(cfg.channel.carrier_hz)
        self.t = 0
        self.prev_reward = 0.0
        self.uavs: list[UavState] = []
        # UE arrays, kept parallel
        self.ue_pos = np.zeros((0, 3))
        self.ue_slice = np.zeros(0, dtype=int)
        self.serving = np.zeros(0, dtype=int)
        self.level = np.zeros(0, dtype=int)
        self.alloc_bw = np.zeros(0)
        self.throughput = np.zeros(0)
        self.delay = np.zeros(0)
        self.reliab = np.zeros(0)
        self.satisfaction = np.zeros(0)
        self.queue_util = np.zeros(0)
        self.handover = np.zeros(0, dtype=bool)
        self.rx_matrix = np.zeros((0, 0))   # (n_uav, n_ue) received power, W
        self._spawn()

    # -- construction -------------------------------------------------------

    def _spawn(self):
        sc, rc = self.cfg.scenario, self.cfg.resources
        n = sc.n_uav
        # deterministic spawn lattice across the box at minimum altitude
        cols = int(np.ceil(np.sqrt(n)))
        rows = int(np.ceil(n / cols))
        uniform_rb = self._quantize_fractions(np.full(N_DA, 1.0 / N_DA))
        self.uavs = []
        for i in range(n):
            fx = (i % cols + 1) / (cols + 1)
            fy = (i // cols + 1) / (rows + 1)
            pos = np.array([
                sc.x_min + fx * (sc.x_max - sc.x_min),
                sc.y_min + fy * (sc.y_max - sc.y_min),
                sc.h_min,
            ])
            self.uavs.append(UavState(
                position=pos,
                tx_power_w=0.5 * (rc.p_min_w + rc.p_max_w),
                bw_budget_hz=rc.bandwidth_hz,
                rb_alloc=uniform_rb.copy(),
            ))
        count = int(self.rng.integers(sc.ue_min, sc.ue_max + 1))
        self.ue_pos = self._sample_ue_positions(count)
        mix = np.array([sc.slice_mix_embb, sc.slice_mix_urllc, sc.slice_mix_mmtc])
        self.ue_slice = self.rng.choice(3, size=count, p=mix / mix.sum())
        self._resize_metric_arrays(count)
        self.associate_and_form_das()
        self.handover[:] = False

    def _sample_ue_positions(self, count: int) -> np.ndarray:
        sc = self.cfg.scenario
        if sc.ue_placement == "cluster":
            centers = np.column_stack([
                self.rng.uniform(sc.x_min, sc.x_max, sc.n_clusters),
                self.rng.uniform(sc.y_min, sc.y_max, sc.n_clusters),
            ])
            which = self.rng.integers(0, sc.n_clusters, count)
            xy = centers[which] + self.rng.normal(0, sc.cluster_std_m, (count, 2))
            xy[:, 0] = np.clip(xy[:, 0], sc.x_min, sc.x_max)
            xy[:, 1] = np.clip(xy[:, 1], sc.y_min, sc.y_max)
        else:
            xy = np.column_stack([
                self.rng.uniform(sc.x_min, sc.x_max, count),
                self.rng.uniform(sc.y_min, sc.y_max, count),
            ])
        return np.column_stack([xy, np.full(count, sc.ue_height_m)])

    def _resize_metric_arrays(self, count: int):
        self.serving = np.zeros(count, dtype=int)
        self.level = np.zeros(count, dtype=int)
        self.alloc_bw = np.zeros(count)
        self.throughput = np.zeros(count)
        self.delay = np.zeros(count)
        self.reliab = np.zeros(count)
        self.satisfaction = np.zeros(count)
        self.queue_util = np.zeros(count)
        self.handover = np.zeros(count, dtype=bool)

    @property
    def n_uav(self) -> int:
        return len(self.uavs)

    @property
    def n_ue(self) -> int:
        return len(self.ue_pos)

    # -- association and demand areas --------------------------------------

    def _received_power_matrix(self) -> np.ndarray:
        """rx[u, e]: power UE e hears from UAV u at its full transmit power."""
        ch = self.cfg.channel
        up = np.stack([u.position for u in self.uavs])          # (U, 3)
        diff = up[:, None, :] - self.ue_pos[None, :, :]          # (U, N, 3)
        dist = np.linalg.norm(diff, axis=2)
        with np.errstate(invalid="ignore"):
            theta = np.degrees(np.arcsin(np.clip(diff[:, :, 2] / dist, -1, 1)))
        theta = np.clip(theta, 1e-9, 90.0)
        pl = (channel.free_space_path_loss_db(dist, self.wavelength)
              + channel.excess_path_loss(theta, ch.eta_los_db, ch.eta_nlos_db,
                                         ch.los_a, ch.los_b))
        powers = np.array([u.tx_power_w for u in self.uavs])
        return channel.received_power_w(powers[:, None], pl)

    def associate_and_form_das(self):
        """Associate each UE to its strongest UAV and bin it into a DA."""
        sc = self.cfg.scenario
        self.rx_matrix = self._received_power_matrix()
        # argmax takes the first (lowest-id) UAV on ties
        self.serving = np.argmax(self.rx_matrix, axis=0)
        up = np.stack([u.position for u in self.uavs])
        dxy = self.ue_pos[:, :2] - up[self.serving][:, :2]
        dist2d = np.linalg.norm(dxy, axis=1)
        self.level = np.where(dist2d < sc.near_band_m, 0,
                              np.where(dist2d < sc.medium_band_m, 1, 2))

    def da_members(self, uav_id: int) -> list[np.ndarray]:
        """UE indices per DA of one UAV, ordered by da_index."""
        mine = np.flatnonzero(self.serving == uav_id)
        out = []
        for s in range(3):
            for lv in range(3):
                mask = (self.ue_slice[mine] == s) & (self.level[mine] == lv)
                out.append(mine[mask])
        return out

    # -- action decoding ----------------------------------------------------

    def _quantize_fractions(self, fracs: np.ndarray) -> np.ndarray:
        """Simplex fractions -> whole RBs preserving the exact total."""
        n_rb = self.cfg.resources.n_rb
        raw = fracs * n_rb
        alloc = np.floor(raw).astype(int)
        rem = n_rb - alloc.sum()
        if rem > 0:
            order = np.argsort(-(raw - alloc), kind="stable")
            alloc[order[:rem]] += 1
        return alloc

    def decode_action(self, action: np.ndarray):
        """-> (displacement (3,), power W, rb allocation (9,))."""
        rc = self.cfg.resources
        action = np.asarray(action, dtype=float)
        if action.shape != (ACT_DIM,) or not np.all(np.isfinite(action)):
            raise ValueError("action must be a finite 13-vector")
        disp = np.clip(action[:3], -1.0, 1.0) * rc.v_max_ms * rc.t_large_s
        max_step = rc.v_max_ms * rc.t_large_s
        norm = np.linalg.norm(disp)
        if norm > max_step:
            disp *= max_step / norm
        power = rc.p_min_w + np.clip(action[3], 0.0, 1.0) * (rc.p_max_w - rc.p_min_w)
        logits = action[4:13]
        shifted = np.exp(logits - logits.max())
        fracs = shifted / shifted.sum()
        return disp, float(power), self._quantize_fractions(fracs)

    def apply_joint_action(self, actions: np.ndarray):
        """Move, retune, and re-slice every UAV; all constraints hold after."""
        sc = self.cfg.scenario
        actions = np.asarray(actions, dtype=float)
        if actions.shape != (self.n_uav, ACT_DIM):
            raise ValueError(f"expected ({self.n_uav}, {ACT_DIM}) actions")
        for uav, act in zip(self.uavs, actions):
            disp, power, rb = self.decode_action(act)
            old = uav.position.copy()
            uav.position = np.clip(
                uav.position + disp,
                [sc.x_min, sc.y_min, sc.h_min],
                [sc.x_max, sc.y_max, sc.h_max],
            )
            moved = float(np.linalg.norm(uav.position - old))
            uav.tx_power_w = power
            uav.rb_alloc = rb
            uav.energy_last_step_j = (
                power * self.cfg.resources.t_large_s
                + self.cfg.resources.p_move_j_per_m * moved
            )

    def constraint_violations(self) -> list[str]:
        """Re-verify the spectrum, box, power, and RB-count constraints."""
        sc, rc = self.cfg.scenario, self.cfg.resources
        bad = []
        for i, uav in enumerate(self.uavs):
            if uav.rb_alloc.sum() != rc.n_rb:
                bad.append(f"uav {i}: RB total {uav.rb_alloc.sum()} != {rc.n_rb}")
            if uav.da_bandwidth_hz(rc.rb_hz).sum() > uav.bw_budget_hz + 1e-6:
                bad.append(f"uav {i}: bandwidth over budget")
            x, y, h = uav.position
            if not (sc.x_min <= x <= sc.x_max and sc.y_min <= y <= sc.y_max
                    and sc.h_min <= h <= sc.h_max):
                bad.append(f"uav {i}: position outside service box")
            if not rc.p_min_w <= uav.tx_power_w <= rc.p_max_w:
                bad.append(f"uav {i}: power {uav.tx_power_w} out of range")
        return bad

    # -- small-timescale scheduling -----------------------------------------

    def schedule_small_timescale(self):
        """Equal Round-Robin share per DA member, then per-UE link metrics."""
        ch = self.cfg.channel
        rb_hz = self.cfg.resources.rb_hz
        self.alloc_bw = np.zeros(self.n_ue)
        for uid in range(self.n_uav):
            da_bw = self.uavs[uid].da_bandwidth_hz(rb_hz)
            for d, members in enumerate(self.da_members(uid)):
                if len(members):
                    self.alloc_bw[members] = da_bw[d] / len(members)

        rx_all = self.rx_matrix
        idx = np.arange(self.n_ue)
        signal = rx_all[self.serving, idx]
        interference = rx_all.sum(axis=0) - signal
        noise = ch.noise_psd_w_hz * self.alloc_bw
        with np.errstate(divide="ignore", invalid="ignore"):
            sinr_lin = np.where(self.alloc_bw > 0,
                                signal / (interference + noise), 0.0)
        self.throughput = channel.throughput_bps(self.alloc_bw, sinr_lin)

        up = np.stack([u.position for u in self.uavs])
        dist = np.linalg.norm(self.ue_pos - up[self.serving], axis=1)
        sinr_db = np.where(sinr_lin > 0, 10.0 * np.log10(
            np.where(sinr_lin > 0, sinr_lin, 1.0)), -np.inf)
        for e in range(self.n_ue):
            prof = self.slice_list[self.ue_slice[e]]
            per = (1.0 if not np.isfinite(sinr_db[e]) else
                   channel.per_from_sinr(sinr_db[e], prof.per_threshold_db,
                                         prof.per_slope))
            dl = channel.delay_total(dist[e], self.throughput[e],
                                     prof.packet_bits, prof.arrival_rate,
                                     per, bool(self.handover[e]), ch)
            rho = channel.queue_utilization(prof.arrival_rate,
                                            self.throughput[e],
                                            prof.packet_bits)
            p_drop = channel.buffer_drop_probability(rho, ch.buffer_packets)
            rel = channel.reliability(per, p_drop)
            self.delay[e] = dl.total_s
            self.reliab[e] = rel.reliability
            self.queue_util[e] = min(1.0, rho)
        self._sinr_lin = sinr_lin
        self._interference = interference

    # -- reward components --------------------------------------------------

    def qos_satisfaction(self) -> float:
        """Priority-weighted mean satisfaction; also refreshes per-UE values."""
        w = np.zeros(self.n_ue)
        for e in range(self.n_ue):
            prof = self.slice_list[self.ue_slice[e]]
            s = (prof.w_throughput * min(self.throughput[e] / prof.t_min_bps, 1.0)
                 + prof.w_reliability * min(self.reliab[e] / prof.r_min, 1.0)
                 + prof.w_delay * min(1.0, np.exp(
                     (prof.d_max_s - self.delay[e]) / prof.d_max_s)))
            self.satisfaction[e] = s
            w[e] = prof.priority_weight
        if self.n_ue == 0:
            return 0.0
        return float(np.dot(w, self.satisfaction) / w.sum())

    def energy_penalty(self) -> float:
        rc = self.cfg.resources
        e_max = (rc.p_max_w * rc.t_large_s
                 + rc.p_move_j_per_m * rc.v_max_ms * rc.t_large_s)
        ratios = [u.energy_last_step_j / e_max for u in self.uavs]
        return float(np.mean(ratios))

    def fairness_index(self) -> float:
        """Jain's index over capped throughput ratios; 1 for the all-zero case."""
        x = np.array([
            min(self.throughput[e] / self.slice_list[self.ue_slice[e]].t_min_bps,
                1.0)
            for e in range(self.n_ue)
        ])
        total = x.sum()
        if total == 0.0:
            return 1.0
        # the index is <= 1 by Cauchy-Schwarz; the cap removes roundoff
        return float(min(1.0, total * total / (self.n_ue * np.dot(x, x))))

    # -- stepping -----------------------------------------------------------

    def step(self, actions: np.ndarray):
        """Advance one large-timescale period.

        Returns (joint_obs, metrics, info).
        """
        self.t += 1
        if self.cfg.scenario.churn_prob > 0:
            self._churn()
        self.apply_joint_action(actions)
        prev_serving = self.serving.copy()
        self.associate_and_form_das()
        self.handover = self.serving != prev_serving
        self.schedule_small_timescale()

        rw = self.cfg.reward
        qos = self.qos_satisfaction()
        energy = self.energy_penalty()
        fair = self.fairness_index()
        total = rw.alpha * qos - rw.beta * energy + rw.gamma_fair * fair
        metrics = WorldMetrics(
            qos=qos, energy=energy, fairness=fair, total=total,
            mean_energy_j=float(np.mean([u.energy_last_step_j
                                         for u in self.uavs])),
            slice_satisfaction={
                name: float(self.satisfaction[self.ue_slice == i].mean())
                if np.any(self.ue_slice == i) else 0.0
                for i, name in enumerate(SLICE_NAMES)
            },
            satisfied_fraction=float(np.mean(
                self.satisfaction >= rw.satisfied_threshold)),
            mean_queue_util=float(self.queue_util.mean()),
            handover_count=int(self.handover.sum()),
        )
        self.prev_reward = total
        obs = self.joint_observation()
        return obs, metrics, {"violations": self.constraint_violations()}

    def _churn(self):
        """Bernoulli departures/arrivals keeping the UE count in range."""
        sc = self.cfg.scenario
        keep = self.rng.random(self.n_ue) >= sc.churn_prob
        while keep.sum() < sc.ue_min:
            keep[int(self.rng.integers(self.n_ue))] = True
        arrivals = int(self.rng.binomial(
            max(0, sc.ue_max - int(keep.sum())), sc.churn_prob))
        self._apply_churn(keep, arrivals)

    def _apply_churn(self, keep: np.ndarray, arrivals: int):
        mix = np.array([self.cfg.scenario.slice_mix_embb,
                        self.cfg.scenario.slice_mix_urllc,
                        self.cfg.scenario.slice_mix_mmtc])
        new_pos = self._sample_ue_positions(arrivals)
        new_slice = self.rng.choice(3, size=arrivals, p=mix / mix.sum())
        self.ue_pos = np.concatenate([self.ue_pos[keep], new_pos])
        self.ue_slice = np.concatenate([self.ue_slice[keep], new_slice])
        n = len(self.ue_pos)
        old_sat = np.concatenate([self.satisfaction[keep], np.zeros(arrivals)])
        self._resize_metric_arrays(n)
        self.satisfaction = old_sat
        self.associate_and_form_das()

    # -- observation and state encoding -------------------------------------

    def encode_observation(self, uav_id: int) -> np.ndarray:
        """80-wide local view of one UAV; uses no other agent's internals."""
        sc, rc = self.cfg.scenario, self.cfg.resources
        uav = self.uavs[uav_id]
        obs = np.zeros(OBS_DIM)
        span = np.array([sc.x_max - sc.x_min, sc.y_max - sc.y_min,
                         sc.h_max - sc.h_min])
        low = np.array([sc.x_min, sc.y_min, sc.h_min])
        obs[0:3] = (uav.position - low) / span
        obs[3] = (uav.tx_power_w - rc.p_min_w) / (rc.p_max_w - rc.p_min_w)

        members = self.da_members(uav_id)
        da_bw = uav.da_bandwidth_hz(rc.rb_hz)
        for d in range(N_DA):
            base = 4 + d * DA_FEATURES
            s, lv = divmod(d, 3)
            ues = members[d]
            obs[base] = min(2.0, len(ues) / UE_COUNT_NORM)
            obs[base + 1 + s] = 1.0
            obs[base + 4] = da_bw[d] / uav.bw_budget_hz
            obs[base + 5] = lv / 2.0
            obs[base + 6] = float(self.satisfaction[ues].mean()) if len(ues) else 0.0

        obs[67:75] = self._context_features(uav_id)
        obs[75:80] = self._aggregate_features(uav_id)
        return np.clip(obs, -1.0, 2.0)

    def _context_features(self, uav_id: int) -> np.ndarray:
        sc = self.cfg.scenario
        uav = self.uavs[uav_id]
        out = np.zeros(8)
        rel_ue = self.ue_pos[:, :2] - uav.position[:2]
        in_range = np.linalg.norm(rel_ue, axis=1) <= sc.interest_radius_m
        for k, mask in enumerate(_cardinal_masks(rel_ue)):
            out[k] = min(2.0, np.sum(mask & in_range) / UE_COUNT_NORM)
        others = [u.position[:2] for j, u in enumerate(self.uavs) if j != uav_id]
        if others:
            rel_uav = np.asarray(others) - uav.position[:2]
            near = np.linalg.norm(rel_uav, axis=1) <= sc.interest_radius_m
            denom = max(1, self.n_uav - 1)
            for k, mask in enumerate(_cardinal_masks(rel_uav)):
                out[4 + k] = np.sum(mask & near) / denom
        return out

    def _aggregate_features(self, uav_id: int) -> np.ndarray:
        out = np.zeros(5)
        mine = np.flatnonzero(self.serving == uav_id)
        if len(mine) and hasattr(self, "_sinr_lin"):
            active = mine[self._sinr_lin[mine] > 0]
            if len(active):
                mean_db = float(np.mean(
                    10.0 * np.log10(self._sinr_lin[active])))
                out[0] = np.clip(mean_db / SINR_DB_SCALE, -1.0, 2.0)
            interf = float(np.mean(self._interference[mine]))
            out[1] = np.clip((np.log10(interf + 1e-18) + 18.0) / 18.0, 0.0, 2.0)
            out[2] = float(np.mean(
                self.satisfaction[mine] >= self.cfg.reward.satisfied_threshold))
            out[3] = float(np.mean(self.queue_util[mine]))
        rw = self.cfg.reward
        out[4] = np.clip(self.prev_reward / (rw.alpha + rw.gamma_fair),
                         -1.0, 2.0)
        return out

    def joint_observation(self) -> np.ndarray:
        return np.stack([self.encode_observation(u) for u in range(self.n_uav)])

    def build_global_state(self) -> np.ndarray:
        """Concatenated own-state blocks of all agents, in UAV-id order."""
        return np.concatenate([self.encode_observation(u)[:OMEGA_DIM]
                               for u in range(self.n_uav)])


def _cardinal_masks(rel_xy: np.ndarray):
    """North / east / south / west membership by dominant axis (y = north)."""
    dx, dy = rel_xy[:, 0], rel_xy[:, 1]
    along_y = np.abs(dy) >= np.abs(dx)
    return (along_y & (dy > 0), ~along_y & (dx > 0),
            along_y & (dy <= 0), ~along_y & (dx <= 0))


def reset(cfg: ExperimentConfig, seed: int):
    """Build a fresh world; identical seeds give bit-identical worlds."""
    world = World(cfg, seed)
    return world, world.joint_observation()
