"""Air-to-ground link budget: path loss, SINR, throughput, delay, reliability.

All functions are pure and accept scalars or numpy arrays (broadcasting
follows numpy rules).  Angles are degrees, powers watts, bandwidth Hz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 2.99792458e8  # m/s


def wavelength_m(carrier_hz: float) -> float:
    return SPEED_OF_LIGHT / carrier_hz


def db_to_linear(db):
    return np.power(10.0, np.asarray(db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class LinkGeometry:
    """3D link between a UAV and a ground UE."""

    distance_3d_m: float
    elevation_deg: float
    wavelength: float

    def __post_init__(self):
        if np.any(np.asarray(self.distance_3d_m) <= 0):
            raise ValueError("distance_3d_m must be > 0")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be > 0")

    @classmethod
    def from_endpoints(cls, uav_pos, ue_pos, wavelength: float) -> "LinkGeometry":
        uav_pos = np.asarray(uav_pos, dtype=float)
        ue_pos = np.asarray(ue_pos, dtype=float)
        d = float(np.linalg.norm(uav_pos - ue_pos))
        dh = float(uav_pos[2] - ue_pos[2])
        # asin argument clipped for the zero-horizontal-offset limit (theta = 90)
        theta = math.degrees(math.asin(min(1.0, max(-1.0, dh / d))))
        return cls(d, theta, wavelength)


@dataclass(frozen=True)
class LinkBudget:
    path_loss_db: float
    received_power_w: float
    sinr_linear: float
    throughput_bps: float


@dataclass(frozen=True)
class DelayBreakdown:
    propagation_s: float
    transmission_s: float
    retransmission_s: float
    queuing_s: float
    handover_s: float
    processing_s: float

    @property
    def total_s(self) -> float:
        return (self.propagation_s + self.transmission_s
                + self.retransmission_s + self.queuing_s
                + self.handover_s + self.processing_s)


@dataclass(frozen=True)
class ReliabilityResult:
    per: float
    p_drop: float
    reliability: float


def los_probability(elevation_deg, a: float, b: float):
    """Sigmoid LoS probability for an air-to-ground link."""
    theta = np.asarray(elevation_deg, dtype=float)
    if np.any(theta <= 0) or np.any(theta > 90):
        raise ValueError("elevation_deg must be in (0, 90]")
    if a <= 0 or b <= 0:
        raise ValueError("sigmoid parameters a, b must be > 0")
    out = 1.0 / (1.0 + a * np.exp(-b * (theta - a)))
    return float(out) if np.isscalar(elevation_deg) else out


def excess_path_loss(elevation_deg, eta_los_db: float, eta_nlos_db: float,
                     a: float, b: float):
    """LoS/NLoS-weighted excess loss on top of free space, in dB."""
    if eta_los_db > eta_nlos_db:
        raise ValueError("eta_los_db must be <= eta_nlos_db")
    p_los = los_probability(elevation_deg, a, b)
    return eta_los_db * p_los + eta_nlos_db * (1.0 - p_los)


def free_space_path_loss_db(distance_m, wavelength: float):
    d = np.asarray(distance_m, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be > 0")
    out = 20.0 * np.log10(4.0 * np.pi * d / wavelength)
    return float(out) if np.isscalar(distance_m) else out


def path_loss_db(geometry: LinkGeometry, cfg) -> float:
    """Total path loss: free space term plus elevation-dependent excess."""
    return float(
        free_space_path_loss_db(geometry.distance_3d_m, geometry.wavelength)
        + excess_path_loss(geometry.elevation_deg, cfg.eta_los_db,
                           cfg.eta_nlos_db, cfg.los_a, cfg.los_b)
    )


def received_power_w(tx_power_w, pl_db):
    return tx_power_w * np.power(10.0, -np.asarray(pl_db, dtype=float) / 10.0)


def sinr(ue_pos, serving_idx: int, uav_positions, uav_powers,
         allocated_bw_hz: float, n0: float, cfg) -> float:
    """SINR at a UE under universal frequency reuse.

    Interference sums the received power from every non-serving UAV at
    that UAV's own full transmit power and geometry toward this UE.
    """
    if allocated_bw_hz <= 0:
        raise ValueError("allocated_bw_hz must be > 0")
    uav_positions = np.asarray(uav_positions, dtype=float)
    if not 0 <= serving_idx < len(uav_positions):
        raise ValueError("serving_idx out of range")
    lam = wavelength_m(cfg.carrier_hz)
    rx = np.empty(len(uav_positions))
    for u in range(len(uav_positions)):
        geom = LinkGeometry.from_endpoints(uav_positions[u], ue_pos, lam)
        rx[u] = received_power_w(uav_powers[u], path_loss_db(geom, cfg))
    interference = float(rx.sum() - rx[serving_idx])
    return float(rx[serving_idx] / (interference + n0 * allocated_bw_hz))


def throughput_bps(bw_hz, sinr_linear):
    """Shannon capacity; exactly zero at zero bandwidth."""
    bw = np.asarray(bw_hz, dtype=float)
    s = np.asarray(sinr_linear, dtype=float)
    out = bw * np.log2(1.0 + s)
    out = np.where(bw == 0.0, 0.0, out)
    return float(out) if np.isscalar(bw_hz) else out


def per_from_sinr(sinr_db, threshold_db: float, slope: float):
    """Logistic block-error waterfall in dB, decreasing in SINR."""
    s = np.asarray(sinr_db, dtype=float)
    # PER = 1 / (1 + exp(z)); split by sign so the exponent never overflows
    z = slope * (s - threshold_db)
    ez = np.exp(-np.abs(z))
    out = np.where(z >= 0, ez / (1.0 + ez), 1.0 / (1.0 + ez))
    return float(out) if np.isscalar(sinr_db) else out


def expected_retx_factor(per: float, max_attempts: int = 4) -> float:
    """Expected extra transmissions under a truncated retransmission cap."""
    return float(sum(per ** k for k in range(1, max_attempts)))


def queue_utilization(arrival_rate: float, throughput: float,
                      packet_bits: float) -> float:
    """Offered load rho = lambda / mu with mu = throughput / packet size."""
    if throughput <= 0:
        return math.inf
    return arrival_rate * packet_bits / throughput


def md1_waiting_time_s(rho: float, service_rate: float, ceiling_s: float) -> float:
    """M/D/1 mean waiting time, saturating at the delay ceiling for rho >= 1."""
    if rho >= 1.0 or service_rate <= 0:
        return ceiling_s
    return min(ceiling_s, rho / (2.0 * service_rate * (1.0 - rho)))


def buffer_drop_probability(rho: float, buffer_packets: int) -> float:
    """Overflow probability of a finite buffer, min(1, rho^K)."""
    if rho >= 1.0:
        return 1.0
    return min(1.0, rho ** buffer_packets)


def delay_total(distance_m: float, throughput: float, packet_bits: float,
                arrival_rate: float, per: float, handover: bool,
                cfg) -> DelayBreakdown:
    """Per-UE delay decomposition for one large-timescale step."""
    ceiling = cfg.delay_ceiling_s
    d_prop = distance_m / SPEED_OF_LIGHT
    if throughput > 0:
        d_trans = min(ceiling, packet_bits / throughput)
        service_rate = throughput / packet_bits
    else:
        d_trans = ceiling
        service_rate = 0.0
    d_retx = d_trans * expected_retx_factor(per, cfg.max_tx_attempts)
    rho = queue_utilization(arrival_rate, throughput, packet_bits)
    d_queue = md1_waiting_time_s(rho, service_rate, ceiling)
    return DelayBreakdown(
        propagation_s=d_prop,
        transmission_s=d_trans,
        retransmission_s=d_retx,
        queuing_s=d_queue,
        handover_s=cfg.handover_delay_s if handover else 0.0,
        processing_s=cfg.processing_delay_s,
    )


def reliability(per: float, p_drop: float) -> ReliabilityResult:
    """Success probability over 4 transmission attempts minus buffer drops."""
    if not (0.0 <= per <= 1.0 and 0.0 <= p_drop <= 1.0):
        raise ValueError("per and p_drop must be in [0, 1]")
    r = (1.0 - per) ** 4 * (1.0 - p_drop)
    return ReliabilityResult(per=per, p_drop=p_drop,
                             reliability=min(1.0, max(0.0, r)))
