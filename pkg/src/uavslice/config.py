"""Experiment configuration: defaults, file parsing, validation.

Config files are plain text, one ``dotted.key = value`` per line, ``#``
comments allowed.  Every key has a default; unknown keys are rejected.
Any key can also be overridden through environment variables using the
prefix ``UAVSLICE_`` with dots replaced by double underscores, e.g.
``UAVSLICE_reward__alpha=1.5``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field, fields

SLICE_NAMES = ("embb", "urllc", "mmtc")

ENV_PREFIX = "UAVSLICE_"


class ConfigError(ValueError):
    """Raised on unparsable files, unknown keys, or invalid values."""


@dataclass
class SliceProfile:
    """Per-slice QoS targets, priority, satisfaction weights and traffic."""

    name: str
    t_min_bps: float
    d_max_s: float
    r_min: float
    priority_weight: float
    w_throughput: float
    w_delay: float
    w_reliability: float
    per_threshold_db: float   # SINR at which PER crosses 0.5
    per_slope: float          # logistic steepness, 1/dB
    packet_bits: float
    arrival_rate: float       # packets per second per UE

    def validate(self):
        s = self.w_throughput + self.w_delay + self.w_reliability
        if abs(s - 1.0) > 1e-12:
            raise ConfigError(
                f"slice {self.name}: satisfaction weights sum to {s}, expected 1"
            )
        for nm in ("t_min_bps", "d_max_s", "priority_weight", "packet_bits",
                   "arrival_rate"):
            if getattr(self, nm) <= 0:
                raise ConfigError(f"slice {self.name}: {nm} must be > 0")
        if not 0.0 < self.r_min <= 1.0:
            raise ConfigError(f"slice {self.name}: r_min must be in (0, 1]")


@dataclass
class ChannelConfig:
    los_a: float = 4.88
    los_b: float = 0.43
    eta_los_db: float = 0.1
    eta_nlos_db: float = 21.0
    noise_psd_w_hz: float = 1e-13
    carrier_hz: float = 3.5e9
    buffer_packets: int = 20
    delay_ceiling_s: float = 10.0
    handover_delay_s: float = 0.050
    processing_delay_s: float = 0.003
    max_tx_attempts: int = 4

    def validate(self):
        if self.eta_los_db > self.eta_nlos_db:
            raise ConfigError("channel: eta_los_db must be <= eta_nlos_db")
        for nm in ("los_a", "los_b", "noise_psd_w_hz", "carrier_hz",
                   "delay_ceiling_s"):
            if getattr(self, nm) <= 0:
                raise ConfigError(f"channel.{nm} must be > 0")
        if self.buffer_packets < 1:
            raise ConfigError("channel.buffer_packets must be >= 1")


@dataclass
class ScenarioConfig:
    x_min: float = 0.0
    x_max: float = 2000.0
    y_min: float = 0.0
    y_max: float = 2000.0
    h_min: float = 100.0
    h_max: float = 400.0
    n_uav: int = 3
    ue_min: int = 180
    ue_max: int = 300
    ue_height_m: float = 1.5
    ue_placement: str = "uniform"       # "uniform" or "cluster"
    n_clusters: int = 4
    cluster_std_m: float = 200.0
    churn_prob: float = 0.0             # per-UE Bernoulli swap chance per step
    near_band_m: float = 300.0
    medium_band_m: float = 600.0
    interest_radius_m: float = 800.0
    slice_mix_embb: float = 0.4
    slice_mix_urllc: float = 0.3
    slice_mix_mmtc: float = 0.3

    def validate(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max
                and self.h_min < self.h_max):
            raise ConfigError("scenario: box bounds must be strictly ordered")
        if not 1 <= self.ue_min <= self.ue_max:
            raise ConfigError("scenario: need 1 <= ue_min <= ue_max")
        if self.n_uav < 1:
            raise ConfigError("scenario.n_uav must be >= 1")
        if not 0.0 < self.near_band_m < self.medium_band_m:
            raise ConfigError("scenario: need 0 < near_band_m < medium_band_m")
        if self.ue_placement not in ("uniform", "cluster"):
            raise ConfigError(f"scenario.ue_placement {self.ue_placement!r} unknown")
        mix = self.slice_mix_embb + self.slice_mix_urllc + self.slice_mix_mmtc
        if abs(mix - 1.0) > 1e-9:
            raise ConfigError("scenario: slice mix fractions must sum to 1")
        if not 0.0 <= self.churn_prob < 1.0:
            raise ConfigError("scenario.churn_prob must be in [0, 1)")


@dataclass
class ResourceConfig:
    bandwidth_hz: float = 600e6
    n_rb: int = 1667
    p_min_w: float = 0.0
    p_max_w: float = 10.0
    v_max_ms: float = 20.0
    t_large_s: float = 1.0
    p_move_j_per_m: float = 20.0

    @property
    def rb_hz(self) -> float:
        return self.bandwidth_hz / self.n_rb

    def validate(self):
        if self.bandwidth_hz <= 0 or self.n_rb < 1:
            raise ConfigError("resources: bandwidth_hz > 0 and n_rb >= 1 required")
        if not 0 <= self.p_min_w < self.p_max_w:
            raise ConfigError("resources: need 0 <= p_min_w < p_max_w")
        if self.v_max_ms <= 0 or self.t_large_s <= 0:
            raise ConfigError("resources: v_max_ms and t_large_s must be > 0")


@dataclass
class RewardConfig:
    alpha: float = 2.0       # QoS weight
    beta: float = 0.8        # energy penalty weight
    gamma_fair: float = 0.5  # fairness weight
    satisfied_threshold: float = 0.9

    def validate(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma_fair < 0:
            raise ConfigError("reward weights must be non-negative")


@dataclass
class LearnerConfig:
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    gamma_discount: float = 0.99
    tau: float = 0.005
    buffer_capacity: int = 300_000
    batch_size: int = 256
    sigma0: float = 1.0
    sigma_decay: float = 0.981
    sigma_min: float = 0.005
    sigma_reset: float = 0.6
    episode_len: int = 200
    eval_every: int = 2000
    eval_episodes: int = 5
    actor_reg: float = 1e-3    # pre-squash magnitude penalty in the actor loss
    actor_warmup_steps: int = 0   # critic-only updates before actors move
    actor_update_every: int = 1   # actor/target step period in critic steps
    power_explore_eps: float = 0.1   # chance to resample power uniformly
    move_explore_eps: float = 0.0    # chance to resample movement uniformly
    n_step: int = 1                  # TD-target lookahead length
    # architecture knobs (paper fixes depth and roles; widths are free)
    embed_dim: int = 64
    n_heads: int = 4
    encoder_hidden: int = 128
    trunk_widths: tuple = (512, 512, 256, 256, 128)

    def validate(self):
        if not 0.0 <= self.gamma_discount < 1.0:
            raise ConfigError("learner.gamma_discount must be in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("learner.tau must be in (0, 1]")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ConfigError("learner: buffer_capacity >= batch_size >= 1 required")
        if not 0.0 < self.sigma_decay < 1.0:
            raise ConfigError("learner.sigma_decay must be in (0, 1)")
        if self.embed_dim % self.n_heads != 0:
            raise ConfigError("learner.embed_dim must be divisible by n_heads")
        if self.actor_reg < 0:
            raise ConfigError("learner.actor_reg must be >= 0")
        if self.actor_warmup_steps < 0:
            raise ConfigError("learner.actor_warmup_steps must be >= 0")
        if self.actor_update_every < 1:
            raise ConfigError("learner.actor_update_every must be >= 1")
        if not 0.0 <= self.power_explore_eps <= 1.0:
            raise ConfigError("learner.power_explore_eps must be in [0, 1]")
        if not 0.0 <= self.move_explore_eps <= 1.0:
            raise ConfigError("learner.move_explore_eps must be in [0, 1]")
        if self.n_step < 1:
            raise ConfigError("learner.n_step must be >= 1")


@dataclass
class RunConfig:
    steps: int = 50_000
    seed: int = 0
    out_dir: str = "runs/default"

    def validate(self):
        if self.steps < 1:
            raise ConfigError("run.steps must be >= 1")


def default_slices() -> dict:
    return {
        "embb": SliceProfile("embb", 10e6, 0.100, 0.95, 2.0,
                             0.6, 0.2, 0.2, 3.0, 1.5, 12000.0, 200.0),
        "urllc": SliceProfile("urllc", 1e6, 0.010, 0.999, 3.0,
                              0.2, 0.4, 0.4, 5.0, 1.5, 256.0, 100.0),
        "mmtc": SliceProfile("mmtc", 100e3, 1.0, 0.90, 1.0,
                             0.5, 0.3, 0.2, 0.0, 1.5, 128.0, 1.0),
    }


@dataclass
class ExperimentConfig:
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    resources: ResourceConfig = field(default_factory=ResourceConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    run: RunConfig = field(default_factory=RunConfig)
    slices: dict = field(default_factory=default_slices)

    def validate(self) -> "ExperimentConfig":
        for sect in (self.channel, self.scenario, self.resources,
                     self.reward, self.learner, self.run):
            sect.validate()
        if set(self.slices) != set(SLICE_NAMES):
            raise ConfigError(f"slices must be exactly {SLICE_NAMES}")
        for prof in self.slices.values():
            prof.validate()
        return self

    # -- flat key-value view ------------------------------------------------

    def to_flat(self) -> dict:
        out = {}
        for sect_name in ("channel", "scenario", "resources", "reward",
                          "learner", "run"):
            sect = getattr(self, sect_name)
            for f in fields(sect):
                out[f"{sect_name}.{f.name}"] = getattr(sect, f.name)
        for sname in SLICE_NAMES:
            prof = self.slices[sname]
            for f in fields(prof):
                if f.name == "name":
                    continue
                out[f"slice.{sname}.{f.name}"] = getattr(prof, f.name)
        return out

    def to_text(self) -> str:
        lines = [f"{k} = {_format_value(v)}" for k, v in self.to_flat().items()]
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        """Digest of everything that shapes results, excluding run.* knobs.

        Seed, step count, and output directory vary between runs of the
        same experiment, so they stay out of the hash; this is what lets
        a checkpoint be evaluated from a different output directory.
        """
        lines = [f"{k} = {_format_value(v)}"
                 for k, v in self.to_flat().items()
                 if not k.startswith("run.")]
        return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]

    def apply(self, overrides: dict) -> "ExperimentConfig":
        """Return a copy with dotted-key overrides applied and validated."""
        cfg = dataclasses.replace(
            self,
            channel=dataclasses.replace(self.channel),
            scenario=dataclasses.replace(self.scenario),
            resources=dataclasses.replace(self.resources),
            reward=dataclasses.replace(self.reward),
            learner=dataclasses.replace(self.learner),
            run=dataclasses.replace(self.run),
            slices={k: dataclasses.replace(v) for k, v in self.slices.items()},
        )
        for key, raw in overrides.items():
            target, attr = _resolve(cfg, key)
            default = getattr(target, attr)
            setattr(target, attr, _coerce(key, raw, default))
        return cfg.validate()


def _resolve(cfg: ExperimentConfig, key: str):
    parts = key.split(".")
    if len(parts) == 3 and parts[0] == "slice":
        _, sname, attr = parts
        if sname not in cfg.slices or attr == "name":
            raise ConfigError(f"unknown config key {key!r}")
        target = cfg.slices[sname]
    elif len(parts) == 2 and parts[0] in ("channel", "scenario", "resources",
                                          "reward", "learner", "run"):
        target = getattr(cfg, parts[0])
        attr = parts[1]
    else:
        raise ConfigError(f"unknown config key {key!r}")
    if not any(f.name == attr for f in fields(target)):
        raise ConfigError(f"unknown config key {key!r}")
    return target, attr


def _coerce(key: str, raw, default):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(x) for x in raw.strip("()[] ").split(",") if x.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def parse_config_text(text: str, source: str = "<string>") -> ExperimentConfig:
    overrides = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        try:
            overrides[key] = value.strip()
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from exc
    try:
        return ExperimentConfig().apply(overrides)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def parse_config(path: str | None) -> ExperimentConfig:
    """Load a config file (or pure defaults for None) plus env overrides."""
    if path is None:
        cfg = ExperimentConfig().validate()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = parse_config_text(fh.read(), source=path)
    env = {}
    for name, value in os.environ.items():
        if name.startswith(ENV_PREFIX):
            env[name[len(ENV_PREFIX):].replace("__", ".")] = value
    if env:
        cfg = cfg.apply(env)
    return cfg
