"""Centralized-training decentralized-execution learner.

Per-agent deterministic actors, one shared attention critic, target
networks, a uniform replay buffer, and decaying Gaussian/Dirichlet
exploration noise, trained with the usual deterministic-policy-gradient
update pair: a TD-regression step on the critic followed by one ascent
step per actor through the frozen critic.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import networks
from .config import ExperimentConfig
from .environment import ACT_DIM, OBS_DIM, World
from .nn import Tensor, concat, load_arrays, save_arrays


class ReplayBuffer:
    """Ring buffer of shared-reward transitions with uniform sampling."""

    def __init__(self, capacity: int, n_agents: int):
        self.capacity = capacity
        self.n_agents = n_agents
        self.obs = np.zeros((capacity, n_agents, OBS_DIM))
        self.act = np.zeros((capacity, n_agents, ACT_DIM))
        self.rew = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, n_agents, OBS_DIM))
        self.epi = np.full(capacity, -1, dtype=np.int64)
        self.size = 0
        self.head = 0

    def push(self, obs, act, reward, next_obs, episode: int = 0):
        reward = float(reward)   # one shared scalar for every agent
        self.obs[self.head] = obs
        self.act[self.head] = act
        self.rew[self.head] = reward
        self.next_obs[self.head] = next_obs
        self.epi[self.head] = episode
        self.head = (self.head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.choice(self.size, size=min(batch_size, self.size),
                         replace=False)
        return (self.obs[idx], self.act[idx], self.rew[idx],
                self.next_obs[idx])

    def sample_nstep(self, batch_size: int, rng: np.random.Generator,
                     n: int, gamma: float):
        """Sample n-step transitions; chains stop at episode or write edges.

        Returns (obs, act, ret, next_obs, boot) where ret accumulates
        sum_{k<m} gamma^k r_k along m <= n consecutive same-episode steps
        and boot = gamma^m is the weight for bootstrapping from the m-th
        next observation.
        """
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.choice(self.size, size=min(batch_size, self.size),
                         replace=False)
        ret = np.zeros(len(idx))
        boot = np.ones(len(idx))
        last = np.empty(len(idx), dtype=np.int64)
        for row, i in enumerate(idx):
            j = i
            for k in range(n):
                ret[row] += boot[row] * self.rew[j]
                boot[row] *= gamma
                nxt = (j + 1) % self.capacity
                # stop before crossing into another episode or the write
                # head (the slot about to be overwritten breaks adjacency)
                if (k == n - 1 or nxt == self.head
                        or self.epi[nxt] != self.epi[i]):
                    break
                j = nxt
            last[row] = j
        return (self.obs[idx], self.act[idx], ret,
                self.next_obs[last], boot)

    def __len__(self):
        return self.size


class NoiseSchedule:
    """Exponentially decaying sigma with a single re-exploration reset."""

    def __init__(self, sigma0, decay, sigma_min, reset_value):
        self.sigma0 = sigma0
        self.decay = decay
        self.sigma_min = sigma_min
        self.reset_value = reset_value
        self.episode = 0
        self.reset_episode = None   # episode index at which the reset fired

    @property
    def sigma(self) -> float:
        if self.reset_episode is None:
            base = self.sigma0 * self.decay ** self.episode
        else:
            base = self.reset_value * self.decay ** (
                self.episode - self.reset_episode)
        return max(self.sigma_min, base)

    def advance(self):
        """Advance one episode; fire the one-time reset at the floor."""
        self.episode += 1
        if (self.reset_episode is None
                and self.sigma0 * self.decay ** self.episode <= self.sigma_min):
            self.reset_episode = self.episode

    def state(self) -> dict:
        return {"episode": self.episode, "reset_episode": self.reset_episode}

    def load_state(self, state: dict):
        self.episode = state["episode"]
        self.reset_episode = state["reset_episode"]


def select_action(actor, obs_vec: np.ndarray, sigma: float,
                  rng: np.random.Generator,
                  power_eps: float = 0.0,
                  move_eps: float = 0.0) -> np.ndarray:
    """Noisy action: Gaussian on movement/power, Dirichlet mix on bandwidth.

    With probability power_eps (move_eps) the power entry (movement block)
    is redrawn uniformly; the clipped Gaussian alone cannot revisit distant
    actions once the policy has drifted away from them, so the critic never
    unlearns a stale estimate there.
    """
    if not np.all(np.isfinite(obs_vec)):
        raise ValueError("non-finite observation")
    action = actor.act(obs_vec)
    if sigma <= 0:
        return action
    if rng.uniform() < move_eps:
        action[:3] = rng.uniform(-1.0, 1.0, 3)
    else:
        action[:3] = np.clip(action[:3] + rng.normal(0.0, sigma, 3),
                             -1.0, 1.0)
    if rng.uniform() < power_eps:
        action[3] = rng.uniform()
    else:
        action[3] = np.clip(action[3] + rng.normal(0.0, sigma), 0.0, 1.0)
    logits = action[4:13]
    pi = np.exp(logits - logits.max())
    pi /= pi.sum()
    eps = min(1.0, sigma)
    mixed = (1.0 - eps) * pi + eps * rng.dirichlet(np.ones(9))
    # hand the softmax decoder the mixture exactly, as zero-mean logits so
    # replayed actions stay on the live actor's output scale; the floor
    # keeps a degenerate Dirichlet component from producing a huge logit
    logits = np.log(np.maximum(mixed, 1e-9))
    action[4:13] = logits - logits.mean()
    return action


class MADDPG:
    """Networks, optimizers, and the two update rules."""

    def __init__(self, cfg: ExperimentConfig, n_agents: int, seed: int):
        lc = cfg.learner
        self.cfg = cfg
        self.n_agents = n_agents
        ss = np.random.SeedSequence(seed)
        keys = ss.spawn(2 * n_agents + 2)
        self.actors = [networks.ActorNetwork(lc, np.random.default_rng(keys[i]))
                       for i in range(n_agents)]
        self.target_actors = [
            networks.ActorNetwork(lc, np.random.default_rng(keys[n_agents + i]))
            for i in range(n_agents)]
        for main, tgt in zip(self.actors, self.target_actors):
            networks.copy_into(tgt, main)
        self.critic = networks.SharedCritic(
            lc, n_agents, np.random.default_rng(keys[-2]))
        self.target_critic = networks.SharedCritic(
            lc, n_agents, np.random.default_rng(keys[-1]))
        networks.copy_into(self.target_critic, self.critic)
        self.actor_opts = [networks.make_optimizer(a, lc.actor_lr)
                           for a in self.actors]
        self.critic_opt = networks.make_optimizer(self.critic, lc.critic_lr)

    def _target_actions(self, next_obs: np.ndarray) -> np.ndarray:
        out = np.empty((next_obs.shape[0], self.n_agents, ACT_DIM))
        for u, actor in enumerate(self.target_actors):
            out[:, u, :] = actor.forward(Tensor(next_obs[:, u, :])).data
        return out

    def critic_update(self, batch) -> float:
        """One TD-regression Adam step on the shared critic.

        Accepts either a 1-step batch (obs, act, r, next_obs) or an n-step
        batch (obs, act, ret, next_obs, boot) with per-row bootstrap
        weights gamma^m from ReplayBuffer.sample_nstep.
        """
        gamma = self.cfg.learner.gamma_discount
        if len(batch) == 5:
            obs, act, rew, next_obs, boot = batch
        else:
            obs, act, rew, next_obs = batch
            boot = gamma
        if len(rew) == 0:
            raise ValueError("empty batch")
        next_a = self._target_actions(next_obs)
        q_next = self.target_critic.forward(
            Tensor(next_obs), Tensor(next_a)).data[:, 0]
        y = rew + boot * q_next                        # no gradient flows here
        # rewards are bounded by the weighted unit components, so the
        # discounted return is too; clamping the target blocks the
        # bootstrap feedback loop from inflating Q without limit
        rc = self.cfg.reward
        horizon = 1.0 / (1.0 - gamma) if gamma < 1.0 else 1.0
        y = np.clip(y, -rc.beta * horizon,
                    (rc.alpha + rc.gamma_fair) * horizon)
        self.critic_opt.zero_grad()
        q = self.critic.forward(Tensor(obs), Tensor(act))
        diff = q - Tensor(y.reshape(-1, 1))
        loss = diff.square().mean()
        loss.backward()
        self.critic_opt.step()
        return float(loss.data)

    def actor_update(self, batch, agent: int) -> float:
        """Ascend Q through the critic for one agent; others stay frozen."""
        obs, act = batch[0], batch[1]
        if len(obs) == 0:
            raise ValueError("empty batch")
        opt = self.actor_opts[agent]
        opt.zero_grad()
        live, preact = self.actors[agent].forward(
            Tensor(obs[:, agent, :]), with_preact=True)
        batch_n = obs.shape[0]
        parts = []
        if agent > 0:
            parts.append(Tensor(act[:, :agent, :]))
        parts.append(live.reshape(batch_n, 1, ACT_DIM))
        if agent < self.n_agents - 1:
            parts.append(Tensor(act[:, agent + 1:, :]))
        joint = concat(parts, axis=1)
        q = self.critic.forward(Tensor(obs), joint)
        loss = -q.mean()
        reg = self.cfg.learner.actor_reg
        if reg > 0:
            # keep pre-squash outputs small so tanh/sigmoid never saturate
            # into a zero-gradient corner the policy cannot escape from
            loss = loss + Tensor(np.array(reg)) * preact.square().mean()
        loss.backward()
        opt.step()
        # the critic accumulated gradients as a conduit; drop them
        self.critic_opt.zero_grad()
        return float(loss.data)

    def soft_update_targets(self, tau: float | None = None):
        tau = self.cfg.learner.tau if tau is None else tau
        for main, tgt in zip(self.actors, self.target_actors):
            networks.soft_update(main, tgt, tau)
        networks.soft_update(self.critic, self.target_critic, tau)

    # -- persistence --------------------------------------------------------

    def parameter_blocks(self) -> dict:
        blocks = {}
        for u, actor in enumerate(self.actors):
            blocks.update(networks.named_arrays(actor, f"actor{u}."))
        for u, actor in enumerate(self.target_actors):
            blocks.update(networks.named_arrays(actor, f"target_actor{u}."))
        blocks.update(networks.named_arrays(self.critic, "critic."))
        blocks.update(networks.named_arrays(self.target_critic,
                                            "target_critic."))
        return blocks

    def load_blocks(self, blocks: dict):
        for name, param in self._all_named():
            if name not in blocks:
                raise ValueError(f"checkpoint missing block {name!r}")
            if blocks[name].shape != param.data.shape:
                raise ValueError(f"checkpoint block {name!r} shape mismatch")
            param.data = blocks[name].copy()

    def _all_named(self):
        out = []
        for u, actor in enumerate(self.actors):
            out += actor.parameters(f"actor{u}.")
        for u, actor in enumerate(self.target_actors):
            out += actor.parameters(f"target_actor{u}.")
        out += self.critic.parameters("critic.")
        out += self.target_critic.parameters("target_critic.")
        return out

    def save_checkpoint(self, path: str, manifest: dict):
        save_arrays(path, self.parameter_blocks())
        with open(path + ".manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def load_checkpoint(self, path: str) -> dict:
        self.load_blocks(load_arrays(path))
        manifest_path = path + ".manifest.json"
        if os.path.exists(manifest_path):
            with open(manifest_path, "r", encoding="utf-8") as fh:
                return json.load(fh)
        return {}


def evaluate(learner_actors, cfg: ExperimentConfig, seed: int,
             n_episodes: int, episode_len: int) -> list[dict]:
    """Noise-free rollouts; one aggregate row per episode."""
    rows = []
    for ep in range(n_episodes):
        world = World(cfg, seed + ep)
        obs = world.joint_observation()
        acc = {"reward": 0.0, "qos": 0.0, "energy": 0.0, "fairness": 0.0,
               "mean_energy_j": 0.0, "satisfied_fraction": 0.0}
        for _ in range(episode_len):
            actions = np.stack([actor.act(obs[u])
                                for u, actor in enumerate(learner_actors)])
            obs, metrics, _ = world.step(actions)
            acc["reward"] += metrics.total
            acc["qos"] += metrics.qos
            acc["energy"] += metrics.energy
            acc["fairness"] += metrics.fairness
            acc["mean_energy_j"] += metrics.mean_energy_j
            acc["satisfied_fraction"] += metrics.satisfied_fraction
        rows.append({k: v / episode_len for k, v in acc.items()}
                    | {"episode": ep, "seed": seed + ep})
    return rows


def train(cfg: ExperimentConfig, metrics_sink=None, eval_sink=None,
          progress=None):
    """Run the full training loop; returns (learner, eval history)."""
    lc, rc = cfg.learner, cfg.run
    ss = np.random.SeedSequence(rc.seed)
    env_key, noise_key, sample_key, net_key = ss.spawn(4)
    noise_rng = np.random.default_rng(noise_key)
    sample_rng = np.random.default_rng(sample_key)
    env_seeds = np.random.default_rng(env_key)
    eval_seed_base = rc.seed * 1_000_003 + 777

    world = World(cfg, int(env_seeds.integers(2**31)))
    obs = world.joint_observation()
    learner = MADDPG(cfg, world.n_uav, int(net_key.generate_state(1)[0]))
    buffer = ReplayBuffer(lc.buffer_capacity, world.n_uav)
    schedule = NoiseSchedule(lc.sigma0, lc.sigma_decay, lc.sigma_min,
                             lc.sigma_reset)
    eval_history = []
    episode = 0
    for step in range(1, rc.steps + 1):
        sigma = schedule.sigma
        actions = np.stack([
            select_action(learner.actors[u], obs[u], sigma, noise_rng,
                          lc.power_explore_eps, lc.move_explore_eps)
            for u in range(world.n_uav)])
        next_obs, metrics, _ = world.step(actions)
        buffer.push(obs, actions, metrics.total, next_obs, episode)
        obs = next_obs

        critic_loss = actor_loss = float("nan")
        if len(buffer) > lc.batch_size:
            if lc.n_step > 1:
                batch = buffer.sample_nstep(lc.batch_size, sample_rng,
                                            lc.n_step, lc.gamma_discount)
            else:
                batch = buffer.sample(lc.batch_size, sample_rng)
            critic_loss = learner.critic_update(batch)
            if not np.isfinite(critic_loss):
                raise FloatingPointError(
                    f"NaN critic loss at step {step}; sigma={sigma}")
            # a warmup of critic-only updates keeps a still-random value
            # landscape from driving the actors into saturated corners,
            # and a spaced policy step lets the critic track in between
            if (step > lc.actor_warmup_steps
                    and step % lc.actor_update_every == 0):
                actor_losses = [learner.actor_update(batch, u)
                                for u in range(world.n_uav)]
                actor_loss = float(np.mean(actor_losses))
                if not np.isfinite(actor_loss):
                    raise FloatingPointError(
                        f"NaN actor loss at step {step}")
            learner.soft_update_targets()

        if metrics_sink is not None:
            metrics_sink(step=step, episode=episode, metrics=metrics,
                         sigma=sigma, critic_loss=critic_loss,
                         actor_loss=actor_loss)
        if step % lc.episode_len == 0:
            episode += 1
            schedule.advance()
            world = World(cfg, int(env_seeds.integers(2**31)))
            obs = world.joint_observation()
        if step % lc.eval_every == 0:
            rows = evaluate(learner.actors, cfg, eval_seed_base,
                            lc.eval_episodes, lc.episode_len)
            mean_reward = float(np.mean([r["reward"] for r in rows]))
            eval_history.append({"step": step, "reward": mean_reward,
                                 "rows": rows})
            if eval_sink is not None:
                eval_sink(step=step, rows=rows)
            if progress is not None:
                progress(step=step, eval_reward=mean_reward, sigma=sigma)

    return learner, eval_history
