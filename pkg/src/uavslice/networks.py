"""Actor and shared-critic architectures built on the autodiff core.

The actor encodes a UAV's 80-wide observation through three specialized
encoders (own state, the nine demand areas, surrounding context), runs
self-attention over the DA embeddings, and emits the 13-wide action:
movement (tanh), power (sigmoid), and bandwidth logits.

The critic embeds every agent's (observation, action) pair, applies
multi-head self-attention across agents, and scores the id-ordered
concatenation with a six-layer feedforward trunk.
"""

from __future__ import annotations

import numpy as np

from .environment import ACT_DIM, N_DA, OBS_DIM, DA_FEATURES
from .nn import MLP, Adam, Dense, MultiHeadAttention, Tensor, concat

STATE_SLICE = slice(0, 4)
DA_SLICE = slice(4, 4 + N_DA * DA_FEATURES)
CONTEXT_SLICE = slice(4 + N_DA * DA_FEATURES, OBS_DIM)


class ActorNetwork:
    """Deterministic policy pi(o) -> a for one UAV."""

    def __init__(self, cfg, rng: np.random.Generator):
        e, h = cfg.embed_dim, cfg.encoder_hidden
        self.state_enc = Dense(4, e, "relu", rng)
        self.da_enc = MLP([DA_FEATURES, h, h, e], rng, out_activation="relu")
        self.ctx_enc = Dense(OBS_DIM - DA_SLICE.stop, e, "relu", rng)
        self.attention = MultiHeadAttention(e, cfg.n_heads, rng)
        self.trunk = Dense(3 * e, h, "relu", rng)
        # small final-layer scale keeps initial actions near the midpoint;
        # heads are linear so the update rule can see pre-squash magnitudes
        self.move_head = Dense(h, 3, "identity", rng, scale=0.1)
        self.power_head = Dense(h, 1, "identity", rng, scale=0.1)
        self.bw_head = Dense(h, N_DA, "identity", rng, scale=0.1)

    def forward(self, obs: Tensor, with_preact: bool = False):
        """obs (B, 80) -> action (B, 13), optionally with pre-squash values."""
        if obs.shape[-1] != OBS_DIM:
            raise ValueError(f"actor expects width {OBS_DIM}")
        batch = obs.shape[0]
        state = self.state_enc(obs[:, STATE_SLICE])
        tokens = self.da_enc(obs[:, DA_SLICE].reshape(batch, N_DA, DA_FEATURES))
        attended = self.attention(tokens)
        da_pool = attended.mean(axis=1)
        ctx = self.ctx_enc(obs[:, CONTEXT_SLICE])
        feat = self.trunk(concat([state, da_pool, ctx], axis=-1))
        preact = concat([self.move_head(feat), self.power_head(feat),
                         self.bw_head(feat)], axis=-1)
        bw = preact[:, 4:4 + N_DA]
        # zero-mean logits are the canonical bandwidth representation:
        # softmax is shift-invariant, and centering keeps replayed noisy
        # actions and live actor outputs on the same scale for the critic
        bw_centered = bw - bw.mean(axis=-1).reshape(batch, 1)
        action = concat([preact[:, 0:3].tanh(), preact[:, 3:4].sigmoid(),
                         bw_centered], axis=-1)
        if with_preact:
            return action, preact
        return action

    def act(self, obs_vec: np.ndarray) -> np.ndarray:
        """Single noise-free action from a raw observation vector."""
        out = self.forward(Tensor(obs_vec.reshape(1, -1)))
        out.assert_finite("actor output")
        return out.data[0].copy()

    def parameters(self, prefix="actor."):
        out = self.state_enc.parameters(prefix + "state.")
        out += self.da_enc.parameters(prefix + "da.")
        out += self.ctx_enc.parameters(prefix + "ctx.")
        out += self.attention.parameters(prefix + "attn.")
        out += self.trunk.parameters(prefix + "trunk.")
        out += self.move_head.parameters(prefix + "move.")
        out += self.power_head.parameters(prefix + "power.")
        out += self.bw_head.parameters(prefix + "bw.")
        return out


class SharedCritic:
    """Centralized Q(joint obs, joint action) with inter-agent attention."""

    def __init__(self, cfg, n_agents: int, rng: np.random.Generator):
        e = cfg.embed_dim
        self.n_agents = n_agents
        self.embedders = [Dense(OBS_DIM + ACT_DIM, e, "relu", rng)
                          for _ in range(n_agents)]
        self.attention = MultiHeadAttention(e, cfg.n_heads, rng)
        self.trunk = MLP([n_agents * e, *cfg.trunk_widths, 1], rng)

    def forward(self, obs: Tensor, actions: Tensor) -> Tensor:
        """obs (B, U, 80), actions (B, U, 13) -> Q (B, 1)."""
        if obs.shape[1] != self.n_agents:
            raise ValueError("critic: agent count mismatch")
        batch = obs.shape[0]
        tokens = []
        for u, emb in enumerate(self.embedders):
            pair = concat([obs[:, u, :], actions[:, u, :]], axis=-1)
            tokens.append(emb(pair).reshape(batch, 1, -1))
        attended = self.attention(concat(tokens, axis=1))
        flat = attended.reshape(batch, -1)
        return self.trunk(flat)

    def parameters(self, prefix="critic."):
        out = []
        for u, emb in enumerate(self.embedders):
            out += emb.parameters(f"{prefix}embed{u}.")
        out += self.attention.parameters(prefix + "attn.")
        out += self.trunk.parameters(prefix + "trunk.")
        return out


def named_arrays(net, prefix=None) -> dict:
    params = net.parameters() if prefix is None else net.parameters(prefix)
    return {name: p.data for name, p in params}


def copy_into(dst, src):
    """Hard-copy parameters from one network into an identically shaped one."""
    for (_, pd), (_, ps) in zip(dst.parameters(), src.parameters()):
        pd.data = ps.data.copy()


def soft_update(main, target, tau: float):
    """theta' <- tau * theta + (1 - tau) * theta', element-wise."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must be in [0, 1]")
    for (_, pm), (_, pt) in zip(main.parameters(), target.parameters()):
        if pm.data.shape != pt.data.shape:
            raise ValueError("soft_update: parameter shape mismatch")
        pt.data = tau * pm.data + (1.0 - tau) * pt.data


def make_optimizer(net, lr: float) -> Adam:
    return Adam(net.parameters(), lr)
