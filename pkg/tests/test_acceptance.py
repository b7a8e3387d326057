"""Acceptance gate: one test per release criterion.

Each test finishes by printing a single PASS line for its criterion (a
raised assertion means FAIL).  The learning check trains three seeded
runs end to end and is by far the slowest test in the suite.
"""

import math
import sys
import time

import numpy as np
import pytest

from uavslice import channel as ch
from uavslice import maddpg as M
from uavslice.baselines import BaselinePolicy
from uavslice.cli import main as cli_main
from uavslice.config import ExperimentConfig
from uavslice.environment import ACT_DIM, N_DA, World
from uavslice.maddpg import MADDPG, ReplayBuffer
from uavslice.networks import soft_update
from uavslice.nn import Tensor


def report(name: str):
    print(f"ACCEPTANCE {name}: PASS", file=sys.__stderr__, flush=True)


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


# ---------------------------------------------------------------------------
# channel oracle suite
# ---------------------------------------------------------------------------

def _oracle_plos(theta, a, b):
    return 1.0 / (1.0 + a * math.exp(-b * (theta - a)))


def _oracle_path_loss(d, theta, cfg):
    lam = ch.SPEED_OF_LIGHT / cfg.carrier_hz
    fspl = 20.0 * math.log10(4.0 * math.pi * d / lam)
    p = _oracle_plos(theta, cfg.los_a, cfg.los_b)
    return fspl + cfg.eta_los_db * p + cfg.eta_nlos_db * (1.0 - p)


def _oracle_rx_w(p_tx, uav, ue, cfg):
    d = math.dist(uav, ue)
    theta = math.degrees(math.asin(min(1.0, (uav[2] - ue[2]) / d)))
    return p_tx * 10.0 ** (-_oracle_path_loss(d, theta, cfg) / 10.0)


def test_channel_oracle_suite():
    t0 = time.time()
    cfg = ExperimentConfig().channel
    rng = np.random.default_rng(2024)

    # closed-form spot value: theta = a makes the exponent vanish
    assert abs(ch.los_probability(4.88, 4.88, 0.43) - 1.0 / 5.88) < 1e-12

    for _ in range(120):
        theta = rng.uniform(1.0, 90.0)
        a = rng.uniform(1.0, 20.0)
        b = rng.uniform(0.05, 2.0)
        assert rel_err(ch.los_probability(theta, a, b),
                       _oracle_plos(theta, a, b)) < 1e-9

        d = rng.uniform(10.0, 5000.0)
        lam = ch.SPEED_OF_LIGHT / cfg.carrier_hz
        assert rel_err(ch.free_space_path_loss_db(d, lam),
                       20.0 * math.log10(4.0 * math.pi * d / lam)) < 1e-9

        p = _oracle_plos(theta, cfg.los_a, cfg.los_b)
        want = cfg.eta_los_db * p + cfg.eta_nlos_db * (1.0 - p)
        got = ch.excess_path_loss(theta, cfg.eta_los_db, cfg.eta_nlos_db,
                                  cfg.los_a, cfg.los_b)
        assert rel_err(got, want) < 1e-9

        geom = ch.LinkGeometry(d, theta, lam)
        assert rel_err(ch.path_loss_db(geom, cfg),
                       _oracle_path_loss(d, theta, cfg)) < 1e-9

        bw = rng.uniform(1e5, 1e8)
        s = rng.uniform(0.01, 1e4)
        assert rel_err(ch.throughput_bps(bw, s),
                       bw * math.log2(1.0 + s)) < 1e-9

    # SINR against a scalar double-loop oracle
    for _ in range(120):
        n = int(rng.integers(1, 5))
        uavs = np.column_stack([rng.uniform(0, 2000, n),
                                rng.uniform(0, 2000, n),
                                rng.uniform(100, 400, n)])
        powers = rng.uniform(0.5, 10.0, n)
        ue = np.array([*rng.uniform(0, 2000, 2), 1.5])
        k = int(rng.integers(0, n))
        bw = rng.uniform(1e5, 1e7)
        rx = [_oracle_rx_w(powers[u], uavs[u], ue, cfg) for u in range(n)]
        want = rx[k] / (sum(rx) - rx[k] + cfg.noise_psd_w_hz * bw)
        got = ch.sinr(ue, k, uavs, powers, bw, cfg.noise_psd_w_hz, cfg)
        assert rel_err(got, want) < 1e-9

    # delay and reliability decompositions against scalar arithmetic
    for _ in range(120):
        d = rng.uniform(100, 3000)
        thr = rng.uniform(1e4, 1e8)
        bits = rng.uniform(100, 20000)
        lam_pkt = rng.uniform(1, 500)
        per = rng.uniform(0.0, 0.9)
        bd = ch.delay_total(d, thr, bits, lam_pkt, per, handover=False,
                            cfg=cfg)
        d_trans = min(cfg.delay_ceiling_s, bits / thr)
        rho = lam_pkt * bits / thr
        mu = thr / bits
        if rho >= 1.0:
            d_queue = cfg.delay_ceiling_s
        else:
            d_queue = min(cfg.delay_ceiling_s, rho / (2.0 * mu * (1.0 - rho)))
        want = (d / ch.SPEED_OF_LIGHT + d_trans
                + d_trans * (per + per ** 2 + per ** 3)
                + d_queue + cfg.processing_delay_s)
        assert rel_err(bd.total_s, want) < 1e-9

        p_drop = min(1.0, rho ** cfg.buffer_packets) if rho < 1 else 1.0
        got_rel = ch.reliability(per, p_drop).reliability
        assert rel_err(got_rel, (1.0 - per) ** 4 * (1.0 - p_drop)) < 1e-9

    elapsed = time.time() - t0
    assert elapsed < 5.0, f"oracle suite took {elapsed:.1f}s"
    report("channel-oracle-suite")


# ---------------------------------------------------------------------------
# reward algebra
# ---------------------------------------------------------------------------

def test_reward_algebra():
    rng = np.random.default_rng(7)
    base = ExperimentConfig()
    worlds = 0
    while worlds < 1000:
        n_uav = int(rng.integers(1, 4))
        n_ue = int(rng.integers(4, 25))
        cfg = base.apply({"scenario.n_uav": n_uav, "scenario.ue_min": n_ue,
                          "scenario.ue_max": n_ue})
        world = World(cfg, seed=int(rng.integers(2**31)))
        action = rng.uniform(-1, 1, (n_uav, ACT_DIM))
        _, metrics, _ = world.step(action)
        assert 0.0 <= metrics.qos <= 1.0
        assert 0.0 <= metrics.energy <= 1.0
        assert 0.0 <= metrics.fairness <= 1.0
        recomposed = (cfg.reward.alpha * metrics.qos
                      - cfg.reward.beta * metrics.energy
                      + cfg.reward.gamma_fair * metrics.fairness)
        assert abs(metrics.total - recomposed) < 1e-9
        worlds += 1

    # Jain identities, exact
    for n in (1, 2, 5, 8):
        world = World(base.apply({"scenario.n_uav": 1, "scenario.ue_min": n,
                                  "scenario.ue_max": n}), seed=0)
        t_min = np.array([world.slice_list[s].t_min_bps
                          for s in world.ue_slice])
        world.throughput = 0.7 * t_min           # equal capped ratios
        assert world.fairness_index() == 1.0
        world.throughput = np.zeros(n)
        world.throughput[0] = 2.0 * t_min[0]     # one-hot, capped at 1
        assert world.fairness_index() == 1.0 / n
    report("reward-algebra")


# ---------------------------------------------------------------------------
# constraint fuzz
# ---------------------------------------------------------------------------

def test_constraint_fuzz():
    t0 = time.time()
    rng = np.random.default_rng(99)
    cfg = ExperimentConfig().apply({"scenario.n_uav": 3,
                                    "scenario.ue_min": 10,
                                    "scenario.ue_max": 10})
    world = World(cfg, seed=1)
    n_rb = cfg.resources.n_rb
    for i in range(10_000):
        actions = rng.uniform(-3.0, 3.0, (3, ACT_DIM))   # beyond valid range
        world.apply_joint_action(np.clip(actions, -1.0, 1.0))
        assert world.constraint_violations() == []
        for uav in world.uavs:
            assert uav.rb_alloc.sum() == n_rb
        if i % 2000 == 1999:
            world = World(cfg, seed=1 + i)
    elapsed = time.time() - t0
    assert elapsed < 30.0, f"constraint fuzz took {elapsed:.1f}s"
    report("constraint-fuzz")


# ---------------------------------------------------------------------------
# gradient checks
# ---------------------------------------------------------------------------

def _fd_probe_all(params, loss_fn, grads, rng, n_probes, h=1e-5, tol=1e-4):
    flat = [(p, i) for _, p in params for i in
            rng.choice(p.data.size, size=min(3, p.data.size), replace=False)]
    order = rng.permutation(len(flat))[:n_probes]
    for j in order:
        p, i = flat[j]
        orig = p.data.flat[i]
        p.data.flat[i] = orig + h
        up = loss_fn()
        p.data.flat[i] = orig - h
        down = loss_fn()
        p.data.flat[i] = orig
        numeric = (up - down) / (2.0 * h)
        analytic = grads[id(p)].flat[i]
        # the absolute floor keeps central-difference roundoff (~1e-11 at
        # h=1e-5 in float64) from failing near-zero gradients
        denom = max(abs(numeric), abs(analytic), 1e-6)
        assert abs(numeric - analytic) / denom < tol


def test_gradient_checks():
    t0 = time.time()
    cfg = ExperimentConfig().apply({
        "learner.embed_dim": 16, "learner.n_heads": 2,
        "learner.encoder_hidden": 24, "learner.trunk_widths": "32,24,16,16,8",
        "learner.actor_reg": 0.0})
    learner = MADDPG(cfg, n_agents=2, seed=11)
    rng = np.random.default_rng(12)
    obs = rng.uniform(-1, 2, (3, 2, 80))
    act = rng.uniform(-1, 1, (3, 2, ACT_DIM))

    # critic full graph
    def critic_loss():
        return float(learner.critic.forward(
            Tensor(obs), Tensor(act)).mean().data)

    learner.critic_opt.zero_grad()
    learner.critic.forward(Tensor(obs), Tensor(act)).mean().backward()
    params = learner.critic.parameters()
    grads = {id(p): p.grad.copy() for _, p in params}
    _fd_probe_all(params, critic_loss, grads, rng, n_probes=100)

    # actor full graph through the frozen critic (the actual update loss)
    def actor_loss():
        live = learner.actors[0].forward(Tensor(obs[:, 0, :])).data
        joint = act.copy()
        joint[:, 0, :] = live
        return -float(learner.critic.forward(
            Tensor(obs), Tensor(joint)).mean().data)

    from uavslice.nn import concat
    learner.actor_opts[0].zero_grad()
    live = learner.actors[0].forward(Tensor(obs[:, 0, :]))
    joint = concat([live.reshape(3, 1, ACT_DIM), Tensor(act[:, 1:, :])],
                   axis=1)
    (-learner.critic.forward(Tensor(obs), joint).mean()).backward()
    params = learner.actors[0].parameters()
    grads = {id(p): p.grad.copy() for _, p in params}
    _fd_probe_all(params, actor_loss, grads, rng, n_probes=100)

    # update isolation: one actor step leaves everything else byte-identical
    batch = (obs, act, rng.normal(size=3), rng.uniform(-1, 2, (3, 2, 80)))
    critic_bytes = [p.data.tobytes() for _, p in learner.critic.parameters()]
    other_bytes = [p.data.tobytes() for _, p in learner.actors[1].parameters()]
    learner.actor_update(batch, 0)
    assert [p.data.tobytes()
            for _, p in learner.critic.parameters()] == critic_bytes
    assert [p.data.tobytes()
            for _, p in learner.actors[1].parameters()] == other_bytes

    elapsed = time.time() - t0
    assert elapsed < 120.0, f"gradient checks took {elapsed:.1f}s"
    report("gradient-checks")


# ---------------------------------------------------------------------------
# learner mechanics
# ---------------------------------------------------------------------------

def test_maddpg_mechanics():
    # soft update scalar case: 1 -> 0.005 at tau = 0.005
    class Scalar:
        def __init__(self, v):
            self.p = Tensor(np.array([v]), requires_grad=True)

        def parameters(self, prefix=""):
            return [("w", self.p)]

    main, tgt = Scalar(1.0), Scalar(0.0)
    soft_update(main, tgt, 0.005)
    assert tgt.p.data[0] == 0.005

    # FIFO eviction and unique uniform samples
    buf = ReplayBuffer(capacity=8, n_agents=1)
    for r in range(12):
        buf.push(np.zeros((1, 80)), np.zeros((1, ACT_DIM)), float(r),
                 np.zeros((1, 80)))
    assert sorted(buf.rew.tolist()) == [float(r) for r in range(4, 12)]
    rng = np.random.default_rng(0)
    for _ in range(10):
        _, _, rew, _ = buf.sample(6, rng)
        assert len(set(rew.tolist())) == 6

    # gamma = 0 turns the TD target into the raw reward
    cfg = ExperimentConfig().apply({
        "learner.embed_dim": 8, "learner.n_heads": 2,
        "learner.encoder_hidden": 12, "learner.trunk_widths": "16,12,8,8,8",
        "learner.gamma_discount": 0.0})
    learner = MADDPG(cfg, 2, seed=5)
    rng = np.random.default_rng(5)
    obs = rng.uniform(0, 1, (4, 2, 80))
    act = rng.uniform(-1, 1, (4, 2, ACT_DIM))
    rew = rng.uniform(-0.5, 1.5, 4)   # inside the achievable reward band
    q0 = learner.critic.forward(Tensor(obs), Tensor(act)).data[:, 0]
    loss = learner.critic_update((obs, act, rew, obs))
    assert abs(loss - float(np.mean((rew - q0) ** 2))) < 1e-12

    # tau = 1 makes targets equal main networks exactly
    for _, p in learner.actors[0].parameters():
        p.data += 0.25
    learner.soft_update_targets(1.0)
    for (_, pm), (_, pt) in zip(learner.actors[0].parameters(),
                                learner.target_actors[0].parameters()):
        assert np.array_equal(pm.data, pt.data)
    report("maddpg-mechanics")


# ---------------------------------------------------------------------------
# scaled-down learning check
# ---------------------------------------------------------------------------

LEARN_FLAT = {
    "scenario.n_uav": 2,
    "scenario.ue_min": 30,
    "scenario.ue_max": 30,
    "scenario.ue_placement": "cluster",
    "learner.embed_dim": 16,
    "learner.n_heads": 2,
    "learner.encoder_hidden": 32,
    "learner.trunk_widths": "64,64,32,32,16",
    "learner.batch_size": 64,
    "learner.buffer_capacity": 50000,
    "learner.gamma_discount": 0.85,
    "learner.actor_lr": 3e-5,
    "learner.actor_warmup_steps": 6000,
    "learner.actor_update_every": 4,
    "learner.actor_reg": 1e-2,
    "learner.power_explore_eps": 0.25,
    "learner.move_explore_eps": 0.15,
    "learner.sigma_min": 0.05,
    "run.steps": 50000,
}
LEARN_SEEDS = (0, 1, 2)


def _eval_policy(cfg, seed, joint_fn):
    """Mean (reward, energy) over the same eval episodes train() uses."""
    ep_len = cfg.learner.episode_len
    eval_seed = seed * 1_000_003 + 777
    rows = []
    for ep in range(cfg.learner.eval_episodes):
        world = World(cfg, eval_seed + ep)
        obs = world.joint_observation()
        tot = np.zeros(2)
        for _ in range(ep_len):
            obs, m, _ = world.step(joint_fn(world, obs))
            tot += [m.total, m.energy]
        rows.append(tot / ep_len)
    return np.mean(rows, axis=0)


def _actor_fn(actors):
    return lambda world, obs: np.stack(
        [actors[u].act(obs[u]) for u in range(len(actors))])


@pytest.mark.slow
def test_scaled_down_learning_check():
    margins = []
    for seed in LEARN_SEEDS:
        cfg = ExperimentConfig().apply(LEARN_FLAT | {"run.seed": seed})

        rand_pol = BaselinePolicy("random", seed=seed)
        random_reward, _ = _eval_policy(
            cfg, seed, lambda w, o: rand_pol.joint_action(w))
        cov_pol = BaselinePolicy("coverage", seed=seed)
        _, coverage_energy = _eval_policy(
            cfg, seed, lambda w, o: cov_pol.joint_action(w))

        learner, history = M.train(cfg)
        # actors are frozen during the critic warmup, so the first recorded
        # eval is exactly the untrained actor's noise-free performance
        assert cfg.learner.actor_warmup_steps >= cfg.learner.eval_every
        untrained_reward = history[0]["reward"]
        trained_reward = float(np.mean([h["reward"] for h in history[-5:]]))
        _, trained_energy = _eval_policy(cfg, seed, _actor_fn(learner.actors))

        print(f"seed {seed}: trained {trained_reward:.4f} "
              f"untrained {untrained_reward:.4f} random {random_reward:.4f} "
              f"energy {trained_energy:.4f} <= coverage {coverage_energy:.4f}",
              file=sys.__stderr__, flush=True)
        margins.append((seed, trained_reward, untrained_reward, random_reward,
                        trained_energy, coverage_energy))

    trained = np.mean([m[1] for m in margins])
    untrained = np.mean([m[2] for m in margins])
    random_r = np.mean([m[3] for m in margins])
    t_energy = np.mean([m[4] for m in margins])
    c_energy = np.mean([m[5] for m in margins])
    assert trained - random_r >= 0.20 * abs(random_r), \
        f"trained {trained:.4f} not 20% above random {random_r:.4f}"
    assert trained - untrained >= 0.30 * abs(untrained), \
        f"trained {trained:.4f} not 30% above untrained {untrained:.4f}"
    assert t_energy <= c_energy, \
        f"trained energy {t_energy:.4f} above coverage {c_energy:.4f}"
    report("scaled-down-learning-check")


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------

def test_determinism_byte_identical(tmp_path):
    cfg_path = tmp_path / "det.cfg"
    cfg_path.write_text(
        "scenario.n_uav = 2\nscenario.ue_min = 8\nscenario.ue_max = 8\n"
        "run.steps = 30\nlearner.batch_size = 8\n"
        "learner.buffer_capacity = 64\nlearner.embed_dim = 8\n"
        "learner.n_heads = 2\nlearner.encoder_hidden = 12\n"
        "learner.trunk_widths = 16,12,8,8,8\nlearner.episode_len = 10\n"
        "learner.eval_every = 15\n", encoding="utf-8")

    artifacts = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert cli_main(["train", "--config", str(cfg_path), "--seed", "3",
                         "--out", str(out)]) == 0
        artifacts.append(tuple((out / f).read_bytes() for f in
                               ("train.csv", "eval.csv", "checkpoint.ckpt")))
    assert artifacts[0] == artifacts[1]

    baselines = []
    for name in ("b1", "b2"):
        out = tmp_path / name
        assert cli_main(["baseline", "--policy", "random", "--config",
                         str(cfg_path), "--seed", "5", "--out",
                         str(out)]) == 0
        baselines.append((out / "baseline_random.csv").read_bytes())
    assert baselines[0] == baselines[1]
    report("determinism-byte-identical")
