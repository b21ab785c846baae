"""PPO with GAE on top of :mod:`groundcl.approximator`, plus empirical value estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .approximator import AdamState, GaussianPolicy, Mlp, adam_step, clip_grad_norm
from .errors import NonFiniteLoss
from .gridnav import NavConfig, Outcome, VecNavEnv, outcome_from_code, policy_to_command
from .taskgen import Task


@dataclass
class PpoConfig:
    learning_rate: float = 3e-4
    clip_ratio: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    ppo_epochs: int = 5
    minibatch_size: int = 256
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    hidden: tuple = (64, 64)
    init_log_std: float = -0.5

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.clip_ratio <= 0:
            raise ValueError("clip_ratio must be > 0")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")
        if self.ppo_epochs < 1 or self.minibatch_size < 1:
            raise ValueError("ppo_epochs and minibatch_size must be >= 1")


@dataclass
class Trajectory:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    outcome: Outcome = Outcome.RUNNING
    goal_distances: Optional[np.ndarray] = None
    speeds: Optional[np.ndarray] = None
    last_value: float = 0.0
    task_id: Optional[str] = None

    def __len__(self):
        return len(self.rewards)

    @property
    def episode_return(self) -> float:
        return float(np.sum(self.rewards))

    def discounted_return(self, gamma: float) -> float:
        return discounted_return(self.rewards, gamma)


@dataclass
class LossReport:
    policy_loss: float = 0.0
    value_loss: float = 0.0
    entropy: float = 0.0
    approx_kl: float = 0.0
    n_samples: int = 0


class ActorCritic:
    """A Gaussian policy, a value net and their optimizer states."""

    def __init__(self, obs_dim, act_dim, config: PpoConfig, rng, mean_bias=None):
        self.config = config
        self.policy = GaussianPolicy(obs_dim, act_dim, config.hidden, rng=rng,
                                     init_log_std=config.init_log_std, mean_bias=mean_bias)
        self.value_net = Mlp([obs_dim, *config.hidden, 1], "tanh", "identity", rng=rng)
        self.policy_opt = AdamState.zeros(self.policy.params.size, config.learning_rate)
        self.value_opt = AdamState.zeros(self.value_net.n_params, config.learning_rate)

    def values(self, obs):
        return self.value_net(obs)[..., 0]


def discounted_return(rewards, gamma):
    total = 0.0
    for r in reversed(np.asarray(rewards, dtype=np.float64)):
        total = r + gamma * total
    return float(total)


def collect_rollouts(policy, value_net, tasks: Sequence[Task], episodes_per_task: int, rng,
                     env_config: Optional[NavConfig] = None, deterministic=False):
    """Run ``episodes_per_task`` complete episodes per task as one batch.

    Stochastic policies need ``sample(obs, rng)``; deterministic ones only
    ``mean_action(obs)``. Policy outputs live in the normalized [-1, 1]^2
    space (see :func:`policy_to_command`); stored actions are the raw,
    unclamped outputs so their log-probs stay valid.
    """
    env_config = env_config or NavConfig()
    slots = [t for t in tasks for _ in range(episodes_per_task)]
    env = VecNavEnv(slots, env_config)
    obs = env.reset(rng)
    n, act_dim = env.size, 2
    cap = env_config.max_steps
    buf_obs = np.zeros((n, cap, obs.shape[1]))
    buf_act = np.zeros((n, cap, act_dim))
    buf_logp = np.zeros((n, cap))
    buf_rew = np.zeros((n, cap))
    buf_val = np.zeros((n, cap))
    buf_speed = np.zeros((n, cap))
    buf_dist = np.zeros((n, cap + 1))
    buf_dist[:, 0] = env.goal_distance()
    lengths = np.zeros(n, dtype=np.int64)
    codes = np.zeros(n, dtype=np.int8)
    active = np.arange(n)
    cur_obs = obs
    while active.size:
        if deterministic:
            actions = np.asarray(policy.mean_action(cur_obs), dtype=np.float64)
            logp = np.zeros(active.size)
        else:
            actions, logp, _ = policy.sample(cur_obs, rng)
        vals = value_net(cur_obs)[:, 0] if value_net is not None else np.zeros(active.size)
        t = lengths[active]
        buf_obs[active, t] = cur_obs
        buf_act[active, t] = actions
        buf_logp[active, t] = logp
        buf_val[active, t] = vals
        next_obs, rew, done, code, speed = env.step(policy_to_command(actions, env_config), active)
        buf_rew[active, t] = rew
        buf_speed[active, t] = speed
        buf_dist[active, t + 1] = env.goal_distance()[active]
        lengths[active] += 1
        codes[active] = code
        keep = ~done
        active = active[keep]
        cur_obs = next_obs[keep]
    trajs = []
    for i in range(n):
        length = lengths[i]
        dones = np.zeros(length, dtype=bool)
        dones[-1] = True
        trajs.append(Trajectory(
            obs=buf_obs[i, :length].copy(), actions=buf_act[i, :length].copy(),
            log_probs=buf_logp[i, :length].copy(), rewards=buf_rew[i, :length].copy(),
            values=buf_val[i, :length].copy(), dones=dones,
            outcome=outcome_from_code(codes[i]),
            goal_distances=buf_dist[i, :length + 1].copy(),
            speeds=buf_speed[i, :length].copy(), task_id=slots[i].id,
        ))
    return trajs


def compute_gae(traj: Trajectory, config: PpoConfig):
    """GAE(gamma, lambda) advantages and value targets for one trajectory."""
    rewards = np.asarray(traj.rewards, dtype=np.float64)
    values = np.asarray(traj.values, dtype=np.float64)
    dones = np.asarray(traj.dones, dtype=bool)
    n = rewards.size
    adv = np.zeros(n)
    gae = 0.0
    next_value = float(traj.last_value)
    for t in range(n - 1, -1, -1):
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + config.gamma * next_value * nonterminal - values[t]
        gae = delta + config.gamma * config.gae_lambda * nonterminal * gae
        adv[t] = gae
        next_value = values[t]
    return adv, adv + values


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=np.float64)
    if adv.size < 2:
        return adv
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def clipped_surrogate(ratio, advantages, clip_ratio):
    """Per-sample PPO surrogate (to maximize) and its derivative w.r.t. log-prob."""
    clipped = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio)
    s1 = ratio * advantages
    s2 = clipped * advantages
    objective = np.minimum(s1, s2)
    inside = (ratio >= 1.0 - clip_ratio) & (ratio <= 1.0 + clip_ratio)
    active = (s1 <= s2) | inside
    return objective, np.where(active, s1, 0.0)


def ppo_update_arrays(agent: ActorCritic, obs, actions, old_log_probs, advantages, returns,
                      config: PpoConfig, rng) -> LossReport:
    """Clipped-surrogate epochs over minibatches; mutates ``agent`` in place."""
    n = obs.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    policy, value_net = agent.policy, agent.value_net
    mb = min(config.minibatch_size, n)
    sums = np.zeros(4)
    count = 0
    for _epoch in range(config.ppo_epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb):
            idx = order[start:start + mb]
            m = idx.size
            o, a, adv = obs[idx], actions[idx], advantages[idx]
            mean = policy.net(o)
            logp = policy.log_prob_from_mean(mean, a)
            ratio = np.exp(logp - old_log_probs[idx])
            objective, dobj_dlogp = clipped_surrogate(ratio, adv, config.clip_ratio)
            entropy = policy.entropy()
            policy_loss = -float(np.mean(objective))
            entropy_grad = np.full(policy.act_dim, -config.entropy_coef)
            grad_p, _, _ = policy.log_prob_grad(o, a, -dobj_dlogp / m, entropy_grad)

            v, vcache = value_net.forward(o)
            err = v[:, 0] - returns[idx]
            value_loss = 0.5 * float(np.mean(err * err))
            grad_v = value_net.backward(vcache, (config.value_coef * err / m)[:, None])

            total = policy_loss + config.value_coef * value_loss - config.entropy_coef * entropy
            if not math.isfinite(total):
                raise NonFiniteLoss(
                    f"PPO loss not finite (policy={policy_loss}, value={value_loss}, "
                    f"entropy={entropy}, max|ratio|={float(np.max(np.abs(ratio)))})")
            grad_p, _ = clip_grad_norm(grad_p, config.max_grad_norm)
            grad_v, _ = clip_grad_norm(grad_v, config.max_grad_norm)
            policy.params, agent.policy_opt = adam_step(policy.params, grad_p, agent.policy_opt)
            value_net.params, agent.value_opt = adam_step(value_net.params, grad_v, agent.value_opt)
            log_ratio = logp - old_log_probs[idx]
            approx_kl = float(np.mean(np.exp(log_ratio) - 1.0 - log_ratio))
            sums += (policy_loss, value_loss, entropy, approx_kl)
            count += 1
    avg = sums / count
    return LossReport(*map(float, avg), n_samples=n)


def ppo_update(agent: ActorCritic, trajectories: Sequence[Trajectory], config: PpoConfig,
               rng) -> LossReport:
    if not trajectories:
        raise ValueError("ppo_update needs at least one trajectory")
    advs, rets = [], []
    for traj in trajectories:
        a, r = compute_gae(traj, config)
        advs.append(a)
        rets.append(r)
    obs = np.concatenate([t.obs for t in trajectories])
    actions = np.concatenate([t.actions for t in trajectories])
    old_logp = np.concatenate([t.log_probs for t in trajectories])
    adv = normalize_advantages(np.concatenate(advs))
    returns = np.concatenate(rets)
    return ppo_update_arrays(agent, obs, actions, old_logp, adv, returns, config, rng)


def estimate_value(policy, task: Task, n_episodes: int, gamma: float, rng,
                   env_config: Optional[NavConfig] = None):
    """Mean discounted return over fresh episodes, with its standard error."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    trajs = collect_rollouts(policy, None, [task], n_episodes, rng, env_config)
    return value_from_trajectories(trajs, gamma)


def value_from_trajectories(trajs: Sequence[Trajectory], gamma: float):
    returns = np.array([t.discounted_return(gamma) for t in trajs])
    stderr = float(returns.std(ddof=1) / math.sqrt(returns.size)) if returns.size > 1 else 0.0
    return float(returns.mean()), stderr


def return_bounds(env_config: NavConfig, arena_diag: float, gamma: float = 1.0):
    """Analytic (lower, upper) bounds on any episode's discounted return.

    Progress telescopes, so its total lies in ``[-c_prog*diag, c_prog*diag]``
    undiscounted; with discounting each step's progress is at most ``v_max``
    in magnitude.
    """
    cfg = env_config
    t = cfg.max_steps
    disc = sum(gamma ** k for k in range(t))
    prog = cfg.c_prog * min(arena_diag, cfg.v_max * disc) if gamma == 1.0 else cfg.c_prog * cfg.v_max * disc
    upper = prog + cfg.c_goal
    lower = -prog - cfg.c_coll - cfg.c_time * disc
    return lower, upper
