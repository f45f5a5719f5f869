"""DQN agent with depth-wise constrained exploration.

Exploration has two independent dials per step:

* epsilon: probability of exploring at all, decayed per episode t with a
  depth-dependent time constant,

      eps_d(t) = eps_min + (eps_max - eps_min) * exp(-t / tau_d),
      tau_d = tau_0 * (1 + kappa * (d - 1)),

  so deeper decision steps stay exploratory longer;

* eta: probability that an exploratory move is drawn only from compliant
  actions (cells untouched this episode) rather than from all P*C actions.

A uniformly random policy finishes an episode without revisiting a cell
with probability  prod_{i=0}^{C-1} (1 - i/C) = (C-1)!/C^(C-1), vanishing
fast in C.  The eta schedule fixes a per-episode compliance target p by
giving every step after the first the same success probability
p^(1/(C-1)):

      eta_step = (p^(1/(C-1)) - P_free(step)) / (1 - P_free(step)),
      P_free(step) = (C - step + 1) / C,

clipped to [0, 1], with eta_1 = 0 (the first step cannot violate).

Training follows standard DQN with a frozen target network: uniform replay,
batched Huber regression onto  r + gamma * max_a' Q_target(s', a'),  RMSprop
updates every environment step after a warm-up, and a hard target swap every
``target_update_every`` gradient steps.  Greedy evaluation runs on a fixed
set of reset seeds every ``eval_every_steps`` environment steps.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .env import Action, TiltEnv

log = logging.getLogger(__name__)


# -- exploration math --------------------------------------------------------

def episode_success_probability(c: int) -> float:
    """Chance that C uniform cell picks are all distinct: (C-1)!/C^(C-1)."""
    if c < 1:
        raise ValueError("c must be >= 1")
    return math.factorial(c - 1) / float(c ** (c - 1))


def eta_for_step(step: int, c: int, p_target: float = 0.5) -> float:
    """Constrained-draw probability at a 1-indexed episode step."""
    if not 1 <= step <= c:
        raise ValueError(f"step {step} outside [1, {c}]")
    if not 0.0 < p_target <= 1.0:
        raise ValueError("p_target must be in (0, 1]")
    if step == 1 or c == 1:
        return 0.0
    p_si = p_target ** (1.0 / (c - 1))
    p_free = (c - step + 1) / c
    return float(min(1.0, max(0.0, (p_si - p_free) / (1.0 - p_free))))


def eta_schedule(c: int, p_target: float = 0.5) -> np.ndarray:
    return np.array([eta_for_step(s, c, p_target) for s in range(1, c + 1)])


@dataclass(frozen=True)
class EpsSchedule:
    """Per-depth exponential epsilon decay over training episodes."""

    train_episodes: int
    eps_max: float = 1.0
    eps_min: float = 0.05
    tau0_fraction: float = 0.15
    kappa: float = 0.35          # 0 collapses to a single flat schedule

    def value(self, depth: int, episode: int) -> float:
        tau = self.tau0_fraction * self.train_episodes * (1.0 + self.kappa * (depth - 1))
        return self.eps_min + (self.eps_max - self.eps_min) * math.exp(-episode / tau)


# -- action selection --------------------------------------------------------

def compliant_actions(history: np.ndarray, n_tilts: int) -> np.ndarray:
    """Flat ids of actions on cells with no history bit set this episode."""
    cells = history.reshape(-1, n_tilts).any(axis=1)
    free = np.flatnonzero(~cells)
    return (free[:, None] * n_tilts + np.arange(n_tilts)).ravel()


def select_action(q: np.ndarray, history: np.ndarray, eps: float, eta: float,
                  rng: np.random.Generator, n_tilts: int) -> int:
    """Exploit greedily with prob 1-eps; otherwise draw uniformly from the
    compliant pool with prob eta, from all actions with prob 1-eta.

    Greedy ties break toward the lowest flat action id.  An empty compliant
    pool falls back to the full action set.
    """
    if rng.random() >= eps:
        return int(np.argmax(q))
    if rng.random() < eta:
        pool = compliant_actions(history, n_tilts)
        if len(pool):
            return int(pool[rng.integers(len(pool))])
    return int(rng.integers(len(q)))


def simulate_compliance(c: int, n_tilts: int, etas: Sequence[float], eps: float,
                        episodes: int, seed: int = 0) -> float:
    """Fraction of constraint-compliant episodes under pure exploration."""
    rng = np.random.default_rng(seed)
    n_actions = c * n_tilts
    q = np.zeros(n_actions)
    ok = 0
    for _ in range(episodes):
        history = np.zeros(n_actions)
        compliant = True
        for step in range(1, c + 1):
            a = select_action(q, history, eps, etas[step - 1], rng, n_tilts)
            cell = a // n_tilts
            if history[cell * n_tilts:(cell + 1) * n_tilts].any():
                compliant = False
            history[a] = 1.0
        ok += compliant
    return ok / episodes


# -- replay -------------------------------------------------------------------

@dataclass
class Transition:
    image: np.ndarray
    history: np.ndarray
    action: int
    reward: float
    next_image: np.ndarray
    next_history: np.ndarray
    done: bool


class ReplayBuffer:
    """Uniform ring buffer."""

    def __init__(self, capacity: int = 200_000):
        self.capacity = capacity
        self.buffer: list[Transition] = []
        self.position = 0

    def push(self, tr: Transition) -> None:
        if len(self.buffer) < self.capacity:
            self.buffer.append(tr)
        else:
            self.buffer[self.position] = tr
        self.position = (self.position + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        idx = rng.choice(len(self.buffer), size=batch_size, replace=False)
        return [self.buffer[i] for i in idx]

    def __len__(self) -> int:
        return len(self.buffer)


# -- training -----------------------------------------------------------------

@dataclass
class AgentConfig:
    """Hyperparameters; network-side defaults mirror the published table."""

    algo: str = "dw_eta"                   # "dw_eta" | "eps_greedy"
    train_episodes: int = 3000
    gamma: float = 1.0
    batch_size: int = 256
    replay_capacity: int = 200_000
    target_update_every: int = 1500        # gradient steps
    warmup_transitions: int = 5000
    learning_rate: float = 2.5e-4
    rmsprop_rho: float = 0.95
    eps_max: float = 1.0
    eps_min: float = 0.05
    tau0_fraction: float = 0.15
    kappa: float = 0.35
    p_target: float = 0.5
    eval_every_steps: int = 1000
    eval_seeds: tuple[int, ...] = tuple(range(10))
    conv_filters: int = 8
    dense_image: tuple[int, ...] = (128, 64, 32)
    head_width: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.algo not in ("dw_eta", "eps_greedy"):
            raise ValueError(f"unknown algo {self.algo!r}")
        if self.gamma != 1.0:
            log.warning("gamma %.3f deviates from the episodic sum contract", self.gamma)


class TrainingDiverged(RuntimeError):
    """Non-finite loss or gradient; carries the state for a crash dump."""

    def __init__(self, message: str, params: dict[str, np.ndarray],
                 spec: nn.QNetworkSpec, env_step: int):
        super().__init__(message)
        self.params = params
        self.spec = spec
        self.env_step = env_step


@dataclass
class EvalPoint:
    episode: int
    env_steps: int
    mean_reward: float
    per_seed: tuple[float, ...]


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    spec: nn.QNetworkSpec
    config: AgentConfig
    episode_rewards: list[float]
    losses: list[tuple[int, float]]        # (env_step, loss)
    evals: list[EvalPoint]
    gradient_steps: int

    def episodes_to_reach(self, threshold: float) -> int | None:
        for point in self.evals:
            if point.mean_reward >= threshold:
                return point.episode
        return None


def _episode_seed(run_seed: int, episode: int) -> int:
    ss = np.random.SeedSequence([run_seed, episode])
    return int(ss.generate_state(1)[0])


def build_spec(env: TiltEnv, config: AgentConfig) -> nn.QNetworkSpec:
    return nn.QNetworkSpec(
        image_shape=(3, env.shape[0], env.shape[1]),
        history_width=env.n_actions,
        n_actions=env.n_actions,
        conv_filters=config.conv_filters,
        dense_image=tuple(config.dense_image),
        head_width=config.head_width,
    )


def greedy_episode(env: TiltEnv, spec: nn.QNetworkSpec, params, seed: int) -> tuple[float, list[float]]:
    """One greedy rollout; returns (episode reward, per-step rewards)."""
    obs = env.reset(seed=seed)
    total, steps = 0.0, []
    while not env.done:
        q = nn.forward_observation(spec, params, obs)
        res = env.step(int(np.argmax(q)))
        obs = res.observation
        total += res.reward
        steps.append(res.reward)
    return total, steps


def evaluate_greedy(env: TiltEnv, spec: nn.QNetworkSpec, params,
                    seeds: Sequence[int]) -> tuple[float, list[float]]:
    """Mean greedy episode reward over fixed reset seeds."""
    totals = [greedy_episode(env, spec, params, s)[0] for s in seeds]
    return float(np.mean(totals)), totals


def train(env: TiltEnv, config: AgentConfig) -> TrainResult:
    """Train one agent on ``env``; evaluation runs on a fresh clone."""
    spec = build_spec(env, config)
    params = nn.init_params(spec, config.seed)
    target = {k: v.copy() for k, v in params.items()}
    opt = nn.OptimizerState(learning_rate=config.learning_rate, rho=config.rmsprop_rho)
    buffer = ReplayBuffer(config.replay_capacity)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xA5]))
    eps_sched = EpsSchedule(config.train_episodes, config.eps_max, config.eps_min,
                            config.tau0_fraction,
                            config.kappa if config.algo == "dw_eta" else 0.0)
    etas = eta_schedule(env.episode_len, config.p_target) if config.algo == "dw_eta" \
        else np.zeros(env.episode_len)
    eval_env = env.clone()

    episode_rewards: list[float] = []
    losses: list[tuple[int, float]] = []
    evals: list[EvalPoint] = []
    env_steps = 0
    grad_steps = 0
    next_eval = config.eval_every_steps

    for episode in range(config.train_episodes):
        obs = env.reset(seed=_episode_seed(config.seed, episode))
        ep_reward = 0.0
        for step in range(1, env.episode_len + 1):
            q = nn.forward_observation(spec, params, obs)
            eps = eps_sched.value(step, episode)
            action = select_action(q, obs.history, eps, float(etas[step - 1]), rng, env.n_tilts)
            res = env.step(action)
            buffer.push(Transition(obs.image(), obs.history, action, res.reward,
                                   res.observation.image(), res.observation.history,
                                   res.done))
            obs = res.observation
            ep_reward += res.reward
            env_steps += 1

            if len(buffer) >= config.warmup_transitions:
                batch = buffer.sample(config.batch_size, rng)
                images = np.stack([t.image for t in batch])
                histories = np.stack([t.history for t in batch])
                actions = np.array([t.action for t in batch], dtype=np.int64)
                rewards = np.array([t.reward for t in batch])
                next_images = np.stack([t.next_image for t in batch])
                next_histories = np.stack([t.next_history for t in batch])
                not_done = 1.0 - np.array([t.done for t in batch], dtype=np.float64)
                try:
                    q_next = nn.forward(spec, target, next_images, next_histories)
                    targets = rewards + config.gamma * not_done * q_next.max(axis=1)
                    loss, grads = nn.backward(spec, params, images, histories,
                                              actions, targets)
                except FloatingPointError as exc:
                    raise TrainingDiverged(str(exc), params, spec, env_steps) from exc
                nn.apply_rmsprop(opt, params, grads)
                grad_steps += 1
                if grad_steps % config.target_update_every == 0:
                    target = {k: v.copy() for k, v in params.items()}
                if grad_steps % 200 == 1:
                    losses.append((env_steps, loss))
        episode_rewards.append(ep_reward)

        if env_steps >= next_eval:
            mean, per_seed = evaluate_greedy(eval_env, spec, params, config.eval_seeds)
            evals.append(EvalPoint(episode + 1, env_steps, mean, tuple(per_seed)))
            next_eval += config.eval_every_steps

    mean, per_seed = evaluate_greedy(eval_env, spec, params, config.eval_seeds)
    evals.append(EvalPoint(config.train_episodes, env_steps, mean, tuple(per_seed)))
    return TrainResult(params, spec, config, episode_rewards, losses, evals, grad_steps)
