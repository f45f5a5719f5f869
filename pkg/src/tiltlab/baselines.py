"""Search baselines over the tilt environment.

All searches start the episode from ``env.reset(seed=...)`` so two runs with
the same seed see the same traffic draw, which makes their totals directly
comparable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import TiltEnv


@dataclass
class SearchResult:
    total_reward: float
    actions: list[int]                 # flat action ids in commit order
    step_rewards: list[float]
    nodes_expanded: int                # probe env.step calls, committed steps excluded
    tilt_assignment: dict[int, int]    # cell id -> tilt index at episode end


def best_first_search(env: TiltEnv, seed: int | None = None) -> SearchResult:
    """Greedy one-step lookahead.

    At every step probe all P*C children, commit the one with the highest
    immediate reward (ties toward the lowest action id).  Expands exactly
    C * (P*C) probe nodes.
    """
    env.reset(seed=seed)
    actions: list[int] = []
    step_rewards: list[float] = []
    probes = 0
    while not env.done:
        snap = env.snapshot()
        gains = np.empty(env.n_actions)
        for flat in range(env.n_actions):
            gains[flat] = env.step(flat).reward
            probes += 1
            env.restore(snap)
        best = int(np.argmax(gains))
        res = env.step(best)
        actions.append(best)
        step_rewards.append(res.reward)
    return SearchResult(float(sum(step_rewards)), actions, step_rewards,
                        probes, env.tilt_assignment)


def brute_force_optimum(env: TiltEnv, seed: int | None = None,
                        max_configs: int = 100_000) -> SearchResult:
    """Exhaustive episode-reward maximum over P^C terminal assignments.

    Because each step's reward is the value of the configuration standing
    after it, the episode total depends on the visiting order, not only on
    the terminal assignment; the true optimum therefore maximizes over
    orders as well.  Mid-episode a configuration is determined by WHICH
    cells have been set (never by their sequence), so the search reduces to
    a longest-path problem on the partial-assignment lattice: every node
    prices one configuration via ``assignment_value`` and the best
    predecessor chain is kept.  ``nodes_expanded`` counts the P^C terminal
    assignments; interior lattice nodes bring the priced configurations to
    (P+1)^C in total.  Ties prefer earlier actions on lower cell indices.
    """
    p, c = env.n_tilts, env.episode_len
    n_configs = p ** c
    if n_configs > max_configs:
        raise ValueError(f"{n_configs} assignments exceed cap {max_configs}")
    if (p + 1) ** c > 8 * max_configs:
        raise ValueError(f"{(p + 1) ** c} lattice nodes exceed cap {8 * max_configs}")
    env.reset(seed=seed)

    # nodes keyed by a length-C tuple, tilt index per cell or -1 for unset
    root = (-1,) * c
    value: dict[tuple, float] = {}
    # node -> (cumulative reward of the best chain, predecessor, last flat action)
    best: dict[tuple, tuple[float, tuple | None, int | None]] = {root: (0.0, None, None)}
    levels: list[list[tuple]] = [[root]]
    for _ in range(c):
        frontier: dict[tuple, tuple[float, tuple, int]] = {}
        for node in levels[-1]:
            base_total = best[node][0]
            for ci in range(c):
                if node[ci] != -1:
                    continue
                for ti in range(p):
                    child = node[:ci] + (ti,) + node[ci + 1:]
                    if child not in value:
                        value[child] = env.assignment_value(
                            {i: t for i, t in enumerate(child) if t != -1})
                    cand = base_total + value[child]
                    entry = frontier.get(child)
                    if entry is None or cand > entry[0]:
                        frontier[child] = (cand, node, ci * p + ti)
        best.update(frontier)
        levels.append(sorted(frontier))

    top = max(levels[-1], key=lambda k: best[k][0])
    chain: list[tuple] = []
    node = top
    while best[node][1] is not None:
        chain.append(node)
        node = best[node][1]                    # type: ignore[assignment]
    chain.reverse()
    actions = [best[n][2] for n in chain]       # type: ignore[misc]
    step_rewards = [value[n] for n in chain]
    tilt_assignment = {env.target_cells[i]: t for i, t in enumerate(top)}
    for cell in env.grids.cell_ids:
        tilt_assignment.setdefault(cell, int(env.dataset.baseline_tilts[cell]))
    return SearchResult(float(sum(step_rewards)), actions, step_rewards,
                        n_configs, tilt_assignment)


def random_policy(env: TiltEnv, seed: int | None = None,
                  action_rng: np.random.Generator | None = None) -> SearchResult:
    """Uniform action draws, the no-learning floor."""
    rng = action_rng or np.random.default_rng(seed)
    env.reset(seed=seed)
    actions, step_rewards = [], []
    while not env.done:
        flat = int(rng.integers(env.n_actions))
        res = env.step(flat)
        actions.append(flat)
        step_rewards.append(res.reward)
    return SearchResult(float(sum(step_rewards)), actions, step_rewards,
                        len(actions), env.tilt_assignment)
