"""Benchmark environments exposing a common decentralized-POMDP surface.

Each environment provides reset(seed) -> observations, step(actions) ->
(observations, shared_reward, done, info), plus positions and an active
mask for the communication topology. The reward is one global scalar for
the whole team at every step.
"""

from .particle import CooperativeNavigationEnv, PredatorPreyEnv, navigation_reward
from .traffic import TrafficJunctionConfig, TrafficJunctionEnv, episode_success

ENV_NAMES = ("cooperative_navigation", "predator_prey", "traffic_junction")


def make_env(name: str, n_agents: int | None = None, difficulty: str = "medium",
             **kwargs):
    if name == "cooperative_navigation":
        return CooperativeNavigationEnv(n_agents=n_agents or 10, **kwargs)
    if name == "predator_prey":
        return PredatorPreyEnv(n_agents=n_agents or 10, **kwargs)
    if name == "traffic_junction":
        config = TrafficJunctionConfig.preset(difficulty)
        if n_agents is not None:
            config = config.with_max_agents(n_agents)
        return TrafficJunctionEnv(config, **kwargs)
    raise ValueError(f"unknown environment {name!r}; expected one of {ENV_NAMES}")
