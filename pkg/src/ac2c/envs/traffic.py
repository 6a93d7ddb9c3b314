"""Traffic junction gridworld: cars on fixed directed lanes, gas or brake.

Geometry: two-way roads realised as adjacent one-way lanes. The medium
grid (6x6) carries one horizontal and one vertical road pair crossing in a
single junction; the hard grid (9x9) carries two of each, giving four
junctions. A route is one straight directed lane; the configured entry
count tallies lane endpoints (one spawn plus one exit cell per route).

Cars spawn at a route's entry with probability p_arrive per route per
step, move only along their route, and vanish on leaving the far end. Two
cars in one cell collide: each is charged -20 that step and stays active.
Every active car also pays -0.01 per step of age. The team reward is the
sum over cars; an episode counts as a success iff nothing ever collided.

Cars see nothing of each other (vision is zero): the observation holds
only the car's own active flag, route one-hot, progress, and cell one-hot.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .particle import EnvSpec

GAS = 1
BRAKE = 0

TIME_PENALTY = -0.01
COLLISION_PENALTY = -20.0


@dataclass(frozen=True)
class TrafficJunctionConfig:
    difficulty: str
    p_arrive: float
    max_agents: int
    entries: int
    routes: int
    junctions: int
    grid_dim: int
    episode_length: int

    PRESETS = {
        "medium": dict(p_arrive=0.2, max_agents=10, entries=8, routes=4,
                       junctions=1, grid_dim=6, episode_length=60),
        "hard": dict(p_arrive=0.2, max_agents=20, entries=16, routes=8,
                     junctions=4, grid_dim=9, episode_length=80),
    }

    @classmethod
    def preset(cls, difficulty: str) -> "TrafficJunctionConfig":
        if difficulty not in cls.PRESETS:
            raise ValueError(
                f"unknown difficulty {difficulty!r}; expected medium or hard")
        return cls(difficulty=difficulty, **cls.PRESETS[difficulty])

    def with_max_agents(self, n: int) -> "TrafficJunctionConfig":
        return replace(self, max_agents=n)

    def with_p_arrive(self, p: float) -> "TrafficJunctionConfig":
        return replace(self, p_arrive=p)


def _build_routes(grid_dim: int, n_routes: int):
    """Straight directed lanes as lists of (row, col) cells."""
    if n_routes == 4:
        pairs = [(2, 3)]
    elif n_routes == 8:
        pairs = [(2, 3), (grid_dim - 3, grid_dim - 2)]
    else:
        raise ValueError(f"unsupported route count {n_routes}")
    g = grid_dim
    routes = []
    for a, b in pairs:
        routes.append([(a, c) for c in range(g - 1, -1, -1)])  # row a westbound
        routes.append([(b, c) for c in range(g)])              # row b eastbound
    for a, b in pairs:
        routes.append([(r, a) for r in range(g)])              # col a southbound
        routes.append([(r, b) for r in range(g - 1, -1, -1)])  # col b northbound
    return routes


class TrafficJunctionEnv:
    name = "traffic_junction"

    def __init__(self, config: TrafficJunctionConfig):
        self.config = config
        self.routes = _build_routes(config.grid_dim, config.routes)
        assert len(self.routes) == config.routes
        n = config.max_agents
        self.n_agents = n
        self.episode_length = config.episode_length
        self._rng = None
        self._t = 0
        self.car_active = np.zeros(n, dtype=bool)
        self.car_route = np.zeros(n, dtype=int)
        self.car_pos = np.zeros(n, dtype=int)  # index into the route
        self.car_age = np.zeros(n, dtype=int)

    @property
    def spec(self) -> EnvSpec:
        g = self.config.grid_dim
        obs_dim = 1 + self.config.routes + 1 + g * g
        return EnvSpec(self.name, self.n_agents, obs_dim, 2, False,
                       self.episode_length)

    @property
    def active(self) -> np.ndarray:
        return self.car_active.copy()

    @property
    def positions(self) -> np.ndarray:
        """Cell coordinates of each slot; inactive slots sit at (-1, -1)."""
        out = np.full((self.n_agents, 2), -1.0)
        for i in range(self.n_agents):
            if self.car_active[i]:
                out[i] = self.routes[self.car_route[i]][self.car_pos[i]]
        return out

    def reset(self, seed: int):
        self._rng = np.random.default_rng(seed)
        self._t = 0
        self.car_active[:] = False
        self.car_route[:] = 0
        self.car_pos[:] = 0
        self.car_age[:] = 0
        self._spawn_phase()
        return self._observe_all()

    def observe(self, i: int) -> np.ndarray:
        g = self.config.grid_dim
        out = np.zeros(1 + self.config.routes + 1 + g * g)
        if not self.car_active[i]:
            return out
        out[0] = 1.0
        out[1 + self.car_route[i]] = 1.0
        route = self.routes[self.car_route[i]]
        out[1 + self.config.routes] = self.car_pos[i] / (len(route) - 1)
        r, c = route[self.car_pos[i]]
        out[1 + self.config.routes + 1 + r * g + c] = 1.0
        return out

    def _observe_all(self):
        return np.stack([self.observe(i) for i in range(self.n_agents)])

    def _occupied_cells(self):
        cells = {}
        for i in range(self.n_agents):
            if self.car_active[i]:
                cell = self.routes[self.car_route[i]][self.car_pos[i]]
                cells.setdefault(cell, []).append(i)
        return cells

    def _spawn(self, route_id: int) -> int | None:
        """Place a new car at the route entry if the cell and a slot are free."""
        entry = self.routes[route_id][0]
        for i in range(self.n_agents):
            if self.car_active[i]:
                if self.routes[self.car_route[i]][self.car_pos[i]] == entry:
                    return None
        free = np.flatnonzero(~self.car_active)
        if free.size == 0:
            return None
        slot = int(free[0])
        self.car_active[slot] = True
        self.car_route[slot] = route_id
        self.car_pos[slot] = 0
        self.car_age[slot] = 0
        return slot

    def _spawn_phase(self):
        spawned = np.zeros(self.n_agents, dtype=bool)
        for route_id in range(len(self.routes)):
            if self._rng.uniform() < self.config.p_arrive:
                slot = self._spawn(route_id)
                if slot is not None:
                    spawned[slot] = True
        return spawned

    def step(self, actions):
        actions = np.asarray(actions)
        if actions.shape != (self.n_agents,):
            raise ValueError(
                f"step: expected {self.n_agents} discrete actions, got {actions.shape}")
        if not np.isin(actions[self.car_active], (GAS, BRAKE)).all():
            raise ValueError("step: traffic actions must be 0 (brake) or 1 (gas)")

        arrived = np.zeros(self.n_agents, dtype=bool)
        for i in range(self.n_agents):
            if not self.car_active[i]:
                continue
            self.car_age[i] += 1
            if actions[i] == GAS:
                self.car_pos[i] += 1
                if self.car_pos[i] >= len(self.routes[self.car_route[i]]):
                    self.car_active[i] = False
                    arrived[i] = True

        colliders = np.zeros(self.n_agents, dtype=bool)
        for cell, members in self._occupied_cells().items():
            if len(members) > 1:
                for i in members:
                    colliders[i] = True

        reward = float(TIME_PENALTY * self.car_age[self.car_active].sum()
                       + COLLISION_PENALTY * colliders.sum())

        spawned = self._spawn_phase()
        self._t += 1
        done = self._t >= self.episode_length
        info = {
            "collisions": int(colliders.sum()),
            "arrived": int(arrived.sum()),
            "reset_memory": spawned | arrived,
            "active": self.active,
        }
        return self._observe_all(), reward, done, info


def episode_success(env_name: str, collision_counts) -> bool:
    """A traffic episode succeeds iff no step recorded a collision."""
    if env_name != "traffic_junction":
        raise ValueError(
            f"episode success is defined for traffic_junction only, not {env_name!r}")
    return all(c == 0 for c in collision_counts)
