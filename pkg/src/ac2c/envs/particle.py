"""Continuous particle worlds: cooperative navigation and predator prey.

Force-controlled point masses on the [-1, 1]^2 box with velocity damping
0.25 and dt 0.1. Actions are 2-D forces in [-1, 1]^2. The team reward is

    0.01 * (negated sum over targets of the distance to the closest agent)
    + per-agent detection bonus (+1 inside 0.1 of the nearest target,
      else +0.5 inside 0.2; the tighter tier wins)
    - 0.25 for each member of any agent pair closer than 0.5.

Predator prey reuses the same reward with the scripted preys standing in
for the landmarks. Preys accelerate straight away from their nearest
predator and top out 1.3x faster than the predators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DT = 0.1
DAMPING = 0.25
ACCEL_GAIN = 5.0
WORLD_HALF = 1.0
PREY_SPEED_FACTOR = 1.3

DETECT_NEAR = 0.1
DETECT_FAR = 0.2
PAIR_RANGE = 0.5
DETECT_NEAR_BONUS = 1.0
DETECT_FAR_BONUS = 0.5
PAIR_PENALTY = -0.25
BASE_SCALE = 0.01


@dataclass(frozen=True)
class EnvSpec:
    name: str
    n_agents: int
    obs_dim: int
    act_dim: int
    continuous: bool
    episode_length: int


def detection_bonus(distance: float) -> float:
    """Tiered proximity bonus; the tighter tier wins, never both."""
    if distance < DETECT_NEAR:
        return DETECT_NEAR_BONUS
    if distance < DETECT_FAR:
        return DETECT_FAR_BONUS
    return 0.0


def navigation_reward(agent_pos: np.ndarray, target_pos: np.ndarray) -> dict:
    """Shared team reward from agent and target positions.

    Returns the components so tests can probe each rule in isolation:
    base (scaled coverage distance), detection (tier bonuses), proximity
    (pairwise penalties), and their total.
    """
    agent_pos = np.asarray(agent_pos, dtype=float)
    target_pos = np.asarray(target_pos, dtype=float)
    d_at = np.linalg.norm(agent_pos[:, None, :] - target_pos[None, :, :], axis=2)
    base = -float(d_at.min(axis=0).sum()) * BASE_SCALE
    detection = float(sum(detection_bonus(d) for d in d_at.min(axis=1)))
    proximity = 0.0
    n = len(agent_pos)
    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(agent_pos[i] - agent_pos[j]) < PAIR_RANGE:
                proximity += 2 * PAIR_PENALTY  # both members are charged
    total = base + detection + proximity
    return {"base": base, "detection": detection, "proximity": proximity,
            "total": total}


def _closest_indices(origin, points, k, exclude=None):
    """Indices of the k nearest points, distance then index order."""
    dists = np.linalg.norm(points - origin, axis=1)
    order = sorted(range(len(points)), key=lambda j: (dists[j], j))
    if exclude is not None:
        order = [j for j in order if j != exclude]
    return order[:k]


class _ParticleBase:
    """Shared physics and bookkeeping for both particle tasks."""

    def __init__(self, n_agents: int, episode_length: int = 50):
        self.n_agents = n_agents
        self.episode_length = episode_length
        self._rng = None
        self._t = 0
        self.agent_pos = np.zeros((n_agents, 2))
        self.agent_vel = np.zeros((n_agents, 2))

    @property
    def positions(self) -> np.ndarray:
        return self.agent_pos.copy()

    @property
    def active(self) -> np.ndarray:
        return np.ones(self.n_agents, dtype=bool)

    def _integrate(self, pos, vel, forces, max_speed=None):
        vel = vel * (1.0 - DAMPING) + forces * ACCEL_GAIN * DT
        if max_speed is not None:
            speed = np.linalg.norm(vel, axis=1, keepdims=True)
            over = speed > max_speed
            if over.any():
                vel = np.where(over, vel / speed * max_speed, vel)
        pos = np.clip(pos + vel * DT, -WORLD_HALF, WORLD_HALF)
        return pos, vel

    def _check_actions(self, actions):
        actions = np.asarray(actions, dtype=float)
        if actions.shape != (self.n_agents, 2):
            raise ValueError(
                f"step: expected actions of shape ({self.n_agents}, 2), got {actions.shape}"
            )
        if not np.isfinite(actions).all():
            raise ValueError("step: non-finite action")
        if np.abs(actions).max() > 1.0 + 1e-9:
            raise ValueError("step: continuous actions must lie in [-1, 1]")
        return actions


class CooperativeNavigationEnv(_ParticleBase):
    """Cover the landmarks. Landmarks are drawn per episode and then fixed.

    Observation: own position, own velocity, every landmark's offset in
    index order, and the offsets of the two closest other agents (distance
    order, ties by index, zero-padded when fewer exist).
    """

    name = "cooperative_navigation"

    def __init__(self, n_agents: int = 10, n_landmarks: int | None = None,
                 episode_length: int = 50):
        super().__init__(n_agents, episode_length)
        self.n_landmarks = n_landmarks if n_landmarks is not None else n_agents
        self.landmark_pos = np.zeros((self.n_landmarks, 2))
        self.k_agents = 2

    @property
    def spec(self) -> EnvSpec:
        obs_dim = 4 + 2 * self.n_landmarks + 2 * self.k_agents
        return EnvSpec(self.name, self.n_agents, obs_dim, 2, True,
                       self.episode_length)

    def reset(self, seed: int):
        self._rng = np.random.default_rng(seed)
        self._t = 0
        self.agent_pos = self._rng.uniform(-WORLD_HALF, WORLD_HALF, (self.n_agents, 2))
        self.agent_vel = np.zeros((self.n_agents, 2))
        self.landmark_pos = self._rng.uniform(-WORLD_HALF, WORLD_HALF,
                                              (self.n_landmarks, 2))
        return self._observe_all()

    def observe(self, i: int) -> np.ndarray:
        parts = [self.agent_pos[i], self.agent_vel[i]]
        parts.extend(self.landmark_pos - self.agent_pos[i])
        near = _closest_indices(self.agent_pos[i], self.agent_pos,
                                self.k_agents, exclude=i)
        for j in near:
            parts.append(self.agent_pos[j] - self.agent_pos[i])
        for _ in range(self.k_agents - len(near)):
            parts.append(np.zeros(2))
        return np.concatenate(parts)

    def _observe_all(self):
        return np.stack([self.observe(i) for i in range(self.n_agents)])

    def _targets(self):
        return self.landmark_pos

    def step(self, actions):
        actions = self._check_actions(actions)
        self.agent_pos, self.agent_vel = self._integrate(
            self.agent_pos, self.agent_vel, actions)
        self._advance_world()
        self._t += 1
        parts = navigation_reward(self.agent_pos, self._targets())
        done = self._t >= self.episode_length
        info = {
            "collisions": int(round(parts["proximity"] / PAIR_PENALTY)) // 2,
            "reward_parts": parts,
            "reset_memory": np.zeros(self.n_agents, dtype=bool),
            "active": self.active,
        }
        return self._observe_all(), parts["total"], done, info

    def _advance_world(self):
        pass  # landmarks are static


class PredatorPreyEnv(CooperativeNavigationEnv):
    """Chase the scripted preys; they are the targets of the shared reward.

    Observation: own position, own velocity, the three closest preys'
    offsets, and the three closest fellow predators' offsets (both zero
    padded when fewer exist).
    """

    name = "predator_prey"

    def __init__(self, n_agents: int = 10, n_preys: int | None = None,
                 episode_length: int = 50):
        super().__init__(n_agents=n_agents, n_landmarks=n_preys,
                         episode_length=episode_length)
        self.n_preys = self.n_landmarks
        self.prey_vel = np.zeros((self.n_preys, 2))
        self.k_targets = 3
        self.k_agents = 3
        # predators reach accel*dt/damping at equilibrium; preys top out above it
        self.prey_max_speed = PREY_SPEED_FACTOR * ACCEL_GAIN * DT / DAMPING

    @property
    def prey_pos(self):
        return self.landmark_pos

    @prey_pos.setter
    def prey_pos(self, value):
        self.landmark_pos = value

    @property
    def spec(self) -> EnvSpec:
        obs_dim = 4 + 2 * self.k_targets + 2 * self.k_agents
        return EnvSpec(self.name, self.n_agents, obs_dim, 2, True,
                       self.episode_length)

    def reset(self, seed: int):
        out = super().reset(seed)
        self.prey_vel = np.zeros((self.n_preys, 2))
        return self._observe_all()

    def observe(self, i: int) -> np.ndarray:
        parts = [self.agent_pos[i], self.agent_vel[i]]
        near_prey = _closest_indices(self.agent_pos[i], self.prey_pos, self.k_targets)
        for j in near_prey:
            parts.append(self.prey_pos[j] - self.agent_pos[i])
        for _ in range(self.k_targets - len(near_prey)):
            parts.append(np.zeros(2))
        near = _closest_indices(self.agent_pos[i], self.agent_pos,
                                self.k_agents, exclude=i)
        for j in near:
            parts.append(self.agent_pos[j] - self.agent_pos[i])
        for _ in range(self.k_agents - len(near)):
            parts.append(np.zeros(2))
        return np.concatenate(parts)

    def _advance_world(self):
        # each prey flees its nearest predator at full tilt
        d = np.linalg.norm(self.prey_pos[:, None, :] - self.agent_pos[None, :, :],
                           axis=2)
        nearest = d.argmin(axis=1)
        away = self.prey_pos - self.agent_pos[nearest]
        norms = np.linalg.norm(away, axis=1, keepdims=True)
        forces = np.where(norms > 1e-12, away / np.maximum(norms, 1e-12), 0.0)
        forces = forces * PREY_SPEED_FACTOR
        self.landmark_pos, self.prey_vel = self._integrate(
            self.prey_pos, self.prey_vel, forces, max_speed=self.prey_max_speed)
