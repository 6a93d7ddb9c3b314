"""Training machinery: replay, TD targets, deterministic-policy-gradient and
episodic policy-gradient updates, and the self-supervised controller loss.

Replayed samples are pushed through the same communication pipeline as
execution, using the recurrent state stored at collection time (stored-state
replay; gradients do not flow across timesteps). Batches are laid out
agent-major: flat matrices hold agent i's samples in rows [i*B, (i+1)*B),
which keeps every shared network a single batched call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import commgraph, diffmath as dm
from .commgraph import CostLedger, build_topology
from .neural import AgentModel
from .protocol import ProtocolMode, step_protocol


@dataclass(eq=False)
class Transition:
    """One joint step of experience (all arrays copied at storage time)."""

    obs: np.ndarray            # (N, obs_dim)
    memory: np.ndarray         # (N, width) recurrent state fed to the encoder
    actions: np.ndarray        # (N, act_dim) executed actions
    reward: float              # shared team reward
    next_obs: np.ndarray
    next_memory: np.ndarray
    done: bool
    positions: np.ndarray      # (N, 2) for topology rebuild
    next_positions: np.ndarray
    active: np.ndarray         # (N,) bool
    next_active: np.ndarray


class ReplayBuffer:
    """Bounded ring of transitions with seeded uniform sampling."""

    def __init__(self, capacity: int, seed: int = 0):
        self.capacity = int(capacity)
        self._items: list[Transition] = []
        self._cursor = 0
        self._rng = np.random.default_rng(seed)

    def __len__(self):
        return len(self._items)

    def add(self, item: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._cursor] = item
        self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size: int) -> list[Transition]:
        if batch_size > len(self._items):
            raise ValueError(
                f"sample: requested {batch_size} of {len(self._items)} stored transitions")
        idx = self._rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]


def _stack(batch: list[Transition], attr: str) -> np.ndarray:
    return np.stack([getattr(t, attr) for t in batch])


@dataclass(eq=False)
class PipelineOut:
    """Graph handles from one batched replay of the communication pipeline."""

    n_agents: int
    batch: int
    emb0_flat: dm.DiffValue    # (N*B, width), agent-major
    emb1_flat: dm.DiffValue
    emb2_flat: dm.DiffValue
    actions_flat: dm.DiffValue  # (N*B, act_dim)
    gates: np.ndarray          # (B, N)
    scores: np.ndarray         # (B, N)

    def action_blocks(self) -> list[dm.DiffValue]:
        b = self.batch
        return [dm.slice_rows(self.actions_flat, i * b, (i + 1) * b)
                for i in range(self.n_agents)]


def _flatten_agent_major(arr: np.ndarray) -> np.ndarray:
    # (B, N, d) -> (N*B, d)
    return np.concatenate([arr[:, i, :] for i in range(arr.shape[1])], axis=0)


def replay_pipeline(model: AgentModel, mode: ProtocolMode, threshold: float,
                    L: float, obs: np.ndarray, memory: np.ndarray,
                    positions: np.ndarray, active: np.ndarray,
                    forced_gate: int | None = None) -> PipelineOut:
    """Re-run encode, both rounds, and the actor over a whole batch.

    obs (B, N, obs_dim), memory (B, N, width), positions (B, N, 2),
    active (B, N). forced_gate overrides the controller's decision for
    every agent (used by the controller's labeling pass).
    """
    mode = ProtocolMode.parse(mode)
    B, N = obs.shape[0], obs.shape[1]
    width = model.width
    emb0_flat, _ = model.encoder(dm.leaf(_flatten_agent_major(obs)),
                                 dm.leaf(_flatten_agent_major(memory)))
    rows = [[dm.slice_rows(emb0_flat, i * B + s, i * B + s + 1)
             for i in range(N)] for s in range(B)]
    topos = [build_topology(positions[s], L, active=active[s]) for s in range(B)]

    head1 = model.attention[1]
    emb1_rows = [[None] * N for _ in range(B)]
    for s in range(B):
        for i in range(N):
            members = [rows[s][j] for j in topos[s].one_hop[i]]
            emb1_rows[s][i], _ = head1.attend(rows[s][i], members)
    emb1_flat = dm.concat_rows([emb1_rows[s][i] for i in range(N) for s in range(B)])

    scores_node = model.controller(emb0_flat, emb1_flat)
    scores = scores_node.data.reshape(N, B).T.copy()  # (B, N)
    if forced_gate is not None:
        gates = np.full((B, N), int(forced_gate))
    elif mode is ProtocolMode.AC2C:
        if not (0.0 < threshold < 1.0):
            raise ValueError(f"replay_pipeline: threshold must be inside (0, 1), got {threshold}")
        gates = (scores > threshold).astype(int)
    elif mode in (ProtocolMode.AC2C_NO_CONTROLLER, ProtocolMode.GNN_TWO_ROUND):
        gates = np.ones((B, N), dtype=int)
    else:
        gates = np.zeros((B, N), dtype=int)
    gates = gates * active.astype(int)

    head2 = model.attention[2]
    zero = dm.zeros(1, width)
    emb2_rows = [[zero] * N for _ in range(B)]
    for s in range(B):
        for i in range(N):
            if mode is ProtocolMode.ONE_ROUND:
                continue
            if mode is ProtocolMode.GNN_TWO_ROUND:
                members_idx = topos[s].one_hop[i]
            elif gates[s, i]:
                members_idx = topos[s].two_hop[i]
            else:
                continue
            members = [emb1_rows[s][j] for j in members_idx]
            emb2_rows[s][i], _ = head2.attend(emb1_rows[s][i], members)
    emb2_flat = dm.concat_rows([emb2_rows[s][i] for i in range(N) for s in range(B)])

    actions_flat = model.actor(emb0_flat, emb1_flat, emb2_flat)
    return PipelineOut(N, B, emb0_flat, emb1_flat, emb2_flat, actions_flat,
                       gates, scores)


# ---------------------------------------------------------------------------
# DDPG updates
# ---------------------------------------------------------------------------


def td_targets(target_model: AgentModel, batch: list[Transition], gamma: float,
               mode: ProtocolMode, threshold: float, L: float) -> np.ndarray:
    """Bootstrapped targets y = r + gamma * Q'(next, pi'(next)), one per
    agent slot; terminal transitions use y = r."""
    B = len(batch)
    next_obs = _stack(batch, "next_obs")
    next_mem = _stack(batch, "next_memory")
    next_pos = _stack(batch, "next_positions")
    next_act = _stack(batch, "next_active")
    rewards = np.array([t.reward for t in batch])
    dones = np.array([t.done for t in batch])
    with dm.no_grad():
        pipe = replay_pipeline(target_model, mode, threshold, L,
                               next_obs, next_mem, next_pos, next_act)
        mems = [dm.leaf(next_mem[:, i, :]) for i in range(target_model.n_agents)]
        obs_l = [dm.leaf(next_obs[:, i, :]) for i in range(target_model.n_agents)]
        q_next = target_model.critic(mems, obs_l, pipe.action_blocks()).data
    y = rewards[:, None] + gamma * q_next
    y[dones] = rewards[dones, None]
    return y


def critic_update(model: AgentModel, target_model: AgentModel,
                  batch: list[Transition], gamma: float, lr: float,
                  clip_norm: float, mode: ProtocolMode, threshold: float,
                  L: float) -> float:
    """One clipped Adam step on the critic against TD targets; returns the
    pre-step mean squared error."""
    y = td_targets(target_model, batch, gamma, mode, threshold, L)
    obs = _stack(batch, "obs")
    mem = _stack(batch, "memory")
    act = _stack(batch, "actions")
    n = model.n_agents
    mems = [dm.leaf(mem[:, i, :]) for i in range(n)]
    obs_l = [dm.leaf(obs[:, i, :]) for i in range(n)]
    acts = [dm.leaf(act[:, i, :]) for i in range(n)]
    q = model.critic(mems, obs_l, acts)
    loss = dm.mean_all(dm.square(dm.sub(q, dm.leaf(y))))
    value = float(loss.data[0, 0])
    if not np.isfinite(value):
        raise FloatingPointError(f"critic_update: non-finite loss {value}")
    model.zero_grads()
    dm.backward(loss)
    dm.adam_step(model.critic_store, lr, clip_norm)
    return value


def actor_update_ddpg(model: AgentModel, batch: list[Transition], lr: float,
                      clip_norm: float, mode: ProtocolMode, threshold: float,
                      L: float, critic_fn=None) -> float:
    """Ascend the critic's value of the current policy's actions.

    The batch states are replayed through the full pipeline so the gradient
    reaches the encoder and both attention heads; only the policy store is
    stepped, the critic is read-only here. critic_fn may replace the model
    critic (tests drive the update against closed-form critics).
    """
    obs = _stack(batch, "obs")
    mem = _stack(batch, "memory")
    pos = _stack(batch, "positions")
    act_mask = _stack(batch, "active")
    pipe = replay_pipeline(model, mode, threshold, L, obs, mem, pos, act_mask)
    n = model.n_agents
    if critic_fn is None:
        mems = [dm.leaf(mem[:, i, :]) for i in range(n)]
        obs_l = [dm.leaf(obs[:, i, :]) for i in range(n)]
        q = model.critic(mems, obs_l, pipe.action_blocks())
    else:
        q = critic_fn(pipe.action_blocks())
    objective = dm.mean_all(q)
    value = float(objective.data[0, 0])
    if not np.isfinite(value):
        raise FloatingPointError(f"actor_update_ddpg: non-finite objective {value}")
    model.zero_grads()
    dm.backward(dm.scale(objective, -1.0))
    dm.adam_step(model.policy_store, lr, clip_norm)
    return value


# ---------------------------------------------------------------------------
# Controller updates (self-supervised)
# ---------------------------------------------------------------------------


def controller_labels(model: AgentModel, batch: list[Transition],
                      threshold: float, L: float):
    """Binary relabeling of a batch: does the second round change the action?

    The batch is replayed with every gate forced open to obtain the
    second-round embedding, then labeled 1 where the L2 gap between the
    one-round and two-round actions exceeds the threshold. Labels depend on
    the policy nets only, never on the controller.

    Returns (labels (B, N), emb0 (N*B, width), emb1 (N*B, width), active mask).
    """
    obs = _stack(batch, "obs")
    mem = _stack(batch, "memory")
    pos = _stack(batch, "positions")
    act_mask = _stack(batch, "active")
    B, n = obs.shape[0], model.n_agents
    with dm.no_grad():
        pipe = replay_pipeline(model, ProtocolMode.AC2C, threshold, L,
                               obs, mem, pos, act_mask, forced_gate=1)
        two_round = pipe.actions_flat.data
        one_round = model.actor(pipe.emb0_flat, pipe.emb1_flat,
                                dm.zeros(n * B, model.width)).data
    gap = np.linalg.norm(one_round - two_round, axis=1)  # (N*B,)
    labels = (gap > threshold).astype(float).reshape(n, B).T
    return labels, pipe.emb0_flat.data, pipe.emb1_flat.data, act_mask


def controller_update(model: AgentModel, batch: list[Transition],
                      threshold: float, L: float, lr: float,
                      clip_norm: float) -> float:
    """Binary cross-entropy step on the controller store alone."""
    labels, emb0, emb1, act_mask = controller_labels(model, batch, threshold, L)
    B, n = labels.shape
    y_flat = labels.T.reshape(n * B, 1)
    mask_flat = act_mask.astype(float).T.reshape(n * B, 1)
    scores = model.controller(dm.leaf(emb0), dm.leaf(emb1))
    y = dm.leaf(y_flat)
    one_minus_y = dm.leaf(1.0 - y_flat)
    one_minus_s = dm.add_scalar(dm.scale(scores, -1.0), 1.0)
    per_row = dm.add(dm.mul(y, dm.log(scores)),
                     dm.mul(one_minus_y, dm.log(one_minus_s)))
    denom = max(1.0, float(mask_flat.sum()))
    loss = dm.scale(dm.sum_all(dm.mul(per_row, dm.leaf(mask_flat))), -1.0 / denom)
    value = float(loss.data[0, 0])
    model.zero_grads()
    dm.backward(loss)
    dm.adam_step(model.controller_store, lr, clip_norm)
    return value


# ---------------------------------------------------------------------------
# REINFORCE
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class EpisodeRecord:
    """Complete on-policy episode for the episodic policy gradient."""

    obs: list = field(default_factory=list)        # (N, obs_dim) per step
    memory: list = field(default_factory=list)     # (N, width) per step
    actions: list = field(default_factory=list)    # (N,) int per step
    rewards: list = field(default_factory=list)    # float per step
    positions: list = field(default_factory=list)  # (N, 2) per step
    active: list = field(default_factory=list)     # (N,) bool per step

    def discounted_return(self, gamma: float) -> float:
        return float(sum(r * gamma ** t for t, r in enumerate(self.rewards)))


def reinforce_loss(model: AgentModel, episodes: list[EpisodeRecord],
                   baseline: float, gamma: float, mode: ProtocolMode,
                   threshold: float, L: float) -> dm.DiffValue:
    """Negated episodic policy-gradient objective as a scalar graph:
    mean over episodes of (G - baseline) * sum of log-probs of the taken
    actions over every active agent step."""
    steps = []
    weights = []
    for ep in episodes:
        advantage = ep.discounted_return(gamma) - baseline
        for t in range(len(ep.rewards)):
            steps.append((ep.obs[t], ep.memory[t], ep.actions[t],
                          ep.positions[t], ep.active[t]))
            weights.append(advantage)
    B, n = len(steps), model.n_agents
    obs = np.stack([s[0] for s in steps])
    mem = np.stack([s[1] for s in steps])
    pos = np.stack([s[3] for s in steps])
    act_mask = np.stack([s[4] for s in steps])
    taken = np.stack([s[2] for s in steps])  # (B, N) ints

    pipe = replay_pipeline(model, mode, threshold, L, obs, mem, pos, act_mask)
    logp = dm.log(dm.softmax_rows(pipe.actions_flat))
    onehot = np.zeros((n * B, model.act_dim))
    weight_col = np.zeros((n * B, 1))
    w = np.asarray(weights, dtype=float)
    for i in range(n):
        onehot[i * B + np.arange(B), taken[:, i]] = 1.0
        weight_col[i * B:(i + 1) * B, 0] = w * act_mask[:, i]
    picked = dm.mul(logp, dm.leaf(onehot))
    weighted = dm.mul(picked, dm.leaf(np.repeat(weight_col, model.act_dim, axis=1)))
    return dm.scale(dm.sum_all(weighted), -1.0 / max(1, len(episodes)))


def reinforce_update(model: AgentModel, episodes: list[EpisodeRecord],
                     baseline: float, gamma: float, lr: float,
                     clip_norm: float, mode: ProtocolMode, threshold: float,
                     L: float) -> float:
    """One clipped Adam step on the policy store along the episodic policy
    gradient; discrete actions only. Returns the maximized objective."""
    if model.continuous:
        raise ValueError("reinforce_update: requires a discrete-action environment")
    loss = reinforce_loss(model, episodes, baseline, gamma, mode, threshold, L)
    value = float(loss.data[0, 0])
    if not np.isfinite(value):
        raise FloatingPointError(f"reinforce_update: non-finite loss {value}")
    model.zero_grads()
    dm.backward(loss)
    dm.adam_step(model.policy_store, lr, clip_norm)
    return -value


# ---------------------------------------------------------------------------
# Target networks
# ---------------------------------------------------------------------------


def soft_update(target_store: dm.ParamStore, online_store: dm.ParamStore,
                tau: float) -> None:
    """Polyak blend: target <- tau * online + (1 - tau) * target."""
    if target_store.names() != online_store.names():
        raise ValueError("soft_update: parameter name sets differ")
    for name in target_store.names():
        t, o = target_store[name], online_store[name]
        if t.data.shape != o.data.shape:
            raise ValueError(
                f"soft_update: shape mismatch for {name!r}: "
                f"{t.data.shape} vs {o.data.shape}")
        t.data *= (1.0 - tau)
        t.data += tau * o.data


class TargetNets:
    """Delayed copies of every store, soft-blended each cycle and hard-synced
    on a fixed period so both stabilisation constants are honored."""

    def __init__(self, model: AgentModel, tau: float = 0.01, hard_period: int = 200):
        self.model = model.clone()
        self.tau = tau
        self.hard_period = hard_period
        self.cycles = 0

    def update(self, online: AgentModel) -> None:
        self.cycles += 1
        for name, store in self.model.stores().items():
            soft_update(store, online.stores()[name], self.tau)
        if self.hard_period and self.cycles % self.hard_period == 0:
            for name, store in self.model.stores().items():
                store.assign_from(online.stores()[name])


# ---------------------------------------------------------------------------
# Trainers
# ---------------------------------------------------------------------------


@dataclass
class TrainSettings:
    mode: ProtocolMode = ProtocolMode.AC2C
    threshold: float = 0.5
    comm_range: float = 1.0
    w_bits: int = 4096
    gamma: float = 0.99
    actor_lr: float = 1e-4
    critic_lr: float = 1e-4
    controller_lr: float = 1e-4
    clip_norm: float = 0.1
    tau: float = 0.01
    hard_period: int = 200
    replay_capacity: int = 1_000_000
    batch_size: int = 128
    updates_per_episode: int = 2
    warmup_episodes: int = 50
    noise_sigma: float = 0.1
    noise_final: float = 0.02
    noise_decay_frac: float = 0.8
    episodes_per_update: int = 4   # REINFORCE rollout batch


def _episode_seed(base_seed: int, stream: int, episode: int):
    return np.random.SeedSequence((base_seed, stream, episode))


class _TrainerBase:
    def __init__(self, env, model: AgentModel, settings: TrainSettings, seed: int):
        self.env = env
        self.model = model
        self.s = settings
        self.seed = seed
        self.rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
        self.buffer = ReplayBuffer(settings.replay_capacity, seed=seed)
        self.episodes_done = 0

    def _fresh_memory(self):
        return np.zeros((self.model.n_agents, self.model.width))

    def _policy_step(self, obs, memory, ledger=None):
        topo = build_topology(self.env.positions, self.s.comm_range,
                              active=self.env.active)
        return step_protocol(self.model, self.s.mode, topo, obs, memory,
                             self.s.threshold, ledger=ledger,
                             active=self.env.active)

    def evaluate(self, episodes: int, greedy: bool = True) -> dict:
        """Noise-free rollouts; aggregates the evaluation metrics."""
        returns, per_step, open_rates, r1_bits, r2_bits, successes = [], [], [], [], [], []
        n = self.model.n_agents
        for k in range(episodes):
            obs = self.env.reset(_episode_seed(self.seed, 3, k))
            memory = self._fresh_memory()
            ledger = CostLedger(self.s.w_bits)
            total = 0.0
            steps = 0
            collisions = []
            active_log = []
            done = False
            while not done:
                active_log.append(self.env.active)
                with dm.no_grad():
                    result = self._policy_step(obs, memory, ledger=ledger)
                acts = self._select_actions(result, explore=False)
                obs, reward, done, info = self.env.step(acts)
                memory = result.next_memories
                memory[info["reset_memory"]] = 0.0
                total += reward
                steps += 1
                collisions.append(info["collisions"])
            returns.append(total)
            per_step.append(total / (steps * n))
            open_rates.append(ledger.opening_rate(active_log))
            b1, b2 = ledger.bits_per_timestep()
            r1_bits.append(b1)
            r2_bits.append(b2)
            if self.env.name == "traffic_junction":
                successes.append(all(c == 0 for c in collisions))
        out = {
            "episodes": episodes,
            "episode_return": float(np.mean(returns)),
            "reward_per_step_per_agent": float(np.mean(per_step)),
            "round1_bits_per_step": float(np.mean(r1_bits)),
            "round2_bits_per_step": float(np.mean(r2_bits)),
            "opening_rate": float(np.mean(open_rates)),
        }
        if successes:
            out["success_rate"] = float(np.mean(successes))
        return out


class DdpgTrainer(_TrainerBase):
    """Off-policy trainer for the continuous-action particle tasks."""

    def __init__(self, env, model, settings, seed, total_episodes=None):
        super().__init__(env, model, settings, seed)
        if not model.continuous:
            raise ValueError("DdpgTrainer: requires a continuous-action environment")
        self.targets = TargetNets(model, settings.tau, settings.hard_period)
        self.total_episodes = total_episodes or 2000

    def _sigma(self) -> float:
        s = self.s
        horizon = max(1, int(self.total_episodes * s.noise_decay_frac))
        frac = min(1.0, self.episodes_done / horizon)
        return s.noise_sigma + (s.noise_final - s.noise_sigma) * frac

    def _select_actions(self, result, explore: bool) -> np.ndarray:
        acts = result.actions.copy()
        if explore:
            acts += self.rng.normal(0.0, self._sigma(), size=acts.shape)
        return np.clip(acts, -1.0, 1.0)

    def run_episode(self) -> float:
        """One exploration episode into the buffer; returns the episode return."""
        random_phase = self.episodes_done < self.s.warmup_episodes
        obs = self.env.reset(_episode_seed(self.seed, 2, self.episodes_done))
        memory = self._fresh_memory()
        total = 0.0
        done = False
        while not done:
            pos = self.env.positions
            active = self.env.active
            with dm.no_grad():
                result = self._policy_step(obs, memory)
            if random_phase:
                acts = self.rng.uniform(-1, 1, size=(self.model.n_agents, 2))
            else:
                acts = self._select_actions(result, explore=True)
            next_obs, reward, done, info = self.env.step(acts)
            next_memory = result.next_memories
            next_memory[info["reset_memory"]] = 0.0
            self.buffer.add(Transition(
                obs.copy(), memory.copy(), acts.copy(), reward,
                next_obs.copy(), next_memory.copy(), done,
                pos, self.env.positions, active, self.env.active))
            obs = next_obs
            memory = next_memory
            total += reward
        self.episodes_done += 1
        return total

    def update_cycle(self) -> dict | None:
        if len(self.buffer) < self.s.batch_size:
            return None
        s = self.s
        batch = self.buffer.sample(s.batch_size)
        closs = critic_update(self.model, self.targets.model, batch, s.gamma,
                              s.critic_lr, s.clip_norm, s.mode, s.threshold,
                              s.comm_range)
        aobj = actor_update_ddpg(self.model, batch, s.actor_lr, s.clip_norm,
                                 s.mode, s.threshold, s.comm_range)
        culoss = controller_update(self.model, batch, s.threshold,
                                   s.comm_range, s.controller_lr, s.clip_norm)
        self.targets.update(self.model)
        return {"critic_loss": closs, "actor_objective": aobj,
                "controller_loss": culoss}

    def train_episode(self) -> dict:
        ep_return = self.run_episode()
        stats = None
        for _ in range(self.s.updates_per_episode):
            stats = self.update_cycle() or stats
        return {"episode_return": ep_return, "updates": stats}


class ReinforceTrainer(_TrainerBase):
    """On-policy trainer for the discrete-action traffic task."""

    def __init__(self, env, model, settings, seed, total_episodes=None):
        super().__init__(env, model, settings, seed)
        if model.continuous:
            raise ValueError("ReinforceTrainer: requires a discrete-action environment")
        self.total_episodes = total_episodes or 2000
        self._pending: list[EpisodeRecord] = []

    def _select_actions(self, result, explore: bool) -> np.ndarray:
        logits = result.actions
        shifted = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        if explore:
            u = self.rng.uniform(size=(logits.shape[0], 1))
            acts = (u > probs.cumsum(axis=1)).sum(axis=1)
        else:
            acts = probs.argmax(axis=1)
        return np.where(self.env.active, acts, 0).astype(int)

    def run_episode(self) -> tuple[EpisodeRecord, float]:
        record = EpisodeRecord()
        obs = self.env.reset(_episode_seed(self.seed, 2, self.episodes_done))
        memory = self._fresh_memory()
        total = 0.0
        done = False
        while not done:
            pos = self.env.positions
            active = self.env.active
            with dm.no_grad():
                result = self._policy_step(obs, memory)
            acts = self._select_actions(result, explore=True)
            record.obs.append(obs.copy())
            record.memory.append(memory.copy())
            record.actions.append(acts.copy())
            record.positions.append(pos)
            record.active.append(active)
            obs, reward, done, info = self.env.step(acts)
            memory = result.next_memories
            memory[info["reset_memory"]] = 0.0
            record.rewards.append(reward)
            self.buffer.add(Transition(
                record.obs[-1], record.memory[-1],
                np.zeros((self.model.n_agents, self.model.act_dim)), reward,
                obs.copy(), memory.copy(), done, pos, self.env.positions,
                active, self.env.active))
            total += reward
        self.episodes_done += 1
        return record, total

    def train_episode(self) -> dict:
        record, ep_return = self.run_episode()
        self._pending.append(record)
        stats = None
        if len(self._pending) >= self.s.episodes_per_update:
            returns = [ep.discounted_return(self.s.gamma) for ep in self._pending]
            baseline = float(np.mean(returns))
            objective = reinforce_update(self.model, self._pending, baseline,
                                         self.s.gamma, self.s.actor_lr,
                                         self.s.clip_norm, self.s.mode,
                                         self.s.threshold, self.s.comm_range)
            culoss = None
            if len(self.buffer) >= self.s.batch_size:
                culoss = controller_update(self.model, self.buffer.sample(self.s.batch_size),
                                           self.s.threshold, self.s.comm_range,
                                           self.s.controller_lr, self.s.clip_norm)
            self._pending = []
            stats = {"pg_objective": objective, "baseline": baseline,
                     "controller_loss": culoss}
        return {"episode_return": ep_return, "updates": stats}
