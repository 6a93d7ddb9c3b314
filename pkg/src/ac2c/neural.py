"""Network blocks: recurrent feature encoder, per-round attention heads,
gating controller, action head, and the centralized critic.

Every block is a pure function of (parameters, inputs); recurrent state is
returned explicitly, never kept inside. The encoder and action heads are
shared across agents, so their parameters live exactly once in the policy
store. All row dimensions are batch rows, which lets one call serve any
number of agents or replay samples at once.
"""

from __future__ import annotations

import math

import numpy as np

from . import diffmath as dm
from .diffmath import DiffValue, ParamStore

DEFAULT_WIDTH = 128


def _linear(store: ParamStore, prefix: str, n_in: int, n_out: int, rng):
    w = store.init_uniform(f"{prefix}/w", n_in, n_out, rng)
    b = store.init_zeros(f"{prefix}/b", 1, n_out)
    return w, b


def _affine(x: DiffValue, w: DiffValue, b: DiffValue) -> DiffValue:
    return dm.add_rowvec(dm.matmul(x, w), b)


def _expect_cols(name: str, x: DiffValue, cols: int):
    if x.data.shape[1] != cols:
        raise ValueError(f"{name}: expected {cols} columns, got shape {x.data.shape}")


class EncoderNet:
    """Gated recurrent cell turning (observation, memory) into the initial
    embedding and the next memory. The embedding is the new hidden state."""

    def __init__(self, store: ParamStore, obs_dim: int, width: int, rng):
        self.obs_dim = obs_dim
        self.width = width
        p = "encoder"
        self.w_xu, self.b_u = _linear(store, f"{p}/update_x", obs_dim, width, rng)
        self.w_hu = store.init_uniform(f"{p}/update_h/w", width, width, rng)
        self.w_xr, self.b_r = _linear(store, f"{p}/reset_x", obs_dim, width, rng)
        self.w_hr = store.init_uniform(f"{p}/reset_h/w", width, width, rng)
        self.w_xc, self.b_c = _linear(store, f"{p}/cand_x", obs_dim, width, rng)
        self.w_hc = store.init_uniform(f"{p}/cand_h/w", width, width, rng)

    def __call__(self, obs: DiffValue, memory: DiffValue):
        _expect_cols("encode", obs, self.obs_dim)
        _expect_cols("encode", memory, self.width)
        if obs.data.shape[0] != memory.data.shape[0]:
            raise ValueError(
                f"encode: row mismatch {obs.data.shape} vs {memory.data.shape}"
            )
        update = dm.sigmoid(dm.add(_affine(obs, self.w_xu, self.b_u),
                                   dm.matmul(memory, self.w_hu)))
        reset = dm.sigmoid(dm.add(_affine(obs, self.w_xr, self.b_r),
                                  dm.matmul(memory, self.w_hr)))
        cand = dm.tanh(dm.add(_affine(obs, self.w_xc, self.b_c),
                              dm.matmul(dm.mul(reset, memory), self.w_hc)))
        keep = dm.add_scalar(dm.scale(update, -1.0), 1.0)
        h_next = dm.add(dm.mul(keep, memory), dm.mul(update, cand))
        return h_next, h_next


class AttentionHead:
    """Single-round attention aggregation with its own key/query/value maps.

    The attended set is exactly the members handed in, optionally prefixed
    by the querying agent itself (the default, since an agent's own
    embedding takes part in aggregation). Scores are scaled dot products
    through a leaky rectifier; the output is the tanh of the
    attention-weighted value sum. With no members at all the head falls
    back to self-only attention, so isolated agents degrade gracefully.
    """

    def __init__(self, store: ParamStore, round_index: int, width: int, rng):
        if round_index not in (1, 2):
            raise ValueError(f"AttentionHead: round must be 1 or 2, got {round_index}")
        self.round_index = round_index
        self.width = width
        p = f"attention{round_index}"
        self.w_key = store.init_uniform(f"{p}/key", width, width, rng)
        self.w_query = store.init_uniform(f"{p}/query", width, width, rng)
        self.w_value = store.init_uniform(f"{p}/value", width, width, rng)

    def attend(self, self_emb: DiffValue, neighbor_embs, include_self: bool = True):
        """Aggregate neighbor embeddings; returns (embedding, weights).

        weights is the softmax row over the attended members, ordered
        self-first when included, then the neighbors as given.
        """
        _expect_cols(f"attend(round {self.round_index})", self_emb, self.width)
        for e in neighbor_embs:
            _expect_cols(f"attend(round {self.round_index})", e, self.width)
        members = ([self_emb] if include_self else []) + list(neighbor_embs)
        if not members:
            members = [self_emb]
        stacked = members[0] if len(members) == 1 else dm.concat_rows(members)
        keys = dm.matmul(stacked, self.w_key)
        values = dm.matmul(stacked, self.w_value)
        query = dm.matmul(self_emb, self.w_query)
        scores = dm.scale(dm.matmul(query, dm.transpose(keys)), 1.0 / math.sqrt(self.width))
        weights = dm.softmax_rows(dm.leaky_relu(scores))
        out = dm.tanh(dm.matmul(weights, values))
        return out, weights


class ControllerNet:
    """Scores the need for the second round from the pre- and post-round-1
    embeddings; sigmoid output stays strictly inside (0, 1)."""

    def __init__(self, store: ParamStore, width: int, hidden: int, rng):
        self.width = width
        self.w1, self.b1 = _linear(store, "controller/hidden", 2 * width, hidden, rng)
        self.w2, self.b2 = _linear(store, "controller/out", hidden, 1, rng)

    def __call__(self, emb0: DiffValue, emb1: DiffValue) -> DiffValue:
        _expect_cols("controller_score", emb0, self.width)
        _expect_cols("controller_score", emb1, self.width)
        x = dm.concat_cols([emb0, emb1])
        h = dm.tanh(_affine(x, self.w1, self.b1))
        return dm.sigmoid(_affine(h, self.w2, self.b2))


class ActorNet:
    """Action head over the concatenated round embeddings (three slots wide;
    the second-round slot may be all zeros). Continuous actions are
    tanh-bounded to the unit box, discrete environments get raw logits."""

    def __init__(self, store: ParamStore, width: int, hidden: int,
                 act_dim: int, continuous: bool, rng):
        self.width = width
        self.act_dim = act_dim
        self.continuous = continuous
        self.w1, self.b1 = _linear(store, "actor/hidden", 3 * width, hidden, rng)
        self.w2, self.b2 = _linear(store, "actor/out", hidden, act_dim, rng)

    def __call__(self, emb0: DiffValue, emb1: DiffValue, emb2: DiffValue) -> DiffValue:
        for e in (emb0, emb1, emb2):
            _expect_cols("act", e, self.width)
        x = dm.concat_cols([emb0, emb1, emb2])
        h = dm.tanh(_affine(x, self.w1, self.b1))
        out = _affine(h, self.w2, self.b2)
        return dm.tanh(out) if self.continuous else out


class CriticNet:
    """Centralized value head: one scalar per agent from everyone's memory,
    observation, and action. Used during training only.

    Per-agent (memory, obs, action) triples pass through a shared encoder,
    are concatenated in fixed agent order into a trunk, and a final linear
    layer emits one value per agent slot.
    """

    def __init__(self, store: ParamStore, n_agents: int, mem_width: int,
                 obs_dim: int, act_dim: int, hidden: int, rng):
        self.n_agents = n_agents
        self.mem_width = mem_width
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        per_agent = mem_width + obs_dim + act_dim
        self.w_enc, self.b_enc = _linear(store, "critic/agent_enc", per_agent, hidden, rng)
        self.w_trunk, self.b_trunk = _linear(store, "critic/trunk", n_agents * hidden, hidden, rng)
        self.w_out, self.b_out = _linear(store, "critic/out", hidden, n_agents, rng)

    def __call__(self, memories, observations, actions) -> DiffValue:
        if not (len(memories) == len(observations) == len(actions) == self.n_agents):
            raise ValueError(
                f"critic_value: expected {self.n_agents} agent slots, got "
                f"{len(memories)}/{len(observations)}/{len(actions)}"
            )
        encs = []
        for mem, obs, act in zip(memories, observations, actions):
            _expect_cols("critic_value", mem, self.mem_width)
            _expect_cols("critic_value", obs, self.obs_dim)
            _expect_cols("critic_value", act, self.act_dim)
            x = dm.concat_cols([mem, obs, act])
            encs.append(dm.tanh(_affine(x, self.w_enc, self.b_enc)))
        trunk = dm.tanh(_affine(dm.concat_cols(encs), self.w_trunk, self.b_trunk))
        return _affine(trunk, self.w_out, self.b_out)


class AgentModel:
    """All networks for one experiment plus their three parameter stores.

    policy_store holds the encoder, both attention heads, and the actor
    (everything the policy gradient trains); the controller and critic each
    get their own store so their optimizer steps cannot touch anything
    else.
    """

    def __init__(self, obs_dim: int, act_dim: int, n_agents: int,
                 continuous: bool, width: int = DEFAULT_WIDTH,
                 hidden: int = DEFAULT_WIDTH, seed: int = 0):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.n_agents = n_agents
        self.continuous = continuous
        self.width = width
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        self.policy_store = ParamStore("policy")
        self.controller_store = ParamStore("controller")
        self.critic_store = ParamStore("critic")
        self.encoder = EncoderNet(self.policy_store, obs_dim, width, rng)
        self.attention = {
            1: AttentionHead(self.policy_store, 1, width, rng),
            2: AttentionHead(self.policy_store, 2, width, rng),
        }
        self.actor = ActorNet(self.policy_store, width, hidden, act_dim, continuous, rng)
        self.controller = ControllerNet(self.controller_store, width, hidden, rng)
        self.critic = CriticNet(self.critic_store, n_agents, width, obs_dim,
                                act_dim, hidden, rng)

    def stores(self) -> dict[str, ParamStore]:
        return {
            "policy": self.policy_store,
            "controller": self.controller_store,
            "critic": self.critic_store,
        }

    def clone(self) -> "AgentModel":
        """Independent copy with identical parameter values (for targets)."""
        other = AgentModel(self.obs_dim, self.act_dim, self.n_agents,
                           self.continuous, self.width,
                           hidden=self.actor.w1.data.shape[1], seed=0)
        for name, store in other.stores().items():
            store.assign_from(self.stores()[name])
        return other

    def zero_grads(self) -> None:
        for store in self.stores().values():
            store.zero_grads()
