"""The two-round communication protocol executed once per timestep.

Round 1: every agent aggregates its one-hop neighbors' initial embeddings.
Gate:    a controller score per agent, thresholded strictly, decides who
         requests the second round (modes can force the gate).
Round 2: gated agents aggregate their two-hop neighbors' round-1 embeddings
         (relayed verbatim by one-hop neighbors); everyone else carries an
         all-zero second-round embedding.

Rounds are synchronous barriers: each round reads only embeddings frozen
before the round started, so results cannot depend on agent iteration
order. Exactly two rounds are supported.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import commgraph, diffmath as dm
from .commgraph import Topology
from .neural import AgentModel


class ProtocolMode(enum.Enum):
    AC2C = "ac2c"
    AC2C_NO_CONTROLLER = "ac2c_no_controller"
    GNN_TWO_ROUND = "gnn_two_round"
    ONE_ROUND = "one_round"

    @classmethod
    def parse(cls, value) -> "ProtocolMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            options = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown protocol mode {value!r}; expected one of: {options}")


@dataclass
class RoundState:
    """Everything the protocol produced for one timestep."""

    emb0: list  # per-agent DiffValue rows (1, width)
    emb1: list
    emb2: list
    gates: np.ndarray  # 0/1 per agent
    scores: np.ndarray  # raw controller outputs per agent
    attn1: list = field(default_factory=list)  # (weights, member ids) per agent
    attn2: list = field(default_factory=list)


@dataclass
class StepResult:
    rounds: RoundState
    actions: np.ndarray  # (n_agents, act_dim), detached
    action_node: object  # DiffValue (n_agents, act_dim)
    next_memories: np.ndarray  # (n_agents, width), detached
    cost: dict | None


def run_round1(model: AgentModel, topo: Topology, emb0_list):
    """First exchange: attend over one-hop neighbors' initial embeddings.

    All agents read the same frozen emb0 snapshot, so the order of the loop
    is immaterial. Returns (emb1_list, attn_info).
    """
    head = model.attention[1]
    emb1 = []
    attn = []
    for i in range(topo.n_agents):
        members = [emb0_list[j] for j in topo.one_hop[i]]
        out, weights = head.attend(emb0_list[i], members)
        emb1.append(out)
        attn.append((weights.data.copy(), (i,) + topo.one_hop[i]))
    return emb1, attn


def run_gate(model: AgentModel, mode: ProtocolMode, emb0_list, emb1_list,
             threshold: float, active=None):
    """Controller pass: gate[i] = 1 iff score_i exceeds the threshold strictly.

    Mode overrides: the no-controller variant always opens, the one-round
    ablation never does, and the GNN variant always runs its (one-hop)
    second exchange. Inactive agents never open. Returns (gates, scores).
    """
    mode = ProtocolMode.parse(mode)
    n = len(emb0_list)
    if mode is ProtocolMode.AC2C and not (0.0 < threshold < 1.0):
        raise ValueError(f"run_gate: threshold must be inside (0, 1), got {threshold}")
    scores_node = model.controller(dm.concat_rows(emb0_list), dm.concat_rows(emb1_list))
    scores = scores_node.data.ravel().copy()
    if mode is ProtocolMode.AC2C:
        gates = (scores > threshold).astype(int)
    elif mode is ProtocolMode.AC2C_NO_CONTROLLER:
        gates = np.ones(n, dtype=int)
    elif mode is ProtocolMode.GNN_TWO_ROUND:
        gates = np.ones(n, dtype=int)
    else:  # ONE_ROUND
        gates = np.zeros(n, dtype=int)
    if active is not None:
        gates = gates * np.asarray(active, dtype=int)
    return gates, scores


def run_round2(model: AgentModel, mode: ProtocolMode, topo: Topology,
               emb1_list, gates):
    """Second exchange. Gated-off agents get an exact zero embedding."""
    mode = ProtocolMode.parse(mode)
    head = model.attention[2]
    width = model.width
    emb2 = []
    attn = []
    zero = dm.zeros(1, width)
    for i in range(topo.n_agents):
        if mode is ProtocolMode.ONE_ROUND:
            emb2.append(zero)
            attn.append((np.zeros((1, 0)), ()))
            continue
        if mode is ProtocolMode.GNN_TWO_ROUND:
            members_idx = topo.one_hop[i]
        else:
            if not gates[i]:
                emb2.append(zero)
                attn.append((np.zeros((1, 0)), ()))
                continue
            members_idx = topo.two_hop[i]
        members = [emb1_list[j] for j in members_idx]
        out, weights = head.attend(emb1_list[i], members)
        emb2.append(out)
        attn.append((weights.data.copy(), (i,) + tuple(members_idx)))
    return emb2, attn


def step_protocol(model: AgentModel, mode: ProtocolMode, topo: Topology,
                  observations, memories, threshold: float,
                  ledger: commgraph.CostLedger | None = None,
                  active=None) -> StepResult:
    """Full per-timestep pipeline: encode, two communication rounds, act.

    observations: (n_agents, obs_dim); memories: (n_agents, width).
    Returns detached actions/memories for the environment plus the full
    round state (graph nodes included) for training and tests.
    """
    mode = ProtocolMode.parse(mode)
    n = topo.n_agents
    obs = np.asarray(observations, dtype=np.float64)
    mem = np.asarray(memories, dtype=np.float64)
    if obs.shape[0] != n or mem.shape[0] != n:
        raise ValueError(
            f"step_protocol: expected {n} agent rows, got {obs.shape} / {mem.shape}"
        )

    emb0_all, h_next = model.encoder(dm.leaf(obs), dm.leaf(mem))
    emb0_list = [dm.slice_rows(emb0_all, i, i + 1) for i in range(n)]
    emb1_list, attn1 = run_round1(model, topo, emb0_list)
    gates, scores = run_gate(model, mode, emb0_list, emb1_list, threshold, active=active)
    emb2_list, attn2 = run_round2(model, mode, topo, emb1_list, gates)

    action_node = model.actor(emb0_all,
                              dm.concat_rows(emb1_list),
                              dm.concat_rows(emb2_list))
    rounds = RoundState(emb0_list, emb1_list, emb2_list, gates, scores, attn1, attn2)
    cost = ledger.record(topo, gates, mode.value) if ledger is not None else None
    return StepResult(rounds, action_node.data.copy(), action_node,
                      h_next.data.copy(), cost)
