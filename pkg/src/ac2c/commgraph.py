"""Per-timestep communication topology under a distance cap, plus the
bit-accounting ledger for both communication rounds.

Link rule: two agents can talk iff their Euclidean distance is <= L (closed
disk; the boundary counts as in range). Two-hop neighbors are everyone
reachable through exactly one relay, minus the one-hop set and the agent
itself. Topologies are immutable once built and rebuilt from scratch every
timestep.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

AC2C = "ac2c"
AC2C_NO_CONTROLLER = "ac2c_no_controller"
GNN_TWO_ROUND = "gnn_two_round"
ONE_ROUND = "one_round"


@dataclass(frozen=True)
class Topology:
    """One timestep's neighbor structure.

    one_hop[i]          agents within range of i (sorted, never contains i)
    two_hop_closure[i]  everyone within range of some one-hop neighbor of i
    two_hop[i]          closure minus one-hop minus self (sorted)
    relays[(i, k)]      one-hop neighbors of i that also reach k directly
    """

    n_agents: int
    one_hop: tuple
    two_hop_closure: tuple
    two_hop: tuple
    relays: dict = field(compare=False)


def build_topology(positions, L: float, active=None) -> Topology:
    """Derive the neighbor sets from 2-D positions and range L.

    Agents flagged inactive (active[i] falsy) get no links at all and appear
    in nobody's neighbor sets.
    """
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise ValueError(f"build_topology: positions must be (n, 2), got {pos.shape}")
    if np.isnan(pos).any():
        raise ValueError("build_topology: NaN in positions")
    if not (L > 0):
        raise ValueError(f"build_topology: range L must be positive, got {L}")
    n = pos.shape[0]
    if active is None:
        alive = np.ones(n, dtype=bool)
    else:
        alive = np.asarray(active, dtype=bool)
        if alive.shape != (n,):
            raise ValueError(f"build_topology: active mask shape {alive.shape} != ({n},)")

    diff = pos[:, None, :] - pos[None, :, :]
    dist2 = (diff * diff).sum(axis=2)
    adj = dist2 <= L * L
    np.fill_diagonal(adj, False)
    adj &= alive[:, None]
    adj &= alive[None, :]

    one_hop = tuple(tuple(np.flatnonzero(adj[i]).tolist()) for i in range(n))

    closure = []
    two_hop = []
    relays: dict = {}
    for i in range(n):
        reach = set()
        for j in one_hop[i]:
            reach.update(np.flatnonzero(adj[j]).tolist())
            reach.add(j)  # j is within range of itself
        closure.append(tuple(sorted(reach)))
        second = tuple(sorted(reach.difference(one_hop[i]).difference({i})))
        two_hop.append(second)
        for k in second:
            relays[(i, k)] = tuple(j for j in one_hop[i] if adj[j, k])
    return Topology(n, one_hop, tuple(closure), tuple(two_hop), relays)


def relay_paths(topo: Topology, i: int, k: int) -> tuple:
    """One-hop neighbors of i that can forward a message from k."""
    if k not in topo.two_hop[i]:
        raise ValueError(f"relay_paths: agent {k} is not a two-hop neighbor of {i}")
    return topo.relays[(i, k)]


def cost_round1(topo: Topology, w: int) -> int:
    """First-round bits: every agent receives one w-bit message per one-hop link."""
    return sum(len(nb) for nb in topo.one_hop) * w


def cost_round2(topo: Topology, gates, mode: str, w: int) -> int:
    """Second-round bits under the protocol's accounting rules.

    Two-hop messages traverse a relay, so each one costs twice: 2w bits per
    two-hop neighbor, charged only for agents whose gate fired. The
    GNN-style second round repeats the one-hop exchange ungated, and the
    one-round ablation transmits nothing.
    """
    gates = np.asarray(gates).astype(int)
    if gates.shape != (topo.n_agents,):
        raise ValueError(f"cost_round2: gates shape {gates.shape} != ({topo.n_agents},)")
    if mode in (AC2C, AC2C_NO_CONTROLLER):
        return sum(len(topo.two_hop[i]) * 2 * w for i in range(topo.n_agents) if gates[i])
    if mode == GNN_TWO_ROUND:
        return sum(len(nb) for nb in topo.one_hop) * w
    if mode == ONE_ROUND:
        return 0
    raise ValueError(f"cost_round2: unknown mode {mode!r}")


def round2_links(topo: Topology, gates, mode: str) -> int:
    """Active second-round link count (bits / w)."""
    return cost_round2(topo, gates, mode, 1)


def format_topology(topo: Topology) -> str:
    """Deterministic line-oriented dump for debugging and tests."""
    lines = []
    for i in range(topo.n_agents):
        one = " ".join(str(j) for j in topo.one_hop[i])
        two = " ".join(str(j) for j in topo.two_hop[i])
        lines.append(f"agent {i} | one_hop: {one} | two_hop: {two}")
    return "\n".join(lines)


class CostLedger:
    """Per-timestep link and bit accounting for one episode.

    round1_bits is always links * w. round2 bits follow cost_round2; the
    one-bit request broadcast that triggers the second round is not billed.
    """

    def __init__(self, w: int):
        if w <= 0:
            raise ValueError(f"CostLedger: w must be a positive bit count, got {w}")
        self.w = int(w)
        self.round1_links: list[int] = []
        self.round2_links: list[int] = []
        self.gate_log: list[np.ndarray] = []

    def record(self, topo: Topology, gates, mode: str) -> dict:
        gates = np.asarray(gates).astype(int)
        links1 = cost_round1(topo, 1)
        links2 = round2_links(topo, gates, mode)
        self.round1_links.append(links1)
        self.round2_links.append(links2)
        self.gate_log.append(gates.copy())
        return {
            "round1_links": links1,
            "round2_links": links2,
            "round1_bits": links1 * self.w,
            "round2_bits": links2 * self.w,
        }

    @property
    def n_steps(self) -> int:
        return len(self.round1_links)

    def total_round1_bits(self) -> int:
        return sum(self.round1_links) * self.w

    def total_round2_bits(self) -> int:
        return sum(self.round2_links) * self.w

    def bits_per_timestep(self) -> tuple[float, float]:
        steps = max(1, self.n_steps)
        return self.total_round1_bits() / steps, self.total_round2_bits() / steps

    def opening_rate(self, active_log=None) -> float:
        """Fraction of (active) agents whose gate fired, over all steps."""
        fired = 0
        total = 0
        for t, gates in enumerate(self.gate_log):
            if active_log is None:
                mask = np.ones(len(gates), dtype=bool)
            else:
                mask = np.asarray(active_log[t], dtype=bool)
            fired += int(gates[mask].sum())
            total += int(mask.sum())
        return fired / total if total else 0.0
