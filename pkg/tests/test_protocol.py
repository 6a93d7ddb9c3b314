import numpy as np
import pytest

from ac2c import commgraph as cg
from ac2c import diffmath as dm
from ac2c import protocol
from ac2c.protocol import ProtocolMode
from test_neural import small_model

# Seven agents arranged so that agent 0 has one-hop {1, 2}, two-hop {3, 4},
# and agents 5/6 hang off agent 4 (three hops from agent 0).
CHAIN7 = np.array([
    [0.0, 0.0], [0.9, 0.0], [-0.9, 0.0], [1.8, 0.0],
    [-1.8, 0.0], [-2.7, 0.0], [-2.5, 0.5],
])


def embeddings(rng, n, width=6):
    return [dm.leaf(rng.normal(size=(1, width))) for _ in range(n)]


def test_round1_isolated_agent_attends_self_only():
    model = small_model()
    topo = cg.build_topology([[0.0, 0.0], [9.0, 9.0]], L=1.0)
    rng = np.random.default_rng(0)
    emb0 = embeddings(rng, 2)
    emb1, attn = protocol.run_round1(model, topo, emb0)
    solo, _ = model.attention[1].attend(emb0[0], [])
    assert np.array_equal(emb1[0].data, solo.data)
    assert attn[0][1] == (0,)


def test_round1_identical_visible_agents_agree():
    model = small_model()
    topo = cg.build_topology([[0.0, 0.0], [0.5, 0.0]], L=1.0)
    base = np.random.default_rng(1).normal(size=(1, 6))
    emb0 = [dm.leaf(base.copy()), dm.leaf(base.copy())]
    emb1, _ = protocol.run_round1(model, topo, emb0)
    assert np.allclose(emb1[0].data, emb1[1].data, atol=1e-15)


def test_round1_receptive_field_is_one_hop_only():
    model = small_model(seed=2)
    topo = cg.build_topology(CHAIN7, L=1.0)
    rng = np.random.default_rng(2)
    base = [rng.normal(size=(1, 6)) for _ in range(7)]
    emb1_a, _ = protocol.run_round1(model, topo, [dm.leaf(b.copy()) for b in base])
    base[3] += 10.0  # agent 3 is outside agent 0's one-hop set
    emb1_b, _ = protocol.run_round1(model, topo, [dm.leaf(b.copy()) for b in base])
    assert np.array_equal(emb1_a[0].data, emb1_b[0].data)
    assert not np.array_equal(emb1_a[1].data, emb1_b[1].data)  # 3 is 1's neighbor


def test_gate_threshold_is_strict():
    model = small_model(seed=3)
    rng = np.random.default_rng(3)
    emb0, emb1 = embeddings(rng, 1), embeddings(rng, 1)
    _, scores = protocol.run_gate(model, ProtocolMode.AC2C, emb0, emb1, 0.5)
    score = float(scores[0])
    gates_below, _ = protocol.run_gate(model, ProtocolMode.AC2C, emb0, emb1,
                                       threshold=score)  # score == T
    assert gates_below[0] == 0
    gates_above, _ = protocol.run_gate(model, ProtocolMode.AC2C, emb0, emb1,
                                       threshold=score * 0.99)
    assert gates_above[0] == 1


def test_gate_mode_overrides():
    model = small_model(seed=4)
    rng = np.random.default_rng(4)
    emb0, emb1 = embeddings(rng, 3), embeddings(rng, 3)
    ones, _ = protocol.run_gate(model, ProtocolMode.AC2C_NO_CONTROLLER, emb0, emb1, 0.5)
    zeros_, _ = protocol.run_gate(model, ProtocolMode.ONE_ROUND, emb0, emb1, 0.5)
    assert ones.tolist() == [1, 1, 1]
    assert zeros_.tolist() == [0, 0, 0]


def test_gate_bad_threshold_is_config_error():
    model = small_model()
    rng = np.random.default_rng(5)
    emb0, emb1 = embeddings(rng, 1), embeddings(rng, 1)
    for bad in (0.0, 1.0, -0.5, 1.5):
        with pytest.raises(ValueError, match="threshold"):
            protocol.run_gate(model, ProtocolMode.AC2C, emb0, emb1, bad)


def test_round2_all_closed_gives_exact_zeros():
    model = small_model(seed=5)
    topo = cg.build_topology(CHAIN7, L=1.0)
    rng = np.random.default_rng(6)
    emb1 = embeddings(rng, 7)
    emb2, _ = protocol.run_round2(model, ProtocolMode.AC2C, topo, emb1, np.zeros(7, int))
    for e in emb2:
        assert np.array_equal(e.data, np.zeros((1, 6)))


def test_round2_two_hop_carries_third_hop_information():
    # Perturbing agent 5's initial embedding must reach agent 0 under the
    # two-hop protocol (via agent 4's round-1 embedding) but not under the
    # repeated one-hop exchange.
    model = small_model(seed=7)
    topo = cg.build_topology(CHAIN7, L=1.0)
    rng = np.random.default_rng(7)
    base = [rng.normal(size=(1, 6)) for _ in range(7)]

    def action_input(mode, perturb):
        embs = [dm.leaf(b.copy()) for b in base]
        if perturb:
            embs[5] = dm.leaf(base[5] + 1.0)
        emb1, _ = protocol.run_round1(model, topo, embs)
        gates = np.ones(7, int)
        emb2, _ = protocol.run_round2(model, mode, topo, emb1, gates)
        return np.concatenate([embs[0].data, emb1[0].data, emb2[0].data], axis=1)

    ac2c_ref = action_input(ProtocolMode.AC2C, False)
    ac2c_hit = action_input(ProtocolMode.AC2C, True)
    assert np.max(np.abs(ac2c_ref - ac2c_hit)) > 0

    gnn_ref = action_input(ProtocolMode.GNN_TWO_ROUND, False)
    gnn_hit = action_input(ProtocolMode.GNN_TWO_ROUND, True)
    assert np.array_equal(gnn_ref, gnn_hit)


def test_rounds_read_frozen_state_iteration_order_free():
    model = small_model(seed=8)
    topo = cg.build_topology(CHAIN7, L=1.0)
    rng = np.random.default_rng(8)
    emb0 = embeddings(rng, 7)
    emb1, _ = protocol.run_round1(model, topo, emb0)
    # recompute agents in reverse order straight from the head
    for i in reversed(range(7)):
        members = [emb0[j] for j in topo.one_hop[i]]
        again, _ = model.attention[1].attend(emb0[i], members)
        assert np.array_equal(again.data, emb1[i].data)


def world_inputs(rng, n, obs_dim=5, width=6):
    return (rng.normal(size=(n, obs_dim)), rng.normal(size=(n, width)))


def test_step_one_round_action_equals_zeroed_second_slot():
    model = small_model(seed=9)
    topo = cg.build_topology(CHAIN7, L=1.0)
    rng = np.random.default_rng(9)
    obs, mem = world_inputs(rng, 7)
    result = protocol.step_protocol(model, ProtocolMode.ONE_ROUND, topo, obs, mem, 0.5)
    direct = model.actor(dm.concat_rows(result.rounds.emb0),
                         dm.concat_rows(result.rounds.emb1),
                         dm.zeros(7, 6))
    assert np.array_equal(result.actions, direct.data)


def test_step_all_open_gates_equal_no_controller_mode():
    model = small_model(seed=10)
    topo = cg.build_topology(CHAIN7, L=1.0)
    rng = np.random.default_rng(10)
    obs, mem = world_inputs(rng, 7)
    forced = protocol.step_protocol(model, ProtocolMode.AC2C_NO_CONTROLLER,
                                    topo, obs, mem, 0.5)
    # drive the plain mode into all-open gates via a tiny threshold
    scores = forced.rounds.scores
    tiny = min(scores) / 2 if min(scores) > 0 else 1e-12
    gated = protocol.step_protocol(model, ProtocolMode.AC2C, topo, obs, mem, tiny)
    assert gated.rounds.gates.tolist() == [1] * 7
    assert np.array_equal(forced.actions, gated.actions)


def test_step_zero_gated_agent_matches_one_round_bitwise():
    model = small_model(seed=11)
    topo = cg.build_topology(CHAIN7, L=1.0)
    rng = np.random.default_rng(11)
    obs, mem = world_inputs(rng, 7)
    probe = protocol.step_protocol(model, ProtocolMode.AC2C, topo, obs, mem, 0.5)
    baseline = protocol.step_protocol(model, ProtocolMode.ONE_ROUND, topo, obs, mem, 0.5)
    closed = np.flatnonzero(probe.rounds.gates == 0)
    opened = np.flatnonzero(probe.rounds.gates == 1)
    assert closed.size > 0 or opened.size > 0
    for i in closed:
        assert np.array_equal(probe.actions[i], baseline.actions[i])


def test_step_ledger_entry_collinear_layout():
    model = small_model(seed=12)
    topo = cg.build_topology([[0, 0], [0.9, 0], [1.8, 0]], L=1.0)
    rng = np.random.default_rng(12)
    obs, mem = world_inputs(rng, 3)
    ledger = cg.CostLedger(w=8)
    result = protocol.step_protocol(model, ProtocolMode.AC2C_NO_CONTROLLER,
                                    topo, obs, mem, 0.5, ledger=ledger)
    assert result.cost == {"round1_links": 4, "round2_links": 4,
                           "round1_bits": 32, "round2_bits": 32}


def test_step_gate_zero_forces_zero_embedding_invariant():
    model = small_model(seed=13)
    topo = cg.build_topology(CHAIN7, L=1.0)
    rng = np.random.default_rng(13)
    obs, mem = world_inputs(rng, 7)
    result = protocol.step_protocol(model, ProtocolMode.AC2C, topo, obs, mem, 0.5)
    for i, gate in enumerate(result.rounds.gates):
        if not gate:
            assert np.array_equal(result.rounds.emb2[i].data, np.zeros((1, 6)))


def test_step_rejects_inconsistent_agent_count():
    model = small_model()
    topo = cg.build_topology(CHAIN7, L=1.0)
    rng = np.random.default_rng(14)
    obs, mem = world_inputs(rng, 6)
    with pytest.raises(ValueError, match="agent rows"):
        protocol.step_protocol(model, ProtocolMode.AC2C, topo, obs, mem, 0.5)


def test_mode_parse_rejects_unknown_names():
    with pytest.raises(ValueError, match="unknown protocol mode"):
        ProtocolMode.parse("three_round")
    assert ProtocolMode.parse("AC2C") is ProtocolMode.AC2C
