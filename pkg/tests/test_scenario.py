import json

import pytest

from chainsim.scenario import (
    Scenario,
    ScenarioError,
    load_scenario,
    node_key_seed,
    run_scenario,
)


def tiny_scenario(**overrides):
    obj = {
        "name": "tiny",
        "num_nodes": 3,
        "seed": 1,
        "sim": {
            "latency_min_ms": 5,
            "latency_max_ms": 15,
            "drop_probability": 0.0,
            "block_interval_target_ms": 500,
            "difficulty_bits": 4,
            "sync_interval_ms": 1000,
        },
        "miners": {"0": 1.0},
        "duration_ms": 4000,
        "genesis_allocations": [{"seed": "20" * 32, "amount": 1000}],
        "workload": [
            {"time_ms": 500, "node": 1, "sender_seed": "20" * 32,
             "recipient_seed": "21" * 32, "amount": 10, "fee": 2},
            {"time_ms": 900, "node": 2, "sender_seed": "20" * 32,
             "recipient_seed": "21" * 32, "amount": 5, "fee": 1},
        ],
    }
    obj.update(overrides)
    return obj


def test_load_round_trip_fields():
    s = load_scenario(tiny_scenario())
    assert s.name == "tiny" and s.num_nodes == 3
    assert s.sim.rng_seed == 1
    assert s.sim.hash_rate_shares == {0: 1.0}
    assert len(s.workload) == 2
    assert s.workload[0].recipient == s.workload[1].recipient


def test_load_rejects_bad_references():
    with pytest.raises(ScenarioError):
        load_scenario(tiny_scenario(miners={"7": 1.0}))
    with pytest.raises(ScenarioError):
        bad = tiny_scenario()
        bad["workload"][0]["node"] = 9
        load_scenario(bad)
    with pytest.raises(ScenarioError):
        load_scenario({"name": "x"})  # missing required keys


def test_node_key_seed_is_stable_and_distinct():
    assert node_key_seed(1, 0) == node_key_seed(1, 0)
    assert node_key_seed(1, 0) != node_key_seed(1, 1)
    assert node_key_seed(1, 0) != node_key_seed(2, 0)
    assert len(node_key_seed(5, 3)) == 32


def test_run_scenario_converges_and_confirms_workload():
    s = load_scenario(tiny_scenario())
    result = run_scenario(s)
    summary = result.summary()
    assert summary["converged"]
    assert min(summary["heights"]) >= 1
    # both workload txs confirmed: recipient balance reflects them
    recipient = s.workload[0].recipient
    assert result.nodes[0].canonical_state.balance(recipient) == 15


def test_run_scenario_is_deterministic():
    a = run_scenario(load_scenario(tiny_scenario()))
    b = run_scenario(load_scenario(tiny_scenario()))
    assert a.tracer.lines() == b.tracer.lines()
    assert a.head_hashes() == b.head_hashes()


def test_seed_changes_the_run():
    a = run_scenario(load_scenario(tiny_scenario(seed=1)))
    b = run_scenario(load_scenario(tiny_scenario(seed=2)))
    assert a.tracer.lines() != b.tracer.lines()


def test_blob_workload_lands_in_store_and_payload(tmp_path):
    import hashlib

    obj = tiny_scenario()
    blob = b"off-chain document"
    obj["workload"] = [
        {"time_ms": 500, "node": 1, "sender_seed": "20" * 32,
         "recipient_seed": "21" * 32, "amount": 10, "fee": 2,
         "blob": blob.hex()},
    ]
    result = run_scenario(load_scenario(obj), blob_root=tmp_path)
    digest = hashlib.sha256(blob).digest()
    assert result.nodes[1].blob_store.get(digest) == blob
    _, _, tx = result.submitted[0]
    assert tx.payload[1:33] == digest
    # the link is confirmed on-chain
    chain = result.nodes[0].store.canonical_chain()
    assert any(tx.tx_hash == t.tx_hash for b in chain for t in b.transactions)


def test_bundled_scenarios_parse():
    from chainsim.cli import BUNDLED, bundled_scenario_path
    from chainsim.scenario import load_scenario_file

    for name in BUNDLED:
        s = load_scenario_file(bundled_scenario_path(name))
        assert s.name == name
        s.validate()
