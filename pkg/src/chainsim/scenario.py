"""Scenario configs and the deterministic scenario runner.

A scenario JSON names the network (node count, miners and their hash
rate shares, latency/drop/partition model), the genesis allocations, a
timed transaction workload, and optional crash/restart schedules. The
runner wires up the simulator, executes it, and returns every artifact
(trace, per-node chains, summary) in memory; the CLI owns file output.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import consensus, ledger
from .blobstore import BlobStore, blob_link_payload
from .crypto import address_from_public_key, generate_keypair
from .kademlia import Contact
from .ledger import make_genesis, make_transaction
from .netsim import SimConfig, Simulator, Tracer
from .node import SimNode


class ScenarioError(Exception):
    """Configuration problem; maps to CLI exit code 2."""


@dataclass
class WorkloadItem:
    time_ms: int
    node: int
    sender_seed: bytes
    recipient: bytes
    amount: int
    fee: int
    blob: Optional[bytes] = None


@dataclass
class Scenario:
    name: str
    num_nodes: int
    sim: SimConfig
    duration_ms: int
    genesis_allocations: list = field(default_factory=list)  # (address, amount)
    workload: list = field(default_factory=list)
    crashes: list = field(default_factory=list)  # (time_ms, node)
    restarts: list = field(default_factory=list)
    max_block_txs: int = ledger.MAX_BLOCK_TXS
    quiesce_sync_rounds: int = 3

    def validate(self) -> None:
        try:
            self.sim.validate()
        except ValueError as e:
            raise ScenarioError(str(e))
        if self.num_nodes < 1:
            raise ScenarioError("num_nodes must be >= 1")

        def check_node(idx, what):
            if not 0 <= idx < self.num_nodes:
                raise ScenarioError(f"{what} references node {idx} of {self.num_nodes}")

        for idx in self.sim.hash_rate_shares:
            check_node(idx, "hash_rate_shares")
        for item in self.workload:
            check_node(item.node, "workload")
        for t, idx in self.crashes:
            check_node(idx, "crashes")
        for t, idx in self.restarts:
            check_node(idx, "restarts")
        for start, end, side_a, side_b in self.sim.partition_schedule:
            for idx in list(side_a) + list(side_b):
                check_node(idx, "partition_schedule")


def _seed_bytes(value: str) -> bytes:
    raw = bytes.fromhex(value)
    if len(raw) == 32:
        return raw
    return hashlib.sha256(raw).digest()


def _resolve_address(entry: dict, key_prefix: str) -> bytes:
    if f"{key_prefix}address" in entry:
        raw = bytes.fromhex(entry[f"{key_prefix}address"])
        if len(raw) != 20:
            raise ScenarioError(f"{key_prefix}address must be 20 bytes")
        return raw
    if f"{key_prefix}seed" in entry:
        kp = generate_keypair(_seed_bytes(entry[f"{key_prefix}seed"]))
        return address_from_public_key(kp.public_key)
    raise ScenarioError(f"entry needs {key_prefix}address or {key_prefix}seed")


def load_scenario(obj: dict) -> Scenario:
    try:
        sim_cfg = dict(obj.get("sim", {}))
        miners = obj.get("miners", {})
        shares = {int(k): float(v) for k, v in miners.items()}
        sim = SimConfig(
            rng_seed=int(obj.get("seed", 0)),
            hash_rate_shares=shares,
            **{
                k: sim_cfg[k]
                for k in (
                    "latency_min_ms",
                    "latency_max_ms",
                    "drop_probability",
                    "block_interval_target_ms",
                    "difficulty_bits",
                    "sync_interval_ms",
                )
                if k in sim_cfg
            },
        )
        sim.partition_schedule = [
            (int(p[0]), int(p[1]), set(p[2]), set(p[3]))
            for p in sim_cfg.get("partition_schedule", [])
        ]
        allocations = [
            (_resolve_address(e, ""), int(e["amount"]))
            for e in obj.get("genesis_allocations", [])
        ]
        workload = [
            WorkloadItem(
                time_ms=int(w["time_ms"]),
                node=int(w["node"]),
                sender_seed=_seed_bytes(w["sender_seed"]),
                recipient=_resolve_address(w, "recipient_"),
                amount=int(w["amount"]),
                fee=int(w["fee"]),
                blob=bytes.fromhex(w["blob"]) if "blob" in w else None,
            )
            for w in obj.get("workload", [])
        ]
        scenario = Scenario(
            name=obj["name"],
            num_nodes=int(obj["num_nodes"]),
            sim=sim,
            duration_ms=int(obj["duration_ms"]),
            genesis_allocations=allocations,
            workload=workload,
            crashes=[(int(c["time_ms"]), int(c["node"])) for c in obj.get("crashes", [])],
            restarts=[(int(r["time_ms"]), int(r["node"])) for r in obj.get("restarts", [])],
            max_block_txs=int(obj.get("max_block_txs", ledger.MAX_BLOCK_TXS)),
        )
    except (KeyError, ValueError, TypeError) as e:
        raise ScenarioError(f"malformed scenario: {e!r}")
    scenario.validate()
    return scenario


def load_scenario_file(path) -> Scenario:
    try:
        with open(path, "r") as f:
            obj = json.load(f)
    except (OSError, ValueError) as e:
        raise ScenarioError(f"cannot read scenario {path}: {e}")
    return load_scenario(obj)


def node_key_seed(rng_seed: int, index: int) -> bytes:
    return hashlib.sha256(b"node-key" + struct.pack(">qq", rng_seed, index)).digest()


@dataclass
class RunResult:
    scenario: Scenario
    sim: Simulator
    tracer: Tracer
    nodes: list
    genesis: ledger.Block
    submitted: list  # (time_ms, node, Transaction)

    def head_hashes(self) -> list:
        return [n.head().block_hash.hex() for n in self.nodes if n is not None]

    def converged(self) -> bool:
        heads = self.head_hashes()
        return len(set(heads)) == 1

    def summary(self) -> dict:
        live = [n for n in self.nodes if n is not None]
        heights = [n.head().height for n in live]
        mined = {}
        for row in self.tracer.rows:
            if row.get("type") == "mine":
                mined[row["node"]] = mined.get(row["node"], 0) + 1
        canonical_miners = {}
        if live:
            for block in live[0].store.canonical_chain()[1:]:
                idx = next(
                    (i for i, n in enumerate(self.nodes)
                     if n is not None and n.address == block.miner),
                    None,
                )
                key = str(idx) if idx is not None else block.miner.hex()
                canonical_miners[key] = canonical_miners.get(key, 0) + 1
        return {
            "scenario": self.scenario.name,
            "converged": self.converged(),
            "head_hashes": self.head_hashes(),
            "heights": heights,
            "blocks_mined": {str(k): v for k, v in sorted(mined.items())},
            "canonical_blocks_by_miner": dict(sorted(canonical_miners.items())),
            "messages_sent": self.sim.messages_sent,
            "messages_delivered": self.sim.messages_delivered,
        }


def run_scenario(scenario: Scenario, blob_root: Optional[Path] = None) -> RunResult:
    """Execute a scenario end to end, deterministically."""
    tracer = Tracer()
    genesis = make_genesis(scenario.genesis_allocations)

    def node_factory(sim, index, persisted_lines):
        node = SimNode(
            sim,
            index,
            node_key_seed(scenario.sim.rng_seed, index),
            genesis,
            max_block_txs=scenario.max_block_txs,
            persisted_lines=persisted_lines,
        )
        if index != 0:
            bootstrap_kp = generate_keypair(node_key_seed(scenario.sim.rng_seed, 0))
            node.set_bootstrap(
                Contact(address_from_public_key(bootstrap_kp.public_key), 0, 0)
            )
        if blob_root is not None:
            node.blob_store = BlobStore(blob_root / f"node_{index}")
        return node

    sim = Simulator(scenario.sim, scenario.num_nodes, tracer, node_factory)
    nodes = [node_factory(sim, i, None) for i in range(scenario.num_nodes)]
    for i, node in enumerate(nodes):
        sim.attach(i, node)

    # overlay bootstrap: everyone joins through node 0, in index order
    bootstrap = Contact(nodes[0].node_id, 0, 0)
    for node in nodes[1:]:
        node.join(bootstrap)

    # workload: nonces run per sender in listed order; blobs go off-chain
    submitted = []
    nonces: dict = {}
    for item in sorted(scenario.workload, key=lambda w: w.time_ms):
        kp = generate_keypair(item.sender_seed)
        sender = address_from_public_key(kp.public_key)
        nonce = nonces.get(sender, 0)
        nonces[sender] = nonce + 1
        payload = b""
        if item.blob is not None:
            digest = hashlib.sha256(item.blob).digest()
            payload = blob_link_payload(digest)
        tx = make_transaction(
            kp.private_key, kp.public_key, item.recipient,
            item.amount, item.fee, nonce, payload,
        )
        submitted.append((item.time_ms, item.node, tx))

        def submit(node_idx=item.node, tx=tx, blob=item.blob):
            node = sim.nodes[node_idx]
            if node is None:
                return
            if blob is not None and node.blob_store is not None:
                node.blob_store.put(blob)
            status = node.on_transaction(tx, origin=None)
            tracer.log(
                time=sim.now,
                type="tx_submit",
                node=node_idx,
                tx=tx.tx_hash.hex(),
                status=status,
            )

        sim.schedule(item.time_ms, ("call", submit))

    for t, idx in scenario.crashes:
        sim.schedule(t, ("crash", idx))
    for t, idx in scenario.restarts:
        sim.schedule(t, ("restart", idx))

    if scenario.sim.hash_rate_shares and sum(scenario.sim.hash_rate_shares.values()) > 0:
        sim.enable_mining()
    sim.enable_periodic_sync()

    sim.run_until(scenario.duration_ms)
    _quiesce(sim, scenario.quiesce_sync_rounds)
    return RunResult(scenario, sim, tracer, sim.nodes, genesis, submitted)


def _quiesce(sim: Simulator, sync_rounds: int) -> None:
    """Stop mining, let in-flight traffic settle, then run anti-entropy
    rounds until heads agree. An equal-height tie between competing tips
    can only be broken by another block, so one miner seals tie-breaker
    blocks (still real proof-of-work) until one branch wins."""
    sim.mining_enabled = False
    sim.config.sync_interval_ms = 0
    _drain_deliveries(sim)
    miners = [i for i, s in sorted(sim.config.hash_rate_shares.items()) if s > 0]
    for attempt in range(sync_rounds + 16):
        for idx in range(sim.num_nodes):
            node = sim.nodes[idx]
            if node is not None and idx not in sim.crashed:
                node.periodic_sync()
        _drain_deliveries(sim)
        heads = {}
        for i, n in enumerate(sim.nodes):
            if n is not None and i not in sim.crashed:
                heads[n.head().block_hash] = n.head().height
        if len(heads) <= 1 and attempt >= sync_rounds - 1:
            break
        max_height = max(heads.values(), default=0)
        tied = [h for h, ht in heads.items() if ht == max_height]
        if len(heads) > 1 and len(tied) > 1 and attempt >= sync_rounds - 1:
            # an equal-height standoff: only a fresh block can break it
            breaker = next((i for i in miners if i not in sim.crashed), None)
            if breaker is None:
                break
            sim.now += 1
            sim.fire_mining_once(breaker)
            _drain_deliveries(sim)


def _drain_deliveries(sim: Simulator) -> None:
    while sim._queue:
        time_ms, _, action = sim._queue[0]
        if action[0] in ("mine", "sync"):
            heapq.heappop(sim._queue)
            continue
        sim.step()
