"""Deterministic discrete-event network harness.

Virtual time only: every message delivery, mining event, crash, restart,
and partition change is an entry in one priority queue ordered by
(time, insertion sequence). All randomness (latency, drops, mining
delays) comes from per-node RNG streams derived from (seed, node index,
purpose), so replaying a scenario with the same seed reproduces the
exact event trace.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

MESSAGE_KINDS = (
    "TX_ANNOUNCE",
    "BLOCK_ANNOUNCE",
    "GET_BLOCKS",
    "BLOCKS",
    "FIND_NODE",
    "FOUND_NODES",
    "PING",
    "PONG",
)


@dataclass
class SimConfig:
    rng_seed: int = 0
    latency_min_ms: int = 5
    latency_max_ms: int = 50
    drop_probability: float = 0.0
    hash_rate_shares: dict = field(default_factory=dict)  # node index -> share
    block_interval_target_ms: int = 1000
    partition_schedule: list = field(default_factory=list)  # (start, end, setA, setB)
    difficulty_bits: int = 8
    sync_interval_ms: int = 2000  # periodic anti-entropy; 0 disables

    def validate(self) -> None:
        if self.latency_min_ms > self.latency_max_ms:
            raise ValueError("latency_min_ms > latency_max_ms")
        if not 0.0 <= self.drop_probability < 1.0:
            raise ValueError("drop_probability must be in [0, 1)")
        if any(s < 0 for s in self.hash_rate_shares.values()):
            raise ValueError("hash rate shares must be non-negative")
        for start, end, side_a, side_b in self.partition_schedule:
            if start > end:
                raise ValueError("partition window start > end")
            if set(side_a) & set(side_b):
                raise ValueError("partition sides overlap")


@dataclass(frozen=True)
class Envelope:
    send_time: int
    deliver_time: int
    src: int
    dst: int
    kind: str
    body: bytes


class Tracer:
    """Accumulates trace rows; serialization is byte-stable (sorted keys)."""

    def __init__(self):
        self.rows = []

    def log(self, **row) -> None:
        self.rows.append(row)

    def lines(self) -> list:
        return [
            json.dumps(row, sort_keys=True, separators=(",", ":")).encode()
            for row in self.rows
        ]

    def write(self, path) -> None:
        with open(path, "wb") as f:
            for ln in self.lines():
                f.write(ln + b"\n")


def _derive_rng(seed: int, node: int, purpose: str) -> random.Random:
    material = struct.pack(">qq", seed, node) + purpose.encode()
    digest = hashlib.sha256(material).digest()
    return random.Random(int.from_bytes(digest, "big"))


class Simulator:
    def __init__(
        self,
        config: SimConfig,
        num_nodes: int,
        tracer: Optional[Tracer] = None,
        node_factory: Optional[Callable] = None,
    ):
        config.validate()
        self.config = config
        self.num_nodes = num_nodes
        self.tracer = tracer or Tracer()
        self.node_factory = node_factory  # (sim, index, persisted_lines) -> node
        self.now = 0
        self._queue: list = []
        self._seq = 0
        self.nodes: list = [None] * num_nodes
        self.crashed: set = set()
        self.persisted: dict = {}  # node index -> list of chain-file lines
        self.dynamic_partitions: list = []  # (setA, setB)
        self._net_rng = [_derive_rng(config.rng_seed, i, "net") for i in range(num_nodes)]
        self._mine_rng = [_derive_rng(config.rng_seed, i, "mine") for i in range(num_nodes)]
        self.messages_sent = 0
        self.messages_delivered = 0
        self.mining_enabled = True

    # -- wiring ------------------------------------------------------------

    def attach(self, index: int, node) -> None:
        self._check_index(index)
        self.nodes[index] = node

    def _check_index(self, index: int) -> None:
        if not 0 <= index < self.num_nodes:
            raise ValueError(f"unknown node index {index}")

    # -- scheduling --------------------------------------------------------

    def schedule(self, time_ms: int, action: tuple) -> None:
        heapq.heappush(self._queue, (time_ms, self._seq, action))
        self._seq += 1

    def pending(self) -> int:
        return len(self._queue)

    # -- transport ---------------------------------------------------------

    def _partitioned(self, a: int, b: int) -> bool:
        for start, end, side_a, side_b in self.config.partition_schedule:
            if start <= self.now < end:
                if (a in side_a and b in side_b) or (a in side_b and b in side_a):
                    return True
        for side_a, side_b in self.dynamic_partitions:
            if (a in side_a and b in side_b) or (a in side_b and b in side_a):
                return True
        return False

    def _link_up(self, src: int, dst: int) -> bool:
        if src in self.crashed or dst in self.crashed:
            return False
        return not self._partitioned(src, dst)

    def send(self, src: int, dst: int, kind: str, body: bytes) -> bool:
        """Schedule one message; returns False when dropped (lossy link,
        partition boundary, or crashed endpoint)."""
        self._check_index(src)
        self._check_index(dst)
        self.messages_sent += 1
        rng = self._net_rng[src]
        latency = rng.randint(self.config.latency_min_ms, self.config.latency_max_ms)
        lost = (
            self.config.drop_probability > 0
            and rng.random() < self.config.drop_probability
        )
        if lost or not self._link_up(src, dst):
            return False
        env = Envelope(self.now, self.now + latency, src, dst, kind, body)
        self.schedule(env.deliver_time, ("deliver", env))
        return True

    def query(self, src: int, dst: int, kind: str, body: bytes) -> Optional[bytes]:
        """Synchronous request/response (FIND_NODE, PING). Subject to the
        same partition/crash/drop rules, one loss roll per direction."""
        self._check_index(src)
        self._check_index(dst)
        if not self._link_up(src, dst):
            return None
        rng = self._net_rng[src]
        if self.config.drop_probability > 0 and (
            rng.random() < self.config.drop_probability
            or rng.random() < self.config.drop_probability
        ):
            return None
        node = self.nodes[dst]
        if node is None:
            return None
        return node.handle_query(kind, body, src)

    # -- event loop --------------------------------------------------------

    def step(self):
        """Dispatch the earliest event; returns it, or None when idle."""
        if not self._queue:
            return None
        time_ms, _, action = heapq.heappop(self._queue)
        self.now = max(self.now, time_ms)
        tag = action[0]
        if tag == "deliver":
            env = action[1]
            if self.nodes[env.dst] is not None and env.dst not in self.crashed:
                self.messages_delivered += 1
                row = {
                    "time": self.now,
                    "type": "deliver",
                    "from": env.src,
                    "to": env.dst,
                    "kind": env.kind,
                    "body_hash": hashlib.sha256(env.body).hexdigest(),
                }
                self.nodes[env.dst].handle(env, trace_row=row)
                self.tracer.log(**row)
        elif tag == "mine":
            node_idx = action[1]
            self._fire_mining(node_idx)
        elif tag == "sync":
            node_idx = action[1]
            if node_idx not in self.crashed and self.nodes[node_idx] is not None:
                self.nodes[node_idx].periodic_sync()
            if self.config.sync_interval_ms > 0:
                self.schedule(self.now + self.config.sync_interval_ms, ("sync", node_idx))
        elif tag == "crash":
            self.crash_node(action[1])
        elif tag == "restart":
            self.restart_node(action[1])
        elif tag == "call":
            action[1]()
        else:
            raise RuntimeError(f"unknown event tag {tag}")
        return action

    def run_until(self, t_end: int) -> None:
        while self._queue and self._queue[0][0] <= t_end:
            self.step()
        self.now = max(self.now, t_end)

    def run(self) -> None:
        while self._queue:
            self.step()

    # -- mining ------------------------------------------------------------

    def enable_mining(self) -> None:
        total = sum(self.config.hash_rate_shares.values())
        if total <= 0:
            raise ValueError("mining enabled with zero total hash rate")
        for idx, share in self.config.hash_rate_shares.items():
            if share > 0:
                self._schedule_next_mine(idx)

    def _mine_delay(self, node_idx: int) -> int:
        share = self.config.hash_rate_shares.get(node_idx, 0)
        if share <= 0:
            raise ValueError(f"node {node_idx} has zero hash rate share")
        total = sum(self.config.hash_rate_shares.values())
        mean = self.config.block_interval_target_ms * (total / share)
        return max(1, round(self._mine_rng[node_idx].expovariate(1.0 / mean)))

    def _schedule_next_mine(self, node_idx: int) -> None:
        self.schedule(self.now + self._mine_delay(node_idx), ("mine", node_idx))

    def _fire_mining(self, node_idx: int) -> None:
        if node_idx in self.crashed or self.nodes[node_idx] is None:
            return  # rescheduled on restart
        self.fire_mining_once(node_idx)
        if self.mining_enabled:
            self._schedule_next_mine(node_idx)

    def fire_mining_once(self, node_idx: int):
        node = self.nodes[node_idx]
        block = node.mine_and_broadcast()
        if block is not None:
            self.tracer.log(
                time=self.now,
                type="mine",
                node=node_idx,
                height=block.height,
                hash=block.block_hash.hex(),
                txs=[tx.tx_hash.hex() for tx in block.transactions],
            )
        return block

    def enable_periodic_sync(self) -> None:
        if self.config.sync_interval_ms <= 0:
            return
        for idx in range(self.num_nodes):
            # stagger by index so sync traffic doesn't arrive in lockstep
            offset = 1 + (idx * self.config.sync_interval_ms) // max(1, self.num_nodes)
            self.schedule(offset, ("sync", idx))

    # -- churn -------------------------------------------------------------

    def crash_node(self, index: int) -> bool:
        """Take a node offline, persisting its canonical chain. Crashing an
        already-crashed node is a reported no-op (returns False)."""
        self._check_index(index)
        if index in self.crashed:
            return False
        node = self.nodes[index]
        if node is not None:
            self.persisted[index] = node.persist_chain_lines()
        self.crashed.add(index)
        self.nodes[index] = None
        self.tracer.log(time=self.now, type="crash", node=index)
        return True

    def restart_node(self, index: int) -> None:
        """Bring a crashed node back: volatile state is gone, the persisted
        chain file is reloaded, and the node re-joins and re-syncs."""
        self._check_index(index)
        if index not in self.crashed:
            return
        self.crashed.discard(index)
        if self.node_factory is None:
            raise RuntimeError("restart requires a node_factory")
        node = self.node_factory(self, index, self.persisted.get(index))
        self.nodes[index] = node
        self.tracer.log(time=self.now, type="restart", node=index)
        node.rejoin()
        if self.config.hash_rate_shares.get(index, 0) > 0:
            self._schedule_next_mine(index)

    def partition(self, side_a, side_b) -> None:
        self.dynamic_partitions.append((set(side_a), set(side_b)))

    def heal(self) -> None:
        self.dynamic_partitions.clear()
