"""Per-peer protocol state machine.

Composes ledger, mempool, proof-of-work, and the Kademlia table into one
event-driven node: validate-then-gossip for transactions and blocks,
orphan handling with parent re-request, longest-chain reorgs with
mempool reinstatement, and locator-based chain sync for catch-up.
"""

from __future__ import annotations

import json
import struct
from typing import Optional

from . import consensus, kademlia, ledger
from .crypto import generate_keypair, node_id_from_public_key
from .kademlia import Contact, RoutingTable
from .ledger import AccountState, Block, BlockStore, Transaction
from .mempool import Mempool

ORPHAN_POOL_CAP = 64
SYNC_PAGE_SIZE = 32


def encode_blocks(blocks: list) -> bytes:
    return json.dumps([b.to_json() for b in blocks], sort_keys=True, separators=(",", ":")).encode()


def decode_blocks(body: bytes) -> list:
    return [Block.from_json(obj) for obj in json.loads(body)]


def encode_contacts(contacts: list) -> bytes:
    return json.dumps(
        [[c.node_id.hex(), c.endpoint] for c in contacts],
        separators=(",", ":"),
    ).encode()


def decode_contacts(body: bytes, last_seen: int = 0) -> list:
    return [
        Contact(bytes.fromhex(nid), endpoint, last_seen)
        for nid, endpoint in json.loads(body)
    ]


class SimNode:
    """One peer inside a Simulator."""

    def __init__(
        self,
        sim,
        index: int,
        seed: bytes,
        genesis: Block,
        max_block_txs: int = ledger.MAX_BLOCK_TXS,
        persisted_lines: Optional[list] = None,
    ):
        self.sim = sim
        self.index = index
        self.keypair = generate_keypair(seed)
        self.node_id = node_id_from_public_key(self.keypair.public_key)
        self.address = self.node_id  # same 20-byte derivation
        self.max_block_txs = max_block_txs
        self.store = BlockStore(genesis)
        self.snapshots: dict = {
            genesis.block_hash: ledger.apply_block(AccountState(), genesis)
        }
        self.mempool = Mempool()
        self.routing = RoutingTable(self.node_id)
        self.orphan_pool: dict = {}  # prev_hash -> list of Blocks
        self._orphan_order: list = []  # FIFO of block hashes for capping
        self.seen: set = set()
        self.seen.add(genesis.block_hash)
        self._sync_rotation = 0
        self.blob_store = None  # attached by the scenario runner when used
        if persisted_lines:
            self._load_persisted(persisted_lines)

    # -- identity ------------------------------------------------------------

    @property
    def canonical_state(self) -> AccountState:
        return self.snapshots[self.store.canonical_tip]

    def head(self) -> Block:
        return self.store.blocks[self.store.canonical_tip]

    def _load_persisted(self, lines: list) -> None:
        blocks = [Block.decode(ln) for ln in lines]
        state = ledger.replay_blocks(blocks)  # refuse corrupt persistence
        for block in blocks[1:]:
            parent = self.store.blocks[block.prev_hash]
            self.store.insert(block)
            self.snapshots[block.block_hash] = ledger.apply_block(
                self.snapshots[parent.block_hash], block
            )
            self.seen.add(block.block_hash)
        self.store.canonical_tip = consensus.fork_choice(self.store)
        assert self.canonical_state.state_hash() == state.state_hash()

    def persist_chain_lines(self) -> list:
        return ledger.chain_file_lines(self.store.canonical_chain())

    # -- overlay -------------------------------------------------------------

    def _ping_contact(self, contact: Contact) -> bool:
        return (
            self.sim.query(self.index, contact.endpoint, "PING", self.node_id)
            is not None
        )

    def observe(self, contact: Contact) -> None:
        self.routing.observe_contact(contact, ping=self._ping_contact)

    def join(self, bootstrap: Contact) -> None:
        """Standard bootstrap: learn one contact, then look up our own id."""
        self.observe(bootstrap)
        try:
            self.lookup(self.node_id)
        except kademlia.LookupFailed:
            pass

    def lookup(self, target: bytes, k: int = kademlia.K, alpha: int = kademlia.ALPHA):
        def query(contact: Contact, tgt: bytes):
            # body = requester id || target, so the peer learns us too
            resp = self.sim.query(
                self.index, contact.endpoint, "FIND_NODE", self.node_id + tgt
            )
            if resp is None:
                return None
            return decode_contacts(resp, last_seen=self.sim.now)

        found, rounds = kademlia.iterative_lookup(
            self.routing, target, query, k=k, alpha=alpha
        )
        for contact in found:
            self.observe(contact)
        return found, rounds

    def handle_query(self, kind: str, body: bytes, src: int) -> Optional[bytes]:
        """Synchronous overlay RPCs (FIND_NODE, PING) served in place."""
        if kind == "PING":
            if len(body) == 20:
                self.observe(Contact(body, src, self.sim.now))
            return b"PONG"
        if kind == "FIND_NODE":
            if len(body) != 40:
                return None
            requester, target = body[:20], body[20:]
            self.observe(Contact(requester, src, self.sim.now))
            closest = self.routing.find_closest(target, kademlia.K) if len(self.routing) else []
            closest = [c for c in closest if c.endpoint != src]
            return encode_contacts(closest)
        return None

    def rejoin(self) -> None:
        """After restart: bootstrap back into the overlay and re-sync."""
        bootstrap = getattr(self, "_bootstrap", None)
        if bootstrap is not None:
            self.join(bootstrap)
        self.periodic_sync()

    def set_bootstrap(self, contact: Contact) -> None:
        self._bootstrap = contact

    # -- gossip --------------------------------------------------------------

    def _gossip(self, kind: str, body: bytes, exclude: Optional[int] = None) -> None:
        for contact in self.routing.contacts():
            if contact.endpoint == exclude or contact.endpoint == self.index:
                continue
            self.sim.send(self.index, contact.endpoint, kind, body)

    def handle(self, env, trace_row: Optional[dict] = None) -> None:
        kind, body, origin = env.kind, env.body, env.src
        if kind == "TX_ANNOUNCE":
            tx = ledger.decode_transaction(body)
            if trace_row is not None:
                trace_row["tx"] = tx.tx_hash.hex()
            self.on_transaction(tx, origin)
        elif kind == "BLOCK_ANNOUNCE":
            block = Block.decode(body)
            if trace_row is not None:
                trace_row["block"] = block.block_hash.hex()
            self.on_block(block, origin)
        elif kind == "GET_BLOCKS":
            self._serve_blocks(body, origin)
        elif kind == "BLOCKS":
            self._on_blocks(body, origin)
        elif kind in ("FIND_NODE", "PING", "FOUND_NODES", "PONG"):
            pass  # overlay RPCs use the synchronous query path
        else:
            raise ValueError(f"unknown message kind {kind}")

    # -- transactions ----------------------------------------------------------

    def on_transaction(self, tx: Transaction, origin: Optional[int] = None) -> str:
        """Returns 'relayed', 'duplicate', or 'rejected:<cause>'."""
        if tx.tx_hash in self.seen:
            return "duplicate"
        try:
            self.mempool.insert(tx, self.canonical_state)
        except ledger.TxError as e:
            if e.code == "duplicate":
                return "duplicate"
            return f"rejected:{e.code}"
        self.seen.add(tx.tx_hash)
        self._gossip("TX_ANNOUNCE", tx.encode(), exclude=origin)
        return "relayed"

    # -- blocks ------------------------------------------------------------

    def on_block(self, block: Block, origin: Optional[int] = None) -> str:
        """Returns 'adopted', 'side_chain', 'orphaned', 'duplicate', or
        'rejected:<cause>'."""
        h = block.block_hash
        if h in self.seen and h in self.store:
            return "duplicate"
        if block.prev_hash not in self.store:
            self._add_orphan(block)
            if origin is not None:
                self._request_blocks(origin)
            return "orphaned"
        status = self._connect(block)
        if status.startswith("rejected"):
            return status
        self._gossip("BLOCK_ANNOUNCE", block.encode(), exclude=origin)
        self._connect_orphans(h, origin)
        return status

    def _connect(self, block: Block) -> str:
        parent = self.store.blocks[block.prev_hash]
        parent_state = self.snapshots[parent.block_hash]
        try:
            ledger.validate_block(block, parent, parent_state)
        except ledger.BlockError as e:
            return f"rejected:{e.code}"
        self.store.insert(block)
        self.snapshots[block.block_hash] = ledger.apply_block(parent_state, block)
        self.seen.add(block.block_hash)
        old_tip = self.store.canonical_tip
        new_tip = consensus.fork_choice(self.store)
        if new_tip != old_tip:
            self._adopt(old_tip, new_tip)
            return "adopted"
        return "side_chain"

    def _adopt(self, old_tip: bytes, new_tip: bytes) -> None:
        """Switch the canonical chain: rewind to the common ancestor, replay
        the new branch, prune mempool, reinstate displaced transactions."""
        old_path = {b.block_hash: b for b in self.store.path_to_genesis(old_tip)}
        new_path = self.store.path_to_genesis(new_tip)
        new_hashes = {b.block_hash for b in new_path}
        displaced = []
        new_tx_hashes = {
            tx.tx_hash for b in new_path for tx in b.transactions
        }
        for bh, b in old_path.items():
            if bh not in new_hashes:
                displaced.extend(
                    tx for tx in b.transactions if tx.tx_hash not in new_tx_hashes
                )
        self.store.canonical_tip = new_tip
        for block in new_path:
            if block.block_hash not in old_path and block.transactions:
                self.mempool.remove_included(block)
        self.mempool.prune(self.canonical_state)
        self.mempool.reinstate(displaced, self.canonical_state)
        head = self.store.blocks[new_tip]
        self.sim.tracer.log(
            time=self.sim.now,
            type="adopt",
            node=self.index,
            height=head.height,
            hash=new_tip.hex(),
        )

    def _add_orphan(self, block: Block) -> None:
        h = block.block_hash
        if any(b.block_hash == h for bs in self.orphan_pool.values() for b in bs):
            return
        self.orphan_pool.setdefault(block.prev_hash, []).append(block)
        self._orphan_order.append(h)
        while len(self._orphan_order) > ORPHAN_POOL_CAP:
            victim = self._orphan_order.pop(0)
            for prev, blocks in list(self.orphan_pool.items()):
                kept = [b for b in blocks if b.block_hash != victim]
                if kept:
                    self.orphan_pool[prev] = kept
                else:
                    self.orphan_pool.pop(prev, None)

    def _connect_orphans(self, parent_hash: bytes, origin: Optional[int]) -> None:
        waiting = self.orphan_pool.pop(parent_hash, None)
        if not waiting:
            return
        for block in waiting:
            if block.block_hash in self._orphan_order:
                self._orphan_order.remove(block.block_hash)
            self.on_block(block, origin)

    # -- mining ------------------------------------------------------------

    def build_template(self, difficulty_bits: Optional[int] = None) -> consensus.BlockTemplate:
        parent = self.head()
        selected = self.mempool.select_for_block(self.max_block_txs)
        txs = self._filter_applicable(selected)
        if difficulty_bits is None:
            difficulty_bits = self.sim.config.difficulty_bits
        return consensus.BlockTemplate(
            height=parent.height + 1,
            prev_hash=parent.block_hash,
            timestamp=max(self.sim.now, parent.timestamp),
            difficulty_bits=difficulty_bits,
            miner=self.address,
            tx_root=ledger.compute_tx_root(txs),
            transactions=tuple(txs),
        )

    def _filter_applicable(self, txs: list) -> list:
        """Drop selections the canonical state can no longer afford; a reorg
        between insertion and selection can stale an entry."""
        state = self.canonical_state.copy()
        kept = []
        for tx in txs:
            sender = tx.sender
            if state.next_nonce(sender) != tx.nonce:
                continue
            if state.balance(sender) < tx.amount + tx.fee:
                continue
            state.balances[sender] = state.balance(sender) - tx.amount - tx.fee
            state.balances[tx.recipient] = state.balance(tx.recipient) + tx.amount
            state.nonces[sender] = tx.nonce + 1
            kept.append(tx)
        return kept

    def mine_and_broadcast(self) -> Optional[Block]:
        template = self.build_template()
        block = consensus.mine(template, start_nonce=0)
        status = self.on_block(block, origin=None)
        if status in ("adopted", "side_chain"):
            return block
        return None

    # -- sync --------------------------------------------------------------

    def _locator(self) -> list:
        """Canonical-chain sample: tip, exponentially spaced back, genesis."""
        chain = self.store.canonical_chain()
        hashes = []
        step = 1
        i = len(chain) - 1
        while i > 0:
            hashes.append(chain[i].block_hash)
            i -= step
            step *= 2
        hashes.append(chain[0].block_hash)
        return hashes

    def _request_blocks(self, peer: int) -> None:
        body = b"".join(self._locator())
        self.sim.send(self.index, peer, "GET_BLOCKS", body)

    def sync(self, peer: int) -> None:
        self._request_blocks(peer)

    def periodic_sync(self) -> None:
        """Anti-entropy: ask a rotating contact for anything newer."""
        contacts = self.routing.contacts()
        if not contacts:
            return
        contact = contacts[self._sync_rotation % len(contacts)]
        self._sync_rotation += 1
        self._request_blocks(contact.endpoint)

    def _serve_blocks(self, body: bytes, origin: int) -> None:
        if len(body) % 32 != 0:
            return
        locator = [body[i : i + 32] for i in range(0, len(body), 32)]
        chain = self.store.canonical_chain()
        index_of = {b.block_hash: i for i, b in enumerate(chain)}
        start = 0
        for h in locator:
            if h in index_of:
                start = index_of[h] + 1
                break
        page = chain[start : start + SYNC_PAGE_SIZE]
        if page:
            self.sim.send(self.index, origin, "BLOCKS", encode_blocks(page))

    def _on_blocks(self, body: bytes, origin: int) -> None:
        blocks = decode_blocks(body)
        progressed = False
        for block in blocks:
            status = self.on_block(block, origin)
            if status in ("adopted", "side_chain", "orphaned"):
                progressed = True
        if progressed and len(blocks) == SYNC_PAGE_SIZE:
            self._request_blocks(origin)  # more pages likely remain
