"""Proof-of-work sealing and longest-chain fork choice.

Difficulty is a required count of leading zero bits in the block hash, so
expected sealing work is exactly 2^d attempts. Mining searches nonces
sequentially from a caller-supplied start, which keeps every seal
reproducible. Fork choice picks the tip of maximal height; equal-height
ties go to the tip that arrived first.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

from .crypto import hash_bytes

BLOCK_REWARD = 50


def meets_difficulty(block_hash: bytes, difficulty_bits: int) -> bool:
    """True iff the first ``difficulty_bits`` bits of the digest are zero."""
    if not 0 <= difficulty_bits <= 255:
        raise ValueError("difficulty_bits out of range")
    if difficulty_bits == 0:
        return True
    value = int.from_bytes(block_hash, "big")
    return value >> (len(block_hash) * 8 - difficulty_bits) == 0


def block_reward(height: int) -> int:
    """Constant 50-unit subsidy for every mined block (height >= 1)."""
    if height < 1:
        raise ValueError("genesis mints nothing beyond its allocations")
    return BLOCK_REWARD


@dataclass(frozen=True)
class BlockTemplate:
    """Everything a block needs except its proof-of-work nonce."""

    height: int
    prev_hash: bytes
    timestamp: int
    difficulty_bits: int
    miner: bytes
    tx_root: bytes
    transactions: tuple = ()

    def header_bytes(self, pow_nonce: int) -> bytes:
        return b"".join(
            [
                struct.pack(">Q", self.height),
                self.prev_hash,
                struct.pack(">Q", self.timestamp),
                struct.pack(">B", self.difficulty_bits),
                struct.pack(">Q", pow_nonce),
                self.miner,
                self.tx_root,
            ]
        )

    def seal(self, pow_nonce: int):
        from .ledger import Block

        return Block(
            height=self.height,
            prev_hash=self.prev_hash,
            timestamp=self.timestamp,
            difficulty_bits=self.difficulty_bits,
            pow_nonce=pow_nonce,
            miner=self.miner,
            tx_root=self.tx_root,
            transactions=self.transactions,
        )


class MiningExhausted(Exception):
    def __init__(self, attempts: int):
        self.attempts = attempts
        super().__init__(f"no valid nonce in {attempts} attempts")


def mine(template: BlockTemplate, start_nonce: int = 0, max_attempts: int = 1 << 24):
    """Seal ``template`` with the first qualifying nonce in
    [start_nonce, start_nonce + max_attempts); raises MiningExhausted
    if none qualifies so the caller can resume from a new start."""
    d = template.difficulty_bits
    prefix = template.header_bytes(0)
    # nonce occupies bytes 49..57 of the header; rebuild just that slice
    head, tail = prefix[:49], prefix[57:]
    for i in range(max_attempts):
        nonce = start_nonce + i
        digest = hash_bytes(head + struct.pack(">Q", nonce) + tail)
        if meets_difficulty(digest, d):
            return template.seal(nonce)
    raise MiningExhausted(max_attempts)


def count_attempts(template: BlockTemplate, start_nonce: int = 0, max_attempts: int = 1 << 24) -> int:
    """Number of hash attempts mine() needs for this template (>= 1)."""
    block = mine(template, start_nonce, max_attempts)
    return block.pow_nonce - start_nonce + 1


def fork_choice(store) -> bytes:
    """Tip hash of maximal height; equal heights break by earliest arrival."""
    best: Optional[bytes] = None
    best_key = None
    for tip_hash, seq in store.tips.items():
        height = store.height_of(tip_hash)
        key = (-height, seq)
        if best_key is None or key < best_key:
            best_key = key
            best = tip_hash
    if best is None:
        raise ValueError("empty block store")
    return best
