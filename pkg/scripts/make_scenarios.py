#!/usr/bin/env python3
"""Regenerate the bundled scenario JSON files in src/chainsim/scenarios/.

The bundled files are committed; rerun this only when changing a
scenario's shape, then re-check the acceptance suite (some tests pin
behavior of specific seeds).
"""

import json
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "src" / "chainsim" / "scenarios"


def seed_hex(i: int) -> str:
    return f"{i:02x}" * 32


def convergence_20() -> dict:
    senders = [seed_hex(0x10 + i) for i in range(10)]
    workload = []
    t = 500
    for j in range(200):
        s = j % 10
        workload.append(
            {
                "time_ms": t,
                "node": j % 20,
                "sender_seed": senders[s],
                "recipient_seed": senders[(s + 1) % 10],
                "amount": 5 + (j % 7),
                "fee": 1 + (j * 3) % 10,
            }
        )
        t += 120
    return {
        "name": "convergence_20",
        "num_nodes": 20,
        "seed": 42,
        "sim": {
            "latency_min_ms": 5,
            "latency_max_ms": 50,
            "drop_probability": 0.01,
            "block_interval_target_ms": 1000,
            "difficulty_bits": 8,
            "sync_interval_ms": 2000,
        },
        "miners": {"0": 1.0, "1": 1.0, "2": 1.0},
        "duration_ms": 45000,
        "genesis_allocations": [{"seed": s, "amount": 10000} for s in senders],
        "workload": workload,
    }


def partition_heal() -> dict:
    sender = seed_hex(0x20)
    recipient = seed_hex(0x21)
    # transactions submitted inside the minority partition, so the heal
    # displaces their blocks and reinstates them
    workload = [
        {
            "time_ms": 1500 + 1200 * j,
            "node": 2,
            "sender_seed": sender,
            "recipient_seed": recipient,
            "amount": 10,
            "fee": 2 + j,
        }
        for j in range(4)
    ]
    # seed 39 pins the intended shape: the minority side mines 4 blocks
    # (carrying the workload), the majority side 6, heal reorgs everyone
    return {
        "name": "partition_heal",
        "num_nodes": 10,
        "seed": 39,
        "sim": {
            "latency_min_ms": 5,
            "latency_max_ms": 30,
            "drop_probability": 0.0,
            "block_interval_target_ms": 3000,
            "difficulty_bits": 8,
            "sync_interval_ms": 2000,
            "partition_schedule": [[1000, 30000, [0, 1, 2, 3, 4], [5, 6, 7, 8, 9]]],
        },
        "miners": {"1": 0.4, "6": 0.6},
        "duration_ms": 30000,
        "genesis_allocations": [{"seed": sender, "amount": 1000}],
        "workload": workload,
    }


def sybil_shares() -> dict:
    return {
        "name": "sybil_shares",
        "num_nodes": 5,
        "seed": 11,
        "sim": {
            "latency_min_ms": 5,
            "latency_max_ms": 20,
            "drop_probability": 0.0,
            "block_interval_target_ms": 500,
            "difficulty_bits": 8,
            "sync_interval_ms": 5000,
        },
        "miners": {"0": 0.7, "1": 0.3},
        "duration_ms": 300000,
        "genesis_allocations": [],
        "workload": [],
    }


def churn_restart() -> dict:
    sender = seed_hex(0x30)
    recipient = seed_hex(0x31)
    workload = [
        {
            "time_ms": 2000 + 3000 * j,
            "node": j % 5,
            "sender_seed": sender,
            "recipient_seed": recipient,
            "amount": 3,
            "fee": 1,
        }
        for j in range(10)
    ]
    return {
        "name": "churn_restart",
        "num_nodes": 10,
        "seed": 5,
        "sim": {
            "latency_min_ms": 5,
            "latency_max_ms": 40,
            "drop_probability": 0.02,
            "block_interval_target_ms": 1500,
            "difficulty_bits": 8,
            "sync_interval_ms": 2000,
        },
        "miners": {"0": 1.0, "1": 1.0},
        "duration_ms": 45000,
        "genesis_allocations": [{"seed": sender, "amount": 1000}],
        "workload": workload,
        "crashes": [
            {"time_ms": 10000, "node": 7},
            {"time_ms": 10000, "node": 8},
            {"time_ms": 10000, "node": 9},
        ],
        "restarts": [
            {"time_ms": 30000, "node": 7},
            {"time_ms": 30000, "node": 8},
            {"time_ms": 30000, "node": 9},
        ],
    }


def tamper_detect() -> dict:
    sender = seed_hex(0x40)
    recipient = seed_hex(0x41)
    workload = [
        {
            "time_ms": 500 + 800 * j,
            "node": j % 3,
            "sender_seed": sender,
            "recipient_seed": recipient,
            "amount": 2 + j,
            "fee": 1 + (j % 3),
        }
        for j in range(12)
    ]
    return {
        "name": "tamper_detect",
        "num_nodes": 3,
        "seed": 9,
        "sim": {
            "latency_min_ms": 5,
            "latency_max_ms": 20,
            "drop_probability": 0.0,
            "block_interval_target_ms": 800,
            "difficulty_bits": 8,
            "sync_interval_ms": 2000,
        },
        "miners": {"0": 1.0},
        "duration_ms": 14000,
        "genesis_allocations": [{"seed": sender, "amount": 1000}],
        "workload": workload,
    }


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for build in (convergence_20, partition_heal, sybil_shares, churn_restart, tamper_detect):
        obj = build()
        path = OUT / f"{obj['name']}.json"
        path.write_text(json.dumps(obj, indent=2) + "\n")
        print("wrote", path)


if __name__ == "__main__":
    main()
