"""Command-line entry point: run scenarios, manage keys, inspect and
verify chain files, and serve JSON-RPC for a single node.

Exit codes: 0 success, 1 runtime invariant breach, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from . import ledger, metrics, rpc
from .crypto import address_from_public_key, generate_keypair
from .ledger import ChainError, read_chain_file, verify_chain_lines, write_chain_file
from .netsim import SimConfig, Tracer
from .scenario import ScenarioError, load_scenario_file, node_key_seed, run_scenario

BUNDLED = ["convergence_20", "partition_heal", "sybil_shares", "churn_restart", "tamper_detect"]


def bundled_scenario_path(name: str) -> Path:
    ref = resources.files("chainsim").joinpath(f"scenarios/{name}.json")
    with resources.as_file(ref) as p:
        return Path(p)


def _resolve_scenario(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    if arg in BUNDLED:
        return bundled_scenario_path(arg)
    stem = arg.removesuffix(".json")
    if stem in BUNDLED:
        return bundled_scenario_path(stem)
    raise ScenarioError(f"scenario not found: {arg}")


def cmd_run(args) -> int:
    try:
        path = _resolve_scenario(args.scenario)
        scenario = load_scenario_file(path)
        if args.seed is not None:
            scenario.sim.rng_seed = args.seed
    except ScenarioError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_scenario(scenario, blob_root=out / "blobs")

    result.tracer.write(out / "trace.jsonl")
    rows = metrics.compute_metrics(result.tracer.rows)
    (out / "metrics.csv").write_bytes(metrics.metrics_csv(rows))
    for i, node in enumerate(result.nodes):
        if node is not None:
            write_chain_file(node.store.canonical_chain(), out / f"chain_node{i}.jsonl")
    summary = result.summary()
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )

    # runtime invariant: every live node's canonical chain must replay clean
    for i, node in enumerate(result.nodes):
        if node is None:
            continue
        try:
            ledger.verify_chain(node.store, node.store.canonical_tip)
        except ChainError as e:
            print(f"invariant breach: node {i} chain invalid at height {e.height} ({e.code})",
                  file=sys.stderr)
            return 1

    if not args.quiet:
        print(f"scenario {scenario.name}: converged={summary['converged']} "
              f"heights={sorted(set(summary['heights']))} "
              f"mined={summary['blocks_mined']}")
    return 0


def cmd_keygen(args) -> int:
    try:
        seed = bytes.fromhex(args.seed)
        if len(seed) != 32:
            raise ValueError("seed must be 32 bytes of hex")
        kp = generate_keypair(seed)
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    print(f"public_key: {kp.public_key.hex()}")
    print(f"address:    {address_from_public_key(kp.public_key).hex()}")
    return 0


def cmd_inspect(args) -> int:
    try:
        blocks = read_chain_file(args.chain_file)
    except Exception as e:
        print(f"config error: unreadable chain file: {e}", file=sys.stderr)
        return 2
    if not blocks:
        print("config error: empty chain file", file=sys.stderr)
        return 2
    head = blocks[-1]
    total_txs = sum(len(b.transactions) for b in blocks)
    print(f"blocks:    {len(blocks)} (height 0..{head.height})")
    print(f"head hash: {head.block_hash.hex()}")
    print(f"txs:       {total_txs}")
    for b in blocks:
        print(f"  h={b.height} hash={b.block_hash.hex()[:16]}.. txs={len(b.transactions)} "
              f"miner={b.miner.hex()[:12]}..")
    return 0


def cmd_verify(args) -> int:
    try:
        with open(args.chain_file, "rb") as f:
            lines = [ln for ln in f.read().split(b"\n") if ln.strip()]
    except OSError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    if not lines:
        print("config error: empty chain file", file=sys.stderr)
        return 2
    try:
        state = verify_chain_lines(lines)
    except ChainError as e:
        print(f"FAIL at height {e.height}: {e.code}")
        return 1
    print(f"ok: {len(lines)} blocks, supply {state.total_supply()}")
    return 0


class _StandaloneSim:
    """Minimal simulator stand-in for a single RPC-served node."""

    def __init__(self):
        self.now = 0
        self.config = SimConfig()
        self.tracer = Tracer()

    def send(self, *a, **k):
        return False

    def query(self, *a, **k):
        return None


def cmd_serve_rpc(args) -> int:
    from .node import SimNode

    try:
        blocks = read_chain_file(args.chain_file)
        if not blocks:
            raise ValueError("empty chain file")
        lines = ledger.chain_file_lines(blocks)
    except Exception as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    sim = _StandaloneSim()
    seed = bytes.fromhex(args.seed_hex) if args.seed_hex else node_key_seed(0, 0)
    node = SimNode(sim, 0, seed, blocks[0], persisted_lines=lines)
    server = rpc.serve(node, port=args.port)
    host, port = server.server_address
    if not args.quiet:
        print(f"serving JSON-RPC on http://{host}:{port} "
              f"(head height {node.head().height})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chainsim")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario")
    p_run.add_argument("scenario", help="scenario path or bundled name")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--quiet", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_key = sub.add_parser("keygen", help="derive a keypair from a 32-byte hex seed")
    p_key.add_argument("seed")
    p_key.set_defaults(func=cmd_keygen)

    p_ins = sub.add_parser("inspect", help="summarize a chain file")
    p_ins.add_argument("chain_file")
    p_ins.set_defaults(func=cmd_inspect)

    p_ver = sub.add_parser("verify", help="replay-verify a chain file")
    p_ver.add_argument("chain_file")
    p_ver.set_defaults(func=cmd_verify)

    p_srv = sub.add_parser("serve-rpc", help="serve one node over JSON-RPC")
    p_srv.add_argument("chain_file")
    p_srv.add_argument("--port", type=int, default=8545)
    p_srv.add_argument("--seed", dest="seed_hex", default=None,
                       help="node key seed (32-byte hex)")
    p_srv.add_argument("--quiet", action="store_true")
    p_srv.set_defaults(func=cmd_serve_rpc)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # propagate the global flag for subcommands that read it
    if not hasattr(args, "quiet"):
        args.quiet = False
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
