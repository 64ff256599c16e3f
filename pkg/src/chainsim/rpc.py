"""JSON-RPC 2.0 surface for a node.

The dispatcher is transport-free so simulations can call it in-process
against any simulated node; ``serve`` wraps the same dispatcher in a
loopback HTTP server (one JSON-RPC payload per POST). Application error
codes: 1001 bad_signature, 1002 bad_nonce, 1003 insufficient_funds,
1004 duplicate, 1005 payload_too_large.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from . import ledger

PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602

APP_ERROR_CODES = {
    "bad_signature": 1001,
    "bad_nonce": 1002,
    "insufficient_funds": 1003,
    "duplicate": 1004,
    "payload_too_large": 1005,
}


class RpcError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        self.message = message
        super().__init__(message)


def _require_hex(params: dict, key: str, length: Optional[int] = None) -> bytes:
    value = params.get(key)
    if not isinstance(value, str):
        raise RpcError(INVALID_PARAMS, f"missing or non-string param '{key}'")
    try:
        raw = bytes.fromhex(value)
    except ValueError:
        raise RpcError(INVALID_PARAMS, f"param '{key}' is not hex")
    if length is not None and len(raw) != length:
        raise RpcError(INVALID_PARAMS, f"param '{key}' must be {length} bytes")
    return raw


class RpcDispatcher:
    """Maps JSON-RPC methods onto one node; requests are serialized."""

    def __init__(self, node):
        self.node = node
        self._lock = threading.Lock()

    # -- method implementations ---------------------------------------------

    def chain_submitTransaction(self, params: dict):
        raw = _require_hex(params, "tx")
        try:
            tx = ledger.decode_transaction(raw)
        except ledger.TxError as e:
            raise RpcError(INVALID_PARAMS, f"undecodable transaction: {e.code}")
        status = self.node.on_transaction(tx, origin=None)
        if status == "duplicate":
            raise RpcError(APP_ERROR_CODES["duplicate"], "transaction already known")
        if status.startswith("rejected:"):
            cause = status.split(":", 1)[1]
            raise RpcError(APP_ERROR_CODES.get(cause, INVALID_PARAMS), cause)
        return tx.tx_hash.hex()

    def _block_result(self, block) -> dict:
        chain_hash = block.block_hash
        canonical = False
        # canonical iff the block sits on the path genesis -> canonical tip
        h = self.node.store.canonical_tip
        while True:
            if h == chain_hash:
                canonical = True
                break
            b = self.node.store.blocks[h]
            if b.height == 0:
                break
            h = b.prev_hash
        obj = block.to_json()
        obj["hash"] = chain_hash.hex()
        obj["canonical"] = canonical
        return obj

    def chain_getBlockByHeight(self, params: dict):
        height = params.get("height")
        if not isinstance(height, int) or isinstance(height, bool) or height < 0:
            raise RpcError(INVALID_PARAMS, "height must be a non-negative integer")
        chain = self.node.store.canonical_chain()
        if height >= len(chain):
            return None
        return self._block_result(chain[height])

    def chain_getBlockByHash(self, params: dict):
        h = _require_hex(params, "hash", 32)
        block = self.node.store.get(h)
        if block is None:
            return None
        return self._block_result(block)

    def chain_getBalance(self, params: dict):
        address = _require_hex(params, "address", 20)
        return self.node.canonical_state.balance(address)

    def chain_getTransactionStatus(self, params: dict):
        h = _require_hex(params, "hash", 32)
        if h in self.node.mempool:
            return {"status": "pending"}
        for block in self.node.store.canonical_chain():
            for tx in block.transactions:
                if tx.tx_hash == h:
                    return {"status": "confirmed", "height": block.height}
        return {"status": "unknown"}

    def chain_getHead(self, params: dict):
        head = self.node.head()
        return {"height": head.height, "hash": head.block_hash.hex()}

    def net_getPeers(self, params: dict):
        return [
            {"id": c.node_id.hex(), "endpoint": c.endpoint}
            for c in self.node.routing.contacts()
        ]

    METHODS = {
        "chain_submitTransaction": chain_submitTransaction,
        "chain_getBlockByHeight": chain_getBlockByHeight,
        "chain_getBlockByHash": chain_getBlockByHash,
        "chain_getBalance": chain_getBalance,
        "chain_getTransactionStatus": chain_getTransactionStatus,
        "chain_getHead": chain_getHead,
        "net_getPeers": net_getPeers,
    }

    # -- protocol ----------------------------------------------------------

    def _handle_one(self, req) -> dict:
        rid = req.get("id") if isinstance(req, dict) else None
        if (
            not isinstance(req, dict)
            or req.get("jsonrpc") != "2.0"
            or not isinstance(req.get("method"), str)
        ):
            return _error_response(rid, INVALID_REQUEST, "invalid request")
        method = self.METHODS.get(req["method"])
        if method is None:
            return _error_response(rid, METHOD_NOT_FOUND, f"unknown method {req['method']}")
        params = req.get("params", {})
        if not isinstance(params, dict):
            return _error_response(rid, INVALID_PARAMS, "params must be by-name")
        try:
            result = method(self, params)
        except RpcError as e:
            return _error_response(rid, e.code, e.message)
        return {"jsonrpc": "2.0", "id": rid, "result": result}

    def handle_payload(self, payload: bytes) -> bytes:
        """One raw JSON-RPC payload in, one out; batches answer positionally."""
        try:
            req = json.loads(payload)
        except (ValueError, UnicodeDecodeError):
            return _encode(_error_response(None, PARSE_ERROR, "parse error"))
        with self._lock:
            if isinstance(req, list):
                if not req:
                    return _encode(_error_response(None, INVALID_REQUEST, "empty batch"))
                return _encode([self._handle_one(r) for r in req])
            return _encode(self._handle_one(req))


def _error_response(rid, code: int, message: str) -> dict:
    return {"jsonrpc": "2.0", "id": rid, "error": {"code": code, "message": message}}


def _encode(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


class _Handler(BaseHTTPRequestHandler):
    dispatcher: RpcDispatcher = None

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        response = self.dispatcher.handle_payload(body)
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(response)))
        self.end_headers()
        self.wfile.write(response)

    def log_message(self, fmt, *args):  # quiet server
        pass


def serve(node, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    """Start an HTTP JSON-RPC server for ``node``; returns the server
    (serve_forever runs on a daemon thread; .server_address has the port)."""
    dispatcher = RpcDispatcher(node)
    handler = type("Handler", (_Handler,), {"dispatcher": dispatcher})
    server = ThreadingHTTPServer((host, port), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server
