"""Runnable ledger node: pool, interval sealing, persistence and HTTP API.

One process is the sequencer and owns block production; any number of
followers replicate and serve the same read API, redirecting writes to
the sequencer. Admission runs the full transition on a pending-state
preview so an admitted transaction is guaranteed a slot in the next
block (outcomes do not depend on the eventual block timestamp).

Endpoints (bodies in the canonical record encoding):

    POST /tx                     submit a signed transaction
    POST /blob                   store ciphertext, returns storage key
    GET  /blocks?from=H[&limit]  batch block fetch + head info
    GET  /blocks/{height}
    GET  /state/identity/{addr}
    GET  /state/contract/{addr}
    GET  /verify                 full on-disk chain audit
    GET  /report/{report_id}     signed read, wrapped keys filtered to requester
    GET  /blob/{storage_key}     signed read, raw ciphertext

Signed reads carry an X-Signed-Read header: the canonical record
{"requester","path","issued_at","signature"} where the signature is over
hash_canonical([requester, path, issued_at]) and issued_at must be within
120 s of the node clock.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional
from urllib.parse import parse_qs, urlparse

from . import crypto
from .canonical import canonical_bytes, canonical_loads
from .chain import (
    Block,
    BootstrapIdentity,
    ChainConfig,
    EmptyBlockError,
    VerificationReport,
    create_genesis,
    replay,
    seal_block,
    verify_chain,
)
from .contracts import (
    DataResource,
    Decision,
    ReportResource,
    WorldState,
    apply_transaction,
    check_permission,
)
from .store import BlobStore, BlobTooLarge, BlobCorrupt, BlobNotFound
from .transactions import TX_REGISTER, check_shape, tx_digest

logger = logging.getLogger(__name__)

READ_FRESHNESS_MS = 120_000
BLOCK_FETCH_LIMIT = 500
DATA_DIR_ENV = "NEUROLEDGER_DATA_DIR"

MODE_SEQUENCER = "sequencer"
MODE_FOLLOWER = "follower"


class NodeError(Exception):
    pass


@dataclass
class NodeConfig:
    chain_id: str
    mode: str = MODE_SEQUENCER
    listen_host: str = "127.0.0.1"
    listen_port: int = 8645
    block_interval_ms: int = 1000
    data_dir: str = "./neuroledger-data"
    sequencer_endpoint: str = ""
    sequencer_address: str = ""
    sequencer_public_key: str = ""
    seed_file: str = ""

    @classmethod
    def from_file(cls, path: str | Path) -> "NodeConfig":
        """Flat key=value config; '#' starts a comment line."""
        values: dict = {}
        for raw in Path(path).read_text().splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise NodeError(f"bad config line: {raw!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
        cfg = cls(chain_id=values.pop("chain_id", "neuroledger"))
        for key, value in values.items():
            if not hasattr(cfg, key):
                raise NodeError(f"unknown config key {key!r}")
            current = getattr(cfg, key)
            setattr(cfg, key, int(value) if isinstance(current, int) else value)
        override = os.environ.get(DATA_DIR_ENV)
        if override:
            cfg.data_dir = override
        return cfg


def now_ms() -> int:
    return int(time.time() * 1000)


class TxPool:
    """Admission-checked pending transactions, deduplicated by digest."""

    def __init__(self) -> None:
        self.pending: list[dict] = []
        self.seen: set[str] = set()

    def __len__(self) -> int:
        return len(self.pending)


class LedgerNode:
    """Chain + state + pool + blob store behind one lock.

    Reads take immutable snapshots; all mutation happens under the lock in
    submit_tx / append paths and the sequencer tick.
    """

    def __init__(
        self,
        chain_config: ChainConfig,
        data_dir: str | Path,
        blocks: list[Block],
        state: WorldState,
        keypair: Optional[crypto.KeyPair] = None,
        mode: str = MODE_SEQUENCER,
    ):
        self.chain_config = chain_config
        self.data_dir = Path(data_dir)
        self.keypair = keypair
        self.mode = mode
        self.store = BlobStore(self.data_dir)
        self.sequencer_endpoint = ""

        self._lock = threading.RLock()
        self._blocks: tuple = tuple(blocks)
        self._state = state
        self._pool = TxPool()
        self._pool_state = state
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self.alarms: list[str] = []

        self._persist_all_missing()

    # -- construction ----------------------------------------------------

    @classmethod
    def bootstrap_sequencer(
        cls,
        data_dir: str | Path,
        keypair: crypto.KeyPair,
        chain_id: str = "neuroledger",
        block_interval_ms: int = 1000,
        extra_bootstrap: tuple = (),
        genesis_timestamp: Optional[int] = None,
        operator_role: str = "ProjectManager",
    ) -> "LedgerNode":
        config = ChainConfig(
            chain_id=chain_id,
            sequencer=keypair.address,
            sequencer_public_key=keypair.public_key.hex(),
            block_interval_ms=block_interval_ms,
        )
        bootstrap = (
            BootstrapIdentity(
                keypair=keypair,
                role=operator_role,
                profile_hash=crypto.hash_canonical({"operator": chain_id}).hex(),
            ),
        ) + tuple(extra_bootstrap)
        genesis = create_genesis(
            config, bootstrap, genesis_timestamp if genesis_timestamp is not None else now_ms()
        )
        state = replay([genesis])
        return cls(config, data_dir, [genesis], state, keypair=keypair, mode=MODE_SEQUENCER)

    @classmethod
    def open_existing(
        cls,
        data_dir: str | Path,
        keypair: Optional[crypto.KeyPair] = None,
        mode: str = MODE_SEQUENCER,
    ) -> "LedgerNode":
        config, blocks = load_chain_dir(data_dir)
        state = replay(blocks)
        return cls(config, data_dir, blocks, state, keypair=keypair, mode=mode)

    @classmethod
    def new_follower(
        cls, data_dir: str | Path, chain_config: ChainConfig, sequencer_endpoint: str
    ) -> "LedgerNode":
        node = cls(chain_config, data_dir, [], WorldState(), keypair=None, mode=MODE_FOLLOWER)
        node.sequencer_endpoint = sequencer_endpoint
        return node

    # -- persistence -----------------------------------------------------

    def _block_path(self, height: int) -> Path:
        return self.data_dir / "blocks" / f"{height:010d}.json"

    def _persist_block(self, block: Block) -> None:
        path = self._block_path(block.height)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(canonical_bytes(block.to_record()))
        os.replace(tmp, path)
        index = {
            "chain_id": self.chain_config.chain_id,
            "sequencer": self.chain_config.sequencer,
            "sequencer_public_key": self.chain_config.sequencer_public_key,
            "block_interval_ms": self.chain_config.block_interval_ms,
            "head_height": block.height,
            "head_hash": block.block_hash,
        }
        tmp = self.data_dir / "chain.json.tmp"
        tmp.write_bytes(canonical_bytes(index))
        os.replace(tmp, self.data_dir / "chain.json")

    def _persist_all_missing(self) -> None:
        for block in self._blocks:
            if not self._block_path(block.height).exists():
                self._persist_block(block)

    # -- snapshots ---------------------------------------------------------

    def snapshot(self) -> tuple[tuple, WorldState]:
        with self._lock:
            return self._blocks, self._state

    @property
    def head(self) -> Optional[Block]:
        blocks, _ = self.snapshot()
        return blocks[-1] if blocks else None

    # -- writes ------------------------------------------------------------

    def submit_tx(self, tx: dict) -> dict:
        shape_error = check_shape(tx)
        if shape_error is not None:
            return {"accepted": False, "tx_digest": "", "reason": shape_error}
        digest = tx_digest(tx)
        with self._lock:
            if digest in self._pool.seen:
                return {"accepted": False, "tx_digest": digest, "reason": "duplicate"}
            preview, outcome = apply_transaction(self._pool_state, tx, now_ms())
            if not outcome.accepted:
                return {"accepted": False, "tx_digest": digest, "reason": outcome.reason}
            self._pool.seen.add(digest)
            self._pool.pending.append(tx)
            self._pool_state = preview
            return {"accepted": True, "tx_digest": digest, **outcome.info}

    def tick(self, timestamp: Optional[int] = None) -> Optional[Block]:
        """Drain the pool into one sealed block; None when nothing is pending."""
        if self.mode != MODE_SEQUENCER or self.keypair is None:
            raise NodeError("only the sequencer seals blocks")
        with self._lock:
            if not self._pool.pending:
                return None
            txs = self._pool.pending
            self._pool.pending = []
            parent = self._blocks[-1]
            try:
                block, state = seal_block(
                    parent,
                    self._state,
                    txs,
                    self.keypair,
                    timestamp if timestamp is not None else now_ms(),
                    self.chain_config,
                )
            except EmptyBlockError:
                self._pool_state = self._state
                return None
            self._blocks = self._blocks + (block,)
            self._state = state
            self._pool_state = state
            self._persist_block(block)
            return block

    def adopt_blocks(self, new_blocks: list[Block], state: WorldState) -> None:
        """Follower-side append of already verified blocks plus their post-state."""
        if not new_blocks:
            return
        with self._lock:
            expected = self._blocks[-1].height + 1 if self._blocks else 0
            if new_blocks[0].height != expected:
                raise NodeError(f"adopt out of order: got {new_blocks[0].height}, want {expected}")
            self._blocks = self._blocks + tuple(new_blocks)
            self._state = state
            self._pool_state = state
            for block in new_blocks:
                self._persist_block(block)

    # -- reads ---------------------------------------------------------------

    def verify_on_disk(self) -> VerificationReport:
        """Audit what is actually persisted, not the in-memory copies."""
        try:
            _, blocks = load_chain_dir(self.data_dir, expected=self.chain_config)
        except Exception as exc:  # unparseable files are a failed audit, not a crash
            logger.warning("chain files unreadable: %s", exc)
            return VerificationReport(passed=False, checks=[])
        return verify_chain(blocks, self.chain_config)

    def permitted_blob(self, state: WorldState, requester: str, key: str) -> Decision:
        """A blob is readable through any on-chain context that references it."""
        if requester not in state.identities:
            return Decision(False, "unknown-identity")
        referenced = False
        for contract in state.contracts.values():
            if any(e["storage_key"] == key for e in contract["data_index"]):
                referenced = True
                decision = check_permission(state, requester, DataResource(contract["owner"], key))
                if decision.allowed:
                    return decision
            for report_id, records in contract["reports"].items():
                if any(r["storage_key"] == key for r in records):
                    referenced = True
                    decision = check_permission(state, requester, ReportResource(report_id))
                    if decision.allowed:
                        return decision
        if not referenced:
            return Decision(False, "unreferenced-storage-key")
        return Decision(False, "no-grant")

    # -- lifecycle -------------------------------------------------------------

    def start_sequencer_loop(self) -> None:
        def loop() -> None:
            interval = self.chain_config.block_interval_ms / 1000.0
            while not self._stop.wait(interval):
                try:
                    self.tick()
                except Exception:
                    logger.exception("block production failed")

        thread = threading.Thread(target=loop, name="sequencer-tick", daemon=True)
        thread.start()
        self._threads.append(thread)

    def start_follower_loop(self, transport) -> None:
        """Poll the sequencer, verify and adopt blocks; alarms accumulate."""
        from .replication import SyncCursor, TransportError, sync_step

        def loop() -> None:
            poll = self.chain_config.block_interval_ms / 1000.0 / 2
            backoff = poll
            cursor = SyncCursor(next_height=len(self.snapshot()[0]))
            while not self._stop.wait(backoff):
                blocks, state = self.snapshot()
                mutable = list(blocks)
                try:
                    appended, state, cursor, alarms = sync_step(
                        mutable, state, cursor, transport, self.chain_config
                    )
                    self.alarms.extend(alarms)
                    self.adopt_blocks(appended, state)
                    backoff = poll
                except TransportError:
                    backoff = min(backoff * 2, 5.0)

        thread = threading.Thread(target=loop, name="follower-sync", daemon=True)
        thread.start()
        self._threads.append(thread)

    def stop(self) -> None:
        self._stop.set()
        for thread in self._threads:
            thread.join(timeout=5)


def load_chain_dir(
    data_dir: str | Path, expected: Optional[ChainConfig] = None
) -> tuple[ChainConfig, list[Block]]:
    data_dir = Path(data_dir)
    index_path = data_dir / "chain.json"
    if not index_path.exists():
        raise NodeError(f"no chain index at {index_path}")
    index = canonical_loads(index_path.read_bytes())
    config = ChainConfig(
        chain_id=index["chain_id"],
        sequencer=index["sequencer"],
        sequencer_public_key=index["sequencer_public_key"],
        block_interval_ms=int(index["block_interval_ms"]),
    )
    if expected is not None and (
        expected.chain_id != config.chain_id or expected.sequencer != config.sequencer
    ):
        raise NodeError("chain index does not match the configured chain")
    blocks = []
    for height in range(int(index["head_height"]) + 1):
        path = data_dir / "blocks" / f"{height:010d}.json"
        blocks.append(Block.from_record(canonical_loads(path.read_bytes())))
    return config, blocks


# -- signed reads ----------------------------------------------------------------


def read_request_digest(requester: str, path: str, issued_at: int) -> bytes:
    return crypto.hash_canonical([requester, path, issued_at])


def build_read_header(keypair: crypto.KeyPair, path: str, issued_at: Optional[int] = None) -> str:
    issued = issued_at if issued_at is not None else now_ms()
    record = {
        "requester": keypair.address,
        "path": path,
        "issued_at": issued,
        "signature": crypto.sign(keypair.seed, read_request_digest(keypair.address, path, issued)).hex(),
    }
    return canonical_bytes(record).decode("utf-8")


@dataclass
class ReadAuth:
    requester: str = ""
    status: int = 401
    reason: str = ""

    @property
    def ok(self) -> bool:
        return self.status == 200


def authenticate_read(header: Optional[str], path: str, state: WorldState, clock_ms: int) -> ReadAuth:
    if not header:
        return ReadAuth(status=401, reason="missing-signed-read")
    try:
        record = canonical_loads(header)
        requester = record["requester"]
        signed_path = record["path"]
        issued_at = int(record["issued_at"])
        signature = bytes.fromhex(record["signature"])
    except Exception:
        return ReadAuth(status=401, reason="malformed-signed-read")
    if signed_path != path:
        return ReadAuth(status=401, reason="path-mismatch")
    if abs(clock_ms - issued_at) > READ_FRESHNESS_MS:
        return ReadAuth(status=401, reason="stale-timestamp")
    identity = state.identities.get(requester)
    if identity is None:
        return ReadAuth(requester=requester, status=403, reason="unknown-identity")
    if not crypto.verify(
        bytes.fromhex(identity["public_key"]),
        read_request_digest(requester, signed_path, issued_at),
        signature,
    ):
        return ReadAuth(requester=requester, status=401, reason="bad-signature")
    return ReadAuth(requester=requester, status=200)


# -- HTTP layer ----------------------------------------------------------------


class _Handler(BaseHTTPRequestHandler):
    node: LedgerNode  # set by server factory
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt: str, *args) -> None:
        logger.debug("http %s", fmt % args)

    # helpers

    def _send(self, status: int, body: bytes, content_type: str = "application/json") -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_record(self, status: int, record) -> None:
        self._send(status, canonical_bytes(record))

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length", "0"))
        return self.rfile.read(length) if length else b""

    # routes

    def do_POST(self) -> None:  # noqa: N802  (http.server naming)
        try:
            parsed = urlparse(self.path)
            if parsed.path == "/tx":
                self._post_tx()
            elif parsed.path == "/blob":
                self._post_blob()
            else:
                self._send_record(404, {"error": "unknown-endpoint"})
        except Exception:
            logger.exception("POST %s failed", self.path)
            self._send_record(500, {"error": "internal"})

    def do_GET(self) -> None:  # noqa: N802
        try:
            parsed = urlparse(self.path)
            parts = [p for p in parsed.path.split("/") if p]
            query = parse_qs(parsed.query)
            if parsed.path == "/verify":
                self._send_record(200, self.node.verify_on_disk().to_record())
            elif parts[:1] == ["blocks"] and len(parts) == 1:
                self._get_blocks(query)
            elif parts[:1] == ["blocks"] and len(parts) == 2:
                self._get_block(parts[1])
            elif parts[:1] == ["state"] and len(parts) == 3:
                self._get_state(parts[1], parts[2])
            elif parts[:1] == ["report"] and len(parts) == 2:
                self._get_report(parsed.path, parts[1])
            elif parts[:1] == ["blob"] and len(parts) == 2:
                self._get_blob(parsed.path, parts[1])
            else:
                self._send_record(404, {"error": "unknown-endpoint"})
        except Exception:
            logger.exception("GET %s failed", self.path)
            self._send_record(500, {"error": "internal"})

    def _post_tx(self) -> None:
        if self.node.mode != MODE_SEQUENCER:
            target = self.node.sequencer_endpoint.rstrip("/") + "/tx"
            self.send_response(307)
            self.send_header("Location", target)
            body = canonical_bytes({"error": "redirect-to-sequencer", "sequencer": target})
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
            return
        try:
            tx = canonical_loads(self._body())
        except Exception:
            self._send_record(400, {"accepted": False, "reason": "unparseable-body"})
            return
        self._send_record(200, self.node.submit_tx(tx))

    def _post_blob(self) -> None:
        blob = self._body()
        try:
            key = self.node.store.put(blob)
        except BlobTooLarge:
            self._send_record(413, {"error": "blob-too-large", "limit": self.node.store.max_bytes})
            return
        self._send_record(200, {"storage_key": key})

    def _get_blocks(self, query: dict) -> None:
        blocks, _ = self.node.snapshot()
        try:
            start = int(query.get("from", ["0"])[0])
            limit = min(int(query.get("limit", [str(BLOCK_FETCH_LIMIT)])[0]), BLOCK_FETCH_LIMIT)
        except ValueError:
            self._send_record(400, {"error": "bad-query"})
            return
        batch = [b.to_record() for b in blocks[max(start, 0) : max(start, 0) + limit]]
        head = blocks[-1] if blocks else None
        self._send_record(
            200,
            {
                "blocks": batch,
                "head_height": head.height if head else -1,
                "head_hash": head.block_hash if head else "",
            },
        )

    def _get_block(self, height_text: str) -> None:
        blocks, _ = self.node.snapshot()
        try:
            height = int(height_text)
        except ValueError:
            self._send_record(400, {"error": "bad-height"})
            return
        if height < 0 or height >= len(blocks):
            self._send_record(404, {"error": "unknown-height"})
            return
        self._send_record(200, blocks[height].to_record())

    def _get_state(self, kind: str, addr: str) -> None:
        _, state = self.node.snapshot()
        if kind == "identity":
            record = state.identities.get(addr)
        elif kind == "contract":
            record = state.contracts.get(addr)
        else:
            record = None
        if record is None:
            self._send_record(404, {"error": "not-found"})
            return
        self._send_record(200, record)

    def _get_report(self, path: str, report_id: str) -> None:
        _, state = self.node.snapshot()
        auth = authenticate_read(self.headers.get("X-Signed-Read"), path, state, now_ms())
        if not auth.ok:
            self._send_record(auth.status, {"error": auth.reason})
            return
        decision = check_permission(state, auth.requester, ReportResource(report_id))
        if not decision.allowed:
            status = 404 if decision.reason == "unknown-report" else 403
            self._send_record(status, {"error": decision.reason})
            return
        owner = None
        records = []
        for contract in state.contracts.values():
            if report_id in contract["reports"]:
                owner = contract["owner"]
                for record in contract["reports"][report_id]:
                    filtered = dict(record)
                    wrapped = record["wrapped_keys"].get(auth.requester)
                    filtered["wrapped_keys"] = {auth.requester: wrapped} if wrapped else {}
                    records.append(filtered)
        self._send_record(200, {"report_id": report_id, "owner": owner, "records": records})

    def _get_blob(self, path: str, key: str) -> None:
        _, state = self.node.snapshot()
        auth = authenticate_read(self.headers.get("X-Signed-Read"), path, state, now_ms())
        if not auth.ok:
            self._send_record(auth.status, {"error": auth.reason})
            return
        decision = self.node.permitted_blob(state, auth.requester, key)
        if not decision.allowed:
            self._send_record(403, {"error": decision.reason})
            return
        try:
            blob = self.node.store.get(key)
        except BlobNotFound:
            self._send_record(404, {"error": "blob-not-found"})
            return
        except BlobCorrupt:
            self._send_record(500, {"error": "integrity-error"})
            return
        self._send(200, blob, content_type="application/octet-stream")


class NodeServer:
    """HTTP front plus the background production / sync machinery."""

    def __init__(self, node: LedgerNode, host: str = "127.0.0.1", port: int = 0):
        handler = type("BoundHandler", (_Handler,), {"node": node})
        self.node = node
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.host, self.port = self.httpd.server_address[:2]
        self.endpoint = f"http://{self.host}:{self.port}"
        self._thread: Optional[threading.Thread] = None

    def start(self) -> "NodeServer":
        self._thread = threading.Thread(target=self.httpd.serve_forever, name="http", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.node.stop()
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)
