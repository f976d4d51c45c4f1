"""Append-only hash-chained blocks with deterministic replay.

One authorized sequencer seals blocks; every block embeds the digest of
the post-state so followers and auditors can detect divergence by
re-executing the transaction log. The block hash covers every field
including the proposer signature, and each block links to its parent's
hash, so any byte-level mutation is detectable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from . import crypto
from .contracts import WorldState, apply_transaction, sender_public_key
from .crypto import hash_canonical
from .transactions import ROLES, build_register, tx_digest, verify_signature

logger = logging.getLogger(__name__)

GENESIS_PREV_HASH = "00" * 32


class ChainError(Exception):
    """Base error for chain construction."""


class ConfigError(ChainError):
    pass


class AuthorityError(ChainError):
    """Proposer is not the configured sequencer."""


class EmptyBlockError(ChainError):
    """No transaction survived validation; the interval is skipped."""


class ReplayDivergence(ChainError):
    def __init__(self, height: int, detail: str):
        super().__init__(f"replay divergence at height {height}: {detail}")
        self.height = height
        self.detail = detail


@dataclass(frozen=True)
class ChainConfig:
    chain_id: str
    sequencer: str
    sequencer_public_key: str
    block_interval_ms: int = 1000

    def to_record(self) -> dict:
        return {
            "chain_id": self.chain_id,
            "sequencer": self.sequencer,
            "sequencer_public_key": self.sequencer_public_key,
            "block_interval_ms": self.block_interval_ms,
        }

    @classmethod
    def from_record(cls, record: dict) -> "ChainConfig":
        return cls(
            chain_id=record["chain_id"],
            sequencer=record["sequencer"],
            sequencer_public_key=record["sequencer_public_key"],
            block_interval_ms=int(record["block_interval_ms"]),
        )


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: str
    timestamp: int
    txs: tuple
    state_root: str
    proposer: str
    proposer_sig: str
    block_hash: str

    def header_record(self) -> dict:
        return {
            "height": self.height,
            "prev_hash": self.prev_hash,
            "timestamp": self.timestamp,
            "txs": list(self.txs),
            "state_root": self.state_root,
            "proposer": self.proposer,
        }

    def to_record(self) -> dict:
        record = self.header_record()
        record["proposer_sig"] = self.proposer_sig
        record["block_hash"] = self.block_hash
        return record

    @classmethod
    def from_record(cls, record: dict) -> "Block":
        try:
            return cls(
                height=int(record["height"]),
                prev_hash=record["prev_hash"],
                timestamp=int(record["timestamp"]),
                txs=tuple(record["txs"]),
                state_root=record["state_root"],
                proposer=record["proposer"],
                proposer_sig=record["proposer_sig"],
                block_hash=record["block_hash"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ChainError(f"malformed block record: {exc}") from exc


def _signed_record(header: dict, proposer_sig: str) -> dict:
    record = dict(header)
    record["proposer_sig"] = proposer_sig
    return record


def _finish_block(header: dict, proposer_keypair: crypto.KeyPair) -> Block:
    header_digest = hash_canonical(header)
    proposer_sig = crypto.sign(proposer_keypair.seed, header_digest).hex()
    block_hash = hash_canonical(_signed_record(header, proposer_sig)).hex()
    return Block(
        height=header["height"],
        prev_hash=header["prev_hash"],
        timestamp=header["timestamp"],
        txs=tuple(header["txs"]),
        state_root=header["state_root"],
        proposer=header["proposer"],
        proposer_sig=proposer_sig,
        block_hash=block_hash,
    )


@dataclass(frozen=True)
class BootstrapIdentity:
    keypair: crypto.KeyPair
    role: str
    profile_hash: str


def create_genesis(
    config: ChainConfig,
    bootstrap_identities: Sequence[BootstrapIdentity],
    timestamp: int,
) -> Block:
    """Height-0 block carrying self-signed registrations for the bootstrap set."""
    if not crypto.is_address(config.sequencer):
        raise ConfigError("config.sequencer is not an address")
    seq_key = bytes.fromhex(config.sequencer_public_key)
    if crypto.derive_address(seq_key) != config.sequencer:
        raise ConfigError("sequencer public key does not match sequencer address")

    addresses = [b.keypair.address for b in bootstrap_identities]
    if len(set(addresses)) != len(addresses):
        raise ConfigError("duplicate bootstrap addresses")
    for b in bootstrap_identities:
        if b.role not in ROLES:
            raise ConfigError(f"bootstrap identity {b.keypair.address} has unknown role {b.role!r}")

    txs = [build_register(b.keypair, b.role, b.profile_hash, nonce=0) for b in bootstrap_identities]
    state = WorldState()
    for tx in txs:
        state, outcome = apply_transaction(state, tx, timestamp)
        if not outcome.accepted:
            raise ConfigError(f"bootstrap register rejected: {outcome.reason}")

    sequencer_keypair = None
    for b in bootstrap_identities:
        if b.keypair.address == config.sequencer:
            sequencer_keypair = b.keypair
    if sequencer_keypair is None:
        raise ConfigError("bootstrap identities must include the sequencer")

    header = {
        "height": 0,
        "prev_hash": GENESIS_PREV_HASH,
        "timestamp": timestamp,
        "txs": txs,
        "state_root": state.state_root(),
        "proposer": config.sequencer,
    }
    return _finish_block(header, sequencer_keypair)


def seal_block(
    parent: Block,
    state: WorldState,
    txs: Iterable[dict],
    proposer_keypair: crypto.KeyPair,
    timestamp: int,
    config: ChainConfig,
) -> tuple[Block, WorldState]:
    """Apply txs in order on top of parent state and seal the accepted ones.

    Invalid transactions are rejected individually and logged, never
    aborting the block. Raises EmptyBlockError when nothing survives.
    """
    if proposer_keypair.address != config.sequencer:
        raise AuthorityError("proposer is not the configured sequencer")

    # proposer-supplied clock, clamped so chain time never runs backwards
    timestamp = max(int(timestamp), parent.timestamp)

    accepted: list[dict] = []
    for tx in txs:
        state, outcome = apply_transaction(state, tx, timestamp)
        if outcome.accepted:
            accepted.append(tx)
        else:
            logger.info(
                "tx %s rejected at height %d: %s",
                tx_digest(tx) if isinstance(tx, dict) else "<malformed>",
                parent.height + 1,
                outcome.reason,
            )
    if not accepted:
        raise EmptyBlockError("no transaction accepted")

    header = {
        "height": parent.height + 1,
        "prev_hash": parent.block_hash,
        "timestamp": timestamp,
        "txs": accepted,
        "state_root": state.state_root(),
        "proposer": proposer_keypair.address,
    }
    return _finish_block(header, proposer_keypair), state


def apply_block(state: WorldState, block: Block) -> WorldState:
    """Re-execute a block's txs; raises ReplayDivergence on any mismatch."""
    for tx in block.txs:
        state, outcome = apply_transaction(state, tx, block.timestamp)
        if not outcome.accepted:
            raise ReplayDivergence(block.height, f"embedded tx rejected: {outcome.reason}")
    root = state.state_root()
    if root != block.state_root:
        raise ReplayDivergence(block.height, "state root mismatch")
    return state


def replay(blocks: Sequence[Block]) -> WorldState:
    """Deterministic re-execution of the whole chain from genesis."""
    if not blocks:
        return WorldState()
    state = WorldState()
    for block in blocks:
        state = apply_block(state, block)
    return state


# -- verification ---------------------------------------------------------------


@dataclass
class BlockCheck:
    height: int
    hash_ok: bool = True
    linkage_ok: bool = True
    proposer_ok: bool = True
    tx_sigs_ok: bool = True
    state_ok: bool = True
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (
            self.hash_ok
            and self.linkage_ok
            and self.proposer_ok
            and self.tx_sigs_ok
            and self.state_ok
        )

    def to_record(self) -> dict:
        return {
            "height": self.height,
            "hash_ok": self.hash_ok,
            "linkage_ok": self.linkage_ok,
            "proposer_ok": self.proposer_ok,
            "tx_sigs_ok": self.tx_sigs_ok,
            "state_ok": self.state_ok,
            "notes": self.notes,
        }


@dataclass
class VerificationReport:
    passed: bool
    checks: list

    def failing_heights(self) -> list:
        return [c.height for c in self.checks if not c.ok]

    def to_record(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [c.to_record() for c in self.checks],
            "failing_heights": self.failing_heights(),
        }


def verify_block_standalone(
    block: Block,
    parent: Optional[Block],
    state: WorldState,
    config: ChainConfig,
    trusted_genesis_hash: Optional[str] = None,
    ancestor_tainted: bool = False,
) -> tuple[BlockCheck, WorldState]:
    """All integrity checks for one block given its parent and pre-state.

    Returns the check plus the post-state from re-execution (the pre-state
    unchanged when re-execution diverges).
    """
    check = BlockCheck(height=block.height)

    header = block.header_record()
    recomputed = hash_canonical(_signed_record(header, block.proposer_sig)).hex()
    if recomputed != block.block_hash:
        check.hash_ok = False
        check.notes.append("block hash does not recompute")

    if parent is None:
        if block.height != 0:
            check.linkage_ok = False
            check.notes.append("chain does not start at height 0")
        if block.prev_hash != GENESIS_PREV_HASH:
            check.linkage_ok = False
            check.notes.append("genesis prev_hash is not all zeros")
        if trusted_genesis_hash is not None and block.block_hash != trusted_genesis_hash:
            check.linkage_ok = False
            check.notes.append("genesis hash differs from trusted value")
    else:
        if ancestor_tainted:
            check.linkage_ok = False
            check.notes.append("ancestor failed verification")
        if block.height != parent.height + 1:
            check.linkage_ok = False
            check.notes.append("height is not parent+1")
        if block.prev_hash != hash_canonical(
            _signed_record(parent.header_record(), parent.proposer_sig)
        ).hex():
            check.linkage_ok = False
            check.notes.append("prev_hash does not match parent")
        if block.timestamp < parent.timestamp:
            check.linkage_ok = False
            check.notes.append("timestamp decreased")

    if block.proposer != config.sequencer:
        check.proposer_ok = False
        check.notes.append("proposer is not the sequencer")
    else:
        header_digest = hash_canonical(header)
        try:
            sig = bytes.fromhex(block.proposer_sig)
        except (TypeError, ValueError):
            sig = b""
        if not crypto.verify(bytes.fromhex(config.sequencer_public_key), header_digest, sig):
            check.proposer_ok = False
            check.notes.append("proposer signature invalid")

    probe_state = state
    for i, tx in enumerate(block.txs):
        key = sender_public_key(probe_state, tx) if isinstance(tx, dict) else None
        if key is None or not verify_signature(tx, key):
            check.tx_sigs_ok = False
            check.notes.append(f"tx {i} signature invalid")
            break
        probe_state, outcome = apply_transaction(probe_state, tx, block.timestamp)
        if not outcome.accepted:
            check.state_ok = False
            check.notes.append(f"tx {i} rejected on re-execution: {outcome.reason}")
            break

    if check.tx_sigs_ok and check.state_ok:
        if probe_state.state_root() != block.state_root:
            check.state_ok = False
            check.notes.append("state root mismatch on re-execution")

    return check, (probe_state if check.tx_sigs_ok and check.state_ok else state)


def verify_chain(
    blocks: Sequence[Block],
    config: ChainConfig,
    trusted_genesis_hash: Optional[str] = None,
) -> VerificationReport:
    """Full audit: hashes, linkage, authority, tx signatures, re-execution."""
    checks: list[BlockCheck] = []
    state = WorldState()
    parent: Optional[Block] = None
    tainted = False
    for block in blocks:
        check, state = verify_block_standalone(
            block, parent, state, config, trusted_genesis_hash, ancestor_tainted=tainted
        )
        checks.append(check)
        tainted = tainted or not check.ok
        parent = block
    passed = bool(blocks) and all(c.ok for c in checks)
    return VerificationReport(passed=passed, checks=checks)
