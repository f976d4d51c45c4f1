"""Follower synchronization and the fault-injecting simulation harness.

A follower pulls batches from the sequencer's block endpoint and runs the
full verification stack (linkage, hashes, authority, tx signatures,
re-execution) before appending anything. A block that fails any check is
never appended: the follower halts at that height and emits an alarm.
The same sync_step drives both the HTTP transport and the in-process
simulated transport used for convergence tests.
"""

from __future__ import annotations

import logging
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

from .chain import Block, ChainConfig, verify_block_standalone
from .contracts import WorldState

logger = logging.getLogger(__name__)


class TransportError(Exception):
    """Delivery failed; the caller retries with backoff."""


class Transport(Protocol):
    def fetch_blocks(self, from_height: int) -> list[dict]: ...


@dataclass(frozen=True)
class FaultProfile:
    drop_probability: float = 0.0
    delay_ms: tuple[int, int] = (0, 0)
    duplicate_probability: float = 0.0
    reorder_window: int = 0

    def __post_init__(self) -> None:
        for p in (self.drop_probability, self.duplicate_probability):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} out of range")
        if self.delay_ms[0] > self.delay_ms[1] or self.delay_ms[0] < 0:
            raise ValueError(f"bad delay range {self.delay_ms}")
        if self.reorder_window < 0:
            raise ValueError("reorder window must be non-negative")


@dataclass
class SyncCursor:
    next_height: int = 0
    head_hash: str = ""
    last_verified_state_root: str = ""


class HttpTransport:
    def __init__(self, endpoint: str, timeout: float = 5.0):
        import httpx

        self.endpoint = endpoint.rstrip("/")
        self._http = httpx.Client(base_url=self.endpoint, timeout=timeout)

    def fetch_blocks(self, from_height: int) -> list[dict]:
        import httpx

        from .canonical import canonical_loads

        try:
            response = self._http.get("/blocks", params={"from": str(from_height)})
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise TransportError(str(exc)) from exc
        return canonical_loads(response.content)["blocks"]

    def close(self) -> None:
        self._http.close()


class SimulatedTransport:
    """Wraps a direct block source with drops, delays, duplicates and reorder."""

    def __init__(
        self,
        source: Callable[[int], list[dict]],
        profile: FaultProfile,
        rng: random.Random,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.source = source
        self.profile = profile
        self.rng = rng
        self.sleep = sleep

    def fetch_blocks(self, from_height: int) -> list[dict]:
        lo, hi = self.profile.delay_ms
        if hi > 0:
            self.sleep(self.rng.uniform(lo, hi) / 1000.0)
        if self.rng.random() < self.profile.drop_probability:
            raise TransportError("simulated drop")
        batch = list(self.source(from_height))
        if self.profile.duplicate_probability > 0:
            duplicated = []
            for record in batch:
                duplicated.append(record)
                if self.rng.random() < self.profile.duplicate_probability:
                    duplicated.append(record)
            batch = duplicated
        window = self.profile.reorder_window
        if window > 1 and len(batch) > 1:
            for i in range(0, len(batch), window):
                chunk = batch[i : i + window]
                self.rng.shuffle(chunk)
                batch[i : i + window] = chunk
        return batch


def sync_step(
    blocks: list[Block],
    state: WorldState,
    cursor: SyncCursor,
    transport: Transport,
    config: ChainConfig,
    trusted_genesis_hash: Optional[str] = None,
    on_alarm: Optional[Callable[[str], None]] = None,
) -> tuple[list[Block], WorldState, SyncCursor, list[str]]:
    """One fetch-verify-append round; never appends an unverified block.

    Returns the appended blocks, the advanced state and cursor, and any
    alarms raised. Transport failures propagate for the caller to retry.
    """
    alarms: list[str] = []

    def alarm(message: str) -> None:
        alarms.append(message)
        logger.debug("sync alarm: %s", message)
        if on_alarm is not None:
            on_alarm(message)

    records = transport.fetch_blocks(cursor.next_height)
    by_height: dict[int, dict] = {}
    for record in records:
        height = record.get("height")
        if isinstance(height, int) and height >= cursor.next_height:
            by_height.setdefault(height, record)  # duplicates ignored

    appended: list[Block] = []
    while cursor.next_height in by_height:
        record = by_height.pop(cursor.next_height)
        try:
            block = Block.from_record(record)
        except Exception as exc:
            alarm(f"unparseable block at height {cursor.next_height}: {exc}")
            break
        parent = blocks[-1] if blocks else None
        check, new_state = verify_block_standalone(
            block,
            parent,
            state,
            config,
            trusted_genesis_hash if block.height == 0 else None,
        )
        if not check.ok:
            alarm(f"block {block.height} failed verification: {'; '.join(check.notes)}")
            break
        blocks.append(block)
        appended.append(block)
        state = new_state
        cursor = SyncCursor(
            next_height=block.height + 1,
            head_hash=block.block_hash,
            last_verified_state_root=block.state_root,
        )
    return appended, state, cursor, alarms


class Follower:
    """Sequential sync loop over its own verified replica."""

    def __init__(
        self,
        follower_id: str,
        config: ChainConfig,
        transport: Transport,
        trusted_genesis_hash: Optional[str] = None,
        poll_interval_s: float = 0.02,
        backoff_cap_s: float = 0.5,
    ):
        self.follower_id = follower_id
        self.config = config
        self.transport = transport
        self.trusted_genesis_hash = trusted_genesis_hash
        self.poll_interval_s = poll_interval_s
        self.backoff_cap_s = backoff_cap_s
        self.blocks: list[Block] = []
        self.state = WorldState()
        self.cursor = SyncCursor()
        self.alarms: list[str] = []
        self.heights_over_time: list[tuple[int, int]] = []
        self._started = time.monotonic()

    @property
    def head_hash(self) -> str:
        return self.blocks[-1].block_hash if self.blocks else ""

    @property
    def height(self) -> int:
        return self.blocks[-1].height if self.blocks else -1

    def step(self) -> int:
        appended, self.state, self.cursor, alarms = sync_step(
            self.blocks,
            self.state,
            self.cursor,
            self.transport,
            self.config,
            self.trusted_genesis_hash,
        )
        for message in alarms:
            # a stuck follower re-sees the same bad block every poll; log once
            if not self.alarms or self.alarms[-1] != message:
                logger.warning("%s alarm: %s", self.follower_id, message)
            self.alarms.append(message)
        if appended:
            elapsed_ms = int((time.monotonic() - self._started) * 1000)
            self.heights_over_time.append((elapsed_ms, self.height))
        return len(appended)

    def run(self, stop: threading.Event) -> None:
        backoff = self.poll_interval_s
        while not stop.is_set():
            try:
                self.step()
                backoff = self.poll_interval_s
            except TransportError:
                backoff = min(backoff * 2, self.backoff_cap_s)
            stop.wait(backoff)


@dataclass
class ConvergenceReport:
    converged: bool
    sequencer_head: str
    sequencer_height: int
    seconds_to_converge: float
    followers: list = field(default_factory=list)

    @property
    def total_alarms(self) -> int:
        return sum(f["alarms"] for f in self.followers)

    def to_record(self) -> dict:
        return {
            "converged": self.converged,
            "sequencer_head": self.sequencer_head,
            "sequencer_height": self.sequencer_height,
            "seconds_to_converge_ms": int(self.seconds_to_converge * 1000),
            "followers": self.followers,
            "total_alarms": self.total_alarms,
        }


def run_simulation(
    n_followers: int,
    fault_profile: FaultProfile,
    scenario_blocks: list[Block],
    config: ChainConfig,
    deadline_s: float = 10.0,
    seed: int = 0,
    production_interval_s: float = 0.01,
    corrupt_height: Optional[int] = None,
) -> ConvergenceReport:
    """Publish a scenario chain block by block and sync followers against it.

    corrupt_height, when set, serves a tampered copy of that block to every
    follower; they must all alarm and none may append it.
    """
    published: list[dict] = []
    publish_lock = threading.Lock()

    records = [b.to_record() for b in scenario_blocks]
    if corrupt_height is not None:
        import copy

        record = copy.deepcopy(records[corrupt_height])
        target = record["txs"][0]["payload"]
        key = sorted(target.keys())[0]
        target[key] = "tampered-" + str(target[key])
        records[corrupt_height] = record

    def source(from_height: int) -> list[dict]:
        with publish_lock:
            return published[from_height:]

    followers = []
    master = random.Random(seed)
    for i in range(n_followers):
        transport = SimulatedTransport(source, fault_profile, random.Random(master.getrandbits(64)))
        followers.append(Follower(f"follower-{i}", config, transport))

    stop = threading.Event()
    threads = [
        threading.Thread(target=f.run, args=(stop,), name=f.follower_id, daemon=True)
        for f in followers
    ]
    for t in threads:
        t.start()

    for record in records:
        with publish_lock:
            published.append(record)
        time.sleep(production_interval_s)

    quiescent_at = time.monotonic()
    target_head = scenario_blocks[-1].block_hash
    converged_at = None
    while time.monotonic() - quiescent_at < deadline_s:
        if all(f.head_hash == target_head for f in followers):
            converged_at = time.monotonic()
            break
        time.sleep(0.01)
    stop.set()
    for t in threads:
        t.join(timeout=5)

    return ConvergenceReport(
        converged=converged_at is not None,
        sequencer_head=target_head,
        sequencer_height=scenario_blocks[-1].height,
        seconds_to_converge=(converged_at - quiescent_at) if converged_at else deadline_s,
        followers=[
            {
                "id": f.follower_id,
                "head_hash": f.head_hash,
                "height": f.height,
                "alarms": len(f.alarms),
                "heights_over_time": [list(pair) for pair in f.heights_over_time],
            }
            for f in followers
        ],
    )
