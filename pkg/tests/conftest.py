import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from neuroledger import crypto
from neuroledger.contracts import WorldState, apply_transaction
from neuroledger.transactions import build_register, build_tx


def keypair_named(label: str) -> crypto.KeyPair:
    return crypto.generate_keypair(crypto.sha256(b"test-seed:" + label.encode()))


@pytest.fixture
def worker():
    return keypair_named("worker")


@pytest.fixture
def provider():
    return keypair_named("provider")


@pytest.fixture
def provider2():
    return keypair_named("provider2")


@pytest.fixture
def manager():
    return keypair_named("manager")


def apply_ok(state: WorldState, tx: dict, block_time: int = 1_000) -> tuple[WorldState, dict]:
    state, outcome = apply_transaction(state, tx, block_time)
    assert outcome.accepted, f"expected acceptance, got {outcome.reason}"
    return state, outcome.info


@pytest.fixture
def registered_state(worker, provider, provider2, manager):
    """Worker + two providers + manager, all registered; no grants yet."""
    state = WorldState()
    profile = crypto.hash_canonical({"n": 1}).hex()
    for kp, role in [
        (worker, "Worker"),
        (provider, "BciProvider"),
        (provider2, "BciProvider"),
        (manager, "ProjectManager"),
    ]:
        state, _ = apply_ok(state, build_register(kp, role, profile, nonce=0))
    return state


def next_nonce(state: WorldState, address: str) -> int:
    return state.nonces.get(address, -1) + 1


def signed(state: WorldState, kp: crypto.KeyPair, tx_type: str, payload: dict) -> dict:
    return build_tx(kp, tx_type, next_nonce(state, kp.address), payload)
