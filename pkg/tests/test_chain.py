"""Block structure, sealing, verification and deterministic replay."""

import random

import pytest

from conftest import keypair_named
from neuroledger import crypto
from neuroledger.chain import (
    AuthorityError,
    Block,
    BootstrapIdentity,
    ChainConfig,
    ConfigError,
    EmptyBlockError,
    GENESIS_PREV_HASH,
    ReplayDivergence,
    create_genesis,
    replay,
    seal_block,
    verify_chain,
)
from neuroledger.contracts import WorldState
from neuroledger.scenario import build_chain
from neuroledger.transactions import build_register, build_tx
from support import reference_hash

T0 = 1_700_000_000_000

# frozen from the reference encoder + external hash over the fixture below
GOLDEN_GENESIS_HASH = "02044585eb217d64cce2ee39553680f9c726ae3c7be4a5125da06d58349c1b88"


def fixture_parts():
    operator = crypto.generate_keypair(crypto.sha256(b"golden-operator"))
    worker = crypto.generate_keypair(crypto.sha256(b"golden-worker"))
    config = ChainConfig(
        chain_id="golden-fixture",
        sequencer=operator.address,
        sequencer_public_key=operator.public_key.hex(),
    )
    bootstrap = [
        BootstrapIdentity(operator, "ProjectManager", "11" * 32),
        BootstrapIdentity(worker, "Worker", "22" * 32),
    ]
    return operator, worker, config, bootstrap


class TestGenesis:
    def test_conventions(self):
        _, _, config, bootstrap = fixture_parts()
        genesis = create_genesis(config, bootstrap, T0)
        assert genesis.height == 0
        assert genesis.prev_hash == GENESIS_PREV_HASH
        assert len(genesis.txs) == 2

    def test_deterministic(self):
        _, _, config, bootstrap = fixture_parts()
        a = create_genesis(config, bootstrap, T0)
        b = create_genesis(config, bootstrap, T0)
        assert a.block_hash == b.block_hash

    def test_golden_hash(self):
        _, _, config, bootstrap = fixture_parts()
        genesis = create_genesis(config, bootstrap, T0)
        assert genesis.block_hash == GOLDEN_GENESIS_HASH
        # the frozen value itself re-derives through the reference path
        record = genesis.to_record()
        assert reference_hash({k: v for k, v in record.items() if k != "block_hash"}) == GOLDEN_GENESIS_HASH

    def test_duplicate_bootstrap_rejected(self):
        operator, _, config, _ = fixture_parts()
        dup = [
            BootstrapIdentity(operator, "ProjectManager", "11" * 32),
            BootstrapIdentity(operator, "Worker", "22" * 32),
        ]
        with pytest.raises(ConfigError):
            create_genesis(config, dup, T0)

    def test_sequencer_must_be_bootstrapped(self):
        _, worker, config, _ = fixture_parts()
        with pytest.raises(ConfigError):
            create_genesis(config, [BootstrapIdentity(worker, "Worker", "22" * 32)], T0)

    def test_replay_of_genesis_only_chain(self):
        operator, worker, config, bootstrap = fixture_parts()
        genesis = create_genesis(config, bootstrap, T0)
        state = replay([genesis])
        assert operator.address in state.identities
        assert worker.address in state.identities
        assert "contract_address" in state.identities[worker.address]
        assert "contract_address" not in state.identities[operator.address]


def scaffold():
    operator, worker, config, bootstrap = fixture_parts()
    genesis = create_genesis(config, bootstrap, T0)
    state = replay([genesis])
    provider = keypair_named("chain-provider")
    return operator, worker, provider, config, genesis, state


class TestSealBlock:
    def test_links_to_parent(self):
        operator, worker, provider, config, genesis, state = scaffold()
        txs = [build_register(provider, "BciProvider", "00" * 32)]
        block, state2 = seal_block(genesis, state, txs, operator, T0 + 1000, config)
        assert block.height == 1
        assert block.prev_hash == genesis.block_hash
        assert block.state_root == state2.state_root()

    def test_invalid_signature_tx_filtered(self):
        operator, worker, provider, config, genesis, state = scaffold()
        good = build_register(provider, "BciProvider", "00" * 32)
        forged = build_tx(worker, "GrantAccess", 1, {"grantee": provider.address})
        forged["signature"] = "11" * 64
        block, _ = seal_block(genesis, state, [good, forged], operator, T0 + 1000, config)
        assert list(block.txs) == [good]

    def test_zero_accepted_raises_empty(self):
        operator, worker, provider, config, genesis, state = scaffold()
        forged = build_tx(worker, "GrantAccess", 1, {"grantee": provider.address})
        forged["signature"] = "11" * 64
        with pytest.raises(EmptyBlockError):
            seal_block(genesis, state, [forged], operator, T0 + 1000, config)

    def test_wrong_proposer_is_authority_error(self):
        operator, worker, provider, config, genesis, state = scaffold()
        txs = [build_register(provider, "BciProvider", "00" * 32)]
        with pytest.raises(AuthorityError):
            seal_block(genesis, state, txs, worker, T0 + 1000, config)

    def test_reseal_same_txs_same_root(self):
        operator, worker, provider, config, genesis, state = scaffold()
        txs = [build_register(provider, "BciProvider", "00" * 32)]
        a, _ = seal_block(genesis, state, txs, operator, T0 + 1000, config)
        b, _ = seal_block(genesis, state, txs, operator, T0 + 1000, config)
        assert a.block_hash == b.block_hash
        assert a.state_root == b.state_root

    def test_timestamp_clamped_to_parent(self):
        operator, worker, provider, config, genesis, state = scaffold()
        txs = [build_register(provider, "BciProvider", "00" * 32)]
        block, _ = seal_block(genesis, state, txs, operator, T0 - 5000, config)
        assert block.timestamp == genesis.timestamp


class TestVerifyChain:
    def test_untouched_chain_passes(self):
        config, blocks, _ = build_chain(n_blocks=10)
        report = verify_chain(blocks, config)
        assert report.passed
        assert report.failing_heights() == []

    def test_payload_mutation_detected_with_cascade(self):
        config, blocks, _ = build_chain(n_blocks=10)
        record = blocks[5].to_record()
        tx = dict(record["txs"][0])
        payload = dict(tx["payload"])
        key = sorted(payload)[0]
        payload[key] = "tampered"
        tx["payload"] = payload
        record["txs"] = [tx] + record["txs"][1:]
        mutated = blocks[:5] + [Block.from_record(record)] + blocks[6:]
        report = verify_chain(mutated, config)
        assert not report.passed
        by_height = {c.height: c for c in report.checks}
        assert not by_height[5].hash_ok
        assert not by_height[6].linkage_ok  # ancestor taint propagates
        assert all(not by_height[h].linkage_ok for h in range(6, 10))

    def test_forged_proposer_signature_is_authority_failure(self):
        config, blocks, _ = build_chain(n_blocks=10)
        impostor = keypair_named("impostor")
        record = blocks[7].to_record()
        header = {k: record[k] for k in ("height", "prev_hash", "timestamp", "txs", "state_root", "proposer")}
        forged_sig = crypto.sign(impostor.seed, crypto.hash_canonical(header)).hex()
        record["proposer_sig"] = forged_sig
        record["block_hash"] = crypto.hash_canonical({**header, "proposer_sig": forged_sig}).hex()
        mutated = blocks[:7] + [Block.from_record(record)] + blocks[8:]
        report = verify_chain(mutated, config)
        by_height = {c.height: c for c in report.checks}
        assert not by_height[7].proposer_ok
        assert by_height[7].hash_ok  # hash recomputes; the authority check is what fails

    def test_trusted_genesis_hash_mismatch_fails(self):
        config, blocks, _ = build_chain(n_blocks=4)
        report = verify_chain(blocks, config, trusted_genesis_hash="ab" * 32)
        assert not report.passed

    def test_empty_chain_fails(self):
        config, blocks, _ = build_chain(n_blocks=4)
        assert not verify_chain([], config).passed


class TestReplay:
    def test_replay_matches_embedded_roots(self):
        _, blocks, _ = build_chain(n_blocks=12)
        state = replay(blocks)
        assert state.state_root() == blocks[-1].state_root

    def test_replay_twice_identical(self):
        _, blocks, _ = build_chain(n_blocks=12)
        from neuroledger.canonical import canonical_bytes

        a = canonical_bytes(replay(blocks).to_record())
        b = canonical_bytes(replay(blocks).to_record())
        assert a == b

    def test_altered_state_root_diverges_at_height(self):
        _, blocks, _ = build_chain(n_blocks=6)
        record = blocks[2].to_record()
        record["state_root"] = "ee" * 32
        mutated = blocks[:2] + [Block.from_record(record)] + blocks[3:]
        with pytest.raises(ReplayDivergence) as excinfo:
            replay(mutated)
        assert excinfo.value.height == 2

    def test_nonce_monotonicity_across_chain(self):
        _, blocks, _ = build_chain(n_blocks=20)
        last: dict = {}
        for block in blocks:
            for tx in block.txs:
                sender, nonce = tx["sender"], tx["nonce"]
                assert nonce > last.get(sender, -1)
                last[sender] = nonce

    def test_tamper_anywhere_detected(self):
        """Randomized: flip one byte in some serialized block, verify fails."""
        from neuroledger.canonical import canonical_bytes, canonical_loads

        config, blocks, _ = build_chain(n_blocks=8)
        rng = random.Random(31337)
        detected = 0
        trials = 40
        for _ in range(trials):
            target = rng.randrange(len(blocks))
            raw = bytearray(canonical_bytes(blocks[target].to_record()))
            i = rng.randrange(len(raw))
            raw[i] ^= 1 << rng.randrange(8)
            try:
                mutated_block = Block.from_record(canonical_loads(bytes(raw)))
                candidate = blocks[:target] + [mutated_block] + blocks[target + 1 :]
                if not verify_chain(candidate, config).passed:
                    detected += 1
            except Exception:
                detected += 1  # unparseable serialized form is a detected failure
        assert detected == trials
