"""Node HTTP API: pool admission, production, reads, signed reads, blobs."""

import hashlib
import time

import httpx
import pytest

from conftest import keypair_named
from neuroledger import crypto, scenario
from neuroledger.canonical import canonical_bytes, canonical_loads
from neuroledger.client import DeniedError, NodeClient
from neuroledger.node import (
    LedgerNode,
    MODE_FOLLOWER,
    NodeServer,
    build_read_header,
    now_ms,
)
from neuroledger.replication import HttpTransport
from neuroledger.transactions import build_register, build_tx

INTERVAL_MS = 50


@pytest.fixture
def sequencer(tmp_path):
    operator = scenario.seeded_keypair("operator")
    node = LedgerNode.bootstrap_sequencer(
        tmp_path / "seq", operator, chain_id="test-chain", block_interval_ms=INTERVAL_MS
    )
    node.start_sequencer_loop()
    server = NodeServer(node).start()
    yield server
    server.stop()


@pytest.fixture
def client(sequencer):
    with NodeClient(sequencer.endpoint) as c:
        yield c


def register_all(client, pairs):
    for kp, role in pairs:
        outcome = client.submit_tx(build_register(kp, role, "00" * 32))
        assert outcome["accepted"], outcome
        client.wait_for_tx(outcome["tx_digest"])


class TestSubmitTx:
    def test_fresh_chain_serves_genesis_only(self, client):
        batch = client.blocks(start=0)
        assert batch["head_height"] == 0
        assert len(batch["blocks"]) == 1
        assert batch["blocks"][0]["height"] == 0

    def test_valid_tx_included_within_two_intervals(self, client):
        worker = keypair_named("node-worker")
        t0 = time.monotonic()
        outcome = client.submit_tx(build_register(worker, "Worker", "00" * 32))
        assert outcome["accepted"]
        client.wait_for_tx(outcome["tx_digest"], timeout_s=2 * INTERVAL_MS / 1000 + 1.0)
        assert time.monotonic() - t0 < 2 * INTERVAL_MS / 1000 + 1.0

    def test_forged_signature_rejected_pool_unchanged(self, client):
        worker = keypair_named("node-worker2")
        tx = build_register(worker, "Worker", "00" * 32)
        tx["signature"] = "00" * 64
        outcome = client.submit_tx(tx)
        assert outcome == {"accepted": False, "tx_digest": outcome["tx_digest"], "reason": "bad-signature"}
        head = client.blocks(start=0)["head_height"]
        time.sleep(3 * INTERVAL_MS / 1000)
        assert client.blocks(start=0)["head_height"] == head

    def test_duplicate_submission_reports_duplicate(self, client):
        worker = keypair_named("node-worker3")
        tx = build_register(worker, "Worker", "00" * 32)
        first = client.submit_tx(tx)
        assert first["accepted"]
        second = client.submit_tx(tx)
        assert second["accepted"] is False
        assert second["reason"] == "duplicate"

    def test_accepted_txs_appear_in_exactly_one_block(self, client):
        pairs = [(keypair_named(f"audit-{i}"), "Worker") for i in range(4)]
        digests = []
        for kp, role in pairs:
            outcome = client.submit_tx(build_register(kp, role, "00" * 32))
            assert outcome["accepted"]
            digests.append(outcome["tx_digest"])
        client.wait_for_tx(digests[-1])
        from neuroledger.transactions import tx_digest

        blocks = client.blocks(start=0)["blocks"]
        seen = [tx_digest(tx) for b in blocks for tx in b["txs"]]
        for digest in digests:
            assert seen.count(digest) == 1


class TestReads:
    def test_block_by_height_and_404(self, client):
        assert client.block(0)["height"] == 0
        assert client.block(999) is None

    def test_identity_and_contract_endpoints(self, client):
        worker = keypair_named("reads-worker")
        outcome = client.submit_tx(build_register(worker, "Worker", "00" * 32))
        client.wait_for_tx(outcome["tx_digest"])
        identity = client.identity(worker.address)
        assert identity["role"] == "Worker"
        contract = client.contract(identity["contract_address"])
        assert contract["owner"] == worker.address
        assert client.identity("0x" + "99" * 20) is None

    def test_query_results_are_byte_stable(self, sequencer, client):
        worker = keypair_named("stable-worker")
        outcome = client.submit_tx(build_register(worker, "Worker", "00" * 32))
        client.wait_for_tx(outcome["tx_digest"])
        url = f"{sequencer.endpoint}/state/identity/{worker.address}"
        with httpx.Client() as raw:
            first = raw.get(url).content
            second = raw.get(url).content
        assert first == second

    def test_verify_endpoint_passes_then_fails_after_disk_mutation(self, sequencer, client):
        worker = keypair_named("verify-worker")
        outcome = client.submit_tx(build_register(worker, "Worker", "00" * 32))
        client.wait_for_tx(outcome["tx_digest"])
        assert client.verify()["passed"]

        path = sequencer.node.data_dir / "blocks" / f"{1:010d}.json"
        raw = bytearray(path.read_bytes())
        marker = raw.find(b'"profile_hash"')
        raw[marker + 20] ^= 0x01
        path.write_bytes(bytes(raw))
        report = client.verify()
        assert not report["passed"]
        assert 1 in report["failing_heights"]


@pytest.fixture
def populated(client):
    """Worker with granted provider, one indexed blob, one report record."""
    worker = keypair_named("pop-worker")
    provider = keypair_named("pop-provider")
    manager = keypair_named("pop-manager")
    stranger = keypair_named("pop-stranger")
    register_all(client, [
        (worker, "Worker"), (provider, "BciProvider"),
        (manager, "ProjectManager"), (stranger, "BciProvider"),
    ])
    outcome = client.submit_tx(build_tx(worker, "GrantAccess", 1, {"grantee": provider.address}))
    client.wait_for_tx(outcome["tx_digest"])

    data_blob = crypto.encrypt_payload(crypto.sha256(b"data key"), b"sensor epoch payload")
    data_key = client.put_blob(data_blob)
    outcome = client.submit_tx(build_tx(worker, "UploadDataIndex", 2,
                                        {"storage_key": data_key, "content_hash": data_key, "meta": "s"}))
    client.wait_for_tx(outcome["tx_digest"])

    outcome = client.submit_tx(build_tx(worker, "CreateAppointment", 3,
                                        {"provider": provider.address, "slot": 42}))
    client.wait_for_tx(outcome["tx_digest"])
    report_id = outcome["report_id"]

    sym = crypto.new_symmetric_key()
    report_blob = crypto.encrypt_payload(sym, b"analysis verdict")
    report_key = client.put_blob(report_blob)
    wrapped = {worker.address: crypto.wrap_key(sym, worker.address, worker.exchange_public).to_record()}
    outcome = client.submit_tx(build_tx(provider, "UpdateReport", 1, {
        "report_id": report_id, "content_hash": report_key, "storage_key": report_key,
        "wrapped_keys": wrapped, "updated_at": 50}))
    client.wait_for_tx(outcome["tx_digest"])
    return {
        "worker": worker, "provider": provider, "manager": manager, "stranger": stranger,
        "data_key": data_key, "data_blob": data_blob, "report_id": report_id,
        "report_key": report_key, "sym": sym,
    }


class TestBlobEndpoints:
    def test_upload_key_is_external_hash(self, client):
        blob = b"some ciphertext to store"
        assert client.put_blob(blob) == hashlib.sha256(blob).hexdigest()

    def test_granted_provider_fetches_then_revoked_403(self, client, populated):
        p = populated
        assert client.blob(p["provider"], p["data_key"]) == p["data_blob"]
        outcome = client.submit_tx(build_tx(p["worker"], "RevokeAccess", 4, {"grantee": p["provider"].address}))
        client.wait_for_tx(outcome["tx_digest"])
        with pytest.raises(DeniedError) as excinfo:
            client.blob(p["provider"], p["data_key"])
        assert excinfo.value.status == 403

    def test_index_and_store_are_decoupled(self, client, populated):
        p = populated
        ghost_key = hashlib.sha256(b"never uploaded").hexdigest()
        outcome = client.submit_tx(build_tx(p["worker"], "UploadDataIndex", 4,
                                            {"storage_key": ghost_key, "content_hash": ghost_key, "meta": ""}))
        assert outcome["accepted"]
        client.wait_for_tx(outcome["tx_digest"])
        with pytest.raises(DeniedError) as excinfo:
            client.blob(p["worker"], ghost_key)
        assert excinfo.value.status == 404

    def test_unreferenced_blob_denied(self, client, populated):
        key = client.put_blob(b"uploaded but never indexed")
        with pytest.raises(DeniedError) as excinfo:
            client.blob(populated["worker"], key)
        assert excinfo.value.status == 403

    def test_oversize_rejected(self, sequencer, client):
        sequencer.node.store.max_bytes = 1024
        try:
            with pytest.raises(DeniedError) as excinfo:
                client.put_blob(b"\x00" * 2048)
            assert excinfo.value.status == 413
        finally:
            sequencer.node.store.max_bytes = 64 * 1024 * 1024


class TestSignedReads:
    def test_report_response_filters_wrapped_keys(self, client, populated):
        p = populated
        view = client.report(p["worker"], p["report_id"])
        assert view["owner"] == p["worker"].address
        record = view["records"][-1]
        assert list(record["wrapped_keys"].keys()) == [p["worker"].address]

    def test_author_sees_no_keys_but_may_read(self, client, populated):
        p = populated
        view = client.report(p["provider"], p["report_id"])
        assert view["records"][-1]["wrapped_keys"] == {}

    def test_unrelated_identity_403_and_no_ciphertext(self, sequencer, client, populated):
        p = populated
        path = f"/report/{p['report_id']}"
        header = build_read_header(p["stranger"], path)
        with httpx.Client() as raw:
            response = raw.get(sequencer.endpoint + path, headers={"X-Signed-Read": header})
        assert response.status_code == 403
        assert canonical_loads(response.content) == {"error": "no-grant"}

    def test_stale_timestamp_401(self, sequencer, client, populated):
        p = populated
        path = f"/report/{p['report_id']}"
        header = build_read_header(p["worker"], path, issued_at=now_ms() - 600_000)
        with httpx.Client() as raw:
            response = raw.get(sequencer.endpoint + path, headers={"X-Signed-Read": header})
        assert response.status_code == 401
        assert canonical_loads(response.content)["error"] == "stale-timestamp"

    def test_missing_header_401(self, sequencer, populated):
        with httpx.Client() as raw:
            response = raw.get(f"{sequencer.endpoint}/report/{populated['report_id']}")
        assert response.status_code == 401

    def test_path_mismatch_401(self, sequencer, populated):
        p = populated
        header = build_read_header(p["worker"], "/report/" + "00" * 16)
        with httpx.Client() as raw:
            response = raw.get(
                f"{sequencer.endpoint}/report/{p['report_id']}", headers={"X-Signed-Read": header}
            )
        assert response.status_code == 401

    def test_unknown_report_404(self, client, populated):
        with pytest.raises(DeniedError) as excinfo:
            client.report(populated["worker"], "00" * 16)
        assert excinfo.value.status == 404

    def test_unregistered_requester_403(self, client, populated):
        ghost = keypair_named("ghost-reader")
        with pytest.raises(DeniedError) as excinfo:
            client.report(ghost, populated["report_id"])
        assert excinfo.value.status == 403


class TestFollower:
    def test_redirects_writes_and_serves_replica(self, tmp_path, sequencer, client, populated):
        follower = LedgerNode.new_follower(
            tmp_path / "follower", sequencer.node.chain_config, sequencer.endpoint
        )
        follower.start_follower_loop(HttpTransport(sequencer.endpoint))
        fserver = NodeServer(follower).start()
        try:
            head = client.blocks(start=0)["head_height"]
            with NodeClient(fserver.endpoint) as fclient:
                fclient.wait_for_height(head, timeout_s=10)
                assert fclient.blocks(start=0)["head_hash"] == client.blocks(start=0)["head_hash"]
                tx = build_register(keypair_named("late"), "Worker", "00" * 32)
                with httpx.Client() as raw:
                    response = raw.post(fserver.endpoint + "/tx", content=canonical_bytes(tx))
                assert response.status_code == 307
                assert response.headers["location"].endswith("/tx")
            assert follower.alarms == []
        finally:
            fserver.stop()
