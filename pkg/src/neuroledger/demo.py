"""Scripted end-to-end run against a live node.

Drives the full scenario over HTTP: registrations, grant, appointment,
encrypted blob uploads, report updates, manager assignment, anonymous
share, revoke, and the denial checks after revocation. Every step
asserts its postcondition; a DemoFailure means the system is broken.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import crypto, scenario
from .canonical import canonical_bytes
from .client import DeniedError, NodeClient
from .contracts import report_id_for
from .transactions import (
    ROLE_MANAGER,
    ROLE_PROVIDER,
    ROLE_WORKER,
    TX_APPOINT,
    TX_ASSIGN_MANAGER,
    TX_GRANT,
    TX_REPORT,
    TX_REVOKE,
    TX_SHARE,
    TX_UPLOAD,
    build_tx,
)

logger = logging.getLogger(__name__)


class DemoFailure(Exception):
    pass


@dataclass
class DemoResult:
    steps: list = field(default_factory=list)
    report_id: str = ""
    data_key: str = ""
    report_keys: list = field(default_factory=list)
    head_height: int = 0
    verify_passed: bool = False

    def check(self, name: str, ok: bool, detail: str = "") -> None:
        self.steps.append((name, ok, detail))
        logger.info("demo step %-34s %s %s", name, "ok" if ok else "FAILED", detail)
        if not ok:
            raise DemoFailure(f"{name}: {detail}")


def _submit_and_wait(client: NodeClient, tx: dict, timeout_s: float = 10.0) -> dict:
    result = client.submit_tx(tx)
    if not result.get("accepted"):
        raise DemoFailure(f"tx rejected: {result.get('reason')}")
    client.wait_for_tx(result["tx_digest"], timeout_s=timeout_s)
    return result


def run_demo(endpoint: str, timeout_s: float = 15.0) -> DemoResult:
    cast = scenario.Cast.default()
    w, p, p2, m = cast.worker, cast.provider, cast.provider2, cast.manager
    result = DemoResult()

    with NodeClient(endpoint) as client:
        # registrations, one per interval so each lands in its own block
        for kp, role, name in [
            (w, ROLE_WORKER, "worker w1"),
            (p, ROLE_PROVIDER, "provider p1"),
            (p2, ROLE_PROVIDER, "provider p2"),
            (m, ROLE_MANAGER, "manager m1"),
        ]:
            _submit_and_wait(
                client, build_tx(kp, "Register", 0, scenario.register_payload(kp, role, name)), timeout_s
            )
        worker_identity = client.identity(w.address)
        result.check(
            "register.worker-contract",
            worker_identity is not None and "contract_address" in worker_identity,
        )
        provider_identity = client.identity(p.address)
        result.check(
            "register.provider-no-contract",
            provider_identity is not None and "contract_address" not in provider_identity,
        )

        # grant, appointment
        _submit_and_wait(client, build_tx(w, TX_GRANT, 1, {"grantee": p.address}), timeout_s)
        contract = client.contract(worker_identity["contract_address"])
        result.check("grant.listed", p.address in contract["grantees"])

        slot = scenario.GENESIS_TIME_MS + 86_400_000
        appoint = build_tx(w, TX_APPOINT, 2, {"provider": p.address, "slot": slot})
        _submit_and_wait(client, appoint, timeout_s)
        report_id = report_id_for(w.address, p.address, slot, 2)
        contract = client.contract(worker_identity["contract_address"])
        result.check("appointment.report-id", report_id in contract["reports"], report_id)
        result.report_id = report_id

        # data upload: seal to the worker's own key, post, then index on-chain
        data_plaintext = scenario.fixture_ciphertext("demo-data", 4096)
        sealed = crypto.seal(w.exchange_public, data_plaintext)
        data_blob = canonical_bytes(sealed.to_record())
        data_key = client.put_blob(data_blob)
        _submit_and_wait(
            client,
            build_tx(
                w,
                TX_UPLOAD,
                3,
                {"storage_key": data_key, "content_hash": data_key, "meta": "demo session"},
            ),
            timeout_s,
        )
        result.data_key = data_key

        # provider fetches the ciphertext it was granted
        fetched = client.blob(p, data_key)
        result.check("grant.provider-reads-blob", fetched == data_blob)

        # report 1 (owner key only; no manager assigned yet)
        sym_key = crypto.new_symmetric_key()
        report_plaintext = scenario.canonical_fixture_report(cast, version=1)
        report_blob = crypto.encrypt_payload(sym_key, report_plaintext)
        report_key = client.put_blob(report_blob)
        update1 = build_tx(
            p,
            TX_REPORT,
            1,
            {
                "report_id": report_id,
                "content_hash": report_key,
                "storage_key": report_key,
                "wrapped_keys": scenario.wrapped_keys_for(sym_key, [w]),
                "updated_at": slot + 3_600_000,
            },
        )
        _submit_and_wait(client, update1, timeout_s)
        result.report_keys.append(report_key)

        # manager assignment, then a second report wrapping both keys
        _submit_and_wait(client, build_tx(w, TX_ASSIGN_MANAGER, 4, {"manager": m.address}), timeout_s)
        report_plaintext_2 = scenario.canonical_fixture_report(cast, version=2)
        report_blob_2 = crypto.encrypt_payload(sym_key, report_plaintext_2)
        report_key_2 = client.put_blob(report_blob_2)
        update2 = build_tx(
            p,
            TX_REPORT,
            2,
            {
                "report_id": report_id,
                "content_hash": report_key_2,
                "storage_key": report_key_2,
                "wrapped_keys": scenario.wrapped_keys_for(sym_key, [w, m]),
                "updated_at": slot + 7_200_000,
            },
        )
        _submit_and_wait(client, update2, timeout_s)
        result.report_keys.append(report_key_2)

        # owner and manager both decrypt the latest record
        for reader, label in [(w, "owner"), (m, "manager")]:
            view = client.report(reader, report_id)
            records = view["records"]
            result.check(f"report.{label}-history", len(records) == 2, f"{len(records)} records")
            latest = records[-1]
            envelope = crypto.SealedEnvelope.from_record(latest["wrapped_keys"][reader.address])
            key = crypto.unwrap_key(reader.seed, crypto.WrappedKey(reader.address, envelope))
            blob = client.blob(reader, latest["storage_key"])
            plain = crypto.decrypt_payload(key, blob)
            result.check(f"report.{label}-decrypts", plain == report_plaintext_2)

        # the unrelated provider is denied
        try:
            client.report(p2, report_id)
            result.check("deny.unrelated-provider", False, "expected 403")
        except DeniedError as exc:
            result.check("deny.unrelated-provider", exc.status == 403, str(exc))

        # token reward for anonymous sharing
        _submit_and_wait(client, build_tx(w, TX_SHARE, 5, {"storage_key": data_key}), timeout_s)
        contract = client.contract(worker_identity["contract_address"])
        result.check("share.token-balance", contract["token_balance"] == 1)
        fetched = client.blob(p2, data_key)  # public now: other identities may read
        result.check("share.public-read", fetched == data_blob)

        # revoke, then the provider must be refused everywhere
        _submit_and_wait(client, build_tx(w, TX_REVOKE, 6, {"grantee": p.address}), timeout_s)
        rejected = build_tx(
            p,
            TX_REPORT,
            3,
            {
                "report_id": report_id,
                "content_hash": report_key_2,
                "storage_key": report_key_2,
                "wrapped_keys": scenario.wrapped_keys_for(sym_key, [w, m]),
                "updated_at": slot + 10_800_000,
            },
        )
        outcome = client.submit_tx(rejected)
        result.check(
            "revoke.update-rejected",
            outcome.get("accepted") is False and outcome.get("reason") == "unauthorized",
            str(outcome.get("reason")),
        )

        head = client.blocks(start=0)
        result.head_height = head["head_height"]
        result.check("chain.enough-blocks", result.head_height >= 8, f"height {result.head_height}")

        report = client.verify()
        result.verify_passed = bool(report["passed"])
        result.check("chain.verifies", result.verify_passed)

    return result
