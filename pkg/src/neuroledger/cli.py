"""Operator CLI.

Exit codes: 0 ok, 2 rejected or denied, 3 connectivity failure, 4 bad
configuration or usage.
"""

from __future__ import annotations

import logging
import os
import sys
import tempfile
import time
from pathlib import Path

import click

from . import crypto
from .canonical import canonical_bytes
from .chain import ChainConfig
from .client import ClientError, ConnectivityError, DeniedError, NodeClient
from .node import (
    DATA_DIR_ENV,
    MODE_FOLLOWER,
    MODE_SEQUENCER,
    LedgerNode,
    NodeConfig,
    NodeServer,
)
from .replication import HttpTransport
from .transactions import (
    ROLES,
    TX_APPOINT,
    TX_ASSIGN_MANAGER,
    TX_GRANT,
    TX_REPORT,
    TX_REVOKE,
    TX_SHARE,
    TX_UPLOAD,
    build_register,
    build_tx,
)

EXIT_OK = 0
EXIT_REJECTED = 2
EXIT_CONNECTIVITY = 3
EXIT_CONFIG = 4

logger = logging.getLogger(__name__)


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_keypair(seed_file: str) -> crypto.KeyPair:
    try:
        return crypto.keypair_from_keyfile(Path(seed_file).read_text())
    except (OSError, crypto.MalformedInputError) as exc:
        _fail(EXIT_CONFIG, f"cannot load key file {seed_file}: {exc}")
        raise AssertionError("unreachable")


def _client(node: str) -> NodeClient:
    return NodeClient(node)


def _next_nonce(client: NodeClient, address: str) -> int:
    """Scan chain state for the sender's last nonce via the identity's txs."""
    # nonces are part of world state; walk blocks to find the latest accepted
    last = -1
    start = 0
    while True:
        batch = client.blocks(start=start)
        for record in batch["blocks"]:
            for tx in record["txs"]:
                if tx["sender"] == address:
                    last = max(last, tx["nonce"])
            start = record["height"] + 1
        if batch["head_height"] < start:
            return last + 1


def _submit(client: NodeClient, tx: dict, wait: bool = True) -> dict:
    try:
        outcome = client.submit_tx(tx)
        if not outcome.get("accepted"):
            _fail(EXIT_REJECTED, f"rejected: {outcome.get('reason')}")
        if wait:
            client.wait_for_tx(outcome["tx_digest"])
        return outcome
    except ConnectivityError as exc:
        _fail(EXIT_CONNECTIVITY, str(exc))
        raise AssertionError("unreachable")
    except DeniedError as exc:
        _fail(EXIT_REJECTED, str(exc))
        raise AssertionError("unreachable")


@click.group()
@click.option("--verbose", is_flag=True, help="debug logging")
def main(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


@main.command()
@click.option("--seed-file", required=True, type=click.Path())
@click.option("--seed", default="", help="hex seed; random when omitted")
def keygen(seed_file: str, seed: str) -> None:
    """Write a key file (hex seed + address) and print the address."""
    try:
        seed_bytes = bytes.fromhex(seed) if seed else os.urandom(crypto.SEED_LEN)
        keypair = crypto.generate_keypair(seed_bytes)
    except (ValueError, crypto.MalformedInputError) as exc:
        _fail(EXIT_CONFIG, f"bad seed: {exc}")
        return
    path = Path(seed_file)
    if path.exists():
        _fail(EXIT_CONFIG, f"{seed_file} already exists; refusing to overwrite")
    path.write_text(crypto.keypair_to_keyfile(keypair))
    click.echo(keypair.address)


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), help="key=value config file")
@click.option("--mode", type=click.Choice([MODE_SEQUENCER, MODE_FOLLOWER]), default=None)
@click.option("--listen", default=None, help="host:port")
@click.option("--data-dir", default=None, type=click.Path())
@click.option("--interval", default=None, type=int, help="block interval ms")
@click.option("--chain-id", default=None)
@click.option("--seed-file", default=None, type=click.Path(exists=True), help="sequencer signing key")
@click.option("--sequencer-endpoint", default=None, help="follower: sequencer base URL")
@click.option("--sequencer-address", default=None, help="follower trust anchor")
@click.option("--sequencer-public-key", default=None, help="follower trust anchor (hex)")
def run(config_path, mode, listen, data_dir, interval, chain_id, seed_file, sequencer_endpoint,
        sequencer_address, sequencer_public_key) -> None:
    """Run a node until interrupted."""
    cfg = NodeConfig.from_file(config_path) if config_path else NodeConfig(chain_id="neuroledger")
    if chain_id:
        cfg.chain_id = chain_id
    if mode:
        cfg.mode = mode
    if listen:
        host, _, port = listen.partition(":")
        cfg.listen_host = host or cfg.listen_host
        cfg.listen_port = int(port) if port else cfg.listen_port
    if data_dir:
        cfg.data_dir = data_dir
    if os.environ.get(DATA_DIR_ENV):
        cfg.data_dir = os.environ[DATA_DIR_ENV]
    if interval:
        cfg.block_interval_ms = interval
    if seed_file:
        cfg.seed_file = seed_file
    if sequencer_endpoint:
        cfg.sequencer_endpoint = sequencer_endpoint
    if sequencer_address:
        cfg.sequencer_address = sequencer_address
    if sequencer_public_key:
        cfg.sequencer_public_key = sequencer_public_key

    try:
        server = start_node(cfg)
    except Exception as exc:
        _fail(EXIT_CONFIG, f"cannot start node: {exc}")
        return
    click.echo(f"listening on {server.endpoint} mode={cfg.mode} data={cfg.data_dir}")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()


def start_node(cfg: NodeConfig) -> NodeServer:
    """Build, persist and serve a node per the config; used by run and demo."""
    data_dir = Path(cfg.data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    if cfg.mode == MODE_SEQUENCER:
        if not cfg.seed_file:
            raise ValueError("sequencer mode needs --seed-file")
        keypair = crypto.keypair_from_keyfile(Path(cfg.seed_file).read_text())
        if (data_dir / "chain.json").exists():
            node = LedgerNode.open_existing(data_dir, keypair=keypair, mode=MODE_SEQUENCER)
        else:
            node = LedgerNode.bootstrap_sequencer(
                data_dir, keypair, chain_id=cfg.chain_id, block_interval_ms=cfg.block_interval_ms
            )
        node.start_sequencer_loop()
    else:
        if not (cfg.sequencer_endpoint and cfg.sequencer_address and cfg.sequencer_public_key):
            raise ValueError("follower mode needs sequencer endpoint, address and public key")
        chain_cfg = ChainConfig(
            chain_id=cfg.chain_id,
            sequencer=cfg.sequencer_address,
            sequencer_public_key=cfg.sequencer_public_key,
            block_interval_ms=cfg.block_interval_ms,
        )
        node = LedgerNode.new_follower(data_dir, chain_cfg, cfg.sequencer_endpoint)
        node.sequencer_endpoint = cfg.sequencer_endpoint
        node.start_follower_loop(HttpTransport(cfg.sequencer_endpoint))
    server = NodeServer(node, cfg.listen_host, cfg.listen_port)
    return server.start()


@main.command()
@click.option("--node", required=True)
@click.option("--seed-file", required=True, type=click.Path(exists=True))
@click.option("--role", required=True, type=click.Choice(list(ROLES)))
@click.option("--profile", default="", help="free-text profile; only its hash goes on chain")
def register(node: str, seed_file: str, role: str, profile: str) -> None:
    """Register the key file's identity; prints address and contract address."""
    keypair = _load_keypair(seed_file)
    profile_hash = crypto.hash_canonical({"profile": profile})
    with _client(node) as client:
        outcome = _submit(client, build_register(keypair, role, profile_hash, nonce=0))
        click.echo(f"address: {keypair.address}")
        if "contract_address" in outcome:
            click.echo(f"contract: {outcome['contract_address']}")


def _simple_tx_command(client: NodeClient, keypair: crypto.KeyPair, tx_type: str, payload: dict) -> dict:
    nonce = _next_nonce(client, keypair.address)
    return _submit(client, build_tx(keypair, tx_type, nonce, payload))


@main.command()
@click.option("--node", required=True)
@click.option("--seed-file", required=True, type=click.Path(exists=True))
@click.option("--grantee", required=True)
def grant(node: str, seed_file: str, grantee: str) -> None:
    """Grant a provider access to the caller's data."""
    keypair = _load_keypair(seed_file)
    with _client(node) as client:
        _simple_tx_command(client, keypair, TX_GRANT, {"grantee": grantee})
        click.echo(f"granted {grantee}")


@main.command()
@click.option("--node", required=True)
@click.option("--seed-file", required=True, type=click.Path(exists=True))
@click.option("--grantee", required=True)
def revoke(node: str, seed_file: str, grantee: str) -> None:
    """Withdraw a previously granted authorization."""
    keypair = _load_keypair(seed_file)
    with _client(node) as client:
        _simple_tx_command(client, keypair, TX_REVOKE, {"grantee": grantee})
        click.echo(f"revoked {grantee}")


@main.command()
@click.option("--node", required=True)
@click.option("--seed-file", required=True, type=click.Path(exists=True))
@click.option("--provider", required=True)
@click.option("--slot", required=True, type=int, help="unix milliseconds")
def appoint(node: str, seed_file: str, provider: str, slot: int) -> None:
    """Book a service appointment; prints the resulting report id."""
    keypair = _load_keypair(seed_file)
    with _client(node) as client:
        outcome = _simple_tx_command(client, keypair, TX_APPOINT, {"provider": provider, "slot": slot})
        click.echo(f"report-id: {outcome.get('report_id')}")


@main.command("upload-data")
@click.option("--node", required=True)
@click.option("--seed-file", required=True, type=click.Path(exists=True))
@click.option("--file", "file_path", required=True, type=click.Path(exists=True))
@click.option("--meta", default="")
def upload_data(node: str, seed_file: str, file_path: str, meta: str) -> None:
    """Seal a file to the caller's own key, store it, and index it on chain."""
    keypair = _load_keypair(seed_file)
    plaintext = Path(file_path).read_bytes()
    sealed = crypto.seal(keypair.exchange_public, plaintext)
    blob = canonical_bytes(sealed.to_record())
    with _client(node) as client:
        try:
            key = client.put_blob(blob)
        except DeniedError as exc:
            _fail(EXIT_REJECTED, str(exc))
            return
        except ConnectivityError as exc:
            _fail(EXIT_CONNECTIVITY, str(exc))
            return
        _simple_tx_command(
            client, keypair, TX_UPLOAD, {"storage_key": key, "content_hash": key, "meta": meta}
        )
        click.echo(f"storage-key: {key}")


@main.command("update-report")
@click.option("--node", required=True)
@click.option("--seed-file", required=True, type=click.Path(exists=True), help="provider key")
@click.option("--worker", required=True, help="report owner address")
@click.option("--report-id", required=True)
@click.option("--file", "file_path", required=True, type=click.Path(exists=True))
def update_report(node: str, seed_file: str, worker: str, report_id: str, file_path: str) -> None:
    """Encrypt a report, wrap keys for owner (+manager) and record it."""
    keypair = _load_keypair(seed_file)
    plaintext = Path(file_path).read_bytes()
    with _client(node) as client:
        owner = client.identity(worker)
        if owner is None:
            _fail(EXIT_REJECTED, f"unknown worker {worker}")
            return
        recipients = [(worker, bytes.fromhex(owner["exchange_public"]))]
        # the manager link lives in world state; resolve through the chain
        manager_addr = _manager_of(client, worker)
        if manager_addr:
            manager = client.identity(manager_addr)
            if manager:
                recipients.append((manager_addr, bytes.fromhex(manager["exchange_public"])))
        sym_key = crypto.new_symmetric_key()
        blob = crypto.encrypt_payload(sym_key, plaintext)
        try:
            key = client.put_blob(blob)
        except ConnectivityError as exc:
            _fail(EXIT_CONNECTIVITY, str(exc))
            return
        wrapped = {
            addr: crypto.wrap_key(sym_key, addr, xpub).to_record() for addr, xpub in recipients
        }
        outcome = _simple_tx_command(
            client,
            keypair,
            TX_REPORT,
            {
                "report_id": report_id,
                "content_hash": key,
                "storage_key": key,
                "wrapped_keys": wrapped,
                "updated_at": int(time.time() * 1000),
            },
        )
        click.echo(f"record-id: {outcome.get('record_id')}")
        click.echo(f"content-hash: {key}")


def _manager_of(client: NodeClient, worker: str) -> str:
    """Walk the chain for the worker's latest manager assignment."""
    manager = ""
    start = 0
    while True:
        batch = client.blocks(start=start)
        for record in batch["blocks"]:
            for tx in record["txs"]:
                if tx["tx_type"] == TX_ASSIGN_MANAGER and tx["sender"] == worker:
                    manager = tx["payload"]["manager"]
            start = record["height"] + 1
        if batch["head_height"] < start:
            return manager


@main.command("view-report")
@click.option("--node", required=True)
@click.option("--seed-file", required=True, type=click.Path(exists=True))
@click.option("--report-id", required=True)
@click.option("--out", default="", help="write latest plaintext here instead of stdout")
def view_report(node: str, seed_file: str, report_id: str, out: str) -> None:
    """Fetch, unwrap and decrypt the latest record the caller may read."""
    keypair = _load_keypair(seed_file)
    with _client(node) as client:
        try:
            view = client.report(keypair, report_id)
        except DeniedError as exc:
            _fail(EXIT_REJECTED, f"denied: {exc.reason}")
            return
        except ConnectivityError as exc:
            _fail(EXIT_CONNECTIVITY, str(exc))
            return
        records = view["records"]
        if not records:
            _fail(EXIT_REJECTED, "report has no records yet")
        latest = records[-1]
        wrapped = latest["wrapped_keys"].get(keypair.address)
        if wrapped is None:
            _fail(EXIT_REJECTED, "no wrapped key for this identity")
        envelope = crypto.SealedEnvelope.from_record(wrapped)
        sym_key = crypto.unwrap_key(keypair.seed, crypto.WrappedKey(keypair.address, envelope))
        blob = client.blob(keypair, latest["storage_key"])
        plaintext = crypto.decrypt_payload(sym_key, blob)
        click.echo(f"record-id: {latest['record_id']}  author: {latest['author']}")
        if out:
            Path(out).write_bytes(plaintext)
            click.echo(f"wrote {len(plaintext)} bytes to {out}")
        else:
            click.echo(plaintext.decode("utf-8", errors="replace"))


@main.command("assign-manager")
@click.option("--node", required=True)
@click.option("--seed-file", required=True, type=click.Path(exists=True), help="worker key")
@click.option("--manager", required=True)
def assign_manager(node: str, seed_file: str, manager: str) -> None:
    """Link the calling worker to a project manager."""
    keypair = _load_keypair(seed_file)
    with _client(node) as client:
        _simple_tx_command(client, keypair, TX_ASSIGN_MANAGER, {"manager": manager})
        click.echo(f"manager set to {manager}")


@main.command()
@click.option("--node", required=True)
@click.option("--seed-file", required=True, type=click.Path(exists=True))
@click.option("--storage-key", required=True)
def share(node: str, seed_file: str, storage_key: str) -> None:
    """Share an indexed blob into the public domain for a token reward."""
    keypair = _load_keypair(seed_file)
    with _client(node) as client:
        outcome = _simple_tx_command(client, keypair, TX_SHARE, {"storage_key": storage_key})
        click.echo(f"token-balance: {outcome.get('token_balance')}")


@main.command("verify-chain")
@click.option("--node", required=True)
def verify_chain_cmd(node: str) -> None:
    """Ask the node for a full on-disk chain audit."""
    with _client(node) as client:
        try:
            report = client.verify()
        except ConnectivityError as exc:
            _fail(EXIT_CONNECTIVITY, str(exc))
            return
    if report["passed"]:
        click.echo(f"chain ok ({len(report['checks'])} blocks)")
    else:
        click.echo(f"chain FAILED at heights {report['failing_heights']}", err=True)
        sys.exit(EXIT_REJECTED)


@main.command()
@click.option("--workdir", default="", type=click.Path(), help="node data dir (temp when omitted)")
@click.option("--interval", default=120, type=int, help="block interval ms")
@click.option("--port", default=0, type=int)
def demo(workdir: str, interval: int, port: int) -> None:
    """Spin up a fresh sequencer and run the full scripted scenario."""
    from . import scenario as scenario_mod
    from .demo import DemoFailure, run_demo

    data_dir = Path(workdir) if workdir else Path(tempfile.mkdtemp(prefix="neuroledger-demo-"))
    data_dir.mkdir(parents=True, exist_ok=True)
    operator = scenario_mod.seeded_keypair("operator")
    node = LedgerNode.bootstrap_sequencer(
        data_dir, operator, chain_id="neuroledger-demo", block_interval_ms=interval
    )
    node.start_sequencer_loop()
    server = NodeServer(node, port=port).start()
    click.echo(f"demo node at {server.endpoint}, data in {data_dir}")
    try:
        result = run_demo(server.endpoint)
    except DemoFailure as exc:
        click.echo(f"demo FAILED: {exc}", err=True)
        server.stop()
        sys.exit(EXIT_REJECTED)
    except ClientError as exc:
        click.echo(f"demo connectivity failure: {exc}", err=True)
        server.stop()
        sys.exit(EXIT_CONNECTIVITY)
    server.stop()
    click.echo(f"demo ok: {len(result.steps)} checks, head height {result.head_height}, verify passed")


if __name__ == "__main__":
    main()
