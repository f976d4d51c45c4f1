"""Permissioned ledger for worker-owned encrypted sensor data.

Workers hold their data under per-worker access contracts on an
append-only hash chain; bulk ciphertext lives in a content-addressed
store keyed by digest. A single sequencer seals blocks, followers
replicate with full verification.
"""

__version__ = "0.1.0"
