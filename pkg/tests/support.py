"""Independent reference implementations used as test oracles.

Nothing here may import encoding or permission logic from the package
under test: the whole point is a second, separately written path that
must agree with the production one.
"""

from __future__ import annotations

import hashlib
import random

_SHORT_ESCAPES = {
    '"': '\\"',
    "\\": "\\\\",
    "\b": "\\b",
    "\f": "\\f",
    "\n": "\\n",
    "\r": "\\r",
    "\t": "\\t",
}


def _encode_string(value: str) -> str:
    out = ['"']
    for ch in value:
        if ch in _SHORT_ESCAPES:
            out.append(_SHORT_ESCAPES[ch])
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def reference_encode(value) -> bytes:
    """Hand-rolled canonical encoder: sorted keys, no whitespace, UTF-8."""

    def enc(v) -> str:
        if v is True:
            return "true"
        if v is False:
            return "false"
        if v is None:
            return "null"
        if isinstance(v, (bytes, bytearray)):
            return _encode_string(bytes(v).hex())
        if isinstance(v, int):
            return str(v)
        if isinstance(v, str):
            return _encode_string(v)
        if isinstance(v, (list, tuple)):
            return "[" + ",".join(enc(item) for item in v) + "]"
        if isinstance(v, dict):
            parts = []
            for key in sorted(v.keys()):
                if not isinstance(key, str):
                    raise TypeError("map keys must be strings")
                parts.append(_encode_string(key) + ":" + enc(v[key]))
            return "{" + ",".join(parts) + "}"
        raise TypeError(f"unsupported type {type(v).__name__}")

    return enc(value).encode("utf-8")


def reference_hash(value) -> str:
    if isinstance(value, (bytes, bytearray)):
        return hashlib.sha256(bytes(value)).hexdigest()
    return hashlib.sha256(reference_encode(value)).hexdigest()


def random_record(rng: random.Random, depth: int = 0):
    """Random canonical-encodable value with awkward strings and nesting."""
    choices = ["int", "str", "bool", "none", "bytes"]
    if depth < 3:
        choices += ["list", "dict", "dict", "list"]
    kind = rng.choice(choices)
    if kind == "int":
        return rng.choice([0, 1, -1, rng.randint(-(2**50), 2**50), rng.randint(-100, 100)])
    if kind == "str":
        alphabet = (
            "abcXYZ0189 _-:/\\\"'\n\t\r\b\f\x00\x1f"
            "é中文\U0001f9e0  "
        )
        return "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 24)))
    if kind == "bool":
        return rng.random() < 0.5
    if kind == "none":
        return None
    if kind == "bytes":
        return bytes(rng.getrandbits(8) for _ in range(rng.randint(0, 40)))
    if kind == "list":
        return [random_record(rng, depth + 1) for _ in range(rng.randint(0, 5))]
    key_pool = ["a", "b", "zz", "0", "é", "key with space", "\n", "nested", ""]
    return {
        rng.choice(key_pool) + str(rng.randint(0, 99)): random_record(rng, depth + 1)
        for _ in range(rng.randint(0, 5))
    }


class PermissionOracle:
    """Naive rule evaluator over a semantic operation log.

    Maintains its own model of the world with rules written straight from
    the access-control contract:

      * registration: first writer wins; workers get a contract
      * grant: worker grantor, registered provider grantee
      * appointment: provider must hold a live grant at booking time
      * report update: author must hold a live grant at update time
      * share: key must be in the owner's index and not already public
      * raw data readable by owner, live grantees, anyone registered
        once public; reports readable by owner, record authors, and the
        owner's current manager
    """

    def __init__(self) -> None:
        self.roles: dict = {}
        self.grants: dict = {}  # worker -> set of providers
        self.index: dict = {}  # worker -> set of storage keys
        self.public: set = set()
        self.manager: dict = {}
        self.reports: dict = {}  # report_id -> (owner, [authors])

    # -- op log ----------------------------------------------------------

    def register(self, addr: str, role: str) -> bool:
        if addr in self.roles:
            return False
        self.roles[addr] = role
        if role == "Worker":
            self.grants[addr] = set()
            self.index[addr] = set()
        return True

    def grant(self, worker: str, provider: str) -> bool:
        if self.roles.get(worker) != "Worker" or self.roles.get(provider) != "BciProvider":
            return False
        self.grants[worker].add(provider)
        return True

    def revoke(self, worker: str, provider: str) -> bool:
        if self.roles.get(worker) != "Worker":
            return False
        self.grants[worker].discard(provider)
        return True

    def appoint(self, worker: str, provider: str, report_id: str) -> bool:
        if self.roles.get(worker) != "Worker" or provider not in self.grants.get(worker, set()):
            return False
        if report_id in self.reports:
            return False
        self.reports[report_id] = (worker, [])
        return True

    def upload(self, worker: str, key: str) -> bool:
        if self.roles.get(worker) != "Worker":
            return False
        self.index[worker].add(key)
        return True

    def share(self, worker: str, key: str) -> bool:
        if self.roles.get(worker) != "Worker" or key not in self.index.get(worker, set()):
            return False
        if key in self.public:
            return False
        self.public.add(key)
        return True

    def assign(self, worker: str, manager: str) -> bool:
        if self.roles.get(worker) != "Worker" or self.roles.get(manager) != "ProjectManager":
            return False
        self.manager[worker] = manager
        return True

    def update_report(self, author: str, report_id: str) -> bool:
        if report_id not in self.reports:
            return False
        owner, authors = self.reports[report_id]
        if author not in self.grants.get(owner, set()):
            return False
        authors.append(author)
        return True

    # -- queries ------------------------------------------------------------

    def allow_data(self, requester: str, owner: str, key: str) -> bool:
        if requester not in self.roles:
            return False
        if self.roles.get(owner) != "Worker" or key not in self.index.get(owner, set()):
            return False
        if requester == owner:
            return True
        if requester in self.grants.get(owner, set()):
            return True
        return key in self.public

    def allow_report(self, requester: str, report_id: str) -> bool:
        if requester not in self.roles or report_id not in self.reports:
            return False
        owner, authors = self.reports[report_id]
        if requester == owner or requester in authors:
            return True
        return self.manager.get(owner) == requester
