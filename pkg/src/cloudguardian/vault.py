"""Encrypted, portable persistence of the chain-ID to payload-metadata map.

The mapping file is the one artifact that can reconnect anchored chain
payloads with the store's placeholder rows, so it must stay confidential
and tamper-evident while remaining a plain file that can be copied between
nodes. A passphrase-only password hash cannot deliver that, so the key is
derived from the passphrase with scrypt (memory-hard) and the mapping
serialization is sealed with AES-256-GCM. The header (magic, salt, KDF
cost parameters, nonce) is bound as associated data, so any header or
ciphertext tampering fails authentication.

On-disk layout, bit-exact:

    magic "CGV1" (4) | salt (16) | n,r,p as big-endian uint32 (12)
    | nonce (12) | AES-GCM ciphertext+tag

Wrong passphrase and tampering are indistinguishable by design: both
surface as :class:`AuthFailure`.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import os
import struct
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

MAGIC = b"CGV1"
SALT_SIZE = 16
NONCE_SIZE = 12
KDF_PARAMS_SIZE = 12
HEADER_SIZE = len(MAGIC) + SALT_SIZE + KDF_PARAMS_SIZE + NONCE_SIZE
KEY_SIZE = 32

CHAIN_ID_PREFIX = "ch_"

PASSPHRASE_ENV_VAR = "CG_VAULT_PASSPHRASE"

PROTOCOL_LABELS = ("p1", "p2")


class VaultError(Exception):
    pass


class AuthFailure(VaultError):
    """Wrong passphrase or tampered bytes; the two are indistinguishable."""


class MalformedVault(VaultError):
    """Bad magic, truncated header, or implausible KDF parameters."""


class IoFailure(VaultError):
    pass


class DuplicateChainId(VaultError):
    pass


class UnknownChainId(VaultError):
    pass


@dataclass(frozen=True)
class KdfParams:
    """scrypt cost parameters carried in the file header."""

    n: int = 2**14
    r: int = 8
    p: int = 1

    def validate(self) -> None:
        if not (2**10 <= self.n <= 2**22) or self.n & (self.n - 1):
            raise MalformedVault(f"implausible scrypt n={self.n}")
        if not (1 <= self.r <= 32) or not (1 <= self.p <= 16):
            raise MalformedVault(f"implausible scrypt r={self.r} p={self.p}")

    def pack(self) -> bytes:
        return struct.pack(">III", self.n, self.r, self.p)

    @classmethod
    def unpack(cls, raw: bytes) -> "KdfParams":
        params = cls(*struct.unpack(">III", raw))
        params.validate()
        return params


@dataclass(frozen=True)
class MappingEntry:
    """Metadata for one anchored payload; never the payload text itself."""

    record_count: int
    anchored_at: datetime
    protocol: str
    surrogate_id: str

    def __post_init__(self) -> None:
        if self.record_count < 1:
            raise ValueError("record_count must be at least 1")
        if self.protocol not in PROTOCOL_LABELS:
            raise ValueError(f"protocol must be one of {PROTOCOL_LABELS}")


class IdMapping:
    """Map of chain ID to anchored-payload metadata, deterministic iteration."""

    def __init__(self, entries: dict[str, MappingEntry] | None = None):
        self._entries: dict[str, MappingEntry] = dict(entries or {})

    def put(self, chain_id: str, entry: MappingEntry) -> None:
        if chain_id in self._entries:
            raise DuplicateChainId(f"chain id {chain_id!r} already mapped")
        self._entries[chain_id] = entry

    def remove(self, chain_id: str) -> MappingEntry:
        try:
            return self._entries.pop(chain_id)
        except KeyError:
            raise UnknownChainId(f"chain id {chain_id!r} not mapped") from None

    def get(self, chain_id: str) -> MappingEntry:
        try:
            return self._entries[chain_id]
        except KeyError:
            raise UnknownChainId(f"chain id {chain_id!r} not mapped") from None

    def entries(self) -> list[tuple[str, MappingEntry]]:
        return [(cid, self._entries[cid]) for cid in sorted(self._entries)]

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, chain_id: str) -> bool:
        return chain_id in self._entries

    def __eq__(self, other) -> bool:
        return isinstance(other, IdMapping) and self._entries == other._entries

    def to_json(self) -> bytes:
        doc = {
            cid: {
                "record_count": e.record_count,
                "anchored_at": e.anchored_at.strftime("%Y-%m-%dT%H:%M:%SZ"),
                "protocol": e.protocol,
                "surrogate_id": e.surrogate_id,
            }
            for cid, e in self.entries()
        }
        return json.dumps({"entries": doc}, sort_keys=True, separators=(",", ":")).encode(
            "utf-8"
        )

    @classmethod
    def from_json(cls, raw: bytes) -> "IdMapping":
        doc = json.loads(raw.decode("utf-8"))
        entries = {
            cid: MappingEntry(
                record_count=e["record_count"],
                anchored_at=datetime.strptime(
                    e["anchored_at"], "%Y-%m-%dT%H:%M:%SZ"
                ).replace(tzinfo=timezone.utc),
                protocol=e["protocol"],
                surrogate_id=e["surrogate_id"],
            )
            for cid, e in doc["entries"].items()
        }
        return cls(entries)


def _derive_key(passphrase: str, salt: bytes, params: KdfParams) -> bytes:
    return hashlib.scrypt(
        passphrase.encode("utf-8"),
        salt=salt,
        n=params.n,
        r=params.r,
        p=params.p,
        maxmem=256 * params.r * params.n + 1024 * 1024,
        dklen=KEY_SIZE,
    )


@contextmanager
def _file_lock(path: str, exclusive: bool):
    lock_path = path + ".lock"
    fd = os.open(lock_path, os.O_CREAT | os.O_RDWR, 0o600)
    try:
        fcntl.flock(fd, fcntl.LOCK_EX if exclusive else fcntl.LOCK_SH)
        yield
    finally:
        fcntl.flock(fd, fcntl.LOCK_UN)
        os.close(fd)


def vault_save(
    mapping: IdMapping,
    path: str,
    passphrase: str,
    kdf_params: KdfParams | None = None,
) -> None:
    """Seal the mapping to ``path`` atomically, with fresh salt and nonce."""
    if not passphrase:
        raise ValueError("passphrase must be non-empty")
    params = kdf_params or KdfParams()
    params.validate()
    salt = os.urandom(SALT_SIZE)
    nonce = os.urandom(NONCE_SIZE)
    key = _derive_key(passphrase, salt, params)
    header = MAGIC + salt + params.pack() + nonce
    ciphertext = AESGCM(key).encrypt(nonce, mapping.to_json(), header)
    with _file_lock(path, exclusive=True):
        directory = os.path.dirname(os.path.abspath(path))
        try:
            fd, tmp = tempfile.mkstemp(dir=directory, prefix=".vault-", suffix=".tmp")
            with os.fdopen(fd, "wb") as fh:
                fh.write(header + ciphertext)
            os.replace(tmp, path)
        except OSError as exc:
            raise IoFailure(f"cannot write vault file {path}: {exc}") from exc


def vault_load(path: str, passphrase: str) -> IdMapping:
    """Authenticated decrypt of a vault file; byte-identical copies load alike."""
    with _file_lock(path, exclusive=False):
        try:
            with open(path, "rb") as fh:
                blob = fh.read()
        except OSError as exc:
            raise IoFailure(f"cannot read vault file {path}: {exc}") from exc
    if len(blob) < HEADER_SIZE:
        raise MalformedVault(f"vault file truncated at {len(blob)} bytes")
    if blob[: len(MAGIC)] != MAGIC:
        raise MalformedVault("bad magic; not a vault file")
    offset = len(MAGIC)
    salt = blob[offset : offset + SALT_SIZE]
    offset += SALT_SIZE
    params = KdfParams.unpack(blob[offset : offset + KDF_PARAMS_SIZE])
    offset += KDF_PARAMS_SIZE
    nonce = blob[offset : offset + NONCE_SIZE]
    offset += NONCE_SIZE
    ciphertext = blob[offset:]
    key = _derive_key(passphrase, salt, params)
    header = blob[:HEADER_SIZE]
    try:
        plaintext = AESGCM(key).decrypt(nonce, ciphertext, header)
    except InvalidTag:
        raise AuthFailure("wrong passphrase or tampered vault") from None
    return IdMapping.from_json(plaintext)
