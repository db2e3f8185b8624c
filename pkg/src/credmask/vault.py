"""Encrypted vault holding masked rows, auth records, and restore metadata.

On-disk layout, all integers big-endian:

    magic "CMV1" (4) | format_version u16 | kdf memory-cost u32 (bytes) |
    kdf iterations u32 | kdf parallelism u8 | salt (16) | nonce (24) |
    AEAD ciphertext of the serialized payload | tag (16, trailing)

The payload reuses the store adapter's tagged cell encoding for every row, so
a vaulted row restores byte-exactly. Every commit re-encrypts the whole state
under a fresh nonce and replaces the file atomically (write temp, fsync,
rename); a crash mid-commit leaves the previous version intact. The header is
bound as associated data, so any ciphertext or header flip fails the tag.

The stated threat holds the machine's root credentials, so file permissions
protect nothing; only the passphrase-derived key does.
"""

from __future__ import annotations

import fcntl
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from . import auth, crypto
from .errors import (
    AlreadyExistsError,
    BadVersionError,
    DuplicateHostError,
    TamperedVaultError,
    UnknownHostError,
    VaultLockedError,
    WrongSecretError,
)
from .faults import crash_point
from .minutiae import BIFURCATION, TERMINATION, Minutia, Template
from .store import LoginRow
from .wire import Reader, TruncatedError, Writer

MAGIC = b"CMV1"
FORMAT_VERSION = 1

_HEADER = struct.Struct(">4sHIIB16s")  # magic, version, mem, iters, parallelism, salt
_MIN_FILE = _HEADER.size + crypto.NONCE_LEN + crypto.TAG_LEN

_RECORD_PASSPHRASE = 1
_RECORD_FINGERPRINT = 2
_POLICY_CODE = {
    auth.POLICY_PASSPHRASE_ONLY: 1,
    auth.POLICY_FINGERPRINT_ONLY: 2,
    auth.POLICY_BOTH: 3,
}
_CODE_POLICY = {v: k for k, v in _POLICY_CODE.items()}
_KIND_CODE = {TERMINATION: 1, BIFURCATION: 2}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


@dataclass(frozen=True)
class VaultEntry:
    """The masked rows of one hostname plus what is needed to restore them."""

    hostname: str
    rows: tuple[LoginRow, ...]
    masked_at: int  # UTC seconds
    store_path: str
    schema_columns: tuple[str, ...]

    def __post_init__(self):
        if not self.rows:
            raise ValueError("a vault entry must hold at least one row")
        for row in self.rows:
            if row.hostname != self.hostname:
                raise ValueError(
                    f"row {row.row_id} is for {row.hostname!r}, entry is {self.hostname!r}"
                )


class VaultFile:
    """Decrypted in-memory view of a vault; durably saved only by commit().

    Confined to one thread of control; at most one open handle per path per
    process, enforced by an advisory lock on a sidecar ``.lock`` file.
    """

    def __init__(self, path: Path, kdf_params: crypto.KdfParams, key: bytes,
                 lock_fd: int):
        self.path = path
        self.kdf_params = kdf_params
        self.format_version = FORMAT_VERSION
        self.entries: list[VaultEntry] = []
        self.auth_records: list[auth.AuthRecord] = []
        self.policy: str = auth.POLICY_PASSPHRASE_ONLY
        self.keystore_record: tuple[str, bytes] | None = None
        # ephemeral identity binding proofs to this open instance
        self.auth_token: bytes = os.urandom(16)
        self.open_proof: auth.AuthProof | None = None
        self._key = key
        self._lock_fd = lock_fd
        self._closed = False

    # -- lifecycle -----------------------------------------------------------

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        _release_lock(self._lock_fd)

    def __enter__(self) -> "VaultFile":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- entry operations ------------------------------------------------------

    def hosts(self) -> list[str]:
        return [e.hostname for e in self.entries]

    def get_entry(self, hostname: str) -> VaultEntry:
        for e in self.entries:
            if e.hostname == hostname:
                return e
        raise UnknownHostError(f"not vaulted: {hostname}")

    def put_entries(self, new: Iterable[VaultEntry]) -> None:
        """Append entries; hostnames must be new to the vault. Not durable."""
        incoming = list(new)
        present = set(self.hosts())
        for entry in incoming:
            if entry.hostname in present:
                raise DuplicateHostError(f"already vaulted: {entry.hostname}")
            present.add(entry.hostname)
        self.entries.extend(incoming)

    def take_entries(self, hostnames: Iterable[str]) -> list[VaultEntry]:
        """Remove and return the entries for the given hosts; all or nothing."""
        wanted = set(hostnames)
        present = set(self.hosts())
        missing = wanted - present
        if missing:
            raise UnknownHostError(f"not vaulted: {sorted(missing)}")
        taken = [e for e in self.entries if e.hostname in wanted]
        self.entries = [e for e in self.entries if e.hostname not in wanted]
        return taken

    # -- durability --------------------------------------------------------------

    def commit(self) -> None:
        """Re-encrypt the full state under a fresh nonce and atomically replace
        the file; on any failure the previous version remains intact."""
        if self._closed:
            raise ValueError("vault handle is closed")
        nonce = os.urandom(crypto.NONCE_LEN)
        header = _HEADER.pack(
            MAGIC, self.format_version, self.kdf_params.memory_bytes,
            self.kdf_params.iterations, self.kdf_params.parallelism,
            self.kdf_params.salt,
        )
        sealed = crypto.seal(self._key, nonce, self._serialize(), header + nonce)
        _atomic_write(self.path, header + nonce + sealed)

    # -- serialization -------------------------------------------------------------

    def _serialize(self) -> bytes:
        w = Writer()
        w.u32(len(self.entries))
        for entry in self.entries:
            w.text(entry.hostname)
            w.u64(entry.masked_at)
            w.text(entry.store_path)
            w.u16(len(entry.schema_columns))
            for col in entry.schema_columns:
                w.text(col)
            w.u32(len(entry.rows))
            for row in entry.rows:
                w.i64(row.row_id)
                w.u16(len(row.cells))
                for name, value in row.cells:
                    w.text(name)
                    w.cell(value)
        w.u32(len(self.auth_records))
        for record in self.auth_records:
            if record.kind == auth.KIND_PASSPHRASE:
                w.u8(_RECORD_PASSPHRASE)
                w.raw(record.kdf.salt)
                w.raw(record.verifier)
                w.u32(record.kdf.memory_bytes)
                w.u32(record.kdf.iterations)
                w.u8(record.kdf.parallelism)
            else:
                w.u8(_RECORD_FINGERPRINT)
                w.f64(record.threshold)
                w.text(record.template.source_id)
                w.u32(len(record.template))
                for m in record.template.minutiae:
                    w.f64(m.x)
                    w.f64(m.y)
                    w.f64(m.theta)
                    w.u8(_KIND_CODE[m.kind])
        w.u8(_POLICY_CODE[self.policy])
        if self.keystore_record is None:
            w.u8(0)
        else:
            w.u8(1)
            w.text(self.keystore_record[0])
            w.raw(self.keystore_record[1])
        return w.getvalue()

    def _deserialize(self, payload: bytes) -> None:
        r = Reader(payload)
        entries = []
        for _ in range(r.u32()):
            hostname = r.text()
            masked_at = r.u64()
            store_path = r.text()
            columns = tuple(r.text() for _ in range(r.u16()))
            rows = []
            for _ in range(r.u32()):
                row_id = r.i64()
                cells = tuple((r.text(), r.cell()) for _ in range(r.u16()))
                rows.append(LoginRow(row_id=row_id, hostname=hostname, cells=cells))
            entries.append(VaultEntry(hostname, tuple(rows), masked_at,
                                      store_path, columns))
        records: list[auth.AuthRecord] = []
        for _ in range(r.u32()):
            tag = r.u8()
            if tag == _RECORD_PASSPHRASE:
                salt = r.raw(crypto.SALT_LEN)
                verifier = r.raw(crypto.KEY_LEN)
                kdf = crypto.KdfParams(r.u32(), r.u32(), r.u8(), salt)
                records.append(auth.PassphraseRecord(kdf=kdf, verifier=verifier))
            elif tag == _RECORD_FINGERPRINT:
                threshold = r.f64()
                source_id = r.text()
                minutiae = tuple(
                    Minutia(r.f64(), r.f64(), r.f64(), _CODE_KIND[r.u8()])
                    for _ in range(r.u32())
                )
                records.append(auth.FingerprintRecord(
                    template=Template(minutiae=minutiae, source_id=source_id),
                    threshold=threshold,
                ))
            else:
                raise ValueError(f"unknown auth record tag {tag}")
        policy = _CODE_POLICY.get(r.u8())
        if policy is None:
            raise ValueError("unknown policy code")
        keystore = None
        if r.u8():
            keystore = (r.text(), r.raw(32))
        if not r.exhausted():
            raise ValueError("trailing bytes after payload")
        self.entries = entries
        self.auth_records = records
        for record in records:
            record.vault_token = self.auth_token
        self.policy = policy
        self.keystore_record = keystore


# -- module operations ---------------------------------------------------------------

def create_vault(path: str | os.PathLike, passphrase: bytes | str,
                 kdf_params: crypto.KdfParams | None = None) -> VaultFile:
    """Create an empty vault at a fresh path and write it durably."""
    p = Path(path)
    if p.exists():
        raise AlreadyExistsError(f"vault already exists: {p}")
    secret = _passphrase_bytes(passphrase)
    params = kdf_params if kdf_params is not None else crypto.KdfParams.generate()
    key = crypto.derive_key(secret, params)
    p.parent.mkdir(parents=True, exist_ok=True)
    lock_fd = _acquire_lock(p)
    try:
        vault = VaultFile(p, params, key, lock_fd)
        vault.commit()
    except Exception:
        _release_lock(lock_fd)
        raise
    vault.open_proof = auth.AuthProof(
        kinds=frozenset({auth.KIND_PASSPHRASE}), vault_token=vault.auth_token
    )
    return vault


def open_vault(path: str | os.PathLike, passphrase: bytes | str) -> VaultFile:
    """Decrypt and authenticate a vault file into memory.

    WrongSecretError when the tag fails under a well-formed header (a wrong
    passphrase and a flipped body byte are indistinguishable by design);
    TamperedVaultError for structural corruption; BadVersionError for formats
    this build does not speak. Never returns partially decrypted data.
    """
    p = Path(path)
    blob = p.read_bytes()
    if len(blob) < _MIN_FILE:
        raise TamperedVaultError(f"vault file truncated: {p}")
    header = blob[:_HEADER.size]
    magic, version, memory, iterations, parallelism, salt = _HEADER.unpack(header)
    if magic != MAGIC:
        raise TamperedVaultError(f"bad magic in {p}")
    if version != FORMAT_VERSION:
        raise BadVersionError(f"vault format {version} not supported")
    nonce = blob[_HEADER.size:_HEADER.size + crypto.NONCE_LEN]
    sealed = blob[_HEADER.size + crypto.NONCE_LEN:]
    try:
        params = crypto.KdfParams(memory, iterations, parallelism, salt)
    except ValueError as exc:
        raise TamperedVaultError(f"implausible KDF parameters in {p}: {exc}") from exc
    key = crypto.derive_key(_passphrase_bytes(passphrase), params)
    try:
        payload = crypto.open_sealed(key, nonce, sealed, header + nonce)
    except crypto.InvalidTag:
        raise WrongSecretError(
            "vault did not authenticate (wrong passphrase or modified file)"
        ) from None
    lock_fd = _acquire_lock(p)
    vault = VaultFile(p, params, key, lock_fd)
    try:
        vault._deserialize(payload)
    except (TruncatedError, ValueError, KeyError) as exc:
        vault.close()
        raise TamperedVaultError(f"vault payload corrupt: {exc}") from exc
    vault.open_proof = auth.AuthProof(
        kinds=frozenset({auth.KIND_PASSPHRASE}), vault_token=vault.auth_token
    )
    return vault


# -- internals --------------------------------------------------------------------------

def _passphrase_bytes(passphrase: bytes | str) -> bytes:
    secret = passphrase.encode("utf-8") if isinstance(passphrase, str) else bytes(passphrase)
    if not secret:
        raise ValueError("passphrase must not be empty")
    return secret


def _lock_path(p: Path) -> Path:
    return p.with_name(p.name + ".lock")


def _acquire_lock(p: Path) -> int:
    fd = os.open(_lock_path(p), os.O_CREAT | os.O_RDWR, 0o600)
    try:
        fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
    except OSError:
        os.close(fd)
        raise VaultLockedError(f"vault is locked by another handle: {p}") from None
    return fd


def _release_lock(fd: int) -> None:
    try:
        fcntl.flock(fd, fcntl.LOCK_UN)
    finally:
        os.close(fd)


def _atomic_write(path: Path, data: bytes) -> None:
    tmp_fd, tmp_name = None, None
    try:
        tmp_fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp",
                                            dir=str(path.parent))
        with os.fdopen(tmp_fd, "wb") as fh:
            tmp_fd = None
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        crash_point("vault-commit-pre-replace")
        os.replace(tmp_name, path)
        tmp_name = None
        dir_fd = os.open(path.parent, os.O_RDONLY)
        try:
            os.fsync(dir_fd)
        finally:
            os.close(dir_fd)
    finally:
        if tmp_name is not None:
            try:
                os.unlink(tmp_name)
            except OSError:
                pass
