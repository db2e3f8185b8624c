"""Login-store adapter: read and mutate the on-disk saved-logins database.

The store is a SQLite 3 file with a ``moz_logins`` table (saved logins) and
an optional ``moz_disabledHosts`` table (never-save list). The adapter is
column-agnostic: it introspects the schema when a handle is opened and copies
every column verbatim, interpreting only the ``hostname`` column and the
integer primary key. Restores are therefore byte-exact across schema
versions, and credential ciphertexts are never parsed or decrypted.

The sibling key-store file is opaque here; its integrity is attested purely
by hash (:func:`keystore_digest`) and nothing in this module ever opens it
for writing.
"""

from __future__ import annotations

import hashlib
import os
import sqlite3
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    AlreadyExistsError,
    MissingKeyStoreError,
    NotADatabaseError,
    ReadOnlyStoreError,
    RowIdConflictError,
    RowNotFoundError,
    SchemaError,
    SchemaMismatchError,
    StoreBusyError,
)
from .wire import NULL_LENGTH, decode_cell_value, encode_cell_value

LOGINS_TABLE = "moz_logins"
DISABLED_TABLE = "moz_disabledHosts"
HOSTNAME_COLUMN = "hostname"

READ_ONLY = "ro"
READ_WRITE = "rw"

SQLITE_MAGIC = b"SQLite format 3\x00"
DUMP_VERSION = 0x01

# Browser-side lock files whose presence means the profile is in use.
DEFAULT_SIBLING_LOCKS = (".parentlock", "parent.lock")

# Firefox-3-era column set; used for fixtures only, real stores are introspected.
CANONICAL_COLUMNS = (
    "id",
    "hostname",
    "httpRealm",
    "formSubmitURL",
    "usernameField",
    "passwordField",
    "encryptedUsername",
    "encryptedPassword",
    "guid",
    "encType",
)

_rw_registry_lock = threading.Lock()
_rw_registry: set[str] = set()


@dataclass(frozen=True)
class LoginRow:
    """One row of the logins table, every column kept verbatim.

    ``cells`` holds (column name, tagged value bytes) pairs in schema order,
    including the primary-key column; NULL is represented as None. The only
    interpreted fields are ``row_id`` and ``hostname``.
    """

    row_id: int
    hostname: str
    cells: tuple[tuple[str, bytes | None], ...]

    def cell(self, column: str) -> bytes | None:
        for name, value in self.cells:
            if name == column:
                return value
        raise KeyError(column)

    def column_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.cells)


@dataclass(frozen=True)
class KeyStoreDigest:
    path: str
    digest: bytes  # 32 bytes, pure function of the file contents


class StoreHandle:
    """An open connection to a login store; use :func:`open_store` to build one."""

    def __init__(self, path: Path, mode: str, conn: sqlite3.Connection,
                 schema: tuple[str, ...], pk_column: str):
        self.path = path
        self.mode = mode
        self.schema = schema
        self.pk_column = pk_column
        self._conn = conn
        self._closed = False

    # -- lifecycle ----------------------------------------------------------

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        self._conn.close()
        if self.mode == READ_WRITE:
            with _rw_registry_lock:
                _rw_registry.discard(_registry_key(self.path))

    def __enter__(self) -> "StoreHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _require_writable(self) -> None:
        if self.mode != READ_WRITE:
            raise ReadOnlyStoreError(f"store opened read-only: {self.path}")

    # -- reads ----------------------------------------------------------------

    def list_logins(self) -> list[LoginRow]:
        """All rows of the logins table, every column verbatim, ordered by row id."""
        cols = ", ".join(f'"{c}"' for c in self.schema)
        cur = self._conn.execute(
            f'SELECT {cols} FROM "{LOGINS_TABLE}" ORDER BY "{self.pk_column}"'
        )
        rows = []
        host_index = self.schema.index(HOSTNAME_COLUMN)
        pk_index = self.schema.index(self.pk_column)
        for raw in cur:
            hostname = raw[host_index]
            if not isinstance(hostname, str):
                raise SchemaError(
                    f"{HOSTNAME_COLUMN} must be TEXT, got {type(hostname).__name__}"
                )
            rows.append(
                LoginRow(
                    row_id=int(raw[pk_index]),
                    hostname=hostname,
                    cells=tuple(
                        (name, encode_cell_value(value))
                        for name, value in zip(self.schema, raw)
                    ),
                )
            )
        return rows

    def list_disabled_hosts(self) -> list[str]:
        """Hostnames from the never-save table; empty when the table is absent."""
        present = self._conn.execute(
            "SELECT name FROM sqlite_master WHERE type='table' AND name=?",
            (DISABLED_TABLE,),
        ).fetchone()
        if present is None:
            return []
        cur = self._conn.execute(
            f'SELECT "{HOSTNAME_COLUMN}" FROM "{DISABLED_TABLE}" ORDER BY rowid'
        )
        return [str(r[0]) for r in cur]

    def dump_canonical(self) -> bytes:
        """Deterministic serialization of the logins table.

        Equal table contents produce equal dumps, so byte-comparing two dumps
        is the round-trip oracle. Layout: version byte, then rows sorted by
        row id, each row as row_id (8-byte BE), column count (2-byte BE), and
        per cell a 4-byte BE length plus the tagged value bytes (NULL is the
        sentinel length 0xFFFFFFFF).
        """
        out = bytearray([DUMP_VERSION])
        for row in self.list_logins():
            out += struct.pack(">q", row.row_id)
            out += struct.pack(">H", len(row.cells))
            for _, value in row.cells:
                if value is None:
                    out += struct.pack(">I", NULL_LENGTH)
                else:
                    out += struct.pack(">I", len(value))
                    out += value
        return bytes(out)

    # -- mutations ------------------------------------------------------------

    def delete_rows(self, row_ids: Iterable[int]) -> int:
        """Delete exactly the given rows; all-or-nothing.

        Any missing id raises RowNotFoundError before anything is touched.
        """
        self._require_writable()
        ids = sorted(set(int(i) for i in row_ids))
        if not ids:
            return 0
        existing = self._existing_ids(ids)
        missing = [i for i in ids if i not in existing]
        if missing:
            raise RowNotFoundError(missing)
        with self._conn:
            for chunk in _chunks(ids, 500):
                marks = ", ".join("?" for _ in chunk)
                self._conn.execute(
                    f'DELETE FROM "{LOGINS_TABLE}" WHERE "{self.pk_column}" IN ({marks})',
                    chunk,
                )
        return len(ids)

    def insert_rows(self, rows: Sequence[LoginRow]) -> int:
        """Insert rows with their original ids and cell bytes; all-or-nothing."""
        self._require_writable()
        if not rows:
            return 0
        schema_set = set(self.schema)
        seen: set[int] = set()
        for row in rows:
            if set(row.column_names()) != schema_set:
                raise SchemaMismatchError(
                    f"row {row.row_id} columns {sorted(row.column_names())} "
                    f"!= store schema {sorted(schema_set)}"
                )
            if row.row_id in seen:
                raise RowIdConflictError([row.row_id])
            seen.add(row.row_id)
        existing = self._existing_ids(sorted(seen))
        if existing:
            raise RowIdConflictError(existing)
        cols = ", ".join(f'"{c}"' for c in self.schema)
        marks = ", ".join("?" for _ in self.schema)
        with self._conn:
            for row in rows:
                by_name = dict(row.cells)
                values = [decode_cell_value(by_name[c]) for c in self.schema]
                pk_value = values[self.schema.index(self.pk_column)]
                if pk_value != row.row_id:
                    raise SchemaMismatchError(
                        f"row_id {row.row_id} disagrees with its {self.pk_column} cell"
                    )
                self._conn.execute(
                    f'INSERT INTO "{LOGINS_TABLE}" ({cols}) VALUES ({marks})', values
                )
        return len(rows)

    # -- helpers --------------------------------------------------------------

    def _existing_ids(self, ids: Sequence[int]) -> set[int]:
        found: set[int] = set()
        for chunk in _chunks(list(ids), 500):
            marks = ", ".join("?" for _ in chunk)
            cur = self._conn.execute(
                f'SELECT "{self.pk_column}" FROM "{LOGINS_TABLE}" '
                f'WHERE "{self.pk_column}" IN ({marks})',
                chunk,
            )
            found.update(int(r[0]) for r in cur)
        return found


# -- module-level operations --------------------------------------------------

def open_store(path: str | os.PathLike, mode: str = READ_ONLY) -> StoreHandle:
    """Open a login store, introspecting the logins table schema.

    Raises NotADatabaseError for files without the SQLite magic, SchemaError
    when the logins table (or its hostname / integer-pk column) is missing,
    and StoreBusyError when a second read-write handle is requested for the
    same path in this process.
    """
    if mode not in (READ_ONLY, READ_WRITE):
        raise ValueError(f"mode must be {READ_ONLY!r} or {READ_WRITE!r}")
    p = Path(path)
    _check_sqlite_magic(p)
    if mode == READ_WRITE:
        key = _registry_key(p)
        with _rw_registry_lock:
            if key in _rw_registry:
                raise StoreBusyError(f"read-write handle already open for {p}")
            _rw_registry.add(key)
    try:
        uri = f"file:{p}?mode={'ro' if mode == READ_ONLY else 'rw'}"
        conn = sqlite3.connect(uri, uri=True)
        try:
            schema, pk = _introspect(conn)
        except Exception:
            conn.close()
            raise
    except Exception:
        if mode == READ_WRITE:
            with _rw_registry_lock:
                _rw_registry.discard(_registry_key(p))
        raise
    return StoreHandle(p, mode, conn, schema, pk)


def keystore_digest(path: str | os.PathLike) -> KeyStoreDigest:
    """SHA-256 over the key-store file; equal files give equal digests."""
    p = Path(path)
    if not p.is_file():
        raise MissingKeyStoreError(f"key store not found: {p}")
    return KeyStoreDigest(path=str(p), digest=hashlib.sha256(p.read_bytes()).digest())


def check_not_busy(path: str | os.PathLike,
                   sibling_locks: Sequence[str] = DEFAULT_SIBLING_LOCKS) -> None:
    """Fail with StoreBusyError if anything appears to hold the store.

    Two probes: a browser lock file next to the store, and a zero-timeout
    write-transaction attempt against the database itself.
    """
    p = Path(path)
    for name in sibling_locks:
        lock = p.parent / name
        if lock.exists():
            raise StoreBusyError(f"browser lock file present: {lock}")
    if not p.is_file():
        return
    try:
        conn = sqlite3.connect(f"file:{p}?mode=rw", uri=True, timeout=0)
    except sqlite3.OperationalError:
        return  # not openable read-write here; lock probing is advisory
    try:
        conn.execute("BEGIN IMMEDIATE")
        conn.rollback()
    except sqlite3.OperationalError as exc:
        raise StoreBusyError(f"database lock held on {p}: {exc}") from exc
    finally:
        conn.close()


def init_fixture(path: str | os.PathLike,
                 rows: Sequence[LoginRow] = (),
                 disabled: Sequence[str] = ()) -> StoreHandle:
    """Create a fresh store with the canonical schema and the given contents."""
    p = Path(path)
    if p.exists():
        raise AlreadyExistsError(f"store already exists: {p}")
    p.parent.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(p)
    try:
        with conn:
            conn.execute(
                f'CREATE TABLE "{LOGINS_TABLE}" ('
                ' "id" INTEGER PRIMARY KEY,'
                ' "hostname" TEXT NOT NULL,'
                ' "httpRealm" TEXT,'
                ' "formSubmitURL" TEXT,'
                ' "usernameField" TEXT,'
                ' "passwordField" TEXT,'
                ' "encryptedUsername" TEXT,'
                ' "encryptedPassword" TEXT,'
                ' "guid" TEXT,'
                ' "encType" INTEGER)'
            )
            conn.execute(
                f'CREATE TABLE "{DISABLED_TABLE}" ('
                ' "id" INTEGER PRIMARY KEY,'
                f' "{HOSTNAME_COLUMN}" TEXT UNIQUE NOT NULL)'
            )
            for host in disabled:
                conn.execute(
                    f'INSERT INTO "{DISABLED_TABLE}" ("{HOSTNAME_COLUMN}") VALUES (?)',
                    (host,),
                )
    finally:
        conn.close()
    handle = open_store(p, READ_WRITE)
    try:
        handle.insert_rows(rows)
    except Exception:
        handle.close()
        raise
    return handle


def canonical_login_row(row_id: int, hostname: str, **overrides) -> LoginRow:
    """A LoginRow for the canonical fixture schema, with plausible defaults."""
    values = {
        "id": row_id,
        "hostname": hostname,
        "httpRealm": None,
        "formSubmitURL": f"https://{hostname}",
        "usernameField": "username",
        "passwordField": "password",
        "encryptedUsername": f"ENC-USER-{row_id}",
        "encryptedPassword": f"ENC-PASS-{row_id}",
        "guid": f"{{guid-{row_id:04d}}}",
        "encType": 1,
    }
    unknown = set(overrides) - set(values)
    if unknown:
        raise SchemaMismatchError(f"not canonical columns: {sorted(unknown)}")
    values.update(overrides)
    values["id"] = row_id
    return LoginRow(
        row_id=row_id,
        hostname=str(values["hostname"]),
        cells=tuple((c, encode_cell_value(values[c])) for c in CANONICAL_COLUMNS),
    )


# -- internals ------------------------------------------------------------------

def _check_sqlite_magic(p: Path) -> None:
    if not p.is_file():
        raise FileNotFoundError(f"no such store: {p}")
    with p.open("rb") as fh:
        header = fh.read(len(SQLITE_MAGIC))
    if header != SQLITE_MAGIC:
        raise NotADatabaseError(f"not a SQLite database: {p}")


def _introspect(conn: sqlite3.Connection) -> tuple[tuple[str, ...], str]:
    try:
        info = conn.execute(f'PRAGMA table_info("{LOGINS_TABLE}")').fetchall()
    except sqlite3.DatabaseError as exc:
        raise NotADatabaseError(str(exc)) from exc
    if not info:
        raise SchemaError(f"table {LOGINS_TABLE} not found")
    columns = tuple(r[1] for r in info)
    if HOSTNAME_COLUMN not in columns:
        raise SchemaError(f"{LOGINS_TABLE} has no {HOSTNAME_COLUMN} column")
    pk_cols = [r for r in info if r[5]]
    if len(pk_cols) != 1 or "INT" not in (pk_cols[0][2] or "").upper():
        raise SchemaError(f"{LOGINS_TABLE} needs a single integer primary key")
    return columns, pk_cols[0][1]


def _registry_key(p: Path) -> str:
    return os.path.realpath(p)


def _chunks(items: list, size: int):
    for i in range(0, len(items), size):
        yield items[i:i + size]
