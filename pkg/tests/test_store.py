import shutil
import sqlite3
import subprocess
import sys

import pytest

from credmask.errors import (
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
from credmask.store import (
    READ_ONLY,
    READ_WRITE,
    canonical_login_row,
    check_not_busy,
    init_fixture,
    keystore_digest,
    open_store,
)

from conftest import make_rows


def test_open_store_introspects_schema(store_factory):
    handle = store_factory()
    assert "hostname" in handle.schema
    assert handle.pk_column == "id"
    # oracle: ask sqlite directly
    conn = sqlite3.connect(handle.path)
    names = [r[1] for r in conn.execute("PRAGMA table_info(moz_logins)")]
    conn.close()
    assert list(handle.schema) == names


def test_open_store_rejects_zero_byte_file(tmp_path):
    p = tmp_path / "empty.sqlite"
    p.write_bytes(b"")
    with pytest.raises(NotADatabaseError):
        open_store(p)


def test_open_store_rejects_garbage_file(tmp_path):
    p = tmp_path / "garbage.sqlite"
    p.write_bytes(b"this is not a database, not even close")
    with pytest.raises(NotADatabaseError):
        open_store(p)


def test_open_store_requires_logins_table(tmp_path):
    p = tmp_path / "other.sqlite"
    conn = sqlite3.connect(p)
    conn.execute("CREATE TABLE unrelated (x TEXT)")
    conn.commit()
    conn.close()
    with pytest.raises(SchemaError):
        open_store(p)


def test_open_store_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        open_store(tmp_path / "nope.sqlite")


def test_list_logins_matches_direct_query(store_factory):
    handle = store_factory({"a.example": 2, "b.example": 1})
    rows = handle.list_logins()
    assert [r.hostname for r in rows] == ["a.example", "a.example", "b.example"]
    assert [r.row_id for r in rows] == [1, 2, 3]
    conn = sqlite3.connect(handle.path)
    direct = conn.execute("SELECT id, hostname FROM moz_logins ORDER BY id").fetchall()
    conn.close()
    assert [(r.row_id, r.hostname) for r in rows] == direct


def test_list_logins_empty_table(store_factory):
    handle = store_factory({})
    assert handle.list_logins() == []


def test_reads_are_mode_independent(store_factory):
    rw = store_factory()
    ro = open_store(rw.path, READ_ONLY)
    try:
        assert ro.list_logins() == rw.list_logins()
        assert ro.dump_canonical() == rw.dump_canonical()
    finally:
        ro.close()


def test_init_fixture_round_trips_rows(tmp_path):
    rows = make_rows({"x.example": 3})
    handle = init_fixture(tmp_path / "s.sqlite", rows)
    try:
        assert handle.list_logins() == rows
    finally:
        handle.close()


def test_init_fixture_handles_odd_cell_values(tmp_path):
    rows = [
        canonical_login_row(1, "x.example", encryptedUsername=b"\x00\xff binary",
                            httpRealm=None, encType=-5),
        canonical_login_row(2, "x.example", encType=2.5, guid="ümlaut-世界"),
    ]
    handle = init_fixture(tmp_path / "s.sqlite", rows)
    try:
        assert handle.list_logins() == rows
    finally:
        handle.close()


def test_init_fixture_refuses_existing_path(tmp_path):
    path = tmp_path / "s.sqlite"
    init_fixture(path, []).close()
    with pytest.raises(AlreadyExistsError):
        init_fixture(path, [])


def test_delete_rows_exact_and_counted(store_factory):
    handle = store_factory({"a.example": 2, "b.example": 1})
    assert handle.delete_rows({1, 3}) == 2
    remaining = handle.list_logins()
    assert [r.row_id for r in remaining] == [2]


def test_delete_rows_empty_set_is_noop(store_factory):
    handle = store_factory()
    before = handle.dump_canonical()
    assert handle.delete_rows(set()) == 0
    assert handle.dump_canonical() == before


def test_delete_rows_missing_id_mutates_nothing(store_factory):
    handle = store_factory()
    before = handle.dump_canonical()
    with pytest.raises(RowNotFoundError):
        handle.delete_rows({1, 99})
    assert handle.dump_canonical() == before


def test_delete_requires_write_mode(store_factory):
    rw = store_factory()
    ro = open_store(rw.path, READ_ONLY)
    try:
        with pytest.raises(ReadOnlyStoreError):
            ro.delete_rows({1})
    finally:
        ro.close()


def test_delete_insert_round_trip_is_byte_exact(store_factory):
    handle = store_factory({"a.example": 2, "b.example": 1})
    original = handle.dump_canonical()
    rows = handle.list_logins()
    handle.delete_rows({r.row_id for r in rows})
    assert handle.list_logins() == []
    assert handle.insert_rows(rows) == 3
    assert handle.dump_canonical() == original


def test_insert_rows_empty_is_noop(store_factory):
    handle = store_factory()
    assert handle.insert_rows([]) == 0


def test_insert_conflicting_id_mutates_nothing(store_factory):
    handle = store_factory({"a.example": 2})
    before = handle.dump_canonical()
    with pytest.raises(RowIdConflictError):
        handle.insert_rows([canonical_login_row(1, "z.example")])
    assert handle.dump_canonical() == before


def test_insert_schema_mismatch(store_factory):
    handle = store_factory()
    row = canonical_login_row(50, "z.example")
    bad = type(row)(row_id=50, hostname="z.example", cells=row.cells[:-1])
    with pytest.raises(SchemaMismatchError):
        handle.insert_rows([bad])


def test_list_disabled_hosts(tmp_path):
    handle = init_fixture(tmp_path / "s.sqlite", [], disabled=["c.example"])
    try:
        assert handle.list_disabled_hosts() == ["c.example"]
    finally:
        handle.close()


def test_disabled_hosts_table_absent_gives_empty(tmp_path):
    p = tmp_path / "bare.sqlite"
    conn = sqlite3.connect(p)
    conn.execute("CREATE TABLE moz_logins (id INTEGER PRIMARY KEY, hostname TEXT)")
    conn.commit()
    conn.close()
    handle = open_store(p)
    try:
        assert handle.list_disabled_hosts() == []
    finally:
        handle.close()


def test_disabled_hosts_empty_table(store_factory):
    assert store_factory().list_disabled_hosts() == []


def test_keystore_digest_deterministic(keystore_file):
    assert keystore_digest(keystore_file) == keystore_digest(keystore_file)
    assert len(keystore_digest(keystore_file).digest) == 32


def test_keystore_digest_missing_file(tmp_path):
    with pytest.raises(MissingKeyStoreError):
        keystore_digest(tmp_path / "absent.db")


def test_dump_identical_for_copies(store_factory, tmp_path):
    handle = store_factory({"a.example": 2, "b.example": 1})
    copy_path = tmp_path / "copy.sqlite"
    shutil.copy(handle.path, copy_path)
    other = open_store(copy_path)
    try:
        assert handle.dump_canonical() == other.dump_canonical()
    finally:
        other.close()


def test_dump_changes_after_delete(store_factory):
    handle = store_factory()
    before = handle.dump_canonical()
    handle.delete_rows({1})
    assert handle.dump_canonical() != before


def test_dump_stable_across_processes(store_factory):
    handle = store_factory({"a.example": 2, "b.example": 1})
    script = (
        "import sys; from credmask.store import open_store; "
        f"h = open_store({str(handle.path)!r}); "
        "sys.stdout.buffer.write(h.dump_canonical()); h.close()"
    )
    out = subprocess.run([sys.executable, "-c", script], capture_output=True,
                         check=True, cwd="/root/pkg",
                         env={"PYTHONPATH": "/root/pkg/src", "PATH": "/usr/bin:/bin"})
    assert out.stdout == handle.dump_canonical()


def test_check_not_busy_quiescent(store_factory):
    handle = store_factory()
    check_not_busy(handle.path)


def test_check_not_busy_sees_write_lock(store_factory):
    handle = store_factory()
    blocker = sqlite3.connect(handle.path)
    try:
        blocker.execute("BEGIN IMMEDIATE")
        with pytest.raises(StoreBusyError):
            check_not_busy(handle.path)
    finally:
        blocker.rollback()
        blocker.close()


def test_check_not_busy_sees_sibling_lock_file(store_factory):
    handle = store_factory()
    lock = handle.path.parent / ".parentlock"
    lock.touch()
    with pytest.raises(StoreBusyError, match="parentlock"):
        check_not_busy(handle.path)


def test_single_writer_per_process(store_factory):
    handle = store_factory()
    with pytest.raises(StoreBusyError):
        open_store(handle.path, READ_WRITE)
    handle.close()
    again = open_store(handle.path, READ_WRITE)
    again.close()
