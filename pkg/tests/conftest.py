import hashlib
import os

import pytest

from credmask.crypto import KdfParams
from credmask.store import canonical_login_row, init_fixture

# Cheapest valid Argon2id settings; vault tests would crawl at production cost.
TINY_KDF = dict(memory_bytes=8 * 1024, iterations=1, parallelism=1)
LIGHT_KDF = dict(memory_bytes=8 * 1024 * 1024, iterations=1, parallelism=1)


@pytest.fixture
def tiny_kdf():
    return KdfParams.generate(**TINY_KDF)


@pytest.fixture
def light_kdf():
    return KdfParams.generate(**LIGHT_KDF)


def make_rows(host_counts):
    """Sequential-id canonical rows, e.g. make_rows({"a.example": 2, "b.example": 1})."""
    rows = []
    next_id = 1
    for host, count in host_counts.items():
        for _ in range(count):
            rows.append(canonical_login_row(next_id, host))
            next_id += 1
    return rows


def ten_host_counts(rows_total=25, hosts=10):
    counts = {}
    for i in range(rows_total):
        host = f"host{i % hosts:02d}.example"
        counts[host] = counts.get(host, 0) + 1
    return counts


@pytest.fixture
def store_factory(tmp_path):
    """Create fixture stores under unique paths inside the test's tmp dir."""
    made = []

    def factory(host_counts=None, name=None, disabled=()):
        if host_counts is None:
            host_counts = {"a.example": 2, "b.example": 1}
        path = tmp_path / (name or f"store{len(made)}") / "signons.sqlite"
        handle = init_fixture(path, make_rows(host_counts), disabled)
        made.append(handle)
        return handle

    yield factory
    for handle in made:
        handle.close()


@pytest.fixture
def keystore_file(tmp_path):
    path = tmp_path / "key3.db"
    path.write_bytes(os.urandom(1024))
    return path


def file_sha256(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """One printed pass/fail line per acceptance criterion."""
    outcome = yield
    report = outcome.get_result()
    number = getattr(item.function, "acceptance_number", None)
    if number is not None and report.when == "call":
        verdict = "PASS" if report.passed else "FAIL"
        title = getattr(item.function, "acceptance_title", "")
        print(f"\nACCEPTANCE {number}: {verdict} - {title}")
