import pytest

from arma.config import Config
from arma.crypto import deterministic_keys
from arma.model import Transaction, client_signing_bytes


@pytest.fixture
def cfg():
    return Config(n_parties=4, f=1, n_shards=2, sig_scheme="hmac", sample_size=2, batch_max_txs=4)


def keyset(cfg, seed=1):
    return deterministic_keys(seed, cfg.n_parties, cfg.sig_scheme)


def signed_tx(client_key, payload: bytes) -> Transaction:
    return Transaction(payload, client_key.sign(client_signing_bytes(payload)))


# acceptance criteria: number -> (passed, title, detail)
ACCEPTANCE: dict[int, tuple[bool, str, str]] = {}


@pytest.fixture
def criterion():
    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE[number] = (passed, title, detail)
        print(f"criterion {number} {'PASS' if passed else 'FAIL'} {title}: {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in range(1, 11):
        if n in ACCEPTANCE:
            ok, title, detail = ACCEPTANCE[n]
            tr.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        else:
            tr.write_line(f"criterion {n:2d} NOT RUN")
