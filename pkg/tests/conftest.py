import threading

import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


def report(number: int, title: str, ok: bool, detail: str) -> str:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def run_pair(tx_fn, rx_fn, timeout=60.0):
    """Run RX in a thread and TX in the caller; returns (tx_result, rx_result_or_exc)."""
    box = {}

    def target():
        try:
            box["rx"] = rx_fn()
        except BaseException as exc:
            box["rx"] = exc

    th = threading.Thread(target=target, daemon=True)
    th.start()
    try:
        tx = tx_fn()
    except BaseException as exc:
        tx = exc
    th.join(timeout)
    return tx, box.get("rx")
