"""Shared fixtures and the acceptance-criteria summary printed after a run."""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from qmfe.measurements import apply_noise, bell_pvm, computational_pvm, ejm_pvm, NoiseSpec

EJM_GRID = (0.0, math.pi / 6, math.pi / 4, math.pi / 3, math.pi / 2)

# Hand-written Pauli matrices used by the oracles, independent of the package tables.
HAND_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.diag([1, -1]).astype(complex),
}

_criteria: dict[str, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(ident, text): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        marker = item.get_closest_marker("criterion")
        if marker is not None:
            ident, text = marker.args
            _criteria[item.nodeid] = {"id": ident, "text": text, "outcome": "NOT RUN"}


def pytest_runtest_logreport(report):
    entry = _criteria.get(report.nodeid)
    if entry is None:
        return
    if report.failed:
        entry["outcome"] = "FAIL"
    elif report.when == "call" and report.passed and entry["outcome"] != "FAIL":
        entry["outcome"] = "PASS"
    elif report.skipped:
        entry["outcome"] = "SKIP"


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    grouped: dict[str, dict] = {}
    for entry in _criteria.values():
        slot = grouped.setdefault(entry["id"], {"text": entry["text"], "outcomes": []})
        slot["outcomes"].append(entry["outcome"])
    terminalreporter.section("acceptance criteria")
    for ident in sorted(grouped, key=lambda i: int(i[2:])):
        outcomes = grouped[ident]["outcomes"]
        if "FAIL" in outcomes:
            verdict = "FAIL"
        elif all(o == "PASS" for o in outcomes):
            verdict = "PASS"
        else:
            verdict = "INCOMPLETE"
        terminalreporter.write_line(f"{ident:<5} {verdict:<5} {grouped[ident]['text']} ({len(outcomes)} tests)")


@pytest.fixture(scope="session")
def bell():
    return bell_pvm()


@pytest.fixture(scope="session")
def bell_noisy(bell):
    return apply_noise(bell, NoiseSpec("depolarizing", 0.1))


def builders():
    """Every PVM builder at the sizes the tests exercise."""
    out = [("bell", bell_pvm())]
    out += [(f"ejm({t:.4f})", ejm_pvm(t)) for t in EJM_GRID]
    out += [(f"computational({n})", computational_pvm(n)) for n in (1, 2, 3)]
    return out


def random_state(rng: np.random.Generator, d: int, rank: int | None = None) -> np.ndarray:
    rank = d if rank is None else rank
    g = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def hand_pauli(labels: str) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for c in labels:
        out = np.kron(out, HAND_PAULI[c])
    return out / math.sqrt(2 ** len(labels))


def all_labels(n: int) -> list[str]:
    return ["".join(w) for w in itertools.product("IXYZ", repeat=n)]


def brute_coefficients(ops: np.ndarray) -> np.ndarray:
    """``tr[op P_l]`` for a stack of operators, by materializing every Pauli."""
    n = int(round(math.log2(ops.shape[-1])))
    paulis = np.array([hand_pauli(w) for w in all_labels(n)])
    return np.einsum("kij,lji->kl", ops, paulis)
