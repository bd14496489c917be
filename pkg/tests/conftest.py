import numpy as np
import pytest

from qdisco.circuit import ParamStore, gates_unitary


def dense_probability(circuit, params) -> float:
    """P(measured qubits read 0) from the full pure state; discarded qubits
    are simply left unmeasured."""
    n = circuit.num_qubits
    psi = np.zeros(2 ** n, dtype=complex)
    psi[0] = 1
    psi = gates_unitary(circuit.gates, tuple(range(n)), params) @ psi
    t = np.moveaxis(psi.reshape((2,) * n), list(circuit.measured),
                    list(range(len(circuit.measured))))
    return float(np.sum(np.abs(t.reshape(2 ** len(circuit.measured), -1)[0]) ** 2))


def random_params(dialect, seed=0, config=None) -> ParamStore:
    p = ParamStore.zeros(dialect) if config is None else ParamStore.zeros(dialect, config)
    p.values[:] = np.random.default_rng(seed).uniform(0, 2 * np.pi, p.values.size)
    return p


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_small_circuit(rng, max_qubits=4, max_gates=14):
    """Random literal-angle circuit on <= max_qubits qubits, one or two measured
    and the rest discarded. Gates are grouped into random small blocks and
    mostly act on a window of qubits that slides forward in time, so early
    qubits die and can be reused."""
    from qdisco.circuit import Circuit, Gate

    n = int(rng.integers(2, max_qubits + 1))
    k = int(rng.integers(1, min(2, n - 1) + 1))
    late = rng.random() < 0.7  # measured qubits live to the end; late ones free early qubits
    measured = tuple(int(q) for q in (range(n - k, n) if late else rng.choice(n, k, replace=False)))
    gates, block = [], 0
    count = int(rng.integers(3, max_gates + 1))
    for k in range(count):
        kind = str(rng.choice(["RX", "RZ", "H", "CRX", "RZZ"]))
        lo = min(n - 2, k * (n - 1) // count)
        pool = np.arange(n) if rng.random() < 0.2 else np.arange(lo, lo + 2)
        if kind in ("CRX", "RZZ"):
            qs = tuple(int(q) for q in rng.permutation(pool)[:2]) if len(pool) > 1 else (0, 1)
        else:
            qs = (int(rng.choice(pool)),)
        angle = None if kind == "H" else float(rng.uniform(-2 * np.pi, 2 * np.pi))
        if rng.random() < 0.5:
            block += 1
        gates.append(Gate(kind, qs, angle=angle, block=block))
    discarded = frozenset(q for q in range(n) if q not in measured)
    return Circuit(n, tuple(gates), (), discarded, measured, tuple((q,) for q in range(n)))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(mod.RESULTS):
            terminalreporter.write_line(mod.RESULTS[k])
