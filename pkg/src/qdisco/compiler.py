"""Lowering to the native gate set {RZ, H, RZZ} and a greedy qubit-reuse pass.

CRX is rewritten exactly (no global phase) as

    CRX(t)_{c,x} = H_x . RZ_x(t/2) . RZZ_{c,x}(-t/2) . H_x,   RZZ(a) = exp(-i a/2 Z⊗Z)

since H_x CRX H_x is a controlled RZ, and that equals
exp(-i t/4 Z_x) exp(+i t/4 Z_c Z_x).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .circuit import (PARAMETRIC, Circuit, Gate, ParamStore, best_order, embed, gate_matrix,
                      light_cone)

NATIVE = ("RZ", "H", "RZZ")
MARKERS = ("RESET", "DISCARD", "MEASURE0")


class LoweringError(ValueError):
    pass


@dataclass(frozen=True)
class LoweredCircuit:
    """Native gates with literal angles over physical qubits."""

    num_qubits: int
    gates: tuple[Gate, ...]
    measured: tuple[int, ...]
    discarded: frozenset = frozenset()
    depth2q_pre: int | None = None  # two-qubit depth before any reuse
    layout: dict = field(default_factory=dict)  # logical -> physical qubit

    @property
    def depth2q(self) -> int:
        return depth_metrics(self)["depth2q"]

    @property
    def resets(self) -> int:
        return sum(g.kind == "RESET" for g in self.gates)

    def to_json(self) -> dict:
        return {"num_qubits": self.num_qubits, "gates": [g.to_json() for g in self.gates],
                "measured": list(self.measured), "discarded": sorted(self.discarded),
                "layout": {str(k): v for k, v in sorted(self.layout.items())}}


@dataclass(frozen=True)
class ReuseReport:
    qubits_before: int
    qubits_after: int
    depth2q_before: int
    depth2q_after: int
    resets_inserted: int

    def as_row(self) -> dict:
        return {"width_pre": self.qubits_before, "width_post": self.qubits_after,
                "depth2q_pre": self.depth2q_before, "depth2q_post": self.depth2q_after,
                "resets": self.resets_inserted}


def lower(circuit: Circuit, params: ParamStore | None = None) -> LoweredCircuit:
    """Replace RX and CRX by native gates, binding every angle."""
    out: list[Gate] = []
    for g in circuit.gates:
        if g.kind in MARKERS:
            out.append(g)
            continue
        if g.kind in PARAMETRIC:
            try:
                theta = g.bound_angle(params)
            except (ValueError, KeyError) as exc:
                raise LoweringError(f"cannot bind {g.kind} on {g.qubits}: {exc}") from exc
        b = g.block
        if g.kind == "RX":
            q = g.qubits
            out += [Gate("H", q, block=b), Gate("RZ", q, angle=theta, block=b), Gate("H", q, block=b)]
        elif g.kind == "CRX":
            c, x = g.qubits
            out += [Gate("H", (x,), block=b), Gate("RZZ", (c, x), angle=-theta / 2, block=b),
                    Gate("RZ", (x,), angle=theta / 2, block=b), Gate("H", (x,), block=b)]
        elif g.kind in ("RZ", "RZZ"):
            out.append(Gate(g.kind, g.qubits, angle=theta, block=b))
        elif g.kind == "H":
            out.append(g)
        else:
            raise LoweringError(f"no native form for {g.kind}")
    lowered = LoweredCircuit(circuit.num_qubits, tuple(out), tuple(circuit.measured),
                             frozenset(circuit.discarded),
                             layout={q: q for q in range(circuit.num_qubits)})
    return LoweredCircuit(lowered.num_qubits, lowered.gates, lowered.measured, lowered.discarded,
                          depth_metrics(lowered)["depth2q"], lowered.layout)


def depth_metrics(circuit) -> dict:
    """Two-qubit depth (longest chain of overlapping 2q gates), 2q count and width."""
    level: dict[int, int] = {}
    depth = count = 0
    for g in circuit.gates:
        if len(g.qubits) == 2 and g.kind not in MARKERS:
            d = max(level.get(q, 0) for q in g.qubits) + 1
            for q in g.qubits:
                level[q] = d
            depth = max(depth, d)
            count += 1
    return {"depth2q": depth, "count2q": count, "width": circuit.num_qubits}


def _units(gates) -> list[list[int]]:
    """Group gate indices: one unit per block id, else one per gate; markers excluded."""
    units: list[list[int]] = []
    current = None
    for i, g in enumerate(gates):
        if g.kind in MARKERS:
            current = None
            continue
        if g.block >= 0 and current is not None and gates[current[0]].block == g.block:
            current.append(i)
            continue
        current = [i]
        units.append(current)
    return units


def reuse_qubits(lowered: LoweredCircuit, reorder: bool = True,
                 prune: bool = True) -> tuple[LoweredCircuit, ReuseReport]:
    """Map logical qubits onto as few physical qubits as lifetimes allow.

    A logical qubit lives from its first to its last gate; measured qubits live
    to the end. When one dies (it is discarded) its physical qubit joins a
    free queue and the next qubit to start takes the earliest-freed one after
    a Reset. ``prune`` drops gates that cannot reach a measured qubit and
    ``reorder`` schedules commuting gate groups to shorten lifetimes.
    """
    gates = lowered.gates
    units = _units(gates)
    qsets = [tuple(sorted({q for i in u for q in gates[i].qubits})) for u in units]
    keep = list(range(len(units)))
    if prune:
        keep = light_cone(qsets, lowered.measured)
    order = keep
    if reorder and keep:
        order = [keep[j] for j in best_order([qsets[i] for i in keep], lowered.measured)]
    last: dict[int, int] = {}
    for pos, u in enumerate(order):
        for q in qsets[u]:
            last[q] = pos
    measured = set(lowered.measured)
    phys: dict[int, int] = {}
    free: list[int] = []  # FIFO: earliest-freed first
    used: set[int] = set()
    out: list[Gate] = []
    n_phys = 0
    resets = 0

    def assign(q):
        nonlocal n_phys, resets
        if free:
            p = free.pop(0)
            out.append(Gate("RESET", (p,)))
            resets += 1
        else:
            p = n_phys
            n_phys += 1
        phys[q] = p
        used.add(p)

    for q in lowered.measured:
        if q not in last:  # untouched measured qubit
            assign(q)
    for pos, u in enumerate(order):
        for q in qsets[u]:
            if q not in phys:
                assign(q)
        for i in units[u]:
            g = gates[i]
            out.append(Gate(g.kind, tuple(phys[q] for q in g.qubits), g.param, g.angle, g.block))
        for q in qsets[u]:
            if last[q] == pos and q not in measured and q in lowered.discarded:
                out.append(Gate("DISCARD", (phys[q],)))
                free.append(phys[q])
    out += [Gate("MEASURE0", (phys[q],)) for q in lowered.measured]
    discarded = frozenset(p for p in range(n_phys) if p not in {phys[q] for q in measured})
    pre = lowered.depth2q_pre if lowered.depth2q_pre is not None else lowered.depth2q
    result = LoweredCircuit(n_phys, tuple(out), tuple(phys[q] for q in lowered.measured),
                            discarded, pre, dict(phys))
    report = ReuseReport(lowered.num_qubits, n_phys, pre, result.depth2q, resets)
    return result, report


def compile_circuit(circuit: Circuit, params: ParamStore | None = None, reuse: bool = True,
                    reorder: bool = True) -> tuple[LoweredCircuit, ReuseReport]:
    low = lower(circuit, params)
    if not reuse:
        return low, ReuseReport(low.num_qubits, low.num_qubits, low.depth2q_pre,
                                low.depth2q_pre, 0)
    return reuse_qubits(low, reorder=reorder)


# -- small dense reference --------------------------------------------------------

def lowered_unitary(lowered: LoweredCircuit) -> np.ndarray:
    """Dense unitary of the gate part (resets not allowed)."""
    n = lowered.num_qubits
    u = np.eye(2 ** n, dtype=complex)
    for g in lowered.gates:
        if g.kind in ("DISCARD", "MEASURE0"):
            continue
        if g.kind == "RESET":
            raise ValueError("reset is not unitary")
        u = embed(gate_matrix(g.kind, g.angle or 0.0), g.qubits, n) @ u
    return u


def density_probability(lowered: LoweredCircuit) -> float:
    """Exact probability that all measured qubits read 0, by density matrix (small n)."""
    n = lowered.num_qubits
    if n > 12:
        raise ValueError("density reference is limited to 12 qubits")
    rho = np.zeros((2 ** n, 2 ** n), dtype=complex)
    rho[0, 0] = 1
    for g in lowered.gates:
        if g.kind in ("DISCARD", "MEASURE0"):
            continue
        if g.kind == "RESET":
            (q,) = g.qubits
            t = rho.reshape((2,) * (2 * n))
            red = np.trace(t, axis1=q, axis2=n + q)  # 2n-2 axes
            zero = np.zeros((2, 2), dtype=complex)
            zero[0, 0] = 1
            full = np.multiply.outer(red, zero)  # ket q at -2, bra q at -1
            full = np.moveaxis(full, [2 * n - 2, 2 * n - 1], [q, n + q])
            rho = full.reshape(2 ** n, 2 ** n)
            continue
        m = embed(gate_matrix(g.kind, g.angle or 0.0), g.qubits, n)
        rho = m @ rho @ m.conj().T
    t = rho.reshape((2,) * (2 * n))
    idx = [slice(None)] * (2 * n)
    for q in lowered.measured:
        idx[q] = 0
        idx[n + q] = 0
    sub = t[tuple(idx)]
    k = n - len(lowered.measured)
    return float(np.real(np.trace(sub.reshape(2 ** k, 2 ** k))))
