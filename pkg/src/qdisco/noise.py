"""Angle-dependent two-qubit depolarising noise, simulated by pure-state trajectories.

Only RZZ gates are noisy. After an RZZ(θ) the pair of qubits suffers a
uniformly random two-qubit Pauli (identity included) with probability
P_2q(θ), so the identity survives with probability 1 - 15 P_2q / 16.
Resets are unravelled as a sampled measurement followed by a flip to |0>.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .circuit import Circuit, FunctorConfig, ParamStore, build_circuits, embed, gate_matrix
from .compiler import LoweredCircuit, compile_circuit
from .sim import ResourceError, _apply, answer, evaluate_pair, make_plan
from .stats import clopper_pearson

PAULIS = "IXYZ"
PAULI_PAIRS = tuple(a + b for a in PAULIS for b in PAULIS)
_PAULI_M = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.diag([1.0 + 0j, -1.0]),
}
TRAJECTORY_QUBIT_LIMIT = 24


@dataclass(frozen=True)
class NoiseModel:
    a: float = 1.651
    b: float = 0.175
    c: float = 1.0
    p0: float = 1.38e-3
    s: float = 1.0

    def __post_init__(self):
        if self.s < 0:
            raise ValueError("noise scaling factor must be non-negative")

    @property
    def p(self) -> float:
        return self.s * self.p0

    def scaled(self, s: float) -> "NoiseModel":
        return NoiseModel(self.a, self.b, self.c, self.p0, s)

    def to_json(self) -> dict:
        # angles enter as a * (|theta|/pi)**c + b
        return {**asdict(self), "form": "a*(|theta|/pi)**c + b"}


@dataclass(frozen=True)
class ShotPlan:
    shots: int = 50
    rng_seed: int = 0
    mode: str = "expectation"  # or "shots": sample measured bits like hardware

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError("a shot plan needs at least one shot")
        if self.mode not in ("expectation", "shots"):
            raise ValueError(f"unknown estimation mode {self.mode!r}")


def normalize_angle(theta: float) -> float:
    """Map to [-pi, pi)."""
    return (float(theta) + math.pi) % (2 * math.pi) - math.pi


def p2q(theta: float, model: NoiseModel = NoiseModel()) -> float:
    if not math.isfinite(theta):
        raise ValueError("angle must be finite")
    t = abs(normalize_angle(theta)) / math.pi
    prob = (model.a * t ** model.c + model.b) * model.p
    if prob > 1:
        warnings.warn(f"two-qubit error probability {prob:.3f} clamped to 1", stacklevel=2)
        prob = 1.0
    return prob


def pauli_pair_probs(p: float) -> np.ndarray:
    """Probabilities of PAULI_PAIRS: II gets 1 - 15p/16, every other pair p/16."""
    probs = np.full(16, p / 16)
    probs[0] = 1 - 15 * p / 16
    return probs


def sample_pauli_pair(p: float, rng: np.random.Generator) -> str:
    if not 0 <= p <= 1:
        raise ValueError("probability must lie in [0, 1]")
    if rng.random() >= p:
        return "II"
    return PAULI_PAIRS[int(rng.integers(16))]


def pauli_matrix(label: str) -> np.ndarray:
    return np.kron(_PAULI_M[label[0]], _PAULI_M[label[1]])


def depolarize(rho: np.ndarray, p: float, qubits, num_qubits: int) -> np.ndarray:
    """Analytic two-qubit channel on ``qubits`` of a kron-ordered density matrix."""
    out = np.zeros_like(rho)
    for label, w in zip(PAULI_PAIRS, pauli_pair_probs(p)):
        m = embed(pauli_matrix(label), tuple(qubits), num_qubits)
        out += w * m @ rho @ m.conj().T
    return out


# -- trajectory program -------------------------------------------------------------

@dataclass
class _Unit:
    qubits: tuple[int, ...]
    full: np.ndarray  # tensor of the whole unit
    segments: list  # (tensor, rzz local qubit positions or None)
    rzz: list  # global rzz indices inside this unit


class Program:
    """A lowered circuit prepared for repeated noisy trajectories."""

    def __init__(self, lowered: LoweredCircuit, model: NoiseModel):
        if lowered.num_qubits > TRAJECTORY_QUBIT_LIMIT:
            raise ResourceError(f"{lowered.num_qubits} physical qubits exceed the trajectory "
                                f"limit {TRAJECTORY_QUBIT_LIMIT}")
        self.n = lowered.num_qubits
        self.measured = lowered.measured
        self.ops: list = []
        probs: list[float] = []
        gates = lowered.gates
        i = 0
        while i < len(gates):
            g = gates[i]
            if g.kind == "RESET":
                self.ops.append(("reset", g.qubits[0]))
                i += 1
                continue
            if g.kind in ("DISCARD", "MEASURE0"):
                i += 1
                continue
            j = i
            while j < len(gates) and gates[j].kind not in ("RESET", "DISCARD", "MEASURE0") and (
                    gates[j].block == g.block and (g.block >= 0 or j == i)):
                j += 1
            self.ops.append(("unit", self._unit(gates[i:j], model, probs)))
            i = j
        self.probs = np.array(probs)

    def _unit(self, gates, model, probs) -> _Unit:
        qubits = tuple(sorted({q for g in gates for q in g.qubits}))
        pos = {q: k for k, q in enumerate(qubits)}
        n = len(qubits)
        shape = (2,) * (2 * n)
        segments, rzz = [], []
        cur = np.eye(2 ** n, dtype=complex)
        full = np.eye(2 ** n, dtype=complex)
        for g in gates:
            m = embed(gate_matrix(g.kind, g.angle or 0.0), tuple(pos[q] for q in g.qubits), n)
            cur = m @ cur
            full = m @ full
            if g.kind == "RZZ":
                rzz.append(len(probs))
                probs.append(p2q(g.angle, model))
                segments.append((cur.reshape(shape), tuple(pos[q] for q in g.qubits)))
                cur = np.eye(2 ** n, dtype=complex)
        segments.append((cur.reshape(shape), None))
        return _Unit(qubits, full.reshape(shape), segments, rzz)

    def run(self, rng: np.random.Generator) -> np.ndarray:
        """One trajectory; returns the final pure state, shape (2,)*n."""
        psi = np.zeros((2,) * self.n, dtype=complex)
        psi[(0,) * self.n] = 1
        hits = rng.random(self.probs.size) < self.probs
        for kind, op in self.ops:
            if kind == "reset":
                psi = _reset(psi, op, rng)
                continue
            axes = list(op.qubits)
            if not op.rzz or not hits[op.rzz].any():
                psi = _apply(op.full, psi, axes)
                continue
            for k, (seg, pair) in enumerate(op.segments):
                psi = _apply(seg, psi, axes)
                if pair is not None and hits[op.rzz[k]]:
                    label = PAULI_PAIRS[int(rng.integers(16))]
                    if label != "II":
                        t = pauli_matrix(label).reshape(2, 2, 2, 2)
                        psi = _apply(t, psi, [op.qubits[pair[0]], op.qubits[pair[1]]])
        return psi

    def zero_probability(self, psi: np.ndarray) -> float:
        idx = [slice(None)] * self.n
        for q in self.measured:
            idx[q] = 0
        return float(np.sum(np.abs(psi[tuple(idx)]) ** 2))

    def sample_zero(self, psi: np.ndarray, rng: np.random.Generator) -> bool:
        return rng.random() < self.zero_probability(psi)


def _reset(psi: np.ndarray, q: int, rng: np.random.Generator) -> np.ndarray:
    p0 = float(np.sum(np.abs(np.take(psi, 0, axis=q)) ** 2))
    keep = 0 if rng.random() < p0 else 1
    part = np.take(psi, keep, axis=q)
    part = part / math.sqrt(p0 if keep == 0 else 1 - p0)
    return np.stack([part, np.zeros_like(part)], axis=q)


def _stream(plan: ShotPlan, key, t: int) -> np.random.Generator:
    return np.random.default_rng([plan.rng_seed, *key, t])


def trajectory_density(lowered: LoweredCircuit, model: NoiseModel, trajectories: int,
                       seed: int = 0) -> np.ndarray:
    """Average of |psi><psi| over trajectories (kron-ordered, small circuits)."""
    prog = Program(lowered, model)
    dim = 2 ** prog.n
    acc = np.zeros((dim, dim), dtype=complex)
    for t in range(trajectories):
        v = prog.run(np.random.default_rng([seed, t])).reshape(dim)
        acc += np.outer(v, v.conj())
    return acc / trajectories


def estimate_probability(lowered: LoweredCircuit, model: NoiseModel, plan: ShotPlan,
                         key=(0,)) -> float:
    """Estimate of P(measured qubits read 0) from ``plan.shots`` trajectories."""
    prog = Program(lowered, model)
    vals = np.empty(plan.shots)
    for t in range(plan.shots):
        rng = _stream(plan, key, t)
        psi = prog.run(rng)
        if plan.mode == "expectation":
            vals[t] = prog.zero_probability(psi)
        else:
            vals[t] = float(prog.sample_zero(psi, rng))
    return float(np.sum(vals) / plan.shots)


@dataclass(frozen=True)
class NoisyResult:
    p_pos: float
    p_neg: float
    answer: bool
    id: str | None = None


def noisy_evaluate(circuits, params: ParamStore | None, model: NoiseModel,
                   plan: ShotPlan, key=(0,), id: str | None = None) -> NoisyResult:
    """Shot estimates for a (positive, negative) pair and the resulting answer.

    ``circuits`` holds either Circuits, which are lowered with ``params`` and
    compiled with qubit reuse, or already lowered circuits.
    """
    pos, neg = circuits
    negated = getattr(pos, "negated", False)
    est = []
    for flag, c in enumerate((pos, neg)):
        if isinstance(c, Circuit):
            c, _ = compile_circuit(c, params)
        est.append(estimate_probability(c, model, plan, (*key, flag)))
    ans, _ = answer(est[0], est[1])
    return NoisyResult(est[0], est[1], ans != negated, id)


def noise_sweep(stories, params: ParamStore, s_list, plan: ShotPlan = ShotPlan(100),
                model: NoiseModel = NoiseModel(), config: FunctorConfig = FunctorConfig(),
                max_rows: int | None = None, skipped: list | None = None):
    """Accuracy per (s, width) with Clopper-Pearson intervals.

    s = 0 uses exact evaluation. With ``max_rows`` instances whose exact
    simulation keeps more qubits alive are dropped for every s, so all scales
    see the same instances; they are appended to ``skipped`` when given.
    Returns (rows, per-instance records).
    """
    prepared = []
    for story in stories:
        pos, neg = build_circuits(story, params, config)
        if max_rows is not None:
            rows = make_plan(pos, channels=True).peak_rows
            if rows > max_rows:
                if skipped is not None:
                    skipped.append({"id": story.id, "width": story.width, "reason": f"rows {rows}"})
                continue
        lowered = (compile_circuit(pos, params)[0], compile_circuit(neg, params)[0])
        prepared.append((story, pos, neg, lowered))
    records = []
    for s in s_list:
        m = model.scaled(s)
        for story, pos, neg, lowered in prepared:
            if s == 0:
                ans = evaluate_pair(pos, neg, params).answer
            else:
                key = (story_key(story.id), int(round(s * 1000)))
                ans = noisy_evaluate(lowered, params, m, plan, key).answer != pos.negated
            records.append({"s": s, "id": story.id, "width": story.width,
                            "correct": bool(ans == story.label)})
    return accuracy_rows(records, "s"), records


def accuracy_rows(records, group: str) -> list[dict]:
    rows = []
    for g in sorted({r[group] for r in records}):
        for w in sorted({r["width"] for r in records if r[group] == g}):
            sel = [r["correct"] for r in records if r[group] == g and r["width"] == w]
            k, n = sum(sel), len(sel)
            lo, hi = clopper_pearson(k, n)
            rows.append({group: g, "width": w, "n": n, "accuracy": k / n,
                         "ci_lo": lo, "ci_hi": hi})
    return rows


def story_key(story_id: str) -> int:
    """Stable integer key for per-instance random streams."""
    return int.from_bytes(hashlib.sha256(story_id.encode()).digest()[:4], "little")
