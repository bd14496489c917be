"""Semantic functor: text diagrams to parameterised circuits over shared word parameters.

Block matrices use kron order: the first qubit listed in a block is the most
significant bit of the matrix index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .diagram import PERSON, Kind, TextDiagram
from .story import Dialect


class UnknownWordError(KeyError):
    pass


class ArityError(ValueError):
    pass


@dataclass(frozen=True)
class FunctorConfig:
    qubits_per_wire: int = 1
    layers: int = 3
    ansatz: str = "circuit4"
    # qubit order inside a follows block; the ancilla is always last
    follows_order: str = "object-first"

    def __post_init__(self):
        if self.qubits_per_wire < 1:
            raise ValueError("qubits_per_wire must be at least 1")
        if self.ansatz != "circuit4":
            raise ValueError(f"unsupported ansatz {self.ansatz!r}")
        if self.follows_order not in ("object-first", "subject-first"):
            raise ValueError(f"unknown follows order {self.follows_order!r}")

    def to_json(self) -> dict:
        # ladder orientation and ancilla position make checkpoints self-describing
        return {"qubits_per_wire": self.qubits_per_wire, "layers": self.layers,
                "ansatz": self.ansatz, "ladder": "control i -> target i+1",
                "follows_ancilla": "last", "follows_order": self.follows_order}

    @classmethod
    def from_json(cls, data: dict) -> "FunctorConfig":
        if data.get("ladder", "control i -> target i+1") != "control i -> target i+1" or \
                data.get("follows_ancilla", "last") != "last":
            raise ValueError("checkpoint uses a ladder or ancilla layout this build cannot run")
        return cls(data.get("qubits_per_wire", 1), data.get("layers", 3),
                   data.get("ansatz", "circuit4"), data.get("follows_order", "object-first"))


def circuit4_param_count(num_qubits: int, layers: int = 3) -> int:
    return layers * (3 * num_qubits - 1) if num_qubits >= 2 else layers * 2


def vocabulary(dialect, config: FunctorConfig = FunctorConfig()) -> dict[str, int]:
    """Word -> parameter count. turns_right is realised as turns_left† and owns none."""
    dialect = Dialect(dialect)
    n = config.qubits_per_wire
    single = circuit4_param_count(n, config.layers)
    words = {PERSON: 3 if n == 1 else single}
    if dialect is Dialect.TWO:
        words |= {"walks_north": single, "walks_south": single, "turns_around": single}
    else:
        words |= {w: single for w in ("walks_north", "walks_east", "walks_south",
                                      "walks_west", "turns_left")}
    words["follows"] = circuit4_param_count(3 * n, config.layers)
    words["same_dir"] = words["not_same_dir"] = circuit4_param_count(2 * n, config.layers)
    return words


@dataclass
class ParamStore:
    """All word parameters in one flat vector; ``store[word]`` is a view."""

    values: np.ndarray
    layout: dict[str, tuple[int, int]]

    @classmethod
    def zeros(cls, dialect, config: FunctorConfig = FunctorConfig()) -> "ParamStore":
        layout, pos = {}, 0
        for word, n in vocabulary(dialect, config).items():
            layout[word] = (pos, pos + n)
            pos += n
        return cls(np.zeros(pos), layout)

    @classmethod
    def from_dict(cls, words: dict[str, "np.ndarray | list[float]"]) -> "ParamStore":
        layout, chunks, pos = {}, [], 0
        for word, vec in words.items():
            vec = np.asarray(vec, dtype=float)
            layout[word] = (pos, pos + len(vec))
            chunks.append(vec)
            pos += len(vec)
        return cls(np.concatenate(chunks) if chunks else np.zeros(0), layout)

    def __getitem__(self, word: str) -> np.ndarray:
        try:
            lo, hi = self.layout[word]
        except KeyError:
            raise UnknownWordError(word) from None
        return self.values[lo:hi]

    def __contains__(self, word: str) -> bool:
        return word in self.layout

    @property
    def words(self) -> list[str]:
        return list(self.layout)

    def offset(self, word: str) -> int:
        return self.layout[word][0]

    def copy(self) -> "ParamStore":
        return ParamStore(self.values.copy(), dict(self.layout))

    def with_values(self, values: np.ndarray) -> "ParamStore":
        return ParamStore(np.asarray(values, dtype=float), self.layout)

    def as_dict(self) -> dict[str, list[float]]:
        return {w: self[w].tolist() for w in self.layout}

    def to_json(self, **metadata) -> str:
        return json.dumps({"params": self.as_dict(), "metadata": metadata}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> tuple["ParamStore", dict]:
        data = json.loads(text)
        return cls.from_dict(data["params"]), data.get("metadata", {})


# -- gates ------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamRef:
    word: str
    index: int
    sign: int = 1


@dataclass(frozen=True)
class Gate:
    kind: str  # RX RZ CRX H RZZ RESET DISCARD MEASURE0
    qubits: tuple[int, ...]
    param: ParamRef | None = None
    angle: float | None = None
    block: int = -1

    @property
    def two_qubit(self) -> bool:
        return self.kind in ("CRX", "RZZ")

    def bound_angle(self, params: ParamStore | None) -> float:
        if self.param is None:
            if self.angle is None:
                raise ValueError(f"{self.kind} has no angle")
            return self.angle
        if params is None:
            raise ValueError(f"unbound parameter {self.param}")
        return self.param.sign * float(params[self.param.word][self.param.index])

    def to_json(self) -> dict:
        out = {"kind": self.kind, "qubits": list(self.qubits)}
        if self.param is not None:
            out["param"] = [self.param.word, self.param.index, self.param.sign]
        if self.angle is not None:
            out["angle"] = self.angle
        if self.block >= 0:
            out["block"] = self.block
        return out


PARAMETRIC = ("RX", "RZ", "CRX", "RZZ")

_I2 = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Z = np.diag([1.0 + 0j, -1.0])
_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_P1 = np.diag([0.0 + 0j, 1.0])
_P0 = np.diag([1.0 + 0j, 0.0])


def rx(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def rz(theta: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * theta), np.exp(0.5j * theta)])


def crx(theta: float) -> np.ndarray:
    return np.kron(_P0, _I2) + np.kron(_P1, rx(theta))


def rzz(theta: float) -> np.ndarray:
    """exp(-i theta/2 Z⊗Z)."""
    ph = np.exp(-0.5j * theta)
    return np.diag([ph, ph.conjugate(), ph.conjugate(), ph])


def gate_matrix(kind: str, angle: float = 0.0) -> np.ndarray:
    if kind == "RX":
        return rx(angle)
    if kind == "RZ":
        return rz(angle)
    if kind == "CRX":
        return crx(angle)
    if kind == "RZZ":
        return rzz(angle)
    if kind == "H":
        return _H
    raise ValueError(f"no matrix for {kind}")


def gate_generator(kind: str) -> np.ndarray:
    """G with d/dθ U(θ) = G U(θ) = U(θ) G."""
    if kind == "RX":
        return -0.5j * _X
    if kind == "RZ":
        return -0.5j * _Z
    if kind == "CRX":
        return np.kron(_P1, -0.5j * _X)
    if kind == "RZZ":
        return -0.5j * np.kron(_Z, _Z)
    raise ValueError(f"{kind} is not parametric")


def embed(matrix: np.ndarray, targets: tuple[int, ...], num_qubits: int) -> np.ndarray:
    """Lift ``matrix`` acting on ``targets`` to the full kron-ordered space."""
    k = len(targets)
    t = matrix.reshape((2,) * (2 * k))
    full = np.eye(2 ** num_qubits, dtype=complex).reshape((2,) * (2 * num_qubits))
    out = np.tensordot(t, full, axes=(list(range(k, 2 * k)), list(targets)))
    out = np.moveaxis(out, list(range(k)), list(targets))
    return out.reshape(2 ** num_qubits, 2 ** num_qubits)


def gates_unitary(gates, qubits: tuple[int, ...], params: ParamStore | None = None) -> np.ndarray:
    """Dense product of ``gates`` restricted to ``qubits`` (kron order)."""
    pos = {q: i for i, q in enumerate(qubits)}
    n = len(qubits)
    u = np.eye(2 ** n, dtype=complex)
    for g in gates:
        if g.kind in ("DISCARD", "MEASURE0"):
            continue
        if g.kind == "RESET":
            raise ValueError("reset is not unitary")
        m = gate_matrix(g.kind, g.bound_angle(params) if g.kind in PARAMETRIC else 0.0)
        u = embed(m, tuple(pos[q] for q in g.qubits), n) @ u
    return u


def circuit4_block(num_qubits: int, layer_count: int, param_slice, qubits=None,
                   block: int = -1) -> list[Gate]:
    """Circuit-4 layers: RX on each qubit, RZ on each qubit, CRX ladder i -> i+1.

    ``param_slice`` entries are either ParamRef or literal angles.
    """
    if num_qubits < 1:
        raise ArityError("need at least one qubit")
    need = circuit4_param_count(num_qubits, layer_count)
    if len(param_slice) != need:
        raise ArityError(f"{num_qubits}-qubit circuit4 x{layer_count} needs {need} "
                         f"parameters, got {len(param_slice)}")
    qubits = tuple(range(num_qubits)) if qubits is None else tuple(qubits)
    it = iter(param_slice)

    def make(kind, qs):
        p = next(it)
        if isinstance(p, ParamRef):
            return Gate(kind, qs, param=p, block=block)
        return Gate(kind, qs, angle=float(p), block=block)

    gates = []
    for _ in range(layer_count):
        gates += [make("RX", (q,)) for q in qubits]
        gates += [make("RZ", (q,)) for q in qubits]
        gates += [make("CRX", (qubits[i], qubits[i + 1])) for i in range(num_qubits - 1)]
    return gates


def dagger_gates(gates: list[Gate]) -> list[Gate]:
    out = []
    for g in reversed(gates):
        if g.param is not None:
            g = Gate(g.kind, g.qubits, ParamRef(g.param.word, g.param.index, -g.param.sign),
                     block=g.block)
        elif g.angle is not None:
            g = Gate(g.kind, g.qubits, angle=-g.angle, block=g.block)
        out.append(g)
    return out


def word_gates(word: str, qubits: tuple[int, ...], config: FunctorConfig = FunctorConfig(),
               block: int = -1) -> list[Gate]:
    """Gate sequence of ``word`` on ``qubits`` (not daggered)."""
    n = len(qubits)
    if word == PERSON and config.qubits_per_wire == 1:
        refs = [ParamRef(word, i) for i in range(3)]
        return [Gate("RX", qubits, refs[0], block=block), Gate("RZ", qubits, refs[1], block=block),
                Gate("RX", qubits, refs[2], block=block)]
    refs = [ParamRef(word, i) for i in range(circuit4_param_count(n, config.layers))]
    return circuit4_block(n, config.layers, refs, qubits, block)


# -- circuits ------------------------------------------------------------------------

@dataclass(frozen=True)
class Block:
    word: str
    qubits: tuple[int, ...]
    start: int
    stop: int
    role: str  # state | box | effect
    dagger: bool = False
    ancillas: tuple[int, ...] = ()

    @property
    def key(self) -> tuple[str, bool]:
        return self.word, self.dagger


@dataclass(frozen=True)
class Circuit:
    num_qubits: int
    gates: tuple[Gate, ...]
    blocks: tuple[Block, ...]
    discarded: frozenset
    measured: tuple[int, ...]
    wire_qubits: tuple[tuple[int, ...], ...]
    question_word: str = "same_dir"
    negated: bool = False
    config: FunctorConfig = field(default_factory=FunctorConfig)

    def __post_init__(self):
        if set(self.measured) & set(self.discarded):
            raise ValueError("a qubit cannot be both measured and discarded")

    @property
    def words(self) -> set[str]:
        return {b.word for b in self.blocks}

    @property
    def text_blocks(self) -> tuple[Block, ...]:
        return tuple(b for b in self.blocks if b.role != "effect")

    @property
    def effect(self) -> Block | None:
        eff = [b for b in self.blocks if b.role == "effect"]
        return eff[-1] if eff else None

    def block_gates(self, b: Block) -> tuple[Gate, ...]:
        return self.gates[b.start:b.stop]

    def to_json(self) -> dict:
        return {
            "num_qubits": self.num_qubits,
            "gates": [g.to_json() for g in self.gates],
            "blocks": [{"word": b.word, "qubits": list(b.qubits), "gates": [b.start, b.stop],
                        "role": b.role, "dagger": b.dagger, "ancillas": list(b.ancillas)}
                       for b in self.blocks],
            "discarded": sorted(self.discarded),
            "measured": list(self.measured),
            "question_word": self.question_word,
            "config": self.config.to_json(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def functor_apply(diagram: TextDiagram, params: ParamStore | None = None,
                  config: FunctorConfig = FunctorConfig()) -> tuple[Circuit, Circuit]:
    """Map a rewritten diagram to the positive and negative question circuits.

    The two circuits share every gate except the question effect's binding.
    When ``params`` is given, every referenced word must exist in it.
    """
    n = config.qubits_per_wire
    wire_q = {w: tuple(range(i * n, (i + 1) * n)) for i, w in enumerate(diagram.wires)}
    next_q = len(diagram.wires) * n
    wire_q = dict(wire_q)
    gates: list[Gate] = []
    blocks: list[Block] = []
    discarded: set[int] = set()
    effect_wires = None

    def add_block(word, qubits, role, dagger=False, ancillas=()):
        if params is not None and word not in params:
            raise UnknownWordError(word)
        start = len(gates)
        seq = word_gates(word, qubits, config, block=len(blocks))
        gates.extend(dagger_gates(seq) if dagger else seq)
        blocks.append(Block(word, qubits, start, len(gates), role, dagger, ancillas))

    for g in diagram.layers:
        if g.kind is Kind.STATE:
            add_block(g.word, wire_q[g.wires[0]], "state")
        elif g.kind is Kind.BOX:
            if g.word == "follows":
                anc = tuple(range(next_q, next_q + n))
                next_q += n
                subj, obj = wire_q[g.wires[0]], wire_q[g.wires[1]]
                pair = obj + subj if config.follows_order == "object-first" else subj + obj
                qs = pair + anc
                add_block("follows", qs, "box", g.dagger, anc)
                gates.extend(Gate("DISCARD", (q,)) for q in anc)
                discarded.update(anc)
            elif g.word == "turns_right" and diagram.dialect is Dialect.FOUR:
                add_block("turns_left", wire_q[g.wires[0]], "box", not g.dagger)
            elif g.word in ("opposite_direction_of",) or (
                    g.word == "turns_around" and diagram.dialect is Dialect.FOUR):
                raise ValueError(f"diagram must be rewritten before the functor ({g.word})")
            else:
                add_block(g.word, wire_q[g.wires[0]], "box", g.dagger)
        elif g.kind is Kind.SWAP:
            a, b = g.wires
            wire_q[a], wire_q[b] = wire_q[b], wire_q[a]
        elif g.kind is Kind.EFFECT:
            effect_wires = g.wires
        elif g.kind is Kind.DISCARD:
            qs = wire_q[g.wires[0]]
            gates.extend(Gate("DISCARD", (q,)) for q in qs)
            discarded.update(qs)
        # identities emit nothing
    if effect_wires is None:
        raise ValueError("diagram has no question effect")
    measured = wire_q[effect_wires[0]] + wire_q[effect_wires[1]]
    text_gates, text_blocks = list(gates), list(blocks)

    out = []
    for word in ("same_dir", "not_same_dir"):
        gates, blocks = list(text_gates), list(text_blocks)
        add_block(word, measured, "effect", dagger=True)
        gates.extend(Gate("MEASURE0", (q,)) for q in measured)
        out.append(Circuit(next_q, tuple(gates), tuple(blocks), frozenset(discarded), measured,
                           tuple(wire_q[w] for w in diagram.wires), word, diagram.negated, config))
    return out[0], out[1]


def build_circuits(story, params=None, config: FunctorConfig = FunctorConfig()):
    """Story -> rewritten diagram -> (positive, negative) circuits."""
    from .diagram import apply_rewrites, parse_story

    return functor_apply(apply_rewrites(parse_story(story)), params, config)


def unitary_of(word: str, params: ParamStore, config: FunctorConfig = FunctorConfig()) -> np.ndarray:
    """Dense matrix of a word's gate sequence.

    The person state is returned as the 2x2 unitary whose first column is the
    state. For the question words the returned U is the ansatz itself; the
    effect applied in circuits is <0..0| U†. turns_right gives turns_left†.
    Follows acts on (followee, subject, ancilla) with the ancilla untraced, or
    (subject, followee, ancilla) when ``config.follows_order`` is subject-first.
    """
    dagger = False
    if word == "turns_right" and "turns_right" not in params:
        word, dagger = "turns_left", True
    if word not in params:
        raise UnknownWordError(word)
    u, _ = word_unitary(word, params, config)
    return u.conj().T if dagger else u


def word_arity(word: str, config: FunctorConfig = FunctorConfig()) -> int:
    n = config.qubits_per_wire
    if word == "follows":
        return 3 * n
    if word in ("same_dir", "not_same_dir"):
        return 2 * n
    return n


def word_unitary(word: str, params: ParamStore, config: FunctorConfig = FunctorConfig(),
                 derivatives: bool = False):
    """(U, dU) where dU[j] = dU/dθ_j for each parameter of ``word``."""
    k = word_arity(word, config)
    qubits = tuple(range(k))
    gates = word_gates(word, qubits, config)
    mats, gens = [], []
    for g in gates:
        angle = g.bound_angle(params)
        m = gate_matrix(g.kind, angle)
        mats.append(embed(m, g.qubits, k))
        if derivatives:
            gens.append(embed(gate_generator(g.kind), g.qubits, k))
    dim = 2 ** k
    u = reduce(lambda acc, m: m @ acc, mats, np.eye(dim, dtype=complex))
    if not derivatives:
        return u, None
    prefix = [np.eye(dim, dtype=complex)]
    for m in mats:
        prefix.append(m @ prefix[-1])
    suffix = [np.eye(dim, dtype=complex)]
    for m in reversed(mats):
        suffix.append(suffix[-1] @ m)
    suffix.reverse()  # suffix[j] = product of gates after j-1, i.e. mats[j:] reversed
    du = np.zeros((len(params[word]), dim, dim), dtype=complex)
    for j, g in enumerate(gates):
        # U = S_{j+1} G_j P_j with d G_j = gen G_j
        du[g.param.index] += suffix[j + 1] @ (gens[j] @ mats[j]) @ prefix[j]
    return u, du


# -- structure ---------------------------------------------------------------------

def light_cone(blocks, measured) -> list[int]:
    """Indices of blocks that can influence the measured qubits, in original order.

    Everything else only touches qubits that are later discarded.
    """
    relevant = set(measured)
    keep = []
    for i in range(len(blocks) - 1, -1, -1):
        qs = blocks[i].qubits if hasattr(blocks[i], "qubits") else blocks[i]
        if relevant.intersection(qs):
            keep.append(i)
            relevant.update(qs)
    return keep[::-1]


def greedy_order(qubit_sets, keep=(), rng: np.random.Generator | None = None) -> list[int]:
    """A topological order of blocks that keeps few qubits alive at once.

    Blocks on disjoint qubits commute, so any order respecting each qubit's
    own sequence is equivalent. A qubit is alive from its first block to its
    last; qubits in ``keep`` stay alive to the end. At each step the block
    that opens the fewest new qubits net of the ones it finishes is taken,
    pulling in the single-qubit preparation blocks of any qubit it opens.
    With ``rng`` the remaining ties are broken at random instead of by index.
    """
    keep = set(keep)
    per: dict[int, list[int]] = {}
    for i, qs in enumerate(qubit_sets):
        for q in qs:
            per.setdefault(q, []).append(i)
    ptr = {q: 0 for q in per}
    born: set[int] = set()
    order: list[int] = []
    done = [False] * len(qubit_sets)

    def head(q):
        return per[q][ptr[q]] if ptr[q] < len(per[q]) else None

    def prefix_to(q, i):
        """Single-qubit blocks on unborn q that precede block i, or None."""
        out = []
        for j in per[q][ptr[q]:]:
            if j == i:
                return out
            if q in born or len(qubit_sets[j]) != 1:
                return None
            out.append(j)
        return None

    while len(order) < len(qubit_sets):
        best = None
        for q in per:
            i = head(q)
            if i is None:
                continue
            qs = qubit_sets[i]
            if len(qs) == 1 and q in born:
                best = ((-1 << 30, 0, 0, i), [])
                break
            pulled, opens, closes, fresh_rem, ok = [], 0, 0, 0, True
            for a in qs:
                pre = prefix_to(a, i) if head(a) != i else []
                if pre is None:
                    ok = False
                    break
                pulled += pre
                if a not in born:
                    opens += 1
                    fresh_rem += len(per[a]) - ptr[a]
                if per[a][-1] == i and a not in keep:
                    closes += 1
            if not ok:
                continue
            cost = (opens - closes, fresh_rem, rng.random() if rng is not None else 0, i)
            if best is None or cost < best[0]:
                best = (cost, pulled)
        if best is None:  # only prefixes of qubits whose later blocks are blocked remain
            i = min(head(q) for q in per if head(q) is not None)
            best = ((0, 0, 0, i), [])
        (_, _, _, i), pulled = best
        for j in sorted(pulled) + [i]:
            for a in qubit_sets[j]:
                born.add(a)
                ptr[a] += 1
            done[j] = True
            order.append(j)
    return order


def best_order(qubit_sets, keep=(), restarts: int = 8, seed: int = 0) -> list[int]:
    """Best of the deterministic greedy order and ``restarts`` randomised ones.

    Orders are ranked by peak live qubits, then by the sum of 4**alive over
    steps, which tracks the cost of exact mixed-state simulation.
    """
    rng = np.random.default_rng(seed)
    best, best_cost = None, None
    for r in range(restarts + 1):
        order = greedy_order(qubit_sets, keep, rng if r else None)
        cost = order_cost(qubit_sets, order, keep)
        if best_cost is None or cost < best_cost:
            best, best_cost = order, cost
    return best


def order_cost(qubit_sets, order, keep=()) -> tuple[int, int]:
    keep = set(keep)
    last: dict[int, int] = {}
    for pos, i in enumerate(order):
        for q in qubit_sets[i]:
            last[q] = pos
    alive: set[int] = set()
    peak, work = 0, 0
    for pos, i in enumerate(order):
        alive.update(qubit_sets[i])
        peak = max(peak, len(alive))
        work += 4 ** len(alive)
        alive.difference_update(q for q in qubit_sets[i] if last[q] == pos and q not in keep)
    return peak, work


def peak_live(qubit_sets, order, keep=()) -> int:
    """Largest number of simultaneously alive qubits under ``order``."""
    keep = set(keep)
    last: dict[int, int] = {}
    for pos, i in enumerate(order):
        for q in qubit_sets[i]:
            last[q] = pos
    alive: set[int] = set()
    peak = 0
    for pos, i in enumerate(order):
        alive.update(qubit_sets[i])
        peak = max(peak, len(alive))
        alive.difference_update(q for q in qubit_sets[i] if last[q] == pos and q not in keep)
    return peak
