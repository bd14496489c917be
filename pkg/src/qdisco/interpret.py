"""Interpretability: Bloch data, conditioned two-qubit states, axiom scores,
exact reference models, interventions and bias tables."""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import reduce

import numpy as np
from scipy.linalg import orth, sqrtm

from .circuit import ArityError, FunctorConfig, ParamStore, build_circuits, word_arity
from .sim import FixedModel, ParamModel, evaluate_pair, kraus_ops
from .story import (Dialect, Direction, Sentence, Story, Verb, compute_metrics,
                    evaluate_oracle)

_I = np.eye(2, dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.diag([1.0 + 0j, -1.0])
_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)

REFERENCE_STATES = {
    "0": np.array([1, 0], dtype=complex),
    "1": np.array([0, 1], dtype=complex),
    "+": np.array([1, 1], dtype=complex) / np.sqrt(2),
    "-": np.array([1, -1], dtype=complex) / np.sqrt(2),
    "i": np.array([1, 1j], dtype=complex) / np.sqrt(2),
    "-i": np.array([1, -1j], dtype=complex) / np.sqrt(2),
}
AXIOM_THRESHOLD = 0.9


class InvalidStateError(ValueError):
    pass


@dataclass(frozen=True)
class BlochVector:
    x: float
    y: float
    z: float

    @property
    def r(self) -> float:
        return float(np.sqrt(self.x ** 2 + self.y ** 2 + self.z ** 2))

    def as_tuple(self) -> tuple[float, float, float]:
        return self.x, self.y, self.z


def check_density(rho: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise InvalidStateError("density matrix must be square")
    if abs(np.trace(rho) - 1) > tol:
        raise InvalidStateError(f"trace {np.trace(rho).real:.6g} is not 1")
    if np.abs(rho - rho.conj().T).max() > tol:
        raise InvalidStateError("density matrix is not Hermitian")
    if np.linalg.eigvalsh((rho + rho.conj().T) / 2).min() < -tol:
        raise InvalidStateError("density matrix is not positive semidefinite")
    return rho


def bloch_of_state(rho: np.ndarray) -> BlochVector:
    rho = check_density(rho)
    if rho.shape != (2, 2):
        raise InvalidStateError("Bloch vectors need a single-qubit state")
    return BlochVector(*(float(np.real(np.trace(rho @ p))) for p in (_X, _Y, _Z)))


def _model(params, config):
    if isinstance(params, ParamStore):
        return ParamModel(params, config)
    return params


def gate_trajectories(word: str, params, config: FunctorConfig = FunctorConfig(),
                      powers=(1,)) -> dict[int, dict[str, BlochVector]]:
    """Images of the six reference states under U**k for each k in ``powers``."""
    if word_arity(word, config) != 1 or config.qubits_per_wire != 1:
        raise ArityError(f"{word} does not act on a single qubit")
    u = _model(params, config).unitary(word)
    out = {}
    for k in powers:
        uk = np.linalg.matrix_power(u, k)
        out[k] = {name: bloch_of_state(np.outer(uk @ v, (uk @ v).conj()))
                  for name, v in REFERENCE_STATES.items()}
    return out


# -- conditioned states ---------------------------------------------------------------

def fibonacci_sphere(n: int) -> np.ndarray:
    """n nearly uniform unit vectors."""
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    phi = np.pi * (1 + 5 ** 0.5) * k
    r = np.sqrt(1 - z ** 2)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def state_of_bloch(v) -> np.ndarray:
    """Pure state with Bloch vector ``v`` (unit length)."""
    x, y, z = v
    theta = np.arccos(np.clip(z, -1, 1))
    phi = np.arctan2(y, x)
    return np.array([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)])


@dataclass
class PartialProjectionSurface:
    probes: np.ndarray  # (n, 3) Bloch vectors of the probes, also the colour key
    first: list  # BlochVector of rho_{1,psi} or None where undefined
    second: list  # BlochVector of rho_{psi,2} or None
    prob_first: np.ndarray
    prob_second: np.ndarray

    def rows(self) -> list[dict]:
        out = []
        for k, p in enumerate(self.probes):
            row = {"probe_x": p[0], "probe_y": p[1], "probe_z": p[2],
                   "p1": self.prob_first[k], "p2": self.prob_second[k]}
            for tag, vecs in (("first", self.first), ("second", self.second)):
                v = vecs[k]
                row.update({f"{tag}_{a}": (None if v is None else getattr(v, a)) for a in "xyz"})
            out.append(row)
        return out


def partial_projection(rho: np.ndarray, resolution: int = 400,
                       min_prob: float = 1e-12) -> PartialProjectionSurface:
    """Condition one qubit of a two-qubit state on probe states |psi>."""
    rho = check_density(rho)
    if rho.shape != (4, 4):
        raise InvalidStateError("partial projection needs a two-qubit state")
    t = rho.reshape(2, 2, 2, 2)  # (a, b, a', b')
    probes = fibonacci_sphere(resolution)
    first, second, p1s, p2s = [], [], [], []
    for v in probes:
        psi = state_of_bloch(v)
        # (I ⊗ <psi|) rho (I ⊗ |psi>) and (<psi| ⊗ I) rho (|psi> ⊗ I)
        r1 = np.einsum("b,abcd,d->ac", psi.conj(), t, psi)
        r2 = np.einsum("a,abcd,c->bd", psi.conj(), t, psi)
        for r, store, probs in ((r1, first, p1s), (r2, second, p2s)):
            p = float(np.real(np.trace(r)))
            probs.append(p)
            store.append(bloch_of_state(r / p) if p > min_prob else None)
    return PartialProjectionSurface(probes, first, second, np.array(p1s), np.array(p2s))


# -- channels and axioms ----------------------------------------------------------------

@dataclass(frozen=True)
class AxiomReport:
    axiom: str
    lhs: str
    rhs: str
    metric: str
    value: float
    threshold: float = AXIOM_THRESHOLD

    @property
    def passed(self) -> bool:
        return self.value >= self.threshold

    def row(self) -> dict:
        return {"axiom": self.axiom, "lhs": self.lhs, "rhs": self.rhs, "metric": self.metric,
                "value": self.value, "threshold": self.threshold, "passed": self.passed}


def average_gate_fidelity(u: np.ndarray, v: np.ndarray) -> float:
    d = u.shape[0]
    return float((abs(np.trace(u.conj().T @ v)) ** 2 + d) / (d * (d + 1)))


def choi(kraus) -> np.ndarray:
    """Normalised Choi state of a channel given by Kraus operators."""
    d = kraus[0].shape[1]
    omega = np.eye(d, dtype=complex).reshape(d * d) / np.sqrt(d)
    out = np.zeros((d * d, d * d), dtype=complex)
    for k in kraus:
        v = np.kron(k, np.eye(d)) @ omega
        out += np.outer(v, v.conj())
    return out


def state_fidelity(a: np.ndarray, b: np.ndarray) -> float:
    s = sqrtm(a)
    f = np.real(np.trace(sqrtm(s @ b @ s))) ** 2
    return float(min(max(f, 0.0), 1.0))


def channel_fidelity(k1, k2) -> float:
    """Fidelity of the Choi states of two channels."""
    return state_fidelity(choi(k1), choi(k2))


def compose(*channels):
    """Kraus list of channels applied left to right."""
    return reduce(lambda acc, ch: [b @ a for a in acc for b in ch], channels)


class _Words:
    """Word channels on one or two wires of ``n`` qubits each."""

    def __init__(self, model, n: int, follows_order: str = "object-first"):
        self.model, self.n, self.follows_order = model, n, follows_order
        self.eye = np.eye(2 ** n, dtype=complex)

    def u(self, word, dagger=False):
        return self.model.unitary(word, dagger)

    def on(self, word, wire, dagger=False):
        u = self.u(word, dagger)
        return [np.kron(u, self.eye) if wire == 0 else np.kron(self.eye, u)]

    def follows(self):
        """Kraus operators on (subject, followee) whatever the block order."""
        ks = kraus_ops(self.u("follows"), self.n)
        if self.follows_order == "subject-first":
            return ks
        d = 2 ** self.n
        swap = _permutation(lambda i: (i % d) * d + i // d, d * d)
        return [swap @ k @ swap for k in ks]

    def around(self):
        return self.u("turns_around") if self.has("turns_around") else (
            self.u("turns_left") @ self.u("turns_left"))

    def around_on(self, wire):
        a = self.around()
        return [np.kron(a, self.eye) if wire == 0 else np.kron(self.eye, a)]

    def has(self, word):
        try:
            self.model.unitary(word)
            return True
        except KeyError:
            return False

    def prepared(self, direction: str) -> np.ndarray:
        zero = np.zeros(2 ** self.n, dtype=complex)
        zero[0] = 1
        return self.u(f"walks_{direction}") @ self.u("person") @ zero


def check_axioms(params, dialect, config: FunctorConfig = FunctorConfig(),
                 threshold: float = AXIOM_THRESHOLD) -> list[AxiomReport]:
    """Score the direction axioms for a trained or reference model.

    Unitary identities use the average gate fidelity, channel identities the
    fidelity of Choi states, orthogonality one minus the squared overlap and
    question effects their weight on the matching sameness subspace.
    """
    dialect = Dialect(dialect)
    w = _Words(_model(params, config), config.qubits_per_wire, config.follows_order)
    reports = []
    f = w.follows()
    reports.append(AxiomReport("follows-idempotent", "P1 follows P2. P1 follows P2.",
                               "P1 follows P2.", "choi-fidelity",
                               channel_fidelity(compose(f, f), f), threshold))
    if dialect is Dialect.TWO:
        a = w.u("turns_around")
        reports.append(AxiomReport("around-twice", "around around", "identity", "gate-fidelity",
                                   average_gate_fidelity(a @ a, np.eye(len(a))), threshold))
    else:
        left = w.u("turns_left")
        reports.append(AxiomReport("left-four-times", "left^4", "identity", "gate-fidelity",
                                   average_gate_fidelity(np.linalg.matrix_power(left, 4),
                                                         np.eye(len(left))), threshold))
    opp_lhs = compose(f, w.around_on(0))
    opp_rhs = compose(w.around_on(1), f, w.around_on(1))
    reports.append(AxiomReport(
        "opposite-consistency", "P1 follows P2. P1 turns around.",
        "P2 turns around. P1 follows P2. P2 turns around.", "choi-fidelity",
        channel_fidelity(opp_lhs, opp_rhs), threshold))
    turn = "turns_left" if dialect is Dialect.FOUR else "turns_around"
    lhs = compose(w.on(turn, 1), f)
    rhs = compose(f, w.on(turn, 0), w.on(turn, 1))
    reports.append(AxiomReport(
        f"{turn.split('_')[1]}-through-follows", f"P2 {turn}. P1 follows P2.",
        f"P1 follows P2. P1 {turn}. P2 {turn}.", "choi-fidelity",
        channel_fidelity(lhs, rhs), threshold))
    pairs = [("north", "south")] + ([("east", "west")] if dialect is Dialect.FOUR else [])
    for d1, d2 in pairs:
        ov = abs(np.vdot(w.prepared(d1), w.prepared(d2))) ** 2
        reports.append(AxiomReport(f"{d1}-{d2}-orthogonal", f"|{d1}>", f"|{d2}>",
                                   "1-overlap", float(1 - ov), threshold))
    for word, same in (("same_dir", True), ("not_same_dir", False)):
        reports.append(AxiomReport(f"{word}-form", word, "sameness subspace",
                                   "subspace-weight", question_weight(w, dialect, word, same),
                                   threshold))
    return reports


def _span_projector(vectors) -> np.ndarray:
    basis = orth(np.stack(vectors, axis=1), rcond=1e-10)
    return basis @ basis.conj().T


def question_weight(w: _Words, dialect: Dialect, word: str, same: bool) -> float:
    """Weight of the question state on span{|d>|d'>} with d = d' (or d != d')
    over the prepared direction states.

    With more directions than the wire dimension the prepared states overlap,
    so the weight is taken with the orthogonal projector onto the span.
    """
    names = ["north", "south"] if dialect is Dialect.TWO else ["north", "east", "south", "west"]
    prepared = [w.prepared(d) for d in names]
    pairs = [np.kron(a, b) for i, a in enumerate(prepared) for j, b in enumerate(prepared)
             if (i == j) == same]
    state = w.u(word)[:, 0]  # the effect is <0..0| U†, i.e. a test against U|0..0>
    return float(np.real(np.vdot(state, _span_projector(pairs) @ state)))


def question_coefficients(params, dialect, config: FunctorConfig = FunctorConfig()) -> list[dict]:
    """Overlaps <d|<d'| U|0..0> of each question state with products of the
    prepared direction states."""
    dialect = Dialect(dialect)
    w = _Words(_model(params, config), config.qubits_per_wire, config.follows_order)
    names = ["north", "south"] if dialect is Dialect.TWO else ["north", "east", "south", "west"]
    prepared = [w.prepared(d) for d in names]
    rows = []
    for word in ("same_dir", "not_same_dir"):
        state = w.u(word)[:, 0]
        for i, a in enumerate(names):
            for j, b in enumerate(names):
                c = np.vdot(np.kron(prepared[i], prepared[j]), state)
                rows.append({"word": word, "first": a, "second": b,
                             "re": float(c.real), "im": float(c.imag), "abs2": float(abs(c) ** 2)})
    return rows


# -- exact reference models -------------------------------------------------------------

def _permutation(mapping, dim) -> np.ndarray:
    m = np.zeros((dim, dim), dtype=complex)
    for src in range(dim):
        m[mapping(src), src] = 1
    return m


def _copy_follows(n: int, follows_order: str = "object-first") -> np.ndarray:
    """|s, o, a> -> |o + a, o, s - o> (mod 2**n) on wires of n qubits, with
    the first two wires swapped in the object-first block order.

    On a fresh ancilla the subject becomes a basis copy of the followee and
    the ancilla keeps s - o, so discarding it removes the old subject.
    Differences are used rather than XOR so that the channel commutes with
    turning both actors, and applying it twice equals applying it once.
    """
    d = 2 ** n

    def image(idx):
        x, y, a = idx // (d * d), (idx // d) % d, idx % d
        if follows_order == "subject-first":
            s, o = x, y
            return (((o + a) % d) * d + o) * d + (s - o) % d
        o, s = x, y
        return (o * d + (o + a) % d) * d + (s - o) % d

    return _permutation(image, d ** 3)


def _with_first_column(v: np.ndarray) -> np.ndarray:
    """A unitary whose first column is the unit vector ``v``."""
    m = np.column_stack([v, np.eye(len(v), dtype=complex)])
    q, r = np.linalg.qr(m)
    return q * (r[0, 0] / abs(r[0, 0])).conj() if abs(r[0, 0]) > 0 else q


def clifford_reference(dialect) -> tuple[FixedModel, FunctorConfig]:
    """Exact basis-state model: directions are computational basis states,
    turns are adders mod the number of directions, follows discards the
    subject and copies the followee, questions test for a maximally
    correlated (same) or an anti-correlated (not same) pair."""
    dialect = Dialect(dialect)
    if dialect is Dialect.TWO:
        n, d = 1, 2
        cnot = _permutation(lambda i: i ^ 1 if i >= 2 else i, 4)
        bell = cnot @ np.kron(_H, _I)  # U|00> = (|00> + |11>)/√2
        anti = cnot @ np.kron(_H, _I) @ np.kron(_I, _X)  # U|00> = (|01> + |10>)/√2
        words = {"person": _I, "walks_north": _I, "walks_south": _X, "turns_around": _X,
                 "same_dir": bell, "not_same_dir": anti}
    else:
        n, d = 2, 4

        def adder(k):
            return _permutation(lambda v: (v + k) % 4, 4)

        # U|0000> = (1/2) sum_v |v>|v>
        h2 = np.kron(_H, _H)
        copy = _permutation(lambda i: (i // 4) * 4 + ((i // 4) ^ (i % 4)), 16)
        words = {"person": np.eye(4, dtype=complex), "turns_left": adder(1),
                 "walks_north": adder(int(Direction.NORTH)), "walks_west": adder(int(Direction.WEST)),
                 "walks_south": adder(int(Direction.SOUTH)), "walks_east": adder(int(Direction.EAST)),
                 "same_dir": copy @ np.kron(h2, np.eye(4))}
        unequal = np.array([float(i // 4 != i % 4) for i in range(16)], dtype=complex)
        words["not_same_dir"] = _with_first_column(unequal / np.linalg.norm(unequal))
    words["follows"] = _copy_follows(n)
    return FixedModel(words), FunctorConfig(qubits_per_wire=n)


# -- datasets ---------------------------------------------------------------------------

def _answers(model, stories, config):
    out = []
    for s in stories:
        pos, neg = build_circuits(s, None, config)
        out.append(evaluate_pair(pos, neg, model).answer)
    return out


INTERVENTIONS = {
    Dialect.TWO: ("around", "follows", "opposite"),
    Dialect.FOUR: ("left", "right", "around", "follows", "opposite"),
}
_ACTION_VERB = {"left": Verb.TURNS_LEFT, "right": Verb.TURNS_RIGHT, "around": Verb.TURNS_AROUND,
                "follows": Verb.FOLLOWS, "opposite": Verb.OPPOSITE}


def intervene(story: Story, action: str) -> Story:
    """Append one action on the question actors and relabel with the oracle."""
    verb = _ACTION_VERB[action]
    q = story.question
    if verb.two_actor:
        sentence = Sentence(verb, q.first, q.second)
    else:
        sentence = Sentence(verb, q.second)
    new = replace(story, sentences=story.sentences + (sentence,), id=f"{story.id}+{action}")
    return replace(new, label=evaluate_oracle(new).answer)


def interventions(params, stories, actions=None, config: FunctorConfig = FunctorConfig()):
    """Per action: accuracy before and after, and how individual answers moved."""
    model = _model(params, config)
    stories = list(stories)
    dialect = stories[0].dialect if stories else Dialect.TWO
    actions = actions or INTERVENTIONS[dialect]
    before = [a == s.label for a, s in zip(_answers(model, stories, config), stories)]
    rows = []
    for action in actions:
        changed = [intervene(s, action) for s in stories]
        after = [a == s.label for a, s in zip(_answers(model, changed, config), changed)]
        n = len(stories)
        pct = lambda k: 100.0 * k / n if n else float("nan")  # noqa: E731
        rows.append({
            "action": action, "n": n,
            "correct_before": pct(sum(before)),
            "correct_after": pct(sum(after)),
            "corrected": pct(sum((not b) and a for b, a in zip(before, after))),
            "misclassified": pct(sum(b and not a for b, a in zip(before, after))),
            "unchanged": pct(sum(b == a for b, a in zip(before, after))),
        })
    return rows


def bias_table(params, stories, config: FunctorConfig = FunctorConfig()):
    """Accuracy by unordered final-direction pair of the question actors and by
    inference steps."""
    model = _model(params, config)
    stories = list(stories)
    answers = _answers(model, stories, config)
    by_pair: dict[str, list[bool]] = {}
    by_steps: dict[int, list[bool]] = {}
    for s, a in zip(stories, answers):
        dirs = evaluate_oracle(s).directions
        q = s.question
        pair = "/".join(sorted((dirs[q.first].short, dirs[q.second].short),
                               key=lambda c: "NWSE".index(c)))
        by_pair.setdefault(pair, []).append(a == s.label)
        by_steps.setdefault(compute_metrics(s).inference_steps, []).append(a == s.label)

    def rows(table, key):
        return [{key: k, "n": len(v), "accuracy": sum(v) / len(v)}
                for k, v in sorted(table.items()) if v]

    return rows(by_pair, "pair"), rows(by_steps, "inference_steps")
