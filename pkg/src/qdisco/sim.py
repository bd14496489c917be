"""Exact evaluation of question circuits and adjoint gradients of the QA loss.

The state of the qubits that are currently alive is stored as a purification
``Psi`` of shape ``(2,)*rows + (env,)`` with ``rho = Psi Psi†``. Discarding a
qubit moves its axis into the environment, which is recompressed whenever it
outgrows the row space. While it is small, directions carrying no weight are
dropped, so nearly pure states stay cheap. Forward-only evaluation switches
to an explicit density matrix once the environment is full, since that is
never larger.

Only blocks in the light cone of the measured qubits are simulated, in an
order that keeps few qubits alive (``circuit.greedy_order``).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .circuit import Circuit, FunctorConfig, ParamStore, best_order, light_cone, word_unitary

DEFAULT_QUBIT_LIMIT = int(os.environ.get("QDISCO_QUBIT_LIMIT", 26))
LOSS_EPS = 1e-12
TRUNCATE_MAX_ENV = 64
TRUNCATE_TOL = 1e-13


class ResourceError(RuntimeError):
    pass


# -- models: how a block's matrix is obtained ----------------------------------------

class ParamModel:
    """Blocks realised by the Circuit-4 gates of a ParamStore (cached per word)."""

    def __init__(self, params: ParamStore, config: FunctorConfig = FunctorConfig()):
        self.params = params
        self.config = config
        self._u: dict[str, np.ndarray] = {}
        self._du: dict[str, np.ndarray] = {}

    def unitary(self, word: str, dagger: bool = False) -> np.ndarray:
        if word not in self._u:
            self._u[word], _ = word_unitary(word, self.params, self.config)
        u = self._u[word]
        return u.conj().T if dagger else u

    def derivatives(self, word: str) -> np.ndarray:
        if word not in self._du:
            self._u[word], self._du[word] = word_unitary(word, self.params, self.config, True)
        return self._du[word]


class FixedModel:
    """Blocks given directly as matrices, e.g. hand-built reference models."""

    def __init__(self, unitaries: dict[str, np.ndarray]):
        self.unitaries = {w: np.asarray(u, dtype=complex) for w, u in unitaries.items()}

    def unitary(self, word: str, dagger: bool = False) -> np.ndarray:
        if word == "turns_right" and word not in self.unitaries:
            word, dagger = "turns_left", not dagger
        u = self.unitaries[word]
        return u.conj().T if dagger else u


def as_model(params, config: FunctorConfig = FunctorConfig()):
    if isinstance(params, ParamStore):
        return ParamModel(params, config)
    return params


# -- plans ------------------------------------------------------------------------------

@dataclass(frozen=True)
class Plan:
    """Birth / block / death operations for the text part of a circuit."""

    ops: tuple[tuple[str, int], ...]
    measured: tuple[int, ...]
    peak_rows: int


def make_plan(circuit: Circuit, include_effect: bool = False, channels: bool = False,
              restarts: int = 0) -> Plan:
    """Operation list over the light cone of the measured qubits.

    With ``channels`` a block whose ancillas are born and discarded inside it
    becomes one "channel" op acting through Kraus operators, so its ancillas
    never occupy a row.
    """
    blocks = circuit.blocks if include_effect else circuit.text_blocks
    idx = light_cone(blocks, circuit.measured)

    def qubits(i):
        b = blocks[i]
        return tuple(q for q in b.qubits if q not in b.ancillas) if channels else b.qubits

    sets = [qubits(i) for i in idx]
    order = [idx[j] for j in best_order(sets, circuit.measured, restarts)]
    last: dict[int, int] = {}
    for pos, i in enumerate(order):
        for q in qubits(i):
            last[q] = pos
    ops: list[tuple[str, int]] = []
    alive: set[int] = set()
    peak = 0
    for pos, i in enumerate(order):
        for q in qubits(i):
            if q not in alive:
                alive.add(q)
                ops.append(("birth", q))
        peak = max(peak, len(alive))
        ops.append(("channel" if channels and blocks[i].ancillas else "block", i))
        for q in qubits(i):
            if last[q] == pos and q not in circuit.measured:
                alive.discard(q)
                ops.append(("death", q))
    for q in circuit.measured:  # untouched measured qubits stay |0>
        if q not in alive:
            alive.add(q)
            ops.insert(0, ("birth", q))
    return Plan(tuple(ops), tuple(circuit.measured), max(peak, len(alive)))


def kraus_ops(u: np.ndarray, n_anc: int) -> list[np.ndarray]:
    """Kraus operators of U acting with fresh |0> ancillas (last qubits) then discarded."""
    d_anc = 2 ** n_anc
    d = u.shape[0] // d_anc
    t = u.reshape(d, d_anc, d, d_anc)
    return [t[:, m, :, 0] for m in range(d_anc)]


# -- state engine --------------------------------------------------------------------

class _State:
    """Purified state over alive qubits (rows) and an environment axis."""

    def __init__(self, limit: int):
        self.psi = np.ones((1,), dtype=complex)  # no rows, env dim 1
        self.rows: list[int] = []
        self.limit = limit
        self.rho = None  # explicit density matrix, shape (2,)*2r, once switched

    @property
    def env(self) -> int:
        return self.psi.shape[-1]

    def _check(self, log2size: float):
        if log2size > self.limit + 1e-9:
            raise ResourceError(f"state needs 2^{log2size:.0f} amplitudes, above the "
                                f"qubit limit {self.limit} (set QDISCO_QUBIT_LIMIT to raise it)")

    def birth(self, q: int):
        r = len(self.rows)
        if self.rho is not None:
            self._check(2 * (r + 1))
            zero = np.zeros(2, dtype=complex)
            zero[0] = 1
            rho = np.multiply.outer(self.rho, np.outer(zero, zero))
            # axes: r kets, r bras, new ket, new bra -> move new ket before bras
            self.rho = np.moveaxis(rho, 2 * r, r)
        else:
            self._check(r + 1 + math.log2(self.env))
            self.psi = np.stack([self.psi, np.zeros_like(self.psi)], axis=r)
        self.rows.append(q)

    def apply(self, u: np.ndarray, qubits) -> None:
        k = len(qubits)
        axes = [self.rows.index(q) for q in qubits]
        t = u.reshape((2,) * (2 * k))
        if self.rho is None:
            self.psi = _apply(t, self.psi, axes)
        else:
            r = len(self.rows)
            rho = _apply(t, self.rho, axes)
            self.rho = _apply(t.conj(), rho, [r + a for a in axes])

    def channel(self, kraus, qubits) -> None:
        k = len(qubits)
        axes = [self.rows.index(q) for q in qubits]
        ts = [m.reshape((2,) * (2 * k)) for m in kraus]
        if self.rho is None:
            self.psi = np.concatenate([_apply(t, self.psi, axes) for t in ts], axis=-1)
        else:
            r = len(self.rows)
            self.rho = sum(_apply(t.conj(), _apply(t, self.rho, axes), [r + a for a in axes])
                           for t in ts)

    def death(self, q: int, compress: bool = True):
        a = self.rows.index(q)
        r = len(self.rows)
        if self.rho is not None:
            self.rho = np.trace(self.rho, axis1=a, axis2=r + a)
            self.rows.pop(a)
            return None
        psi = np.moveaxis(self.psi, a, -2)
        self.psi = psi.reshape(psi.shape[:-2] + (2 * self.env,))
        self.rows.pop(a)
        if compress and self.env > 2 ** len(self.rows):
            return self.compress()
        return None

    def compress(self):
        """Shrink the environment to the row-space dimension; returns Q with M = Psi Q."""
        dim = 2 ** len(self.rows)
        m = self.psi.reshape(dim, self.env)
        qm, rm = np.linalg.qr(m.conj().T)  # m† = qm rm
        self.psi = rm.conj().T.reshape(self.psi.shape[:-1] + (rm.shape[0],))
        return qm.conj().T

    def truncate(self):
        """Drop numerically empty environment directions while the environment is
        small; returns Q as in ``compress`` or None when nothing was dropped."""
        if self.rho is not None or not 1 < self.env <= TRUNCATE_MAX_ENV:
            return None
        m = self.psi.reshape(-1, self.env)
        w, v = np.linalg.eigh(m.conj().T @ m)
        keep = w > TRUNCATE_TOL * max(w[-1], 1e-300)
        if keep.all():
            return None
        qm = v[:, keep]
        self.psi = (m @ qm).reshape(self.psi.shape[:-1] + (int(keep.sum()),))
        return qm.conj().T

    def to_density(self):
        r = len(self.rows)
        m = self.psi.reshape(2 ** r, self.env)
        self._check(2 * r)
        self.rho = (m @ m.conj().T).reshape((2,) * (2 * r))
        self.psi = None

    def reduced(self, qubits) -> np.ndarray:
        """Density matrix of ``qubits`` (kron order)."""
        k = len(qubits)
        r = len(self.rows)
        axes = [self.rows.index(q) for q in qubits]
        if self.rho is not None:
            rest = [i for i in range(r) if i not in axes]
            rho = self.rho
            for i in sorted(rest, reverse=True):
                rho = np.trace(rho, axis1=i, axis2=rho.ndim // 2 + i)
            remaining = [i for i in range(r) if i in axes]
            perm = [remaining.index(a) for a in axes]
            rho = np.transpose(rho, perm + [k + p for p in perm])
            return rho.reshape(2 ** k, 2 ** k)
        other = [i for i in range(r + 1) if i not in axes]
        rho = np.tensordot(self.psi, self.psi.conj(), axes=(other, other))
        perm = [sorted(axes).index(a) for a in axes]
        rho = np.transpose(rho, perm + [k + p for p in perm])
        return rho.reshape(2 ** k, 2 ** k)


def _apply(t: np.ndarray, psi: np.ndarray, axes: list[int]) -> np.ndarray:
    k = len(axes)
    out = np.tensordot(t, psi, axes=(list(range(k, 2 * k)), axes))
    return np.moveaxis(out, list(range(k)), axes)


def _run_forward(circuit: Circuit, model, plan: Plan, limit: int, tape: list | None = None,
                 allow_density: bool = True) -> _State:
    st = _State(limit)
    for op, x in plan.ops:
        if op == "birth":
            st.birth(x)
            if tape is not None:
                tape.append(("birth", x))
        elif op == "block":
            b = circuit.blocks[x]
            st.apply(model.unitary(b.word, b.dagger), b.qubits)
            if tape is not None:
                tape.append(("block", x))
        elif op == "channel":
            b = circuit.blocks[x]
            kraus = kraus_ops(model.unitary(b.word, b.dagger), len(b.ancillas))
            st.channel(kraus, [q for q in b.qubits if q not in b.ancillas])
            st.truncate()
            _settle(st, allow_density)
        else:
            if tape is not None:
                axis = st.rows.index(x)
                q = st.death(x)
                tape.append(("death", (x, axis)))
                if q is None:
                    q = st.truncate()
                if q is not None:
                    tape.append(("compress", q))
            else:
                st.death(x, compress=False)
                st.truncate()
                _settle(st, allow_density)
    return st


def _settle(st: _State, allow_density: bool) -> None:
    """Keep the environment no larger than the row space."""
    if st.rho is None and st.env > 2 ** len(st.rows):
        if allow_density and len(st.rows) >= 4:
            st.to_density()
        else:
            st.compress()


# -- public API --------------------------------------------------------------------

@dataclass(frozen=True)
class EvalResult:
    p_pos: float
    p_neg: float
    answer: bool
    softmax: tuple[float, float]
    logits: tuple[float, float] = ()
    id: str | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def answer(p_pos: float, p_neg: float) -> tuple[bool, tuple[float, float]]:
    """Softmax over the two effect probabilities; ties resolve to True."""
    m = max(p_pos, p_neg)
    e_pos, e_neg = math.exp(p_pos - m), math.exp(p_neg - m)
    s_pos = e_pos / (e_pos + e_neg)
    return s_pos >= 0.5, (s_pos, 1.0 - s_pos)


def _effect_prob(model, effect, rho_q: np.ndarray) -> float:
    e = model.unitary(effect.word, effect.dagger)
    return float(np.real((e @ rho_q @ e.conj().T)[0, 0]))


def evaluate(circuit: Circuit, params, config: FunctorConfig | None = None,
             limit: int = DEFAULT_QUBIT_LIMIT) -> float:
    """Probability that the measured qubits are found in |0..0>, discards traced out."""
    model = as_model(params, config or circuit.config)
    plan = make_plan(circuit, include_effect=True, channels=True)
    st = _run_forward(circuit, model, plan, limit)
    rho = st.reduced(circuit.measured)
    return float(np.real(rho[0, 0]))


def _check_pair(pos: Circuit, neg: Circuit):
    if pos.measured != neg.measured or pos.text_blocks != neg.text_blocks:
        raise ValueError("positive and negative circuits must share their text part")


def question_state(circuit: Circuit, params, limit: int = DEFAULT_QUBIT_LIMIT) -> np.ndarray:
    """Reduced density matrix of the measured qubits before the question effect."""
    model = as_model(params, circuit.config)
    st = _run_forward(circuit, model, make_plan(circuit, channels=True), limit)
    return st.reduced(circuit.measured)


def evaluate_pair(pos: Circuit, neg: Circuit, params, limit: int = DEFAULT_QUBIT_LIMIT,
                  id: str | None = None) -> EvalResult:
    """Both effects applied to one shared text state."""
    _check_pair(pos, neg)
    model = as_model(params, pos.config)
    rho_q = question_state(pos, model, limit)
    p_pos = _effect_prob(model, pos.effect, rho_q)
    p_neg = _effect_prob(model, neg.effect, rho_q)
    ans, sm = answer(p_pos, p_neg)
    if pos.negated:
        ans = not ans
    return EvalResult(p_pos, p_neg, ans, sm, (p_pos, p_neg), id)


def bce_loss(p_pos: float, p_neg: float, label: bool) -> tuple[float, float, bool]:
    """Cross-entropy of softmax([p_pos, p_neg]) against ``label``.

    Returns (loss, dloss/dp_pos, clamped); dloss/dp_neg = -dloss/dp_pos.
    """
    _, (s_pos, s_neg) = answer(p_pos, p_neg)
    target = s_pos if label else s_neg
    clamped = target < LOSS_EPS
    loss = -math.log(max(target, LOSS_EPS))
    return loss, s_pos - (1.0 if label else 0.0), clamped


@dataclass
class GradResult:
    loss: float
    grad: np.ndarray  # flat, aligned with ParamStore.values
    p_pos: float
    p_neg: float
    clamped: bool = False
    layout: dict = field(default_factory=dict)

    def word(self, w: str) -> np.ndarray:
        lo, hi = self.layout[w]
        return self.grad[lo:hi]


def gradient(pos: Circuit, neg: Circuit, params: ParamStore, label: bool,
             limit: int = DEFAULT_QUBIT_LIMIT, model: ParamModel | None = None) -> GradResult:
    """Loss and adjoint-mode gradient with respect to every word parameter.

    ``label`` is the stored story label; for negated questions the target for
    the "same" softmax output is flipped accordingly.
    """
    _check_pair(pos, neg)
    model = model or ParamModel(params, pos.config)
    target_same = label != pos.negated
    tape: list = []
    plan = make_plan(pos)
    st = _run_forward(pos, model, plan, limit, tape=tape)
    meas = list(pos.measured)
    rho_q = st.reduced(meas)
    e_pos = model.unitary(pos.effect.word, True)
    e_neg = model.unitary(neg.effect.word, True)
    p_pos = float(np.real((e_pos @ rho_q @ e_pos.conj().T)[0, 0]))
    p_neg = float(np.real((e_neg @ rho_q @ e_neg.conj().T)[0, 0]))
    loss, g, clamped = bce_loss(p_pos, p_neg, target_same)
    g_pos, g_neg = g, -g

    grad = np.zeros_like(params.values)
    # effect parameters: p = (E rho E†)_00 with E = U†, so dp = 2 Re (dU† rho E†)_00
    for word, e, gw in ((pos.effect.word, e_pos, g_pos), (neg.effect.word, e_neg, g_neg)):
        du = model.derivatives(word)
        row = (rho_q @ e.conj().T)[:, 0]
        dp = 2 * np.real(du[:, :, 0].conj() @ row)
        lo, hi = params.layout[word]
        grad[lo:hi] += gw * dp

    # observable on the measured qubits, then one backward sweep
    zero = np.zeros(e_pos.shape[0])
    zero[0] = 1
    o = (g_pos * e_pos.conj().T @ np.outer(zero, zero) @ e_pos
         + g_neg * e_neg.conj().T @ np.outer(zero, zero) @ e_neg)
    phi = st.psi
    axes = [st.rows.index(q) for q in meas]
    lam = _apply(o.reshape((2,) * (2 * len(meas))), phi, axes)
    rows = list(st.rows)
    xsum: dict[tuple[str, bool], np.ndarray] = {}
    for op, x in reversed(tape):
        if op == "block":
            b = pos.blocks[x]
            u = model.unitary(b.word, b.dagger)
            k = len(b.qubits)
            ax = [rows.index(q) for q in b.qubits]
            udag = u.conj().T.reshape((2,) * (2 * k))
            phi = _apply(udag, phi, ax)
            other = [i for i in range(phi.ndim) if i not in ax]
            xm = np.tensordot(phi, lam.conj(), axes=(other, other))
            perm = [sorted(ax).index(a) for a in ax]
            xm = np.transpose(xm, perm + [k + p for p in perm]).reshape(2 ** k, 2 ** k)
            key = b.key
            xsum[key] = xsum.get(key, 0) + xm
            lam = _apply(udag, lam, ax)
        elif op == "compress":
            phi = phi @ x
            lam = lam @ x
        elif op == "death":
            q, axis = x
            env = phi.shape[-1] // 2
            phi = np.moveaxis(phi.reshape(phi.shape[:-1] + (2, env)), -2, axis)
            lam = np.moveaxis(lam.reshape(lam.shape[:-1] + (2, env)), -2, axis)
            rows.insert(axis, q)
        else:  # birth
            axis = rows.index(x)
            phi = np.take(phi, 0, axis=axis)
            lam = np.take(lam, 0, axis=axis)
            rows.pop(axis)
    for (word, dagger), xm in xsum.items():
        du = model.derivatives(word)
        if dagger:
            du = du.conj().transpose(0, 2, 1)
        lo, hi = params.layout[word]
        grad[lo:hi] += 2 * np.real(np.einsum("kij,ji->k", du, xm))
    return GradResult(loss, grad, p_pos, p_neg, clamped, dict(params.layout))


def batch_evaluate(instances, params, parallelism: int = 1,
                   limit: int = DEFAULT_QUBIT_LIMIT) -> list[EvalResult]:
    """Evaluate (id, pos, neg) triples; failures are returned as results with ``error`` set."""
    model_cache = {}

    def one(inst):
        iid, pos, neg = inst
        key = pos.config
        if key not in model_cache:
            model_cache[key] = as_model(params, pos.config)
        try:
            return evaluate_pair(pos, neg, model_cache[key], limit, id=iid)
        except (ResourceError, ValueError, KeyError) as exc:
            return EvalResult(float("nan"), float("nan"), False, (float("nan"),) * 2,
                              id=iid, error=f"{type(exc).__name__}: {exc}")

    instances = list(instances)
    # warm the per-word cache so worker threads only read it
    if instances and isinstance(params, ParamStore):
        m = as_model(params, instances[0][1].config)
        for w in params.words:
            m.unitary(w)
        model_cache[instances[0][1].config] = m
    if parallelism <= 1:
        return [one(i) for i in instances]
    with ThreadPoolExecutor(parallelism) as pool:
        return list(pool.map(one, instances))
