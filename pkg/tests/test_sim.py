import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qdisco.circuit import build_circuits
from qdisco.interpret import clifford_reference
from qdisco.sim import (ResourceError, answer, batch_evaluate, bce_loss, evaluate,
                        evaluate_pair, gradient, kraus_ops, make_plan, question_state)
from qdisco.story import (Dialect, Direction, Question, Sentence, Story, Verb, evaluate_oracle,
                          generate_tier)

from conftest import dense_probability, random_params


def small_stories(dialect, count=12, seed=3):
    hi = 4 if dialect == "two" else 3
    return [s for s in generate_tier(dialect, "simple", (2, hi), count, rng_seed=seed)
            if build_circuits(s)[0].num_qubits <= 11]


@pytest.mark.parametrize("dialect", ["two", "four"])
def test_evaluate_matches_dense_state(dialect):
    for k, s in enumerate(small_stories(dialect)):
        p = random_params(dialect, k)
        pos, neg = build_circuits(s)
        r = evaluate_pair(pos, neg, p)
        assert abs(r.p_pos - dense_probability(pos, p)) < 1e-10
        assert abs(r.p_neg - dense_probability(neg, p)) < 1e-10
        assert abs(evaluate(pos, p) - r.p_pos) < 1e-10


def test_dense_tier_matches_dense_state():
    p = random_params("two", 9)
    for s in generate_tier("two", "superdense", (6, 6), 4, rng_seed=1):
        pos, neg = build_circuits(s)
        if pos.num_qubits <= 13:
            assert abs(evaluate(pos, p) - dense_probability(pos, p)) < 1e-10


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_gradient_matches_finite_differences(seed):
    s = generate_tier("two", "simple", (2, 3), 1, rng_seed=seed)[0]
    p = random_params("two", seed)
    pos, neg = build_circuits(s)
    g = gradient(pos, neg, p, s.label)
    r = evaluate_pair(pos, neg, p)
    assert abs(g.loss - bce_loss(r.p_pos, r.p_neg, s.label != pos.negated)[0]) < 1e-12
    h = 1e-5
    for k in np.flatnonzero(np.abs(g.grad) > 0)[:12]:
        a, b = p.copy(), p.copy()
        a.values[k] += h
        b.values[k] -= h
        ra, rb = evaluate_pair(pos, neg, a), evaluate_pair(pos, neg, b)
        fd = (bce_loss(ra.p_pos, ra.p_neg, s.label)[0] - bce_loss(rb.p_pos, rb.p_neg, s.label)[0])
        assert abs(fd / (2 * h) - g.grad[k]) < 1e-7


def test_words_outside_the_story_have_zero_gradient():
    s = Story((Sentence(Verb.WALKS, 0, direction=Direction.NORTH),
               Sentence(Verb.WALKS, 1, direction=Direction.SOUTH)), (0, 1), Question(0, 1),
              False, Dialect.TWO)
    p = random_params("two", 0)
    pos, neg = build_circuits(s)
    g = gradient(pos, neg, p, s.label)
    assert not g.word("follows").any() and not g.word("turns_around").any()


def test_answer_and_loss():
    assert answer(0.3, 0.3)[0] is True
    ok, (sp, sn) = answer(0.9, 0.1)
    assert ok and abs(sp - 1 / (1 + math.exp(-0.8))) < 1e-12 and abs(sp + sn - 1) < 1e-15
    loss, d, clamped = bce_loss(1.0, 0.0, True)
    assert abs(loss - math.log(1 + math.exp(-1))) < 1e-12 and not clamped and d < 0


@pytest.mark.parametrize("dialect", ["two", "four"])
def test_clifford_reference_reproduces_labels(dialect):
    model, cfg = clifford_reference(dialect)
    for tier, lo in (("simple", 2), ("dense", 6)):
        for s in generate_tier(dialect, tier, (lo, lo + 2), 9, rng_seed=4):
            pos, neg = build_circuits(s, None, cfg)
            r = evaluate_pair(pos, neg, model)
            assert r.answer == s.label == evaluate_oracle(s).answer
            # basis states give a deterministic gap: the wrong effect scores exactly 0
            assert min(r.p_pos, r.p_neg) == pytest.approx(0.0, abs=1e-12)
            assert max(r.p_pos, r.p_neg) > 0.08


def test_question_state_is_a_density():
    s = generate_tier("four", "dense", (6, 6), 1)[0]
    pos, _ = build_circuits(s)
    rho = question_state(pos, random_params("four", 2))
    assert np.allclose(rho, rho.conj().T)
    assert abs(np.trace(rho) - 1) < 1e-10 and np.linalg.eigvalsh(rho).min() > -1e-10


def test_kraus_completeness():
    from qdisco.circuit import unitary_of

    ks = kraus_ops(unitary_of("follows", random_params("two", 5)), 1)
    assert np.allclose(sum(k.conj().T @ k for k in ks), np.eye(4))


def test_resource_limit_and_batch_errors():
    s = generate_tier("two", "superdense", (12, 12), 1)[0]
    pos, neg = build_circuits(s)
    p = random_params("two", 1)
    assert make_plan(pos, channels=True).peak_rows > 2
    with pytest.raises(ResourceError):
        evaluate_pair(pos, neg, p, limit=2)
    res = batch_evaluate([("big", pos, neg)], p, limit=2)
    assert not res[0].ok and "ResourceError" in res[0].error


def test_batch_matches_single():
    p = random_params("two", 6)
    inst = [(s.id, *build_circuits(s)) for s in small_stories("two", 6)]
    many = batch_evaluate(inst, p, parallelism=2)
    for (iid, pos, neg), r in zip(inst, many):
        assert r.id == iid and r.p_pos == pytest.approx(evaluate_pair(pos, neg, p).p_pos)
