import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qdisco.circuit import Gate, build_circuits, embed, gate_matrix
from qdisco.compiler import LoweredCircuit, compile_circuit, density_probability, lower
from qdisco.noise import (PAULI_PAIRS, NoiseModel, Program, ShotPlan, depolarize,
                          estimate_probability, noise_sweep, noisy_evaluate, normalize_angle,
                          p2q, pauli_pair_probs, sample_pauli_pair, story_key,
                          trajectory_density)
from qdisco.sim import evaluate_pair
from qdisco.story import generate_tier

from conftest import random_params


def test_default_constants():
    m = NoiseModel()
    assert (m.a, m.b, m.c, m.p0, m.s) == (1.651, 0.175, 1.0, 1.38e-3, 1.0)
    assert p2q(0.0) == pytest.approx(0.175 * 1.38e-3, rel=1e-12)
    assert p2q(math.pi / 2) == pytest.approx((1.651 * 0.5 + 0.175) * 1.38e-3, rel=1e-12)
    assert p2q(-math.pi / 2) == p2q(math.pi / 2)


@settings(max_examples=50, deadline=None)
@given(theta=st.floats(-50, 50, allow_nan=False), s=st.floats(0, 100))
def test_p2q_is_periodic_and_scaled(theta, s):
    m = NoiseModel(s=s)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = p2q(theta, m)
        b = p2q(theta + 2 * math.pi, m)
    assert abs(a - b) < 1e-9 and 0 <= a <= 1
    assert -math.pi <= normalize_angle(theta) < math.pi


def test_clamping_warns():
    with pytest.warns(UserWarning):
        assert p2q(math.pi * 0.99, NoiseModel(s=1000)) == 1.0
    with pytest.raises(ValueError):
        NoiseModel(s=-1)
    with pytest.raises(ValueError):
        p2q(float("inf"))


def test_pauli_distribution():
    probs = pauli_pair_probs(0.16)
    assert probs.sum() == pytest.approx(1) and probs[0] == pytest.approx(1 - 0.15)
    rng = np.random.default_rng(0)
    draws = [sample_pauli_pair(0.5, rng) for _ in range(32000)]
    share = {p: draws.count(p) / len(draws) for p in PAULI_PAIRS}
    assert share["II"] == pytest.approx(1 - 15 * 0.5 / 16, abs=0.01)
    assert share["XZ"] == pytest.approx(0.5 / 16, abs=0.005)


def test_full_depolarizing_is_maximally_mixed():
    v = np.random.default_rng(1).normal(size=8) + 1j * np.random.default_rng(2).normal(size=8)
    v /= np.linalg.norm(v)
    rho = depolarize(np.outer(v, v.conj()), 1.0, (0, 1), 3)
    red = np.trace(rho.reshape(4, 2, 4, 2), axis1=0, axis2=2)
    orig = np.trace(np.outer(v, v.conj()).reshape(4, 2, 4, 2), axis1=0, axis2=2)
    assert np.allclose(rho, np.kron(np.eye(4) / 4, red))
    assert np.allclose(red, orig)


def test_trajectories_match_channel_single_rzz():
    theta = 2.1
    gates = (Gate("H", (0,)), Gate("H", (1,)), Gate("RZZ", (0, 1), angle=theta))
    low = LoweredCircuit(2, gates, (0, 1))
    model = NoiseModel(s=200.0)
    rho = trajectory_density(low, model, 20000, seed=3)
    plus = np.full(4, 0.5, dtype=complex)
    pure = embed(gate_matrix("RZZ", theta), (0, 1), 2) @ plus
    exact = depolarize(np.outer(pure, pure.conj()), p2q(theta, model), (0, 1), 2)
    assert 0.5 * np.abs(np.linalg.eigvalsh(rho - exact)).sum() < 0.02


def test_zero_noise_estimates_are_exact():
    p = random_params("two", 5)
    s = generate_tier("two", "simple", (3, 4), 4, rng_seed=2)[-1]
    pos, neg = build_circuits(s)
    # without reuse there are no resets, so every trajectory is the exact state
    est = estimate_probability(lower(pos, p), NoiseModel(s=0), ShotPlan(5))
    assert est == pytest.approx(evaluate_pair(pos, neg, p).p_pos, abs=1e-10)


def test_reset_unravelling_converges():
    p = random_params("two", 1)
    s = next(x for x in generate_tier("two", "simple", (3, 4), 10, rng_seed=5)
             if compile_circuit(build_circuits(x)[0], p)[1].resets_inserted)
    low, _ = compile_circuit(build_circuits(s)[0], p)
    exact = density_probability(low)
    est = estimate_probability(low, NoiseModel(s=0), ShotPlan(4000, mode="shots"))
    assert abs(est - exact) < 4 * math.sqrt(exact * (1 - exact) / 4000) + 1e-3


def test_program_skips_noise_free_units():
    low = lower(build_circuits(generate_tier("two", "simple", (2, 2), 1)[0])[0],
                random_params("two", 0))
    prog = Program(low, NoiseModel())
    assert prog.probs.size == sum(g.kind == "RZZ" for g in low.gates)


def test_estimates_are_reproducible():
    p = random_params("two", 2)
    ss = generate_tier("two", "simple", (3, 3), 3, rng_seed=1)
    plan = ShotPlan(30, rng_seed=7)
    a = [noisy_evaluate(build_circuits(s), p, NoiseModel(s=20), plan, (story_key(s.id),))
         for s in ss]
    b = [noisy_evaluate(build_circuits(s), p, NoiseModel(s=20), plan, (story_key(s.id),))
         for s in ss]
    assert a == b
    with pytest.raises(ValueError):
        ShotPlan(0)
    with pytest.raises(ValueError):
        ShotPlan(mode="tomography")


def test_sweep_rows():
    p = random_params("two", 3)
    ss = generate_tier("two", "simple", (3, 4), 6, rng_seed=4)
    rows, records = noise_sweep(ss, p, [0, 5], ShotPlan(10))
    assert len(records) == 12 and {r["s"] for r in rows} == {0, 5}
    assert all(r["ci_lo"] <= r["accuracy"] <= r["ci_hi"] for r in rows)
    exact = [evaluate_pair(*build_circuits(s), p).answer == s.label for s in ss]
    assert [r["correct"] for r in records if r["s"] == 0] == exact
