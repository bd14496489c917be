"""Acceptance criteria 1-9. Each test records one PASS/FAIL line, printed in
the pytest summary and when the module is run as a script.

Criteria 3, 4 and 6 train models and take tens of minutes on one core.
"""

import math
import time

import numpy as np
import pytest
from scipy.stats import linregress

from qdisco.circuit import build_circuits
from qdisco.compiler import compile_circuit, density_probability, lower, reuse_qubits
from qdisco.interpret import bias_table, check_axioms, clifford_reference
from qdisco.noise import NoiseModel, ShotPlan, depolarize, noise_sweep, p2q, trajectory_density
from qdisco.planner import random_greedy_path, statevector_bytes, to_tensor_network
from qdisco.sim import bce_loss, evaluate_pair, gradient, make_plan
from qdisco.stats import clopper_pearson
from qdisco.story import (evaluate_oracle, generate_dataset, generate_tier, split_datasets,
                          stratified_subset)
from qdisco.train import TrainConfig, accuracy, init_params, train

from conftest import random_small_circuit

pytestmark = pytest.mark.slow

RESULTS: dict[int, str] = {}


def record(k: int, ok: bool, detail: str) -> None:
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[k] = line
    print(line, flush=True)
    assert ok, line


# -- 1 ------------------------------------------------------------------------------

def test_criterion_1_oracle_clifford_equivalence():
    start = time.perf_counter()
    counts = {}
    for dialect in ("two", "four"):
        pool = [s for s in generate_dataset(dialect, 0, max_width=10) if s.width >= 2]
        stories = stratified_subset(pool, 1000, seed=0)
        model, cfg = clifford_reference(dialect)
        agree = 0
        for s in stories:
            pos, neg = build_circuits(s, None, cfg)
            agree += evaluate_pair(pos, neg, model).answer == s.label == evaluate_oracle(s).answer
        counts[dialect] = (agree, len(stories))
    secs = time.perf_counter() - start
    ok = all(a == n == 1000 for a, n in counts.values()) and secs < 300
    record(1, ok, f"agreement {counts}, {secs:.0f}s (limit 300s)")


# -- 2 ------------------------------------------------------------------------------

REL_TOL = 1e-5
FD_FLOOR = 1e-4  # relative error is taken against max(|fd|, floor)


def test_criterion_2_adjoint_gradients():
    start = time.perf_counter()
    worst, checked = 0.0, 0
    for k in range(100):
        dialect = "two" if k % 2 == 0 else "four"
        s = generate_tier(dialect, "simple", (2, 4), 1, rng_seed=1000 + k)[0]
        p = init_params(k, dialect)
        pos, neg = build_circuits(s)
        g = gradient(pos, neg, p, s.label)
        target = s.label != pos.negated
        h = 1e-5
        for i in range(p.values.size):
            a, b = p.copy(), p.copy()
            a.values[i] += h
            b.values[i] -= h
            ra, rb = evaluate_pair(pos, neg, a), evaluate_pair(pos, neg, b)
            fd = (bce_loss(ra.p_pos, ra.p_neg, target)[0]
                  - bce_loss(rb.p_pos, rb.p_neg, target)[0]) / (2 * h)
            worst = max(worst, abs(g.grad[i] - fd) / max(abs(fd), FD_FLOOR))
            checked += 1
    secs = time.perf_counter() - start
    record(2, worst < REL_TOL and secs < 600,
           f"max relative error {worst:.2e} over {checked} entries of 100 instances, {secs:.0f}s")


# -- 3 ------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def two_dir():
    """Five TwoDir seeds with lr 0.005 and batch 1 for up to 50 epochs; each
    run stops early once ValidA reaches 98%."""
    splits = split_datasets(generate_dataset("two", 0, max_width=14), "two", 0)
    runs = []
    for seed in range(5):
        res = train(splits, TrainConfig(learning_rate=0.005, batch_size=1, epochs=50, seed=seed,
                                        stop_valid_accuracy=0.98))
        runs.append(res)
    best = max(runs, key=lambda r: (r.best.valid_accuracy, -r.best.loss))
    return splits, runs, best


def test_criterion_3_two_dir_training(two_dir):
    splits, runs, best = two_dir
    reached = [r.best.valid_accuracy >= 0.98 for r in runs]
    comp = [s for s in splits["valid-comp"] if 9 <= s.width <= 14]
    rep = accuracy(best.params, stratified_subset(comp, 300, seed=0), max_rows=12)
    lo, hi = rep.interval
    trend = rep.trend()
    ok = sum(reached) >= 3 and rep.overall >= 0.90 and trend.hi >= 0
    record(3, ok, f"{sum(reached)}/5 seeds reach ValidA>=0.98 "
                  f"({[round(r.best.valid_accuracy, 3) for r in runs]}); ValidComp widths 9-14 "
                  f"acc {rep.overall:.3f} [{lo:.3f}, {hi:.3f}] on {len(rep.records)} "
                  f"({len(rep.skipped)} over 12 live qubits skipped); slope {trend.slope:.4f} "
                  f"CI [{trend.lo:.4f}, {trend.hi:.4f}]")


# -- 4 ------------------------------------------------------------------------------

FOUR_EPOCHS = 60


def test_criterion_4_four_dir_pattern():
    stories = generate_dataset("four", 0, max_width=10)
    splits = split_datasets(stories, "four", 0)
    cfg = TrainConfig("four", learning_rate=0.02840955, batch_size=256, epochs=FOUR_EPOCHS,
                      seed=1151618203)
    res = train(splits, cfg)
    ax = {r.axiom: r.value for r in check_axioms(res.params, "four")}
    held_out = splits["valid-a"] + [s for s in splits["valid-comp"] if s.width <= 10]
    pairs, _ = bias_table(res.params, held_out)
    acc = {r["pair"]: r["accuracy"] for r in pairs}
    fails = ax["left-through-follows"] < 0.9
    idem = ax["follows-idempotent"] > 0.9
    bias = max(acc["N/W"], acc["S/E"]) < min(acc["N/N"], acc["S/S"])
    record(4, fails and idem and bias,
           f"epoch {res.best.epoch} ValidA {res.best.valid_accuracy:.3f}; left-through-follows "
           f"{ax['left-through-follows']:.3f} (<0.9), follows-idempotent "
           f"{ax['follows-idempotent']:.3f} (>0.9); accuracy N/W {acc['N/W']:.3f} "
           f"S/E {acc['S/E']:.3f} vs N/N {acc['N/N']:.3f} S/S {acc['S/S']:.3f}")


# -- 5 ------------------------------------------------------------------------------

def test_criterion_5_noise_channel():
    from qdisco.circuit import Gate, embed, gate_matrix
    from qdisco.compiler import LoweredCircuit

    theta = 1.3
    low = LoweredCircuit(2, (Gate("H", (0,)), Gate("RX", (1,), angle=0.4),
                             Gate("RZZ", (0, 1), angle=theta)), (0, 1))
    model = NoiseModel(s=100.0)  # visible noise: p2q ~ 0.12
    rho = trajectory_density(low, model, 100_000, seed=0)
    psi = np.zeros(4, dtype=complex)
    psi[0] = 1
    psi = embed(gate_matrix("H", 0.0), (0,), 2) @ psi
    psi = embed(gate_matrix("RX", 0.4), (1,), 2) @ psi
    psi = embed(gate_matrix("RZZ", theta), (0, 1), 2) @ psi
    exact = depolarize(np.outer(psi, psi.conj()), p2q(theta, model), (0, 1), 2)
    dist = 0.5 * np.abs(np.linalg.eigvalsh(rho - exact)).sum()
    m = NoiseModel()
    consts = (f"{m.a:.6g}", f"{m.b:.6g}", f"{m.p0:.6g}") == ("1.651", "0.175", "0.00138")
    record(5, dist < 0.01 and consts,
           f"trace distance {dist:.4f} at 1e5 trajectories (p={p2q(theta, model):.4f}); "
           f"a={m.a} b={m.b} p0={m.p0}")


# -- 6 ------------------------------------------------------------------------------

def test_criterion_6_noise_monotone(two_dir):
    splits, _, best = two_dir
    comp = [s for s in splits["valid-comp"] if 9 <= s.width <= 14]
    # the exact noiseless reference needs a row cap, so draw the subset from
    # instances within it; noise_sweep applies the same cap
    pool = stratified_subset(comp, len(comp), seed=1)
    chosen = [s for s in pool if make_plan(build_circuits(s)[0], channels=True).peak_rows <= 12]
    chosen = stratified_subset(chosen, 200, seed=1)
    _, records = noise_sweep(chosen, best.params, [0, 1, 50], ShotPlan(50), max_rows=12)
    acc, ci = {}, {}
    for s in (0, 1, 50):
        ok = [r["correct"] for r in records if r["s"] == s]
        acc[s] = sum(ok) / len(ok)
        ci[s] = clopper_pearson(sum(ok), len(ok))
    separated = ci[50][1] < ci[1][0]
    near = ci[0][0] <= acc[1] <= ci[0][1]
    record(6, len(chosen) == 200 and acc[50] < acc[1] and separated and near,
           f"n={len(chosen)}: noiseless {acc[0]:.3f} {_fmt(ci[0])}, s=1 {acc[1]:.3f} "
           f"{_fmt(ci[1])}, s=50 {acc[50]:.3f} {_fmt(ci[50])}")


def _fmt(ci):
    return f"[{ci[0]:.3f}, {ci[1]:.3f}]"


# -- 7 ------------------------------------------------------------------------------

def test_criterion_7_qubit_reuse():
    rng = np.random.default_rng(7)
    worst, with_resets = 0.0, 0
    for _ in range(200):
        low = lower(random_small_circuit(rng))
        out, rep = reuse_qubits(low)
        worst = max(worst, abs(density_probability(out) - density_probability(low)))
        with_resets += rep.resets_inserted > 0
    params = init_params(0)  # widths and depths do not depend on the angles
    stories = generate_tier("two", "dense", (21, 30), 100, rng_seed=0)
    fits = sum(compile_circuit(build_circuits(s)[0], params)[1].qubits_after <= 20
               for s in stories)
    lo, hi = clopper_pearson(fits, len(stories))
    record(7, worst < 1e-10 and fits / len(stories) >= 0.30,
           f"max |dP| {worst:.1e} on 200 circuits ({with_resets} reuse a qubit); "
           f"{fits}/{len(stories)} dense widths 21-30 fit 20 qubits [{lo:.3f}, {hi:.3f}]")


# -- 8 ------------------------------------------------------------------------------

def test_criterion_8_planner():
    widths, flops, monotone, within = [], [], True, True
    repeats = (1, 4, 16, 64)
    for w in range(6, 17):
        for s in generate_tier("two", "dense", (w, w), 3, rng_seed=w):
            net = to_tensor_network(build_circuits(s)[0], with_data=False)
            hist: list = []
            path = random_greedy_path(net, repeats[-1], 1.0, 0, hist)
            costs = [random_greedy_path(net, r, 1.0, 0).total_flops for r in repeats]
            monotone &= all(b <= a for a, b in zip(hist, hist[1:]))
            monotone &= all(b <= a for a, b in zip(costs, costs[1:]))
            within &= path.peak_memory <= statevector_bytes(w)
            widths.append(w)
            flops.append(math.log10(path.total_flops))
    fit = linregress(widths, flops)
    record(8, monotone and within and fit.slope > 0,
           f"monotone in repeats on {len(widths)} networks: {monotone}; memory within "
           f"statevector: {within}; log10 FLOPs slope {fit.slope:.3f} per actor")


# -- 9 ------------------------------------------------------------------------------

def test_criterion_9_clopper_pearson():
    worst = 0.0
    for n in (1, 2, 3, 7, 10, 50, 100, 200, 1000, 10_000):
        lo0, hi0 = clopper_pearson(0, n)
        lon, hin = clopper_pearson(n, n)
        worst = max(worst, abs(lo0), abs(hi0 - (1 - 0.025 ** (1 / n))),
                    abs(lon - 0.025 ** (1 / n)), abs(hin - 1))
    record(9, worst < 1e-12, f"max deviation from closed forms {worst:.1e}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
