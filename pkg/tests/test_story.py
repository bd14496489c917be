import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qdisco.story import (DATASET_LAYOUT, TIERS, Dialect, Direction, GenerationError,
                          MalformedStoryError, Question, Sentence, Story, Verb, compute_metrics,
                          evaluate_oracle, generate_dataset, generate_dense, generate_simple,
                          generate_tier, inference_steps, read_jsonl, split_datasets,
                          stratified_subset, write_jsonl)


def walk(a, d):
    return Sentence(Verb.WALKS, a, direction=d)


def story(sentences, q=(0, 1), dialect="four", polarity="same", actors=None):
    actors = actors or tuple(sorted({a for s in sentences for a in s.actors}))
    st_ = Story(tuple(sentences), actors, Question(*q, polarity), True, Dialect(dialect))
    return Story(st_.sentences, actors, st_.question, evaluate_oracle(st_).answer, st_.dialect)


def test_turns_are_counterclockwise_quarter_steps():
    s = story([walk(0, Direction.NORTH), walk(1, Direction.WEST),
               Sentence(Verb.TURNS_LEFT, 0)])
    assert evaluate_oracle(s).directions[0] is Direction.WEST
    assert evaluate_oracle(s).answer
    s = story([walk(0, Direction.NORTH), walk(1, Direction.EAST),
               Sentence(Verb.TURNS_RIGHT, 0)])
    assert evaluate_oracle(s).answer
    s = story([walk(0, Direction.EAST), walk(1, Direction.WEST),
               Sentence(Verb.TURNS_AROUND, 0)])
    assert evaluate_oracle(s).answer


def test_follows_and_opposite_copy_current_direction():
    s = story([walk(0, Direction.NORTH), walk(1, Direction.SOUTH),
               Sentence(Verb.FOLLOWS, 0, 1), Sentence(Verb.TURNS_AROUND, 1)])
    res = evaluate_oracle(s)
    assert res.directions[0] is Direction.SOUTH and res.directions[1] is Direction.NORTH
    assert not res.answer
    s = story([walk(0, Direction.NORTH), walk(1, Direction.SOUTH),
               Sentence(Verb.OPPOSITE, 0, 1)], dialect="two")
    assert not evaluate_oracle(s).answer


def test_negated_question_flips_answer():
    base = [walk(0, Direction.NORTH), walk(1, Direction.NORTH)]
    assert story(base).label
    assert not story(base, polarity="not-same").label


def test_malformed_inputs_rejected():
    with pytest.raises(MalformedStoryError):
        Sentence(Verb.FOLLOWS, 0, 0)
    with pytest.raises(MalformedStoryError):
        Sentence(Verb.WALKS, 0)
    with pytest.raises(MalformedStoryError):
        Question(1, 1)
    bad = Story((walk(0, Direction.NORTH), Sentence(Verb.FOLLOWS, 0, 1)), (0, 1),
                Question(0, 1), True, Dialect.TWO)
    with pytest.raises(MalformedStoryError):
        evaluate_oracle(bad)
    quarter = Story((walk(0, Direction.NORTH), walk(1, Direction.NORTH),
                     Sentence(Verb.TURNS_LEFT, 0)), (0, 1), Question(0, 1), True, Dialect.TWO)
    with pytest.raises(MalformedStoryError):
        evaluate_oracle(quarter)


def test_inference_steps_follow_the_causal_chain():
    s = [walk(0, Direction.NORTH), walk(1, Direction.SOUTH), walk(2, Direction.NORTH),
         Sentence(Verb.TURNS_AROUND, 2), Sentence(Verb.FOLLOWS, 0, 1)]
    # actor 0 <- follows <- walk(1); actor 2 <- around <- walk(2)
    assert inference_steps(s, (0, 2)) == 4
    assert inference_steps(s, (1,)) == 1


@pytest.mark.parametrize("dialect", ["two", "four"])
def test_generated_labels_match_oracle_and_are_balanced(dialect):
    stories = generate_simple(dialect, (2, 8), count=140, rng_seed=5)
    assert len(stories) == 140
    assert all(evaluate_oracle(s).answer == s.label for s in stories)
    for w in range(2, 9):
        labels = [s.label for s in stories if s.width == w]
        assert len(labels) == 20 and sum(labels) == 10
    allowed = {Direction.NORTH, Direction.SOUTH} if dialect == "two" else set(Direction)
    for s in stories:
        assert {x.direction for x in s.sentences if x.verb is Verb.WALKS} <= allowed
        assert [x.subject for x in s.sentences[:s.width]] == list(s.actors)


def test_generation_is_deterministic_per_seed():
    a = generate_tier("two", "dense", (6, 8), 12, rng_seed=3)
    b = generate_tier("two", "dense", (6, 8), 12, rng_seed=3)
    c = generate_tier("two", "dense", (6, 8), 12, rng_seed=4)
    assert [s.to_json() for s in a] == [s.to_json() for s in b]
    assert [s.to_json() for s in a] != [s.to_json() for s in c]


def test_unknown_tier_names_valid_ones():
    with pytest.raises(ValueError, match="valid tiers"):
        generate_tier("two", "medium", (2, 4), 4)


def test_tier_densities_are_ordered():
    means = {}
    for tier in TIERS:
        ss = generate_tier("two", tier, (6, 12), 70, rng_seed=1)
        means[tier] = np.mean([compute_metrics(s).density for s in ss])
    assert means["simple"] < means["deeper"] < means["dense"] < means["superdense"]
    assert means["less-dense"] < means["dense"]
    assert abs(means["simple"] - 0.26) < 0.04


def test_dense_generator_width_range():
    ss = generate_dense("four", (9, 10), "superdense", count=6, rng_seed=2)
    assert sorted({s.width for s in ss}) == [9, 10]


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), dialect=st.sampled_from(["two", "four"]),
       tier=st.sampled_from(TIERS))
def test_json_round_trip(seed, dialect, tier):
    lo = 2 if tier == "simple" else 6
    for s in generate_tier(dialect, tier, (lo, lo + 1), 2, rng_seed=seed):
        again = Story.from_json(json.loads(json.dumps(s.to_json())))
        assert again == s
        assert evaluate_oracle(again).answer == s.label


def test_jsonl_round_trip(tmp_path):
    ss = generate_simple("four", (2, 4), count=9, rng_seed=1)
    write_jsonl(ss, tmp_path / "d.jsonl")
    assert read_jsonl(tmp_path / "d.jsonl") == ss


def test_splits_are_disjoint_and_sized():
    ds = generate_dataset("two", 0, max_width=14)
    sp = split_datasets(ds, "two", 0)
    assert (len(sp["train"]), len(sp["valid-a"])) == (394, 98)
    ids = [s.id for part in sp.values() for s in part]
    assert len(ids) == len(set(ids))
    assert all(s.width <= 8 and s.tier == "simple" for s in sp["train"])
    assert all(s.split == "valid-comp" for s in sp["valid-comp"])
    assert split_datasets(ds, "two", 0)["train"] == sp["train"]


def test_dataset_layout_counts():
    ds = generate_dataset("four", 0, max_width=8)
    expected = sum(c for t, (lo, hi), c in DATASET_LAYOUT[Dialect.FOUR] if hi <= 8)
    assert len(ds) == expected


def test_stratified_subset_is_even_and_deterministic():
    ss = generate_tier("two", "simple", (2, 5), 40) + generate_tier("two", "dense", (6, 7), 20)
    sub = stratified_subset(ss, 18, seed=3)
    assert len(sub) == 18 and len({s.id for s in sub}) == 18
    counts = {}
    for s in sub:
        counts[(s.tier, s.width)] = counts.get((s.tier, s.width), 0) + 1
    assert max(counts.values()) - min(counts.values()) <= 1
    assert stratified_subset(ss, 18, seed=3) == sub
    assert len(stratified_subset(ss, 1000)) == len(ss)


def test_generation_error_type_exists():
    assert issubclass(GenerationError, RuntimeError)
