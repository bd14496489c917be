"""Synthetic "following" stories: generation, ground-truth oracle and metrics.

Directions are integers mod 4 laid out counterclockwise on the compass
(north=0, west=1, south=2, east=3), so ``turns left`` adds 1, ``turns
around`` adds 2 and ``turns right`` adds 3.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np


class MalformedStoryError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


class Dialect(str, enum.Enum):
    TWO = "two"
    FOUR = "four"


class Direction(enum.IntEnum):
    NORTH = 0
    WEST = 1
    SOUTH = 2
    EAST = 3

    @property
    def short(self) -> str:
        return self.name[0]


class Verb(str, enum.Enum):
    WALKS = "walks"
    TURNS_LEFT = "turns_left"
    TURNS_RIGHT = "turns_right"
    TURNS_AROUND = "turns_around"
    FOLLOWS = "follows"
    OPPOSITE = "opposite_direction_of"

    @property
    def two_actor(self) -> bool:
        return self in (Verb.FOLLOWS, Verb.OPPOSITE)


TURN_OFFSET = {Verb.TURNS_LEFT: 1, Verb.TURNS_AROUND: 2, Verb.TURNS_RIGHT: 3}

DIRECTIONS = {
    Dialect.TWO: (Direction.NORTH, Direction.SOUTH),
    Dialect.FOUR: (Direction.NORTH, Direction.EAST, Direction.SOUTH, Direction.WEST),
}
SINGLE_ACTIONS = {
    Dialect.TWO: (Verb.TURNS_AROUND,),
    Dialect.FOUR: (Verb.TURNS_LEFT, Verb.TURNS_RIGHT, Verb.TURNS_AROUND),
}
TWO_ACTOR_ACTIONS = (Verb.FOLLOWS, Verb.OPPOSITE)

TIERS = ("simple", "deeper", "less-dense", "dense", "superdense")
DENSE_TIERS = ("less-dense", "dense", "superdense")

NAMES = (
    "Alice", "Bob", "John", "Mary", "Kate", "Tom", "Emma", "Liam", "Olivia", "Noah",
    "Ava", "Mia", "Lucas", "Ella", "Leo", "Zoe", "Ivan", "Nina", "Omar", "Sara",
    "Hugo", "Iris", "Paul", "Ruth", "Sam", "Tara", "Umar", "Vera", "Will", "Yara",
)


@dataclass(frozen=True)
class Sentence:
    verb: Verb
    subject: int
    obj: int | None = None
    direction: Direction | None = None

    def __post_init__(self):
        if self.verb is Verb.WALKS and self.direction is None:
            raise MalformedStoryError("walks sentence needs a direction")
        if self.verb.two_actor:
            if self.obj is None:
                raise MalformedStoryError(f"{self.verb.value} needs an object actor")
            if self.obj == self.subject:
                raise MalformedStoryError("an actor cannot follow itself")

    @property
    def actors(self) -> tuple[int, ...]:
        return (self.subject, self.obj) if self.verb.two_actor else (self.subject,)

    def to_json(self) -> dict:
        out = {"verb": self.verb.value, "subject": self.subject}
        if self.obj is not None:
            out["object"] = self.obj
        if self.direction is not None:
            out["direction"] = self.direction.name.lower()
        return out

    @classmethod
    def from_json(cls, data: dict) -> "Sentence":
        direction = data.get("direction")
        return cls(
            Verb(data["verb"]),
            int(data["subject"]),
            data.get("object"),
            Direction[direction.upper()] if direction else None,
        )

    def render(self, names: Sequence[str] = NAMES) -> str:
        s = names[self.subject]
        if self.verb is Verb.WALKS:
            return f"{s} walks {self.direction.name.lower()}."
        if self.verb is Verb.FOLLOWS:
            return f"{s} follows {names[self.obj]}."
        if self.verb is Verb.OPPOSITE:
            return f"{s} goes in the opposite direction of {names[self.obj]}."
        return f"{s} {self.verb.value.replace('_', ' ')}."


@dataclass(frozen=True)
class Question:
    first: int
    second: int
    polarity: str = "same"  # or "not-same"

    def __post_init__(self):
        if self.polarity not in ("same", "not-same"):
            raise MalformedStoryError(f"unknown polarity {self.polarity!r}")
        if self.first == self.second:
            raise MalformedStoryError("question actors must be distinct")


@dataclass(frozen=True)
class Story:
    sentences: tuple[Sentence, ...]
    actors: tuple[int, ...]
    question: Question
    label: bool
    dialect: Dialect
    id: str = ""
    tier: str = "simple"
    seed: int | None = None
    split: str | None = None

    @property
    def width(self) -> int:
        return len(self.actors)

    @property
    def depth(self) -> int:
        return len(self.sentences)

    def render(self) -> str:
        text = " ".join(s.render() for s in self.sentences)
        q = self.question
        rel = "goes in the same direction as" if q.polarity == "same" else (
            "does not go in the same direction as")
        return f"{text} Q: {NAMES[q.first]} {rel} {NAMES[q.second]}?"

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "dialect": self.dialect.value,
            "tier": self.tier,
            "actors": list(self.actors),
            "sentences": [s.to_json() for s in self.sentences],
            "question": [self.question.first, self.question.second, self.question.polarity],
            "label": self.label,
            "metrics": compute_metrics(self).to_json(),
            "split": self.split,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Story":
        q = data["question"]
        return cls(
            sentences=tuple(Sentence.from_json(s) for s in data["sentences"]),
            actors=tuple(data["actors"]),
            question=Question(int(q[0]), int(q[1]), q[2]),
            label=bool(data["label"]),
            dialect=Dialect(data["dialect"]),
            id=data.get("id", ""),
            tier=data.get("tier", "simple"),
            seed=data.get("seed"),
            split=data.get("split"),
        )


@dataclass(frozen=True)
class StoryMetrics:
    width: int
    depth: int
    density: float
    inference_steps: int

    def to_json(self) -> dict:
        return {"width": self.width, "depth": self.depth,
                "density": self.density, "inference_steps": self.inference_steps}


@dataclass(frozen=True)
class OracleResult:
    directions: dict[int, Direction]
    same: bool
    answer: bool


def evaluate_oracle(story: Story) -> OracleResult:
    """Run the deterministic direction semantics over ``story``."""
    known = set(story.actors)
    dirs: dict[int, int] = {}
    for k, s in enumerate(story.sentences):
        for a in s.actors:
            if a not in known:
                raise MalformedStoryError(f"sentence {k}: unknown actor {a}")
        if s.verb is Verb.WALKS:
            if story.dialect is Dialect.TWO and s.direction not in DIRECTIONS[Dialect.TWO]:
                raise MalformedStoryError(f"sentence {k}: {s.direction.name} in two-dir story")
            dirs[s.subject] = int(s.direction)
            continue
        if s.subject not in dirs:
            raise MalformedStoryError(f"sentence {k}: actor {s.subject} used before walking")
        if s.verb in TURN_OFFSET:
            if story.dialect is Dialect.TWO and s.verb is not Verb.TURNS_AROUND:
                raise MalformedStoryError(f"sentence {k}: quarter turn in two-dir story")
            dirs[s.subject] = (dirs[s.subject] + TURN_OFFSET[s.verb]) % 4
        else:
            if s.obj not in dirs:
                raise MalformedStoryError(f"sentence {k}: actor {s.obj} used before walking")
            shift = 0 if s.verb is Verb.FOLLOWS else 2
            dirs[s.subject] = (dirs[s.obj] + shift) % 4
    q = story.question
    for a in (q.first, q.second):
        if a not in dirs:
            raise MalformedStoryError(f"question actor {a} never initialised")
    same = dirs[q.first] == dirs[q.second]
    answer = same != (q.polarity == "not-same")
    return OracleResult({a: Direction(d) for a, d in dirs.items()}, same, answer)


def inference_steps(sentences: Sequence[Sentence], actors: Iterable[int]) -> int:
    """Count sentences on the deterministic causal chain behind ``actors``' final directions."""
    needed: set[int] = set()
    pending = [(a, len(sentences)) for a in actors]
    while pending:
        actor, before = pending.pop()
        for k in range(before - 1, -1, -1):
            s = sentences[k]
            if s.subject != actor:
                continue
            if k in needed:
                break
            needed.add(k)
            if s.verb.two_actor:
                pending.append((s.obj, k))
                break
            if s.verb is Verb.WALKS:
                break
    return len(needed)


def compute_metrics(story: Story) -> StoryMetrics:
    two = sum(1 for s in story.sentences if s.verb.two_actor)
    depth = story.depth
    return StoryMetrics(
        width=story.width,
        depth=depth,
        density=two / depth if depth else 0.0,
        inference_steps=inference_steps(story.sentences, (story.question.first, story.question.second)),
    )


# -- generation ---------------------------------------------------------------

# Constants below were calibrated by simulation so tier mean densities land
# near the published per-tier averages (checked in tests/test_story.py).
@dataclass(frozen=True)
class DepthPolicy:
    """Depth (sentence count, initialisations included) as ``round(slope*w + offset)``."""

    slope: float
    offset: float

    def __call__(self, width: int) -> int:
        return max(width, int(round(self.slope * width + self.offset)))


SIMPLE_DEPTH = DepthPolicy(2.0, 1.0)
DEEP_DEPTH = DepthPolicy(4.0, 0.0)
SIMPLE_TWO_ACTOR_PROB = 0.5
DEEPER_TWO_ACTOR_PROB = 0.64
# single-actor actions mixed into the fully connected story before shuffling:
# round(offset + per_actor * width), by tier
SINGLE_ACTIONS_POLICY = {"less-dense": (27.0, 0.3), "dense": (16.0, 0.0), "superdense": (5.0, 0.0)}

MAX_RETRIES = 200


def _resolve_depth(depth_policy, width: int, default: DepthPolicy) -> int:
    if depth_policy in (None, "default"):
        return default(width)
    if isinstance(depth_policy, int):
        return depth_policy
    if callable(depth_policy):
        return int(depth_policy(width))
    raise ValueError(f"bad depth policy {depth_policy!r}")


def _widths(width_range) -> list[int]:
    lo, hi = width_range
    if not (2 <= lo <= hi <= 30):
        raise ValueError(f"width range {width_range} outside [2, 30]")
    return list(range(lo, hi + 1))


def _per_width_counts(widths: list[int], count: int) -> dict[int, int]:
    base, extra = divmod(count, len(widths))
    # remainder goes to the widest strata
    return {w: base + (1 if i >= len(widths) - extra else 0) for i, w in enumerate(widths)}


def _tier_code(tier: str) -> int:
    return TIERS.index(tier)


def _story_rng(seed: int, dialect: Dialect, tier: str, width: int, index: int, attempt: int):
    key = [int(seed) & 0xFFFFFFFF, 0 if dialect is Dialect.TWO else 1, _tier_code(tier),
           width, index, attempt]
    return np.random.default_rng(key)


def _initialisations(rng, dialect: Dialect, width: int) -> list[Sentence]:
    choices = DIRECTIONS[dialect]
    return [Sentence(Verb.WALKS, a, direction=choices[rng.integers(len(choices))])
            for a in range(width)]


def _random_single(rng, dialect: Dialect, width: int) -> Sentence:
    acts = SINGLE_ACTIONS[dialect]
    return Sentence(acts[rng.integers(len(acts))], int(rng.integers(width)))


def _random_pair_sentence(rng, a: int, b: int) -> Sentence:
    verb = TWO_ACTOR_ACTIONS[rng.integers(2)]
    if rng.random() < 0.5:
        a, b = b, a
    return Sentence(verb, a, b)


def _simple_body(rng, dialect, width, depth, two_actor_prob) -> list[Sentence]:
    body = []
    for _ in range(depth - width):
        if rng.random() < two_actor_prob:
            a, b = rng.choice(width, size=2, replace=False)
            body.append(_random_pair_sentence(rng, int(a), int(b)))
        else:
            body.append(_random_single(rng, dialect, width))
    return body


def _dense_body(rng, dialect, width, depth, n_single) -> list[Sentence]:
    body = [_random_pair_sentence(rng, a, b)
            for a in range(width) for b in range(a + 1, width)]
    body += [_random_single(rng, dialect, width) for _ in range(n_single)]
    order = rng.permutation(len(body))
    body = [body[i] for i in order]
    return body[: max(depth - width, 0)]


def _pick_question(rng, sentences, dialect, width, want_same: bool, polarity_mode: str):
    probe = Story(tuple(sentences), tuple(range(width)), Question(0, 1), False, dialect)
    dirs = evaluate_oracle(probe).directions
    pairs = [(a, b) for a in range(width) for b in range(width) if a != b]
    if polarity_mode == "mixed":
        a, b = pairs[rng.integers(len(pairs))]
        same = dirs[a] == dirs[b]
        polarity = "same" if same == want_same else "not-same"
        return Question(a, b, polarity), want_same
    matching = [p for p in pairs if (dirs[p[0]] == dirs[p[1]]) == want_same]
    if not matching:
        return None
    a, b = matching[rng.integers(len(matching))]
    return Question(a, b, "same"), want_same


def _generate(dialect, tier, width_range, count, rng_seed, body_fn, polarity_mode) -> list[Story]:
    dialect = Dialect(dialect)
    stories = []
    for width, n in _per_width_counts(_widths(width_range), count).items():
        for index in range(n):
            want_same = index % 2 == 0
            for attempt in range(MAX_RETRIES):
                rng = _story_rng(rng_seed, dialect, tier, width, index, attempt)
                sentences = _initialisations(rng, dialect, width) + body_fn(rng, dialect, width)
                picked = _pick_question(rng, sentences, dialect, width, want_same, polarity_mode)
                if picked is not None:
                    break
            else:
                raise GenerationError(
                    f"could not balance labels for {tier} width {width} after {MAX_RETRIES} tries")
            question, label = picked
            stories.append(Story(
                tuple(sentences), tuple(range(width)), question, label, dialect,
                id=f"{dialect.value}-{tier}-w{width:02d}-{index:04d}-s{rng_seed}",
                tier=tier, seed=rng_seed,
            ))
    return stories


def generate_simple(dialect, width_range=(2, 8), depth_policy="default", count=492,
                    rng_seed=0, *, deeper: bool = False, polarity_mode: str = "same") -> list[Story]:
    """Initialise every actor, then apply uniformly random actions until the target depth.

    ``deeper=True`` produces the "deeper" tier: the same process with longer
    stories and a larger share of two-actor actions.
    """
    default = DEEP_DEPTH if deeper else SIMPLE_DEPTH
    prob = DEEPER_TWO_ACTOR_PROB if deeper else SIMPLE_TWO_ACTOR_PROB

    def body(rng, dialect, width):
        depth = _resolve_depth(depth_policy, width, default)
        return _simple_body(rng, dialect, width, depth, prob)

    return _generate(dialect, "deeper" if deeper else "simple", width_range, count,
                     rng_seed, body, polarity_mode)


def generate_dense(dialect, width_range=(6, 20), density_tier="dense", count=750, rng_seed=0,
                   *, depth_policy="default", singles_per_actor: float | None = None,
                   polarity_mode: str = "same") -> list[Story]:
    """Fully connected stories: every actor pair interacts once, then shuffle and truncate."""
    if density_tier not in DENSE_TIERS:
        raise ValueError(f"unknown density tier {density_tier!r}; valid tiers: {DENSE_TIERS}")
    if width_range[0] < 2:
        raise ValueError("dense stories need at least two actors")
    offset, per_actor = (SINGLE_ACTIONS_POLICY[density_tier] if singles_per_actor is None
                         else (0.0, singles_per_actor))

    def body(rng, dialect, width):
        depth = _resolve_depth(depth_policy, width, DEEP_DEPTH)
        return _dense_body(rng, dialect, width, depth, int(round(offset + per_actor * width)))

    return _generate(dialect, density_tier, width_range, count, rng_seed, body, polarity_mode)


def generate_tier(dialect, tier: str, width_range, count: int, rng_seed: int = 0, **kw) -> list[Story]:
    if tier == "simple":
        return generate_simple(dialect, width_range, count=count, rng_seed=rng_seed, **kw)
    if tier == "deeper":
        return generate_simple(dialect, width_range, count=count, rng_seed=rng_seed,
                               deeper=True, **kw)
    if tier in DENSE_TIERS:
        return generate_dense(dialect, width_range, tier, count, rng_seed, **kw)
    raise ValueError(f"unknown tier {tier!r}; valid tiers: {', '.join(TIERS)}")


# Dataset sizes per (tier, width range) for each dialect.
DATASET_LAYOUT = {
    Dialect.TWO: [
        ("simple", (2, 8), 492), ("simple", (9, 20), 864), ("simple", (21, 30), 480),
        *[(t, (6, 20), 750) for t in TIERS[1:]],
        *[(t, (21, 30), 500) for t in TIERS[1:]],
    ],
    Dialect.FOUR: [
        ("simple", (2, 8), 492), ("simple", (9, 20), 864), ("simple", (21, 30), 480),
        *[(t, (6, 8), 150) for t in TIERS[1:]],
        *[(t, (9, 20), 600) for t in TIERS[1:]],
        *[(t, (21, 30), 500) for t in TIERS[1:]],
    ],
}


def generate_dataset(dialect, rng_seed: int = 0, max_width: int = 30, tiers=TIERS) -> list[Story]:
    """Full dataset for a dialect, optionally clipped to ``max_width`` actors."""
    dialect = Dialect(dialect)
    out = []
    for tier, (lo, hi), count in DATASET_LAYOUT[dialect]:
        if tier not in tiers or lo > max_width:
            continue
        per = _per_width_counts(list(range(lo, hi + 1)), count)
        hi_c = min(hi, max_width)
        stories = generate_tier(dialect, tier, (lo, hi), count, rng_seed) if hi_c == hi else [
            s for s in generate_tier(dialect, tier, (lo, hi), count, rng_seed) if s.width <= hi_c]
        assert len(stories) == sum(v for w, v in per.items() if w <= hi_c)
        out += stories
    return out


# -- splits ---------------------------------------------------------------------

SPLITS = ("train", "valid-a", "valid-comp", "test")


def _rank(story_id: str, seed: int) -> str:
    return hashlib.sha256(f"{seed}:{story_id}".encode()).hexdigest()


def split_datasets(stories: Sequence[Story], protocol, seed: int = 0,
                   train_fraction: float = 0.8) -> dict[str, list[Story]]:
    """Partition stories into train / valid-a / valid-comp / test.

    The train/valid-a cut orders the eligible pool by a hash of (seed, id) so
    membership depends only on the ids and the seed.
    """
    protocol = Dialect(protocol)
    if protocol is Dialect.TWO:
        pool = [s for s in stories if s.tier == "simple" and s.width <= 8]
        comp = [s for s in stories if 9 <= s.width <= 20 or (s.tier != "simple" and s.width <= 8)]
    else:
        pool = [s for s in stories if s.width <= 8]
        comp = [s for s in stories if 9 <= s.width <= 20]
    test = [s for s in stories if s.width >= 21]
    pool = sorted(pool, key=lambda s: _rank(s.id, seed))
    n_train = int(round(train_fraction * len(pool)))
    parts = {
        "train": pool[:n_train],
        "valid-a": pool[n_train:],
        "valid-comp": comp,
        "test": test,
    }
    seen: set[str] = set()
    for name, part in parts.items():
        ids = {s.id for s in part}
        if ids & seen:
            raise AssertionError(f"split {name} overlaps another partition")
        seen |= ids
    return {name: [replace(s, split=name) for s in part] for name, part in parts.items()}


# -- persistence ------------------------------------------------------------------

def write_jsonl(stories: Iterable[Story], path) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for s in stories:
            fh.write(json.dumps(s.to_json(), sort_keys=True) + "\n")


def read_jsonl(path) -> list[Story]:
    with Path(path).open() as fh:
        return [Story.from_json(json.loads(line)) for line in fh if line.strip()]


def stratified_subset(stories: Sequence[Story], count: int, seed: int = 0) -> list[Story]:
    """Deterministic subset of ``count`` stories spread evenly over (tier, width).

    Strata are visited round robin; inside a stratum stories are taken in
    the order of a hash of (seed, id).
    """
    strata: dict[tuple[str, int], list[Story]] = {}
    for s in sorted(stories, key=lambda s: _rank(s.id, seed)):
        strata.setdefault((s.tier, s.width), []).append(s)
    queues = [strata[k] for k in sorted(strata)]
    out: list[Story] = []
    depth = 0
    while len(out) < count and any(depth < len(q) for q in queues):
        out += [q[depth] for q in queues if depth < len(q)][:count - len(out)]
        depth += 1
    return out
