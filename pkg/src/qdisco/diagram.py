"""Text diagrams: generators over noun wires, built from stories and rewritten."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace

from .story import Dialect, Direction, Story, Verb

QUESTION_WORD = "question"
PERSON = "person"

BOX_ARITY = {
    "walks_north": 1, "walks_south": 1, "walks_east": 1, "walks_west": 1,
    "turns_left": 1, "turns_right": 1, "turns_around": 1,
    "follows": 2, "opposite_direction_of": 2,
}


class Kind(str, enum.Enum):
    STATE = "state"
    BOX = "box"
    EFFECT = "effect"
    DISCARD = "discard"
    IDENTITY = "identity"
    SWAP = "swap"


@dataclass(frozen=True)
class Generator:
    kind: Kind
    wires: tuple[int, ...]
    word: str | None = None
    arity: int | None = None
    dagger: bool = False

    @classmethod
    def box(cls, word: str, *wires: int, dagger: bool = False) -> "Generator":
        return cls(Kind.BOX, tuple(wires), word, len(wires), dagger)

    @property
    def terminal(self) -> bool:
        return self.kind in (Kind.EFFECT, Kind.DISCARD)

    def to_json(self) -> dict:
        out = {"kind": self.kind.value, "wires": list(self.wires)}
        if self.word is not None:
            out["word"] = self.word
        if self.arity is not None:
            out["arity"] = self.arity
        if self.dagger:
            out["dagger"] = True
        return out

    @classmethod
    def from_json(cls, data: dict) -> "Generator":
        return cls(Kind(data["kind"]), tuple(data["wires"]), data.get("word"),
                   data.get("arity"), bool(data.get("dagger", False)))

    def __str__(self) -> str:
        name = self.word or self.kind.value
        if self.dagger:
            name += "†"
        return f"{self.kind.value}:{name}{list(self.wires)}"


@dataclass(frozen=True)
class TextDiagram:
    wires: tuple[int, ...]
    labels: tuple[str, ...]
    layers: tuple[Generator, ...]
    question_wires: tuple[int, int]
    dialect: Dialect
    rewritten: bool = False
    negated: bool = False  # question asks "not the same direction"

    @property
    def boxes(self) -> list[Generator]:
        return [g for g in self.layers if g.kind is Kind.BOX]

    def layer_count(self) -> int:
        """States and boxes count one layer each; effects and discards share the final layer."""
        body = sum(1 for g in self.layers if not g.terminal)
        return body + (1 if any(g.terminal for g in self.layers) else 0)

    def to_json(self) -> dict:
        return {
            "wires": list(self.wires),
            "labels": list(self.labels),
            "layers": [g.to_json() for g in self.layers],
            "question_wires": list(self.question_wires),
            "dialect": self.dialect.value,
            "rewritten": self.rewritten,
            "negated": self.negated,
        }

    @classmethod
    def from_json(cls, data: dict) -> "TextDiagram":
        return cls(tuple(data["wires"]), tuple(data["labels"]),
                   tuple(Generator.from_json(g) for g in data["layers"]),
                   tuple(data["question_wires"]), Dialect(data["dialect"]),
                   bool(data.get("rewritten", False)), bool(data.get("negated", False)))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    def to_dot(self) -> str:
        """Graphviz description: one node per generator, edges follow each wire."""
        lines = ["digraph text {", "  rankdir=TB;"]
        last: dict[int, str] = {}
        for i, g in enumerate(self.layers):
            node = f"g{i}"
            label = (g.word or g.kind.value) + ("†" if g.dagger else "")
            shape = {"state": "invtriangle", "effect": "triangle",
                     "discard": "point"}.get(g.kind.value, "box")
            lines.append(f'  {node} [label="{label}", shape={shape}];')
            for w in g.wires:
                if w in last:
                    lines.append(f'  {last[w]} -> {node} [label="{self.labels[w]}"];')
                last[w] = node
        lines.append("}")
        return "\n".join(lines)


def _box_word(verb: Verb, direction: Direction | None) -> str:
    if verb is Verb.WALKS:
        return f"walks_{direction.name.lower()}"
    return verb.value


def parse_story(story: Story) -> TextDiagram:
    """One wire per actor, one box per sentence, then the question effect and discards."""
    from .story import NAMES

    wires = tuple(range(story.width))
    index = {a: i for i, a in enumerate(story.actors)}
    layers = [Generator(Kind.STATE, (w,), PERSON) for w in wires]
    for s in story.sentences:
        layers.append(Generator.box(_box_word(s.verb, s.direction),
                                    *(index[a] for a in s.actors)))
    qw = (index[story.question.first], index[story.question.second])
    layers.append(Generator(Kind.EFFECT, qw, QUESTION_WORD, 2))
    layers += [Generator(Kind.DISCARD, (w,)) for w in wires if w not in qw]
    labels = tuple(NAMES[a] if a < len(NAMES) else f"actor{a}" for a in story.actors)
    return TextDiagram(wires, labels, tuple(layers), qw, story.dialect,
                       negated=story.question.polarity == "not-same")


def apply_rewrites(diagram: TextDiagram, dialect=None) -> TextDiagram:
    """Reduce the vocabulary: opposite -> follows + around; in four directions
    around -> left, left and right -> left†. Idempotent."""
    dialect = Dialect(dialect) if dialect is not None else diagram.dialect
    four = dialect is Dialect.FOUR
    out: list[Generator] = []

    def around(w: int):
        if four:
            out.extend([Generator.box("turns_left", w), Generator.box("turns_left", w)])
        else:
            out.append(Generator.box("turns_around", w))

    for g in diagram.layers:
        if g.kind is not Kind.BOX:
            out.append(g)
        elif g.word == "opposite_direction_of":
            out.append(Generator.box("follows", *g.wires))
            around(g.wires[0])
        elif g.word == "turns_around":
            around(g.wires[0])
        elif four and g.word == "turns_right":
            out.append(Generator.box("turns_left", g.wires[0], dagger=not g.dagger))
        else:
            out.append(g)
    return replace(diagram, layers=tuple(out), dialect=dialect, rewritten=True)


@dataclass(frozen=True)
class Violation:
    code: str
    index: int
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.code} at generator {self.index}: {self.detail}"


def validate(diagram: TextDiagram) -> list[Violation]:
    """Empty list means the diagram is well formed."""
    problems: list[Violation] = []
    wires = set(diagram.wires)
    started: set[int] = set()
    ended: dict[int, Kind] = {}
    for i, g in enumerate(diagram.layers):
        unknown = [w for w in g.wires if w not in wires]
        if unknown:
            problems.append(Violation("unknown wire", i, f"{unknown}"))
            continue
        if len(set(g.wires)) != len(g.wires):
            problems.append(Violation("repeated wire", i, f"{list(g.wires)}"))
        if g.kind in (Kind.BOX, Kind.EFFECT):
            declared = g.arity if g.arity is not None else len(g.wires)
            if g.kind is Kind.BOX:
                expected = BOX_ARITY.get(g.word, declared)
            else:
                expected = 2 if g.word == QUESTION_WORD else declared
            if declared != len(g.wires) or expected != len(g.wires):
                problems.append(Violation("arity mismatch", i,
                                          f"{g.word} expects {expected} wires, got {len(g.wires)}"))
        if g.kind is Kind.SWAP and len(g.wires) != 2:
            problems.append(Violation("arity mismatch", i, "swap needs exactly 2 wires"))
        if g.kind in (Kind.STATE, Kind.DISCARD) and len(g.wires) != 1:
            problems.append(Violation("arity mismatch", i, f"{g.kind.value} acts on one wire"))
        for w in g.wires:
            if w in ended:
                problems.append(Violation("use after termination", i, f"wire {w}"))
            if g.kind is Kind.STATE:
                if w in started:
                    problems.append(Violation("duplicate initialisation", i, f"wire {w}"))
                started.add(w)
            elif w not in started:
                problems.append(Violation("uninitialised wire", i, f"wire {w}"))
            if g.terminal:
                ended[w] = g.kind
    for w in diagram.wires:
        if w not in started:
            problems.append(Violation("missing state", -1, f"wire {w}"))
        want = Kind.EFFECT if w in diagram.question_wires else Kind.DISCARD
        if ended.get(w) is not want:
            problems.append(Violation("bad termination", -1,
                                      f"wire {w} should end in {want.value}"))
    return problems


def diagram_answer(diagram: TextDiagram) -> bool:
    """Deterministic reading of a (possibly rewritten) diagram; used to check rewrites."""
    dirs: dict[int, int] = {}
    order: dict[int, int] = {}
    for g in diagram.layers:
        if g.kind is Kind.SWAP:
            a, b = g.wires
            dirs[a], dirs[b] = dirs.get(b), dirs.get(a)
            continue
        if g.kind is not Kind.BOX:
            continue
        w = g.wires[0]
        if g.word.startswith("walks_"):
            dirs[w] = int(Direction[g.word[6:].upper()])
        elif g.word in ("turns_left", "turns_right", "turns_around"):
            step = {"turns_left": 1, "turns_right": 3, "turns_around": 2}[g.word]
            dirs[w] = (dirs[w] + (-step if g.dagger else step)) % 4
        elif g.word == "follows":
            dirs[w] = dirs[g.wires[1]]
        elif g.word == "opposite_direction_of":
            dirs[w] = (dirs[g.wires[1]] + 2) % 4
    a, b = diagram.question_wires
    return (dirs[a] == dirs[b]) != diagram.negated
