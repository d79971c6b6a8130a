"""Corpora: a seeded synthetic grammar plus TOP TSV and JSONL readers.

The synthetic grammar stands in for TOP-style data at laptop scale. An
utterance is an intent frame: a few trigger words for the intent followed by
a random subset of its slot menu, each slot realised either as value words from
the slot's lexicon or, with probability ``nesting_prob``, as a nested frame.
Under the NER profile a sentence is a run of filler words and entities, and an
entity may nest another entity.

``max_depth`` bounds the number of labelled nodes on any root-to-leaf path.
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

from .tree import (
    INTENT_PREFIX,
    SLOT_PREFIX,
    Format,
    Label,
    Node,
    ParseTree,
    Profile,
    TreeError,
    parse_linearized,
    serialize,
)

FILLER = "_filler"


class SpecInconsistent(ValueError):
    pass


class LeafMismatch(TreeError):
    pass


@dataclass
class LineError:
    line: int
    error: Exception

    def __str__(self):
        return f"line {self.line}: {type(self.error).__name__}: {self.error}"


def pseudo_words(n: int) -> list[str]:
    """``n`` distinct pronounceable two-syllable words, deterministic."""
    onsets = "b d f g k l m n p r s t v z".split()
    nuclei = "a e i o u".split()
    syllables = [o + v for o in onsets for v in nuclei]
    words = (a + b for a, b in itertools.product(syllables, repeat=2) if a != b)
    # stride through the product so consecutive words look different
    pool = list(words)
    return [pool[(k * 97) % len(pool)] for k in range(n)]


@dataclass
class GrammarSpec:
    profile: str = "top"
    intents: list[str] = field(default_factory=list)
    slots: list[str] = field(default_factory=list)
    intent_slots: dict[str, list[str]] = field(default_factory=dict)
    # labels a slot may expand into when it nests (intents for TOP, slots for NER)
    nestable: dict[str, list[str]] = field(default_factory=dict)
    # label (or "_filler") -> words
    lexicon: dict[str, list[str]] = field(default_factory=dict)
    # slot -> carrier words; one is emitted just before the slot (outside it)
    slot_cues: dict[str, list[str]] = field(default_factory=dict)
    nesting_prob: float = 0.35
    max_depth: int = 3
    slot_prob: float = 0.6
    trigger_len: tuple[int, int] = (1, 2)
    value_len: tuple[int, int] = (1, 3)
    filler_len: tuple[int, int] = (0, 1)
    entities_per_sentence: tuple[int, int] = (0, 3)
    seed: int = 0

    @property
    def vocab(self) -> list[str]:
        groups = [*self.lexicon.values(), *self.slot_cues.values()]
        return sorted({w for words in groups for w in words})

    def validate(self) -> None:
        if self.profile not in ("top", "ner"):
            raise SpecInconsistent(f"unknown profile {self.profile!r}")
        if not 0.0 <= self.nesting_prob <= 1.0 or not 0.0 <= self.slot_prob <= 1.0:
            raise SpecInconsistent("probabilities must lie in [0, 1]")
        if self.max_depth < 1:
            raise SpecInconsistent("max_depth must be at least 1")
        for lo_hi in (self.trigger_len, self.value_len, self.filler_len, self.entities_per_sentence):
            if len(lo_hi) != 2 or not 0 <= lo_hi[0] <= lo_hi[1]:
                raise SpecInconsistent(f"bad length range {lo_hi}")
        if self.value_len[0] < 1:
            raise SpecInconsistent("slot values need at least one word")
        for name in self.intents:
            if not name.startswith(INTENT_PREFIX):
                raise SpecInconsistent(f"intent {name!r} lacks {INTENT_PREFIX}")
        for name in self.slots:
            if not name.startswith(SLOT_PREFIX):
                raise SpecInconsistent(f"slot {name!r} lacks {SLOT_PREFIX}")
        if self.profile == "top":
            if not self.intents:
                raise SpecInconsistent("TOP grammar needs intents")
            if self.trigger_len[0] < 1:
                raise SpecInconsistent("intent frames need at least one trigger word")
        elif self.intents:
            raise SpecInconsistent("NER grammar declares no intents")
        for intent, menu in self.intent_slots.items():
            if intent not in self.intents:
                raise SpecInconsistent(f"menu for undeclared intent {intent!r}")
            for s in menu:
                if s not in self.slots:
                    raise SpecInconsistent(f"menu of {intent} names undeclared slot {s!r}")
        inner = set(self.intents) if self.profile == "top" else set(self.slots)
        for slot, targets in self.nestable.items():
            if slot not in self.slots:
                raise SpecInconsistent(f"nesting rule for undeclared slot {slot!r}")
            for t in targets:
                if t not in inner:
                    raise SpecInconsistent(f"{slot} cannot nest {t!r} under profile {self.profile}")
        for slot, cues in self.slot_cues.items():
            if slot not in self.slots:
                raise SpecInconsistent(f"cue words for undeclared slot {slot!r}")
            if not cues:
                raise SpecInconsistent(f"empty cue list for {slot!r}")
        needed = (self.intents + self.slots) if self.profile == "top" else self.slots
        for name in needed + [FILLER]:
            if not self.lexicon.get(name):
                raise SpecInconsistent(f"no words for {name!r}")
        for words in [*self.lexicon.values(), *self.slot_cues.values()]:
            for w in words:
                if not w or any(c.isspace() or c in "[]" for c in w):
                    raise SpecInconsistent(f"bad word {w!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GrammarSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SpecInconsistent(f"unknown grammar keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("trigger_len", "value_len", "filler_len", "entities_per_sentence"):
            if key in d:
                d[key] = tuple(d[key])
        spec = cls(**d)
        spec.validate()
        return spec

    @classmethod
    def load(cls, path: str | Path) -> "GrammarSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _assign_lexicon(names: Sequence[str], per_name: int, n_filler: int) -> dict[str, list[str]]:
    words = pseudo_words(len(names) * per_name + n_filler)
    lex = {name: words[k * per_name:(k + 1) * per_name] for k, name in enumerate(names)}
    lex[FILLER] = words[len(names) * per_name:]
    return lex


def default_spec(profile: str = "top", **overrides) -> GrammarSpec:
    """6 intents / 10 slots / 120 words for TOP; 7 entity types / 120 words for NER."""
    if profile == "top":
        intents = ["IN:GET_DIRECTIONS", "IN:GET_EVENT", "IN:GET_WEATHER", "IN:GET_LOCATION",
                   "IN:GET_INFO_TRAFFIC", "IN:GET_ESTIMATED_DURATION"]
        slots = ["SL:DESTINATION", "SL:SOURCE", "SL:DATE_TIME", "SL:LOCATION", "SL:CATEGORY_EVENT",
                 "SL:POINT_ON_MAP", "SL:CONTACT", "SL:METHOD_TRAVEL", "SL:SEARCH_RADIUS", "SL:ORGANIZER_EVENT"]
        menus = {
            "IN:GET_DIRECTIONS": ["SL:DESTINATION", "SL:SOURCE", "SL:METHOD_TRAVEL", "SL:DATE_TIME"],
            "IN:GET_EVENT": ["SL:CATEGORY_EVENT", "SL:LOCATION", "SL:DATE_TIME", "SL:ORGANIZER_EVENT"],
            "IN:GET_WEATHER": ["SL:LOCATION", "SL:DATE_TIME"],
            "IN:GET_LOCATION": ["SL:POINT_ON_MAP", "SL:SEARCH_RADIUS", "SL:CONTACT"],
            "IN:GET_INFO_TRAFFIC": ["SL:LOCATION", "SL:DATE_TIME", "SL:DESTINATION"],
            "IN:GET_ESTIMATED_DURATION": ["SL:DESTINATION", "SL:SOURCE", "SL:METHOD_TRAVEL"],
        }
        nestable = {
            "SL:DESTINATION": ["IN:GET_LOCATION", "IN:GET_EVENT"],
            "SL:SOURCE": ["IN:GET_LOCATION"],
            "SL:LOCATION": ["IN:GET_LOCATION"],
            "SL:ORGANIZER_EVENT": ["IN:GET_LOCATION"],
        }
        # 6 x 4 trigger words + 10 x 6 value words + 10 x 2 cue words + 16 fillers = 120.
        # The cues play the part of "to" / "from": without them a nested
        # intent could sit under several slots with no way to tell which.
        words = pseudo_words(120)
        lex = {name: words[4 * k:4 * k + 4] for k, name in enumerate(intents)}
        off = 4 * len(intents)
        for k, name in enumerate(slots):
            lex[name] = words[off + 6 * k:off + 6 * k + 6]
        off += 6 * len(slots)
        cues = {name: words[off + 2 * k:off + 2 * k + 2] for k, name in enumerate(slots)}
        lex[FILLER] = words[off + 2 * len(slots):]
        spec = GrammarSpec("top", intents, slots, menus, nestable, lex, cues)
    elif profile == "ner":
        slots = ["SL:PER", "SL:ORG", "SL:GPE", "SL:LOC", "SL:FAC", "SL:VEH", "SL:WEA"]
        nestable = {
            "SL:ORG": ["SL:GPE", "SL:PER"],
            "SL:PER": ["SL:GPE", "SL:ORG"],
            "SL:FAC": ["SL:GPE", "SL:LOC"],
            "SL:LOC": ["SL:GPE"],
            "SL:VEH": ["SL:ORG"],
            "SL:WEA": ["SL:ORG", "SL:GPE"],
        }
        lex = _assign_lexicon(slots, 12, 120 - 12 * len(slots))
        spec = GrammarSpec("ner", [], slots, {}, nestable, lex, filler_len=(1, 3))
    else:
        raise SpecInconsistent(f"unknown profile {profile!r}")
    for k, v in overrides.items():
        if not hasattr(spec, k):
            raise SpecInconsistent(f"unknown grammar key {k!r}")
        setattr(spec, k, v)
    spec.validate()
    return spec


class _Generator:
    def __init__(self, spec: GrammarSpec, rng: random.Random):
        self.spec = spec
        self.rng = rng

    def words(self, name: str, lo_hi: tuple[int, int]) -> list[str]:
        lo, hi = lo_hi
        return [self.rng.choice(self.spec.lexicon[name]) for _ in range(self.rng.randint(lo, hi))]

    def intent_frame(self, intent: str, level: int) -> Node:
        """An intent node at ``level`` (1-based count of labelled nodes down to it)."""
        spec = self.spec
        children: list = self.words(intent, spec.trigger_len)
        if level + 1 <= spec.max_depth:
            for slot in spec.intent_slots.get(intent, []):
                if self.rng.random() >= spec.slot_prob:
                    continue
                children.extend(self.words(FILLER, spec.filler_len))
                if slot in spec.slot_cues:
                    children.append(self.rng.choice(spec.slot_cues[slot]))
                children.append(self.slot_node(slot, level + 1))
        return Node(Label.parse(intent), tuple(children))

    def slot_node(self, slot: str, level: int) -> Node:
        spec = self.spec
        targets = spec.nestable.get(slot, [])
        nest = targets and level + 1 <= spec.max_depth and self.rng.random() < spec.nesting_prob
        if spec.profile == "top":
            if nest:
                return Node(Label.parse(slot), (self.intent_frame(self.rng.choice(targets), level + 1),))
            return Node(Label.parse(slot), tuple(self.words(slot, spec.value_len)))
        # NER: an entity keeps at least one word of its own around a nested entity
        if nest:
            inner = self.slot_node(self.rng.choice(targets), level + 1)
            own = self.words(slot, (1, max(1, spec.value_len[1] - 1)))
            cut = self.rng.randint(0, len(own))
            return Node(Label.parse(slot), (*own[:cut], inner, *own[cut:]))
        return Node(Label.parse(slot), tuple(self.words(slot, spec.value_len)))

    def sentence(self) -> ParseTree:
        spec = self.spec
        if spec.profile == "top":
            return ParseTree(self.intent_frame(self.rng.choice(spec.intents), 1), Profile.TOP)
        children: list = []
        for _ in range(self.rng.randint(*spec.entities_per_sentence)):
            children.extend(self.words(FILLER, spec.filler_len))
            children.append(self.slot_node(self.rng.choice(spec.slots), 1))
        tail = self.words(FILLER, (1, max(1, spec.filler_len[1])))
        children.extend(tail)
        return ParseTree(Node(None, tuple(children)), Profile.NER)


def generate(spec: GrammarSpec, n: int, seed: int | None = None) -> list[ParseTree]:
    """``n`` trees drawn from ``spec``; deterministic for a given seed."""
    spec.validate()
    if n < 0:
        raise ValueError("n must be non-negative")
    gen = _Generator(spec, random.Random(spec.seed if seed is None else seed))
    return [gen.sentence() for _ in range(n)]


def split(trees: Sequence[ParseTree], sizes: Sequence[int], seed: int = 0) -> list[list[ParseTree]]:
    """Seeded shuffle, then consecutive chunks of the given sizes (disjoint by index)."""
    if sum(sizes) > len(trees):
        raise ValueError(f"split sizes {list(sizes)} exceed corpus size {len(trees)}")
    order = list(range(len(trees)))
    random.Random(seed).shuffle(order)
    out, at = [], 0
    for size in sizes:
        out.append([trees[k] for k in order[at:at + size]])
        at += size
    return out


def spis_filter(trees: Sequence[ParseTree], k: int, seed: int = 0) -> list[ParseTree]:
    """Keep trees until every label has been seen at least ``k`` times (shuffled order)."""
    order = list(range(len(trees)))
    random.Random(seed).shuffle(order)
    counts: dict[Label, int] = {}
    keep = []
    for idx in order:
        labels = [n.label for n in trees[idx].nonterminals()]
        if any(counts.get(l, 0) < k for l in labels):
            keep.append(idx)
            for l in labels:
                counts[l] = counts.get(l, 0) + 1
    return [trees[i] for i in sorted(keep)]


# -- readers and writers ---------------------------------------------------------------


def read_top_tsv(path: str | Path, profile: Profile = Profile.TOP) -> tuple[list[ParseTree], list[LineError]]:
    """Read ``raw<TAB>tokenized<TAB>annotation`` lines; annotations use plain closes.

    Bad lines are reported and skipped.
    """
    trees, errors = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            cols = line.split("\t")
            try:
                if len(cols) != 3:
                    raise TreeError(f"expected 3 tab-separated columns, got {len(cols)}")
                tree = parse_linearized(cols[2], Format.PLAIN, profile)
                if tree.leaves() != cols[1].split():
                    raise LeafMismatch(f"annotation leaves {tree.leaves()} != tokens {cols[1].split()}")
            except (TreeError, ValueError) as exc:
                errors.append(LineError(lineno, exc))
                continue
            trees.append(tree)
    return trees, errors


def read_jsonl(path: str | Path, profile: Profile = Profile.TOP) -> tuple[list[ParseTree], list[LineError]]:
    trees, errors = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                tree = parse_linearized(rec["tree"], Format.LABELED, profile)
                if "tokens" in rec and tree.leaves() != list(rec["tokens"]):
                    raise LeafMismatch(f"tree leaves {tree.leaves()} != tokens {rec['tokens']}")
            except (TreeError, ValueError, KeyError, TypeError) as exc:
                errors.append(LineError(lineno, exc))
                continue
            trees.append(tree)
    return trees, errors


def write_jsonl(path: str | Path, trees: Iterable[ParseTree]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trees:
            fh.write(json.dumps({"tokens": t.leaves(), "tree": serialize(t)}, ensure_ascii=False) + "\n")


def load_corpus(path: str | Path, profile: Profile = Profile.TOP) -> list[ParseTree]:
    """Read JSONL or TSV (by suffix), failing on the first bad line."""
    path = Path(path)
    reader = read_top_tsv if path.suffix in (".tsv", ".txt") else read_jsonl
    trees, errors = reader(path, profile)
    if errors:
        raise TreeError(f"{path}: {errors[0]} ({len(errors)} bad lines)")
    return trees
