"""Semantic parse trees and their linearized bracket form.

Two profiles share one tree algebra:

* ``Profile.TOP``: the root is a single intent covering the utterance.
* ``Profile.NER``: the root is an unserialized virtual node whose children are
  tokens and slot (entity) nodes. A sentence without entities is still a tree.

Two text formats are understood. ``LABELED`` renders a close bracket as
``NAME]`` and is the canonical output format; ``PLAIN`` renders it as ``]``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator, Sequence, Union

INTENT_PREFIX = "IN:"
SLOT_PREFIX = "SL:"


class TreeError(ValueError):
    """Base class for malformed trees and linearizations."""


class UnbalancedBrackets(TreeError):
    def __init__(self, position: int, message: str = "unbalanced brackets"):
        super().__init__(f"{message} at element {position}")
        self.position = position


class MismatchedCloseLabel(TreeError):
    def __init__(self, position: int, expected: str, found: str):
        super().__init__(f"close label {found!r} at element {position} does not match open {expected!r}")
        self.position = position


class EmptyNonTerminal(TreeError):
    def __init__(self, position: int, label: str):
        super().__init__(f"non-terminal {label!r} at element {position} has no children")
        self.position = position


class RootNotIntent(TreeError):
    pass


class InvalidLabel(TreeError):
    pass


class Kind(enum.Enum):
    INTENT = "intent"
    SLOT = "slot"
    EOP = "eop"


@dataclass(frozen=True, order=True)
class Label:
    kind: Kind
    name: str = ""

    def __post_init__(self):
        if self.kind is Kind.EOP:
            if self.name:
                raise InvalidLabel("EoP carries no name")
            return
        prefix = INTENT_PREFIX if self.kind is Kind.INTENT else SLOT_PREFIX
        if not self.name.startswith(prefix) or len(self.name) == len(prefix):
            raise InvalidLabel(f"{self.kind.value} name must look like {prefix}NAME, got {self.name!r}")
        if any(c.isspace() or c in "[]" for c in self.name):
            raise InvalidLabel(f"label name {self.name!r} contains whitespace or brackets")

    @classmethod
    def parse(cls, name: str) -> "Label":
        if name.startswith(INTENT_PREFIX):
            return cls(Kind.INTENT, name)
        if name.startswith(SLOT_PREFIX):
            return cls(Kind.SLOT, name)
        if name == "EoP":
            return EOP
        raise InvalidLabel(f"label {name!r} is neither an intent ({INTENT_PREFIX}) nor a slot ({SLOT_PREFIX})")

    @property
    def is_intent(self) -> bool:
        return self.kind is Kind.INTENT

    @property
    def is_eop(self) -> bool:
        return self.kind is Kind.EOP

    def __str__(self) -> str:
        return "EoP" if self.kind is Kind.EOP else self.name


EOP = Label(Kind.EOP)


class Profile(enum.Enum):
    TOP = "top"
    NER = "ner"


class Format(enum.Enum):
    LABELED = "labeled"
    PLAIN = "plain"


# -- linearized elements ------------------------------------------------------


@dataclass(frozen=True)
class Tok:
    token: str

    def __str__(self):
        return self.token


@dataclass(frozen=True)
class Open:
    label: Label

    def __post_init__(self):
        if self.label.is_eop:
            raise InvalidLabel("EoP cannot be bracketed")

    def __str__(self):
        return "[" + self.label.name


@dataclass(frozen=True)
class Close:
    label: Label

    def __post_init__(self):
        if self.label.is_eop:
            raise InvalidLabel("EoP cannot be bracketed")

    def __str__(self):
        return self.label.name + "]"


Elem = Union[Tok, Open, Close]
# Immutable element sequence; insertion builds a new tuple.
LinearSeq = tuple


def tokens_of(seq: Sequence[Elem]) -> list[str]:
    return [e.token for e in seq if isinstance(e, Tok)]


def check_balanced(seq: Sequence[Elem]) -> None:
    """Raise unless every Close matches the most recent unmatched Open."""
    stack: list[tuple[int, Label]] = []
    for pos, e in enumerate(seq):
        if isinstance(e, Open):
            stack.append((pos, e.label))
        elif isinstance(e, Close):
            if not stack:
                raise UnbalancedBrackets(pos, "close without open")
            _, label = stack.pop()
            if label != e.label:
                raise MismatchedCloseLabel(pos, label.name, e.label.name)
    if stack:
        raise UnbalancedBrackets(stack[-1][0], "unclosed bracket")


def seq_to_string(seq: Sequence[Elem], fmt: Format = Format.LABELED) -> str:
    if fmt is Format.LABELED:
        return " ".join(str(e) for e in seq)
    return " ".join("]" if isinstance(e, Close) else str(e) for e in seq)


# -- trees --------------------------------------------------------------------


@dataclass(frozen=True)
class Node:
    """A non-terminal. ``label`` is None only for the NER virtual root."""

    label: Label | None
    children: tuple  # of str | Node

    def iter_nodes(self) -> Iterator["Node"]:
        yield self
        for child in self.children:
            if isinstance(child, Node):
                yield from child.iter_nodes()

    def leaves(self) -> list[str]:
        out: list[str] = []
        for child in self.children:
            if isinstance(child, Node):
                out.extend(child.leaves())
            else:
                out.append(child)
        return out


@dataclass(frozen=True)
class ParseTree:
    root: Node
    profile: Profile = Profile.TOP

    def __post_init__(self):
        validate(self)

    def leaves(self) -> list[str]:
        return self.root.leaves()

    def nonterminals(self) -> list[Node]:
        """All labelled nodes in pre-order (the virtual root is excluded)."""
        return [n for n in self.root.iter_nodes() if n.label is not None]

    def __str__(self) -> str:
        return serialize(self)


def validate(tree: ParseTree) -> None:
    root = tree.root
    if tree.profile is Profile.TOP:
        if root.label is None or not root.label.is_intent:
            raise RootNotIntent(f"TOP root must be an intent, got {root.label}")
    else:
        if root.label is not None:
            raise TreeError("NER trees use an unlabelled virtual root")
    for node in root.iter_nodes():
        if node is not root or tree.profile is Profile.TOP:
            if not node.children:
                raise EmptyNonTerminal(-1, str(node.label))
        if node is not root:
            if node.label is None:
                raise TreeError("only the root may be unlabelled")
            if tree.profile is Profile.NER and node.label.is_intent:
                raise InvalidLabel(f"intent {node.label} in NER tree")
        for child in node.children:
            if not isinstance(child, (Node, str)):
                raise TreeError(f"bad child {child!r}")
            if isinstance(child, str) and (not child or any(c.isspace() for c in child)):
                raise TreeError(f"bad leaf token {child!r}")


def make_tree(linearized: str, profile: Profile = Profile.TOP) -> ParseTree:
    """Parse with format auto-detection; convenience for fixtures."""
    fmt = Format.LABELED if any(t.endswith("]") and t != "]" for t in linearized.split()) else Format.PLAIN
    return parse_linearized(linearized, fmt, profile)


def _lex(text: str, fmt: Format) -> list[Elem]:
    out: list[Elem] = []
    stack: list[Label] = []
    for pos, tok in enumerate(text.split()):
        if tok.startswith("[") and len(tok) > 1:
            label = Label.parse(tok[1:])
            stack.append(label)
            out.append(Open(label))
        elif tok == "]":
            if not stack:
                raise UnbalancedBrackets(pos, "close without open")
            out.append(Close(stack.pop()))
        elif fmt is Format.LABELED and tok.endswith("]"):
            label = Label.parse(tok[:-1])
            if not stack:
                raise UnbalancedBrackets(pos, "close without open")
            expected = stack.pop()
            if expected != label:
                raise MismatchedCloseLabel(pos, expected.name, label.name)
            out.append(Close(label))
        else:
            out.append(Tok(tok))
    if stack:
        raise UnbalancedBrackets(len(out), "unclosed bracket")
    return out


def parse_linearized(text: str, fmt: Format = Format.LABELED, profile: Profile = Profile.TOP) -> ParseTree:
    """Parse a whitespace-separated linearized tree.

    In ``LABELED`` format a bare ``]`` is also accepted and closes the most
    recent open bracket.
    """
    return from_linear(tuple(_lex(text, fmt)), profile)


def serialize(tree: ParseTree, fmt: Format = Format.LABELED) -> str:
    return seq_to_string(to_linear(tree), fmt)


def to_linear(tree: ParseTree) -> LinearSeq:
    out: list[Elem] = []

    def emit(node: Node) -> None:
        out.append(Open(node.label))
        for child in node.children:
            if isinstance(child, Node):
                emit(child)
            else:
                out.append(Tok(child))
        out.append(Close(node.label))

    if tree.root.label is None:
        for child in tree.root.children:
            if isinstance(child, Node):
                emit(child)
            else:
                out.append(Tok(child))
    else:
        emit(tree.root)
    return tuple(out)


def from_linear(seq: Sequence[Elem], profile: Profile = Profile.TOP) -> ParseTree:
    # each frame: (open position, label, children)
    stack: list[tuple[int, Label | None, list]] = [(-1, None, [])]
    for pos, e in enumerate(seq):
        if isinstance(e, Open):
            stack.append((pos, e.label, []))
        elif isinstance(e, Close):
            if len(stack) == 1:
                raise UnbalancedBrackets(pos, "close without open")
            start, label, children = stack.pop()
            if label != e.label:
                raise MismatchedCloseLabel(pos, label.name, e.label.name)
            if not children:
                raise EmptyNonTerminal(start, label.name)
            stack[-1][2].append(Node(label, tuple(children)))
        elif isinstance(e, Tok):
            stack[-1][2].append(e.token)
        else:
            raise TreeError(f"unknown element {e!r}")
    if len(stack) != 1:
        raise UnbalancedBrackets(stack[-1][0], "unclosed bracket")
    top = stack[0][2]
    if profile is Profile.TOP:
        if len(top) != 1 or not isinstance(top[0], Node):
            raise RootNotIntent("TOP tree must be a single bracketed intent spanning the utterance")
        return ParseTree(top[0], profile)
    return ParseTree(Node(None, tuple(top)), profile)


# -- structural queries --------------------------------------------------------


def is_flat(tree: ParseTree) -> bool:
    """True iff no labelled node is nested under another labelled node below the root."""
    for child in tree.root.children:
        if isinstance(child, Node) and any(isinstance(c, Node) for c in child.children):
            return False
    return True


def depth(tree: ParseTree) -> int:
    """Number of labelled nodes on the longest root-to-leaf path."""

    def walk(node: Node) -> int:
        below = max((walk(c) for c in node.children if isinstance(c, Node)), default=0)
        return below + (node.label is not None)

    return walk(tree.root)


def spans(tree: ParseTree) -> set[tuple[Label, int, int]]:
    out: set[tuple[Label, int, int]] = set()

    def walk(node: Node, start: int) -> int:
        pos = start
        for child in node.children:
            pos = walk(child, pos) if isinstance(child, Node) else pos + 1
        if node.label is not None:
            out.add((node.label, start, pos))
        return pos

    walk(tree.root, 0)
    return out


def labels_of(tree: ParseTree) -> set[Label]:
    return {n.label for n in tree.nonterminals()}
