"""Insertion algebra over linearized trees.

A step ``(label, i, j)`` wraps the half-open element span ``[i, j)`` of the
current sequence in ``Open(label) ... Close(label)``. Indices are 0-based over
the elements of the sequence itself; no start symbol is counted.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tree import (
    Close,
    Elem,
    LinearSeq,
    Label,
    Node,
    Open,
    ParseTree,
    Profile,
    Tok,
    from_linear,
)


class InsertionError(ValueError):
    pass


class IndexOutOfRange(InsertionError):
    pass


class CrossingSpan(InsertionError):
    pass


class StepFailed(InsertionError):
    def __init__(self, index: int, cause: Exception):
        super().__init__(f"step {index}: {cause}")
        self.index = index
        self.cause = cause


@dataclass(frozen=True)
class InsertionStep:
    label: Label
    i: int
    j: int

    def __str__(self):
        return f"({self.label}, {self.i}, {self.j})"


class Ordering(enum.Enum):
    TOP_DOWN = "top-down"
    BOTTOM_UP = "bottom-up"


def depth_profile(seq: Sequence[Elem]) -> np.ndarray:
    """Bracket depth before each element; entry ``k`` is the depth at gap ``k``."""
    steps = np.fromiter(
        (1 if isinstance(e, Open) else -1 if isinstance(e, Close) else 0 for e in seq),
        dtype=np.int64,
        count=len(seq),
    )
    out = np.zeros(len(seq) + 1, dtype=np.int64)
    np.cumsum(steps, out=out[1:])
    return out


def is_well_nested(seq: Sequence[Elem], i: int, j: int) -> bool:
    level = 0
    for e in seq[i:j]:
        if isinstance(e, Open):
            level += 1
        elif isinstance(e, Close):
            level -= 1
            if level < 0:
                return False
    return level == 0


def apply(seq: LinearSeq, step: InsertionStep) -> LinearSeq:
    if step.label.is_eop:
        raise InsertionError("EoP cannot be inserted")
    i, j = step.i, step.j
    if not 0 <= i < j <= len(seq):
        raise IndexOutOfRange(f"span ({i}, {j}) outside sequence of length {len(seq)}")
    if not is_well_nested(seq, i, j):
        raise CrossingSpan(f"span ({i}, {j}) crosses a bracket")
    return (*seq[:i], Open(step.label), *seq[i:j], Close(step.label), *seq[j:])


def valid_span_mask(seq: Sequence[Elem]) -> np.ndarray:
    """Boolean ``(m+1, m+1)`` matrix; ``[i, j]`` is True iff ``[i, j)`` can be wrapped.

    A span is well-nested iff the depth at gap ``j`` equals the depth at gap
    ``i`` and no gap in between dips below it.
    """
    d = depth_profile(seq)
    n = len(d)
    # first gap k > i with d[k] < d[i]
    limit = np.full(n, n, dtype=np.int64)
    stack: list[int] = []
    for k in range(n):
        while stack and d[k] < d[stack[-1]]:
            limit[stack.pop()] = k
        stack.append(k)
    idx = np.arange(n)
    return (idx[None, :] > idx[:, None]) & (idx[None, :] < limit[:, None]) & (d[None, :] == d[:, None])


def valid_spans(seq: Sequence[Elem]) -> set[tuple[int, int]]:
    ii, jj = np.nonzero(valid_span_mask(seq))
    return set(zip(ii.tolist(), jj.tolist()))


# -- gold decomposition -----------------------------------------------------------


def _node_keys(tree: ParseTree) -> list[tuple[tuple, Label, int, int]]:
    """(path, label, depth, leftmost leaf index) for every labelled node."""
    out = []

    def walk(node: Node, path: tuple, start: int) -> int:
        pos = start
        if node.label is not None:
            out.append((path, node.label, len(path), start))
        for k, child in enumerate(node.children):
            pos = walk(child, path + (k,), pos) if isinstance(child, Node) else pos + 1
        return pos

    walk(tree.root, (), 0)
    return out


def _emit(root: Node, inserted: set[tuple], target: tuple) -> tuple[list[Elem], int, int]:
    """Emit the partial sequence holding only ``inserted`` nodes; locate ``target``."""
    out: list[Elem] = []
    where = [0, 0]

    def walk(node: Node, path: tuple) -> None:
        shown = node.label is not None and path in inserted
        if shown:
            out.append(Open(node.label))
        if path == target:
            where[0] = len(out)
        for k, child in enumerate(node.children):
            if isinstance(child, Node):
                walk(child, path + (k,))
            else:
                out.append(Tok(child))
        if path == target:
            where[1] = len(out)
        if shown:
            out.append(Close(node.label))

    walk(root, ())
    return out, where[0], where[1]


def decompose(tree: ParseTree, ordering: Ordering = Ordering.TOP_DOWN) -> list[tuple[LinearSeq, InsertionStep]]:
    """Gold (partial sequence, next step) pairs, one per labelled node.

    Top-down visits nodes by increasing depth, bottom-up by decreasing depth;
    ties go to the node whose leftmost leaf comes first.
    """
    keyed = _node_keys(tree)
    sign = 1 if ordering is Ordering.TOP_DOWN else -1
    keyed.sort(key=lambda k: (sign * k[2], k[3]))
    inserted: set[tuple] = set()
    pairs = []
    for path, label, _, _ in keyed:
        partial, i, j = _emit(tree.root, inserted, path)
        pairs.append((tuple(partial), InsertionStep(label, i, j)))
        inserted.add(path)
    return pairs


def reconstruct(tokens: Sequence[str], steps: Sequence[InsertionStep], profile: Profile = Profile.TOP) -> ParseTree:
    seq: LinearSeq = tuple(Tok(t) for t in tokens)
    for k, step in enumerate(steps):
        try:
            seq = apply(seq, step)
        except InsertionError as exc:
            raise StepFailed(k, exc) from exc
    return from_linear(seq, profile)


def bare(tokens: Sequence[str]) -> LinearSeq:
    return tuple(Tok(t) for t in tokens)

