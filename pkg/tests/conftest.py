"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

import itertools
import random

import pytest

from topdown_nmt.deptree import DepTree, Token

SYLLABLES = ["ba", "ko", "mi", "tu", "re", "sa", "|", "\\x", "φ", "ROOT"]
TAGS = ["NN", "VB", "IN", "JJ", "VBZ"]


def crossing_projective(heads) -> bool:
    """Brute force: projective iff no two arcs cross (the root arc from 0 included)."""
    arcs = [(min(h, d), max(h, d)) for d, h in enumerate(heads, start=1)]
    for (a, b), (c, d) in itertools.combinations(arcs, 2):
        if a < c < b < d or c < a < d < b:
            return False
    return True


def is_tree(heads) -> bool:
    n = len(heads)
    if sum(1 for h in heads if h == 0) != 1:
        return False
    for d in range(1, n + 1):
        seen, node = set(), d
        while node != 0:
            if node in seen:
                return False
            seen.add(node)
            node = heads[node - 1]
    return True


def all_projective_heads(n: int):
    for heads in itertools.product(range(n + 1), repeat=n):
        if all(h != d for d, h in enumerate(heads, start=1)) and is_tree(heads) and crossing_projective(heads):
            yield heads


def random_pieces(rng: random.Random, k: int | None = None) -> list[str]:
    k = k or rng.randint(1, 3)
    sylls = [rng.choice(SYLLABLES) for _ in range(k)]
    return [s + "@@" for s in sylls[:-1]] + [sylls[-1]]


def tree_from_heads(heads, rng: random.Random | None = None, pieces=None) -> DepTree:
    rng = rng or random.Random(0)
    tokens = []
    for i in range(len(heads)):
        ps = pieces[i] if pieces else random_pieces(rng)
        tokens.append(Token.from_pieces(ps, rng.choice(TAGS)))
    return DepTree(tuple(tokens), tuple(heads))


def random_projective_heads(rng: random.Random, n: int) -> tuple[int, ...]:
    """Projective tree built independently of the package.

    Recursive interval splitting gives a binary projective tree; random
    lifts of a node to its grandparent (kept only when no arcs cross) then
    produce nodes with several children on each side.
    """
    heads = [0] * n

    def build(lo: int, hi: int, parent: int) -> None:
        if lo > hi:
            return
        r = rng.randint(lo, hi)
        heads[r - 1] = parent
        build(lo, r - 1, r)
        build(r + 1, hi, r)

    build(1, n, 0)
    for _ in range(2 * n):
        d = rng.randint(1, n)
        h = heads[d - 1]
        if h == 0 or heads[h - 1] == 0:
            continue
        trial = list(heads)
        trial[d - 1] = heads[h - 1]
        if crossing_projective(trial):
            heads = trial
    return tuple(heads)


def random_projective_tree(rng: random.Random, max_n: int = 12) -> DepTree:
    n = rng.randint(1, max_n)
    return tree_from_heads(random_projective_heads(rng, n), rng)


@pytest.fixture(scope="session")
def random_trees():
    rng = random.Random(20240601)
    return [random_projective_tree(rng) for _ in range(1000)]


def until_fragment() -> DepTree:
    """"Until recently , is": IN heads RB, the comma and IN attach to the VBZ root."""
    words = [("Until", "IN", 4), ("recently", "RB", 1), (",", ",", 4), ("is", "VBZ", 0)]
    tokens = tuple(Token.from_pieces([w], tag) for w, tag, _ in words)
    return DepTree(tokens, tuple(h for _, _, h in words))


@pytest.fixture
def until_tree():
    return until_fragment()


# acceptance results, filled by test_acceptance and echoed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
