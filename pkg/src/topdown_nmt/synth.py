"""Synthetic bracketed-phrase corpora with exactly recoverable trees.

Sentences come from a small recursive grammar.  A phrase is a head word
(verb or preposition class) with dependents on both sides; nested phrases
are wrapped in ``(`` ... ``)``, whose bracket tokens attach to the phrase
head as its outermost children.  Single-word dependents come from a
separate leaf lexicon, so every bracket level contains exactly one head
word and the tree is a deterministic function of the token string.

Words are split into 1-3 syllable pieces (``@@`` continuation marker).  The
source side is the target piece sequence passed through a fixed reversible
substitution (uppercasing, square brackets).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .deptree import DepTree, SentencePair, Token, is_projective

HEAD_TAGS = ("VB", "VBD", "VBZ", "IN")
LEAF_TAGS = ("NN", "JJ", "DT", "RB")
OPEN, CLOSE = "(", ")"
OPEN_TAG, CLOSE_TAG = "-LRB-", "-RRB-"
_CONSONANTS = "kmtsnpr"
_VOWELS = "aiou"
_SOURCE_MAP = {OPEN: "[", CLOSE: "]"}


@dataclass(frozen=True)
class SynthSpec:
    vocab_size: int = 40  # lexicon words, split evenly over the eight word classes
    min_depth: int = 0
    max_depth: int = 3
    min_nodes: int = 1
    max_nodes: int = 8
    seed: int = 0
    lexicon_seed: int = 0  # shared by corpora that must speak the same language
    phrase_prob: float = 0.5

    def validate(self) -> None:
        if self.vocab_size < len(HEAD_TAGS) + len(LEAF_TAGS):
            raise ValueError("vocab_size must cover every word class")
        if not 0 <= self.min_depth <= self.max_depth:
            raise ValueError("need 0 <= min_depth <= max_depth")
        if not 1 <= self.min_nodes <= self.max_nodes:
            raise ValueError("need 1 <= min_nodes <= max_nodes")
        if self.min_depth > 0 and self.max_nodes < 3 * self.min_depth + 2:
            raise ValueError(
                f"depth {self.min_depth} needs at least {3 * self.min_depth + 2} nodes, max_nodes is {self.max_nodes}"
            )
        if not 0.0 <= self.phrase_prob <= 1.0:
            raise ValueError("phrase_prob must lie in [0, 1]")


def to_source(piece: str) -> str:
    return _SOURCE_MAP.get(piece, piece.upper())


def from_source(token: str) -> str:
    inverse = {v: k for k, v in _SOURCE_MAP.items()}
    return inverse.get(token, token.lower())


def build_lexicon(spec: SynthSpec) -> dict[str, list[tuple[str, ...]]]:
    """Word class -> list of piece tuples, deterministic in ``lexicon_seed``."""
    rng = np.random.default_rng(spec.lexicon_seed)
    syllables = [c + v for c in _CONSONANTS for v in _VOWELS]
    tags = HEAD_TAGS + LEAF_TAGS
    per_tag = spec.vocab_size // len(tags)
    extra = spec.vocab_size % len(tags)
    seen: set[tuple[str, ...]] = set()
    lexicon: dict[str, list[tuple[str, ...]]] = {}
    for k, tag in enumerate(tags):
        words = []
        while len(words) < per_tag + (1 if k < extra else 0):
            n = int(rng.integers(1, 4))
            sylls = [syllables[int(i)] for i in rng.integers(0, len(syllables), size=n)]
            pieces = tuple(s + "@@" for s in sylls[:-1]) + (sylls[-1],)
            if pieces in seen:
                continue
            seen.add(pieces)
            words.append(pieces)
        lexicon[tag] = words
    return lexicon


class _Node:
    __slots__ = ("tag", "pieces", "left", "right")

    def __init__(self, tag, pieces):
        self.tag, self.pieces = tag, pieces
        self.left: list[_Node] = []
        self.right: list[_Node] = []


class _Generator:
    def __init__(self, spec: SynthSpec, rng: np.random.Generator):
        self.spec, self.rng = spec, rng
        self.lexicon = build_lexicon(spec)

    def word(self, tags: Sequence[str]) -> _Node:
        tag = tags[int(self.rng.integers(len(tags)))]
        words = self.lexicon[tag]
        return _Node(tag, words[int(self.rng.integers(len(words)))])

    def children(self, budget: int, level: int, depth_cap: int) -> tuple[list[_Node], int]:
        kids, depth = [], level
        while budget > 0:
            if budget >= 4 and level < depth_cap and self.rng.random() < self.spec.phrase_prob:
                size = int(self.rng.integers(4, budget + 1))
                node, d = self.phrase(size, level + 1, depth_cap)
                depth = max(depth, d)
            else:
                size = 1
                node = self.word(LEAF_TAGS)
            kids.append(node)
            budget -= size
        return kids, depth

    def attach(self, head: _Node, kids: list[_Node]) -> None:
        split = int(self.rng.integers(0, len(kids) + 1))
        head.left, head.right = kids[:split], kids[split:]

    def phrase(self, size: int, level: int, depth_cap: int) -> tuple[_Node, int]:
        head = self.word(HEAD_TAGS)
        kids, depth = self.children(size - 3, level, depth_cap)
        self.attach(head, kids)
        head.left.insert(0, _Node(OPEN_TAG, (OPEN,)))
        head.right.append(_Node(CLOSE_TAG, (CLOSE,)))
        return head, depth

    def sentence(self, n: int) -> tuple[_Node, int]:
        root = self.word(HEAD_TAGS)
        kids, depth = self.children(n - 1, 0, self.spec.max_depth)
        self.attach(root, kids)
        return root, depth


def _flatten(root: _Node) -> DepTree:
    order: list[tuple[_Node, _Node | None]] = []

    def walk(node, parent):
        for c in node.left:
            walk(c, node)
        order.append((node, parent))
        for c in node.right:
            walk(c, node)

    walk(root, None)
    position = {id(node): i for i, (node, _) in enumerate(order, start=1)}
    tokens = tuple(Token.from_pieces(node.pieces, node.tag) for node, _ in order)
    heads = tuple(0 if parent is None else position[id(parent)] for _, parent in order)
    return DepTree(tokens, heads)


def make_pair(tree: DepTree) -> SentencePair:
    return SentencePair(tuple(to_source(p) for p in tree.pieces), tree)


def nesting_depth(tree: DepTree) -> int:
    return max(_depth_of(tree, i) for i in range(1, len(tree) + 1))


def _depth_of(tree: DepTree, i: int) -> int:
    depth, node = 0, i
    while node != 0:
        if tree.tokens[node - 1].pos == OPEN_TAG:
            depth += 1
        node = tree.heads[node - 1]
    return depth


def synth_generate(spec: SynthSpec, count: int) -> list[SentencePair]:
    """``count`` pairs with node counts and nesting depths inside the spec's ranges."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    gen = _Generator(spec, rng)
    pairs = []
    attempts = 0
    while len(pairs) < count:
        attempts += 1
        if attempts > 1000 * max(count, 1):
            raise ValueError("could not satisfy the depth range; widen the node or depth range")
        n = int(rng.integers(spec.min_nodes, spec.max_nodes + 1))
        root, depth = gen.sentence(n)
        if not spec.min_depth <= depth <= spec.max_depth:
            continue
        tree = _flatten(root)
        assert len(tree) == n and is_projective(tree)
        pairs.append(make_pair(tree))
    return pairs
