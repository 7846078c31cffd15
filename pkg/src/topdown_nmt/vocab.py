"""Joint symbol table shared by the source side, decoder input and decoder output.

Ids are laid out in four contiguous sections::

    specials | empties (L W R S) | subwords | PoS tags

so that per-action legality masks are simple range unions.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .deptree import SentencePair
from .transition import (
    EMPTY,
    POS,
    ROOT_MARK,
    ROOTMARK,
    SUBWORD,
    ActionKind,
    Empty,
    Pos,
    Subword,
    Symbol,
)

PAD, UNK, ROOT, EOS = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<root>", "</s>")
EMPTY_ORDER = ("L", "W", "R", "S")
SECTIONS = ("special", "empty", "subword", "pos")


class UnknownPosError(KeyError):
    pass


@dataclass(frozen=True)
class JointVocab:
    subwords: tuple[str, ...]
    pos_tags: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "_sub_index", {s: i for i, s in enumerate(self.subwords)})
        object.__setattr__(self, "_pos_index", {s: i for i, s in enumerate(self.pos_tags)})

    # section boundaries
    @property
    def empty_start(self) -> int:
        return len(SPECIALS)

    @property
    def subword_start(self) -> int:
        return self.empty_start + len(EMPTY_ORDER)

    @property
    def pos_start(self) -> int:
        return self.subword_start + len(self.subwords)

    def __len__(self) -> int:
        return self.pos_start + len(self.pos_tags)

    def section_of(self, idx: int) -> str:
        if not 0 <= idx < len(self):
            raise IndexError(f"id {idx} outside vocabulary of size {len(self)}")
        if idx < self.empty_start:
            return "special"
        if idx < self.subword_start:
            return "empty"
        if idx < self.pos_start:
            return "subword"
        return "pos"

    def empty_id(self, action: ActionKind | str) -> int:
        short = action.short if isinstance(action, ActionKind) else action
        return self.empty_start + EMPTY_ORDER.index(short)

    def encode(self, symbol: Symbol) -> int:
        if symbol.kind == SUBWORD:
            i = self._sub_index.get(symbol.text)
            return UNK if i is None else self.subword_start + i
        if symbol.kind == POS:
            i = self._pos_index.get(symbol.text)
            if i is None:
                raise UnknownPosError(f"PoS tag {symbol.text!r} is not in the vocabulary")
            return self.pos_start + i
        if symbol.kind == EMPTY:
            return self.empty_id(symbol.text)
        if symbol.kind == ROOTMARK:
            return ROOT
        raise ValueError(f"cannot encode {symbol!r}")

    def decode(self, idx: int) -> Symbol:
        section = self.section_of(int(idx))
        if section == "special":
            if idx == ROOT:
                return ROOT_MARK
            return Symbol("special", SPECIALS[idx])
        if section == "empty":
            return Empty(EMPTY_ORDER[idx - self.empty_start])
        if section == "subword":
            return Subword(self.subwords[idx - self.subword_start])
        return Pos(self.pos_tags[idx - self.pos_start])

    def encode_tokens(self, tokens: Sequence[str]) -> list[int]:
        return [self.encode(Subword(t)) for t in tokens]

    def baseline_ids(self) -> np.ndarray:
        """Joint ids visible to the sequence baseline: specials then subwords."""
        return np.r_[np.arange(self.empty_start), np.arange(self.subword_start, self.pos_start)]

    def legal_mask(self, action: ActionKind, require_piece: bool = False) -> np.ndarray:
        """Boolean mask over ids that are legal outputs under ``action``."""
        mask = np.zeros(len(self), dtype=bool)
        if action is ActionKind.WORD:
            mask[self.subword_start : self.pos_start] = True
            if not require_piece:
                mask[self.empty_id("W")] = True
        else:
            mask[self.pos_start :] = True
            if action is not ActionKind.ROOT:
                mask[self.empty_id(action)] = True
        return mask

    # -- file I/O -----------------------------------------------------------

    def entries(self) -> list[tuple[int, str, str]]:
        out = [(i, "special", s) for i, s in enumerate(SPECIALS)]
        out += [(self.empty_start + i, "empty", f"φ{k}") for i, k in enumerate(EMPTY_ORDER)]
        out += [(self.subword_start + i, "subword", s) for i, s in enumerate(self.subwords)]
        out += [(self.pos_start + i, "pos", s) for i, s in enumerate(self.pos_tags)]
        return out

    def to_text(self) -> str:
        return "".join(f"{i}\t{sec}\t{surf}\n" for i, sec, surf in self.entries())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "JointVocab":
        subwords, tags = [], []
        expected = 0
        for lineno, line in enumerate(text.splitlines(), start=1):
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"vocabulary line {lineno}: expected ID, SECTION, SURFACE")
            idx, sec, surf = parts
            if int(idx) != expected:
                raise ValueError(f"vocabulary line {lineno}: ids must be consecutive from 0")
            expected += 1
            if sec == "subword":
                subwords.append(surf)
            elif sec == "pos":
                tags.append(surf)
            elif sec not in ("special", "empty"):
                raise ValueError(f"vocabulary line {lineno}: unknown section {sec!r}")
        vocab = cls(tuple(subwords), tuple(tags))
        if vocab.to_text() != text:
            raise ValueError("vocabulary file does not match the canonical layout")
        return vocab

    @classmethod
    def load(cls, path) -> "JointVocab":
        with open(path, encoding="utf-8", newline="") as f:
            return cls.from_text(f.read())


def _ranked(counts: Counter, min_freq: int) -> tuple[str, ...]:
    kept = [(-c, s) for s, c in counts.items() if c >= min_freq]
    return tuple(s for _, s in sorted(kept))


def build_vocab(pairs: Iterable[SentencePair], min_freq: int = 1) -> JointVocab:
    """Collect source tokens and target pieces into one subword section.

    Subwords below ``min_freq`` are left out (they encode to UNK); every
    observed PoS tag is kept.  Ordering is frequency-descending, then
    lexicographic.
    """
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    sub_counts: Counter = Counter()
    pos_counts: Counter = Counter()
    n = 0
    for pair in pairs:
        n += 1
        sub_counts.update(pair.source)
        for tok in pair.target.tokens:
            sub_counts.update(tok.pieces)
            pos_counts[tok.pos] += 1
    if n == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    return JointVocab(_ranked(sub_counts, min_freq), _ranked(pos_counts, 1))
