"""Target-side dependency trees, projectivity checks and corpus file I/O.

A target corpus file holds one sentence block per tree, blocks separated by a
single blank line.  Every token line has five tab-separated columns::

    INDEX  FORM  PIECES  POS  HEAD

``PIECES`` is the ``|``-joined subword segmentation of ``FORM``; a literal
``|`` or backslash inside a piece is escaped with a backslash.  Non-final
pieces carry the ``@@`` continuation marker, so removing the markers and
concatenating the pieces gives back the form.
"""

from __future__ import annotations

import io
import logging
import os
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Sequence

logger = logging.getLogger(__name__)

CONTINUATION = "@@"


class TreeStructureError(ValueError):
    """Raised when heads do not describe a single-rooted, acyclic tree."""


class NonProjectiveError(ValueError):
    """Raised when a projective tree is required but the input has crossing arcs."""


class CorpusFormatError(ValueError):
    """Malformed corpus input; carries the 1-based line and column."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


def join_pieces(pieces: Sequence[str]) -> str:
    """Undo subword segmentation: strip continuation markers and concatenate."""
    return "".join(p[: -len(CONTINUATION)] if p.endswith(CONTINUATION) else p for p in pieces)


def detokenize_pieces(pieces: Sequence[str]) -> list[str]:
    """Group a flat piece stream into word forms.

    A piece ending in the continuation marker glues to the next one.
    """
    words, current = [], []
    for p in pieces:
        current.append(p)
        if not p.endswith(CONTINUATION):
            words.append(join_pieces(current))
            current = []
    if current:
        words.append(join_pieces(current))
    return words


@dataclass(frozen=True)
class Token:
    form: str
    pieces: tuple[str, ...]
    pos: str

    def __post_init__(self):
        object.__setattr__(self, "pieces", tuple(self.pieces))
        if not self.pieces or any(p == "" for p in self.pieces):
            raise ValueError(f"token {self.form!r} has empty pieces")
        if not self.pos:
            raise ValueError(f"token {self.form!r} has an empty PoS tag")
        if join_pieces(self.pieces) != self.form:
            raise ValueError(f"pieces {list(self.pieces)} do not reproduce form {self.form!r}")

    @classmethod
    def from_pieces(cls, pieces: Sequence[str], pos: str) -> "Token":
        return cls(join_pieces(pieces), tuple(pieces), pos)


def check_structure(heads: Sequence[int]) -> int:
    """Validate single-rootedness and acyclicity; return the root index (1-based).

    ``heads[i-1]`` is the head of token ``i``; 0 denotes the artificial root.
    """
    n = len(heads)
    if n == 0:
        raise TreeStructureError("empty tree")
    roots = []
    for i, h in enumerate(heads, start=1):
        if not isinstance(h, (int,)) or isinstance(h, bool):
            raise TreeStructureError(f"head of token {i} is not an integer: {h!r}")
        if h < 0 or h > n:
            raise TreeStructureError(f"head of token {i} out of range: {h}")
        if h == i:
            raise TreeStructureError(f"token {i} is its own head")
        if h == 0:
            roots.append(i)
    if len(roots) != 1:
        raise TreeStructureError(f"expected exactly one root, found {len(roots)}")
    # 0 = unvisited, 1 = on current path, 2 = reaches root
    state = [0] * (n + 1)
    state[0] = 2
    for start in range(1, n + 1):
        path = []
        node = start
        while state[node] == 0:
            state[node] = 1
            path.append(node)
            node = heads[node - 1]
        if state[node] == 1:
            raise TreeStructureError(f"cycle through token {node}")
        for p in path:
            state[p] = 2
    return roots[0]


@dataclass(frozen=True)
class DepTree:
    """Unlabeled dependency tree; tokens are 1..n in surface order."""

    tokens: tuple[Token, ...]
    heads: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        if len(self.tokens) != len(self.heads):
            raise TreeStructureError("tokens and heads differ in length")
        check_structure(self.heads)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def root(self) -> int:
        return self.heads.index(0) + 1

    @property
    def n_pieces(self) -> int:
        return sum(len(t.pieces) for t in self.tokens)

    @property
    def pieces(self) -> list[str]:
        return [p for t in self.tokens for p in t.pieces]

    @property
    def forms(self) -> list[str]:
        return [t.form for t in self.tokens]

    @property
    def pos_tags(self) -> list[str]:
        return [t.pos for t in self.tokens]

    def children(self, head: int) -> list[int]:
        return [i for i, h in enumerate(self.heads, start=1) if h == head]


@dataclass(frozen=True)
class SentencePair:
    source: tuple[str, ...]
    target: DepTree

    def __post_init__(self):
        object.__setattr__(self, "source", tuple(self.source))
        if not self.source:
            raise ValueError("empty source sentence")


def _heads_of(tree_or_heads) -> tuple[int, ...]:
    if isinstance(tree_or_heads, DepTree):
        return tree_or_heads.heads
    return tuple(tree_or_heads)


def is_projective(tree: DepTree | Sequence[int]) -> bool:
    """True iff every token strictly inside an arc's span descends from the arc's head.

    Accepts a :class:`DepTree` or a raw head sequence.  Structural defects
    raise :class:`TreeStructureError` instead of returning False.
    """
    heads = _heads_of(tree)
    check_structure(heads)
    n = len(heads)
    # ancestors[k] = set of all ancestors of token k
    ancestors: list[set[int]] = [set() for _ in range(n + 1)]
    for k in range(1, n + 1):
        node = heads[k - 1]
        while node != 0:
            ancestors[k].add(node)
            node = heads[node - 1]
    for d in range(1, n + 1):
        h = heads[d - 1]
        if h == 0:
            continue
        lo, hi = min(h, d), max(h, d)
        for k in range(lo + 1, hi):
            if h not in ancestors[k]:
                return False
    return True


def require_projective(tree: DepTree) -> None:
    if not is_projective(tree):
        raise NonProjectiveError("tree is not projective")


# -- file format ----------------------------------------------------------


def escape_piece(piece: str) -> str:
    return piece.replace("\\", "\\\\").replace("|", "\\|")


def split_pieces(field: str) -> list[str]:
    """Split a PIECES column on unescaped ``|`` and unescape."""
    pieces, buf, i = [], [], 0
    while i < len(field):
        ch = field[i]
        if ch == "\\":
            if i + 1 >= len(field):
                raise ValueError("dangling escape at end of pieces")
            buf.append(field[i + 1])
            i += 2
            continue
        if ch == "|":
            pieces.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
        i += 1
    pieces.append("".join(buf))
    return pieces


def format_tree(tree: DepTree) -> str:
    lines = []
    for i, (tok, head) in enumerate(zip(tree.tokens, tree.heads), start=1):
        pieces = "|".join(escape_piece(p) for p in tok.pieces)
        lines.append(f"{i}\t{tok.form}\t{pieces}\t{tok.pos}\t{head}")
    return "\n".join(lines) + "\n"


def write_target_corpus(trees: Iterable[DepTree], dest: str | os.PathLike | IO[str]) -> None:
    text = "\n".join(format_tree(t) for t in trees)
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)


def _read_text(src) -> str:
    if hasattr(src, "read"):
        data = src.read()
    else:
        with open(src, "rb") as f:
            data = f.read()
    if isinstance(data, bytes):
        try:
            return data.decode("utf-8")
        except UnicodeDecodeError as exc:
            line = data[: exc.start].count(b"\n") + 1
            raise CorpusFormatError("input is not valid UTF-8", line=line) from exc
    return data


def _parse_block(lines: list[tuple[int, str]]) -> DepTree:
    tokens, heads = [], []
    for expected, (lineno, line) in enumerate(lines, start=1):
        cols = line.split("\t")
        if len(cols) != 5:
            raise CorpusFormatError(f"expected 5 tab-separated columns, found {len(cols)}", lineno)
        index, form, pieces_field, pos, head = cols
        col_start = [1]
        for c in cols[:-1]:
            col_start.append(col_start[-1] + len(c) + 1)
        if not index.isdigit() or int(index) != expected:
            raise CorpusFormatError(
                f"malformed index sequence: expected {expected}, found {index!r}", lineno, col_start[0]
            )
        if not head.isdigit():
            raise CorpusFormatError(f"head is not a decimal number: {head!r}", lineno, col_start[4])
        try:
            pieces = split_pieces(pieces_field)
        except ValueError as exc:
            raise CorpusFormatError(str(exc), lineno, col_start[2]) from exc
        if pieces_field == "" or any(p == "" for p in pieces):
            raise CorpusFormatError("empty pieces", lineno, col_start[2])
        if not pos:
            raise CorpusFormatError("empty PoS tag", lineno, col_start[3])
        try:
            tokens.append(Token(form, tuple(pieces), pos))
        except ValueError as exc:
            raise CorpusFormatError(str(exc), lineno, col_start[1]) from exc
        heads.append((int(head), lineno, col_start[4]))
    n = len(heads)
    for h, lineno, col in heads:
        if h > n:
            raise CorpusFormatError(f"head out of range: {h} (sentence has {n} tokens)", lineno, col)
    try:
        return DepTree(tuple(tokens), tuple(h for h, _, _ in heads))
    except TreeStructureError as exc:
        raise CorpusFormatError(str(exc), lines[0][0]) from exc


def iter_target_corpus(src) -> Iterator[tuple[int, DepTree]]:
    """Yield ``(first_line_number, tree)`` for every block in ``src``."""
    text = _read_text(src)
    block: list[tuple[int, str]] = []
    for lineno, line in enumerate(io.StringIO(text), start=1):
        line = line.rstrip("\n").rstrip("\r")
        if line == "":
            if block:
                yield block[0][0], _parse_block(block)
                block = []
            continue
        block.append((lineno, line))
    if block:
        yield block[0][0], _parse_block(block)


def read_target_corpus(src, skip_nonprojective: bool = False) -> list[DepTree]:
    """Parse a target corpus from a path or stream.

    Non-projective trees are an error unless ``skip_nonprojective`` is set,
    in which case they are dropped with a warning.
    """
    trees = []
    for lineno, tree in iter_target_corpus(src):
        if not is_projective(tree):
            if skip_nonprojective:
                logger.warning("dropping non-projective tree at line %d", lineno)
                continue
            raise CorpusFormatError("tree is not projective", lineno)
        trees.append(tree)
    return trees


def read_source_corpus(src) -> list[tuple[str, ...]]:
    text = _read_text(src)
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip() == "":
            continue
        toks = line.split(" ")
        if any(t == "" for t in toks):
            raise CorpusFormatError("tokens must be separated by single spaces", lineno)
        out.append(tuple(toks))
    return out


def write_source_corpus(sources: Iterable[Sequence[str]], dest) -> None:
    text = "".join(" ".join(s) + "\n" for s in sources)
    if hasattr(dest, "write"):
        dest.write(text)
    else:
        with open(dest, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)


def read_parallel(source_path, target_path, skip_nonprojective: bool = False) -> list[SentencePair]:
    """Aligned pairs; with ``skip_nonprojective`` a dropped tree drops its source line too."""
    sources = read_source_corpus(source_path)
    blocks = list(iter_target_corpus(target_path))
    if len(sources) != len(blocks):
        raise CorpusFormatError(
            f"count mismatch: {len(sources)} source lines vs {len(blocks)} target blocks"
        )
    pairs = []
    for source, (lineno, tree) in zip(sources, blocks):
        if not is_projective(tree):
            if not skip_nonprojective:
                raise CorpusFormatError("tree is not projective", lineno)
            logger.warning("dropping non-projective tree at line %d", lineno)
            continue
        pairs.append(SentencePair(source, tree))
    return pairs


def filter_by_length(pairs: Sequence[SentencePair], max_source_len: int, return_counts: bool = False):
    """Keep pairs whose source has at most ``max_source_len`` tokens (inclusive).

    Order is preserved.  With ``return_counts`` the result is
    ``(kept, n_kept, n_dropped)``.
    """
    if max_source_len < 1:
        raise ValueError("max_source_len must be >= 1")
    kept = [p for p in pairs if len(p.source) <= max_source_len]
    dropped = len(pairs) - len(kept)
    logger.info("length filter %d: kept %d, dropped %d", max_source_len, len(kept), dropped)
    if return_counts:
        return kept, len(kept), dropped
    return kept
