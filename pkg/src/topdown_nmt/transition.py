"""Top-down, left-to-right transition system over projective dependency trees.

Every node is announced by its PoS tag, then expands through a pending
action stack: LEFT (leftmost child, then a SIBLING chain running towards
the head), WORD (the head's subword pieces), RIGHT (the nearest right child,
then a SIBLING chain running outwards).  Each expansion closes with the
empty symbol of its action.  The root is announced by a dedicated ROOT step
and has no SIBLING entry.

A tree with ``n`` nodes and ``s`` pieces always takes ``4n + s`` steps.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .deptree import DepTree, NonProjectiveError, Token, is_projective, join_pieces


class ActionKind(enum.Enum):
    ROOT = "ROOT"
    LEFT = "LEFT"
    WORD = "WORD"
    RIGHT = "RIGHT"
    SIBLING = "SIBLING"

    @property
    def short(self) -> str:
        return _SHORT[self]


_SHORT = {
    ActionKind.ROOT: "ROOT",
    ActionKind.LEFT: "L",
    ActionKind.WORD: "W",
    ActionKind.RIGHT: "R",
    ActionKind.SIBLING: "S",
}
_BY_SHORT = {"L": ActionKind.LEFT, "W": ActionKind.WORD, "R": ActionKind.RIGHT, "S": ActionKind.SIBLING}

# Column order of the action embedding table.
ACTION_INDEX = {a: i for i, a in enumerate(ActionKind)}

SUBWORD, POS, EMPTY, ROOTMARK = "subword", "pos", "empty", "root"


@dataclass(frozen=True)
class Symbol:
    kind: str
    text: str = ""

    def __str__(self) -> str:
        return render_symbol(self)


def Subword(text: str) -> Symbol:
    return Symbol(SUBWORD, text)


def Pos(tag: str) -> Symbol:
    return Symbol(POS, tag)


def Empty(action: ActionKind | str) -> Symbol:
    short = action.short if isinstance(action, ActionKind) else action
    if short not in _BY_SHORT:
        raise ValueError(f"no empty symbol for {action!r}")
    return Symbol(EMPTY, short)


ROOT_MARK = Symbol(ROOTMARK, "ROOT")


class TransitionError(ValueError):
    """Illegal output for the current action, action/stack mismatch, or step after completion."""


@dataclass(frozen=True)
class StackEntry:
    action: ActionKind
    owner: int | None = None
    side: str | None = None

    def __post_init__(self):
        if self.action is ActionKind.ROOT:
            raise ValueError("ROOT is never stacked")
        if self.side is not None and self.action is not ActionKind.SIBLING:
            raise ValueError("only SIBLING entries carry a side")


@dataclass(frozen=True)
class TransitionStep:
    action: ActionKind
    input: Symbol
    output: Symbol


def is_legal(action: ActionKind, symbol: Symbol) -> bool:
    """Output legality by symbol class.

    WORD takes subwords or its own empty symbol; LEFT, RIGHT and SIBLING
    take PoS tags or their own empty symbol; ROOT takes a PoS tag only.
    """
    if action is ActionKind.WORD:
        return symbol.kind == SUBWORD or symbol == Empty(ActionKind.WORD)
    if action is ActionKind.ROOT:
        return symbol.kind == POS
    return symbol.kind == POS or symbol == Empty(action)


def legal_outputs(action: ActionKind):
    """Return a predicate over symbols accepting exactly the legal outputs of ``action``."""
    return lambda symbol: is_legal(action, symbol)


def _node_entries(node: int | None, is_root: bool, side: str | None) -> tuple[StackEntry, ...]:
    # bottom .. top
    entries = []
    if not is_root:
        entries.append(StackEntry(ActionKind.SIBLING, node, side))
    entries += [
        StackEntry(ActionKind.RIGHT, node),
        StackEntry(ActionKind.WORD, node),
        StackEntry(ActionKind.LEFT, node),
    ]
    return tuple(entries)


def stack_update(
    stack: Sequence[StackEntry],
    action: ActionKind,
    output: Symbol,
    new_node: int | None = None,
    side: str | None = None,
) -> tuple[StackEntry, ...]:
    """Apply one output to the action stack (last element is the top).

    ``new_node``/``side`` label the entries pushed for a newly announced node.
    When ``side`` is omitted it follows from the action: LEFT pushes a
    left-side sibling chain, RIGHT a right-side one, SIBLING keeps the side
    of the entry it pops.
    """
    stack = tuple(stack)
    if not is_legal(action, output):
        raise TransitionError(f"{render_symbol(output)} is not a legal output under {action.value}")
    if action is ActionKind.ROOT:
        if stack:
            raise TransitionError("ROOT is only valid on an empty stack")
        return _node_entries(new_node, True, None)
    if not stack:
        raise TransitionError(f"{action.value} taken with an empty stack")
    top = stack[-1]
    if top.action is not action:
        raise TransitionError(f"action {action.value} does not match stack top {top.action.value}")
    if output.kind == EMPTY:
        return stack[:-1]
    if output.kind == SUBWORD:
        return stack
    if side is None:
        side = {ActionKind.LEFT: "left", ActionKind.RIGHT: "right"}.get(action, top.side)
    return stack[:-1] + _node_entries(new_node, False, side)


def render_stack(stack: Sequence[StackEntry]) -> str:
    """Top-first, ``|``-joined short action names."""
    return "|".join(e.action.short for e in reversed(stack))


# -- oracle -----------------------------------------------------------------


def _child_lists(tree: DepTree) -> tuple[list[list[int]], list[list[int]]]:
    n = len(tree)
    left = [[] for _ in range(n + 1)]
    right = [[] for _ in range(n + 1)]
    for d, h in enumerate(tree.heads, start=1):
        if h == 0:
            continue
        (left if d < h else right)[h].append(d)
    # ascending surface order: left chains run towards the head, right chains away from it
    return left, right


def oracle(tree: DepTree) -> list[TransitionStep]:
    """Canonical transition sequence that generates ``tree``."""
    if len(tree) == 0:
        raise ValueError("empty tree")
    if not is_projective(tree):
        raise NonProjectiveError("oracle requires a projective tree")
    left, right = _child_lists(tree)
    emitted = [0] * (len(tree) + 1)
    steps: list[TransitionStep] = []
    prev = ROOT_MARK
    root = tree.root
    out = Pos(tree.tokens[root - 1].pos)
    steps.append(TransitionStep(ActionKind.ROOT, prev, out))
    stack = stack_update((), ActionKind.ROOT, out, root)
    prev = out
    while stack:
        top = stack[-1]
        owner = top.owner
        new_node = None
        if top.action is ActionKind.WORD:
            pieces = tree.tokens[owner - 1].pieces
            if emitted[owner] < len(pieces):
                out = Subword(pieces[emitted[owner]])
                emitted[owner] += 1
            else:
                out = Empty(ActionKind.WORD)
        else:
            if top.action is ActionKind.LEFT:
                candidates = left[owner]
            elif top.action is ActionKind.RIGHT:
                candidates = right[owner]
            else:
                parent = tree.heads[owner - 1]
                chain = left[parent] if top.side == "left" else right[parent]
                pos = chain.index(owner)
                candidates = chain[pos + 1 :]
            if candidates:
                new_node = candidates[0]
                out = Pos(tree.tokens[new_node - 1].pos)
            else:
                out = Empty(top.action)
        steps.append(TransitionStep(top.action, prev, out))
        stack = stack_update(stack, top.action, out, new_node)
        prev = out
    return steps


def expected_length(n: int, s: int) -> int:
    """Number of transition steps for ``n`` nodes carrying ``s`` pieces in total."""
    if n < 1 or s < n:
        raise ValueError("need n >= 1 and s >= n")
    return 4 * n + s


def replay_stacks(steps: Iterable[TransitionStep]) -> list[tuple[StackEntry, ...]]:
    """Stack contents after every step, recomputed with :func:`stack_update`."""
    ex = Executor()
    stacks = []
    for st in steps:
        if ex.required_action is not st.action:
            raise TransitionError(
                f"recorded action {st.action.value} but the stack requires "
                f"{ex.required_action.value if ex.required_action else 'nothing'}"
            )
        ex.step(st.output)
        stacks.append(ex.stack)
    return stacks


# -- executor ---------------------------------------------------------------


@dataclass
class _Node:
    pos: str
    parent: int | None
    side: str | None
    pieces: list[str] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)


class Executor:
    """Incremental tree builder consuming output symbols.

    ``required_action`` names the action the next output must satisfy, or is
    None once the stack has emptied and the tree is complete.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.stack: tuple[StackEntry, ...] = ()
        self.started = False
        self.n_steps = 0
        self.last_output: Symbol = ROOT_MARK

    @property
    def done(self) -> bool:
        return self.started and not self.stack

    @property
    def required_action(self) -> ActionKind | None:
        if not self.started:
            return ActionKind.ROOT
        if not self.stack:
            return None
        return self.stack[-1].action

    @property
    def needs_piece(self) -> bool:
        """True when the WORD owner has no pieces yet, so its empty symbol would be premature."""
        if not self.stack or self.stack[-1].action is not ActionKind.WORD:
            return False
        return not self.nodes[self.stack[-1].owner].pieces

    def accepts(self, symbol: Symbol) -> bool:
        action = self.required_action
        if action is None or not is_legal(action, symbol):
            return False
        if symbol == Empty(ActionKind.WORD) and self.needs_piece:
            return False
        return True

    def copy(self) -> "Executor":
        other = Executor.__new__(Executor)
        other.nodes = [
            _Node(nd.pos, nd.parent, nd.side, list(nd.pieces), list(nd.left), list(nd.right))
            for nd in self.nodes
        ]
        other.stack = self.stack
        other.started = self.started
        other.n_steps = self.n_steps
        other.last_output = self.last_output
        return other

    def step(self, output: Symbol) -> ActionKind | None:
        action = self.required_action
        if action is None:
            raise TransitionError("step after the tree was completed")
        if not is_legal(action, output):
            raise TransitionError(f"{render_symbol(output)} is not a legal output under {action.value}")
        if output == Empty(ActionKind.WORD) and self.needs_piece:
            raise TransitionError("a word must have at least one piece before its empty symbol")
        new_node = None
        if action is ActionKind.ROOT:
            new_node = self._add(_Node(output.text, None, None))
            self.started = True
        elif output.kind == POS:
            top = self.stack[-1]
            if action is ActionKind.LEFT:
                parent, side = top.owner, "left"
            elif action is ActionKind.RIGHT:
                parent, side = top.owner, "right"
            else:
                parent, side = self.nodes[top.owner].parent, top.side
            new_node = self._add(_Node(output.text, parent, side))
            getattr(self.nodes[parent], side).append(new_node)
        elif output.kind == SUBWORD:
            self.nodes[self.stack[-1].owner].pieces.append(output.text)
        self.stack = stack_update(self.stack, action, output, new_node)
        self.n_steps += 1
        self.last_output = output
        return self.required_action

    def _add(self, node: _Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def surface_order(self) -> list[int]:
        """Node ids of the (partial) tree in surface order."""
        if not self.nodes:
            return []
        order: list[int] = []
        # iterative in-order walk: left children, node, right children (nearest first)
        work: list[tuple[int, bool]] = [(0, False)]
        while work:
            node, expanded = work.pop()
            if expanded:
                order.append(node)
                continue
            nd = self.nodes[node]
            # push in reverse of visiting order
            for c in reversed(nd.right):
                work.append((c, False))
            work.append((node, True))
            for c in reversed(nd.left):
                work.append((c, False))
        return order

    def tree(self, partial: bool = False) -> DepTree:
        """Materialise the built tree.

        With ``partial`` the tree is returned before completion; nodes without
        pieces then get a single placeholder piece ``_``.
        """
        if not self.done and not partial:
            raise TransitionError("tree is not complete")
        order = self.surface_order()
        position = {node: i for i, node in enumerate(order, start=1)}
        tokens, heads = [], []
        for node in order:
            nd = self.nodes[node]
            pieces = nd.pieces or ["_"]
            tokens.append(Token(join_pieces(pieces), tuple(pieces), nd.pos))
            heads.append(0 if nd.parent is None else position[nd.parent])
        return DepTree(tuple(tokens), tuple(heads))


def executor_new() -> Executor:
    return Executor()


def executor_step(state: Executor, output: Symbol) -> tuple[Executor, ActionKind | None]:
    """Functional form of :meth:`Executor.step`; ``state`` is left untouched."""
    nxt = state.copy()
    return nxt, nxt.step(output)


def execute(outputs: Iterable[Symbol]) -> DepTree:
    ex = Executor()
    for sym in outputs:
        ex.step(sym)
    return ex.tree()


def steps_from_outputs(outputs: Iterable[Symbol]) -> list[TransitionStep]:
    """Rebuild full steps (action, input, output) from an output stream."""
    ex = Executor()
    steps = []
    prev = ROOT_MARK
    for sym in outputs:
        steps.append(TransitionStep(ex.required_action, prev, sym))
        ex.step(sym)
        prev = sym
    return steps


# -- textual dump -----------------------------------------------------------

_EMPTY_TEXT = {f"φ{k}": k for k in _BY_SHORT}


def render_symbol(sym: Symbol) -> str:
    if sym.kind == EMPTY:
        return f"φ{sym.text}"
    if sym.kind == ROOTMARK:
        return "ROOT"
    text = sym.text
    if text.startswith("\\") or text.startswith("φ") or text == "ROOT":
        text = "\\" + text
    return text


def _parse_symbol(text: str, action: ActionKind) -> Symbol:
    if text in _EMPTY_TEXT:
        return Empty(_EMPTY_TEXT[text])
    if text == "ROOT":
        return ROOT_MARK
    if text.startswith("\\"):
        text = text[1:]
    return Subword(text) if action is ActionKind.WORD else Pos(text)


def format_steps(steps: Sequence[TransitionStep]) -> str:
    """One line per step: ``ACTION::INPUT<TAB>OUTPUT<TAB>STACK`` (stack top-first)."""
    lines = []
    for st, stack in zip(steps, replay_stacks(steps)):
        lines.append(
            f"{st.action.value}::{render_symbol(st.input)}\t{render_symbol(st.output)}\t{render_stack(stack)}"
        )
    return "\n".join(lines) + "\n"


def parse_steps(lines: Iterable[str]) -> list[TransitionStep]:
    """Parse one sequence; the input column must repeat the previous output."""
    steps = []
    prev = ROOT_MARK
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        cols = line.split("\t")
        if len(cols) != 3 or "::" not in cols[0]:
            raise TransitionError(f"line {lineno}: malformed transition line")
        action_name, _, input_text = cols[0].partition("::")
        try:
            action = ActionKind(action_name)
        except ValueError:
            raise TransitionError(f"line {lineno}: unknown action {action_name!r}") from None
        if input_text != render_symbol(prev):
            raise TransitionError(
                f"line {lineno}: input {input_text!r} does not repeat the previous output {render_symbol(prev)!r}"
            )
        output = _parse_symbol(cols[1], action)
        steps.append(TransitionStep(action, prev, output))
        prev = output
    return steps


def format_dump(sequences: Iterable[Sequence[TransitionStep]]) -> str:
    return "\n".join(format_steps(s) for s in sequences)


def parse_dump(text: str) -> Iterator[list[TransitionStep]]:
    block: list[str] = []
    for line in text.splitlines():
        if line == "":
            if block:
                yield parse_steps(block)
                block = []
            continue
        block.append(line)
    if block:
        yield parse_steps(block)


def tree_from_steps(steps: Sequence[TransitionStep]) -> DepTree:
    """Execute a recorded sequence, checking the recorded actions along the way."""
    ex = Executor()
    for i, st in enumerate(steps, start=1):
        if ex.required_action is not st.action:
            raise TransitionError(f"step {i}: recorded action {st.action.value} disagrees with the stack")
        ex.step(st.output)
    return ex.tree()
