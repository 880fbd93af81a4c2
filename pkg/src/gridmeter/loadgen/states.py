"""Loader states and transition tables.

Table file format, one row per line::

    # comment
    Init -> Network:1
    Network -> Memory:0.5,Cpu:0.5

States without a row default to ``Done`` being absorbing; every other state
that can be reached must have a row.
"""

from __future__ import annotations

import enum
import math
from collections import deque

from gridmeter.errors import TableError

PROB_TOLERANCE = 1e-9


class LoadState(enum.Enum):
    Init = "Init"
    Network = "Network"
    Memory = "Memory"
    Cpu = "Cpu"
    Done = "Done"

    @classmethod
    def parse(cls, text: str) -> "LoadState":
        for state in cls:
            if state.value.lower() == text.strip().lower():
                return state
        raise TableError(f"unknown state {text.strip()!r}")


class TransitionTable:
    """Rows map a state to its weighted successors.

    With ``require_absorption`` (the default) the table must reach ``Done``
    with probability 1 from every state reachable from ``Init``. Tests of
    long-run behaviour switch it off to build recurrent chains.
    """

    def __init__(self, rows, *, require_absorption: bool = True):
        self.rows: dict[LoadState, list[tuple[LoadState, float]]] = {
            state: [(nxt, float(p)) for nxt, p in successors]
            for state, successors in rows.items()
        }
        done_row = self.rows.setdefault(LoadState.Done, [(LoadState.Done, 1.0)])
        if done_row != [(LoadState.Done, 1.0)]:
            raise TableError("Done is absorbing and cannot have other successors")

        for state, successors in self.rows.items():
            if not successors:
                raise TableError(f"row {state.value} is empty")
            for _, p in successors:
                if not 0.0 <= p <= 1.0:
                    raise TableError(f"row {state.value}: probability {p} outside [0,1]")
            total = math.fsum(p for _, p in successors)
            if abs(total - 1.0) > PROB_TOLERANCE:
                raise TableError(f"row {state.value} sums to {total!r}, not 1")

        reachable = self.reachable_from(LoadState.Init)
        missing = [s.value for s in reachable if s not in self.rows]
        if missing:
            raise TableError(f"no row for reachable state(s): {', '.join(missing)}")
        if require_absorption:
            trapped = reachable - self._can_reach_done()
            if trapped:
                names = ", ".join(sorted(s.value for s in trapped))
                raise TableError(f"state(s) never reach Done: {names}")

    @property
    def deterministic(self) -> bool:
        return all(len(row) == 1 and row[0][1] == 1.0 for row in self.rows.values())

    @property
    def mode(self) -> str:
        return "deterministic" if self.deterministic else "probabilistic"

    def successors(self, state: LoadState) -> list[LoadState]:
        return [nxt for nxt, p in self.rows.get(state, ()) if p > 0]

    def reachable_from(self, start: LoadState) -> set[LoadState]:
        seen = {start}
        queue = deque([start])
        while queue:
            for nxt in self.successors(queue.popleft()):
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return seen

    def _can_reach_done(self) -> set[LoadState]:
        # In a finite chain, absorption with probability 1 is equivalent to
        # every reachable state having some path to the absorbing state.
        good = {LoadState.Done}
        changed = True
        while changed:
            changed = False
            for state in self.rows:
                if state not in good and any(n in good for n in self.successors(state)):
                    good.add(state)
                    changed = True
        return good

    def __eq__(self, other):
        return isinstance(other, TransitionTable) and self.rows == other.rows

    def __repr__(self):
        return f"TransitionTable({self.mode}, {format_table(self)!r})"


def default_table() -> TransitionTable:
    """Stage-in, allocate, compute: Init -> Network -> Memory -> Cpu -> Done."""
    S = LoadState
    return TransitionTable({
        S.Init: [(S.Network, 1.0)],
        S.Network: [(S.Memory, 1.0)],
        S.Memory: [(S.Cpu, 1.0)],
        S.Cpu: [(S.Done, 1.0)],
    })


def next_state(table: TransitionTable, current: LoadState, rng) -> LoadState:
    row = table.rows.get(current)
    if row is None:
        raise TableError(f"no row for state {current.value}")
    if len(row) == 1:
        return row[0][0]
    u = rng.random()
    acc = 0.0
    for state, p in row:
        acc += p
        if u < acc:
            return state
    # u landed in the rounding sliver above the cumulative sum
    return next(state for state, p in reversed(row) if p > 0)


def parse_table(text: str, *, require_absorption: bool = True) -> TransitionTable:
    rows = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        lhs, arrow, rhs = line.partition("->")
        if not arrow:
            raise TableError(f"line {lineno}: expected 'FROM -> TO:prob[,...]'")
        src = LoadState.parse(lhs)
        if src in rows:
            raise TableError(f"line {lineno}: duplicate row for {src.value}")
        successors = []
        for item in rhs.split(","):
            name, colon, prob = item.partition(":")
            try:
                p = float(prob) if colon else 1.0
            except ValueError:
                raise TableError(f"line {lineno}: bad probability {prob.strip()!r}") from None
            successors.append((LoadState.parse(name), p))
        rows[src] = successors
    if not rows:
        return default_table()
    return TransitionTable(rows, require_absorption=require_absorption)


def format_table(table: TransitionTable) -> str:
    lines = []
    for state in LoadState:
        row = table.rows.get(state)
        if row is None or state is LoadState.Done:
            continue
        rhs = ",".join(f"{nxt.value}:{p!r}" for nxt, p in row)
        lines.append(f"{state.value} -> {rhs}")
    return "\n".join(lines) + "\n"
