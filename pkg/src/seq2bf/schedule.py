"""Generation order combinatorics for backward/forward decoding.

Everything here is pure Python on small integers: signed decoder positions
for a headline laid out around the phrase, the order in which the two sides
are generated under each strategy, the per-slot order stamps derived from
that order, the decoder slot whose output predicts each event, and the
decoder self-attention mask.

Event indices are 1-based over *all* events (markers included). Order stamps
count real (non-marker) events only, so a slot's stamp is the number of real
tokens that exist once it has been generated.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConstraintError


class Strategy(str, enum.Enum):
    SEQ_B = "seq-b"
    SEQ_F = "seq-f"
    TOK_B = "tok-b"
    TOK_F = "tok-f"
    LEFT_TO_RIGHT = "left-to-right"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, Strategy):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"seqb": "seq-b", "seqf": "seq-f", "tokb": "tok-b", "tokf": "tok-f", "l2r": "left-to-right"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown strategy {value!r}") from None


SEQ2BF_STRATEGIES = (Strategy.SEQ_B, Strategy.SEQ_F, Strategy.TOK_B, Strategy.TOK_F)

BACKWARD = 0
FORWARD = 1


@dataclass(frozen=True)
class Layout:
    M: int
    L: int
    N: int

    def __post_init__(self):
        if self.L < 1:
            raise ConstraintError("the phrase must contain at least one token")
        if self.M < 0 or self.N < 0:
            raise ConstraintError("side lengths must be non-negative")

    @property
    def center(self) -> int:
        """1-based phrase index placed at position 0."""
        return (self.L + 1) // 2

    @property
    def phrase_positions(self) -> list[int]:
        return [k - self.center for k in range(1, self.L + 1)]

    @property
    def leftmost(self) -> int:
        return 1 - self.center

    @property
    def rightmost(self) -> int:
        return self.L - self.center

    def side_position(self, direction: int, k: int) -> int:
        """Signed position of the k-th token (1-based, outward) on a side."""
        return self.leftmost - k if direction == BACKWARD else self.rightmost + k

    @property
    def positions(self) -> list[int]:
        return list(range(self.leftmost - self.M, self.rightmost + self.N + 1))

    def slot_index(self, position: int) -> int:
        return position - (self.leftmost - self.M)

    def __len__(self):
        return self.M + self.L + self.N


def assign_positions(M: int, L: int, N: int) -> Layout:
    return Layout(M, L, N)


@dataclass(frozen=True)
class Event:
    direction: int
    k: int  # 1-based distance from the phrase on its side
    marker: bool = False

    @property
    def label(self) -> int:
        """Signed side label: -k backward, +k forward (markers use side length + 1)."""
        return -self.k if self.direction == BACKWARD else self.k

    def __repr__(self):
        if self.marker:
            return "BOH" if self.direction == BACKWARD else "EOH"
        return f"{self.label:+d}"


def side_order(strategy: Strategy, m: int, n: int) -> list[tuple[int, int]]:
    """Interleave ``m`` backward and ``n`` forward steps per the strategy."""
    strategy = Strategy.parse(strategy)
    back = [(BACKWARD, k) for k in range(1, m + 1)]
    fwd = [(FORWARD, k) for k in range(1, n + 1)]
    if strategy is Strategy.SEQ_B:
        return back + fwd
    if strategy is Strategy.SEQ_F:
        return fwd + back
    if strategy in (Strategy.TOK_B, Strategy.TOK_F):
        first, second = (back, fwd) if strategy is Strategy.TOK_B else (fwd, back)
        out = []
        for i in range(max(m, n)):
            if i < len(first):
                out.append(first[i])
            if i < len(second):
                out.append(second[i])
        return out
    raise ValueError("left-to-right has no backward/forward schedule")


@dataclass(frozen=True)
class Schedule:
    strategy: Strategy
    layout: Layout
    events: tuple[Event, ...]
    stamps: dict  # signed position -> order stamp
    anchors: tuple[int, ...]  # anchors[t - 1] = slot position read for event t

    @property
    def real_events(self) -> list[Event]:
        return [e for e in self.events if not e.marker]

    def target_positions(self) -> list[Optional[int]]:
        return [None if e.marker else self.layout.side_position(e.direction, e.k) for e in self.events]

    def real_count_before(self, event_index: int) -> int:
        return sum(1 for e in self.events[:event_index - 1] if not e.marker)


def _events(strategy: Strategy, M: int, N: int) -> tuple[Event, ...]:
    events = []
    for direction, k in side_order(strategy, M + 1, N + 1):
        side_len = M if direction == BACKWARD else N
        events.append(Event(direction, k, marker=(k == side_len + 1)))
    return tuple(events)


def build_schedule(strategy, M: int, N: int, L: int = 1) -> Schedule:
    """Event order for a headline with ``M`` backward and ``N`` forward tokens.

    Each side gets one extra end-marker event placed where its (len+1)-th
    token would fall under the strategy's interleaving.
    """
    strategy = Strategy.parse(strategy)
    if strategy is Strategy.LEFT_TO_RIGHT:
        raise ValueError("left-to-right has no backward/forward schedule")
    layout = assign_positions(M, L, N)
    events = _events(strategy, M, N)
    proto = Schedule(strategy, layout, events, {}, ())
    stamps = order_stamps(proto, layout)
    anchors = tuple(read_anchor(proto, t) for t in range(1, len(events) + 1))
    return Schedule(strategy, layout, events, stamps, anchors)


def order_stamps(schedule: Schedule, layout: Layout) -> dict:
    stamps = {p: 0 for p in layout.phrase_positions}
    t = 0
    for e in schedule.events:
        if e.marker:
            continue
        t += 1
        stamps[layout.side_position(e.direction, e.k)] = t
    return stamps


def read_anchor(schedule: Schedule, event_index: int) -> int:
    """Slot position whose decoder output predicts event ``event_index`` (1-based)."""
    if not 1 <= event_index <= len(schedule.events):
        raise IndexError(f"event index {event_index} out of range")
    layout = schedule.layout
    for e in reversed(schedule.events[:event_index - 1]):
        if not e.marker:
            return layout.side_position(e.direction, e.k)
    e = schedule.events[event_index - 1]
    return layout.leftmost if e.direction == BACKWARD else layout.rightmost


def build_decoder_mask(stamps: dict) -> np.ndarray:
    """``mask[i, j]`` is True when slot i may attend to slot j (slots sorted by position)."""
    positions = sorted(stamps)
    s = np.array([stamps[p] for p in positions])
    return s[None, :] <= s[:, None]


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


def render_mask(mask: np.ndarray, positions) -> str:
    """Text grid: rows attend, columns are attended; '.' allowed, '#' masked."""
    width = max(len(f"{p:+d}") for p in positions)
    head = " " * (width + 1) + " ".join(f"{p:+d}".rjust(width) for p in positions)
    rows = [head]
    for p, row in zip(positions, mask):
        cells = " ".join(("." if v else "#").rjust(width) for v in row)
        rows.append(f"{p:+d}".rjust(width) + " " + cells)
    return "\n".join(rows)


def render_schedule(schedule: Schedule) -> str:
    lines = []
    for t, (e, anchor) in enumerate(zip(schedule.events, schedule.anchors), 1):
        head = "backward" if e.direction == BACKWARD else "forward"
        target = repr(e) if e.marker else f"{schedule.layout.side_position(e.direction, e.k):+d}"
        lines.append(f"{t:3d}  target {target:>4}  head {head:<8}  anchor {anchor:+d}")
    return "\n".join(lines)
