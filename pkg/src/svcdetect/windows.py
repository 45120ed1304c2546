"""Sliding-window input table feeding the classifiers.

The table holds at most 7 conversations. Each conversation owns a 6-slot
queue of StepFeatures; a conversation becomes classifiable only once 6
steps have been pushed (the window gate), after which every step yields a
60-value input vector (6 steps x 10 features, oldest step first).

Conversations with no traffic in a step receive an all-zero dummy chunk so
their window stays continuous. Table pressure evicts the least-recently
active conversation; a conversation that has been all-dummy for a full
window is dropped outright.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .features import N_FEATURES, ZERO_FEATURES, StepFeatures, TrafficMap
from .traffic import ConversationKey

WINDOW_STEPS_DEFAULT = 6
TABLE_CAPACITY_DEFAULT = 7
IDLE_DROP_STEPS_DEFAULT = 6


@dataclass
class InputBuffer:
    """Per-conversation window of recent step features (oldest first)."""

    key: ConversationKey
    slots: deque[StepFeatures]
    last_active_step: int
    fill_count: int = 0
    dummy_run: int = 0

    @classmethod
    def create(cls, key: ConversationKey, window_steps: int,
               step_index: int) -> "InputBuffer":
        return cls(key=key, slots=deque(maxlen=window_steps),
                   last_active_step=step_index)

    def push(self, features: StepFeatures, step_index: int) -> None:
        window = self.slots.maxlen or WINDOW_STEPS_DEFAULT
        self.slots.append(features)
        if self.fill_count < window:
            self.fill_count += 1
        if features.is_dummy:
            self.dummy_run += 1
        else:
            self.dummy_run = 0
            self.last_active_step = step_index


@dataclass(frozen=True, eq=False)
class InputVector:
    """60-value classifier input: step-major, oldest step first."""

    values: np.ndarray
    key: ConversationKey
    step_index: int


@dataclass
class InputTable:
    """Fixed-capacity collection of per-conversation input buffers."""

    capacity: int = TABLE_CAPACITY_DEFAULT
    window_steps: int = WINDOW_STEPS_DEFAULT
    idle_drop_steps: int = IDLE_DROP_STEPS_DEFAULT
    buffers: dict[ConversationKey, InputBuffer] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.capacity < 1 or self.window_steps < 1 or self.idle_drop_steps < 1:
            raise ValueError("capacities and window size must be >= 1")


def _eviction_order(buf: InputBuffer) -> tuple[int, int, ConversationKey]:
    # Least recently active first; ties by fewest filled slots, then key.
    return (buf.last_active_step, buf.fill_count, buf.key)


def ingest_step(table: InputTable, traffic_map: TrafficMap) -> list[ConversationKey]:
    """Apply one just-advanced TrafficMap to the table.

    Every conversation present in the map gets its fresh features; every
    known conversation absent from the map gets a dummy chunk. Returns the
    keys removed this step (idle drops and capacity evictions) so callers
    can reset any per-conversation state they keep.
    """
    step = traffic_map.step_index - 1
    if step < 0:
        raise ValueError("traffic map has not consumed any step yet")
    removed: list[ConversationKey] = []

    # Dummy injection for idle conversations; drop fully idle windows.
    for key in sorted(k for k in table.buffers if k not in traffic_map.entries):
        buf = table.buffers[key]
        buf.push(ZERO_FEATURES, step)
        if buf.dummy_run >= table.idle_drop_steps:
            del table.buffers[key]
            removed.append(key)

    # Fresh features; insert new conversations, evicting under pressure.
    for key in sorted(traffic_map.entries):
        features = traffic_map.entries[key]
        buf = table.buffers.get(key)
        if buf is None:
            if len(table.buffers) >= table.capacity:
                victim = min(table.buffers.values(), key=_eviction_order)
                del table.buffers[victim.key]
                removed.append(victim.key)
            buf = InputBuffer.create(key, table.window_steps, step)
            table.buffers[key] = buf
        buf.push(features, step)
    return removed


def assemble_input(buffer: InputBuffer, step_index: int) -> InputVector | None:
    """The window's 60-value vector, or None while the gate is unmet."""
    window = buffer.slots.maxlen or WINDOW_STEPS_DEFAULT
    if buffer.fill_count < window:
        return None
    values = np.empty(window * N_FEATURES, dtype=np.float64)
    for i, features in enumerate(buffer.slots):
        values[i * N_FEATURES:(i + 1) * N_FEATURES] = features.as_tuple()
    return InputVector(values=values, key=buffer.key, step_index=step_index)
