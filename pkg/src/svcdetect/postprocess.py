"""Prediction smoothing and sensor fusion.

Raw per-step predictions are noisy, so each (conversation, layer) keeps a
7-slot history buffer of recent predictions and reports the majority vote.
Vote ties go to the more latency-sensitive class; treating interactive
traffic as lenient is the costlier mistake.

Two platform hints can then refine the voted call:

  * a gaming flag promotes a voted NRT to RT (it never touches CG), and
  * an active camera forces the RT sub-class to VC once enough of the
    conversation's recent L1 history is RT, settling video calls faster
    than the vote alone would.

With both flags false, fusion is the identity.
"""

from __future__ import annotations

import json
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .taxonomy import LAYER_CLASS_ORDER, LAYER_L1, LAYER_L2_RT

HISTORY_CAPACITY_DEFAULT = 7
CAMERA_RT_THRESHOLD_DEFAULT = 3


@dataclass
class HistoryBuffer:
    """FIFO queue of the last few predictions for one (conversation, layer)."""

    slots: deque[str]
    layer: str

    @classmethod
    def create(cls, layer: str,
               capacity: int = HISTORY_CAPACITY_DEFAULT) -> "HistoryBuffer":
        if layer not in LAYER_CLASS_ORDER:
            raise ValueError(f"unknown layer: {layer!r}")
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        return cls(slots=deque(maxlen=capacity), layer=layer)

    def push(self, label: str) -> None:
        if label not in LAYER_CLASS_ORDER[self.layer]:
            raise ValueError(f"label {label!r} is not a {self.layer} class")
        self.slots.append(label)

    def __len__(self) -> int:
        return len(self.slots)


@dataclass(frozen=True)
class SensorState:
    """Platform hints sampled once per time step."""

    gaming_flag: bool = False
    camera_active: bool = False
    timestamp_step: int = 0


def vote(buffer: HistoryBuffer) -> str | None:
    """Modal label of the buffer; None signals "no vote" on an empty buffer.

    Ties between equally frequent labels resolve to the most latency
    sensitive one, i.e. the earliest in the layer's class order.
    """
    if not buffer.slots:
        return None
    counts = Counter(buffer.slots)
    best = max(counts.values())
    for label in LAYER_CLASS_ORDER[buffer.layer]:
        if counts.get(label) == best:
            return label
    raise AssertionError("buffer held labels outside its layer")


def fuse_sensors(layer: str, voted: str | None, sensors: SensorState,
                 l1_buffer: HistoryBuffer,
                 camera_rt_threshold: int = CAMERA_RT_THRESHOLD_DEFAULT,
                 ) -> str | None:
    """Apply the layer's sensor override to a voted label.

    L1: gaming_flag promotes NRT to RT and nothing else. L2-RT: an active
    camera forces VC when at least ``camera_rt_threshold`` of the L1
    buffer's entries are RT (this may fire even when the L2 vote is still
    empty). Other layers, and steps with both flags false, pass through.
    """
    if layer == LAYER_L1:
        if sensors.gaming_flag and voted == "NRT":
            return "RT"
        return voted
    if layer == LAYER_L2_RT:
        if sensors.camera_active:
            rt_seen = sum(1 for label in l1_buffer.slots if label == "RT")
            if rt_seen >= camera_rt_threshold:
                return "VC"
        return voted
    return voted


# --------------------------------------------------------------------------
# Sensor trace files: JSONL of {"step": int, "gaming_flag": bool,
# "camera_active": bool}; steps not listed default to all-false.
# --------------------------------------------------------------------------


@dataclass
class SensorTrace:
    states: dict[int, SensorState] = field(default_factory=dict)

    def at(self, step: int) -> SensorState:
        return self.states.get(step, SensorState(timestamp_step=step))


def load_sensor_trace(path: str | Path) -> SensorTrace:
    states: dict[int, SensorState] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                step = int(obj["step"])
                states[step] = SensorState(
                    gaming_flag=bool(obj.get("gaming_flag", False)),
                    camera_active=bool(obj.get("camera_active", False)),
                    timestamp_step=step,
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad sensor record: {exc}") from exc
    return SensorTrace(states=states)


def write_sensor_trace(path: str | Path,
                       states: Iterable[SensorState] | Sequence[SensorState]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for state in states:
            fh.write(json.dumps({
                "step": state.timestamp_step,
                "gaming_flag": state.gaming_flag,
                "camera_active": state.camera_active,
            }, separators=(",", ":")) + "\n")
