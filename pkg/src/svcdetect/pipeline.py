"""End-to-end wiring: packets in, per-step service predictions out.

The streaming path is ingest -> decompose into conversations -> per-step
features -> sliding-window input table -> two-layer classification ->
history-buffer voting and sensor fusion -> category map and multi-label
output. ``StreamDetector`` owns all per-conversation state and advances it
one 500 ms step at a time.

Training rows come from ``build_training_windows``, which replays captures
through exactly the same decomposition and windowing code, so the features
a model sees in training are by construction the features it sees live.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import gbdt
from .detector import (
    CategoryMap,
    DetectorBundle,
    MultiLabelOutput,
    ServicePrediction,
    detect,
    step_output,
)
from .features import (
    N_FEATURES,
    STEP_MS_DEFAULT,
    TrafficMap,
    advance_step,
    bucket_packets,
)
from .gbdt import TrainParams
from .postprocess import (
    CAMERA_RT_THRESHOLD_DEFAULT,
    HISTORY_CAPACITY_DEFAULT,
    HistoryBuffer,
    SensorTrace,
    fuse_sensors,
    vote,
)
from .synth import DEFAULT_LOCAL_IP
from .taxonomy import (
    L1_CLASSES,
    L2_NRT_CLASSES,
    L2_RT_CLASSES,
    LAYER_CLASS_ORDER,
    LAYER_L1,
    LAYER_L2_NRT,
    LAYER_L2_RT,
)
from .traffic import (
    ConversationKey,
    Diagnostics,
    PacketRecord,
    RelevanceConfig,
    canonical_ip,
)
from .windows import (
    IDLE_DROP_STEPS_DEFAULT,
    InputTable,
    TABLE_CAPACITY_DEFAULT,
    WINDOW_STEPS_DEFAULT,
    assemble_input,
    ingest_step,
)


@dataclass(frozen=True)
class PipelineConfig:
    """Every tunable of the pipeline, with the stock defaults."""

    step_ms: int = STEP_MS_DEFAULT
    window_steps: int = WINDOW_STEPS_DEFAULT
    table_capacity: int = TABLE_CAPACITY_DEFAULT
    history_capacity: int = HISTORY_CAPACITY_DEFAULT
    camera_rt_threshold: int = CAMERA_RT_THRESHOLD_DEFAULT
    idle_drop_steps: int = IDLE_DROP_STEPS_DEFAULT
    local_ips: tuple[str, ...] = (DEFAULT_LOCAL_IP,)
    local_networks: tuple[str, ...] = ("192.168.50.0/24",)
    bundle_path: str | None = None
    train: TrainParams = TrainParams()

    def __post_init__(self) -> None:
        if self.step_ms < 1:
            raise ValueError("step_ms must be >= 1")
        if self.window_steps < 1:
            raise ValueError("window_steps must be >= 1")
        if min(self.table_capacity, self.history_capacity,
               self.idle_drop_steps) < 1:
            raise ValueError("capacities must be >= 1")
        if self.camera_rt_threshold < 1:
            raise ValueError("camera_rt_threshold must be >= 1")
        if not self.local_ips:
            raise ValueError("at least one local IP is required")

    @property
    def local_set(self) -> frozenset[str]:
        return frozenset(canonical_ip(ip) for ip in self.local_ips)

    @property
    def relevance(self) -> RelevanceConfig:
        return RelevanceConfig.from_cidrs(self.local_networks)


def config_from_dict(obj: Mapping) -> PipelineConfig:
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(obj) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(obj)
    if "train" in kwargs:
        kwargs["train"] = TrainParams.from_dict(kwargs["train"])
    for key in ("local_ips", "local_networks"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return PipelineConfig(**kwargs)


def load_config(path: str | Path | None) -> PipelineConfig:
    """Config from a JSON file; all defaults when path is None."""
    if path is None:
        return PipelineConfig()
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ValueError(f"config {path} must hold a JSON object")
    return config_from_dict(obj)


@dataclass(frozen=True)
class ConversationVerdict:
    """One gated conversation's outputs for one step, raw through fused."""

    key: ConversationKey
    raw_l1: str
    raw_sub: str | None
    voted_l1: str
    voted_sub: str | None
    l1: str
    sub: str | None
    l1_proba: np.ndarray
    l2_proba: np.ndarray | None


@dataclass(frozen=True)
class StepResult:
    step_index: int
    verdicts: tuple[ConversationVerdict, ...]
    category_map: CategoryMap
    multi_label: MultiLabelOutput
    removed: tuple[ConversationKey, ...]


class StreamDetector:
    """Stateful per-step driver of the full detection pipeline.

    ``l2_enabled=False`` runs the first layer alone (no sub-classes, no L2
    history); L1 outputs are unchanged by construction.
    """

    def __init__(self, bundle: DetectorBundle,
                 config: PipelineConfig | None = None,
                 sensors: SensorTrace | None = None,
                 l2_enabled: bool = True) -> None:
        self.config = config if config is not None else PipelineConfig()
        self.bundle = bundle
        self.sensors = sensors if sensors is not None else SensorTrace()
        self.l2_enabled = l2_enabled
        self.table = InputTable(
            capacity=self.config.table_capacity,
            window_steps=self.config.window_steps,
            idle_drop_steps=self.config.idle_drop_steps,
        )
        self.traffic_map = TrafficMap.empty(self.config.step_ms)
        self._history: dict[tuple[ConversationKey, str], HistoryBuffer] = {}
        self._local = self.config.local_set

    def _buffer(self, key: ConversationKey, layer: str) -> HistoryBuffer:
        buf = self._history.get((key, layer))
        if buf is None:
            buf = HistoryBuffer.create(layer, self.config.history_capacity)
            self._history[(key, layer)] = buf
        return buf

    def _drop_history(self, key: ConversationKey) -> None:
        for layer in LAYER_CLASS_ORDER:
            self._history.pop((key, layer), None)

    def process_step(self, groups: Mapping[ConversationKey, Sequence[PacketRecord]],
                     ) -> StepResult:
        """Consume one step's packet groups and emit every gated verdict."""
        self.traffic_map = advance_step(self.traffic_map, groups, self._local)
        removed = tuple(ingest_step(self.table, self.traffic_map))
        for key in removed:
            self._drop_history(key)
        step = self.traffic_map.step_index - 1
        sensors = self.sensors.at(step)

        verdicts: list[ConversationVerdict] = []
        cmap: CategoryMap = {}
        for key in sorted(self.table.buffers):
            vector = assemble_input(self.table.buffers[key], step)
            if vector is None:
                continue
            if self.l2_enabled:
                raw = detect(self.bundle, vector)
            else:
                proba = gbdt.predict_proba(self.bundle.l1, vector.values)
                label = self.bundle.l1.class_labels[int(np.argmax(proba))]
                raw = ServicePrediction(l1=label, sub=None,
                                        l1_proba=proba, l2_proba=None)

            l1_buf = self._buffer(key, LAYER_L1)
            l1_buf.push(raw.l1)
            if self.l2_enabled and raw.sub is not None:
                layer = LAYER_L2_RT if raw.l1 == "RT" else LAYER_L2_NRT
                self._buffer(key, layer).push(raw.sub)

            voted_l1 = vote(l1_buf)
            assert voted_l1 is not None  # the buffer was just pushed
            l1_final = fuse_sensors(LAYER_L1, voted_l1, sensors, l1_buf,
                                    self.config.camera_rt_threshold)
            voted_sub: str | None = None
            sub_final: str | None = None
            if self.l2_enabled and l1_final in ("RT", "NRT"):
                layer = LAYER_L2_RT if l1_final == "RT" else LAYER_L2_NRT
                voted_sub = vote(self._buffer(key, layer))
                sub_final = fuse_sensors(layer, voted_sub, sensors, l1_buf,
                                         self.config.camera_rt_threshold)

            cmap[key] = ServicePrediction(
                l1=l1_final, sub=sub_final,
                l1_proba=raw.l1_proba, l2_proba=raw.l2_proba,
            )
            verdicts.append(ConversationVerdict(
                key=key,
                raw_l1=raw.l1, raw_sub=raw.sub,
                voted_l1=voted_l1, voted_sub=voted_sub,
                l1=l1_final, sub=sub_final,
                l1_proba=raw.l1_proba, l2_proba=raw.l2_proba,
            ))

        return StepResult(
            step_index=step,
            verdicts=tuple(verdicts),
            category_map=cmap,
            multi_label=step_output(cmap),
            removed=removed,
        )


def group_by_step(packets: Sequence[PacketRecord], config: PipelineConfig,
                  epoch_us: int | None = None,
                  diagnostics: Diagnostics | None = None,
                  ) -> list[dict[ConversationKey, list[PacketRecord]]]:
    """Per-step conversation groups, index = step number (empty dict = idle)."""
    if epoch_us is None:
        epoch_us = packets[0].timestamp_us if packets else 0
    grouped = bucket_packets(packets, config.local_set, epoch_us,
                             config.step_ms, config.relevance, diagnostics)
    if not grouped:
        return []
    last = max(step for step, _, _ in grouped)
    steps: list[dict[ConversationKey, list[PacketRecord]]] = [
        {} for _ in range(last + 1)
    ]
    for step, key, pkts in grouped:
        steps[step][key] = pkts
    return steps


def replay_capture(packets: Sequence[PacketRecord], bundle: DetectorBundle,
                   config: PipelineConfig | None = None,
                   sensors: SensorTrace | None = None,
                   l2_enabled: bool = True,
                   epoch_us: int | None = None) -> Iterator[StepResult]:
    """Run a whole capture through the streaming pipeline, step by step."""
    config = config if config is not None else PipelineConfig()
    detector = StreamDetector(bundle, config, sensors, l2_enabled)
    for groups in group_by_step(packets, config, epoch_us):
        yield detector.process_step(groups)


# --------------------------------------------------------------------------
# Training-row construction by pipeline replay
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class WindowRow:
    """One assembled window plus the ground truth of its conversation."""

    capture: str
    key: ConversationKey
    step_index: int
    l1: str
    l2: str | None
    band: str
    rssi: str
    congestion: str


def build_training_windows(dataset_dir: str | Path, rows: Sequence[Mapping],
                           config: PipelineConfig | None = None,
                           ) -> tuple[np.ndarray, list[WindowRow]]:
    """Replay every manifest capture; collect (X, metadata) training rows.

    Conversations in a capture that the manifest does not label are
    skipped. Row order is deterministic: manifest capture order, then step,
    then conversation key.
    """
    from .traffic import parse_capture, parse_conversation_key

    config = config if config is not None else PipelineConfig()
    dataset_dir = Path(dataset_dir)

    captures: dict[str, dict[ConversationKey, Mapping]] = {}
    for row in rows:
        labels = captures.setdefault(row["capture"], {})
        labels[parse_conversation_key(row["conversation_key"])] = row

    vectors: list[np.ndarray] = []
    meta: list[WindowRow] = []
    for capture_name, labels in captures.items():
        packets = parse_capture(dataset_dir / capture_name, fmt="jsonl")
        table = InputTable(capacity=config.table_capacity,
                           window_steps=config.window_steps,
                           idle_drop_steps=config.idle_drop_steps)
        traffic_map = TrafficMap.empty(config.step_ms)
        for groups in group_by_step(packets, config):
            traffic_map = advance_step(traffic_map, groups, config.local_set)
            ingest_step(table, traffic_map)
            step = traffic_map.step_index - 1
            for key in sorted(table.buffers):
                vector = assemble_input(table.buffers[key], step)
                row = labels.get(key)
                if vector is None or row is None:
                    continue
                vectors.append(vector.values)
                meta.append(WindowRow(
                    capture=capture_name,
                    key=key,
                    step_index=step,
                    l1=row["l1"],
                    l2=row["l2"],
                    band=row["band"],
                    rssi=row["rssi"],
                    congestion=row["congestion"],
                ))
    if vectors:
        X = np.vstack(vectors)
    else:
        X = np.empty((0, config.window_steps * N_FEATURES), dtype=np.float64)
    return X, meta


_LAYER_LABELS = {
    LAYER_L1: L1_CLASSES,
    LAYER_L2_RT: L2_RT_CLASSES,
    LAYER_L2_NRT: L2_NRT_CLASSES,
}


def layer_training_set(X: np.ndarray, meta: Sequence[WindowRow],
                       layer: str) -> tuple[np.ndarray, list[str]]:
    """Select and label the window rows a given layer trains on.

    L1 sees every row labeled by its coarse class; each L2 layer sees only
    the rows whose true L1 class is its parent, labeled by sub-class.
    """
    if layer == LAYER_L1:
        return X, [m.l1 for m in meta]
    if layer == LAYER_L2_RT:
        parent = "RT"
    elif layer == LAYER_L2_NRT:
        parent = "NRT"
    else:
        raise ValueError(f"unknown layer: {layer!r}")
    picked = [i for i, m in enumerate(meta) if m.l1 == parent]
    return X[picked], [meta[i].l2 for i in picked]  # type: ignore[misc]


def train_layer(X: np.ndarray, meta: Sequence[WindowRow], layer: str,
                params: TrainParams) -> gbdt.GbdtModel:
    """Train one layer's model with its canonical class order."""
    X_layer, y = layer_training_set(X, meta, layer)
    if X_layer.shape[0] == 0:
        raise gbdt.TrainingError(f"no training rows for layer {layer}")
    return gbdt.train(X_layer, y, params, class_labels=_LAYER_LABELS[layer])
