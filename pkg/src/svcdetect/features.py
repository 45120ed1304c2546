"""Per-conversation windowed statistics over 500 ms time steps.

Every step, each conversation's packets are reduced to ten statistics:
uplink max/avg inter-arrival time (ms), uplink/downlink packet counts, and
uplink/downlink min/max/avg packet sizes (MB). ``FEATURE_NAMES`` fixes the
canonical order used everywhere a feature vector is laid out.

Inter-arrival times are computed within a single step only, never across
step boundaries. A step with no packets for a conversation is represented
by the all-zero ``StepFeatures`` (the "dummy chunk" value).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .traffic import (
    ConversationKey,
    Diagnostics,
    Direction,
    DirectionAmbiguityError,
    PacketRecord,
    RelevanceConfig,
    classify_direction,
    conversation_key,
    is_relevant,
)

STEP_MS_DEFAULT = 500

FEATURE_NAMES: tuple[str, ...] = (
    "ul_max_iat_ms",
    "ul_avg_iat_ms",
    "ul_pkt_count",
    "dl_pkt_count",
    "ul_min_size_mb",
    "dl_min_size_mb",
    "ul_max_size_mb",
    "dl_max_size_mb",
    "ul_avg_size_mb",
    "dl_avg_size_mb",
)

N_FEATURES = len(FEATURE_NAMES)

_BYTES_PER_MB = 1_000_000.0
_US_PER_MS = 1000.0


@dataclass(frozen=True, slots=True)
class StepFeatures:
    """The ten per-step statistics for one conversation.

    All fields are exactly zero when the step carried no packets; IAT fields
    are zero whenever fewer than two uplink packets arrived.
    """

    ul_max_iat_ms: float = 0.0
    ul_avg_iat_ms: float = 0.0
    ul_pkt_count: int = 0
    dl_pkt_count: int = 0
    ul_min_size_mb: float = 0.0
    dl_min_size_mb: float = 0.0
    ul_max_size_mb: float = 0.0
    dl_max_size_mb: float = 0.0
    ul_avg_size_mb: float = 0.0
    dl_avg_size_mb: float = 0.0

    def as_tuple(self) -> tuple[float, ...]:
        """Values in canonical FEATURE_NAMES order."""
        return (
            self.ul_max_iat_ms,
            self.ul_avg_iat_ms,
            float(self.ul_pkt_count),
            float(self.dl_pkt_count),
            self.ul_min_size_mb,
            self.dl_min_size_mb,
            self.ul_max_size_mb,
            self.dl_max_size_mb,
            self.ul_avg_size_mb,
            self.dl_avg_size_mb,
        )

    @property
    def is_dummy(self) -> bool:
        return self.ul_pkt_count == 0 and self.dl_pkt_count == 0


ZERO_FEATURES = StepFeatures()


def compute_step_features(ul_packets: Sequence[PacketRecord],
                          dl_packets: Sequence[PacketRecord]) -> StepFeatures:
    """Reduce one step's packets (timestamp-sorted, per direction) to features."""
    ul_count = len(ul_packets)
    dl_count = len(dl_packets)
    if ul_count == 0 and dl_count == 0:
        return ZERO_FEATURES

    ul_max_iat = 0.0
    ul_avg_iat = 0.0
    if ul_count >= 2:
        gaps = [
            (ul_packets[i + 1].timestamp_us - ul_packets[i].timestamp_us) / _US_PER_MS
            for i in range(ul_count - 1)
        ]
        ul_max_iat = max(gaps)
        ul_avg_iat = sum(gaps) / len(gaps)

    def size_stats(packets: Sequence[PacketRecord]) -> tuple[float, float, float]:
        if not packets:
            return 0.0, 0.0, 0.0
        sizes = [p.size_bytes / _BYTES_PER_MB for p in packets]
        return min(sizes), max(sizes), sum(sizes) / len(sizes)

    ul_min, ul_max, ul_avg = size_stats(ul_packets)
    dl_min, dl_max, dl_avg = size_stats(dl_packets)
    return StepFeatures(
        ul_max_iat_ms=ul_max_iat,
        ul_avg_iat_ms=ul_avg_iat,
        ul_pkt_count=ul_count,
        dl_pkt_count=dl_count,
        ul_min_size_mb=ul_min,
        dl_min_size_mb=dl_min,
        ul_max_size_mb=ul_max,
        dl_max_size_mb=dl_max,
        ul_avg_size_mb=ul_avg,
        dl_avg_size_mb=dl_avg,
    )


def bucket_packets(packets: Sequence[PacketRecord],
                   local: frozenset[str] | set[str],
                   epoch_us: int,
                   step_ms: int = STEP_MS_DEFAULT,
                   relevance: RelevanceConfig | None = None,
                   diagnostics: Diagnostics | None = None,
                   ) -> list[tuple[int, ConversationKey, list[PacketRecord]]]:
    """Group timestamp-sorted packets into (step, conversation) buckets.

    A packet at time t lands in step floor((t - epoch_us) / (step_ms * 1000)).
    Packets before the epoch, direction-ambiguous packets, and irrelevant
    conversations are dropped and counted in ``diagnostics``. Output is
    sorted by (step, key); packet order inside a group is preserved.
    """
    if step_ms <= 0:
        raise ValueError("step_ms must be positive")
    step_us = step_ms * 1000
    groups: dict[tuple[int, ConversationKey], list[PacketRecord]] = {}
    relevant_cache: dict[ConversationKey, bool] = {}
    for packet in packets:
        if packet.timestamp_us < epoch_us:
            if diagnostics:
                diagnostics.pre_epoch += 1
            continue
        try:
            key = conversation_key(packet, local)
        except DirectionAmbiguityError:
            if diagnostics:
                diagnostics.ambiguous_direction += 1
            continue
        ok = relevant_cache.get(key)
        if ok is None:
            ok = relevant_cache[key] = is_relevant(key, relevance)
        if not ok:
            if diagnostics:
                diagnostics.irrelevant += 1
            continue
        step = (packet.timestamp_us - epoch_us) // step_us
        groups.setdefault((step, key), []).append(packet)
    return [(step, key, grp) for (step, key), grp in sorted(groups.items())]


def split_directions(packets: Iterable[PacketRecord],
                     local: frozenset[str] | set[str],
                     ) -> tuple[list[PacketRecord], list[PacketRecord]]:
    """Split one conversation's packets into (uplink, downlink) lists."""
    ul: list[PacketRecord] = []
    dl: list[PacketRecord] = []
    for packet in packets:
        if classify_direction(packet, local) is Direction.UL:
            ul.append(packet)
        else:
            dl.append(packet)
    return ul, dl


@dataclass
class TrafficMap:
    """Features of the most recently consumed step, keyed by conversation.

    ``step_index`` counts steps consumed so far, i.e. it names the step the
    next ``advance_step`` call will consume; ``entries`` describe step
    ``step_index - 1``. A fresh map has step_index 0 and no entries.
    """

    entries: dict[ConversationKey, StepFeatures]
    step_index: int
    step_ms: int = STEP_MS_DEFAULT

    @classmethod
    def empty(cls, step_ms: int = STEP_MS_DEFAULT) -> "TrafficMap":
        return cls(entries={}, step_index=0, step_ms=step_ms)


def advance_step(traffic_map: TrafficMap,
                 groups: Mapping[ConversationKey, Sequence[PacketRecord]],
                 local: frozenset[str] | set[str]) -> TrafficMap:
    """Consume one step's per-conversation packet groups.

    ``groups`` must hold the packets of step ``traffic_map.step_index``;
    the returned map carries their freshly computed features and an
    incremented step_index.
    """
    entries: dict[ConversationKey, StepFeatures] = {}
    for key, packets in groups.items():
        ul, dl = split_directions(packets, local)
        entries[key] = compute_step_features(ul, dl)
    return TrafficMap(
        entries=entries,
        step_index=traffic_map.step_index + 1,
        step_ms=traffic_map.step_ms,
    )
