"""Deterministic labeled traffic generator.

Each service class gets a profile: per-direction packet rates, size
distributions, burstiness, and optionally an ON/OFF duty cycle (video
streaming fetches in bursts, then idles). Inter-arrival gaps are Gamma
distributed with shape 1/(1+burstiness), so burstiness 0 is a Poisson
process and larger values clump packets while keeping the same mean rate.

A channel condition (band, RSSI regime, congestion level) perturbs the
clean profile with extra jitter, packet drops, and rate scaling. Effect
magnitudes grow with congestion and are strictly worse at the cell edge.

All randomness for one flow comes from a single named generator seeded by
the caller, with a fixed draw order (UL gaps, sizes, jitter, drops, then
the same for DL), so identical seeds reproduce identical captures byte for
byte. The profile table ships as an editable JSON file; the values are
plausible stand-ins, not measurements of real applications.
"""

from __future__ import annotations

import enum
import ipaddress
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .taxonomy import SUBCLASS_PARENT
from .traffic import (
    ConversationKey,
    PacketRecord,
    Protocol,
    format_conversation_key,
    write_capture,
)

DEFAULT_LOCAL_IP = "192.168.50.10"

# Documentation address blocks; remotes never collide with real hosts.
_REMOTE_BLOCKS = ("203.0.113.0", "198.51.100.0", "192.0.2.0")
_HOSTS_PER_BLOCK = 254


class Band(str, enum.Enum):
    GHZ2_4 = "GHz2_4"
    GHZ5 = "GHz5"
    GHZ6 = "GHz6"


class RssiRegime(str, enum.Enum):
    NORMAL = "NORMAL"   # >= -55 dBm
    EDGE = "EDGE"       # <= -65 dBm


class Congestion(str, enum.Enum):
    NORMAL = "NORMAL"   # cca/radio_on < 0.1
    MILD = "MILD"       # 0.2 - 0.4
    HIGH = "HIGH"       # > 0.55


@dataclass(frozen=True)
class ChannelEffects:
    jitter_ms: float
    drop_prob: float
    rate_scale: float


# Base effects per congestion level; must stay monotone in severity.
_CONGESTION_EFFECTS: dict[Congestion, ChannelEffects] = {
    Congestion.NORMAL: ChannelEffects(jitter_ms=0.2, drop_prob=0.002, rate_scale=1.0),
    Congestion.MILD: ChannelEffects(jitter_ms=1.2, drop_prob=0.012, rate_scale=0.92),
    Congestion.HIGH: ChannelEffects(jitter_ms=3.5, drop_prob=0.045, rate_scale=0.78),
}

_EDGE_JITTER_FACTOR = 2.0
_EDGE_DROP_FACTOR = 3.0
_EDGE_RATE_FACTOR = 0.9


@dataclass(frozen=True)
class ChannelCondition:
    band: Band = Band.GHZ5
    rssi: RssiRegime = RssiRegime.NORMAL
    congestion: Congestion = Congestion.NORMAL

    @property
    def effects(self) -> ChannelEffects:
        base = _CONGESTION_EFFECTS[self.congestion]
        if self.rssi is RssiRegime.EDGE:
            return ChannelEffects(
                jitter_ms=base.jitter_ms * _EDGE_JITTER_FACTOR,
                drop_prob=min(base.drop_prob * _EDGE_DROP_FACTOR, 0.25),
                rate_scale=base.rate_scale * _EDGE_RATE_FACTOR,
            )
        return base

    @classmethod
    def parse(cls, band: str, rssi: str, congestion: str) -> "ChannelCondition":
        return cls(band=Band(band), rssi=RssiRegime(rssi),
                   congestion=Congestion(congestion))


@dataclass(frozen=True)
class SizeDist:
    """Clipped-normal packet size distribution, in bytes."""

    mean: float
    sigma: float
    min_bytes: int
    max_bytes: int

    def __post_init__(self) -> None:
        if not 0 < self.min_bytes <= self.max_bytes:
            raise ValueError("size bounds must satisfy 0 < min <= max")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        raw = rng.normal(self.mean, self.sigma, size=n)
        return np.clip(np.rint(raw), self.min_bytes, self.max_bytes).astype(np.int64)


@dataclass(frozen=True)
class TrafficProfile:
    """Timing and size signature of one service class."""

    label: str
    ul_rate_pps: float
    dl_rate_pps: float
    ul_size: SizeDist
    dl_size: SizeDist
    burstiness: float = 0.0
    protocol: Protocol = Protocol.UDP
    on_seconds: float | None = None
    off_seconds: float | None = None

    def __post_init__(self) -> None:
        if self.label != "CG" and self.label not in SUBCLASS_PARENT:
            raise ValueError(f"unknown service label: {self.label!r}")
        if self.ul_rate_pps < 0 or self.dl_rate_pps < 0:
            raise ValueError("rates must be >= 0")
        if self.burstiness < 0:
            raise ValueError("burstiness must be >= 0")
        if (self.on_seconds is None) != (self.off_seconds is None):
            raise ValueError("on_seconds and off_seconds must be set together")
        l1 = self.l1
        bidi = self.bidirectionality
        if l1 == "RT" and bidi < 0.5:
            raise ValueError(f"RT profile {self.label} must be bidirectional "
                             f"(ratio {bidi:.2f} < 0.5)")
        if l1 == "NRT" and bidi > 0.3:
            raise ValueError(f"NRT profile {self.label} must be one-sided "
                             f"(ratio {bidi:.2f} > 0.3)")
        if l1 == "CG" and self.dl_rate_pps < 5 * self.ul_rate_pps:
            raise ValueError("CG profile needs downlink rate well above uplink")

    @property
    def l1(self) -> str:
        return "CG" if self.label == "CG" else SUBCLASS_PARENT[self.label]

    @property
    def l2(self) -> str | None:
        return None if self.label == "CG" else self.label

    @property
    def bidirectionality(self) -> float:
        hi = max(self.ul_rate_pps, self.dl_rate_pps)
        if hi == 0:
            return 1.0
        return min(self.ul_rate_pps, self.dl_rate_pps) / hi


def _profile_from_obj(label: str, obj: Mapping) -> TrafficProfile:
    def dist(spec: Mapping) -> SizeDist:
        return SizeDist(mean=float(spec["mean"]), sigma=float(spec["sigma"]),
                        min_bytes=int(spec["min"]), max_bytes=int(spec["max"]))

    return TrafficProfile(
        label=label,
        ul_rate_pps=float(obj["ul_rate_pps"]),
        dl_rate_pps=float(obj["dl_rate_pps"]),
        ul_size=dist(obj["ul_size"]),
        dl_size=dist(obj["dl_size"]),
        burstiness=float(obj.get("burstiness", 0.0)),
        protocol=Protocol(obj.get("protocol", "udp")),
        on_seconds=obj.get("on_seconds"),
        off_seconds=obj.get("off_seconds"),
    )


def load_profiles(path: str | Path | None = None) -> dict[str, TrafficProfile]:
    """Profile table from a JSON file; the packaged defaults when path is None."""
    if path is None:
        text = resources.files("svcdetect.data").joinpath(
            "default_profiles.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    table = json.loads(text)
    return {label: _profile_from_obj(label, obj) for label, obj in table.items()}


@dataclass(frozen=True)
class GeneratedFlow:
    """One synthetic flow: its packets plus the ground truth that made them."""

    packets: list[PacketRecord]
    key: ConversationKey
    l1: str
    l2: str | None
    condition: ChannelCondition


def _direction_packets(rng: np.random.Generator, rate_pps: float,
                       size_dist: SizeDist, profile: TrafficProfile,
                       effects: ChannelEffects, duration_s: float,
                       src_ip: str, dst_ip: str, src_port: int, dst_port: int,
                       start_us: int) -> list[PacketRecord]:
    """Generate one direction's packets with the fixed four-draw sequence."""
    rate = rate_pps * effects.rate_scale
    if rate <= 0:
        return []
    # Over-provision draws, then cut at the duration; count depends only on
    # the profile and condition, keeping the draw sequence reproducible.
    n = int(np.ceil(rate * duration_s * 2)) + 16
    shape = 1.0 / (1.0 + profile.burstiness)
    scale = 1.0 / (rate * shape)
    gaps = rng.gamma(shape, scale, size=n)
    sizes = size_dist.sample(rng, n)
    jitter = rng.normal(0.0, effects.jitter_ms / 1000.0, size=n)
    dropped = rng.random(n) < effects.drop_prob

    times = np.cumsum(gaps)
    keep = times < duration_s
    times = np.maximum(times + jitter, 0.0)
    if profile.on_seconds is not None:
        period = profile.on_seconds + profile.off_seconds
        keep &= np.mod(times, period) < profile.on_seconds
    keep &= ~dropped

    out = []
    for t, size in zip(times[keep], sizes[keep]):
        out.append(PacketRecord(
            timestamp_us=start_us + int(round(t * 1e6)),
            src_ip=src_ip,
            dst_ip=dst_ip,
            size_bytes=int(size),
            protocol=profile.protocol,
            src_port=src_port,
            dst_port=dst_port,
        ))
    return out


def generate_flow(profile: TrafficProfile, condition: ChannelCondition,
                  duration_s: float, remote_ip: str, seed,
                  local_ip: str = DEFAULT_LOCAL_IP,
                  start_us: int = 0) -> GeneratedFlow:
    """One labeled flow; identical arguments always produce identical packets."""
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    rng = np.random.default_rng(seed)
    effects = condition.effects
    local_port = 40000 + int(ipaddress.ip_address(remote_ip)) % 20000
    remote_port = 443
    ul = _direction_packets(rng, profile.ul_rate_pps, profile.ul_size, profile,
                            effects, duration_s, local_ip, remote_ip,
                            local_port, remote_port, start_us)
    dl = _direction_packets(rng, profile.dl_rate_pps, profile.dl_size, profile,
                            effects, duration_s, remote_ip, local_ip,
                            remote_port, local_port, start_us)
    packets = sorted(ul + dl, key=lambda p: p.timestamp_us)
    return GeneratedFlow(
        packets=packets,
        key=ConversationKey(local_ip=local_ip, remote_ip=remote_ip),
        l1=profile.l1,
        l2=profile.l2,
        condition=condition,
    )


def remote_ip_for(flow_index: int) -> str:
    """Stable remote address allocation over the documentation blocks."""
    slot = flow_index % (len(_REMOTE_BLOCKS) * _HOSTS_PER_BLOCK)
    block = _REMOTE_BLOCKS[slot // _HOSTS_PER_BLOCK]
    host = slot % _HOSTS_PER_BLOCK + 1
    base = ipaddress.ip_address(block)
    return str(base + host)


@dataclass(frozen=True)
class FlowSpec:
    """One dataset line: which flows to put in each generated capture.

    ``labels`` with several entries produces a mixed capture whose flows
    interleave in one file; ``count`` repeats the whole capture with fresh
    seeds and remote addresses.
    """

    labels: tuple[str, ...]
    condition: ChannelCondition
    duration_s: float
    count: int = 1

    def __post_init__(self) -> None:
        if not self.labels:
            raise ValueError("a flow spec needs at least one label")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")
        if self.count < 1:
            raise ValueError("count must be >= 1")


def parse_dataset_spec(obj: Mapping) -> list[FlowSpec]:
    """Dataset spec from its JSON object form ({"flows": [...]})."""
    flows = obj.get("flows")
    if not isinstance(flows, list) or not flows:
        raise ValueError('dataset spec needs a non-empty "flows" list')
    specs = []
    for i, entry in enumerate(flows):
        try:
            if "labels" in entry:
                labels = tuple(entry["labels"])
            else:
                labels = (entry["label"],)
            condition = ChannelCondition.parse(
                entry.get("band", Band.GHZ5.value),
                entry.get("rssi", RssiRegime.NORMAL.value),
                entry.get("congestion", Congestion.NORMAL.value),
            )
            specs.append(FlowSpec(
                labels=labels,
                condition=condition,
                duration_s=float(entry["duration_s"]),
                count=int(entry.get("count", 1)),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"flows[{i}]: {exc}") from exc
    return specs


def generate_dataset(specs: Sequence[FlowSpec], seed: int, out_dir: str | Path,
                     profiles: Mapping[str, TrafficProfile] | None = None,
                     local_ip: str = DEFAULT_LOCAL_IP) -> list[dict]:
    """Write one capture file per (spec, instance) plus manifest.json.

    Returns the manifest rows. Flow seeds derive from (seed, flow index) so
    any flow can be regenerated in isolation; remote addresses are unique
    within the dataset up to the documentation-range capacity and never
    repeat inside one capture.
    """
    if not specs:
        raise ValueError("specs must be non-empty")
    if profiles is None:
        profiles = load_profiles()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows: list[dict] = []
    flow_index = 0
    capture_index = 0
    for spec in specs:
        for label in spec.labels:
            if label not in profiles:
                raise ValueError(f"no profile for label {label!r}")
        for _ in range(spec.count):
            capture_name = f"cap_{capture_index:04d}.jsonl"
            merged: list[PacketRecord] = []
            for label in spec.labels:
                flow = generate_flow(
                    profiles[label], spec.condition, spec.duration_s,
                    remote_ip=remote_ip_for(flow_index),
                    seed=[seed, flow_index],
                    local_ip=local_ip,
                )
                merged.extend(flow.packets)
                rows.append({
                    "capture": capture_name,
                    "conversation_key": format_conversation_key(flow.key),
                    "l1": flow.l1,
                    "l2": flow.l2,
                    "band": spec.condition.band.value,
                    "rssi": spec.condition.rssi.value,
                    "congestion": spec.condition.congestion.value,
                    "seed": [seed, flow_index],
                })
                flow_index += 1
            merged.sort(key=lambda p: p.timestamp_us)
            write_capture(merged, out_dir / capture_name)
            capture_index += 1

    manifest = {"local_ip": local_ip, "rows": rows}
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return rows


def load_manifest(path: str | Path) -> tuple[str, list[dict]]:
    """(local_ip, rows) from a dataset manifest file."""
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return str(obj["local_ip"]), list(obj["rows"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed manifest {path}: {exc}") from exc


def split_flows(rows: Sequence[Mapping], train_frac: float, seed: int,
                ) -> tuple[list[dict], list[dict]]:
    """Deterministic per-leaf-class split of manifest rows into train/test.

    Stratifies on (l1, l2) so every class lands on both sides whenever it
    has at least two flows.
    """
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must be in (0, 1)")
    by_class: dict[tuple, list[dict]] = {}
    for row in rows:
        by_class.setdefault((row["l1"], row["l2"]), []).append(dict(row))
    rng = np.random.default_rng(seed)
    train: list[dict] = []
    test: list[dict] = []
    for cls in sorted(by_class, key=str):
        group = by_class[cls]
        order = rng.permutation(len(group))
        n_train = max(1, int(round(len(group) * train_frac)))
        if n_train == len(group) and len(group) > 1:
            n_train -= 1
        for pos, idx in enumerate(order):
            (train if pos < n_train else test).append(group[idx])
    return train, test
