"""Streaming service-type detection for network traffic.

Packets are decomposed into per-device conversations, summarized into ten
statistics every 500 ms, windowed over six steps, and classified by a
two-layer hierarchy of gradient-boosted tree models (CG/RT/NRT, then
MG/VC/AC or FD/VS). Majority-vote history buffers and platform sensor
hints smooth the stream into stable per-conversation labels and a per-step
multi-label summary.

The ``svcdetect`` CLI wires the same pieces end to end: generate labeled
synthetic traffic, train the three models, detect on a capture, evaluate.
"""

from .detector import (
    ConfigurationError,
    DetectorBundle,
    MultiLabelOutput,
    ServicePrediction,
    detect,
    load_bundle,
    step_output,
    write_bundle_manifest,
)
from .evaluate import Report, render_confusion, render_report, score
from .features import (
    FEATURE_NAMES,
    N_FEATURES,
    StepFeatures,
    TrafficMap,
    advance_step,
    compute_step_features,
)
from .gbdt import (
    GbdtModel,
    TrainParams,
    dump_model,
    feature_importance,
    load_model,
    predict,
    predict_proba,
    save_model,
    train,
)
from .pipeline import (
    PipelineConfig,
    StepResult,
    StreamDetector,
    build_training_windows,
    load_config,
    replay_capture,
    train_layer,
)
from .postprocess import HistoryBuffer, SensorState, SensorTrace, fuse_sensors, vote
from .synth import (
    ChannelCondition,
    FlowSpec,
    TrafficProfile,
    generate_dataset,
    generate_flow,
    load_manifest,
    load_profiles,
)
from .taxonomy import L1_CLASSES, L2_NRT_CLASSES, L2_RT_CLASSES, SUBCLASS_PARENT
from .traffic import (
    ConversationKey,
    PacketRecord,
    Protocol,
    conversation_key,
    parse_capture,
    write_capture,
)
from .windows import InputTable, InputVector, assemble_input, ingest_step

__version__ = "0.1.0"

__all__ = [
    "ChannelCondition",
    "ConfigurationError",
    "ConversationKey",
    "DetectorBundle",
    "FEATURE_NAMES",
    "FlowSpec",
    "GbdtModel",
    "HistoryBuffer",
    "InputTable",
    "InputVector",
    "L1_CLASSES",
    "L2_NRT_CLASSES",
    "L2_RT_CLASSES",
    "MultiLabelOutput",
    "N_FEATURES",
    "PacketRecord",
    "PipelineConfig",
    "Protocol",
    "Report",
    "SUBCLASS_PARENT",
    "SensorState",
    "SensorTrace",
    "ServicePrediction",
    "StepFeatures",
    "StepResult",
    "StreamDetector",
    "TrafficMap",
    "TrafficProfile",
    "TrainParams",
    "advance_step",
    "assemble_input",
    "build_training_windows",
    "compute_step_features",
    "conversation_key",
    "detect",
    "dump_model",
    "feature_importance",
    "fuse_sensors",
    "generate_dataset",
    "generate_flow",
    "ingest_step",
    "load_bundle",
    "load_config",
    "load_manifest",
    "load_model",
    "load_profiles",
    "parse_capture",
    "predict",
    "predict_proba",
    "render_confusion",
    "render_report",
    "replay_capture",
    "save_model",
    "score",
    "step_output",
    "train",
    "train_layer",
    "vote",
    "write_bundle_manifest",
    "write_capture",
]
