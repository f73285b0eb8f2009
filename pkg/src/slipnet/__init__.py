"""Neuromorphic incipient-slip detection toolkit.

End-to-end pieces: a stick-slip papillae simulator that renders tactile
event streams with ground-truth slip onsets, an event preprocessing
pipeline producing spike count volumes, an integrate-and-fire spiking
convolutional classifier trained with surrogate gradients, a temporally
smoothed slip-state detector with latency evaluation, and a `slipnet`
command-line harness tying the stages together.
"""

__version__ = "0.1.0"

from .detect import (
    Decision,
    DetectionReport,
    SmootherConfig,
    detect_onsets,
    detect_trial,
    latency_stats,
    smooth,
)
from .events import (
    Event,
    EventStream,
    Trial,
    Violation,
    load_events,
    save_events,
    validate_stream,
)
from .harness import SuiteConfig, load_config
from .preprocess import (
    DatasetSplit,
    LabeledSample,
    SlipState,
    SpikeVolume,
    bin_window,
    crop_and_filter,
    extract_samples,
    load_volume,
    pool_events,
    save_volume,
    split_trials,
    tile_windows,
)
from .simulate import (
    GravityScenario,
    KinematicScenario,
    PapillaeLayout,
    SimParams,
    SkinGeometry,
    build_geometry,
    run_scenario,
)
from .snn import (
    ConvSpec,
    DenseSpec,
    Hyperparams,
    IafParams,
    NetworkSpec,
    classify,
    evaluate,
    forward,
    init_weights,
    load_weights,
    save_weights,
    slip_network_spec,
    train,
)

__all__ = [
    "ConvSpec",
    "DatasetSplit",
    "Decision",
    "DenseSpec",
    "DetectionReport",
    "Event",
    "EventStream",
    "GravityScenario",
    "Hyperparams",
    "IafParams",
    "KinematicScenario",
    "LabeledSample",
    "NetworkSpec",
    "PapillaeLayout",
    "SimParams",
    "SkinGeometry",
    "SlipState",
    "SmootherConfig",
    "SpikeVolume",
    "SuiteConfig",
    "Trial",
    "Violation",
    "bin_window",
    "build_geometry",
    "classify",
    "crop_and_filter",
    "detect_onsets",
    "detect_trial",
    "evaluate",
    "extract_samples",
    "forward",
    "init_weights",
    "latency_stats",
    "load_config",
    "load_events",
    "load_volume",
    "load_weights",
    "pool_events",
    "run_scenario",
    "save_events",
    "save_volume",
    "save_weights",
    "slip_network_spec",
    "smooth",
    "split_trials",
    "tile_windows",
    "train",
    "validate_stream",
    "__version__",
]
