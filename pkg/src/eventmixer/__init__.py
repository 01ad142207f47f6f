"""Event-camera stream segmentation with kNN graph feature mixing.

Pipeline: parse or synthesize an event stream, slice it into bounded
time windows, normalize each window into a 3D graph, and segment events
with a U-shaped mixing network trained from scratch on the included
reverse-mode kernel. Metrics, an ablation harness, and a sequential-vs-
batch timing harness round out the toolkit.
"""

from .errors import ConfigError, DataError, EventMixerError, NumericError, ShapeError
from .events import (
    Event,
    EventWindow,
    MotionSpec,
    SceneConfig,
    SceneObject,
    SensorGeometry,
    load_scene_config,
    parse_event_file,
    parse_event_stream,
    scene_config_from_dict,
    serialize_events,
    synth_scene,
    window_events,
)
from .graph import (
    EventGraph,
    IndexMap,
    InverseIndexMap,
    KnnPyramid,
    build_graph,
    dump_graph,
    farthest_point_sample,
    invert_index_map,
    knn,
    knn_cross,
    knn_pyramid,
)
from .autodiff import (
    MlpParams,
    SgdState,
    Tape,
    Var,
    init_mlp,
    mlp_forward,
    neighborhood_mlp_forward,
    set_default_dtype,
    sgd_step,
)
from .model import (
    CcmParams,
    ModelConfig,
    ModelParams,
    SegmentationResult,
    count_parameters,
    forward,
    forward_batch,
    init_model,
    named_parameters,
)
from .training import (
    MetricReport,
    TrainConfig,
    TrainResult,
    ablate_ccm,
    bench_timing,
    boundary_overlap_analysis,
    count_ratio_accuracy,
    cross_entropy_loss,
    evaluate,
    event_accuracy,
    mean_iou,
    train,
)

__version__ = "0.1.0"
