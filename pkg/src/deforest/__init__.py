"""Deforestation risk mapping from two classified land-cover epochs."""

from .change import deforestation_labels
from .dataset import NormParams, SampleSet, build_samples, normalize, split
from .features import (
    FeatureStack,
    WindowSpec,
    distance_to_class,
    forest_cover_index,
    matheron_index,
    stack_features,
)
from .mlp import (
    MlpModel,
    TrainConfig,
    TrainReport,
    evaluate_binary,
    forward,
    init_model,
    loss_and_gradient,
    roc_auc,
    train_backprop,
    train_lm,
)
from .pipeline import PipelineConfig, RiskMap, classify_risk, load_config, predict_risk, run_pipeline
from .raster import (
    CellClass,
    Grid,
    GridHeader,
    assert_aligned,
    load_grid,
    read_ascii_grid,
    reclassify,
    save_grid,
    write_ascii_grid,
)

__version__ = "0.1.0"
