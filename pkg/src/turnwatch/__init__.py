"""Vehicle-VRU interaction detection on turning sequences.

Synthetic intersection simulator, channelized occupancy/motion features,
a sequence-to-sequence generative classifier with sampled inference,
kernel-density uncertainty scoring and an ablation harness.
"""

__version__ = "0.1.0"

from .scenario import (
    AgentClass,
    AgentState,
    InteractionLabel,
    LabelRule,
    RegionMask,
    Scenario,
    ScenarioConfig,
    apply_lane_filter,
    gen_scenario,
    label_scenario,
    render_flow_frame,
    render_object_frame,
    render_scenario,
)
from .ingest import (
    DatasetSplit,
    PaddedBatch,
    TurningSequence,
    WindowBatch,
    align_rates,
    build_splits,
    load_dataset,
    pad_to,
    slide_windows,
)
from .model import GaussianLatent, InteractionModel, ModelConfig, elbo_loss, sample_latent
from .training import TrainingConfig, TrainState, infer, load_checkpoint, save_checkpoint, train
from .uncertainty import PredictionEnsemble, UncertaintyScore, kde_density, uncertainty
from .metrics import ConfusionMatrix, MetricsReport, confusion, metrics, vote
