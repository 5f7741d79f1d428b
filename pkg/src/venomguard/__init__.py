"""Venom-aware snake species classification: decision layer and training losses.

The package covers everything downstream of an image classifier's raw
scores: a geographic prior trained on location metadata, joint inference,
venom-aware escalation, the weighted evaluation metric, long-tail training
losses, and a small self-contained optimization and serialization stack.
"""

from .data_model import (
    ClassEntry,
    ClassTable,
    DatasetBundle,
    FeatureMatrix,
    LocationTable,
    ObservationRow,
    ObservationTable,
    load_bundle,
    validate_bundle,
)
from .inference import (
    EscalationPolicy,
    PredictionResult,
    aggregate_observation,
    escalate_venomous,
    joint_scores,
    predict_dataset,
)
from .losses import (
    CostMatrix,
    SeesawState,
    build_cost_matrix,
    cross_entropy,
    rwwce_loss,
    seesaw_loss,
)
from .metrics import MetricReport, MetricWeights, score_predictions, track1_metric
from .optim import AdamWState, CosineSchedule, adamw_step, lr_at
from .prior_model import (
    PriorArtifact,
    PriorMlp,
    PriorTrainConfig,
    PrototypeMatrix,
    compute_prototypes,
    loc_loss,
    train_prior,
)
from .synthetic import SynthConfig, generate, write_dataset

__version__ = "0.1.0"
