"""Pedestrian trajectory forecasting with correntropy-weighted
interaction pooling over a shared recurrent predictor."""

__version__ = "0.1.0"

from .data import (FormatConfig, NormTransform, Scene, SplitPlan,
                   TrajectoryWindow, cut_windows, leave_one_out,
                   load_dataset, load_manifest, load_scenes, normalize_scene)
from .evaluation import (InferenceTiming, MetricsReport, PredictedTrajectory,
                         ade, evaluate, fde, rollout, sigma_sweep,
                         time_inference)
from .model import (GaussianParams2D, ModelParams, PedestrianState, Position,
                    correntropy_weight, embed_interaction, embed_position,
                    interaction_vector, nll_loss, output_head,
                    sample_position, step_scene)
from .ndmath import LSTMWeights, Tape, Var, gradient_check, lstm_cell
from .training import (AdamState, Checkpoint, TrainConfig, adam_step,
                       load_checkpoint, save_checkpoint, train, window_loss)
