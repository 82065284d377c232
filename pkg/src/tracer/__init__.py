"""Trajectory-level breakdown risk for multi-turn, tool-using agent conversations."""

from .calibration import CalibrationReport, GridSpec, fit, pairwise_logistic_loss, select_threshold
from .embeddings import EmbeddingProviderConfig, build_embedder, cosine_similarity, hashed_bow
from .evaluation import EvalReport, auarc, auroc, early_warning, evaluate
from .risk import TracerParams, build_risk_vector, prefix_scores, rho, score_trajectory, tail_mean
from .signals import ContentFilterConfig, RepetitionConfig, SignalConfig, StepSignals, compute_step_signals
from .synth import ScenarioSpec, breakdown_bound_check, generate
from .trajectory import Actor, StepRecord, TokenLogProb, TrajectoryRecord, parse_trajectory_log

__version__ = "0.1.0"
