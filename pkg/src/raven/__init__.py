"""RAVEN: adaptive weighting of weak-model ensembles for weak-to-strong training."""
from ._backend import BACKEND
from .data import (
    DataBundle,
    LinearProbe,
    SimplexWeights,
    TrainRecord,
    load_bundle,
    save_bundle,
    subset,
)
from .losses import CombineMode, adaptation_loss_grad, c_alignment_cost, ensemble_loss_grad
from .dpo_r import PreferencePair, compute_betas, dpo_r_loss, ensemble_reward, evaluate_pairs, load_pairs
from .metrics import accuracy, generalization_gap, hit_or_miss, pgr_ensemble, pgr_single
from .synthbench import SynthConfig, generate_problem, load_problem, save_problem
from .trainer import TrainConfig, TrainResult, find_easy_samples, train, train_baseline, train_raven

__version__ = "0.1.0"
