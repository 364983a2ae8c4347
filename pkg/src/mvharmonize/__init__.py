"""Multi-view appearance harmonization with bilateral grids."""

from .bilateral_grid import identity_grid, slice_affine, slice_confidence, tv_loss
from .grid_fit import BilateralGridFitter, FitConfig, fit_grid_pair
from .harmonizer import GridHarmonizer, harmonized_psnr_gain
from .isp_sim import IspParams, TrainingPair, apply_isp_variation, generate_training_pair, synth_scene
from .metrics import EvalReport, evaluate_sequence, psnr, ssim
from .training import TrainConfig, train
from .transformer import GridTransformer, ModelConfig, harmonize_sequence, load_checkpoint, save_checkpoint
from .uncertainty import reconstruction_weights, toy_reconstruct

__version__ = "0.1.0"

__all__ = [
    "identity_grid", "slice_affine", "slice_confidence", "tv_loss",
    "BilateralGridFitter", "FitConfig", "fit_grid_pair",
    "GridHarmonizer", "harmonized_psnr_gain",
    "IspParams", "TrainingPair", "apply_isp_variation", "generate_training_pair", "synth_scene",
    "EvalReport", "evaluate_sequence", "psnr", "ssim",
    "TrainConfig", "train",
    "GridTransformer", "ModelConfig", "harmonize_sequence", "load_checkpoint", "save_checkpoint",
    "reconstruction_weights", "toy_reconstruct",
]
