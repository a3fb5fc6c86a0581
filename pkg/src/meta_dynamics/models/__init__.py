"""GP dynamics models: kernel, sparse variational GP, task latents and the meta-learning model."""

from .data import MultiTaskDataset, Standardizer, TaskData, Trajectory
from .kernel import KernelParams, k, kernel_diag, kernel_matrix
from .latent import LatentPosterior, TaskPosterior, kl_latent
from .mlgp import (
    ElboTerms,
    FitConfig,
    FitResult,
    InferenceConfig,
    MlgpModel,
    Prediction,
    elbo,
    elbo_gradients,
    fit,
    infer_latent,
    predict,
    predict_delta,
)

__all__ = [
    "ElboTerms",
    "FitConfig",
    "FitResult",
    "InferenceConfig",
    "KernelParams",
    "LatentPosterior",
    "MlgpModel",
    "MultiTaskDataset",
    "Prediction",
    "Standardizer",
    "TaskData",
    "TaskPosterior",
    "Trajectory",
    "elbo",
    "elbo_gradients",
    "fit",
    "infer_latent",
    "k",
    "kernel_diag",
    "kernel_matrix",
    "kl_latent",
    "predict",
    "predict_delta",
]
