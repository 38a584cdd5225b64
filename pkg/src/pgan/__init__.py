"""Progressive WGAN-GP image synthesis on a small numpy autograd engine."""

from .networks import NetworkPlan, PhaseState, build_discriminator, build_generator, grow
from .tensor import Tensor, backward, grad, grad_check, no_grad
from .training import TrainingConfig, run_training, schedule, train_step

__all__ = [
    "NetworkPlan",
    "PhaseState",
    "Tensor",
    "TrainingConfig",
    "backward",
    "build_discriminator",
    "build_generator",
    "grad",
    "grad_check",
    "grow",
    "no_grad",
    "run_training",
    "schedule",
    "train_step",
]

__version__ = "0.1.0"
