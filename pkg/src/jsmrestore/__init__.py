"""Image restoration with joint local (total variation) and nonlocal
(grouped 3-D transform sparsity) statistical priors, solved by split
Bregman iteration."""

from .image import ImageIOError, load_image, psnr, save_image
from .nlsm import NlsmParams
from .pipelines import ExperimentSpec, Task, run_experiment
from .solver import NumericalError, Observation, SolverParams, default_params, run

__all__ = [
    "ExperimentSpec", "ImageIOError", "NlsmParams", "NumericalError", "Observation",
    "SolverParams", "Task", "default_params", "load_image", "psnr", "run",
    "run_experiment", "save_image",
]
__version__ = "0.1.0"
