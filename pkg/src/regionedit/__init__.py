"""Region-targeted edit directions in the bottleneck space of diffusion models."""

from .jacobian import (DirectionSet, Leakage, MaskedJacobianSpec, ProjectionMode, discover,
                       discover_jacobians, fd_jvp, fd_vjp, leakage_report, load_directions, save_directions)
from .linalg import SpectralResult, orthonormalize, power_iteration_topk, project_complement
from .masks import Mask, apply_mask, rect_mask, region_mse
from .models import AnalyticGaussianModel, TinyUNet, init_random, load_weights, save_weights
from .pipeline import EditPlan, Trajectory, edit, generate, invert, run_edit
from .rng import Rng
from .schedule import Schedule, make_linear_schedule, reverse_step

__version__ = "0.1.0"
