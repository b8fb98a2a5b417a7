"""Adversarial auto-augmentation for hyperspectral/multispectral image fusion."""

from ._kernels import active_backend
from .augmentor import AugmentedTriple, Augmentor
from .dataio import Scene, read_cube, synth_scene, write_cube, write_heatmap
from .degradation import PsfSpec, SpaDnet, SpeDnet, SrfSpec, simulate_spatial_degrade, simulate_spectral_degrade
from .metrics import MetricReport, evaluate
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, backward
from .training import ARMS, StageReport, TrainConfig, reconstruct, run_pipeline

__version__ = "0.1.0"
