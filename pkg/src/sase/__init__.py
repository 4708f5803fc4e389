"""sase: self-adapting speech enhancement via complex time-frequency masking.

A desk-scale, numpy-backed implementation of a masking-based speech
enhancer whose network carries an auxiliary speaker-identification branch
(used as a speaker-aware feature at enhancement time) and multi-head
self-attention over time frames, trained with a clipped two-sided SDR loss
plus speaker cross-entropy. Includes its own reverse-mode autodiff tape,
STFT analysis/synthesis, a synthetic corpus generator, a training harness
with a three-protocol comparison experiment, and a CLI.
"""

from .autodiff import Tape, Tensor, backward, parameter
from .data import generate_corpus, load_manifest
from .dsp import StftConfig, istft, stft
from .losses import LossConfig, si_sdr
from .model import ModelConfig, enhance, forward, init_model
from .optim import AdamState, adam_step
from .train import TrainConfig, run_verification_experiment

__version__ = "0.1.0"

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "parameter",
    "AdamState",
    "adam_step",
    "StftConfig",
    "stft",
    "istft",
    "LossConfig",
    "si_sdr",
    "ModelConfig",
    "init_model",
    "forward",
    "enhance",
    "generate_corpus",
    "load_manifest",
    "TrainConfig",
    "run_verification_experiment",
    "__version__",
]
