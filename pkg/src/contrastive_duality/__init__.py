"""Gram/covariance duality between sample-contrastive and
dimension-contrastive self-supervised criteria: exact checks, losses with
hand-derived gradients, a desk-scale trainer and embedding diagnostics."""

from . import criteria, diagnostics, gradients, matrix, normalization, verify
from .criteria import LOSS_IDS, LossSpec, LossValue, VicregWeights, evaluate
from .errors import (
    ConfigError,
    DivergedLoss,
    DualityError,
    InvalidMatrix,
    MatrixParseError,
    NotDoublyNormalized,
    NotNormalized,
    NotStandardized,
    ShapeMismatch,
    UnknownLoss,
    ZeroNormColumn,
    ZeroNormRow,
)
from .gradients import analytic_grad, grad_check, spec_for, value_and_grad

__version__ = "0.1.0"
