"""
chanpred: channel traces, mobility classification and one-step channel predictors
for multi-antenna uplinks.

Submodules
----------
linalg      complex linear-algebra helpers
scm         geometric channel simulator, pilots and measurements
mobility    snapshot-correlation speed classes and the speed-to-order map
arfit       autocorrelation estimates and Yule-Walker AR fits
vkf         vector Kalman filter predictor
mlp         LMMSE pre-processing and the dense-network predictor
evaluation  baselines, metrics, sum-rate, complexity counts, experiments
fileio      binary and key=value file formats
"""

from . import arfit, evaluation, fileio, linalg, mlp, mobility, scm, vkf
from .errors import ChanPredError

__version__ = "0.1.0"

__all__ = ["arfit", "evaluation", "fileio", "linalg", "mlp", "mobility", "scm", "vkf",
           "ChanPredError", "__version__"]
