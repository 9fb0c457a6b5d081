"""Low-complexity acoustic scene classification toolkit.

Audits CNN descriptions against microcontroller budgets, extracts log-mel
features, runs float and int8 inference, and scores challenge-style
submissions.
"""

from .complexity import CORTEX_M4, ComplexityReport, DeviceProfile, audit, count_macs, count_params
from .errors import EdgeAuditError
from .evaluation import (
    GroundTruthRecord,
    PredictionRecord,
    evaluate,
    jackknife_ci,
    log_loss,
    macro_accuracy,
    rank_submissions,
)
from .features import load_wav, log_mel
from .formats import load_model, load_profile, save_model
from .inference import forward_float, forward_quantized, predict, softmax
from .labels import SCENE_CLASSES
from .model_ir import LayerSpec, ModelGraph, TensorShape, infer_shapes, validate
from .quantizer import QuantParams, calibrate, compute_qparams, quantize_model

__version__ = "0.1.0"

__all__ = [
    "CORTEX_M4",
    "ComplexityReport",
    "DeviceProfile",
    "EdgeAuditError",
    "GroundTruthRecord",
    "LayerSpec",
    "ModelGraph",
    "PredictionRecord",
    "QuantParams",
    "SCENE_CLASSES",
    "TensorShape",
    "audit",
    "calibrate",
    "compute_qparams",
    "count_macs",
    "count_params",
    "evaluate",
    "forward_float",
    "forward_quantized",
    "infer_shapes",
    "jackknife_ci",
    "load_model",
    "load_profile",
    "load_wav",
    "log_loss",
    "log_mel",
    "macro_accuracy",
    "predict",
    "quantize_model",
    "rank_submissions",
    "save_model",
    "softmax",
    "validate",
]
