"""QP encodings of MPC, DeePC and hybrid DeePC."""

from hdeepc.predictors.condensed import build_condensed, build_condensed_deepc, build_condensed_hdeepc
from hdeepc.predictors.deepc import build_deepc
from hdeepc.predictors.hdeepc import HybridLayout, KnownStep, build_hdeepc, build_hybrid, known_step
from hdeepc.predictors.mpc import build_mpc
from hdeepc.predictors.nonlinear import (
    NonlinearKnownModel, ScpSettings, ScpTrajectory, bess_known_model, nl_hdeepc_step,
)
from hdeepc.predictors.qpbuild import EncodedQp, QpBuilder
from hdeepc.predictors.spec import (
    ConstraintSet, ControllerSpec, Norm, RegularizationSpec, StepDecision, Variant,
)

__all__ = [
    "ConstraintSet", "ControllerSpec", "EncodedQp", "HybridLayout", "KnownStep", "NonlinearKnownModel",
    "Norm", "QpBuilder", "RegularizationSpec", "ScpSettings", "ScpTrajectory", "StepDecision", "Variant",
    "bess_known_model", "build_condensed", "build_condensed_deepc", "build_condensed_hdeepc",
    "build_deepc", "build_hdeepc", "build_hybrid", "build_mpc", "known_step", "nl_hdeepc_step",
]
