"""Reverse-mode differentiation of the integrated pipeline and its
finite-difference verification harness."""
from .beam import apply_vjp, ban_vjp, cov_vjp, features_vjp, power_vjp
from .check import REGISTRY, GradCheckReport, finite_diff_check, run_all
from .matrix import eig_chain_vjp, fix_phase_vjp, qr_algorithm_vjp, qr_vjp
from .pipeline import PipelineRecord, System, pipeline_forward, pipeline_vjp
