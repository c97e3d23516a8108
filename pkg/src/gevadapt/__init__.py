"""Differentiable mask-based GEV beamforming with speaker adaptation of the
mask estimator."""

__version__ = "0.1.0"
