"""Residual 3D CNN super-resolution for dual-echo steady-state knee MRI, with
the resampling baselines, T2 mapping and agreement statistics used to
evaluate it."""

__version__ = "0.1.0"
