"""Identification of vehicle steering and yaw dynamics.

Modules
-------
nn_core      tanh MLPs with linear bypass, reverse-mode gradients, Adam
vehicle_sim  single-track chassis, steering linkage and servo simulator
signals      PRBS, FIR decimation, dead-zone, NRMSE, datasets and splits
linear_id    ARX, Ho-Kalman realization and output-error refinement
gp_id        GP-NARX with squared-exponential ARD kernel
encoder_id   subspace-encoder nonlinear state-space models
pipeline     campaign generation, fitting and evaluation
cli          ``steerid`` command line interface
"""
from .errors import SteerIdError

__version__ = "0.1.0"
__all__ = ["SteerIdError", "__version__"]
