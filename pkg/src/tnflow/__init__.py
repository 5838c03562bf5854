"""Tensor-network solvers for the sponge-damped wave equation and curvilinear incompressible flow."""

__version__ = "0.1.0"
