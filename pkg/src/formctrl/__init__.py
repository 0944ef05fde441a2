"""Finite-dimensional form-linear quantum control: propagators, stability certificates, Galerkin transfer."""

__version__ = "0.1.0"
