"""Fractional DNN surrogates for Bayesian inversion of a nonlinear diffusion-reaction PDE."""

__version__ = "0.1.0"
