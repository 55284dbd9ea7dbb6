"""Blow-up laboratory for radial quasilinear Keller-Segel systems.

The package bundles a closed-form exponent calculus for pointwise blow-up
bounds, a conservative radial finite-volume solver that is driven into
finite-time blow-up, and the analysis tools that extract and test the
resulting spatial profile.
"""

__version__ = "0.1.0"
