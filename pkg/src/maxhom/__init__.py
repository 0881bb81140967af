"""maxhom: multiscale time-domain Maxwell workbench.

Solves the oscillatory problem with nonlinear monotone conductivity on
staggered grids, the periodic/torus cell problems and effective laws, the
homogenized limit system, and the two-scale pairing diagnostics that
cross-verify them.
"""

__version__ = "0.1.0"
