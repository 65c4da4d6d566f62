"""
coagflux: oscillatory constant-flux solutions of the coagulation equation.

Pipeline: construct a bifurcation kernel W0 -> solve the spectral fixed
point for H -> verify J(x; f) = J0 with independent quadrature.
"""

__version__ = "0.1.0"
