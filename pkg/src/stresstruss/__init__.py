"""Stress-aligned volumetric truss generation.

Pipeline stages: tetrahedral linear elasticity, stress-aligned frame field
fitting, volumetric parametrization, integer-isoline truss extraction,
simplification, printable geometry emission, and truss verification.
"""

__version__ = "0.1.0"
