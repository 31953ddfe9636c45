"""Schwarz P minimal surface, crystallographic quotients, and spectral
certificates for their stability operators, plus the piecewise convex
smoothing body used to desingularize the flat projective space."""

from twistedp.crystal import (
    AffineIsometry,
    CrystalGroup,
    FixedLocus,
    TorusPoint,
    classify,
    compose,
    covering_project,
    fixed_locus,
    generate,
    i222,
    im3m,
    immm,
    immm_minus,
    singular_set,
    wrap,
)

__all__ = [
    "AffineIsometry",
    "CrystalGroup",
    "FixedLocus",
    "TorusPoint",
    "classify",
    "compose",
    "covering_project",
    "fixed_locus",
    "generate",
    "i222",
    "im3m",
    "immm",
    "immm_minus",
    "singular_set",
    "wrap",
]
