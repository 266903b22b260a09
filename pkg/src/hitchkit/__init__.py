"""hitchkit: desk-scale Hitchin-equation solves and geometric-structure checks.

The library solves the diagonal reductions of the self-duality equations on
coordinate charts, assembles the resulting flat connections, and certifies
transversality of the candidate sections that produce hyperbolic, complex
projective, convex real projective, anti-de Sitter and higher projective
structures, together with the domination test and the anti-de Sitter volume
formula.
"""

from .charts import (
    DISC,
    RECTANGLE,
    TORUS,
    ComplexField,
    DomainChart,
    FieldSpec,
    constant_spec,
    d_z,
    d_zbar,
    field_to_csv,
    fourier_spec,
    holomorphy_residual,
    laplacian,
    make_chart,
    poly_spec,
    sample_field,
)

__version__ = "0.1.0"
