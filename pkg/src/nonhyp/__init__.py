"""Numerical certification and dynamics near a degenerate (non-hyperbolic) planar fixed point.

Maps have the form F(x, y) = (x - P + X, y + Q + Y) with P, Q homogeneous
forms of odd degree and X, Y of higher order.  The subpackages certify the
positive-definiteness hypotheses and cone parameters, compute the stable and
unstable graphs, build a topological conjugacy to a product map, and run
finite shadowing experiments.
"""
from .config import ConfigError, RunConfig, load_config, parse_config
from .cone import ConeCertificate, HypothesisFailure, certify
from .planar_map import MapSpec, SpecError, canonical_spec, check_hypotheses, eval_DF, eval_F, eval_F_inverse
from .tensor import HomogeneousPolynomial, SymmetricTensor, symmetrize, z_min

__all__ = [
    "ConeCertificate",
    "ConfigError",
    "HomogeneousPolynomial",
    "HypothesisFailure",
    "MapSpec",
    "RunConfig",
    "SpecError",
    "SymmetricTensor",
    "canonical_spec",
    "certify",
    "check_hypotheses",
    "eval_DF",
    "eval_F",
    "eval_F_inverse",
    "load_config",
    "parse_config",
    "symmetrize",
    "z_min",
]
__version__ = "0.1.0"
