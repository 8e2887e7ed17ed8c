"""Hierarchical HRF estimation for multi-subject fMRI."""

from ._core import (
    FormatError,
    baseline,
    basis_values,
    canonical_coeffs,
    canonical_curve,
    fdr_mask,
    fit,
    infer,
    read_bold,
    report,
    simulate,
    solve_nnqp,
    solve_secular,
    yule_walker,
)

__all__ = [
    "FormatError",
    "baseline",
    "basis_values",
    "canonical_coeffs",
    "canonical_curve",
    "fdr_mask",
    "fit",
    "infer",
    "read_bold",
    "report",
    "simulate",
    "solve_nnqp",
    "solve_secular",
    "yule_walker",
]
