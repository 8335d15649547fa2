"""Exact Wick calculus on step-function grids plus a Monte Carlo harness for
anticipating stochastic integrals."""

from .convergence import CERTIFIED, INCONCLUSIVE, REFUTED, ConvergenceReport, Thresholds
from .integrate import (
                        ayed_kuo_elementary,
                        certify_strong_convergence,
                        closure_ayedkuo,
                        closure_skorokhod,
                        duality_gap,
                        ito_pathwise,
                        pairing,
                        s_residual,
                        skorokhod_elementary,
)
from .mcsim import (
                        EstimatorResult,
                        PathEnsemble,
                        PathFunctional,
                        ak_riemann_sum,
                        estimate_lp,
                        estimate_mean,
                        eval_gep,
                        refinement_study,
                        sample_paths,
)
from .stepfn import (
                        Grid,
                        Partition,
                        StepFunction,
                        common_grid,
                        indicator,
                        inner,
                        make_step,
                        restrict_after,
                        restrict_before,
)
from .wickalg import (
                        BudgetExceeded,
                        ElementaryProcess,
                        GepElement,
                        GridMismatch,
                        HermiteCoeffs,
                        brownian,
                        budget,
                        expect,
                        format_element,
                        hermite_eval,
                        malliavin,
                        moment,
                        monomial_to_hermite,
                        mul,
                        s_transform,
                        wick_exp,
                        wick_mul,
                        wiener,
)

__version__ = "0.1.0"

__all__ = [
                        "CERTIFIED",
                        "INCONCLUSIVE",
                        "REFUTED",
                        "BudgetExceeded",
                        "ConvergenceReport",
                        "ElementaryProcess",
                        "EstimatorResult",
                        "GepElement",
                        "Grid",
                        "GridMismatch",
                        "HermiteCoeffs",
                        "Partition",
                        "PathEnsemble",
                        "PathFunctional",
                        "StepFunction",
                        "Thresholds",
                        "ak_riemann_sum",
                        "ayed_kuo_elementary",
                        "brownian",
                        "budget",
                        "certify_strong_convergence",
                        "closure_ayedkuo",
                        "closure_skorokhod",
                        "common_grid",
                        "duality_gap",
                        "estimate_lp",
                        "estimate_mean",
                        "eval_gep",
                        "expect",
                        "format_element",
                        "hermite_eval",
                        "indicator",
                        "inner",
                        "ito_pathwise",
                        "make_step",
                        "malliavin",
                        "moment",
                        "monomial_to_hermite",
                        "mul",
                        "pairing",
                        "refinement_study",
                        "restrict_after",
                        "restrict_before",
                        "s_residual",
                        "s_transform",
                        "sample_paths",
                        "skorokhod_elementary",
                        "wick_exp",
                        "wick_mul",
                        "wiener",
]
