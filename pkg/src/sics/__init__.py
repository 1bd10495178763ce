"""Sparse invariant coordinate selection: robust, sparse ICA from two scatter matrices."""

from .causal import CausalGraph, bootstrap_causal, lingam_from_unmixing
from .errors import (ConfigError, CountUnreachable, DegenerateSpectrum, NoConvergence,
                     NoConvergenceWarning, NotSPD, NotSymmetric, ParseError, RaggedRows,
                     RankDeficient, ShapeMismatch, SicsError, Singular, TooManyFailures,
                     ZeroDiagonal)
from .ics import IcsSolution, fix_signs, ics_solve, transform
from .lasso import PenalizedLsProblem, PenalizedLsSolution, lasso_path, solve_penalized_ls
from .matdecomp import SymEig, inv_sqrt, procrustes, sqrtm_spd, sym_eig
from .scatter import (PAIRS, ScatterEstimate, WeightSpec, compute_pair, covariance,
                      estimate, fobi, symmetrized_m_estimator)
from .simlab import (ContaminationSpec, IcModelSpec, contaminate, generate, hard_threshold,
                     loading_error, run_study, soft_threshold)
from .sparse_ics import SicsConfig, SicsSolution, sics_fit, sics_objective
from .stability import StabilityPaths, important_variables, stability_paths

__version__ = "0.1.0"
