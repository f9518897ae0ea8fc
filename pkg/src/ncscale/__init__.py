"""Operator scaling, capacity flows on the positive-definite cone, and nc-rank certificates."""
from .certify import (Flag, RankCertificate, Reduction, Subspace, blowup_rank, dim_AU,
                      finfty_formula, finfty_numeric, min_finfty_ball, ncrank, reduce_tuple,
                      round_direction)
from .engine import (FlowConfig, FlowRecord, FlowTrace, run_gradient_descent,
                     run_minimizing_movement, run_sinkhorn, sinkhorn_step)
from .errors import (BoundaryProximityError, DomainError, InvalidInputError,
                     InvalidScalingError, NcScaleError, NotFullSupportError, StallError)
from .linalg import (L1, L2, LINF, LpNorm, SpectralDecomposition, diag_project, dual_norm,
                     herm_eig, mat_exp, mat_inv_sqrt, mat_log, mat_sqrt, schatten_norm)
from .manifold import (CotangentVector, PDPoint, TangentVector, cotangent_dual_norm,
                       finsler_dist, geodesic, slope, tangent_norm)
from .operator import (MatrixTuple, ResidualReport, ScalingPair, apply_T, apply_Tstar,
                       capacity_f, check_full_support, grad_f, residual, scale_tuple,
                       scaling_from_point)

__version__ = "0.1.0"
