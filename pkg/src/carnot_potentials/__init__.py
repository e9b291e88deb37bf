"""Layer potentials, Green identities and Kac boundary conditions on Carnot groups."""

from .group import CarnotGroup, Gauge, GroupSpec, build_group, builtin_spec, coord_names
from .polynomial import Poly
from .geometry import (AdmissibleDomain, Box, EuclideanBall, GaugeBall, PatchDomain,
                       box, domain_from_json, euclidean_ball, gauge_ball, volume_integrate,
                       surface_integrate_form, surface_integrate_perimeter,
                       detect_characteristic_points)
from .potentials import (FundamentalSolution, IteratedKernel, calibrate_beta, calibrated_beta,
                         double_layer, fundamental_solution_for, jump_function,
                         newton_potential, single_layer)
from .functions import TestFunction, function_from_json
from .identities import EXPERIMENTS, VerificationReport
from . import errors

__version__ = "0.1.0"
