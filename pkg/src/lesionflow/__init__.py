"""Lesion tracking across body scans by refined template correspondence."""

__version__ = "0.1.0"

from .assignment import AssignConfig, MatchMatrix, build_cost, match_report, solve_assignment
from .correspondence import (CorrespondenceMap, DeformedTemplate, coarse_map_from_template,
                             coarse_map_to_template, map_point, map_points)
from .flow import FlowConfig, TangentField, advect_maps, assemble_energy, solve_flow
from .geodesic import exp_map, geodesic_distance
from .mesh import Mesh, SurfacePoint, TangentVector, embed, fem_operators, heat_diffuse
from .metrics import EvalReport, GroundTruth, dropout_harness, map_quality, matching_accuracy, prf1
from .signals import LesionSet, VertexSignal, build_lesion_signal, map_lesions_to_template, pull_back
from .spatial import closest_surface_point
from .synth import SubjectFixture, make_subject
from .templates import make_template
