"""Bearing-only teach-and-repeat navigation toolkit.

A robot retraces a taught route using its camera only to correct
heading, measuring progress by odometry alone. The package bundles the
navigation method itself (`teach_repeat`), a synthetic perception stack
(`vision`), the continuous-time position-error stability model
(`error_model`), a closed-loop simulator (`sim`), canned experiment
reproductions (`experiments`), and a CLI (`bearnav`).
"""

from .core import NavigatorConfig, PathProfile, Pose, Velocity, profile_velocity_at, wrap_angle
from .error_model import (
    EigenPair,
    ErrorState,
    Perturbation,
    SegmentTransition,
    compose_transitions,
    curved_segment_transition,
    eigenvalues,
    integrate_error,
    steady_loop_error,
    straight_segment_transition,
    system_matrix,
)
from .sim import NoiseModel, RobotState, TraversalLog, run_multi_loop, run_traversal, step_kinematics
from .teach_repeat import DrivePlan, NavigatorState, TaughtRoute, load_route, repeat_step, save_route, teach
from .vision import CameraModel, CorruptionModel, World, corrupt, histogram_vote, match, project

__version__ = "0.1.0"
