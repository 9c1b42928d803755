"""Fairness-constrained tabular episodic RL with stepwise group-fairness constraints."""
from ._accel import backend
from .mdp import (
    DegenerateConditioningError,
    GroupSpec,
    OccupancyMeasure,
    Policy,
    ProblemSpec,
    RewardModel,
    ShapeError,
    StateSpace,
    TransitionKernel,
    ValueFunctions,
    action_marginal,
    eqopt_conditional,
    expected_reward_profile,
    forward_occupancy,
    value_functions,
)

__version__ = "0.1.0"
