"""Equilibrium stopping times for time-inconsistent Markovian stopping problems.

The reward ``F(x, y)`` depends on the state ``x`` at stopping and on the
initial state ``y``, so each initial state is a separate agent. The package
builds models, checks candidate stopping sets, runs the forward iteration,
solves one-sided problems and verifies closed-form candidates.
"""

from ._version import __version__
from .chain import (MixedProfile, auxiliary, chain_value, check_pure_equilibrium,
                    deviation_gain, enumerate_pure_equilibria, mixed_value, randomized_value,
                    verify_mixed_equilibrium)
from .errors import (ConfigError, DivergentExpectation, EmptyBoundary, EquistopError,
                     HypothesisViolated, MultipleRoots, NoConvergence, NoFixedPoint, NoRoot,
                     NoSignChange, NonPositiveVolatility, NotCertified, NotMonotoneAbove,
                     PathBudgetExceeded, SingularSystem, TooManyStates)
from .forward import ForwardResult, iterate, threshold_limit_oracle, threshold_sequence_oracle
from .model import (ChainModel, DiffusionModel, EquilibriumReport, Grid, RewardSpec,
                    StoppingSet, TwoArgFunction, make_chain_from_diffusion)
from .montecarlo import (MCReport, StopRegion, estimate_value, mc_equilibrium_check,
                         simulate_chain_value)
from .onesided import (MaxRepresentation, dominance_gap, equilibrium_threshold,
                       left_sided_threshold, one_sided_value, one_sided_value_mc,
                       reward_value, threshold_for_agent)
from .problems import (absorbed_walk, distance_penalty, four_state_chain, habit_exponential,
                       habit_g, optimistic_call_put, problem_from_config,
                       state_dependent_strike)
from .solver import solve_payoff, solve_standard, value_lower_bound_check
from .vi import (CandidateSolution, HabitParams, VIReport, check_vi, extract_continuation_set,
                 habit_candidate, habit_gamma, habit_threshold, habit_value,
                 optimistic_candidate, optimistic_value)

__all__ = sorted(name for name, obj in globals().items()
                 if not name.startswith("_")
                 and type(obj).__name__ != "module")
__all__.append("__version__")
