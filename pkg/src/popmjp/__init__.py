"""Auxiliary-variable uniformization samplers for population Markov jump processes."""
from .core import (AugmentedTrajectory, ConstantSeasonality, CosineSeasonality, FunctionSeasonality,
                   InitialDistribution, RateKernel, StateSpace, Trajectory, embed, state_at,
                   strip_virtual, trajectory_log_density)
from .diagnostics import (Trace, autocorrelation, effective_sample_size, geweke_test, lemma1_check,
                          path_credible_band)
from .envelopes import GammaEnvelopeParams, NormalEnvelopeParams, SplitScheme
from .estimator import MJPPosterior, paths_on_grid, run_chain
from .ffbs import EpochStep, InfeasibleError, backward_sample, expanding_support, forward_filter
from .models import BirthDeathModel, GammaPrior, LotkaVolterraModel, ObservationSet, SIRModel
from .models import sir_mh_baseline_sweep
from .samplers import ChainState, MemoryBudgetExceeded, Psi, SamplerConfig, gibbs_sweep, resample_trajectory
from .simulate import (RandomSource, gillespie, simulate_uniformized, split_streams,
                       transition_probability_oracle)

__version__ = "0.1.0"
