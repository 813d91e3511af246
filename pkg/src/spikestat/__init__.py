"""Stationary distributions of bounded-memory Poisson spiking networks.

Four independent routes to the same stationary law:

- :mod:`spikestat.sim` simulates trajectories exactly by thinning and turns
  them into empirical component masses, densities and coupling diagnostics;
- :mod:`spikestat.trunc` couples the network with its window-count-truncated
  version and evaluates the closed-form truncation and density bounds;
- :mod:`spikestat.chain` builds the discretized Markov chain, solves for its
  stationary vector and embeds it back into the continuous state space;
- :mod:`spikestat.analytic` evaluates the closed-form stationary densities
  of the two tractable networks and checks stationary-equation residuals.

:mod:`spikestat.core` holds the state representation and rate formulas, and
:mod:`spikestat.harness` the config files, suite runner and CLI.
"""

from .core import (
    Activation,
    ConfigError,
    Kernel,
    LagRule,
    NetworkConfig,
    PlasticityConfig,
    PlasticState,
    Refractory,
    StateError,
    SynapseRule,
    WindowState,
    advance,
    apply_spike,
    firing_rate,
    stdp_update,
    synaptic_influx,
)
from .sim import (
    ComponentMassEstimate,
    ConditionalDensity,
    EventLog,
    MergeCurve,
    ergodicity_diagnostic,
    estimate_component_masses,
    estimate_density_1d,
    merge_bound,
    simulate,
)
from .trunc import CouplingStats, density_bound, simulate_coupled, truncated_rate, truncation_bound
from .chain import (
    ChainEmbedding,
    ChainSizeError,
    GridChain,
    balance_residual,
    dense_stationary,
    embed,
    enumerate_states,
    export_chain,
    precursors,
    stationary,
    transition_row,
)
from .analytic import (
    FeedbackDensity,
    FeedbackEstimate,
    ResidualReport,
    ShotNoiseDensity,
    example1_density,
    example1_ode_residual,
    example2_balance_residual,
    example2_density,
    simulate_shotnoise,
    stationary_equation_residual,
)
from .harness import ExperimentConfig, load_config, parse_config, run_suite, save_config

__version__ = "0.1.0"
