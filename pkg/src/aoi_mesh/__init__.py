"""Average age of information in Poisson bipolar networks with slotted ALOHA."""

from .config import ConfigError, NetworkConfig, load_config, validate_config
from .errors import ConvergenceError, DivergenceError
from .meanfield import MeanFieldSolution, active_prob, conditional_aoi, solve_fixed_point
from .population import (MgfContext, SuccessCdf, gil_pelaez_cdf, mgf_eval, network_aoi,
                         network_aoi_moment, noise_limited_aoi, picard_solve)
from .simulation import LinkStates, SimReport, run_simulation, simulate_topologies, step_slot
from .topology import Topology, sample_topology, single_link, torus_distance

__version__ = "0.1.0"
