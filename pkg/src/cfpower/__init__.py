"""Max-min fair downlink power allocation for cell-free massive MIMO.

Simulation (geometry, channels, MMSE estimation, MR/RZF precoding), the
bisection/SOCP max-min optimizer, and dense networks that learn the optimal
powers from large-scale fading coefficients.
"""

from .config import SystemConfig, ConfigError, load_config, sample_seed, stream_rng
from .geometry import NetworkRealization, ChannelSample, generate_realization
from .estimation import PilotAssignment, ChannelEstimate, assign_pilots
from .precoding import PrecoderSet
from .stats import SinrCoefficients, estimate_coefficients, compute_sinr, compute_se
from .solver import MaxMinSolution, bisection_maxmin, heuristic_allocation
from .neural import DenseNetwork, TrainConfig, build_centralized, build_decentralized

__version__ = "0.1.0"
