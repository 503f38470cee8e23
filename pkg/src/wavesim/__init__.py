"""Cognitive-radar waveform selection: Markov interference channels, fixed
and learning policies, stochastic-dominance comparison and a tracking
abstraction."""

from .bands import LossParams, SinrParams, Waveform
from .errors import (
    ConfigError, DimCap, IoError, NonConvergence, RowSumError, SchemaError, WavesimError,
)
from .markov import diagonal_dominance, entropy_rate, stationary_distribution
from .policies import RandomPolicy, SaaPolicy, TablePolicy, TsPolicy
from .spectrum import ChannelModel, EpisodeTrace, random_channel, run_episode

__version__ = "0.1.0"

__all__ = [
    "ChannelModel", "ConfigError", "DimCap", "EpisodeTrace", "IoError", "LossParams",
    "NonConvergence", "RandomPolicy", "RowSumError", "SaaPolicy", "SchemaError",
    "SinrParams", "TablePolicy", "TsPolicy", "Waveform", "WavesimError",
    "diagonal_dominance", "entropy_rate", "random_channel", "run_episode",
    "stationary_distribution",
]
