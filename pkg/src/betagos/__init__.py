"""Beta-GOS species sampling: simulation, partition moments, Gibbs inference and CGH calling."""

__version__ = "0.1.0"

from .core import (BetaSchedule, Constant, DpDeterministic, Explicit, LatentWeights, Normal,
                   PairingLabels, Partition, PredictiveWeights, SequenceSample, ThetaLinear,
                   parse_schedule, partition_of, predictive_weights, sample_labels, sample_pairing,
                   sample_weights, simulate_block_counts, simulate_sequence)
from .errors import BetaGosError, DomainError, InputError, NumericError
from .inference import ModelConfig, Trace, run_chain, run_chains, summarize
from .rng import make_rng, substream

__all__ = [
    "BetaSchedule", "Constant", "DpDeterministic", "Explicit", "LatentWeights", "Normal",
    "PairingLabels", "Partition", "PredictiveWeights", "SequenceSample", "ThetaLinear",
    "parse_schedule", "partition_of", "predictive_weights", "sample_labels", "sample_pairing",
    "sample_weights", "simulate_block_counts", "simulate_sequence",
    "BetaGosError", "DomainError", "InputError", "NumericError",
    "ModelConfig", "Trace", "run_chain", "run_chains", "summarize",
    "make_rng", "substream",
]
